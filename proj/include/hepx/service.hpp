#pragma once
// HTTP routes over the api model.
#include <cstdlib>
#include <string>
#include <utility>

#include <httplib.h>

#include "api.hpp"

namespace hepx::service {

using api::json;

struct Address {
    std::string host = "127.0.0.1";
    int port = 8080;
};

// "host:port", ":port" or "port".
inline Address parse_address(const std::string& text) {
    Address a;
    auto colon = text.rfind(':');
    std::string port = colon == std::string::npos ? text : text.substr(colon + 1);
    if (colon != std::string::npos && colon > 0) a.host = text.substr(0, colon);
    try {
        std::size_t used = 0;
        a.port = std::stoi(port, &used);
        if (used != port.size() || a.port < 0 || a.port > 65535) throw std::out_of_range(port);
    } catch (const std::exception&) {
        throw SchemaError("invalid_address", "bad address '" + text + "', expected HOST:PORT");
    }
    return a;
}

// Flag value, then HEPX_ADDR, then the default.
inline Address resolve_address(const std::string& flag) {
    if (!flag.empty()) return parse_address(flag);
    if (const char* env = std::getenv("HEPX_ADDR"); env && *env) return parse_address(env);
    return {};
}

class Service {
public:
    explicit Service(KbStore& store, api::RegistryOptions opts = {}) : store_(store), sessions_(store, std::move(opts)) {}

    api::SessionRegistry& sessions() { return sessions_; }

    void install(httplib::Server& srv) {
        srv.Post("/sessions", wrap(201, [this](const httplib::Request& req) {
            return sessions_.start(body_of(req, false));
        }));
        srv.Get(R"(/sessions/([^/]+))", wrap(200, [this](const httplib::Request& req) {
            return sessions_.view(req.matches[1]);
        }));
        srv.Post(R"(/sessions/([^/]+)/answer)", wrap(200, [this](const httplib::Request& req) {
            return sessions_.answer(req.matches[1], body_of(req, true));
        }));
        srv.Get(R"(/sessions/([^/]+)/explanation)", wrap(200, [this](const httplib::Request& req) {
            return sessions_.explanation(req.matches[1], req.get_param_value("mode"));
        }));
        srv.Post(R"(/sessions/([^/]+)/discovery)", wrap(200, [this](const httplib::Request& req) {
            body_of(req, false);
            return sessions_.propose(req.matches[1]);
        }));
        srv.Post(R"(/sessions/([^/]+)/discovery/commit)", wrap(200, [this](const httplib::Request& req) {
            return sessions_.commit(req.matches[1], body_of(req, true));
        }));
        srv.Post(R"(/sessions/([^/]+)/discovery/abort)", wrap(200, [this](const httplib::Request& req) {
            body_of(req, false);
            return sessions_.abort(req.matches[1]);
        }));

        srv.Post("/kb/induce", wrap(200, [this](const httplib::Request& req) {
            return api::induce(store_, body_of(req, false));
        }));
        srv.Post("/kb/generalize", wrap(200, [this](const httplib::Request& req) {
            return api::generalize(store_, body_of(req, true));
        }));
        srv.Get("/kb/rules", wrap(200, [this](const httplib::Request&) { return api::list_rules(*store_.snapshot()); }));
        srv.Get("/kb/cases", wrap(200, [this](const httplib::Request&) { return api::list_cases(*store_.snapshot()); }));
        srv.Get("/kb/audit", wrap(200, [this](const httplib::Request&) { return api::list_audit(*store_.snapshot()); }));
        srv.Get("/kb/schema", wrap(200, [this](const httplib::Request&) { return api::schema_view(*store_.snapshot()); }));
        srv.Get("/kb/experience-report", [this](const httplib::Request&, httplib::Response& res) {
            try {
                res.set_content(format_experience_report(induce_kb(*store_.snapshot()).tree), "text/plain");
            } catch (const std::exception& e) {
                fail(res, e);
            }
        });

        srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (!res.body.empty()) return;
            json body = {{"code", res.status == 404 ? "not_found" : "http_error"},
                         {"message", httplib::status_message(res.status)},
                         {"details", json::object()}};
            res.set_content(body.dump(), "application/json");
        });
    }

private:
    template <typename F>
    httplib::Server::Handler wrap(int ok_status, F f) {
        return [f = std::move(f), ok_status](const httplib::Request& req, httplib::Response& res) {
            try {
                json out = f(req);
                res.status = ok_status;
                res.set_content(out.dump(), "application/json");
            } catch (const std::exception& e) {
                fail(res, e);
            }
        };
    }

    static void fail(httplib::Response& res, const std::exception& e) {
        res.status = api::http_status(e);
        res.set_content(api::error_body(e).dump(), "application/json");
    }

    // An empty body is {} unless `required`; a non-empty body must be JSON.
    static json body_of(const httplib::Request& req, bool required) {
        if (req.body.empty()) {
            if (required) throw api::RequestError(400, "empty_body", "request body is required");
            return json::object();
        }
        std::string type = req.get_header_value("Content-Type");
        type = type.substr(0, type.find(';'));
        while (!type.empty() && type.back() == ' ') type.pop_back();
        if (type != "application/json")
            throw api::RequestError(415, "unsupported_media_type", "expected Content-Type application/json");
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded()) throw api::RequestError(400, "invalid_json", "request body is not valid JSON");
        if (!body.is_object()) throw api::RequestError(400, "invalid_json", "request body must be a JSON object");
        return body;
    }

    KbStore& store_;
    api::SessionRegistry sessions_;
};

} // namespace hepx::service
