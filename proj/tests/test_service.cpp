#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <thread>

#include "hepx/corpus.hpp"
#include "hepx/service.hpp"
#include "oracles.hpp"

using namespace hepx;
using api::json;
namespace fs = std::filesystem;

namespace {

const std::string kFigure =
    "hbsagreact=yes\n"
    "  igmantihbcreact=yes => [negative/1]\n"
    "  igmantihbcreact=no => positive/9\n"
    "hbsagreact=no\n"
    "  igmantihbcreact=no => negative/9\n"
    "  igmantihbcreact=yes\n"
    "    symptoms=yes => negative/4\n"
    "    symptoms=no\n"
    "      jaundice=yes => negative/2\n"
    "      jaundice=no\n"
    "        hbsagnonreact=yes => [negative/1]\n"
    "        hbsagnonreact=no => positive/6\n";

// A live service on an ephemeral port over a private copy of a KB.
class LiveService {
public:
    explicit LiveService(const KnowledgeBase& kb, api::RegistryOptions opts = {}) {
        dir_ = fs::temp_directory_path() /
               ("hepx_svc_" + std::to_string(::getpid()) + "_" + std::to_string(std::random_device{}()));
        fs::create_directories(dir_);
        path_ = dir_ / "kb.kb";
        save(kb, path_);
        store_ = std::make_unique<KbStore>(path_);
        service_ = std::make_unique<service::Service>(*store_, std::move(opts));
        service_->install(server_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LiveService() {
        server_.stop();
        thread_.join();
        fs::remove_all(dir_);
    }

    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(10, 0);
        return c;
    }

    struct Reply {
        int status = 0;
        json body;
        std::string text;
    };

    Reply post(const std::string& path, const json& body) const {
        auto c = client();
        auto r = c.Post(path, body.dump(), "application/json");
        return wrap(r);
    }
    Reply post_raw(const std::string& path, const std::string& body, const std::string& type) const {
        auto c = client();
        return wrap(c.Post(path, body, type));
    }
    Reply get(const std::string& path) const {
        auto c = client();
        return wrap(c.Get(path));
    }

    const fs::path& path() const { return path_; }
    KbStore& store() { return *store_; }

private:
    static Reply wrap(const httplib::Result& r) {
        if (!r) throw std::runtime_error("request failed: " + httplib::to_string(r.error()));
        Reply out{r->status, json(), r->body};
        out.body = json::parse(r->body, nullptr, false);
        return out;
    }

    fs::path dir_, path_;
    std::unique_ptr<KbStore> store_;
    std::unique_ptr<service::Service> service_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

std::uint64_t firings_of(const LiveService& svc, const std::string& id) {
    for (const auto& r : svc.get("/kb/rules").body)
        if (r["id"] == id) return r["firings"].get<std::uint64_t>();
    ADD_FAILURE() << "no rule " << id;
    return 0;
}

} // namespace

TEST(Service, HcvConsultation) {
    LiveService svc(corpus::build_bundled_kb());
    for (auto [answer, expected] : {std::pair{"reactive", "positive"}, std::pair{"nonreactive", "negative"}}) {
        auto start = svc.post("/sessions", {{"goal", "hcv"}});
        ASSERT_EQ(start.status, 201) << start.text;
        EXPECT_EQ(start.body["status"], "active");
        EXPECT_EQ(start.body["question"]["attribute"], "antihcv");
        EXPECT_EQ(start.body["question"]["answers"], json({"reactive", "nonreactive", "unknown"}));
        EXPECT_EQ(start.body["question"]["prompt"], "What is the anti-HCV result?");
        std::string id = start.body["id"];

        auto done = svc.post("/sessions/" + id + "/answer", {{"attribute", "antihcv"}, {"value", answer}});
        ASSERT_EQ(done.status, 200) << done.text;
        EXPECT_EQ(done.body["status"], "concluded");
        EXPECT_EQ(done.body["result"]["value"], expected);
        EXPECT_TRUE(done.body["result"]["advice"].is_string());
        EXPECT_EQ(svc.get("/sessions/" + id).body, done.body);

        auto again = svc.post("/sessions/" + id + "/answer", {{"attribute", "antihcv"}, {"value", answer}});
        EXPECT_EQ(again.status, 409);
        EXPECT_EQ(again.body["code"], "no_pending_question");
        EXPECT_TRUE(again.body.contains("message") && again.body.contains("details"));
    }
}

TEST(Service, Explanations) {
    LiveService svc(corpus::build_bundled_kb());
    std::string id = svc.post("/sessions", {{"goal", "hbv"}}).body["id"];
    auto why = svc.get("/sessions/" + id + "/explanation?mode=why");
    ASSERT_EQ(why.status, 200) << why.text;
    EXPECT_EQ(why.body["attribute"], "hbsagreact");
    EXPECT_FALSE(why.body["chain"].empty());
    EXPECT_EQ(svc.get("/sessions/" + id + "/explanation?mode=how").status, 409);
    EXPECT_EQ(svc.get("/sessions/" + id + "/explanation?mode=sideways").status, 422);

    svc.post("/sessions/" + id + "/answer", {{"attribute", "hbsagreact"}, {"value", "yes"}});
    auto v = svc.post("/sessions/" + id + "/answer", {{"attribute", "igmantihbcreact"}, {"value", "no"}});
    ASSERT_EQ(v.body["status"], "concluded");
    auto how = svc.get("/sessions/" + id + "/explanation?mode=how");
    ASSERT_EQ(how.status, 200);
    EXPECT_EQ(how.body["derivation"]["rule"], "ind_2");
    EXPECT_EQ(how.body["derivation"]["antecedents"].size(), 2u);
    EXPECT_EQ(svc.get("/sessions/" + id + "/explanation?mode=why").status, 409);
}

TEST(Service, AnswerReplayIsIdempotent) {
    LiveService svc(corpus::build_bundled_kb());
    const std::uint64_t before = firings_of(svc, "hcv_1");
    std::string id = svc.post("/sessions", {{"goal", "hcv"}}).body["id"];
    json a = {{"attribute", "antihcv"}, {"value", "reactive"}, {"seq", 1}};
    auto first = svc.post("/sessions/" + id + "/answer", a);
    ASSERT_EQ(first.status, 200);
    EXPECT_EQ(first.body["seq"], 1);
    for (int i = 0; i < 3; ++i) {
        auto retry = svc.post("/sessions/" + id + "/answer", a);
        EXPECT_EQ(retry.status, 200);
        EXPECT_EQ(retry.body, first.body);
    }
    EXPECT_EQ(firings_of(svc, "hcv_1"), before + 1);

    auto clash = svc.post("/sessions/" + id + "/answer", {{"attribute", "antihcv"}, {"value", "nonreactive"}, {"seq", 1}});
    EXPECT_EQ(clash.status, 409);
    EXPECT_EQ(clash.body["code"], "seq_conflict");

    std::string id2 = svc.post("/sessions", {{"goal", "hbv"}}).body["id"];
    auto gap = svc.post("/sessions/" + id2 + "/answer", {{"attribute", "hbsagreact"}, {"value", "yes"}, {"seq", 3}});
    EXPECT_EQ(gap.status, 409);
    EXPECT_EQ(gap.body["code"], "seq_gap");
    // A rejected answer consumes no sequence number.
    auto bad = svc.post("/sessions/" + id2 + "/answer", {{"attribute", "hbsagreact"}, {"value", "maybe"}, {"seq", 1}});
    EXPECT_EQ(bad.status, 422);
    EXPECT_EQ(bad.body["code"], "value_out_of_domain");
    auto ok = svc.post("/sessions/" + id2 + "/answer", {{"attribute", "hbsagreact"}, {"value", "yes"}, {"seq", 1}});
    EXPECT_EQ(ok.status, 200);
    EXPECT_EQ(ok.body["question"]["attribute"], "igmantihbcreact");
}

TEST(Service, ErrorShapes) {
    LiveService svc(corpus::build_bundled_kb());
    auto missing = svc.get("/sessions/nope");
    EXPECT_EQ(missing.status, 404);
    EXPECT_EQ(missing.body["code"], "unknown_session");
    EXPECT_EQ(svc.post("/sessions/nope/answer", {{"attribute", "a"}, {"value", "b"}}).status, 404);
    EXPECT_EQ(svc.get("/no/such/route").status, 404);
    EXPECT_EQ(svc.get("/no/such/route").body["code"], "not_found");

    auto media = svc.post_raw("/sessions", R"({"goal":"hcv"})", "text/plain");
    EXPECT_EQ(media.status, 415);
    EXPECT_EQ(media.body["code"], "unsupported_media_type");
    auto charset = svc.post_raw("/sessions", R"({"goal":"hcv"})", "application/json; charset=utf-8");
    EXPECT_EQ(charset.status, 201);
    auto broken = svc.post_raw("/sessions", "{goal:", "application/json");
    EXPECT_EQ(broken.status, 400);
    EXPECT_EQ(broken.body["code"], "invalid_json");

    auto goal = svc.post("/sessions", {{"goal", "cholera"}});
    EXPECT_EQ(goal.status, 422);
    EXPECT_EQ(goal.body["code"], "unknown_goal");
    auto fact = svc.post("/sessions", {{"goal", "hbv"}, {"facts", {{"symptoms", "maybe"}}}});
    EXPECT_EQ(fact.status, 422);
    std::string id = svc.post("/sessions", {{"goal", "hbv"}}).body["id"];
    auto field = svc.post("/sessions/" + id + "/answer", {{"attribute", "hbsagreact"}});
    EXPECT_EQ(field.status, 422);
    EXPECT_EQ(field.body["code"], "invalid_request");
    auto wrong = svc.post("/sessions/" + id + "/answer", {{"attribute", "symptoms"}, {"value", "yes"}});
    EXPECT_EQ(wrong.status, 409);
    EXPECT_EQ(svc.post("/sessions/" + id + "/discovery", json::object()).status, 409);
    EXPECT_EQ(svc.post("/kb/generalize", {{"mode", "guess"}}).status, 422);
}

TEST(Service, DiscoveryEndToEnd) {
    LiveService svc(corpus::build_incomplete_kb());
    const auto audit_before = svc.get("/kb/audit").body.size();

    auto start = svc.post("/sessions", {{"goal", "hbv"},
                                        {"facts",
                                         {{"symptoms", "yes"},
                                          {"jaundice", "yes"},
                                          {"hbsagnonreact", "yes"},
                                          {"igmantihbcreact", "yes"}}}});
    ASSERT_EQ(start.status, 201) << start.text;
    ASSERT_EQ(start.body["status"], "unknown");
    std::string id = start.body["id"];

    auto tmpl = svc.post("/sessions/" + id + "/discovery", json::object());
    ASSERT_EQ(tmpl.status, 200) << tmpl.text;
    EXPECT_EQ(tmpl.body["premises"].size(), 4u);
    EXPECT_EQ(tmpl.body["conclusion_values"], json({"positive", "negative"}));
    EXPECT_EQ(svc.get("/sessions/" + id).body["status"], "awaiting_discovery");

    json premises = tmpl.body["premises"];
    premises.push_back({{"attribute", "hiv"}, {"value", "positive"}});
    auto commit = svc.post("/sessions/" + id + "/discovery/commit",
                           {{"premises", premises},
                            {"conclusion", {{"attribute", "hbv"}, {"value", "positive"}}},
                            {"expert", "Dr. Abebe"},
                            {"alternatives", {{"hiv", {"negative"}}}}});
    ASSERT_EQ(commit.status, 200) << commit.text;
    EXPECT_EQ(commit.body["status"], "accepted");
    EXPECT_EQ(commit.body["rule_id"], "disc_1");
    EXPECT_EQ(commit.body["session"]["status"], "concluded");
    EXPECT_EQ(commit.body["session"]["result"]["value"], "positive");
    EXPECT_EQ(svc.get("/sessions/" + id).body["result"]["value"], "positive");

    auto rules = svc.get("/kb/rules").body;
    auto it = std::find_if(rules.begin(), rules.end(), [](const json& r) { return r["id"] == "disc_1"; });
    ASSERT_NE(it, rules.end());
    EXPECT_EQ((*it)["origin"], "discovered");
    EXPECT_EQ((*it)["premises"].size(), 5u);
    auto audit = svc.get("/kb/audit").body;
    ASSERT_EQ(audit.size(), audit_before + 1);
    EXPECT_EQ(audit.back()["action"], "rule_added");
    EXPECT_EQ(audit.back()["actor"], "expert");
    EXPECT_EQ(audit.back()["identity"], "Dr. Abebe");
    EXPECT_EQ(audit.back()["rule_ids"], json({"disc_1"}));

    auto schema = svc.get("/kb/schema").body["attributes"];
    auto hiv = std::find_if(schema.begin(), schema.end(), [](const json& a) { return a["name"] == "hiv"; });
    ASSERT_NE(hiv, schema.end());
    EXPECT_EQ((*hiv)["domain"], json({"positive", "negative"}));

    auto reloaded = load(svc.path());
    ASSERT_NE(reloaded.rule("disc_1"), nullptr);
    EXPECT_EQ(reloaded.audit.size(), audit_before + 1);

    // The same facts plus hiv=positive now conclude without discovery.
    auto again = svc.post("/sessions", {{"goal", "hbv"},
                                        {"facts",
                                         {{"symptoms", "yes"},
                                          {"jaundice", "yes"},
                                          {"hbsagnonreact", "yes"},
                                          {"igmantihbcreact", "yes"},
                                          {"hiv", "positive"}}}});
    EXPECT_EQ(again.body["status"], "concluded");
    EXPECT_EQ(svc.post("/sessions/" + id + "/discovery", json::object()).status, 409);
}

TEST(Service, DiscoveryConflictsAndAbort) {
    LiveService svc(corpus::build_bundled_kb());
    const std::string before = read_file(svc.path());
    auto start = svc.post("/sessions", {{"goal", "hbv"}});
    std::string id = start.body["id"];
    svc.post("/sessions/" + id + "/answer", {{"attribute", "hbsagreact"}, {"value", "unknown"}});
    auto v = svc.post("/sessions/" + id + "/answer", {{"attribute", "hbsagnonreact"}, {"value", "unknown"}});
    ASSERT_EQ(v.body["status"], "unknown");
    ASSERT_EQ(svc.post("/sessions/" + id + "/discovery", json::object()).status, 200);

    auto commit = svc.post("/sessions/" + id + "/discovery/commit",
                           {{"premises", {{{"attribute", "igmantihbcreact"}, {"value", "no"}}}},
                            {"conclusion", "positive"},
                            {"expert", "Dr. B"}});
    ASSERT_EQ(commit.status, 200) << commit.text;
    EXPECT_EQ(commit.body["status"], "conflicts");
    // Every igm=no case labelled negative conflicts.
    std::vector<int> expected;
    for (const auto& c : corpus::bundled_cases())
        if (c.value_of("igmantihbcreact") == "no" && c.label.value == "negative") expected.push_back(c.id);
    EXPECT_EQ(commit.body["conflicting_cases"].get<std::vector<int>>(), expected);
    EXPECT_EQ(commit.body["session"]["status"], "awaiting_discovery");
    EXPECT_EQ(read_file(svc.path()), before);

    auto malformed = svc.post("/sessions/" + id + "/discovery/commit",
                              {{"premises", json::array()}, {"conclusion", "positive"}, {"expert", "Dr. B"}});
    EXPECT_EQ(malformed.status, 422);

    auto aborted = svc.post("/sessions/" + id + "/discovery/abort", json::object());
    ASSERT_EQ(aborted.status, 200);
    EXPECT_EQ(aborted.body["status"], "unknown");
    EXPECT_EQ(svc.post("/sessions/" + id + "/discovery/abort", json::object()).status, 409);
    EXPECT_EQ(read_file(svc.path()), before);
}

TEST(Service, KnowledgeBaseEndpoints) {
    LiveService svc(corpus::build_bundled_kb());
    auto report = svc.get("/kb/experience-report");
    EXPECT_EQ(report.status, 200);
    EXPECT_EQ(report.text, kFigure);
    EXPECT_EQ(svc.get("/kb/cases").body.size(), 32u);
    EXPECT_EQ(svc.get("/kb/schema").body["goal"], "hbv");

    auto induce = svc.post("/kb/induce", json::object());
    ASSERT_EQ(induce.status, 200);
    EXPECT_EQ(induce.body["report"], kFigure);
    EXPECT_EQ(induce.body["induced_rules"].size(), 7u);
    EXPECT_FALSE(induce.body["emitted"].get<bool>());

    const std::string before = read_file(svc.path());
    auto dry = svc.post("/kb/generalize", {{"mode", "experience"}, {"threshold", 9}, {"dry_run", true}});
    ASSERT_EQ(dry.status, 200) << dry.text;
    EXPECT_EQ(dry.body["removed"], json({"ind_1", "ind_2"}));
    EXPECT_EQ(dry.body["added"], json({"ind_2_gen"}));
    EXPECT_EQ(dry.body["exceptions"], json({27}));
    EXPECT_EQ(read_file(svc.path()), before);

    auto real = svc.post("/kb/generalize", {{"mode", "experience"}, {"threshold", 9}});
    ASSERT_EQ(real.status, 200);
    EXPECT_EQ(real.body["exceptions"], json({27}));
    EXPECT_NE(load(svc.path()).rule("ind_2_gen"), nullptr);
    EXPECT_EQ(load(svc.path()).rule("ind_1"), nullptr);

    auto emit = svc.post("/kb/induce", {{"emit_rules", true}});
    ASSERT_EQ(emit.status, 200);
    EXPECT_TRUE(emit.body["emitted"].get<bool>());
    EXPECT_EQ(emit.body["induced_rules"].size(), 7u);
    EXPECT_EQ(load(svc.path()).rule("ind_2_gen"), nullptr);
}

TEST(Service, ThinAdapterOverAllAssignments) {
    LiveService svc(corpus::build_bundled_kb());
    const std::vector<std::string> attrs = {"symptoms", "jaundice", "hbsagreact",
                                            "hbsagnonreact", "igmantihbcreact", "checkHBV"};
    for (int mask = 0; mask < 64; ++mask) {
        std::map<std::string, std::string> assignment;
        for (std::size_t i = 0; i < attrs.size(); ++i) assignment[attrs[i]] = (mask >> i) & 1 ? "yes" : "no";

        // Library run on the snapshot the API session will see.
        auto snap = svc.store().snapshot();
        Session lib = start_session(snap, "hbv");
        std::vector<std::string> lib_questions;
        while (lib.status == SessionStatus::active) {
            lib_questions.push_back(lib.pending->attribute);
            answer(lib, lib.pending->attribute, assignment.at(lib.pending->attribute));
        }

        auto view = svc.post("/sessions", {{"goal", "hbv"}}).body;
        std::string id = view["id"];
        std::vector<std::string> api_questions;
        int seq = 0;
        while (view["status"] == "active") {
            std::string q = view["question"]["attribute"];
            api_questions.push_back(q);
            view = svc.post("/sessions/" + id + "/answer",
                            {{"attribute", q}, {"value", assignment.at(q)}, {"seq", ++seq}})
                       .body;
        }
        ASSERT_EQ(view["status"], std::string(to_string(lib.status))) << mask;
        EXPECT_EQ(api_questions, lib_questions) << mask;
        ASSERT_EQ(view["result"]["value"], *lib.memory.value("hbv")) << mask;
        EXPECT_EQ(view["facts"].size(), lib.memory.size()) << mask;
    }
}

TEST(Service, ConcurrentSessionsCountEveryFiring) {
    LiveService svc(corpus::build_bundled_kb());
    const std::uint64_t before = firings_of(svc, "hcv_1");
    const int n = 8;
    std::atomic<int> concluded{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < n; ++i)
        threads.emplace_back([&] {
            auto start = svc.post("/sessions", {{"goal", "hcv"}});
            std::string id = start.body["id"];
            // Two deliveries of the same answer race; only one may count.
            json a = {{"attribute", "antihcv"}, {"value", "reactive"}, {"seq", 1}};
            LiveService::Reply r1, r2;
            std::thread retry([&] { r2 = svc.post("/sessions/" + id + "/answer", a); });
            r1 = svc.post("/sessions/" + id + "/answer", a);
            retry.join();
            if (r1.body["status"] == "concluded" && r1.body == r2.body) ++concluded;
        });
    for (auto& t : threads) t.join();
    EXPECT_EQ(concluded, n);
    EXPECT_EQ(firings_of(svc, "hcv_1"), before + n);
    EXPECT_EQ(load(svc.path()).rule("hcv_1")->stats.firings, before + n);
}

TEST(Registry, IdleSessionsExpire) {
    auto now = std::chrono::steady_clock::time_point{};
    api::RegistryOptions opts;
    opts.now = [&] { return now; };
    KbStore store(corpus::build_bundled_kb());
    api::SessionRegistry reg(store, opts);
    std::string a = reg.start({{"goal", "hcv"}})["id"];
    std::string b = reg.start({{"goal", "hcv"}})["id"];
    now += std::chrono::minutes(29);
    EXPECT_NO_THROW(reg.view(a));  // touches a only
    now += std::chrono::minutes(2);
    EXPECT_NO_THROW(reg.view(a));
    EXPECT_THROW(reg.view(b), NotFoundError);
    EXPECT_EQ(reg.size(), 1u);
    now += std::chrono::minutes(30);
    EXPECT_EQ(reg.size(), 0u);
}

TEST(Registry, ServiceHonoursInjectedTimeout) {
    auto now = std::chrono::steady_clock::time_point{};
    std::mutex m;
    api::RegistryOptions opts;
    opts.idle_timeout = std::chrono::seconds(5);
    opts.now = [&] {
        std::lock_guard lock(m);
        return now;
    };
    LiveService svc(corpus::build_bundled_kb(), opts);
    std::string id = svc.post("/sessions", {{"goal", "hcv"}}).body["id"];
    EXPECT_EQ(svc.get("/sessions/" + id).status, 200);
    {
        std::lock_guard lock(m);
        now += std::chrono::seconds(6);
    }
    EXPECT_EQ(svc.get("/sessions/" + id).status, 404);
}

TEST(Address, ParsesFlagsAndEnvironment) {
    auto a = service::parse_address("0.0.0.0:9000");
    EXPECT_EQ(a.host, "0.0.0.0");
    EXPECT_EQ(a.port, 9000);
    EXPECT_EQ(service::parse_address(":81").host, "127.0.0.1");
    EXPECT_EQ(service::parse_address("81").port, 81);
    EXPECT_THROW(service::parse_address("host:http"), SchemaError);
    EXPECT_THROW(service::parse_address("host:70000"), SchemaError);

    ::setenv("HEPX_ADDR", "10.0.0.1:7000", 1);
    EXPECT_EQ(service::resolve_address("").port, 7000);
    EXPECT_EQ(service::resolve_address("").host, "10.0.0.1");
    EXPECT_EQ(service::resolve_address("1.2.3.4:5").port, 5);
    ::unsetenv("HEPX_ADDR");
    EXPECT_EQ(service::resolve_address("").port, 8080);
}
