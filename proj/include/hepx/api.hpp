#pragma once
// JSON model behind the HTTP service: session registry, views and KB
// listings. Nothing here touches sockets, so the CLI and tests can drive it
// directly.
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "induction.hpp"
#include "inference.hpp"
#include "kb_store.hpp"
#include "learner.hpp"
#include "rule_lang.hpp"

namespace hepx::api {

using json = nlohmann::json;

// Request-level failure that is not a domain error (bad JSON, wrong media
// type). Carries its own HTTP status.
class RequestError : public Error {
public:
    RequestError(int status, std::string code, const std::string& message)
        : Error(std::move(code), message), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

inline int http_status(const std::exception& e) {
    if (auto* r = dynamic_cast<const RequestError*>(&e)) return r->status();
    if (dynamic_cast<const NotFoundError*>(&e)) return 404;
    if (dynamic_cast<const StateError*>(&e)) return 409;
    if (dynamic_cast<const SchemaError*>(&e)) return 422;
    if (dynamic_cast<const ParseError*>(&e)) return 422;
    if (dynamic_cast<const CycleError*>(&e)) return 422;
    return 500;
}

inline json error_body(const std::exception& e) {
    json details = json::object();
    std::string code = "internal_error";
    if (auto* err = dynamic_cast<const Error*>(&e)) {
        code = err->code();
        if (auto* p = dynamic_cast<const ParseError*>(&e)) {
            json ds = json::array();
            for (const auto& d : p->diagnostics())
                ds.push_back({{"line", d.span.line},
                              {"start", d.span.start},
                              {"end", d.span.end},
                              {"message", d.message},
                              {"severity", d.severity == Severity::error ? "error" : "warning"}});
            details["diagnostics"] = ds;
        }
        if (auto* c = dynamic_cast<const CycleError*>(&e)) details["rules"] = c->rules();
    }
    return {{"code", code}, {"message", e.what()}, {"details", details}};
}

// ---------------------------------------------------------------------------
// Request helpers

namespace detail {

inline const json& require(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key))
        throw SchemaError("invalid_request", std::string("missing field '") + key + "'");
    return body.at(key);
}

inline std::string string_field(const json& body, const char* key) {
    const json& v = require(body, key);
    if (!v.is_string()) throw SchemaError("invalid_request", std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline std::string optional_string(const json& body, const char* key, std::string fallback = {}) {
    if (!body.is_object() || !body.contains(key) || body.at(key).is_null()) return fallback;
    return string_field(body, key);
}

inline bool optional_bool(const json& body, const char* key, bool fallback) {
    if (!body.is_object() || !body.contains(key) || body.at(key).is_null()) return fallback;
    if (!body.at(key).is_boolean())
        throw SchemaError("invalid_request", std::string("field '") + key + "' must be a boolean");
    return body.at(key).get<bool>();
}

inline std::uint64_t optional_count(const json& body, const char* key, std::uint64_t fallback) {
    if (!body.is_object() || !body.contains(key) || body.at(key).is_null()) return fallback;
    if (!body.at(key).is_number_unsigned())
        throw SchemaError("invalid_request", std::string("field '") + key + "' must be a non-negative integer");
    return body.at(key).get<std::uint64_t>();
}

inline Fact fact_from(const json& j) {
    if (!j.is_object()) throw SchemaError("invalid_request", "a fact is {attribute, value}");
    return {string_field(j, "attribute"), string_field(j, "value")};
}

// Accepts [{attribute, value}, ...] or {attribute: value, ...}.
inline std::vector<Fact> facts_from(const json& j) {
    std::vector<Fact> out;
    if (j.is_null()) return out;
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
            if (!v.is_string()) throw SchemaError("invalid_request", "fact values must be strings");
            out.push_back({k, v.get<std::string>()});
        }
    } else if (j.is_array()) {
        for (const auto& f : j) out.push_back(fact_from(f));
    } else {
        throw SchemaError("invalid_request", "facts must be an object or an array");
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Views

inline json to_json(const Fact& f) { return {{"attribute", f.attribute}, {"value", f.value}}; }

inline json to_json(const std::vector<Fact>& fs) {
    json out = json::array();
    for (const auto& f : fs) out.push_back(to_json(f));
    return out;
}

inline json to_json(const Rule& r) {
    return {{"id", r.id},
            {"text", serialize_rule(r)},
            {"premises", to_json(r.premises)},
            {"conclusion", to_json(r.conclusion)},
            {"origin", to_string(r.origin)},
            {"support", r.stats.support},
            {"firings", r.stats.firings},
            {"experience", experience(r)}};
}

inline json to_json(const CaseRecord& c) {
    return {{"id", c.id}, {"label", to_json(c.label)}, {"observations", to_json(c.observations)}};
}

inline json to_json(const AuditEntry& e) {
    return {{"timestamp", e.timestamp},       {"actor", to_string(e.actor)},
            {"identity", e.identity},         {"action", to_string(e.action)},
            {"rule_ids", e.rule_ids},         {"rule_texts", e.rule_texts}};
}

inline json to_json(const AttributeDef& a) {
    return {{"name", a.name}, {"domain", a.domain}, {"askable", a.askable}, {"prompt", a.prompt}};
}

inline json to_json(const Derivation& d) {
    json ants = json::array();
    for (const auto& a : d.antecedents) {
        json j = {{"condition", to_json(a.condition)}, {"source", to_string(a.source)}};
        if (!a.proof.empty()) j["proof"] = to_json(a.proof.front());
        ants.push_back(j);
    }
    json out = {{"conclusion", to_json(d.conclusion)}, {"antecedents", ants}};
    out["rule"] = d.rule.empty() ? json(nullptr) : json(d.rule);
    return out;
}

inline json to_json(const ValidationResult& v) {
    return {{"status", to_string(v.status)},
            {"conflicting_cases", v.conflicting_cases},
            {"subsumed_existing", v.subsumed_existing},
            {"replaced", v.replaced},
            {"rule_id", v.rule_id.empty() ? json(nullptr) : json(v.rule_id)},
            {"overridden", v.overridden}};
}

inline json to_json(const GeneralizationReport& r) {
    json skipped = json::array();
    for (const auto& s : r.skipped)
        skipped.push_back({{"general", s.general}, {"specific", s.specific}, {"reason", s.reason}});
    return {{"mode", to_string(r.mode)},
            {"removed", r.removed},
            {"added", r.added},
            {"kept", r.kept},
            {"skipped", skipped},
            {"exceptions", r.exceptions},
            {"cases", r.cases},
            {"accuracy_before", r.accuracy_before},
            {"accuracy_after", r.accuracy_after}};
}

inline json to_json(const Diagnostic& d) {
    return {{"severity", d.severity == Severity::error ? "error" : "warning"},
            {"code", d.code},
            {"message", d.message},
            {"rules", d.rules},
            {"cases", d.cases}};
}

inline std::string default_prompt(const std::string& attribute) { return "What is " + attribute + "?"; }

inline json session_view(const Session& s, std::size_t seq) {
    json v = {{"id", s.id}, {"goal", s.goal}, {"status", to_string(s.status)}, {"seq", seq}};
    v["question"] = nullptr;
    v["result"] = nullptr;
    if (s.pending) {
        const AttributeDef* a = s.kb->attribute(s.pending->attribute);
        std::vector<std::string> answers = a ? a->domain : std::vector<std::string>{};
        answers.emplace_back(kUnknownAnswer);
        v["question"] = {{"attribute", s.pending->attribute},
                         {"prompt", a && !a->prompt.empty() ? a->prompt : default_prompt(s.pending->attribute)},
                         {"answers", answers}};
    }
    if (s.status == SessionStatus::concluded) {
        auto value = s.memory.value(s.goal);
        Fact goal{s.goal, value.value_or("")};
        auto advice = s.kb->advice_for(goal);
        v["result"] = {{"attribute", goal.attribute},
                       {"value", goal.value},
                       {"advice", advice ? json(*advice) : json(nullptr)}};
    }
    json missing = json::array();
    for (const auto& set : s.missing) missing.push_back(to_json(set));
    v["missing"] = missing;
    json facts = json::array();
    for (const auto& [attr, e] : s.memory.entries()) {
        json f = {{"attribute", attr}, {"value", e.value}, {"source", to_string(e.source)}};
        facts.push_back(f);
    }
    v["facts"] = facts;
    json unanswered = json::array();
    for (const auto& u : s.unanswerable) unanswered.push_back(u);
    v["unanswerable"] = unanswered;
    return v;
}

inline json proposal_view(const DiscoveryProposal& p, const KnowledgeBase& kb) {
    const AttributeDef* g = kb.attribute(p.goal);
    return {{"session_id", p.session_id},
            {"goal", p.goal},
            {"context", to_json(p.context)},
            {"premises", to_json(p.premises)},
            {"conclusion", {{"attribute", p.conclusion.attribute}, {"value", nullptr}}},
            {"conclusion_values", g ? g->domain : std::vector<std::string>{}}};
}

// ---------------------------------------------------------------------------
// Sessions

struct RegistryOptions {
    std::chrono::steady_clock::duration idle_timeout = std::chrono::minutes(30);
    bool record_firings = true;
    std::function<std::chrono::steady_clock::time_point()> now = [] {
        return std::chrono::steady_clock::now();
    };
};

class SessionRegistry {
public:
    explicit SessionRegistry(KbStore& store, RegistryOptions opts = {})
        : store_(store), opts_(std::move(opts)), rng_(std::random_device{}()) {}

    KbStore& store() { return store_; }

    // {goal?, facts?}
    json start(const json& body) {
        auto kb = store_.snapshot();
        std::string goal = detail::optional_string(body, "goal", kb->goal_attribute);
        std::vector<Fact> given;
        if (body.is_object() && body.contains("facts")) given = detail::facts_from(body.at("facts"));

        auto entry = std::make_shared<Entry>();
        std::vector<std::string> fired;
        entry->session = start_session(kb, goal, given, new_id(), &fired);
        entry->last_used = opts_.now();
        std::lock_guard entry_lock(entry->mutex);
        {
            std::lock_guard lock(mutex_);
            sweep_locked();
            sessions_[entry->session.id] = entry;
        }
        record(fired);
        entry->views.push_back(session_view(entry->session, 0));
        return entry->views.back();
    }

    json view(const std::string& id) {
        auto e = find(id);
        std::lock_guard lock(e->mutex);
        return session_view(e->session, e->answers.size());
    }

    // {attribute, value, seq?}. With seq, a retried answer returns the view it
    // produced the first time; a different answer under a used seq, or a
    // skipped seq, is a conflict.
    json answer(const std::string& id, const json& body) {
        Fact a{detail::string_field(body, "attribute"), detail::string_field(body, "value")};
        auto e = find(id);
        std::lock_guard lock(e->mutex);
        std::size_t done = e->answers.size();
        if (body.contains("seq") && !body.at("seq").is_null()) {
            std::uint64_t seq = detail::optional_count(body, "seq", 0);
            if (seq == 0) throw SchemaError("invalid_request", "seq starts at 1");
            if (seq <= done) {
                if (e->answers[seq - 1] != a)
                    throw StateError("seq_conflict", "answer " + std::to_string(seq) + " was " +
                                                         to_string(e->answers[seq - 1]));
                return e->views[seq];
            }
            if (seq > done + 1)
                throw StateError("seq_gap", "expected seq " + std::to_string(done + 1));
        }
        auto fired = hepx::answer(e->session, a.attribute, a.value);
        e->answers.push_back(a);
        record(fired);
        e->views.push_back(session_view(e->session, e->answers.size()));
        return e->views.back();
    }

    json explanation(const std::string& id, const std::string& mode) {
        auto e = find(id);
        std::lock_guard lock(e->mutex);
        const Session& s = e->session;
        if (mode == "why") {
            json chain = json::array();
            if (s.pending)
                for (const auto& rid : s.pending->chain)
                    if (const Rule* r = s.kb->rule(rid)) chain.push_back(to_json(*r));
            std::string text = explain_why(s);
            return {{"mode", "why"}, {"attribute", s.pending->attribute}, {"chain", chain}, {"text", text}};
        }
        if (mode == "how") {
            std::string text = explain_how(s);
            return {{"mode", "how"}, {"derivation", to_json(*s.result)}, {"text", text}};
        }
        throw SchemaError("invalid_mode", "mode must be 'why' or 'how'");
    }

    json propose(const std::string& id) {
        auto e = find(id);
        std::lock_guard lock(e->mutex);
        if (e->session.status == SessionStatus::awaiting_discovery && e->proposal)
            return proposal_view(*e->proposal, *e->session.kb);
        e->proposal = propose_discovery(e->session);
        return proposal_view(*e->proposal, *e->session.kb);
    }

    // {premises, conclusion, expert, override?, replace?, alternatives?}
    json commit(const std::string& id, const json& body) {
        DiscoveryProposal p;
        const json& premises = detail::require(body, "premises");
        if (!premises.is_array()) throw SchemaError("invalid_request", "premises must be an array");
        for (const auto& c : premises) p.premises.push_back(detail::fact_from(c));
        const json& conclusion = detail::require(body, "conclusion");
        auto e = find(id);
        std::lock_guard lock(e->mutex);
        Session& s = e->session;
        p.conclusion = conclusion.is_string() ? Fact{s.goal, conclusion.get<std::string>()}
                                              : detail::fact_from(conclusion);
        p.expert = detail::string_field(body, "expert");
        if (body.contains("alternatives")) {
            const json& alt = body.at("alternatives");
            if (!alt.is_object()) throw SchemaError("invalid_request", "alternatives must be an object");
            for (const auto& [k, v] : alt.items()) {
                if (!v.is_array()) throw SchemaError("invalid_request", "alternatives are value arrays");
                for (const auto& x : v) {
                    if (!x.is_string()) throw SchemaError("invalid_request", "alternatives are value arrays");
                    p.alternatives[k].push_back(x.get<std::string>());
                }
            }
        }
        DiscoveryOptions opts{detail::optional_bool(body, "override", false),
                              detail::optional_bool(body, "replace", false)};

        DiscoveryProposal bound = bind_proposal(s, p);
        ValidationResult res;
        auto snap = store_.commit([&](KnowledgeBase& kb) {
            res = apply_discovery(kb, bound, opts, store_.stamp(Actor::expert, bound.expert));
        });
        if (res.status == ValidationResult::Status::accepted) {
            resume_after_discovery(s, snap, bound);
            e->proposal.reset();
        } else {
            s.status = SessionStatus::awaiting_discovery;
        }
        json out = to_json(res);
        out["session"] = session_view(s, e->answers.size());
        return out;
    }

    json abort(const std::string& id) {
        auto e = find(id);
        std::lock_guard lock(e->mutex);
        abort_discovery(e->session);
        e->proposal.reset();
        return session_view(e->session, e->answers.size());
    }

    std::size_t size() {
        std::lock_guard lock(mutex_);
        sweep_locked();
        return sessions_.size();
    }

private:
    struct Entry {
        std::mutex mutex;
        Session session;
        std::chrono::steady_clock::time_point last_used;
        std::vector<Fact> answers;
        std::vector<json> views;  // views[k]: view after k answers
        std::optional<DiscoveryProposal> proposal;
    };

    std::string new_id() {
        static constexpr char hex[] = "0123456789abcdef";
        std::lock_guard lock(mutex_);
        std::string id;
        do {
            id.clear();
            for (int i = 0; i < 16; ++i) id += hex[rng_() % 16];
        } while (sessions_.count(id));
        return id;
    }

    void sweep_locked() {
        auto now = opts_.now();
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            if (now - it->second->last_used >= opts_.idle_timeout) it = sessions_.erase(it);
            else ++it;
        }
    }

    std::shared_ptr<Entry> find(const std::string& id) {
        std::lock_guard lock(mutex_);
        sweep_locked();
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFoundError("unknown_session", "no session '" + id + "'");
        it->second->last_used = opts_.now();
        return it->second;
    }

    void record(const std::vector<std::string>& fired) {
        if (!opts_.record_firings || fired.empty()) return;
        store_.commit([&](KnowledgeBase& kb) {
            for (const auto& id : fired)
                if (kb.rule(id)) record_firing(kb, id, store_.stamp());
        });
    }

    KbStore& store_;
    RegistryOptions opts_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Knowledge-base maintenance

// {emit_rules?}
inline json induce(KbStore& store, const json& body) {
    bool emit = detail::optional_bool(body, "emit_rules", false);
    auto kb = store.snapshot();
    json out;
    if (emit) {
        InducedRules ir;
        store.commit([&](KnowledgeBase& m) { ir = emit_induced_rules(m, store.stamp()); });
        out["report"] = format_experience_report(ir.induction.tree);
        out["removed"] = ir.removed;
        out["added"] = ir.added;
        json ds = json::array();
        for (const auto& d : ir.induction.diagnostics) ds.push_back(to_json(d));
        out["diagnostics"] = ds;
    } else {
        auto ind = induce_kb(*kb);
        out["report"] = format_experience_report(ind.tree);
        out["removed"] = json::array();
        out["added"] = json::array();
        json ds = json::array();
        for (const auto& d : ind.diagnostics) ds.push_back(to_json(d));
        out["diagnostics"] = ds;
    }
    json rules = json::array();
    for (const auto& r : store.snapshot()->rules)
        if (r.origin == RuleOrigin::induced) rules.push_back(to_json(r));
    out["induced_rules"] = rules;
    out["emitted"] = emit;
    return out;
}

// {mode, threshold?, minority_max?, dry_run?}
inline json generalize(KbStore& store, const json& body) {
    std::string mode = detail::string_field(body, "mode");
    bool dry = detail::optional_bool(body, "dry_run", false);
    ExperienceOptions eo;
    eo.threshold = detail::optional_count(body, "threshold", eo.threshold);
    eo.minority_max = detail::optional_count(body, "minority_max", eo.minority_max);
    if (mode != "subsume" && mode != "experience")
        throw SchemaError("invalid_mode", "mode must be 'subsume' or 'experience'");
    auto run = [&](const KnowledgeBase& kb) {
        return mode == "subsume" ? subsume_generalize(kb, store.stamp()) : experience_generalize(kb, eo, store.stamp());
    };
    GeneralizationReport report;
    if (dry) {
        report = run(*store.snapshot()).report;
    } else {
        store.commit([&](KnowledgeBase& kb) {
            auto g = run(kb);
            report = g.report;
            kb = std::move(g.kb);
        });
    }
    json out = to_json(report);
    out["dry_run"] = dry;
    return out;
}

inline json list_rules(const KnowledgeBase& kb) {
    json out = json::array();
    for (const auto& r : kb.rules) out.push_back(to_json(r));
    return out;
}

inline json list_cases(const KnowledgeBase& kb) {
    json out = json::array();
    for (const auto& c : kb.cases) out.push_back(to_json(c));
    return out;
}

inline json list_audit(const KnowledgeBase& kb) {
    json out = json::array();
    for (const auto& e : kb.audit) out.push_back(to_json(e));
    return out;
}

inline json schema_view(const KnowledgeBase& kb) {
    json attrs = json::array();
    for (const auto& a : kb.schema) attrs.push_back(to_json(a));
    return {{"goal", kb.goal_attribute}, {"defaults", kb.allow_defaults}, {"attributes", attrs}};
}

} // namespace hepx::api
