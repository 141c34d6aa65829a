#pragma once
// Core domain types: attributes, facts, rules, cases and the knowledge base.
//
// Everything here is a plain value type. A KnowledgeBase is copied when it
// is mutated (see kb_store.hpp), so readers can hold shared const snapshots.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace hepx {

struct AttributeDef {
    std::string name;
    std::vector<std::string> domain;  // declared order matters for tie-breaks
    bool askable = false;
    std::string prompt;               // optional question text for the UI

    bool allows(std::string_view value) const {
        return std::find(domain.begin(), domain.end(), value) != domain.end();
    }

    bool operator==(const AttributeDef&) const = default;
};

// One ground attribute/value pair. Conditions are equality tests with the
// same shape, so they share the type.
struct Fact {
    std::string attribute;
    std::string value;

    auto operator<=>(const Fact&) const = default;
    bool operator==(const Fact&) const = default;
};
using Condition = Fact;

inline std::string to_string(const Fact& f) { return f.attribute + "=" + f.value; }

struct ExperienceStats {
    std::uint64_t support = 0;  // training cases covered at induction time
    std::uint64_t firings = 0;  // live consultation firings

    bool operator==(const ExperienceStats&) const = default;
};

enum class RuleOrigin { authored, induced, discovered, generalized };

inline std::string_view to_string(RuleOrigin o) {
    switch (o) {
    case RuleOrigin::authored: return "authored";
    case RuleOrigin::induced: return "induced";
    case RuleOrigin::discovered: return "discovered";
    case RuleOrigin::generalized: return "generalized";
    }
    return "authored";
}

inline std::optional<RuleOrigin> parse_origin(std::string_view s) {
    if (s == "authored") return RuleOrigin::authored;
    if (s == "induced") return RuleOrigin::induced;
    if (s == "discovered") return RuleOrigin::discovered;
    if (s == "generalized") return RuleOrigin::generalized;
    return std::nullopt;
}

struct Rule {
    std::string id;
    std::vector<Condition> premises;  // written order; drives question order
    Fact conclusion;
    ExperienceStats stats;
    RuleOrigin origin = RuleOrigin::authored;

    // Zero-premise rules are defaults; only legal when the KB enables them.
    bool is_default() const { return premises.empty(); }

    const Condition* premise_on(std::string_view attribute) const {
        for (const auto& p : premises)
            if (p.attribute == attribute) return &p;
        return nullptr;
    }

    std::vector<Condition> sorted_premises() const {
        auto out = premises;
        std::sort(out.begin(), out.end());
        return out;
    }

    // Premise order is presentation only; two rules are equal when their
    // premise sets are.
    bool operator==(const Rule& o) const {
        return id == o.id && conclusion == o.conclusion && stats == o.stats &&
               origin == o.origin && sorted_premises() == o.sorted_premises();
    }
};

inline std::uint64_t experience(const Rule& rule) {
    return rule.stats.support + rule.stats.firings;
}

struct CaseRecord {
    int id = 0;
    Fact label;                      // goal attribute and its recorded value
    std::vector<Fact> observations;  // written order

    std::optional<std::string> value_of(std::string_view attribute) const {
        for (const auto& o : observations)
            if (o.attribute == attribute) return o.value;
        return std::nullopt;
    }

    // True when every premise is observed with the same value.
    bool matches(const std::vector<Condition>& premises) const {
        return std::all_of(premises.begin(), premises.end(), [&](const Condition& c) {
            auto v = value_of(c.attribute);
            return v && *v == c.value;
        });
    }

    bool operator==(const CaseRecord& o) const {
        auto a = observations, b = o.observations;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        return id == o.id && label == o.label && a == b;
    }
};

enum class Actor { system, expert };
enum class AuditAction { rule_added, rule_removed, rule_generalized, stats_updated };

inline std::string_view to_string(Actor a) { return a == Actor::system ? "system" : "expert"; }

inline std::string_view to_string(AuditAction a) {
    switch (a) {
    case AuditAction::rule_added: return "rule_added";
    case AuditAction::rule_removed: return "rule_removed";
    case AuditAction::rule_generalized: return "rule_generalized";
    case AuditAction::stats_updated: return "stats_updated";
    }
    return "rule_added";
}

inline std::optional<AuditAction> parse_audit_action(std::string_view s) {
    if (s == "rule_added") return AuditAction::rule_added;
    if (s == "rule_removed") return AuditAction::rule_removed;
    if (s == "rule_generalized") return AuditAction::rule_generalized;
    if (s == "stats_updated") return AuditAction::stats_updated;
    return std::nullopt;
}

// Replay semantics, applied in order to a rule list:
//   rule_added        append every rule in rule_texts
//   rule_removed      drop every id in rule_ids
//   rule_generalized  drop every id in rule_ids, then append rule_texts
//   stats_updated     replace each rule (by id, in place) with rule_texts
struct AuditEntry {
    std::string timestamp;  // ISO-8601 UTC
    Actor actor = Actor::system;
    std::string identity;   // declared expert identity; empty for system
    AuditAction action = AuditAction::rule_added;
    std::vector<std::string> rule_ids;
    std::vector<std::string> rule_texts;  // canonical serialized rules

    bool operator==(const AuditEntry&) const = default;
};

// Who/when for a mutation; copied into the audit entry it produces.
struct AuditStamp {
    std::string timestamp;
    Actor actor = Actor::system;
    std::string identity;
};

struct KnowledgeBase {
    std::vector<AttributeDef> schema;
    std::string goal_attribute;
    bool allow_defaults = false;
    std::vector<CaseRecord> cases;
    std::vector<Rule> rules;
    std::map<Fact, std::string> advice;  // goal fact -> advice text
    std::vector<AuditEntry> audit;

    const AttributeDef* attribute(std::string_view name) const {
        for (const auto& a : schema)
            if (a.name == name) return &a;
        return nullptr;
    }
    AttributeDef* attribute(std::string_view name) {
        for (auto& a : schema)
            if (a.name == name) return &a;
        return nullptr;
    }

    const Rule* rule(std::string_view id) const {
        for (const auto& r : rules)
            if (r.id == id) return &r;
        return nullptr;
    }
    Rule* rule(std::string_view id) {
        for (auto& r : rules)
            if (r.id == id) return &r;
        return nullptr;
    }

    const CaseRecord* find_case(int id) const {
        for (const auto& c : cases)
            if (c.id == id) return &c;
        return nullptr;
    }

    bool concludes(std::string_view attribute) const {
        return std::any_of(rules.begin(), rules.end(),
                           [&](const Rule& r) { return r.conclusion.attribute == attribute; });
    }

    std::optional<std::string> advice_for(const Fact& f) const {
        auto it = advice.find(f);
        if (it == advice.end()) return std::nullopt;
        return it->second;
    }

    // First id of the form `<prefix><n>` not yet used, n >= 1.
    std::string fresh_rule_id(std::string_view prefix) const {
        for (std::size_t n = 1;; ++n) {
            std::string id = std::string(prefix) + std::to_string(n);
            if (!rule(id)) return id;
        }
    }

    bool operator==(const KnowledgeBase&) const = default;
};

// ---------------------------------------------------------------------------
// Validation

enum class Severity { error, warning };

struct Diagnostic {
    Severity severity = Severity::error;
    std::string code;
    std::string message;
    std::vector<std::string> rules;  // affected rule ids
    std::vector<int> cases;          // affected case ids

    bool operator==(const Diagnostic&) const = default;
};

inline bool has_errors(const std::vector<Diagnostic>& ds) {
    return std::any_of(ds.begin(), ds.end(),
                       [](const Diagnostic& d) { return d.severity == Severity::error; });
}

namespace detail {

inline void check_fact(const KnowledgeBase& kb, const Fact& f, const std::string& where,
                       std::vector<Diagnostic>& out, std::vector<std::string> rules = {},
                       std::vector<int> cases = {}) {
    const AttributeDef* a = kb.attribute(f.attribute);
    if (!a) {
        out.push_back({Severity::error, "unknown_attribute",
                       where + ": unknown attribute '" + f.attribute + "'", rules, cases});
    } else if (!a->allows(f.value)) {
        out.push_back({Severity::error, "value_out_of_domain",
                       where + ": value '" + f.value + "' not in domain of '" + f.attribute + "'",
                       rules, cases});
    }
}

// Depth-first search over the attribute dependency graph (premise attribute
// -> conclusion attribute). Returns the rule ids along the first cycle found.
inline std::vector<std::string> find_rule_cycle(const KnowledgeBase& kb) {
    std::map<std::string, int> state;  // 0 unvisited, 1 on stack, 2 done
    std::vector<std::string> stack_rules;
    std::vector<std::string> stack_attrs;
    std::vector<std::string> cycle;

    auto visit = [&](auto&& self, const std::string& attr) -> bool {
        state[attr] = 1;
        stack_attrs.push_back(attr);
        for (const auto& r : kb.rules) {
            if (r.conclusion.attribute != attr) continue;
            for (const auto& p : r.premises) {
                stack_rules.push_back(r.id);
                int s = state[p.attribute];
                if (s == 1) {
                    auto pos = std::find(stack_attrs.begin(), stack_attrs.end(), p.attribute);
                    auto offset = pos - stack_attrs.begin();
                    cycle.assign(stack_rules.begin() + offset, stack_rules.end());
                    return true;
                }
                if (s == 0 && self(self, p.attribute)) return true;
                stack_rules.pop_back();
            }
        }
        stack_attrs.pop_back();
        state[attr] = 2;
        return false;
    };

    std::set<std::string> attrs;
    for (const auto& r : kb.rules) attrs.insert(r.conclusion.attribute);
    for (const auto& a : attrs)
        if (state[a] == 0 && visit(visit, a)) return cycle;
    return {};
}

} // namespace detail

// Reports schema violations, duplicate ids, contradictory rule pairs,
// contradictory cases and rule/case conflicts. Empty result means valid.
inline std::vector<Diagnostic> validate_kb(const KnowledgeBase& kb) {
    std::vector<Diagnostic> out;

    std::set<std::string> names;
    for (const auto& a : kb.schema) {
        if (!names.insert(a.name).second)
            out.push_back({Severity::error, "duplicate_attribute",
                           "attribute '" + a.name + "' declared twice", {}, {}});
        if (a.domain.empty())
            out.push_back({Severity::error, "empty_domain",
                           "attribute '" + a.name + "' has an empty domain", {}, {}});
        std::set<std::string> vals(a.domain.begin(), a.domain.end());
        if (vals.size() != a.domain.size())
            out.push_back({Severity::error, "duplicate_value",
                           "attribute '" + a.name + "' repeats a domain value", {}, {}});
    }
    if (!kb.goal_attribute.empty() && !kb.attribute(kb.goal_attribute))
        out.push_back({Severity::error, "unknown_goal",
                       "goal attribute '" + kb.goal_attribute + "' not in schema", {}, {}});

    std::set<std::string> ids;
    for (const auto& r : kb.rules) {
        const std::string where = "rule " + r.id;
        if (!ids.insert(r.id).second)
            out.push_back({Severity::error, "duplicate_rule_id", "rule id '" + r.id + "' repeated",
                           {r.id}, {}});
        if (r.is_default() && !kb.allow_defaults)
            out.push_back({Severity::error, "default_rule",
                           where + " has no premises and defaults are disabled", {r.id}, {}});
        std::set<std::string> seen;
        for (const auto& p : r.premises) {
            detail::check_fact(kb, p, where, out, {r.id});
            if (!seen.insert(p.attribute).second)
                out.push_back({Severity::error, "duplicate_premise",
                               where + " tests '" + p.attribute + "' twice", {r.id}, {}});
            if (p.attribute == r.conclusion.attribute)
                out.push_back({Severity::error, "conclusion_in_premises",
                               where + " concludes an attribute it tests", {r.id}, {}});
        }
        detail::check_fact(kb, r.conclusion, where, out, {r.id});
    }

    for (std::size_t i = 0; i < kb.rules.size(); ++i) {
        for (std::size_t j = i + 1; j < kb.rules.size(); ++j) {
            const Rule& a = kb.rules[i];
            const Rule& b = kb.rules[j];
            if (a.conclusion.attribute == b.conclusion.attribute &&
                a.conclusion.value != b.conclusion.value &&
                a.sorted_premises() == b.sorted_premises())
                out.push_back({Severity::error, "contradictory_rules",
                               "rules " + a.id + " and " + b.id +
                                   " share premises but conclude differently",
                               {a.id, b.id}, {}});
        }
    }

    if (auto cycle = detail::find_rule_cycle(kb); !cycle.empty()) {
        std::string msg = "cyclic rule dependency through";
        for (const auto& id : cycle) msg += " " + id;
        out.push_back({Severity::error, "rule_cycle", msg, cycle, {}});
    }

    std::set<int> case_ids;
    const CaseRecord* first = kb.cases.empty() ? nullptr : &kb.cases.front();
    std::set<std::string> first_attrs;
    if (first)
        for (const auto& o : first->observations) first_attrs.insert(o.attribute);
    for (const auto& c : kb.cases) {
        const std::string where = "case " + std::to_string(c.id);
        if (!case_ids.insert(c.id).second)
            out.push_back({Severity::error, "duplicate_case_id", where + " repeated", {}, {c.id}});
        if (c.label.attribute != kb.goal_attribute)
            out.push_back({Severity::error, "case_label",
                           where + " is labelled for '" + c.label.attribute + "', not the goal",
                           {}, {c.id}});
        detail::check_fact(kb, c.label, where, out, {}, {c.id});
        std::set<std::string> attrs;
        for (const auto& o : c.observations) {
            detail::check_fact(kb, o, where, out, {}, {c.id});
            if (!attrs.insert(o.attribute).second)
                out.push_back({Severity::error, "duplicate_observation",
                               where + " observes '" + o.attribute + "' twice", {}, {c.id}});
        }
        if (attrs != first_attrs)
            out.push_back({Severity::error, "case_shape",
                           where + " observes a different attribute set than case " +
                               std::to_string(first->id),
                           {}, {c.id}});
    }

    for (std::size_t i = 0; i < kb.cases.size(); ++i) {
        for (std::size_t j = i + 1; j < kb.cases.size(); ++j) {
            const CaseRecord& a = kb.cases[i];
            const CaseRecord& b = kb.cases[j];
            if (a.label != b.label && a.matches(b.observations) && b.matches(a.observations))
                out.push_back({Severity::warning, "contradictory_cases",
                               "cases " + std::to_string(a.id) + " and " + std::to_string(b.id) +
                                   " have identical observations but different labels",
                               {}, {a.id, b.id}});
        }
    }

    for (const auto& r : kb.rules) {
        if (r.conclusion.attribute != kb.goal_attribute || r.is_default()) continue;
        for (const auto& c : kb.cases) {
            if (c.label.value != r.conclusion.value && c.matches(r.premises))
                out.push_back({Severity::warning, "rule_case_conflict",
                               "rule " + r.id + " concludes " + to_string(r.conclusion) +
                                   " but case " + std::to_string(c.id) + " is " +
                                   to_string(c.label),
                               {r.id}, {c.id}});
        }
    }
    return out;
}

} // namespace hepx
