#pragma once
// Adaptive learning: rule generalization and runtime rule discovery.
//
// Every function here works on a KnowledgeBase value and records what it did
// in the KB's audit log; persistence is the store's job.

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "error.hpp"
#include "induction.hpp"
#include "inference.hpp"
#include "kb_model.hpp"
#include "rule_lang.hpp"

namespace hepx {

// ---------------------------------------------------------------------------
// Case replay

// Goal value forward chaining derives from a case's observations.
// Observations outside the schema are ignored.
inline std::optional<std::string> classify_case(const KnowledgeBase& kb, const CaseRecord& c) {
    std::vector<Fact> facts;
    for (const auto& o : c.observations) {
        const AttributeDef* a = kb.attribute(o.attribute);
        if (a && a->allows(o.value) && o.attribute != kb.goal_attribute) facts.push_back(o);
    }
    return forward_chain(kb, facts).memory.value(kb.goal_attribute);
}

// Ids of stored cases whose replayed outcome differs from their label.
inline std::vector<int> misclassified_cases(const KnowledgeBase& kb) {
    std::vector<int> out;
    for (const auto& c : kb.cases) {
        auto v = classify_case(kb, c);
        if (!v || *v != c.label.value) out.push_back(c.id);
    }
    return out;
}

inline double replay_accuracy(const KnowledgeBase& kb) {
    if (kb.cases.empty()) return 1.0;
    auto wrong = misclassified_cases(kb).size();
    return static_cast<double>(kb.cases.size() - wrong) / static_cast<double>(kb.cases.size());
}

// ---------------------------------------------------------------------------
// Generalization

enum class GeneralizationMode { subsume, experience };

inline std::string_view to_string(GeneralizationMode m) {
    return m == GeneralizationMode::subsume ? "subsume" : "experience";
}

struct SkippedMerge {
    std::string general;
    std::string specific;
    std::string reason;
};

struct GeneralizationReport {
    GeneralizationMode mode = GeneralizationMode::subsume;
    std::vector<std::string> removed;
    std::vector<std::string> added;
    std::vector<std::string> kept;        // surviving rules that absorbed others
    std::vector<SkippedMerge> skipped;
    std::vector<int> exceptions;          // stored cases misclassified afterwards
    std::size_t cases = 0;
    double accuracy_before = 1.0;
    double accuracy_after = 1.0;
};

struct Generalization {
    KnowledgeBase kb;
    GeneralizationReport report;
};

namespace detail {

inline bool premises_subset(const Rule& general, const Rule& specific) {
    auto g = general.sorted_premises();
    auto s = specific.sorted_premises();
    return std::includes(s.begin(), s.end(), g.begin(), g.end());
}

// No attribute tested by both with different values.
inline bool compatible(const Rule& a, const Rule& b) {
    for (const auto& p : a.premises)
        if (const auto* q = b.premise_on(p.attribute); q && q->value != p.value) return false;
    return true;
}

// True when folding `specific` into `general` cannot change which value the
// conclusion attribute takes for any input: every conflicting rule that can
// co-fire keeps its rank relative to the general rule and to the rule that
// replaces the specific one.
inline bool merge_is_safe(const std::vector<Rule>& rules, const Rule& general, const Rule& specific,
                          const Rule& merged, std::string* blocker) {
    for (const auto& t : rules) {
        if (t.id == general.id || t.id == specific.id) continue;
        if (t.conclusion.attribute != general.conclusion.attribute ||
            t.conclusion.value == general.conclusion.value || !compatible(t, general))
            continue;
        if (rule_precedes(general, t) != rule_precedes(merged, t) ||
            rule_precedes(specific, t) != rule_precedes(merged, t)) {
            if (blocker) *blocker = t.id;
            return false;
        }
    }
    return true;
}

inline void erase_ids(std::vector<Rule>& rules, const std::set<std::string>& ids) {
    rules.erase(std::remove_if(rules.begin(), rules.end(),
                               [&](const Rule& r) { return ids.count(r.id) > 0; }),
                rules.end());
}

} // namespace detail

/// Removes every rule whose premises strictly contain another rule's with the
/// same conclusion (exact duplicates collapse into the earlier one). The
/// most general survivor absorbs the removed rule's experience, so total
/// experience is conserved. Runs to a fixpoint.
///
/// A merge that could re-rank the survivor against a conflicting rule is not
/// applied; it is listed in `report.skipped` instead.
inline Generalization subsume_generalize(const KnowledgeBase& kb, const AuditStamp& stamp) {
    Generalization out{kb, {}};
    GeneralizationReport& rep = out.report;
    rep.mode = GeneralizationMode::subsume;
    rep.cases = kb.cases.size();
    rep.accuracy_before = replay_accuracy(kb);

    std::set<std::pair<std::string, std::string>> skipped_pairs;
    std::set<std::string> kept;
    auto& rules = out.kb.rules;
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t si = 0; si < rules.size() && !changed; ++si) {
            const Rule& specific = rules[si];
            std::vector<std::size_t> subsumers;
            for (std::size_t gi = 0; gi < rules.size(); ++gi) {
                if (gi == si) continue;
                const Rule& g = rules[gi];
                if (g.conclusion != specific.conclusion || !detail::premises_subset(g, specific)) continue;
                bool equal = g.premises.size() == specific.premises.size();
                if (equal && gi > si) continue;  // duplicates fold into the earlier rule
                subsumers.push_back(gi);
            }
            std::sort(subsumers.begin(), subsumers.end(), [&](std::size_t a, std::size_t b) {
                return rule_precedes(rules[a], rules[b]);
            });
            for (std::size_t gi : subsumers) {
                const Rule& general = rules[gi];
                Rule merged = general;
                merged.stats.support += specific.stats.support;
                merged.stats.firings += specific.stats.firings;
                std::string blocker;
                if (!detail::merge_is_safe(rules, general, specific, merged, &blocker)) {
                    if (skipped_pairs.insert({general.id, specific.id}).second)
                        rep.skipped.push_back({general.id, specific.id,
                                               "would re-rank against conflicting rule " + blocker});
                    continue;
                }
                AuditEntry entry{stamp.timestamp, stamp.actor, stamp.identity,
                                 AuditAction::rule_generalized,
                                 {specific.id, general.id},
                                 {serialize_rule(merged)}};
                rep.removed.push_back(specific.id);
                kept.insert(general.id);
                kept.erase(specific.id);
                detail::erase_ids(rules, {specific.id, general.id});
                rules.push_back(std::move(merged));
                out.kb.audit.push_back(std::move(entry));
                changed = true;
                break;
            }
        }
    }
    rep.kept.assign(kept.begin(), kept.end());
    rep.exceptions = misclassified_cases(out.kb);
    rep.accuracy_after = replay_accuracy(out.kb);
    return out;
}

struct ExperienceOptions {
    std::uint64_t threshold = 9;     // majority must reach threshold x minority
    std::uint64_t minority_max = 1;  // minority experience allowed to be overruled
};

/// Merges induced sibling rules (same premises except one value) by dropping
/// the differing premise. Siblings that agree always merge. Siblings that
/// disagree merge when the majority's experience is at least `threshold`
/// times the minority's and the minority has at most `minority_max`
/// experience; the majority conclusion wins and the cases the minority
/// covered become exceptions. Runs to a fixpoint.
inline Generalization experience_generalize(const KnowledgeBase& kb, const ExperienceOptions& opts,
                                            const AuditStamp& stamp) {
    if (opts.threshold < 1) throw SchemaError("bad_threshold", "threshold must be at least 1");
    Generalization out{kb, {}};
    GeneralizationReport& rep = out.report;
    rep.mode = GeneralizationMode::experience;
    rep.cases = kb.cases.size();
    rep.accuracy_before = replay_accuracy(kb);

    auto& rules = out.kb.rules;
    auto eligible = [](const Rule& r) {
        return (r.origin == RuleOrigin::induced || r.origin == RuleOrigin::generalized) &&
               !r.premises.empty();
    };
    std::set<std::string> added;
    for (bool changed = true; changed;) {
        changed = false;
        // Group by (conclusion attribute, remaining premises) for each
        // premise attribute that could be dropped.
        std::map<std::pair<std::string, std::vector<Condition>>, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < rules.size(); ++i) {
            if (!eligible(rules[i])) continue;
            for (const auto& p : rules[i].premises) {
                std::vector<Condition> rest;
                for (const auto& q : rules[i].sorted_premises())
                    if (q.attribute != p.attribute) rest.push_back(q);
                std::string key = rules[i].conclusion.attribute + "|" + p.attribute;
                groups[{key, rest}].push_back(i);
            }
        }
        for (const auto& [key, members] : groups) {
            if (members.size() < 2) continue;
            std::vector<const Rule*> sibs;
            for (auto i : members) sibs.push_back(&rules[i]);
            std::sort(sibs.begin(), sibs.end(),
                      [](const Rule* a, const Rule* b) { return rule_precedes(*a, *b); });
            const Rule& majority = *sibs.front();
            bool agree = std::all_of(sibs.begin(), sibs.end(), [&](const Rule* r) {
                return r->conclusion == majority.conclusion;
            });
            if (!agree) {
                bool ok = true;
                for (const Rule* r : sibs) {
                    if (r->conclusion == majority.conclusion) continue;
                    std::uint64_t minority = experience(*r);
                    if (minority > opts.minority_max || minority == 0 ||
                        experience(majority) < opts.threshold * minority)
                        ok = false;
                }
                if (!ok) continue;
            }

            const std::string& dropped = key.first.substr(key.first.find('|') + 1);
            Rule merged;
            merged.id = majority.id + "_gen";
            if (out.kb.rule(merged.id) && merged.id != majority.id)
                merged.id = out.kb.fresh_rule_id(majority.id + "_gen");
            for (const auto& p : majority.premises)
                if (p.attribute != dropped) merged.premises.push_back(p);
            merged.conclusion = majority.conclusion;
            merged.origin = RuleOrigin::generalized;
            std::set<std::string> ids;
            std::vector<std::string> id_list;
            for (const Rule* r : sibs) {
                merged.stats.support += r->stats.support;
                merged.stats.firings += r->stats.firings;
                ids.insert(r->id);
                id_list.push_back(r->id);
            }
            out.kb.audit.push_back({stamp.timestamp, stamp.actor, stamp.identity,
                                    AuditAction::rule_generalized, id_list,
                                    {serialize_rule(merged)}});
            for (const auto& id : id_list) {
                if (added.erase(id) == 0) rep.removed.push_back(id);
            }
            added.insert(merged.id);
            detail::erase_ids(rules, ids);
            rules.push_back(std::move(merged));
            changed = true;
            break;
        }
    }
    std::sort(rep.removed.begin(), rep.removed.end());
    rep.added.assign(added.begin(), added.end());
    rep.exceptions = misclassified_cases(out.kb);
    rep.accuracy_after = replay_accuracy(out.kb);
    return out;
}

struct InducedRules {
    InductionResult induction;
    std::vector<std::string> removed;
    std::vector<std::string> added;
};

/// Re-induces the goal rules from the stored cases, replacing every induced
/// or generalized goal rule; discovered and authored rules stay. Firing
/// counts of rules that come back unchanged are kept.
inline InducedRules emit_induced_rules(KnowledgeBase& kb, const AuditStamp& stamp) {
    InducedRules out;
    out.induction = induce_kb(kb);
    auto fresh = tree_to_rules(out.induction.tree, kb.goal_attribute, kb.allow_defaults,
                               &out.induction.diagnostics);

    std::map<std::vector<Condition>, ExperienceStats> previous;
    std::set<std::string> stale;
    for (const auto& r : kb.rules) {
        bool derived = r.origin == RuleOrigin::induced || r.origin == RuleOrigin::generalized;
        if (!derived || r.conclusion.attribute != kb.goal_attribute) continue;
        stale.insert(r.id);
        previous[r.sorted_premises()] = r.stats;
    }
    if (!stale.empty()) {
        out.removed.assign(stale.begin(), stale.end());
        detail::erase_ids(kb.rules, stale);
        kb.audit.push_back({stamp.timestamp, stamp.actor, stamp.identity, AuditAction::rule_removed,
                            out.removed, {}});
    }
    if (fresh.empty()) return out;

    AuditEntry entry{stamp.timestamp, stamp.actor, stamp.identity, AuditAction::rule_added, {}, {}};
    for (auto& r : fresh) {
        if (auto it = previous.find(r.sorted_premises()); it != previous.end())
            r.stats.firings = it->second.firings;
        if (kb.rule(r.id)) r.id = kb.fresh_rule_id(r.id + "_");
        entry.rule_ids.push_back(r.id);
        entry.rule_texts.push_back(serialize_rule(r));
        out.added.push_back(r.id);
        kb.rules.push_back(std::move(r));
    }
    kb.audit.push_back(std::move(entry));
    return out;
}

// Increments a rule's firing count and logs the new stats.
inline ExperienceStats record_firing(KnowledgeBase& kb, std::string_view rule_id, const AuditStamp& stamp) {
    Rule* r = kb.rule(rule_id);
    if (!r) throw NotFoundError("unknown_rule", "no rule '" + std::string(rule_id) + "'");
    ++r->stats.firings;
    kb.audit.push_back({stamp.timestamp, stamp.actor, stamp.identity, AuditAction::stats_updated,
                        {r->id}, {serialize_rule(*r)}});
    return r->stats;
}

// ---------------------------------------------------------------------------
// Discovery

struct DiscoveryProposal {
    std::string session_id;
    std::string goal;
    std::vector<Fact> context;        // session facts when inference gave up
    std::vector<Condition> premises;  // may introduce new attributes
    Fact conclusion;                  // value empty in a fresh template
    std::string expert;
    // Declared alternative values for attributes the proposal introduces.
    std::map<std::string, std::vector<std::string>> alternatives;
};

struct ValidationResult {
    enum class Status { accepted, conflicts };
    Status status = Status::accepted;
    std::vector<int> conflicting_cases;
    std::vector<std::string> subsumed_existing;
    std::vector<std::string> replaced;
    std::string rule_id;  // id of the appended rule when accepted
    bool overridden = false;
};

inline std::string_view to_string(ValidationResult::Status s) {
    return s == ValidationResult::Status::accepted ? "accepted" : "conflicts";
}

struct DiscoveryOptions {
    bool override_conflicts = false;
    bool replace = false;  // drop existing goal rules with identical premises
};

/// Moves an Unknown session to awaiting_discovery and returns a proposal
/// template pre-filled with the session's facts.
inline DiscoveryProposal propose_discovery(Session& s) {
    if (s.status != SessionStatus::unknown)
        throw StateError("not_unknown", "discovery needs a session whose goal is unknown");
    s.status = SessionStatus::awaiting_discovery;
    DiscoveryProposal p;
    p.session_id = s.id;
    p.goal = s.goal;
    for (const auto& f : s.memory.facts()) {
        if (f.attribute == s.goal) continue;
        p.context.push_back(f);
        p.premises.push_back(f);
    }
    p.conclusion = {s.goal, {}};
    return p;
}

inline void abort_discovery(Session& s) {
    if (s.status != SessionStatus::awaiting_discovery)
        throw StateError("not_awaiting_discovery", "no discovery in progress");
    s.status = SessionStatus::unknown;
}

/// Checks a proposal against the schema and the stored cases without
/// changing anything. Throws SchemaError if the proposal is malformed.
inline ValidationResult validate_discovery(const KnowledgeBase& kb, const DiscoveryProposal& p) {
    auto malformed = [](const std::string& msg) { return SchemaError("malformed_proposal", msg); };
    const std::string goal = p.goal.empty() ? kb.goal_attribute : p.goal;
    if (p.conclusion.attribute != goal)
        throw SchemaError("conclusion_not_goal",
                          "conclusion attribute '" + p.conclusion.attribute + "' is not the goal '" + goal + "'");
    const AttributeDef* g = kb.attribute(goal);
    if (!g || !g->allows(p.conclusion.value))
        throw malformed("conclusion value '" + p.conclusion.value + "' not in goal domain");
    if (p.expert.empty()) throw malformed("expert identity is required");
    if (p.premises.empty()) throw malformed("at least one premise is required");
    std::set<std::string> seen;
    for (const auto& c : p.premises) {
        if (c.attribute == goal) throw malformed("premise tests the goal attribute");
        if (!seen.insert(c.attribute).second) throw malformed("attribute '" + c.attribute + "' tested twice");
        if (c.attribute.empty() || c.value.empty() || !detail::is_ident_start(c.attribute[0]))
            throw malformed("premise needs an attribute and a value");
        if (const AttributeDef* a = kb.attribute(c.attribute); a && !a->allows(c.value))
            throw SchemaError("value_out_of_domain",
                              "value '" + c.value + "' not in domain of '" + c.attribute + "'");
        for (const auto& f : p.context)
            if (f.attribute == c.attribute && f.value != c.value)
                throw malformed("premise " + to_string(c) + " contradicts session fact " + to_string(f));
    }

    ValidationResult res;
    Rule candidate;
    candidate.premises = p.premises;
    candidate.conclusion = p.conclusion;
    if (goal == kb.goal_attribute)
        for (const auto& c : kb.cases)
            if (c.label.value != p.conclusion.value && c.matches(p.premises))
                res.conflicting_cases.push_back(c.id);
    for (const auto& r : kb.rules)
        if (r.conclusion.attribute == goal && detail::premises_subset(candidate, r))
            res.subsumed_existing.push_back(r.id);
    res.status = res.conflicting_cases.empty() ? ValidationResult::Status::accepted
                                               : ValidationResult::Status::conflicts;
    return res;
}

/// Validates and, when accepted (or overridden), appends the proposal as a
/// discovered rule with one rule_added audit entry. On conflicts without
/// override the KB is left untouched.
inline ValidationResult apply_discovery(KnowledgeBase& kb, const DiscoveryProposal& p,
                                        const DiscoveryOptions& opts, const AuditStamp& stamp) {
    ValidationResult res = validate_discovery(kb, p);
    if (res.status == ValidationResult::Status::conflicts) {
        if (!opts.override_conflicts) return res;
        res.status = ValidationResult::Status::accepted;
        res.overridden = true;
    }

    for (const auto& c : p.premises) {
        if (kb.attribute(c.attribute)) continue;
        AttributeDef def{c.attribute, {c.value}, true, {}};
        if (auto it = p.alternatives.find(c.attribute); it != p.alternatives.end())
            for (const auto& v : it->second)
                if (!def.allows(v)) def.domain.push_back(v);
        kb.schema.push_back(std::move(def));
    }

    const std::string goal = p.conclusion.attribute;
    if (opts.replace) {
        Rule probe;
        probe.premises = p.premises;
        std::set<std::string> ids;
        for (const auto& r : kb.rules)
            if (r.conclusion.attribute == goal && r.sorted_premises() == probe.sorted_premises())
                ids.insert(r.id);
        if (!ids.empty()) {
            res.replaced.assign(ids.begin(), ids.end());
            detail::erase_ids(kb.rules, ids);
            kb.audit.push_back({stamp.timestamp, Actor::expert, stamp.identity, AuditAction::rule_removed,
                                res.replaced, {}});
        }
    }

    Rule rule;
    rule.id = kb.fresh_rule_id("disc_");
    rule.premises = p.premises;
    rule.conclusion = p.conclusion;
    rule.origin = RuleOrigin::discovered;
    kb.audit.push_back({stamp.timestamp, Actor::expert, stamp.identity.empty() ? p.expert : stamp.identity,
                        AuditAction::rule_added, {rule.id}, {serialize_rule(rule)}});
    res.rule_id = rule.id;
    kb.rules.push_back(std::move(rule));
    return res;
}

/// Puts the session on a new KB snapshot after an accepted discovery,
/// asserting the proposal's premise facts the session lacked as given, and
/// re-runs inference. The resolving conclusion is not counted as a firing.
inline void resume_after_discovery(Session& s, std::shared_ptr<const KnowledgeBase> kb,
                                   const DiscoveryProposal& p) {
    s.kb = std::move(kb);
    for (const auto& c : p.premises) s.memory.assert_fact(c, Provenance::given);
    s.status = SessionStatus::active;
    advance(s);
}

// Checks a proposal against the session it came from and fills in the
// session's goal and facts as its context.
inline DiscoveryProposal bind_proposal(const Session& s, const DiscoveryProposal& p) {
    if (s.status != SessionStatus::unknown && s.status != SessionStatus::awaiting_discovery)
        throw StateError("not_unknown", "discovery needs a session whose goal is unknown");
    if (p.conclusion.attribute != s.goal)
        throw SchemaError("conclusion_not_goal", "conclusion must be the session goal '" + s.goal + "'");
    DiscoveryProposal checked = p;
    checked.session_id = s.id;
    checked.goal = s.goal;
    checked.context = s.memory.facts();
    return checked;
}

/// Library-level discovery commit: validates `p` against `*kb`, and on
/// acceptance swaps `kb` for the extended snapshot and resumes the session.
inline ValidationResult commit_discovery(std::shared_ptr<const KnowledgeBase>& kb, Session& s,
                                         const DiscoveryProposal& p, const DiscoveryOptions& opts,
                                         const AuditStamp& stamp) {
    DiscoveryProposal checked = bind_proposal(s, p);
    auto next = std::make_shared<KnowledgeBase>(*kb);
    ValidationResult res = apply_discovery(*next, checked, opts, stamp);
    if (res.status != ValidationResult::Status::accepted) {
        s.status = SessionStatus::awaiting_discovery;
        return res;
    }
    kb = next;
    resume_after_discovery(s, kb, checked);
    return res;
}

} // namespace hepx
