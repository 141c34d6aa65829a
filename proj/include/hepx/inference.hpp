#pragma once
// Forward and backward chaining over a KnowledgeBase.
//
// Both directions share one precedence order (resolve_conflict) and the same
// value semantics: an attribute takes the conclusion of the highest-ranked
// rule concluding it whose premises all hold. Working memory holds at most
// one value per attribute and never retracts.

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "error.hpp"
#include "kb_model.hpp"
#include "rule_lang.hpp"

namespace hepx {

// ---------------------------------------------------------------------------
// Conflict resolution

// Strict precedence: higher experience, then more premises, then smaller id.
inline bool rule_precedes(const Rule& a, const Rule& b) {
    if (experience(a) != experience(b)) return experience(a) > experience(b);
    if (a.premises.size() != b.premises.size()) return a.premises.size() > b.premises.size();
    return a.id < b.id;
}

using ConflictSet = std::vector<const Rule*>;

inline const Rule& resolve_conflict(const ConflictSet& conflict) {
    if (conflict.empty()) throw StateError("empty_conflict_set", "conflict set is empty");
    const Rule* best = conflict.front();
    for (const Rule* r : conflict)
        if (rule_precedes(*r, *best)) best = r;
    return *best;
}

// Rules concluding `attribute`, in precedence order.
inline std::vector<const Rule*> candidates_for(const KnowledgeBase& kb, std::string_view attribute) {
    std::vector<const Rule*> out;
    for (const auto& r : kb.rules)
        if (r.conclusion.attribute == attribute) out.push_back(&r);
    std::sort(out.begin(), out.end(), [](const Rule* a, const Rule* b) { return rule_precedes(*a, *b); });
    return out;
}

// ---------------------------------------------------------------------------
// Working memory and derivations

enum class Provenance { given, asked, derived };

inline std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::given: return "given";
    case Provenance::asked: return "asked";
    case Provenance::derived: return "derived";
    }
    return "given";
}

struct Derivation {
    struct Antecedent;

    Fact conclusion;
    std::string rule;  // empty when the fact was given or asked
    std::vector<Antecedent> antecedents;

    // Number of rule levels; 0 for a fact taken straight from memory.
    std::size_t depth() const;
    // Every rule id in the tree, pre-order.
    std::vector<std::string> rules() const;
};

struct Derivation::Antecedent {
    Condition condition;
    Provenance source = Provenance::given;
    std::vector<Derivation> proof;  // exactly one element when derived
};

inline std::size_t Derivation::depth() const {
    if (rule.empty()) return 0;
    std::size_t d = 0;
    for (const auto& a : antecedents)
        for (const auto& p : a.proof) d = std::max(d, p.depth());
    return d + 1;
}

inline std::vector<std::string> Derivation::rules() const {
    std::vector<std::string> out;
    if (!rule.empty()) out.push_back(rule);
    for (const auto& a : antecedents)
        for (const auto& p : a.proof) {
            auto sub = p.rules();
            out.insert(out.end(), sub.begin(), sub.end());
        }
    return out;
}

struct MemoryEntry {
    std::string value;
    Provenance source = Provenance::given;
    std::string rule;  // set when derived

    bool operator==(const MemoryEntry&) const = default;
};

class WorkingMemory {
public:
    // Returns false, leaving memory untouched, if the attribute already has
    // a value.
    bool assert_fact(const Fact& f, Provenance source, std::string rule = {}) {
        return entries_.emplace(f.attribute, MemoryEntry{f.value, source, std::move(rule)}).second;
    }

    const MemoryEntry* find(std::string_view attribute) const {
        auto it = entries_.find(std::string(attribute));
        return it == entries_.end() ? nullptr : &it->second;
    }

    std::optional<std::string> value(std::string_view attribute) const {
        if (const auto* e = find(attribute)) return e->value;
        return std::nullopt;
    }

    bool holds(const Condition& c) const {
        const auto* e = find(c.attribute);
        return e && e->value == c.value;
    }

    bool contradicts(const Condition& c) const {
        const auto* e = find(c.attribute);
        return e && e->value != c.value;
    }

    std::vector<Fact> facts() const {
        std::vector<Fact> out;
        for (const auto& [a, e] : entries_) out.push_back({a, e.value});
        return out;
    }

    const std::map<std::string, MemoryEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    // Rebuilds the derivation of a remembered fact from recorded provenance.
    Derivation derivation_of(std::string_view attribute, const KnowledgeBase& kb) const {
        const auto* e = find(attribute);
        if (!e) throw NotFoundError("no_fact", "no fact for '" + std::string(attribute) + "'");
        Derivation d{{std::string(attribute), e->value}, {}, {}};
        if (e->source != Provenance::derived) return d;
        d.rule = e->rule;
        const Rule* r = kb.rule(e->rule);
        if (!r) return d;
        for (const auto& p : r->premises) {
            Derivation::Antecedent a{p, Provenance::given, {}};
            if (const auto* pe = find(p.attribute)) {
                a.source = pe->source;
                if (pe->source == Provenance::derived) a.proof.push_back(derivation_of(p.attribute, kb));
            }
            d.antecedents.push_back(std::move(a));
        }
        return d;
    }

    bool operator==(const WorkingMemory&) const = default;

private:
    std::map<std::string, MemoryEntry> entries_;
};

namespace detail {

inline void check_initial_facts(const KnowledgeBase& kb, const std::vector<Fact>& facts) {
    std::map<std::string, std::string> seen;
    for (const auto& f : facts) {
        const AttributeDef* a = kb.attribute(f.attribute);
        if (!a) throw SchemaError("unknown_attribute", "unknown attribute '" + f.attribute + "'");
        if (!a->allows(f.value))
            throw SchemaError("value_out_of_domain",
                              "value '" + f.value + "' not in domain of '" + f.attribute + "'");
        auto [it, fresh] = seen.emplace(f.attribute, f.value);
        if (!fresh && it->second != f.value)
            throw SchemaError("conflicting_facts", "two values given for '" + f.attribute + "'");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Forward chaining

struct ForwardResult {
    WorkingMemory memory;
    std::vector<Derivation> derivations;  // firing order
    std::vector<std::string> fired;
};

/// Match-resolve-act to fixpoint from `initial_facts`.
///
/// A rule is in the conflict set when its premises hold, its conclusion
/// attribute is unset, and every higher-ranked rule for that attribute is
/// refuted: one of its premises is contradicted, or tests an attribute that
/// can no longer receive a value. This keeps the result independent of
/// firing order and equal to what goal-driven chaining derives.
inline ForwardResult forward_chain(const KnowledgeBase& kb, const std::vector<Fact>& initial_facts) {
    detail::check_initial_facts(kb, initial_facts);
    ForwardResult out;
    for (const auto& f : initial_facts) out.memory.assert_fact(f, Provenance::given);

    std::map<std::string, std::vector<const Rule*>> by_attr;
    std::set<std::string> mentioned;
    for (const auto& r : kb.rules) {
        mentioned.insert(r.conclusion.attribute);
        for (const auto& p : r.premises) mentioned.insert(p.attribute);
    }
    for (const auto& a : mentioned) by_attr[a] = candidates_for(kb, a);

    for (;;) {
        const WorkingMemory& mem = out.memory;
        std::set<std::string> dead;
        auto refuted = [&](const Rule& r) {
            return std::any_of(r.premises.begin(), r.premises.end(), [&](const Condition& p) {
                return mem.contradicts(p) || dead.count(p.attribute) > 0;
            });
        };
        for (bool changed = true; changed;) {
            changed = false;
            for (const auto& [attr, rules] : by_attr) {
                if (mem.find(attr) || dead.count(attr)) continue;
                if (std::all_of(rules.begin(), rules.end(), [&](const Rule* r) { return refuted(*r); })) {
                    dead.insert(attr);
                    changed = true;
                }
            }
        }

        ConflictSet conflict;
        for (const auto& [attr, rules] : by_attr) {
            if (mem.find(attr)) continue;
            for (const Rule* r : rules) {
                if (refuted(*r)) continue;
                bool ready = std::all_of(r->premises.begin(), r->premises.end(),
                                         [&](const Condition& p) { return mem.holds(p); });
                if (ready) conflict.push_back(r);
                break;  // lower-ranked rules wait until this one is refuted
            }
        }
        if (conflict.empty()) break;

        const Rule& winner = resolve_conflict(conflict);
        out.memory.assert_fact(winner.conclusion, Provenance::derived, winner.id);
        out.fired.push_back(winner.id);
        out.derivations.push_back(out.memory.derivation_of(winner.conclusion.attribute, kb));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward chaining

struct Proved {
    Fact fact;
    Derivation derivation;
};

struct NextQuestion {
    std::string attribute;
    std::string rule;                // rule whose premise needs the answer
    std::vector<std::string> chain;  // rule ids from the goal down to `rule`
};

struct Unknown {
    std::vector<std::vector<Condition>> missing;  // minimal unsatisfied premise sets
};

using Outcome = std::variant<Proved, NextQuestion, Unknown>;

namespace detail {

class BackwardSolver {
public:
    BackwardSolver(const KnowledgeBase& kb, const WorkingMemory& memory,
                   const std::set<std::string>& unanswerable)
        : kb_(kb), memory_(memory), unanswerable_(unanswerable) {}

    Outcome run(std::string_view goal) {
        const std::string g(goal);
        if (memory_.find(g)) return Proved{{g, *memory_.value(g)}, memory_.derivation_of(g, kb_)};
        Eval e = solve(g);
        switch (e.kind) {
        case Eval::proved: return Proved{e.derivation.conclusion, std::move(e.derivation)};
        case Eval::asking: return std::move(e.question);
        case Eval::none: break;
        }
        const AttributeDef* a = kb_.attribute(g);
        if (a && a->askable && !unanswerable_.count(g)) return NextQuestion{g, {}, {}};
        return Unknown{minimal(std::move(e.missing))};
    }

private:
    struct Eval {
        enum Kind { proved, asking, none } kind = none;
        Derivation derivation;
        NextQuestion question;
        std::vector<std::vector<Condition>> missing;
    };

    bool satisfied(const Condition& c) const {
        if (memory_.holds(c)) return true;
        auto it = memo_.find(c.attribute);
        return it != memo_.end() && it->second.kind == Eval::proved &&
               it->second.derivation.conclusion.value == c.value;
    }

    bool refuted_now(const Condition& c) const {
        if (memory_.contradicts(c)) return true;
        auto it = memo_.find(c.attribute);
        if (it == memo_.end()) return false;
        if (it->second.kind == Eval::proved) return it->second.derivation.conclusion.value != c.value;
        return false;
    }

    Eval solve(const std::string& attr) {
        if (auto it = memo_.find(attr); it != memo_.end()) return it->second;
        for (const auto& [a, depth] : attr_stack_) {
            if (a != attr) continue;
            std::vector<std::string> cycle(rule_stack_.begin() + static_cast<long>(depth), rule_stack_.end());
            std::string msg = "cyclic rule dependency on '" + attr + "' through";
            for (const auto& id : cycle) msg += " " + id;
            throw CycleError(msg, cycle);
        }
        attr_stack_.emplace_back(attr, rule_stack_.size());

        Eval result;
        for (const Rule* r : candidates_for(kb_, attr)) {
            bool dead = std::any_of(r->premises.begin(), r->premises.end(),
                                    [&](const Condition& p) { return refuted_now(p); });
            if (dead) {
                result.missing.push_back(unsatisfied(*r));
                continue;
            }
            rule_stack_.push_back(r->id);
            Derivation d{r->conclusion, r->id, {}};
            bool ok = true;
            for (const auto& p : r->premises) {
                Derivation::Antecedent ant{p, Provenance::given, {}};
                if (const auto* e = memory_.find(p.attribute)) {
                    ok = e->value == p.value;
                    ant.source = e->source;
                    if (ok && e->source == Provenance::derived)
                        ant.proof.push_back(memory_.derivation_of(p.attribute, kb_));
                } else {
                    Eval sub;
                    if (kb_.concludes(p.attribute)) sub = solve(p.attribute);
                    if (sub.kind == Eval::asking) {
                        rule_stack_.pop_back();
                        attr_stack_.pop_back();
                        return sub;
                    }
                    if (sub.kind == Eval::proved) {
                        ok = sub.derivation.conclusion.value == p.value;
                        ant.source = Provenance::derived;
                        ant.proof.push_back(std::move(sub.derivation));
                    } else {
                        const AttributeDef* a = kb_.attribute(p.attribute);
                        if (a && a->askable && !unanswerable_.count(p.attribute)) {
                            Eval q;
                            q.kind = Eval::asking;
                            q.question = {p.attribute, r->id, rule_stack_};
                            rule_stack_.pop_back();
                            attr_stack_.pop_back();
                            return q;
                        }
                        ok = false;
                    }
                }
                if (!ok) break;
                d.antecedents.push_back(std::move(ant));
            }
            rule_stack_.pop_back();
            if (ok) {
                result.kind = Eval::proved;
                result.derivation = std::move(d);
                result.missing.clear();
                break;
            }
            result.missing.push_back(unsatisfied(*r));
        }
        attr_stack_.pop_back();
        memo_[attr] = result;
        return result;
    }

    std::vector<Condition> unsatisfied(const Rule& r) const {
        std::vector<Condition> out;
        for (const auto& p : r.premises)
            if (!satisfied(p)) out.push_back(p);
        std::sort(out.begin(), out.end());
        return out;
    }

    static std::vector<std::vector<Condition>> minimal(std::vector<std::vector<Condition>> sets) {
        std::sort(sets.begin(), sets.end());
        sets.erase(std::unique(sets.begin(), sets.end()), sets.end());
        std::vector<std::vector<Condition>> out;
        for (const auto& s : sets) {
            bool has_subset = std::any_of(sets.begin(), sets.end(), [&](const auto& t) {
                return t.size() < s.size() && std::includes(s.begin(), s.end(), t.begin(), t.end());
            });
            if (!has_subset) out.push_back(s);
        }
        return out;
    }

    const KnowledgeBase& kb_;
    const WorkingMemory& memory_;
    const std::set<std::string>& unanswerable_;
    std::map<std::string, Eval> memo_;
    std::vector<std::pair<std::string, std::size_t>> attr_stack_;
    std::vector<std::string> rule_stack_;
};

} // namespace detail

/// Goal-driven evaluation of `goal` against `memory`.
///
/// Candidate rules are tried in precedence order and premises in written
/// order. Rules already refuted by memory are skipped without asking. The
/// first askable attribute that is needed and not yet answered comes back as
/// NextQuestion. Attributes in `unanswerable` (answered `unknown`) fail their
/// premises. Throws CycleError on a cyclic rule dependency.
inline Outcome backward_chain(const KnowledgeBase& kb, const WorkingMemory& memory,
                              const std::set<std::string>& unanswerable, std::string_view goal) {
    return detail::BackwardSolver(kb, memory, unanswerable).run(goal);
}

// ---------------------------------------------------------------------------
// Consultation sessions

enum class SessionStatus { active, concluded, unknown, awaiting_discovery };

inline std::string_view to_string(SessionStatus s) {
    switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::concluded: return "concluded";
    case SessionStatus::unknown: return "unknown";
    case SessionStatus::awaiting_discovery: return "awaiting_discovery";
    }
    return "active";
}

struct TraceEvent {
    enum class Kind { question, answer, fired, concluded, unknown };
    Kind kind;
    std::string attribute;
    std::string value;
    std::string rule;

    bool operator==(const TraceEvent&) const = default;
};

inline std::string_view to_string(TraceEvent::Kind k) {
    switch (k) {
    case TraceEvent::Kind::question: return "question";
    case TraceEvent::Kind::answer: return "answer";
    case TraceEvent::Kind::fired: return "fired";
    case TraceEvent::Kind::concluded: return "concluded";
    case TraceEvent::Kind::unknown: return "unknown";
    }
    return "question";
}

inline constexpr std::string_view kUnknownAnswer = "unknown";

struct Session {
    std::string id;
    std::shared_ptr<const KnowledgeBase> kb;
    std::string goal;
    WorkingMemory memory;
    std::set<std::string> unanswerable;
    std::optional<NextQuestion> pending;
    SessionStatus status = SessionStatus::active;
    std::vector<TraceEvent> trace;
    std::optional<Derivation> result;             // set when concluded
    std::vector<std::vector<Condition>> missing;  // set when unknown
};

/// Re-evaluates the goal and moves the session to its next state. Returns
/// the ids of rules that fired to reach a conclusion (empty otherwise).
inline std::vector<std::string> advance(Session& s) {
    Outcome outcome = backward_chain(*s.kb, s.memory, s.unanswerable, s.goal);
    s.pending.reset();
    s.missing.clear();
    if (auto* p = std::get_if<Proved>(&outcome)) {
        std::vector<std::string> fired;
        auto record = [&](auto&& self, const Derivation& d) -> void {
            for (const auto& a : d.antecedents)
                for (const auto& sub : a.proof) self(self, sub);
            if (d.rule.empty()) return;
            if (s.memory.assert_fact(d.conclusion, Provenance::derived, d.rule)) {
                fired.push_back(d.rule);
                s.trace.push_back({TraceEvent::Kind::fired, d.conclusion.attribute,
                                   d.conclusion.value, d.rule});
            }
        };
        record(record, p->derivation);
        s.status = SessionStatus::concluded;
        s.result = s.memory.derivation_of(s.goal, *s.kb);
        s.trace.push_back({TraceEvent::Kind::concluded, p->fact.attribute, p->fact.value,
                           p->derivation.rule});
        return fired;
    }
    if (auto* q = std::get_if<NextQuestion>(&outcome)) {
        s.status = SessionStatus::active;
        s.trace.push_back({TraceEvent::Kind::question, q->attribute, {}, q->rule});
        s.pending = std::move(*q);
        return {};
    }
    s.status = SessionStatus::unknown;
    s.missing = std::get<Unknown>(outcome).missing;
    s.trace.push_back({TraceEvent::Kind::unknown, s.goal, {}, {}});
    return {};
}

/// Starts a consultation for `goal` with optional given facts. Fired rule
/// ids (if the goal is provable immediately) are appended to `fired`.
inline Session start_session(std::shared_ptr<const KnowledgeBase> kb, std::string goal,
                             const std::vector<Fact>& given = {}, std::string id = {},
                             std::vector<std::string>* fired = nullptr) {
    if (!kb) throw StateError("no_kb", "session needs a knowledge base");
    if (!kb->attribute(goal)) throw SchemaError("unknown_goal", "unknown goal attribute '" + goal + "'");
    detail::check_initial_facts(*kb, given);
    Session s;
    s.id = std::move(id);
    s.kb = std::move(kb);
    s.goal = std::move(goal);
    for (const auto& f : given) s.memory.assert_fact(f, Provenance::given);
    auto f = advance(s);
    if (fired) fired->insert(fired->end(), f.begin(), f.end());
    return s;
}

/// Records an answer to the pending question and resumes inference.
/// `unknown` marks the attribute unanswerable. Returns newly fired rules.
inline std::vector<std::string> answer(Session& s, std::string_view attribute, std::string_view value) {
    if (s.status != SessionStatus::active || !s.pending)
        throw StateError("no_pending_question", "session has no pending question");
    if (s.pending->attribute != attribute)
        throw StateError("not_pending", "pending question is '" + s.pending->attribute + "', not '" +
                                            std::string(attribute) + "'");
    const AttributeDef* a = s.kb->attribute(attribute);
    if (value == kUnknownAnswer) {
        s.unanswerable.insert(std::string(attribute));
    } else {
        if (!a || !a->allows(value))
            throw SchemaError("value_out_of_domain", "value '" + std::string(value) +
                                                         "' not in domain of '" + std::string(attribute) + "'");
        s.memory.assert_fact({std::string(attribute), std::string(value)}, Provenance::asked);
    }
    s.trace.push_back({TraceEvent::Kind::answer, std::string(attribute), std::string(value), {}});
    return advance(s);
}

/// Goal-to-question chain of rules the pending question serves.
inline std::string explain_why(const Session& s) {
    if (s.status != SessionStatus::active || !s.pending)
        throw StateError("no_pending_question", "why needs a pending question");
    const NextQuestion& q = *s.pending;
    std::string out = "asking " + q.attribute + " for goal " + s.goal + "\n";
    std::size_t depth = 1;
    for (const auto& id : q.chain) {
        const Rule* r = s.kb->rule(id);
        out += std::string(depth * 2, ' ') + (r ? serialize_rule(*r) : "RULE " + id) + "\n";
        ++depth;
    }
    if (q.chain.empty()) out += "  " + q.attribute + " is the goal itself\n";
    return out;
}

inline std::string render_derivation(const Derivation& d) {
    std::string out;
    auto walk = [&](auto&& self, const Derivation& node, std::size_t depth) -> void {
        out += std::string(depth * 2, ' ') + to_string(node.conclusion);
        out += node.rule.empty() ? " (given)\n" : " [rule " + node.rule + "]\n";
        for (const auto& a : node.antecedents) {
            if (!a.proof.empty()) {
                self(self, a.proof.front(), depth + 1);
            } else {
                out += std::string((depth + 1) * 2, ' ') + to_string(a.condition) + " (" +
                       std::string(to_string(a.source)) + ")\n";
            }
        }
    };
    walk(walk, d, 0);
    return out;
}

/// Indented derivation of the concluded goal.
inline std::string explain_how(const Session& s) {
    if (s.status != SessionStatus::concluded || !s.result)
        throw StateError("not_concluded", "how needs a concluded session");
    return render_derivation(*s.result);
}

} // namespace hepx
