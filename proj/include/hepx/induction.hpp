#pragma once
// Top-down decision-tree induction over the case base.
//
// Splits maximise binary-entropy information gain; ties go to the
// lexicographically smallest attribute name, so identical case multisets
// always yield identical trees. Leaves carry the supporting case ids, and
// the tree compiles into one rule per non-empty leaf.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "kb_model.hpp"

namespace hepx {

struct GainTable {
    double entropy = 0.0;  // of the node's label distribution, base 2
    std::vector<std::pair<std::string, double>> gains;  // candidate order

    double gain_of(std::string_view attribute) const {
        for (const auto& [a, g] : gains)
            if (a == attribute) return g;
        return 0.0;
    }
};

struct DecisionTree {
    struct Branch;

    // Split node when `attribute` is non-empty, leaf otherwise.
    std::string attribute;
    std::vector<Branch> branches;  // declared domain order
    GainTable gains;

    std::string label;
    std::size_t count = 0;  // leaf support
    std::vector<int> case_ids;

    bool is_leaf() const { return attribute.empty(); }

    // Sum of leaf counts below this node.
    std::size_t total() const;

    static DecisionTree leaf(std::string label, std::vector<int> ids) {
        DecisionTree t;
        t.label = std::move(label);
        t.count = ids.size();
        t.case_ids = std::move(ids);
        return t;
    }
};

struct DecisionTree::Branch {
    std::string value;
    DecisionTree subtree;
};

inline std::size_t DecisionTree::total() const {
    if (is_leaf()) return count;
    std::size_t n = 0;
    for (const auto& b : branches) n += b.subtree.total();
    return n;
}

struct InductionResult {
    DecisionTree tree;
    std::vector<Diagnostic> diagnostics;
};

namespace detail {

inline double entropy(const std::map<std::string, std::size_t>& counts, std::size_t total) {
    double h = 0.0;
    for (const auto& [label, n] : counts) {
        if (n == 0) continue;
        double p = static_cast<double>(n) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h;
}

inline std::map<std::string, std::size_t> label_counts(const std::vector<const CaseRecord*>& cases) {
    std::map<std::string, std::size_t> counts;
    for (const auto* c : cases) ++counts[c->label.value];
    return counts;
}

// Majority label; ties resolved by the goal domain order when known, else
// lexicographically. `tied` reports whether a tie had to be broken.
inline std::string majority(const std::map<std::string, std::size_t>& counts,
                            const std::vector<std::string>& label_order, bool& tied) {
    std::size_t best = 0;
    for (const auto& [l, n] : counts) best = std::max(best, n);
    std::vector<std::string> top;
    for (const auto& [l, n] : counts)
        if (n == best) top.push_back(l);
    tied = top.size() > 1;
    for (const auto& l : label_order)
        if (std::find(top.begin(), top.end(), l) != top.end()) return l;
    return top.empty() ? std::string{} : top.front();
}

struct Inducer {
    const std::vector<std::string>& label_order;
    std::vector<Diagnostic>& diagnostics;

    DecisionTree build(const std::vector<const CaseRecord*>& cases,
                       std::vector<const AttributeDef*> candidates, const std::string& path) {
        auto counts = label_counts(cases);
        std::vector<int> ids;
        for (const auto* c : cases) ids.push_back(c->id);

        if (counts.size() == 1) return DecisionTree::leaf(counts.begin()->first, std::move(ids));

        if (candidates.empty()) {
            bool tied = false;
            std::string label = majority(counts, label_order, tied);
            std::string ids_text;
            for (int id : ids) ids_text += (ids_text.empty() ? "" : ",") + std::to_string(id);
            diagnostics.push_back({tied ? Severity::error : Severity::warning,
                                   tied ? "majority_tie" : "contradictory_cases",
                                   "attributes exhausted with mixed labels at [" + path +
                                       "] (cases " + ids_text + "); leaf labelled " + label,
                                   {}, ids});
            DecisionTree t = DecisionTree::leaf(label, std::move(ids));
            return t;
        }

        GainTable table = compute_gains(cases, candidates);
        const AttributeDef* best = nullptr;
        double best_gain = -1.0;
        for (const auto* a : candidates) {
            double g = table.gain_of(a->name);
            // Gains computed from the same counts compare exactly; the epsilon
            // only absorbs summation-order noise.
            if (!best || g > best_gain + 1e-12 ||
                (std::abs(g - best_gain) <= 1e-12 && a->name < best->name)) {
                best = a;
                best_gain = g;
            }
        }

        DecisionTree node;
        node.attribute = best->name;
        node.gains = std::move(table);

        std::vector<const AttributeDef*> rest;
        for (const auto* a : candidates)
            if (a != best) rest.push_back(a);

        bool tied = false;
        std::string parent_majority = majority(counts, label_order, tied);
        for (const auto& value : best->domain) {
            std::vector<const CaseRecord*> subset;
            for (const auto* c : cases) {
                auto v = c->value_of(best->name);
                if (v && *v == value) subset.push_back(c);
            }
            DecisionTree child;
            if (subset.empty()) {
                child.label = parent_majority;  // count 0, never reported
            } else {
                std::string sub_path = path.empty() ? "" : path + ", ";
                child = build(subset, rest, sub_path + best->name + "=" + value);
            }
            node.branches.push_back({value, std::move(child)});
        }
        return node;
    }

    static GainTable compute_gains(const std::vector<const CaseRecord*>& cases,
                                   const std::vector<const AttributeDef*>& candidates) {
        GainTable table;
        const std::size_t n = cases.size();
        table.entropy = entropy(label_counts(cases), n);
        for (const auto* a : candidates) {
            double remainder = 0.0;
            std::map<std::string, std::map<std::string, std::size_t>> by_value;
            std::map<std::string, std::size_t> sizes;
            for (const auto* c : cases) {
                auto v = c->value_of(a->name);
                if (!v) continue;
                ++by_value[*v][c->label.value];
                ++sizes[*v];
            }
            for (const auto& [v, counts] : by_value)
                remainder += static_cast<double>(sizes[v]) / static_cast<double>(n) *
                             entropy(counts, sizes[v]);
            table.gains.emplace_back(a->name, table.entropy - remainder);
        }
        return table;
    }
};

} // namespace detail

// Information gain of every candidate attribute over `cases`.
inline GainTable compute_gains(const std::vector<CaseRecord>& cases,
                               const std::vector<AttributeDef>& candidates) {
    std::vector<const CaseRecord*> cs;
    for (const auto& c : cases) cs.push_back(&c);
    std::vector<const AttributeDef*> as;
    for (const auto& a : candidates) as.push_back(&a);
    return detail::Inducer::compute_gains(cs, as);
}

/// Induces a tree from `cases` using the given candidate attributes.
///
/// `label_order` fixes how majority ties are broken (normally the goal
/// attribute's domain). A tie among mixed labels with no attributes left is
/// reported as an error diagnostic; induction still completes.
inline InductionResult induce_tree(const std::vector<CaseRecord>& cases,
                                   const std::vector<AttributeDef>& candidates,
                                   const std::vector<std::string>& label_order = {}) {
    if (cases.empty()) throw SchemaError("no_cases", "induction needs at least one case");
    InductionResult result;
    std::vector<const CaseRecord*> cs;
    for (const auto& c : cases) cs.push_back(&c);
    std::vector<const AttributeDef*> as;
    for (const auto& a : candidates) as.push_back(&a);
    detail::Inducer inducer{label_order, result.diagnostics};
    result.tree = inducer.build(cs, as, "");
    return result;
}

// Candidates are the schema attributes observed in every case, minus the
// goal and anything in `excluded`.
inline InductionResult induce_kb(const KnowledgeBase& kb,
                                 const std::vector<std::string>& excluded = {}) {
    std::vector<AttributeDef> candidates;
    for (const auto& a : kb.schema) {
        bool everywhere = std::all_of(kb.cases.begin(), kb.cases.end(), [&](const CaseRecord& c) {
            auto v = c.value_of(a.name);
            return v && a.allows(*v);
        });
        if (a.name == kb.goal_attribute || !everywhere) continue;
        if (std::find(excluded.begin(), excluded.end(), a.name) != excluded.end()) continue;
        candidates.push_back(a);
    }
    std::vector<std::string> label_order;
    if (const auto* goal = kb.attribute(kb.goal_attribute)) label_order = goal->domain;
    return induce_tree(kb.cases, candidates, label_order);
}

// Report order of a split's branches: ascending subtree support, ties in
// declared domain order. Empty branches are dropped.
inline std::vector<const DecisionTree::Branch*> report_order(const DecisionTree& node) {
    std::vector<const DecisionTree::Branch*> out;
    for (const auto& b : node.branches)
        if (b.subtree.total() > 0) out.push_back(&b);
    std::stable_sort(out.begin(), out.end(), [](const auto* a, const auto* b) {
        return a->subtree.total() < b->subtree.total();
    });
    return out;
}

/// One rule per leaf with support > 0, in report order. Premises follow the
/// root-to-leaf path; ids are `ind_<n>` numbered in that order.
///
/// A single-leaf tree yields a zero-premise default rule only when
/// `allow_defaults` is set; otherwise no rules and a diagnostic.
inline std::vector<Rule> tree_to_rules(const DecisionTree& tree, const std::string& goal_attribute,
                                       bool allow_defaults = false,
                                       std::vector<Diagnostic>* diagnostics = nullptr) {
    std::vector<Rule> rules;
    if (tree.is_leaf()) {
        if (tree.count == 0) return rules;
        if (!allow_defaults) {
            if (diagnostics)
                diagnostics->push_back({Severity::warning, "default_rule",
                                        "tree is a single leaf; default rules are disabled", {}, {}});
            return rules;
        }
        Rule r;
        r.id = "ind_1";
        r.conclusion = {goal_attribute, tree.label};
        r.stats.support = tree.count;
        r.origin = RuleOrigin::induced;
        rules.push_back(std::move(r));
        return rules;
    }

    std::vector<Condition> path;
    auto walk = [&](auto&& self, const DecisionTree& node) -> void {
        if (node.is_leaf()) {
            if (node.count == 0) return;
            Rule r;
            r.id = "ind_" + std::to_string(rules.size() + 1);
            r.premises = path;
            r.conclusion = {goal_attribute, node.label};
            r.stats.support = node.count;
            r.origin = RuleOrigin::induced;
            rules.push_back(std::move(r));
            return;
        }
        for (const auto* b : report_order(node)) {
            path.push_back({node.attribute, b->value});
            self(self, b->subtree);
            path.pop_back();
        }
    };
    walk(walk, tree);
    return rules;
}

// Walks the tree; a missing observation or an unseen value gives nullopt.
template <typename Lookup>
std::optional<std::string> classify_with(const DecisionTree& tree, Lookup&& lookup) {
    const DecisionTree* node = &tree;
    while (!node->is_leaf()) {
        std::optional<std::string> v = lookup(node->attribute);
        if (!v) return std::nullopt;
        const DecisionTree* next = nullptr;
        for (const auto& b : node->branches)
            if (b.value == *v) next = &b.subtree;
        if (!next) return std::nullopt;
        node = next;
    }
    return node->label;
}

inline std::optional<std::string> classify(const DecisionTree& tree,
                                           const std::vector<Fact>& observations) {
    return classify_with(tree, [&](const std::string& attr) -> std::optional<std::string> {
        for (const auto& o : observations)
            if (o.attribute == attr) return o.value;
        return std::nullopt;
    });
}

} // namespace hepx
