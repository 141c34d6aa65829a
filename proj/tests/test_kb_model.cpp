#include <gtest/gtest.h>

#include "hepx/corpus.hpp"
#include "hepx/kb_model.hpp"
#include "hepx/rule_lang.hpp"

using namespace hepx;

namespace {

std::vector<Diagnostic> with_code(const std::vector<Diagnostic>& ds, const std::string& code) {
    std::vector<Diagnostic> out;
    for (const auto& d : ds)
        if (d.code == code) out.push_back(d);
    return out;
}

} // namespace

TEST(Experience, SumsSupportAndFirings) {
    Rule r;
    r.stats = {9, 0};
    EXPECT_EQ(experience(r), 9u);
    r.stats = {0, 0};
    EXPECT_EQ(experience(r), 0u);
    r.stats = {1, 3};
    EXPECT_EQ(experience(r), 4u);
}

TEST(Corpus, CountsMatchHandTally) {
    auto kb = corpus::build_bundled_kb();
    ASSERT_EQ(kb.cases.size(), 32u);
    int pos = 0, neg = 0, hbsag_yes = 0;
    for (const auto& c : kb.cases) {
        (c.label.value == "positive" ? pos : neg)++;
        EXPECT_EQ(c.observations.size(), 6u);
        for (const auto& o : c.observations) EXPECT_TRUE(o.value == "yes" || o.value == "no");
        if (c.value_of("hbsagreact") == "yes") ++hbsag_yes;
    }
    EXPECT_EQ(pos, 15);
    EXPECT_EQ(neg, 17);
    EXPECT_EQ(hbsag_yes, 10);
}

TEST(Validate, EmptyKbIsValid) {
    EXPECT_TRUE(validate_kb(KnowledgeBase{}).empty());
}

TEST(Validate, BundledKbHasNoErrors) {
    auto ds = validate_kb(corpus::build_bundled_kb());
    EXPECT_FALSE(has_errors(ds));
    // Duplicate-observation cases agree on their labels, so nothing is flagged.
    EXPECT_TRUE(with_code(ds, "contradictory_cases").empty());
}

TEST(Validate, LiteralReactiveRuleConflictsWithCase27) {
    auto ds = validate_kb(corpus::build_paper_literal_kb());
    bool found = false;
    for (const auto& d : with_code(ds, "rule_case_conflict"))
        if (d.rules == std::vector<std::string>{"lit_2"} && d.cases == std::vector<int>{27}) found = true;
    EXPECT_TRUE(found);
}

TEST(Validate, ContradictoryRulePairsMatchBruteForce) {
    KnowledgeBase kb;
    kb.schema = {{"a", {"yes", "no"}, true, {}}, {"b", {"yes", "no"}, true, {}},
                 {"g", {"positive", "negative"}, false, {}}};
    kb.goal_attribute = "g";
    kb.rules = {parse_rule("RULE r1: IF a=yes AND b=no THEN g=positive"),
                parse_rule("RULE r2: IF b=no AND a=yes THEN g=negative")};
    auto ds = with_code(validate_kb(kb), "contradictory_rules");
    ASSERT_EQ(ds.size(), 1u);
    EXPECT_EQ(ds[0].rules, (std::vector<std::string>{"r1", "r2"}));

    // Brute force over every pair of a larger set.
    kb.rules.push_back(parse_rule("RULE r3: IF a=yes THEN g=negative"));
    kb.rules.push_back(parse_rule("RULE r4: IF a=yes THEN g=positive"));
    kb.rules.push_back(parse_rule("RULE r5: IF a=yes THEN g=positive"));
    std::size_t expected = 0;
    for (std::size_t i = 0; i < kb.rules.size(); ++i)
        for (std::size_t j = i + 1; j < kb.rules.size(); ++j) {
            auto pi = kb.rules[i].sorted_premises(), pj = kb.rules[j].sorted_premises();
            if (pi == pj && kb.rules[i].conclusion.value != kb.rules[j].conclusion.value) ++expected;
        }
    EXPECT_EQ(with_code(validate_kb(kb), "contradictory_rules").size(), expected);
    EXPECT_EQ(expected, 3u);
}

TEST(Validate, IsIdempotent) {
    auto kb = corpus::build_paper_literal_kb();
    auto copy = kb;
    EXPECT_EQ(validate_kb(kb), validate_kb(kb));
    EXPECT_EQ(kb, copy);
}

TEST(Validate, ReportsSchemaViolations) {
    KnowledgeBase kb;
    kb.schema = {{"a", {"yes", "no"}, true, {}}, {"a", {}, true, {}}, {"g", {"p", "p"}, false, {}}};
    kb.goal_attribute = "missing";
    kb.rules = {parse_rule("RULE r: IF a=maybe AND z=1 THEN g=p"), parse_rule("RULE r: IF a=yes THEN g=p")};
    auto ds = validate_kb(kb);
    for (auto code : {"duplicate_attribute", "empty_domain", "duplicate_value", "unknown_goal",
                      "duplicate_rule_id", "value_out_of_domain", "unknown_attribute"})
        EXPECT_FALSE(with_code(ds, code).empty()) << code;
}

TEST(Validate, FindsRuleCycles) {
    KnowledgeBase kb;
    kb.schema = {{"x", {"1"}, false, {}}, {"y", {"1"}, false, {}}};
    kb.rules = {parse_rule("RULE c1: IF x=1 THEN y=1"), parse_rule("RULE c2: IF y=1 THEN x=1")};
    auto ds = with_code(validate_kb(kb), "rule_cycle");
    ASSERT_EQ(ds.size(), 1u);
    auto ids = ds[0].rules;
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(ids, (std::vector<std::string>{"c1", "c2"}));
}

TEST(Validate, DefaultRulesNeedOptIn) {
    KnowledgeBase kb;
    kb.schema = {{"g", {"p"}, false, {}}};
    Rule r;
    r.id = "d";
    r.conclusion = {"g", "p"};
    kb.rules = {r};
    EXPECT_FALSE(with_code(validate_kb(kb), "default_rule").empty());
    kb.allow_defaults = true;
    EXPECT_TRUE(with_code(validate_kb(kb), "default_rule").empty());
}
