#pragma once
// Bundled hepatitis reference corpus: the 32-case Prolog case base, the
// HCV rules, the literal HBV rule block and the incomplete rule used to
// demonstrate discovery.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "induction.hpp"
#include "kb_model.hpp"
#include "rule_lang.hpp"

namespace hepx::corpus {

// Verbatim case base, including the leading dynamic directive.
inline constexpr std::string_view kHepatitisCases = R"PL(:- dynamic (hepatitis/3).
hepatitis(1,positive,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(2,positive,[symptoms=yes,jaundice=yes,hbsagreact=yes,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=no]).
hepatitis(3,negative,[symptoms=no,jaundice=yes,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(4,negative,[symptoms=yes,jaundice=no,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=no]).
hepatitis(5,negative,[symptoms=no,jaundice=yes,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=yes]).
hepatitis(6,negative,[symptoms=yes,jaundice=no,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(7,positive,[symptoms=yes,jaundice=yes,hbsagreact=yes,hbsagnonreact=no,igmantihbcreact=no,checkHBV=no]).
hepatitis(8,positive,[symptoms=no,jaundice=no,hbsagreact=yes,hbsagnonreact=no,igmantihbcreact=no,checkHBV=yes]).
hepatitis(9,negative,[symptoms=yes,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(10,positive,[symptoms=yes,jaundice=yes,hbsagreact=yes,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=no]).
hepatitis(11,negative,[symptoms=yes,jaundice=yes,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(12,negative,[symptoms=yes,jaundice=no,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=yes]).
hepatitis(13,negative,[symptoms=no,jaundice=yes,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=no,checkHBV=yes]).
hepatitis(14,negative,[symptoms=yes,jaundice=no,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=yes,checkHBV=no]).
hepatitis(15,positive,[symptoms=yes,jaundice=yes,hbsagreact=yes,hbsagnonreact=no,igmantihbcreact=no,checkHBV=no]).
hepatitis(16,positive,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(17,positive,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(18,positive,[symptoms=yes,jaundice=yes,hbsagreact=yes,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=no]).
hepatitis(19,negative,[symptoms=no,jaundice=yes,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(20,negative,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=no,checkHBV=yes]).
hepatitis(21,negative,[symptoms=no,jaundice=yes,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=no,checkHBV=yes]).
hepatitis(22,negative,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(23,positive,[symptoms=no,jaundice=yes,hbsagreact=yes,hbsagnonreact=no,igmantihbcreact=no,checkHBV=no]).
hepatitis(24,positive,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(25,positive,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(26,positive,[symptoms=yes,jaundice=yes,hbsagreact=yes,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=no]).
hepatitis(27,negative,[symptoms=no,jaundice=yes,hbsagreact=yes,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).
hepatitis(28,negative,[symptoms=yes,jaundice=no,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=yes]).
hepatitis(29,negative,[symptoms=no,jaundice=yes,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=no,checkHBV=no]).
hepatitis(30,negative,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=yes,igmantihbcreact=no,checkHBV=yes]).
hepatitis(31,positive,[symptoms=yes,jaundice=yes,hbsagreact=yes,hbsagnonreact=no,igmantihbcreact=no,checkHBV=no]).
hepatitis(32,positive,[symptoms=no,jaundice=no,hbsagreact=no,hbsagnonreact=no,igmantihbcreact=yes,checkHBV=yes]).)PL";

inline constexpr std::string_view kBundledTimestamp = "2026-01-01T00:00:00Z";

inline const std::vector<std::string>& hcv_rule_texts() {
    static const std::vector<std::string> rules = {
        "RULE hcv_1: IF antihcv=reactive THEN hcv=positive",
        "RULE hcv_2: IF antihcv=nonreactive THEN hcv=negative",
    };
    return rules;
}

// HBV block as written, including "Non-Reactive -> Positive".
inline const std::vector<std::string>& paper_literal_hbv_rule_texts() {
    static const std::vector<std::string> rules = {
        "RULE lit_1: IF symptoms=yes AND jaundice=yes THEN checkHBV=yes",
        "RULE lit_2: IF hbsagreact=yes THEN hbv=positive",
        "RULE lit_3: IF hbsagnonreact=yes THEN hbv=positive",
        "RULE lit_4: IF hbsagreact=yes AND igmantihbcreact=yes THEN hbv=positive",
        "RULE lit_5: IF hbsagreact=yes AND igmantihbcreact=no THEN hbv=positive",
        "RULE lit_6: IF hbsagnonreact=yes AND igmantihbcreact=no THEN hbv=negative",
    };
    return rules;
}

// The rule the discovery example starts from; a patient with a
// non-reactive HBsAg result falls outside it.
inline constexpr std::string_view kIncompleteRule =
    "RULE inc_1: IF symptoms=yes AND jaundice=yes AND hbsagreact=yes AND hbsagnonreact=no "
    "AND igmantihbcreact=yes THEN hbv=positive";

inline std::vector<AttributeDef> bundled_schema() {
    return {
        {"symptoms", {"yes", "no"}, true, "Does the patient have viral hepatitis symptoms?"},
        {"jaundice", {"yes", "no"}, true, "Does the patient have jaundice?"},
        {"hbsagreact", {"yes", "no"}, true, "Is the HBsAg result reactive?"},
        {"hbsagnonreact", {"yes", "no"}, true, "Is the HBsAg result non-reactive?"},
        {"igmantihbcreact", {"yes", "no"}, true, "Is the IgM anti-HBc result reactive?"},
        {"checkHBV", {"yes", "no"}, true, "Were HBV blood tests ordered?"},
        {"antihcv", {"reactive", "nonreactive"}, true, "What is the anti-HCV result?"},
        {"hbv", {"positive", "negative"}, false, "HBV result"},
        {"hcv", {"positive", "negative"}, false, "HCV result"},
    };
}

inline std::vector<CaseRecord> bundled_cases() {
    ParseContext ctx;
    ctx.goal_attribute = "hbv";
    return parse_cases(kHepatitisCases, &ctx);
}

inline std::map<Fact, std::string> bundled_advice() {
    return {
        {{"hbv", "positive"}, "HBV infection likely. Refer for HBV DNA viral load and liver function tests."},
        {{"hbv", "negative"}, "No HBV infection indicated. Re-test if symptoms persist."},
        {{"hcv", "positive"}, "HCV infection likely. Refer for HCV RNA confirmation."},
        {{"hcv", "negative"}, "No HCV infection indicated."},
    };
}

inline void add_with_audit(KnowledgeBase& kb, const Rule& r) {
    kb.rules.push_back(r);
    kb.audit.push_back({std::string(kBundledTimestamp), Actor::system, {}, AuditAction::rule_added,
                        {r.id}, {serialize_rule(r)}});
}

/// Schema, cases and advice with no rules.
inline KnowledgeBase bundled_base() {
    KnowledgeBase kb;
    kb.schema = bundled_schema();
    kb.goal_attribute = "hbv";
    kb.cases = bundled_cases();
    kb.advice = bundled_advice();
    return kb;
}

/// Default bundled KB: HBV rules induced from the cases plus the HCV rules.
inline KnowledgeBase build_bundled_kb() {
    KnowledgeBase kb = bundled_base();
    auto induced = induce_kb(kb);
    for (const auto& r : tree_to_rules(induced.tree, kb.goal_attribute)) add_with_audit(kb, r);
    for (const auto& t : hcv_rule_texts()) add_with_audit(kb, parse_rule(t));
    return kb;
}

/// Bundled KB with the literal HBV block in place of the induced rules.
inline KnowledgeBase build_paper_literal_kb() {
    KnowledgeBase kb = bundled_base();
    for (const auto& t : paper_literal_hbv_rule_texts()) add_with_audit(kb, parse_rule(t));
    for (const auto& t : hcv_rule_texts()) add_with_audit(kb, parse_rule(t));
    return kb;
}

/// Bundled schema and cases with only the incomplete HBV rule.
inline KnowledgeBase build_incomplete_kb() {
    KnowledgeBase kb = bundled_base();
    add_with_audit(kb, parse_rule(kIncompleteRule));
    for (const auto& t : hcv_rule_texts()) add_with_audit(kb, parse_rule(t));
    return kb;
}

// Swaps every goal-attribute rule (and checkHBV rule) for the literal block.
inline KnowledgeBase with_paper_literal_rules(KnowledgeBase kb) {
    std::vector<Rule> kept;
    for (auto& r : kb.rules)
        if (r.conclusion.attribute != "hbv" && r.conclusion.attribute != "checkHBV") kept.push_back(r);
    kb.rules.clear();
    for (const auto& t : paper_literal_hbv_rule_texts()) kb.rules.push_back(parse_rule(t));
    kb.rules.insert(kb.rules.end(), kept.begin(), kept.end());
    return kb;
}

} // namespace hepx::corpus
