#pragma once
// Text formats: the rule DSL, case records (native and Prolog-clause form)
// and the experience report.
//
//   rule  := "RULE" id ":" ["IF" cond ("AND" cond)*] "THEN" cond [annot]
//   cond  := ident "=" value
//   annot := "[" "exp=" uint ["fired=" uint] ["origin=" ident] "]"
//   case  := "CASE" uint value ":" cond ("," cond)*
//          | functor "(" uint "," value "," "[" cond ("," cond)* "]" ")" "."
//
// Keywords are case-insensitive; identifiers are case-sensitive. A rule
// without IF is a default rule and must be enabled explicitly.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "induction.hpp"
#include "kb_model.hpp"

namespace hepx {

struct SourceSpan {
    std::size_t line = 1;
    std::size_t start = 1;  // 1-based columns, inclusive start
    std::size_t end = 1;    // exclusive end

    bool operator==(const SourceSpan&) const = default;
};

struct ParseDiagnostic {
    SourceSpan span;
    std::string message;
    Severity severity = Severity::error;
};

inline std::string to_string(const ParseDiagnostic& d) {
    return std::to_string(d.span.line) + ":" + std::to_string(d.span.start) + ": " +
           (d.severity == Severity::error ? "error: " : "warning: ") + d.message;
}

class ParseError : public Error {
public:
    explicit ParseError(std::vector<ParseDiagnostic> diagnostics)
        : Error("parse_error", summarize(diagnostics)), diagnostics_(std::move(diagnostics)) {}

    const std::vector<ParseDiagnostic>& diagnostics() const noexcept { return diagnostics_; }

private:
    static std::string summarize(const std::vector<ParseDiagnostic>& ds) {
        return ds.empty() ? std::string("parse error") : to_string(ds.front());
    }
    std::vector<ParseDiagnostic> diagnostics_;
};

// Optional schema context for parsing. With a schema, unknown attributes and
// out-of-domain values are warnings; `extend_schema` adds them instead.
struct ParseContext {
    std::vector<AttributeDef>* schema = nullptr;
    bool extend_schema = false;
    bool allow_defaults = false;
    std::string goal_attribute = "class";         // attribute of case labels
    std::vector<std::string> case_attributes;     // required per case, if set
    std::size_t line = 1;
    std::vector<ParseDiagnostic> warnings;
};

namespace detail {

inline bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
inline bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

class Scanner {
public:
    Scanner(std::string_view text, std::size_t line) : text_(text), line_(line) {}

    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' ||
                                       text_[pos_] == '\r'))
            ++pos_;
    }
    bool at_end() {
        skip_ws();
        return pos_ >= text_.size();
    }
    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }
    std::size_t column() const { return pos_ + 1; }
    std::size_t line() const { return line_; }
    std::string_view rest() const { return text_.substr(pos_); }

    bool consume(char c) {
        if (peek() != c) return false;
        ++pos_;
        return true;
    }
    void expect(char c) {
        if (!consume(c)) fail(std::string("expected '") + c + "'");
    }

    bool consume_keyword(std::string_view kw) {
        skip_ws();
        if (text_.size() - pos_ < kw.size()) return false;
        for (std::size_t i = 0; i < kw.size(); ++i)
            if (std::toupper(static_cast<unsigned char>(text_[pos_ + i])) !=
                std::toupper(static_cast<unsigned char>(kw[i])))
                return false;
        std::size_t after = pos_ + kw.size();
        if (after < text_.size() && is_ident_char(text_[after])) return false;
        pos_ = after;
        return true;
    }
    void expect_keyword(std::string_view kw) {
        if (!consume_keyword(kw)) fail("expected '" + std::string(kw) + "'");
    }

    std::string ident(std::string_view what = "identifier") {
        skip_ws();
        std::size_t start = pos_;
        if (pos_ >= text_.size() || !is_ident_start(text_[pos_])) fail("expected " + std::string(what));
        while (pos_ < text_.size() && is_ident_char(text_[pos_])) ++pos_;
        return std::string(text_.substr(start, pos_ - start));
    }

    // Symbolic value token: [A-Za-z0-9_]+
    std::string value() {
        skip_ws();
        std::size_t start = pos_;
        while (pos_ < text_.size() && is_ident_char(text_[pos_])) ++pos_;
        if (pos_ == start) fail("expected value");
        return std::string(text_.substr(start, pos_ - start));
    }

    std::uint64_t uint(std::string_view what = "unsigned integer") {
        skip_ws();
        std::size_t start = pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, v);
        if (pos_ == start || ec != std::errc{}) {
            pos_ = start;
            fail("expected " + std::string(what));
        }
        return v;
    }

    std::string quoted() {
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] != '"') fail("expected quoted string");
        ++pos_;
        std::string out;
        while (pos_ < text_.size() && text_[pos_] != '"') {
            char c = text_[pos_++];
            if (c == '\\' && pos_ < text_.size()) {
                char e = text_[pos_++];
                out += (e == 'n') ? '\n' : e;
            } else {
                out += c;
            }
        }
        if (pos_ >= text_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    void expect_end() {
        if (!at_end()) fail("unexpected trailing text '" + std::string(rest()) + "'");
    }

    [[noreturn]] void fail(const std::string& message) const {
        std::size_t end = pos_;
        while (end < text_.size() && !std::isspace(static_cast<unsigned char>(text_[end]))) ++end;
        SourceSpan span{line_, pos_ + 1, std::max(end, pos_ + 1) + 1};
        throw ParseError({{span, message, Severity::error}});
    }

    SourceSpan span_from(std::size_t start_pos) const { return {line_, start_pos + 1, pos_ + 1}; }
    std::size_t pos() const { return pos_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_;
};

inline std::string quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

// Checks a parsed fact against the context schema.
inline void check_schema(ParseContext* ctx, const Fact& f, const SourceSpan& span) {
    if (!ctx || !ctx->schema) return;
    for (auto& a : *ctx->schema) {
        if (a.name != f.attribute) continue;
        if (a.allows(f.value)) return;
        if (ctx->extend_schema) {
            a.domain.push_back(f.value);
            return;
        }
        ctx->warnings.push_back(
            {span, "value '" + f.value + "' not in domain of '" + f.attribute + "'", Severity::warning});
        return;
    }
    if (ctx->extend_schema) {
        ctx->schema->push_back({f.attribute, {f.value}, true, {}});
        return;
    }
    ctx->warnings.push_back({span, "unknown attribute '" + f.attribute + "'", Severity::warning});
}

inline Fact parse_condition(Scanner& s, ParseContext* ctx) {
    s.skip_ws();
    std::size_t start = s.pos();
    Fact f;
    f.attribute = s.ident("attribute name");
    s.expect('=');
    f.value = s.value();
    check_schema(ctx, f, s.span_from(start));
    return f;
}

} // namespace detail

/// Parses one rule line. Premises keep their written order.
inline Rule parse_rule(std::string_view text, ParseContext* ctx = nullptr) {
    detail::Scanner s(text, ctx ? ctx->line : 1);
    Rule rule;
    s.expect_keyword("RULE");
    rule.id = s.ident("rule id");
    s.expect(':');
    if (s.consume_keyword("IF")) {
        std::set<std::string> seen;
        do {
            std::size_t start = (s.skip_ws(), s.pos());
            Fact c = detail::parse_condition(s, ctx);
            if (!seen.insert(c.attribute).second)
                throw ParseError({{s.span_from(start),
                                   "attribute '" + c.attribute + "' tested twice",
                                   Severity::error}});
            rule.premises.push_back(std::move(c));
        } while (s.consume_keyword("AND"));
    } else if (!(ctx && ctx->allow_defaults)) {
        s.fail("expected 'IF' (default rules are disabled)");
    }
    s.expect_keyword("THEN");
    std::size_t concl_start = (s.skip_ws(), s.pos());
    rule.conclusion = detail::parse_condition(s, ctx);
    if (rule.premise_on(rule.conclusion.attribute))
        throw ParseError({{s.span_from(concl_start),
                           "conclusion attribute '" + rule.conclusion.attribute +
                               "' also appears in the premises",
                           Severity::error}});

    if (s.consume('[')) {
        s.expect_keyword("exp");
        s.expect('=');
        std::uint64_t exp = s.uint("experience count");
        std::uint64_t fired = 0;
        while (!s.consume(']')) {
            if (s.consume_keyword("fired")) {
                s.expect('=');
                fired = s.uint("firing count");
            } else if (s.consume_keyword("origin")) {
                s.expect('=');
                std::size_t start = (s.skip_ws(), s.pos());
                auto name = s.ident("origin");
                auto origin = parse_origin(name);
                if (!origin)
                    throw ParseError({{s.span_from(start), "unknown origin '" + name + "'",
                                       Severity::error}});
                rule.origin = *origin;
            } else {
                s.fail("expected 'fired=', 'origin=' or ']'");
            }
        }
        if (fired > exp) s.fail("fired count exceeds experience");
        rule.stats.firings = fired;
        rule.stats.support = exp - fired;
    }
    s.expect_end();
    return rule;
}

/// Canonical rule text: premises sorted by attribute, single spaces,
/// upper-case keywords, annotation only when non-trivial.
inline std::string serialize_rule(const Rule& rule) {
    std::string out = "RULE " + rule.id + ":";
    auto premises = rule.sorted_premises();
    for (std::size_t i = 0; i < premises.size(); ++i)
        out += (i == 0 ? " IF " : " AND ") + to_string(premises[i]);
    out += " THEN " + to_string(rule.conclusion);
    if (experience(rule) > 0 || rule.origin != RuleOrigin::authored) {
        out += " [exp=" + std::to_string(experience(rule));
        if (rule.stats.firings > 0) out += " fired=" + std::to_string(rule.stats.firings);
        if (rule.origin != RuleOrigin::authored)
            out += " origin=" + std::string(to_string(rule.origin));
        out += "]";
    }
    return out;
}

/// Parses a case in either native or Prolog-clause form. Directives
/// (`:- ...`), comments (`%` or `#`) and blank lines yield nullopt.
inline std::optional<CaseRecord> parse_case(std::string_view text, ParseContext* ctx = nullptr) {
    detail::Scanner s(text, ctx ? ctx->line : 1);
    if (s.at_end()) return std::nullopt;
    char first = s.peek();
    if (first == '%' || first == '#') return std::nullopt;
    if (s.rest().substr(0, 2) == ":-") return std::nullopt;

    CaseRecord rec;
    const std::string goal = ctx ? ctx->goal_attribute : std::string("class");
    std::set<std::string> seen;
    auto observe = [&](detail::Scanner& sc) {
        std::size_t start = (sc.skip_ws(), sc.pos());
        Fact f = detail::parse_condition(sc, ctx);
        if (!seen.insert(f.attribute).second)
            throw ParseError({{sc.span_from(start), "attribute '" + f.attribute + "' observed twice",
                               Severity::error}});
        rec.observations.push_back(std::move(f));
    };
    auto read_id = [&](detail::Scanner& sc) {
        std::uint64_t id = sc.uint("case id");
        if (id == 0 || id > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
            sc.fail("case id must be a positive integer");
        rec.id = static_cast<int>(id);
    };

    if (s.consume_keyword("CASE")) {
        read_id(s);
        rec.label = {goal, s.value()};
        s.expect(':');
        do observe(s);
        while (s.consume(','));
        s.expect_end();
    } else {
        s.ident("case keyword or clause functor");
        s.expect('(');
        read_id(s);
        s.expect(',');
        rec.label = {goal, s.value()};
        s.expect(',');
        s.expect('[');
        if (!s.consume(']')) {
            do observe(s);
            while (s.consume(','));
            s.expect(']');
        }
        s.expect(')');
        s.expect('.');
        s.expect_end();
    }
    detail::check_schema(ctx, rec.label, {s.line(), 1, 1});

    if (ctx) {
        for (const auto& a : ctx->case_attributes)
            if (!seen.count(a))
                throw ParseError({{{s.line(), 1, text.size() + 1},
                                   "case " + std::to_string(rec.id) + " is missing attribute '" +
                                       a + "'",
                                   Severity::error}});
    }
    return rec;
}

// Parses a multi-line case listing, skipping directives, comments and blanks.
inline std::vector<CaseRecord> parse_cases(std::string_view text, ParseContext* ctx = nullptr) {
    ParseContext local;
    ParseContext* c = ctx ? ctx : &local;
    std::vector<CaseRecord> out;
    std::size_t base = c->line;
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        c->line = base + n;
        if (auto rec = parse_case(text.substr(pos, nl - pos), c)) out.push_back(std::move(*rec));
        ++n;
        pos = nl + 1;
    }
    c->line = base;
    return out;
}

inline std::string serialize_case(const CaseRecord& rec) {
    std::string out = "CASE " + std::to_string(rec.id) + " " + rec.label.value + ":";
    for (std::size_t i = 0; i < rec.observations.size(); ++i)
        out += (i == 0 ? " " : ", ") + to_string(rec.observations[i]);
    return out;
}

inline std::string serialize_case_prolog(const CaseRecord& rec, std::string_view functor) {
    std::string out = std::string(functor) + "(" + std::to_string(rec.id) + "," + rec.label.value + ",[";
    for (std::size_t i = 0; i < rec.observations.size(); ++i)
        out += (i == 0 ? "" : ",") + to_string(rec.observations[i]);
    return out + "]).";
}

/// Renders a tree in the experience-report layout: one `attr=value` line
/// per branch, children indented two spaces, leaves suffixed with
/// ` => label/count` (count-1 leaves bracketed as ` => [label/1]`).
inline std::string format_experience_report(const DecisionTree& tree) {
    auto leaf_text = [](const DecisionTree& leaf) {
        std::string body = leaf.label + "/" + std::to_string(leaf.count);
        return leaf.count == 1 ? " => [" + body + "]" : " => " + body;
    };
    if (tree.is_leaf()) return tree.count == 0 ? std::string{} : leaf_text(tree) + "\n";

    std::string out;
    auto walk = [&](auto&& self, const DecisionTree& node, std::size_t depth) -> void {
        for (const auto* b : report_order(node)) {
            out += std::string(depth * 2, ' ') + node.attribute + "=" + b->value;
            if (b->subtree.is_leaf()) {
                out += leaf_text(b->subtree) + "\n";
            } else {
                out += "\n";
                self(self, b->subtree, depth + 1);
            }
        }
    };
    walk(walk, tree, 0);
    return out;
}

} // namespace hepx
