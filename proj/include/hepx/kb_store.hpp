#pragma once
// Knowledge-base persistence.
//
// A .kb file is UTF-8 text with LF line endings:
//
//   kbv1
//   @schema
//   GOAL hbv
//   ATTR symptoms {yes, no} ASK "Does the patient have symptoms?"
//   @cases
//   CASE 1 positive: symptoms=no, jaundice=no, ...
//   @rules
//   RULE ind_1: IF hbsagreact=yes AND igmantihbcreact=yes THEN hbv=negative [exp=1 origin=induced]
//   @advice
//   ADVICE hbv=positive "Refer for HBV viral load testing."
//   @audit
//   AUDIT 2026-01-01T00:00:00Z expert by="Dr. A" rule_added ids=disc_1 :: RULE disc_1: ...
//
// Sections appear in that order; any may be empty. `#` starts a comment
// line. The @cases section also accepts Prolog clauses such as
// `hepatitis(1,positive,[symptoms=no,...]).` and skips `:-` directives.

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "kb_model.hpp"
#include "rule_lang.hpp"

namespace hepx {

inline constexpr std::string_view kKbVersion = "kbv1";

inline std::string utc_now() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Line formats

inline std::string serialize_attribute(const AttributeDef& a) {
    std::string out = "ATTR " + a.name + " {";
    for (std::size_t i = 0; i < a.domain.size(); ++i) out += (i ? ", " : "") + a.domain[i];
    out += "}";
    if (a.askable) out += " ASK";
    if (!a.prompt.empty()) out += " " + detail::quote(a.prompt);
    return out;
}

inline std::string serialize_audit(const AuditEntry& e) {
    std::string out = "AUDIT " + e.timestamp + " " + std::string(to_string(e.actor));
    if (!e.identity.empty()) out += " by=" + detail::quote(e.identity);
    out += " " + std::string(to_string(e.action)) + " ids=";
    for (std::size_t i = 0; i < e.rule_ids.size(); ++i) out += (i ? "," : "") + e.rule_ids[i];
    for (const auto& t : e.rule_texts) out += " :: " + t;
    return out;
}

inline AttributeDef parse_attribute(std::string_view line, std::size_t lineno) {
    detail::Scanner s(line, lineno);
    AttributeDef a;
    s.expect_keyword("ATTR");
    a.name = s.ident("attribute name");
    s.expect('{');
    if (!s.consume('}')) {
        do a.domain.push_back(s.value());
        while (s.consume(','));
        s.expect('}');
    }
    if (s.consume_keyword("ASK")) a.askable = true;
    if (s.peek() == '"') a.prompt = s.quoted();
    s.expect_end();
    return a;
}

inline std::pair<Fact, std::string> parse_advice(std::string_view line, std::size_t lineno) {
    detail::Scanner s(line, lineno);
    s.expect_keyword("ADVICE");
    Fact f;
    f.attribute = s.ident("attribute name");
    s.expect('=');
    f.value = s.value();
    std::string text = s.quoted();
    s.expect_end();
    return {f, text};
}

inline AuditEntry parse_audit(std::string_view line, std::size_t lineno) {
    // Rule texts follow " :: " separators; rule syntax never contains "::".
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    for (;;) {
        std::size_t sep = line.find(" :: ", pos);
        parts.push_back(line.substr(pos, sep == std::string_view::npos ? std::string_view::npos : sep - pos));
        if (sep == std::string_view::npos) break;
        pos = sep + 4;
    }

    detail::Scanner s(parts.front(), lineno);
    AuditEntry e;
    s.expect_keyword("AUDIT");
    s.skip_ws();
    {
        auto rest = s.rest();
        auto end = rest.find_first_of(" \t");
        e.timestamp = std::string(rest.substr(0, end));
        if (e.timestamp.empty()) s.fail("expected timestamp");
        for (std::size_t i = 0; i < e.timestamp.size(); ++i) s.consume(e.timestamp[i]);
    }
    auto actor = s.ident("actor");
    if (actor == "system") e.actor = Actor::system;
    else if (actor == "expert") e.actor = Actor::expert;
    else s.fail("unknown actor '" + actor + "'");
    if (s.consume_keyword("by")) {
        s.expect('=');
        e.identity = s.quoted();
    }
    auto action = s.ident("audit action");
    auto parsed = parse_audit_action(action);
    if (!parsed) s.fail("unknown audit action '" + action + "'");
    e.action = *parsed;
    s.expect_keyword("ids");
    s.expect('=');
    if (!s.at_end()) {
        do e.rule_ids.push_back(s.ident("rule id"));
        while (s.consume(','));
    }
    s.expect_end();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        // syntax check only; a past default rule stays readable after DEFAULTS is switched off
        ParseContext ctx;
        ctx.allow_defaults = true;
        ctx.line = lineno;
        parse_rule(parts[i], &ctx);
        e.rule_texts.emplace_back(parts[i]);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Whole-file format

inline std::string serialize_kb(const KnowledgeBase& kb) {
    std::ostringstream out;
    out << kKbVersion << "\n@schema\n";
    if (!kb.goal_attribute.empty()) out << "GOAL " << kb.goal_attribute << "\n";
    if (kb.allow_defaults) out << "DEFAULTS on\n";
    for (const auto& a : kb.schema) out << serialize_attribute(a) << "\n";
    out << "@cases\n";
    for (const auto& c : kb.cases) out << serialize_case(c) << "\n";
    out << "@rules\n";
    for (const auto& r : kb.rules) out << serialize_rule(r) << "\n";
    out << "@advice\n";
    for (const auto& [f, text] : kb.advice)
        out << "ADVICE " << to_string(f) << " " << detail::quote(text) << "\n";
    out << "@audit\n";
    for (const auto& e : kb.audit) out << serialize_audit(e) << "\n";
    return out.str();
}

struct LoadedKb {
    KnowledgeBase kb;
    std::vector<ParseDiagnostic> warnings;
    std::vector<Diagnostic> diagnostics;  // validate_kb findings
};

/// Parses .kb text. Syntax errors from every line are collected and thrown
/// together as one ParseError.
inline LoadedKb parse_kb(std::string_view text) {
    enum Section { none, schema, cases, rules, advice, audit };
    static constexpr std::string_view names[] = {"", "@schema", "@cases", "@rules", "@advice", "@audit"};

    LoadedKb out;
    KnowledgeBase& kb = out.kb;
    std::vector<ParseDiagnostic> errors;
    auto error_at = [&](std::size_t line, const std::string& msg) {
        errors.push_back({{line, 1, 1}, msg, Severity::error});
    };

    std::vector<std::string_view> lines;
    for (std::size_t pos = 0; pos < text.size();) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }

    auto blank = [](std::string_view l) {
        return l.find_first_not_of(" \t\r") == std::string_view::npos;
    };
    std::size_t first = 0;
    while (first < lines.size() && (blank(lines[first]) || lines[first].front() == '#')) ++first;
    if (first == lines.size()) throw ParseError({{{1, 1, 1}, "empty knowledge-base file", Severity::error}});
    {
        std::string_view v = lines[first];
        while (!v.empty() && (v.back() == ' ' || v.back() == '\r')) v.remove_suffix(1);
        if (v != kKbVersion)
            throw Error("version_mismatch", "unsupported knowledge-base version '" + std::string(v) +
                                                "' (expected " + std::string(kKbVersion) + ")");
    }

    Section section = none;
    ParseContext ctx;
    ctx.schema = &kb.schema;
    for (std::size_t i = first + 1; i < lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        std::string_view line = lines[i];
        if (blank(line)) continue;
        std::string_view trimmed = line.substr(line.find_first_not_of(" \t"));
        if (trimmed.front() == '#') continue;
        if (trimmed.front() == '@') {
            std::string_view name = trimmed;
            while (!name.empty() && (name.back() == ' ' || name.back() == '\r')) name.remove_suffix(1);
            Section next = none;
            for (int s = schema; s <= audit; ++s)
                if (name == names[s]) next = static_cast<Section>(s);
            if (next == none) {
                error_at(lineno, "unknown section '" + std::string(name) + "'");
                continue;
            }
            if (next <= section) {
                error_at(lineno, "section '" + std::string(name) + "' out of order");
                continue;
            }
            section = next;
            continue;
        }
        try {
            switch (section) {
            case none: error_at(lineno, "content before the first section"); break;
            case schema: {
                detail::Scanner s(line, lineno);
                if (s.consume_keyword("GOAL")) {
                    kb.goal_attribute = s.ident("goal attribute");
                    s.expect_end();
                } else if (s.consume_keyword("DEFAULTS")) {
                    auto v = s.ident("on/off");
                    if (v != "on" && v != "off") s.fail("expected 'on' or 'off'");
                    kb.allow_defaults = v == "on";
                    s.expect_end();
                } else {
                    kb.schema.push_back(parse_attribute(line, lineno));
                }
                break;
            }
            case cases: {
                ctx.goal_attribute = kb.goal_attribute.empty() ? "class" : kb.goal_attribute;
                ctx.line = lineno;
                if (auto c = parse_case(line, &ctx)) kb.cases.push_back(std::move(*c));
                break;
            }
            case rules: {
                ctx.line = lineno;
                ctx.allow_defaults = kb.allow_defaults;
                kb.rules.push_back(parse_rule(line, &ctx));
                break;
            }
            case advice: kb.advice.insert(parse_advice(line, lineno)); break;
            case audit: kb.audit.push_back(parse_audit(line, lineno)); break;
            }
        } catch (const ParseError& e) {
            for (auto d : e.diagnostics()) {
                d.span.line = lineno;
                errors.push_back(std::move(d));
            }
        }
    }
    if (!errors.empty()) throw ParseError(std::move(errors));
    out.warnings = std::move(ctx.warnings);
    out.diagnostics = validate_kb(kb);
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("io_error", "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline LoadedKb load_with_diagnostics(const std::filesystem::path& path) {
    return parse_kb(read_file(path));
}

inline KnowledgeBase load(const std::filesystem::path& path) {
    return load_with_diagnostics(path).kb;
}

// Test seam: runs after the temp file is durable and before the rename.
// Builds a rule-less KB from Prolog case clauses. Attributes and values get
// the order they are first seen in; every observed attribute is askable.
inline KnowledgeBase import_prolog_cases(std::string_view text, const std::string& goal) {
    KnowledgeBase kb;
    kb.goal_attribute = goal;
    ParseContext ctx;
    ctx.schema = &kb.schema;
    ctx.extend_schema = true;
    ctx.goal_attribute = goal;
    kb.cases = parse_cases(text, &ctx);
    if (kb.cases.empty()) throw ParseError({{{1, 1, 1}, "no case clauses found", Severity::error}});
    // The goal should come last in the schema and is never asked.
    auto it = std::find_if(kb.schema.begin(), kb.schema.end(),
                           [&](const AttributeDef& a) { return a.name == goal; });
    AttributeDef g = *it;
    kb.schema.erase(it);
    g.askable = false;
    kb.schema.push_back(std::move(g));
    std::set<int> ids;
    for (const auto& c : kb.cases)
        if (!ids.insert(c.id).second)
            throw ParseError({{{1, 1, 1}, "duplicate case id " + std::to_string(c.id), Severity::error}});
    return kb;
}

struct SaveHooks {
    std::function<void(const std::filesystem::path& temp)> before_rename;
};

/// Atomically replaces `path` with the canonical text of `kb` (write temp,
/// fsync, rename). On any failure the previous file is left intact.
inline void save(const KnowledgeBase& kb, const std::filesystem::path& path, const SaveHooks& hooks = {}) {
    const std::string text = serialize_kb(kb);
    std::filesystem::path temp = path;
    temp += ".tmp." + std::to_string(::getpid());

    int fd = ::open(temp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw IoError("io_error", "cannot create '" + temp.string() + "'");
    std::size_t written = 0;
    while (written < text.size()) {
        ssize_t n = ::write(fd, text.data() + written, text.size() - written);
        if (n <= 0) {
            ::close(fd);
            std::filesystem::remove(temp);
            throw IoError("io_error", "write to '" + temp.string() + "' failed");
        }
        written += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
        std::filesystem::remove(temp);
        throw IoError("io_error", "flush of '" + temp.string() + "' failed");
    }
    try {
        if (hooks.before_rename) hooks.before_rename(temp);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(temp, ec);
        throw;
    }
    if (std::rename(temp.c_str(), path.c_str()) != 0) {
        std::error_code ec;
        std::filesystem::remove(temp, ec);
        throw IoError("io_error", "cannot replace '" + path.string() + "'");
    }
}

// Rebuilds a rule list by applying audit entries to `baseline` in order.
inline std::vector<std::string> replay_audit(const std::vector<AuditEntry>& audit,
                                             std::vector<std::string> baseline = {}) {
    std::vector<std::string> rules = std::move(baseline);
    auto id_of = [](const std::string& text) {
        ParseContext ctx;
        ctx.allow_defaults = true;
        return parse_rule(text, &ctx).id;
    };
    auto drop = [&](const std::vector<std::string>& ids) {
        rules.erase(std::remove_if(rules.begin(), rules.end(),
                                   [&](const std::string& t) {
                                       return std::find(ids.begin(), ids.end(), id_of(t)) != ids.end();
                                   }),
                    rules.end());
    };
    for (const auto& e : audit) {
        switch (e.action) {
        case AuditAction::rule_added:
            rules.insert(rules.end(), e.rule_texts.begin(), e.rule_texts.end());
            break;
        case AuditAction::rule_removed: drop(e.rule_ids); break;
        case AuditAction::rule_generalized:
            drop(e.rule_ids);
            rules.insert(rules.end(), e.rule_texts.begin(), e.rule_texts.end());
            break;
        case AuditAction::stats_updated:
            for (const auto& t : e.rule_texts) {
                auto id = id_of(t);
                for (auto& r : rules)
                    if (id_of(r) == id) r = t;
            }
            break;
        }
    }
    return rules;
}

// ---------------------------------------------------------------------------
// Single-writer store

using Clock = std::function<std::string()>;

/// Owns the current KB snapshot and serialises every mutation: copy, mutate,
/// persist, then publish. Readers take immutable snapshots and never block
/// a writer for longer than a pointer copy.
class KbStore {
public:
    explicit KbStore(std::filesystem::path path, Clock clock = utc_now)
        : path_(std::move(path)), clock_(std::move(clock)),
          current_(std::make_shared<const KnowledgeBase>(load(path_))) {}

    // In-memory store; commits are never persisted.
    explicit KbStore(KnowledgeBase kb, Clock clock = utc_now)
        : clock_(std::move(clock)), current_(std::make_shared<const KnowledgeBase>(std::move(kb))) {}

    std::shared_ptr<const KnowledgeBase> snapshot() const {
        std::lock_guard lock(snapshot_mutex_);
        return current_;
    }

    AuditStamp stamp(Actor actor = Actor::system, std::string identity = {}) const {
        return {clock_(), actor, std::move(identity)};
    }

    const std::filesystem::path& path() const { return path_; }

    /// Applies `mutation` to a copy of the current KB and, if anything
    /// changed, persists it before publishing. Returns the new snapshot.
    std::shared_ptr<const KnowledgeBase> commit(const std::function<void(KnowledgeBase&)>& mutation) {
        std::lock_guard writer(write_mutex_);
        FileLock lock(path_);
        auto base = snapshot();
        auto next = std::make_shared<KnowledgeBase>(*base);
        mutation(*next);
        if (*next == *base) return base;
        if (!path_.empty()) save(*next, path_, hooks);
        std::lock_guard publish(snapshot_mutex_);
        current_ = next;
        return current_;
    }

    SaveHooks hooks;

private:
    // Advisory cross-process lock held for the commit critical section.
    class FileLock {
    public:
        explicit FileLock(const std::filesystem::path& path) {
            if (path.empty()) return;
            std::filesystem::path lock = path;
            lock += ".lock";
            fd_ = ::open(lock.c_str(), O_RDWR | O_CREAT, 0644);
            if (fd_ >= 0) ::flock(fd_, LOCK_EX);
        }
        ~FileLock() {
            if (fd_ >= 0) {
                ::flock(fd_, LOCK_UN);
                ::close(fd_);
            }
        }
        FileLock(const FileLock&) = delete;
        FileLock& operator=(const FileLock&) = delete;

    private:
        int fd_ = -1;
    };

    std::filesystem::path path_;
    Clock clock_;
    mutable std::mutex snapshot_mutex_;
    std::mutex write_mutex_;
    std::shared_ptr<const KnowledgeBase> current_;
};

} // namespace hepx
