// hepx command-line front end.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hepx/corpus.hpp"
#include "hepx/hepx.hpp"
#include "hepx/service.hpp"

using namespace hepx;

namespace {

constexpr int kExitConcluded = 0;
constexpr int kExitError = 1;
constexpr int kExitUnknown = 2;

std::string resolve_kb(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("HEPX_KB"); env && *env) return env;
    throw SchemaError("no_kb", "no knowledge base given (use --kb or set HEPX_KB)");
}

std::string join(const std::vector<std::string>& xs, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + xs[i];
    return out;
}

std::string join_conditions(const std::vector<Condition>& cs) {
    std::vector<std::string> parts;
    for (const auto& c : cs) parts.push_back(to_string(c));
    return join(parts, ", ");
}

std::string indent(const std::string& text, const std::string& pad) {
    std::string out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out += pad + line + "\n";
    return out;
}

void print_diagnostics(const ParseError& e, const std::string& file) {
    for (const auto& d : e.diagnostics()) std::cerr << file << ":" << to_string(d) << "\n";
}

// ---------------------------------------------------------------------------
// consult

struct ConsultOptions {
    std::string kb;
    std::string goal;
    std::string script;
    std::vector<std::string> facts;
    bool paper_literal = false;
    bool record = false;
};

Fact parse_fact_flag(const std::string& text) {
    auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
        throw SchemaError("invalid_fact", "expected ATTR=VALUE, got '" + text + "'");
    return {text.substr(0, eq), text.substr(eq + 1)};
}

void print_fired(std::ostream& out, const KnowledgeBase& kb, const std::vector<std::string>& fired) {
    for (const auto& id : fired)
        if (const Rule* r = kb.rule(id)) out << "fired " << serialize_rule(*r) << "\n";
}

int consult(const ConsultOptions& o) {
    const std::string path = resolve_kb(o.kb);
    if (o.record && o.paper_literal)
        throw SchemaError("record_literal", "--record cannot be combined with --paper-literal");
    KnowledgeBase base = load(path);
    if (o.paper_literal) base = corpus::with_paper_literal_rules(std::move(base));
    auto kb = std::make_shared<const KnowledgeBase>(std::move(base));

    std::vector<Fact> given;
    for (const auto& f : o.facts) given.push_back(parse_fact_flag(f));
    std::string goal = o.goal.empty() ? kb->goal_attribute : o.goal;

    std::ifstream script_file;
    if (!o.script.empty()) {
        script_file.open(o.script);
        if (!script_file) throw IoError("io_error", "cannot read '" + o.script + "'");
    }
    const bool scripted = !o.script.empty();
    std::istream& in = scripted ? static_cast<std::istream&>(script_file) : std::cin;
    std::ostream& out = std::cout;

    std::vector<std::string> all_fired;
    out << "goal: " << goal << "\n";
    for (const auto& f : given) out << "given " << to_string(f) << "\n";
    Session s = start_session(kb, goal, given, "cli", &all_fired);
    print_fired(out, *kb, all_fired);

    while (s.status == SessionStatus::active) {
        const std::string attr = s.pending->attribute;
        const AttributeDef* a = kb->attribute(attr);
        std::string prompt = a && !a->prompt.empty() ? a->prompt : "What is " + attr + "?";
        std::vector<std::string> choices = a ? a->domain : std::vector<std::string>{};
        choices.emplace_back(kUnknownAnswer);
        choices.emplace_back("why");
        out << "? " << attr << ": " << prompt << " [" << join(choices, "/") << "] > " << std::flush;

        std::string line;
        if (!std::getline(in, line)) {
            out << "\n";
            throw StateError(scripted ? "script_exhausted" : "input_closed",
                             "input ended while '" + attr + "' was pending");
        }
        // Trim and allow "attr=value" in scripts.
        auto b = line.find_first_not_of(" \t\r");
        auto e = line.find_last_not_of(" \t\r");
        line = b == std::string::npos ? "" : line.substr(b, e - b + 1);
        if (scripted) out << line << "\n";
        if (line.empty() || line[0] == '#') continue;
        if (auto eq = line.find('='); eq != std::string::npos) {
            if (line.substr(0, eq) != attr)
                throw StateError("not_pending", "script answers '" + line.substr(0, eq) + "' but '" + attr +
                                                    "' is pending");
            line = line.substr(eq + 1);
        }
        if (line == "why") {
            out << indent(explain_why(s), "  ");
            continue;
        }
        if (line != kUnknownAnswer && (!a || !a->allows(line))) {
            if (scripted)
                throw SchemaError("value_out_of_domain", "'" + line + "' is not a value of '" + attr + "'");
            std::cerr << "'" << line << "' is not one of " << join(choices, "/") << "\n";
            continue;
        }
        auto fired = answer(s, attr, line);
        print_fired(out, *kb, fired);
        all_fired.insert(all_fired.end(), fired.begin(), fired.end());
    }

    int code = kExitConcluded;
    if (s.status == SessionStatus::concluded) {
        Fact result{goal, *s.memory.value(goal)};
        out << "result: " << to_string(result) << "\n";
        if (auto advice = kb->advice_for(result)) out << "advice: " << *advice << "\n";
        out << "how:\n" << indent(explain_how(s), "  ");
    } else {
        out << "result: " << goal << " unknown\n";
        for (const auto& m : s.missing) out << "  missing: " << join_conditions(m) << "\n";
        code = kExitUnknown;
    }

    if (o.record && !all_fired.empty()) {
        KbStore store(path);
        store.commit([&](KnowledgeBase& m) {
            for (const auto& id : all_fired)
                if (m.rule(id)) record_firing(m, id, store.stamp());
        });
    }
    return code;
}

// ---------------------------------------------------------------------------
// induce

int induce(const std::string& kb_flag, bool report, bool emit) {
    const std::string path = resolve_kb(kb_flag);
    if (!emit) {
        auto kb = load(path);
        auto ind = induce_kb(kb);
        for (const auto& d : ind.diagnostics) std::cerr << "warning: " << d.code << ": " << d.message << "\n";
        std::cout << format_experience_report(ind.tree);
        return 0;
    }
    KbStore store(path);
    InducedRules ir;
    store.commit([&](KnowledgeBase& kb) { ir = emit_induced_rules(kb, store.stamp()); });
    for (const auto& d : ir.induction.diagnostics) std::cerr << "warning: " << d.code << ": " << d.message << "\n";
    if (report) std::cout << format_experience_report(ir.induction.tree);
    std::cerr << "removed " << ir.removed.size() << " induced rule(s), added " << ir.added.size() << "\n";
    for (const auto& id : ir.added)
        if (const Rule* r = store.snapshot()->rule(id)) std::cerr << "  " << serialize_rule(*r) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// generalize

std::string fraction(std::size_t wrong, std::size_t cases) {
    return std::to_string(cases - wrong) + "/" + std::to_string(cases);
}

std::string format_generalization(const GeneralizationReport& r, const KnowledgeBase& before,
                                  const KnowledgeBase& after, const ExperienceOptions& eo) {
    std::ostringstream out;
    out << "mode: " << to_string(r.mode);
    if (r.mode == GeneralizationMode::experience)
        out << " (threshold " << eo.threshold << ", minority max " << eo.minority_max << ")";
    out << "\n";
    for (const auto& id : r.added) {
        const Rule* g = after.rule(id);
        if (!g) continue;
        std::vector<std::string> sources;
        std::set<std::string> dropped;
        for (const auto& rid : r.removed) {
            const Rule* old = before.rule(rid);
            if (!old || old->conclusion.attribute != g->conclusion.attribute) continue;
            if (!detail::premises_subset(*g, *old)) continue;
            sources.push_back(rid);
            for (const auto& p : old->premises)
                if (!g->premise_on(p.attribute)) dropped.insert(p.attribute);
        }
        out << "merged " << join(sources, " + ") << " -> " << serialize_rule(*g) << "\n";
        if (!dropped.empty())
            out << "  dropped split on " << join({dropped.begin(), dropped.end()}, ", ") << "\n";
    }
    for (const auto& id : r.kept) {
        std::vector<std::string> absorbed;
        const Rule* k = after.rule(id);
        if (!k) continue;
        for (const auto& rid : r.removed) {
            const Rule* old = before.rule(rid);
            if (old && old->conclusion == k->conclusion && detail::premises_subset(*k, *old)) absorbed.push_back(rid);
        }
        out << "kept " << serialize_rule(*k) << "\n";
        if (!absorbed.empty()) out << "  absorbed " << join(absorbed, ", ") << "\n";
    }
    out << "removed: " << (r.removed.empty() ? "none" : join(r.removed, ", ")) << "\n";
    out << "added: " << (r.added.empty() ? "none" : join(r.added, ", ")) << "\n";
    for (const auto& s : r.skipped) out << "skipped " << s.general << " over " << s.specific << ": " << s.reason << "\n";
    std::vector<std::string> ex;
    for (int c : r.exceptions) ex.push_back(std::to_string(c));
    out << "exceptions: " << (ex.empty() ? "none" : join(ex, ", ")) << "\n";
    if (r.cases > 0)
        out << "replay accuracy: " << fraction(misclassified_cases(before).size(), r.cases) << " -> "
            << fraction(r.exceptions.size(), r.cases) << "\n";
    return out.str();
}

int generalize(const std::string& kb_flag, const std::string& mode, const ExperienceOptions& eo, bool dry) {
    const std::string path = resolve_kb(kb_flag);
    auto run = [&](const KnowledgeBase& kb, const AuditStamp& stamp) {
        return mode == "subsume" ? subsume_generalize(kb, stamp) : experience_generalize(kb, eo, stamp);
    };
    if (dry) {
        auto kb = load(path);
        auto g = run(kb, {utc_now(), Actor::system, {}});
        std::cout << format_generalization(g.report, kb, g.kb, eo) << "dry run: nothing written\n";
        return 0;
    }
    KbStore store(path);
    auto before = store.snapshot();
    GeneralizationReport report;
    auto after = store.commit([&](KnowledgeBase& kb) {
        auto g = run(kb, store.stamp());
        report = g.report;
        kb = std::move(g.kb);
    });
    std::cout << format_generalization(report, *before, *after, eo);
    std::cout << (after == before ? "no changes\n" : "written to " + path + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// validate

int validate(const std::string& kb_flag) {
    const std::string path = resolve_kb(kb_flag);
    LoadedKb loaded;
    try {
        loaded = load_with_diagnostics(path);
    } catch (const ParseError& e) {
        print_diagnostics(e, path);
        return kExitError;
    }
    for (const auto& w : loaded.warnings) std::cerr << path << ":" << to_string(w) << "\n";
    for (const auto& d : loaded.diagnostics) {
        std::cerr << (d.severity == Severity::error ? "error: " : "warning: ") << d.code << ": " << d.message;
        if (!d.rules.empty()) std::cerr << " [rules " << join(d.rules, ", ") << "]";
        if (!d.cases.empty()) {
            std::vector<std::string> ids;
            for (int c : d.cases) ids.push_back(std::to_string(c));
            std::cerr << " [cases " << join(ids, ", ") << "]";
        }
        std::cerr << "\n";
    }
    const auto& kb = loaded.kb;
    std::cout << path << ": " << kb.schema.size() << " attributes, " << kb.cases.size() << " cases, "
              << kb.rules.size() << " rules, " << kb.audit.size() << " audit entries\n";
    return has_errors(loaded.diagnostics) ? kExitError : 0;
}

// ---------------------------------------------------------------------------
// import-prolog

int import_prolog(const std::string& cases, const std::string& out, std::string goal, bool force) {
    const std::string text = read_file(cases);
    if (goal.empty()) {
        // Default goal: the clause functor.
        std::istringstream in(text);
        for (std::string line; std::getline(in, line);) {
            auto b = line.find_first_not_of(" \t");
            if (b == std::string::npos || line[b] == '%' || line[b] == '#' || line.compare(b, 2, ":-") == 0) continue;
            auto paren = line.find('(', b);
            if (paren != std::string::npos) goal = line.substr(b, paren - b);
            break;
        }
        if (goal.empty()) goal = "class";
    }
    KnowledgeBase kb;
    try {
        kb = import_prolog_cases(text, goal);
    } catch (const ParseError& e) {
        print_diagnostics(e, cases);
        return kExitError;
    }
    if (!force && std::filesystem::exists(out))
        throw StateError("exists", "'" + out + "' exists (use --force to replace it)");
    save(kb, out);
    std::map<std::string, std::size_t> labels;
    for (const auto& c : kb.cases) ++labels[c.label.value];
    std::cout << "imported " << kb.cases.size() << " cases into " << out << " (goal " << goal << ":";
    for (const auto& v : kb.attribute(goal)->domain) std::cout << " " << v << " " << labels[v];
    std::cout << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// serve

int serve(const std::string& kb_flag, const std::string& addr_flag) {
    const std::string path = resolve_kb(kb_flag);
    auto addr = service::resolve_address(addr_flag);
    KbStore store(path);
    service::Service svc(store);
    httplib::Server srv;
    svc.install(srv);
    int port = addr.port;
    if (port == 0) {
        port = srv.bind_to_any_port(addr.host);
        if (port < 0) throw IoError("bind_failed", "cannot bind " + addr.host);
    } else if (!srv.bind_to_port(addr.host, port)) {
        throw IoError("bind_failed", "cannot bind " + addr.host + ":" + std::to_string(port));
    }
    std::cerr << "serving " << path << " on " << addr.host << ":" << port << "\n";
    std::cout << "listening " << addr.host << ":" << port << std::endl;
    srv.listen_after_bind();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hepx: adaptive rule-based expert-system shell"};
    app.require_subcommand(1);

    ConsultOptions co;
    auto* c = app.add_subcommand("consult", "Run a consultation");
    c->add_option("--kb", co.kb, "Knowledge base file (default $HEPX_KB)");
    c->add_option("--goal", co.goal, "Goal attribute (default: KB goal)");
    c->add_option("--script", co.script, "Read answers from FILE instead of stdin");
    c->add_option("--fact", co.facts, "Given fact ATTR=VALUE (repeatable)");
    c->add_flag("--paper-literal", co.paper_literal, "Use the HBV rules exactly as originally written");
    c->add_flag("--record", co.record, "Count rule firings in the KB file");

    std::string kb_flag;
    bool report = false, emit = false;
    auto* ind = app.add_subcommand("induce", "Induce a decision tree from the stored cases");
    ind->add_option("--kb", kb_flag, "Knowledge base file (default $HEPX_KB)");
    ind->add_flag("--report", report, "Print the experience report");
    ind->add_flag("--emit-rules", emit, "Replace induced rules with the new tree's rules");

    std::string mode;
    ExperienceOptions eo;
    bool dry = false;
    auto* gen = app.add_subcommand("generalize", "Generalize rules");
    gen->add_option("--kb", kb_flag, "Knowledge base file (default $HEPX_KB)");
    gen->add_option("--mode", mode, "subsume or experience")->required()->check(CLI::IsMember({"subsume", "experience"}));
    gen->add_option("--threshold", eo.threshold, "Majority/minority experience ratio")->check(CLI::PositiveNumber);
    gen->add_option("--minority-max", eo.minority_max, "Largest minority experience that may be overruled");
    gen->add_flag("--dry-run", dry, "Print the report without writing");

    auto* val = app.add_subcommand("validate", "Check a knowledge base");
    val->add_option("--kb", kb_flag, "Knowledge base file (default $HEPX_KB)");

    std::string cases, out, goal;
    bool force = false;
    auto* imp = app.add_subcommand("import-prolog", "Import Prolog case clauses");
    imp->add_option("--cases", cases, "Prolog case file")->required();
    imp->add_option("--out", out, "KB file to write")->required();
    imp->add_option("--goal", goal, "Goal attribute (default: clause functor)");
    imp->add_flag("--force", force, "Replace an existing output file");

    std::string addr;
    auto* srv = app.add_subcommand("serve", "Run the HTTP service");
    srv->add_option("--kb", kb_flag, "Knowledge base file (default $HEPX_KB)");
    srv->add_option("--addr", addr, "HOST:PORT (default $HEPX_ADDR or 127.0.0.1:8080)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c) return consult(co);
        if (*ind) return induce(kb_flag, report, emit);
        if (*gen) return generalize(kb_flag, mode, eo, dry);
        if (*val) return validate(kb_flag);
        if (*imp) return import_prolog(cases, out, goal, force);
        if (*srv) return serve(kb_flag, addr);
    } catch (const ParseError& e) {
        std::cerr << "hepx: " << e.code() << "\n";
        for (const auto& d : e.diagnostics()) std::cerr << "  " << to_string(d) << "\n";
        return kExitError;
    } catch (const Error& e) {
        std::cerr << "hepx: " << e.code() << ": " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "hepx: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
