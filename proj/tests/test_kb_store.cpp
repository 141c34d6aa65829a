#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "hepx/corpus.hpp"
#include "hepx/kb_store.hpp"
#include "hepx/learner.hpp"
#include "oracles.hpp"

using namespace hepx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("hepx_store_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const std::string kData = HEPX_DATA_DIR;
const AuditStamp kStamp{"2026-03-01T12:00:00Z", Actor::system, {}};

std::vector<std::string> serialized_rules(const KnowledgeBase& kb) {
    std::vector<std::string> out;
    for (const auto& r : kb.rules) out.push_back(serialize_rule(r));
    return out;
}

KnowledgeBase random_store_kb(std::mt19937& rng) {
    auto kb = oracle::random_layered_kb(rng);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    kb.allow_defaults = pick(0, 1);
    for (auto& a : kb.schema)
        if (pick(0, 1)) a.prompt = "Is \"" + a.name + "\" set?\\ yes";
    std::vector<AttributeDef> inputs;
    for (const auto& a : kb.schema)
        if (a.askable) inputs.push_back(a);
    const auto& goal = kb.schema.back();
    int ncases = pick(0, 6);
    for (int i = 1; i <= ncases; ++i) {
        CaseRecord c{i * 3, {goal.name, goal.domain[pick(0, 1)]}, {}};
        for (const auto& a : inputs) c.observations.push_back({a.name, a.domain[pick(0, 1)]});
        kb.cases.push_back(c);
    }
    if (kb.allow_defaults && pick(0, 1)) {
        Rule d;
        d.id = "dflt";
        d.conclusion = {goal.name, goal.domain[0]};
        kb.rules.push_back(d);
    }
    for (const auto& v : goal.domain)
        if (pick(0, 1)) kb.advice[{goal.name, v}] = "advice for " + v + "\nline two";
    for (const auto& r : kb.rules)
        kb.audit.push_back({"2026-01-0" + std::to_string(pick(1, 9)) + "T00:00:00Z",
                            pick(0, 1) ? Actor::system : Actor::expert, pick(0, 1) ? "Dr. \"Q\"" : "",
                            AuditAction::rule_added, {r.id}, {serialize_rule(r)}});
    return kb;
}

} // namespace

TEST(Load, BundledKb) {
    auto kb = load(kData + "/hepatitis.kb");
    EXPECT_EQ(kb.cases.size(), 32u);
    EXPECT_TRUE(kb.rule("hcv_1") && kb.rule("hcv_2"));
    int induced = 0;
    for (const auto& r : kb.rules) induced += r.origin == RuleOrigin::induced;
    EXPECT_EQ(induced, 7);
    EXPECT_EQ(kb, corpus::build_bundled_kb());
    EXPECT_FALSE(has_errors(load_with_diagnostics(kData + "/hepatitis.kb").diagnostics));
}

TEST(Load, EmptyFileIsAnError) {
    EXPECT_THROW(parse_kb(""), ParseError);
    EXPECT_THROW(parse_kb("\n# only a comment\n"), ParseError);
}

TEST(Load, VersionMismatch) {
    try {
        parse_kb("kbv2\n@schema\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "version_mismatch");
    }
}

TEST(Load, UnknownAndMisorderedSections) {
    try {
        parse_kb("kbv1\n@schema\n@future\n@rules\nRULE r: IF a=1 THEN b=2\n@cases\n");
        FAIL();
    } catch (const ParseError& e) {
        ASSERT_EQ(e.diagnostics().size(), 2u);
        EXPECT_EQ(e.diagnostics()[0].span.line, 3u);
        EXPECT_EQ(e.diagnostics()[1].span.line, 6u);
    }
}

TEST(Load, CollectsLineNumberedErrors) {
    try {
        parse_kb("kbv1\n@schema\nATTR a {1, 2}\nATTR b 1\n@rules\nRULE r: IF a=1 THEN\n");
        FAIL();
    } catch (const ParseError& e) {
        ASSERT_EQ(e.diagnostics().size(), 2u);
        EXPECT_EQ(e.diagnostics()[0].span.line, 4u);
        EXPECT_EQ(e.diagnostics()[1].span.line, 6u);
    }
}

TEST(Load, AcceptsPrologCasesAndComments) {
    std::string text = "kbv1\n# bundled\n@schema\nGOAL hbv\n";
    for (const auto& a : corpus::bundled_schema()) text += serialize_attribute(a) + "\n";
    text += "@cases\n" + std::string(corpus::kHepatitisCases) + "\n@rules\n";
    auto loaded = parse_kb(text);
    EXPECT_EQ(loaded.kb.cases, corpus::bundled_cases());
    EXPECT_TRUE(loaded.warnings.empty());
}

TEST(RoundTrip, NonCanonicalFileBecomesCanonical) {
    TempDir dir;
    std::string messy =
        "kbv1\n\n@schema\n  GOAL g\nattr a {x, y} ask \"A?\"\nATTR g {p, n}\n"
        "@cases\nt(1,p,[a=x]).\n  CASE 2 n: a=y\n"
        "@rules\nrule r1: if a=x then g=p [exp=3 origin=induced]\n"
        "@advice\nADVICE g=p \"go \\\"now\\\"\"\n"
        "@audit\nAUDIT 2026-01-01T00:00:00Z expert by=\"Dr. A\" rule_added ids=r1 :: RULE r1: IF a=x THEN g=p\n";
    const std::string canonical = serialize_kb(parse_kb(messy).kb);
    fs::path f = dir.path / "m.kb";
    std::ofstream(f) << messy;
    save(load(f), f);
    EXPECT_EQ(read_file(f), canonical);
    save(load(f), f);
    EXPECT_EQ(read_file(f), canonical);
    EXPECT_EQ(read_file(kData + "/hepatitis.kb"), serialize_kb(load(kData + "/hepatitis.kb")));
}

TEST(RoundTrip, FiftyRandomKbs) {
    TempDir dir;
    std::mt19937 rng(777);
    for (int i = 0; i < 50; ++i) {
        auto kb = random_store_kb(rng);
        fs::path f = dir.path / ("r" + std::to_string(i) + ".kb");
        save(kb, f);
        auto back = load(f);
        ASSERT_EQ(back, kb) << read_file(f);
        auto bytes = read_file(f);
        save(back, f);
        ASSERT_EQ(read_file(f), bytes);
    }
}

TEST(Store, DiscoveryCommitAddsRuleAndOneAuditLine) {
    TempDir dir;
    fs::path f = dir.path / "kb.kb";
    save(corpus::build_incomplete_kb(), f);
    const std::string before = read_file(f);
    KbStore store(f, [] { return std::string("2026-03-01T12:00:00Z"); });

    Session s = start_session(store.snapshot(), "hbv",
                              {{"symptoms", "yes"}, {"jaundice", "yes"}, {"hbsagnonreact", "yes"},
                               {"igmantihbcreact", "yes"}});
    ASSERT_EQ(s.status, SessionStatus::unknown);
    auto p = bind_proposal(s, propose_discovery(s));
    p.premises.push_back({"hiv", "positive"});
    p.conclusion = {"hbv", "positive"};
    p.expert = "Dr. Abebe";
    ValidationResult res;
    auto snap = store.commit([&](KnowledgeBase& kb) {
        res = apply_discovery(kb, p, {}, store.stamp(Actor::expert, p.expert));
    });
    ASSERT_EQ(res.status, ValidationResult::Status::accepted);
    resume_after_discovery(s, snap, p);
    EXPECT_EQ(s.memory.value("hbv"), "positive");

    const std::string after = read_file(f);
    auto lines = [](const std::string& t) {
        std::vector<std::string> v;
        std::istringstream in(t);
        for (std::string l; std::getline(in, l);) v.push_back(l);
        return v;
    };
    auto a = lines(before), b = lines(after);
    std::vector<std::string> added;
    for (const auto& l : b)
        if (std::find(a.begin(), a.end(), l) == a.end()) added.push_back(l);
    ASSERT_EQ(added.size(), 3u);  // schema entry, rule, audit line
    EXPECT_EQ(added[0], "ATTR hiv {positive} ASK");
    EXPECT_EQ(added[1].rfind("RULE disc_1:", 0), 0u);
    EXPECT_EQ(added[2].rfind("AUDIT 2026-03-01T12:00:00Z expert by=\"Dr. Abebe\" rule_added ids=disc_1 :: RULE disc_1:", 0), 0u);
    auto reloaded = load(f);
    EXPECT_EQ(reloaded, *store.snapshot());
    EXPECT_EQ(reloaded.audit.size(), corpus::build_incomplete_kb().audit.size() + 1);
}

TEST(Store, NoOpCommitLeavesFileUntouched) {
    TempDir dir;
    fs::path f = dir.path / "kb.kb";
    save(corpus::build_bundled_kb(), f);
    auto bytes = read_file(f);
    auto mtime = fs::last_write_time(f);
    KbStore store(f);
    auto snap = store.snapshot();
    EXPECT_EQ(store.commit([](KnowledgeBase&) {}), snap);
    EXPECT_EQ(read_file(f), bytes);
    EXPECT_EQ(fs::last_write_time(f), mtime);
}

TEST(Store, CrashBeforeRenameKeepsPriorKb) {
    TempDir dir;
    fs::path f = dir.path / "kb.kb";
    save(corpus::build_bundled_kb(), f);
    auto bytes = read_file(f);
    KbStore store(f);
    auto snap = store.snapshot();
    bool temp_was_complete = false;
    store.hooks.before_rename = [&](const fs::path& temp) {
        temp_was_complete = fs::exists(temp) && fs::file_size(temp) > bytes.size();
        throw IoError("injected", "simulated crash");
    };
    EXPECT_THROW(store.commit([](KnowledgeBase& kb) { record_firing(kb, "ind_2", kStamp); }), IoError);
    EXPECT_TRUE(temp_was_complete);
    EXPECT_EQ(read_file(f), bytes);
    EXPECT_EQ(load(f), corpus::build_bundled_kb());
    EXPECT_EQ(store.snapshot(), snap);
    for (const auto& e : fs::directory_iterator(dir.path))
        EXPECT_EQ(e.path().string().find(".tmp."), std::string::npos) << e.path();

    store.hooks.before_rename = nullptr;
    store.commit([](KnowledgeBase& kb) { record_firing(kb, "ind_2", kStamp); });
    EXPECT_EQ(KbStore(f).snapshot()->rule("ind_2")->stats.firings, 1u);
}

TEST(Store, CrashAtEveryByteOfTempFileNeverCorrupts) {
    // Simulates a crash that leaves a truncated temp file behind: the live
    // file must still load as the pre-commit KB.
    TempDir dir;
    fs::path f = dir.path / "kb.kb";
    save(corpus::build_bundled_kb(), f);
    auto bytes = read_file(f);
    KbStore store(f);
    for (std::size_t cut : {std::size_t{0}, std::size_t{1}, std::size_t{100}, bytes.size() / 2}) {
        store.hooks.before_rename = [&](const fs::path& temp) {
            fs::resize_file(temp, cut);
            throw IoError("injected", "crash");
        };
        EXPECT_THROW(store.commit([](KnowledgeBase& kb) { record_firing(kb, "ind_3", kStamp); }), IoError);
        EXPECT_EQ(read_file(f), bytes);
    }
}

TEST(Store, ConcurrentFiringsAreNotLost) {
    TempDir dir;
    fs::path f = dir.path / "kb.kb";
    save(corpus::build_bundled_kb(), f);
    KbStore store(f);
    const std::vector<std::string> rules = {"ind_1", "ind_2", "ind_3", "ind_4", "hcv_1", "hcv_2"};
    const int per_thread = 15;
    std::vector<std::thread> threads;
    for (const auto& id : rules)
        threads.emplace_back([&, id] {
            for (int i = 0; i < per_thread; ++i)
                store.commit([&](KnowledgeBase& kb) { record_firing(kb, id, store.stamp()); });
        });
    for (auto& t : threads) t.join();
    auto reloaded = load(f);
    for (const auto& id : rules) {
        EXPECT_EQ(store.snapshot()->rule(id)->stats.firings, static_cast<std::uint64_t>(per_thread));
        EXPECT_EQ(reloaded.rule(id)->stats.firings, static_cast<std::uint64_t>(per_thread));
    }
    EXPECT_EQ(reloaded.audit.size(), 9 + rules.size() * per_thread);
}

TEST(Audit, ReplayReproducesRuleList) {
    auto kb = corpus::build_bundled_kb();
    EXPECT_EQ(replay_audit(kb.audit), serialized_rules(kb));

    record_firing(kb, "ind_2", kStamp);
    kb = experience_generalize(kb, {9, 1}, kStamp).kb;
    kb = subsume_generalize(kb, kStamp).kb;
    DiscoveryProposal p;
    p.goal = "hbv";
    p.premises = {{"symptoms", "yes"}, {"hiv", "positive"}};
    p.conclusion = {"hbv", "positive"};
    p.expert = "Dr. A";
    apply_discovery(kb, p, {false, false}, kStamp);
    apply_discovery(kb, p, {true, true}, kStamp);
    emit_induced_rules(kb, kStamp);
    EXPECT_EQ(replay_audit(kb.audit), serialized_rules(kb));

    TempDir dir;
    save(kb, dir.path / "x.kb");
    auto back = load(dir.path / "x.kb");
    EXPECT_EQ(replay_audit(back.audit), serialized_rules(back));
}

TEST(Audit, ParsesAndRejects) {
    auto e = parse_audit("AUDIT t1 expert by=\"A B\" rule_removed ids=a,b", 1);
    EXPECT_EQ(e.rule_ids, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(e.identity, "A B");
    EXPECT_THROW(parse_audit("AUDIT t1 robot rule_added ids=a", 1), ParseError);
    EXPECT_THROW(parse_audit("AUDIT t1 system exploded ids=a", 1), ParseError);
    EXPECT_THROW(parse_audit("AUDIT t1 system rule_added ids=a :: RULE broken", 1), ParseError);
}
