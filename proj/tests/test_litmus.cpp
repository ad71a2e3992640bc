#include "doctest.h"

#include "tilesim/litmus.hpp"
#include "tilesim/workload.hpp"

using namespace tilesim;

namespace {

SocConfig fig3_small() {
    SocConfig cfg;
    cfg.rows = 3;
    cfg.cols = 3;
    cfg.tiles = {TileKind::Processor, TileKind::Memory,    TileKind::Processor,
                 TileKind::Processor, TileKind::Empty,     TileKind::Processor,
                 TileKind::Auxiliary, TileKind::Memory,    TileKind::Empty};
    cfg.l2_geom = {16, 16, 2};
    cfg.llc_geom = {16, 64, 4};
    cfg.l1d_geom = {16, 8, 2};
    cfg.mem_bytes = 1 << 20;
    cfg.mem_read_latency = 6;
    cfg.mem_write_latency = 6;
    return cfg;
}

}  // namespace

TEST_CASE("MP passes: the forbidden outcome never appears") {
    auto t = parse_litmus_string(R"(
litmus MP
core 0: ST 0x100 1
core 0: ST 0x108 1
core 1: LD 0x108
core 1: LD 0x100
observe r 1 0
observe r 1 1
expect: oracle
)");
    auto res = run_litmus(t, fig3_small(), 60, 7);
    CHECK(res.pass);
    CHECK_FALSE(res.observed.count({1, 0}));
    CHECK(res.observed.size() >= 1);
}

TEST_CASE("AMO contention: the total always lands") {
    auto t = parse_litmus_string(R"(
litmus amo_contention
core 0: AMOADD 0x100 1
core 0: AMOADD 0x100 1
core 1: AMOADD 0x100 1
core 1: AMOADD 0x100 1
observe m 0x100
expect: oracle
)");
    auto res = run_litmus(t, fig3_small(), 40, 3);
    CHECK(res.pass);
    REQUIRE(res.observed.size() == 1);
    CHECK(res.observed.count({4}));
}

TEST_CASE("LR/SC contention stays inside the oracle's envelope") {
    auto t = parse_litmus_string(R"(
litmus lrsc_contention
core 0: LR 0x100
core 0: SC 0x100 5
core 1: ST 0x100 9
observe r 0 1
observe m 0x100
expect: oracle
)");
    auto res = run_litmus(t, fig3_small(), 60, 11);
    CHECK(res.pass);
    // a failed SC never writes: (1,5) must not be observed
    CHECK_FALSE(res.observed.count({1, 5}));
}

TEST_CASE("flush visibility: flushing mid-test perturbs nothing") {
    auto t = parse_litmus_string(R"(
litmus flush_visibility
core 0: ST 0x100 1
core 0: FLUSH
core 1: LD 0x100
core 1: LD 0x100
observe r 1 0
observe r 1 1
observe m 0x100
expect: oracle
)");
    auto res = run_litmus(t, fig3_small(), 40, 13);
    CHECK(res.pass);
    for (auto& o : res.observed) CHECK(o[2] == 1);  // the store is never lost
}

TEST_CASE("an observed-but-not-allowed outcome fails the verdict") {
    // build a fake result the runner must reject: pretend SC semantics where
    // the oracle knows better. Drive via the oracle path: impossible outcomes
    // simply never pass the subset check.
    auto t = parse_litmus_string(R"(
litmus coww
core 0: ST 0x100 1
core 0: ST 0x100 2
observe m 0x100
expect: oracle
)");
    auto res = run_litmus(t, fig3_small(), 10, 1);
    CHECK(res.pass);
    REQUIRE(res.observed.size() == 1);
    CHECK(res.observed.count({2}));
    CHECK(res.allowed.count({2}));
}

TEST_CASE("random small programs: simulated outcomes embed into the oracle") {
    // systematic cross-check of the protocol against the interleaving oracle
    // over random <=3-op-per-core two-core programs with full observation
    SocConfig cfg = fig3_small();
    Rng rng(0xF00D);
    const Addr addrs[2] = {0x100, 0x180};
    for (int trial = 0; trial < 40; ++trial) {
        LitmusTest t;
        t.name = "rand" + std::to_string(trial);
        t.prog.per_core.resize(2);
        t.expect_oracle = true;
        for (unsigned c = 0; c < 2; ++c) {
            size_t n = 1 + rng.below(3);
            for (size_t i = 0; i < n; ++i) {
                Addr a = addrs[rng.below(2)];
                switch (rng.below(6)) {
                    case 0: t.prog.per_core[c].push_back({TraceOpKind::Load, a, 0}); break;
                    case 1:
                        t.prog.per_core[c].push_back(
                            {TraceOpKind::Store, a, 1 + rng.below(5)});
                        break;
                    case 2: t.prog.per_core[c].push_back({TraceOpKind::AmoAdd, a, 1}); break;
                    case 3: t.prog.per_core[c].push_back({TraceOpKind::Lr, a, 0}); break;
                    case 4:
                        t.prog.per_core[c].push_back({TraceOpKind::Sc, a, 7 + rng.below(3)});
                        break;
                    default: t.prog.per_core[c].push_back({TraceOpKind::Ifetch, a, 0}); break;
                }
            }
        }
        // observe every register-producing op plus both memory words
        for (unsigned c = 0; c < 2; ++c) {
            unsigned regs = 0;
            for (auto& op : t.prog.per_core[c])
                if (op_produces_register(op.kind)) ++regs;
            for (unsigned i = 0; i < regs; ++i) t.observes.push_back({false, c, i, 0});
        }
        t.observes.push_back({true, 0, 0, addrs[0]});
        t.observes.push_back({true, 0, 0, addrs[1]});

        auto res = run_litmus(t, cfg, 12, uint64_t(trial) * 977 + 5);
        if (!res.pass) {
            std::string detail = t.name + ":";
            for (unsigned c = 0; c < 2; ++c)
                for (auto& op : t.prog.per_core[c])
                    detail += std::string(" c") + std::to_string(c) + ":" + mnemonic(op.kind);
            for (auto& o : res.observed)
                if (!res.allowed.count(o)) detail += " forbidden" + format_outcome(o);
            FAIL(detail);
        }
        t.observes.clear();
    }
}
