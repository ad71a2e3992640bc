#include "doctest.h"

#include "tilesim/explore.hpp"

using namespace tilesim;

TEST_CASE("2 cores, 1 line, loads+stores: fixpoint, no deadlock, no violation") {
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 1;
    cfg.ops_per_core = 3;
    cfg.op_set = {ExplOp::Load, ExplOp::Store};
    Explorer ex(cfg);
    auto rep = ex.run();
    INFO((rep.notes.empty() ? "" : rep.notes[0]));
    CHECK(rep.complete);
    CHECK(rep.deadlocks == 0);
    CHECK(rep.violations == 0);
    CHECK(rep.states > 10);
}

TEST_CASE("AMO pairs explore the XMW stall machinery without violations") {
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 1;
    cfg.ops_per_core = 2;
    cfg.op_set = {ExplOp::Store, ExplOp::Amo};
    Explorer ex(cfg);
    auto rep = ex.run();
    INFO((rep.notes.empty() ? "" : rep.notes[0]));
    CHECK(rep.complete);
    CHECK(rep.deadlocks == 0);
    CHECK(rep.violations == 0);
}

TEST_CASE("LR/SC exploration stays live and clean") {
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 1;
    cfg.ops_per_core = 2;
    cfg.op_set = {ExplOp::Lr, ExplOp::Sc, ExplOp::Store};
    Explorer ex(cfg);
    auto rep = ex.run();
    INFO((rep.notes.empty() ? "" : rep.notes[0]));
    CHECK(rep.complete);
    CHECK(rep.deadlocks == 0);
    CHECK(rep.violations == 0);
}

TEST_CASE("evictions and recalls survive exploration (1-way caches, 2 lines)") {
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 2;
    cfg.ops_per_core = 2;
    cfg.l2_ways = 1;
    cfg.llc_ways = 1;
    cfg.op_set = {ExplOp::Load, ExplOp::Store};
    Explorer ex(cfg);
    auto rep = ex.run();
    INFO((rep.notes.empty() ? "" : rep.notes[0]));
    CHECK(rep.complete);
    CHECK(rep.deadlocks == 0);
    CHECK(rep.violations == 0);
}

TEST_CASE("a fault-injected protocol table is caught by exploration") {
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 1;
    cfg.ops_per_core = 2;
    cfg.op_set = {ExplOp::Load, ExplOp::Store};
    cfg.faults.skip_invack_wait = true;
    Explorer ex(cfg);
    auto rep = ex.run();
    CHECK(rep.violations > 0);
}

TEST_CASE("revisits via different paths do not add states (fixpoint hash-set)") {
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 1;
    cfg.ops_per_core = 2;
    cfg.op_set = {ExplOp::Load, ExplOp::Store};
    auto r1 = Explorer(cfg).run();
    auto r2 = Explorer(cfg).run();
    CHECK(r1.states == r2.states);
    CHECK(r1.transitions == r2.transitions);
}

TEST_CASE("the restricted S-grant protocol variant also explores clean") {
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 1;
    cfg.ops_per_core = 3;
    cfg.op_set = {ExplOp::Load, ExplOp::Store};
    cfg.grant_exclusive = false;
    Explorer ex(cfg);
    auto rep = ex.run();
    INFO((rep.notes.empty() ? "" : rep.notes[0]));
    CHECK(rep.complete);
    CHECK(rep.deadlocks == 0);
    CHECK(rep.violations == 0);
}
