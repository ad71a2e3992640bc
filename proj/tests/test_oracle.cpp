#include "doctest.h"

#include "tilesim/oracle.hpp"

using namespace tilesim;

namespace {
LitmusTest make(const std::string& text, const std::string& name = "t") {
    return parse_litmus_string(text, name);
}
}  // namespace

TEST_CASE("MP: the stale-read outcome is not sequentially consistent") {
    auto t = make(R"(
litmus MP
core 0: ST 0x100 1
core 0: ST 0x108 1
core 1: LD 0x108
core 1: LD 0x100
observe r 1 0
observe r 1 1
expect: oracle
)");
    auto allowed = ScOracle().allowed_outcomes(t);
    CHECK(allowed.count({0, 0}));
    CHECK(allowed.count({0, 1}));
    CHECK(allowed.count({1, 1}));
    CHECK_FALSE(allowed.count({1, 0}));  // y observed new, x observed old
}

TEST_CASE("CoWW: program order pins the final value") {
    auto t = make(R"(
litmus CoWW
core 0: ST 0x100 1
core 0: ST 0x100 2
observe m 0x100
expect: oracle
)");
    auto allowed = ScOracle().allowed_outcomes(t);
    REQUIRE(allowed.size() == 1);
    CHECK(allowed.count({2}));
}

TEST_CASE("two-core AMOADD(+1): final value is 2 in every interleaving") {
    auto t = make(R"(
litmus amo2
core 0: AMOADD 0x100 1
core 1: AMOADD 0x100 1
observe m 0x100
expect: oracle
)");
    auto allowed = ScOracle().allowed_outcomes(t);
    REQUIRE(allowed.size() == 1);
    CHECK(allowed.count({2}));
}

TEST_CASE("SB: at least one core observes the other's store") {
    auto t = make(R"(
litmus SB
core 0: ST 0x100 1
core 0: LD 0x108
core 1: ST 0x108 1
core 1: LD 0x100
observe r 0 0
observe r 1 0
expect: oracle
)");
    auto allowed = ScOracle().allowed_outcomes(t);
    CHECK_FALSE(allowed.count({0, 0}));
    CHECK(allowed.count({1, 1}));
    CHECK(allowed.count({0, 1}));
    CHECK(allowed.count({1, 0}));
}

TEST_CASE("LR/SC succeeds without interference, fails past a remote store") {
    auto ok = make(R"(
litmus lr_ok
core 0: LR 0x100
core 0: SC 0x100 5
observe r 0 0
observe r 0 1
observe m 0x100
expect: oracle
)");
    auto allowed = ScOracle().allowed_outcomes(ok);
    REQUIRE(allowed.size() == 1);
    CHECK(allowed.count({0, 0, 5}));  // LR read 0, SC succeeded, memory updated

    auto contended = make(R"(
litmus lr_contended
core 0: LR 0x100
core 0: SC 0x100 5
core 1: ST 0x100 9
observe r 0 1
observe m 0x100
expect: oracle
)");
    auto a2 = ScOracle().allowed_outcomes(contended);
    // store before LR or after SC: success; store in between: failure
    CHECK(a2.count({0, 5}));  // SC won, store then overwrote or came first
    CHECK(a2.count({0, 9}));
    CHECK(a2.count({1, 9}));  // interleaved store killed the reservation
    CHECK_FALSE(a2.count({1, 5}));  // a failed SC never writes
}

TEST_CASE("a remote load between LR and SC also kills the reservation") {
    auto t = make(R"(
litmus lr_vs_load
core 0: LR 0x100
core 0: SC 0x100 5
core 1: LD 0x100
observe r 0 1
expect: oracle
)");
    auto allowed = ScOracle().allowed_outcomes(t);
    CHECK(allowed.count({0}));
    CHECK(allowed.count({1}));  // the load can land inside the window
}

TEST_CASE("own instruction fetch does not end the window; own load does") {
    auto with_if = make(R"(
litmus lr_if
core 0: LR 0x100
core 0: IF 0x200
core 0: SC 0x100 5
observe r 0 1
expect: oracle
)");
    auto a1 = ScOracle().allowed_outcomes(with_if);
    REQUIRE(a1.size() == 1);
    CHECK(a1.count({0}));

    auto with_ld = make(R"(
litmus lr_ld
core 0: LR 0x100
core 0: LD 0x200
core 0: SC 0x100 5
observe r 0 2
expect: oracle
)");
    auto a2 = ScOracle().allowed_outcomes(with_ld);
    REQUIRE(a2.size() == 1);
    CHECK(a2.count({1}));  // the data access closed the window
}

TEST_CASE("oracle determinism: identical tests produce identical sets") {
    auto t = make(R"(
litmus det
core 0: ST 0x100 1
core 0: LD 0x108
core 1: ST 0x108 1
core 1: LD 0x100
observe r 0 0
observe r 1 0
expect: oracle
)");
    auto a = ScOracle().allowed_outcomes(t);
    auto b = ScOracle().allowed_outcomes(t);
    CHECK(a == b);
}

TEST_CASE("enumeration bound is enforced") {
    TraceProgram prog;
    prog.per_core.resize(1);
    for (int i = 0; i < 13; ++i) prog.per_core[0].push_back({TraceOpKind::Load, 0x100, 0});
    LitmusTest t;
    t.name = "big";
    t.prog = prog;
    t.observes.push_back({false, 0, 0, 0});
    t.expect_oracle = true;
    CHECK_THROWS_AS(ScOracle().allowed_outcomes(t), ConfigError);
}

TEST_CASE("amo min/max semantics flow through the oracle") {
    auto t = make(R"(
litmus amomax
core 0: ST 0x100 3
core 0: AMOMAX 0x100 0xFFFFFFFFFFFFFFFF
core 0: LD 0x100
observe r 0 1
expect: oracle
)");
    // operand is -1 signed: the max keeps 3
    auto allowed = ScOracle().allowed_outcomes(t);
    REQUIRE(allowed.size() == 1);
    CHECK(allowed.count({3}));
}
