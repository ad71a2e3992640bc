#include "doctest.h"

#include "tilesim/config.hpp"
#include "tilesim/trace.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

using namespace tilesim;

TEST_CASE("line_split zero and one-line stride") {
    CacheGeometry g{16, 4, 1};
    auto s0 = line_split(0, g);
    CHECK(s0.tag == 0);
    CHECK(s0.set == 0);
    CHECK(s0.offset == 0);

    auto s1 = line_split(16, g);
    CHECK(s1.tag == 0);
    CHECK(s1.set == 1);
    CHECK(s1.offset == 0);
}

TEST_CASE("line_split/recompose is a bijection over random addresses") {
    // independent oracle: recomposition must reproduce the address
    std::vector<CacheGeometry> geoms = {
        {16, 4, 1}, {16, 1024, 4}, {8, 1, 2}, {64, 2048, 16}, {32, 64, 3}};
    Rng rng(0x5eed);
    for (auto& g : geoms) {
        for (int i = 0; i < 100000 / 5; ++i) {
            Addr a = rng.next() & 0xFFFFFFFFull;
            auto s = line_split(a, g);
            CHECK(s.set < g.sets);
            CHECK(s.offset < g.line_bytes);
            REQUIRE(line_recompose(s, g) == a);
        }
    }
    CacheGeometry g{16, 4, 1};
    auto s = line_split(0x12345, g);
    CHECK(line_recompose(s, g) == 0x12345);
}

TEST_CASE("plane assignment is total and separates classes") {
    auto mk = [](MsgKind k) {
        CohMsg m;
        m.kind = k;
        return m;
    };
    CHECK(plane_of(mk(MsgKind::GetS)) == 0);
    CHECK(plane_of(mk(MsgKind::GetM)) == 0);
    CHECK(plane_of(mk(MsgKind::FwdGetM)) == 1);
    CHECK(plane_of(mk(MsgKind::Inv)) == 1);
    CHECK(plane_of(mk(MsgKind::DataRsp)) == 2);
    CHECK(plane_of(mk(MsgKind::InvAck)) == 2);
    CHECK(plane_of(mk(MsgKind::WbAck)) == 2);
    CHECK(plane_of(mk(MsgKind::DmaReadBurst)) == 3);
    CHECK(plane_of(mk(MsgKind::DmaWriteBurst)) == 3);
    CHECK(plane_of(mk(MsgKind::DmaRsp)) == 4);
    CHECK(plane_of(mk(MsgKind::MmioRead)) == 5);
    CHECK(plane_of(mk(MsgKind::MmioWrite)) == 5);
    CHECK(plane_of(mk(MsgKind::Irq)) == 5);

    // requests never share a plane with their responses (deadlock avoidance)
    CHECK(plane_of(mk(MsgKind::GetS)) != plane_of(mk(MsgKind::DataRsp)));
    CHECK(plane_of(mk(MsgKind::FwdGetM)) != plane_of(mk(MsgKind::InvAck)));
    CHECK(plane_of(mk(MsgKind::DmaReadBurst)) != plane_of(mk(MsgKind::DmaRsp)));
}

TEST_CASE("word codec round-trips in both endiannesses") {
    Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
        Word v = rng.next();
        uint8_t le[8], be[8];
        store_word(le, v, Endian::Little);
        store_word(be, v, Endian::Big);
        CHECK(load_word(le, Endian::Little) == v);
        CHECK(load_word(be, Endian::Big) == v);
    }
    uint8_t buf[8];
    store_word(buf, 0x0102030405060708ull, Endian::Little);
    CHECK(buf[0] == 0x08);
    CHECK(buf[7] == 0x01);
    store_word(buf, 0x0102030405060708ull, Endian::Big);
    CHECK(buf[0] == 0x01);
    CHECK(buf[7] == 0x08);
}

TEST_CASE("amo alu semantics") {
    CHECK(amo_alu(ATOP_ADD, 5, 3) == 8);
    CHECK(amo_alu(ATOP_SWAP, 7, 9) == 9);
    CHECK(amo_alu(ATOP_AND, 0xF0, 0x3C) == 0x30);
    CHECK(amo_alu(ATOP_OR, 0xF0, 0x0F) == 0xFF);
    CHECK(amo_alu(ATOP_XOR, 0xFF, 0x0F) == 0xF0);
    // signed max: -1 loses against 3
    CHECK(amo_alu(ATOP_MAX, 3, Word(int64_t(-1))) == 3);
    CHECK(amo_alu(ATOP_MIN, 3, Word(int64_t(-1))) == Word(int64_t(-1)));
    // unsigned min: 0xFFFFFFFF is large
    CHECK(amo_alu(ATOP_MINU, 3, 0xFFFFFFFFull) == 3);
    CHECK(amo_alu(ATOP_MAXU, 3, 0xFFFFFFFFull) == 0xFFFFFFFFull);
    CHECK_THROWS_AS(amo_alu(99, 1, 2), ProtocolError);
}

TEST_CASE("config parser handles sections, errors carry line numbers") {
    std::string text = R"(
[grid]
rows = 2
cols = 2

[tiles]
0,0 = cpu
0,1 = mem
1,0 = acc
1,1 = aux

[mem]
size_bytes = 0x100000
)";
    SocConfig cfg = parse_config_string(text, "t.cfg");
    CHECK(cfg.rows == 2);
    CHECK(cfg.kind_of(0) == TileKind::Processor);
    CHECK(cfg.kind_of(1) == TileKind::Memory);
    CHECK(cfg.mem_bytes == 0x100000);

    try {
        parse_config_string("[grid]\nrows = banana\n", "bad.cfg");
        FAIL("expected a parse error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
    }
}

TEST_CASE("config invariants reject bad grids") {
    std::string no_mem = R"(
[grid]
rows = 1
cols = 2
[tiles]
0,0 = cpu
0,1 = aux
)";
    CHECK_THROWS_AS(parse_config_string(no_mem), ConfigError);

    std::string no_aux = R"(
[grid]
rows = 1
cols = 2
[tiles]
0,0 = cpu
0,1 = mem
)";
    CHECK_THROWS_AS(parse_config_string(no_aux), ConfigError);
}

TEST_CASE("address partitioning: halfway split and single tile") {
    SocConfig cfg;
    cfg.rows = 2;
    cfg.cols = 2;
    cfg.tiles = {TileKind::Processor, TileKind::Memory, TileKind::Memory, TileKind::Auxiliary};
    cfg.mem_bytes = 1 << 20;
    AddressMap amap(cfg);
    CHECK(amap.partition_of(0x7FFFF) == 0);
    CHECK(amap.partition_of(0x80000) == 1);
    CHECK(amap.home_tile(0) == 1);
    CHECK(amap.home_tile(0x80000) == 2);

    SocConfig one = cfg;
    one.tiles = {TileKind::Processor, TileKind::Memory, TileKind::Empty, TileKind::Auxiliary};
    AddressMap am1(one);
    for (Addr a = 0; a < (1 << 20); a += 0x10000) CHECK(am1.partition_of(a) == 0);
}

TEST_CASE("trace parser accepts the op grammar and rejects junk") {
    std::string t = R"(
# comment
core 0: ST 0x100 1
core 0: LD 0x100
core 1: AMOADD 0x200 5
core 1: LR 0x300
core 1: SC 0x300 7
core 0: IF 0x400
core 0: FENCE
)";
    TraceProgram p = parse_trace_string(t, "t.trace");
    REQUIRE(p.per_core.size() == 2);
    CHECK(p.per_core[0].size() == 4);
    CHECK(p.per_core[1].size() == 3);
    CHECK(p.per_core[0][0].kind == TraceOpKind::Store);
    CHECK(p.per_core[0][0].value == 1);

    CHECK_THROWS_AS(parse_trace_string("core 0: BOGUS 0x0\n"), ConfigError);
    CHECK_THROWS_AS(parse_trace_string("core 0: LD 0x3\n"), ConfigError);  // unaligned
    CHECK_THROWS_AS(parse_trace_string("core 0: LD\n"), ConfigError);
}

TEST_CASE("litmus parser: directives and observes") {
    std::string t = R"(
litmus MP
core 0: ST 0x100 1
core 0: ST 0x108 1
core 1: LD 0x108
core 1: LD 0x100
observe r 1 0
observe r 1 1
expect: oracle
)";
    LitmusTest lt = parse_litmus_string(t, "mp.litmus");
    CHECK(lt.name == "MP");
    CHECK(lt.prog.per_core.size() == 2);
    CHECK(lt.observes.size() == 2);
    CHECK(lt.expect_oracle);

    CHECK_THROWS_AS(parse_litmus_string("core 0: LD 0x0\nexpect: oracle\n"), ConfigError);
}
