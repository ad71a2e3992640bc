#include "doctest.h"

#include "tilesim/soc.hpp"

using namespace tilesim;

namespace {

// 2x2: cpu / mem / acc / aux, with an accelerator job copying+transforming
// 64 bytes from 0x1000 to 0x2000 (out[i] = in[i] + 1)
SocConfig acc_cfg(AccelMode mode) {
    SocConfig cfg;
    cfg.rows = 2;
    cfg.cols = 2;
    cfg.tiles = {TileKind::Processor, TileKind::Memory, TileKind::Accelerator,
                 TileKind::Auxiliary};
    cfg.l2_geom = {16, 16, 2};
    cfg.llc_geom = {16, 64, 4};
    cfg.l1d_geom = {16, 8, 2};
    cfg.mem_bytes = 1 << 20;
    cfg.mem_read_latency = 4;
    cfg.mem_write_latency = 4;
    AccelConfig ac;
    ac.mode = mode;
    ac.job.push_back({false, 0x1000, 64, 2});  // read, small compute delay
    ac.job.push_back({true, 0x2000, 64, 0});   // write the transformed block
    cfg.accels[2] = ac;
    return cfg;
}

TraceProgram writer_then_start(bool flush_first) {
    TraceProgram prog;
    prog.per_core.resize(1);
    auto& p = prog.per_core[0];
    for (Addr a = 0x1000; a < 0x1040; a += 8)
        p.push_back({TraceOpKind::Store, a, (a - 0x1000) / 8 + 100});
    if (flush_first) {
        p.push_back({TraceOpKind::FlushL2, 0, 0});
        p.push_back({TraceOpKind::LlcFlush, 0, 0});
    }
    p.push_back({TraceOpKind::AccStart, 0, 0});
    p.push_back({TraceOpKind::Wfi, 0, 0});
    for (Addr a = 0x2000; a < 0x2040; a += 8) p.push_back({TraceOpKind::Load, a, 0});
    return prog;
}

}  // namespace

TEST_CASE("llc-coherent accelerator observes CPU data with no flush at all") {
    SocSim soc(acc_cfg(AccelMode::LlcCoherent), 21);
    soc.set_program(writer_then_start(/*flush_first=*/false));
    auto r = soc.run();
    REQUIRE(r.quiesced);
    REQUIRE(soc.monitor.clean());  // the DMA reads were checked against the shadow
    auto& regs = soc.core(0).registers;
    REQUIRE(regs.size() == 8);
    for (size_t i = 0; i < 8; ++i) CHECK(regs[i] == i + 101);  // out = in + 1
    CHECK(soc.stats.irqs == 1);
    CHECK(soc.stats.thread_resumes == 1);
    CHECK(soc.stats.dma_lines_read == 4);
    CHECK(soc.stats.dma_lines_written == 4);
}

TEST_CASE("after an llc-coherent read burst the touched lines sit in V") {
    SocConfig cfg = acc_cfg(AccelMode::LlcCoherent);
    cfg.accels[2].job.resize(1);  // read only
    SocSim soc(cfg, 3);
    TraceProgram prog = writer_then_start(false);
    prog.per_core[0].resize(prog.per_core[0].size() - 8);  // drop the loads
    soc.set_program(prog);
    auto r = soc.run();
    REQUIRE(r.quiesced);
    REQUIRE(soc.monitor.clean());
    for (Addr a = 0x1000; a < 0x1040; a += 16) CHECK(soc.slice(0).dir_kind(a) == DirKind::V);

    // a subsequent CPU read of a V line performs zero backing-memory reads
    uint64_t reads_before = soc.slice(0).mem_reads;
    TraceProgram again;
    again.per_core.resize(1);
    again.per_core[0].push_back({TraceOpKind::Load, 0x1000, 0});
    soc.core(0).set_program(again.per_core[0]);
    auto r2 = soc.run();
    REQUIRE(r2.quiesced);
    CHECK(soc.slice(0).mem_reads == reads_before);
}

TEST_CASE("non-coherent accelerator needs the flush; with it the data is fresh") {
    SocSim soc(acc_cfg(AccelMode::NonCoherent), 31);
    soc.set_program(writer_then_start(/*flush_first=*/true));
    auto r = soc.run();
    REQUIRE(r.quiesced);
    REQUIRE_MESSAGE(soc.monitor.clean(),
                    (soc.monitor.violations.empty() ? "" : soc.monitor.violations[0].format()));
    auto& regs = soc.core(0).registers;
    REQUIRE(regs.size() == 8);
    for (size_t i = 0; i < 8; ++i) CHECK(regs[i] == i + 101);
}

TEST_CASE("non-coherent read without the flush observes stale memory") {
    SocSim soc(acc_cfg(AccelMode::NonCoherent), 33);
    soc.set_program(writer_then_start(/*flush_first=*/false));
    auto r = soc.run();
    REQUIRE(r.quiesced);
    bool stale = false;
    for (auto& v : soc.monitor.violations)
        if (v.kind == ViolationKind::StaleDma) stale = true;
    CHECK(stale);  // the harness detects the missing flush
}

TEST_CASE("fully-coherent accelerator works through its private L2") {
    SocSim soc(acc_cfg(AccelMode::FullyCoherent), 41);
    soc.set_program(writer_then_start(/*flush_first=*/false));
    auto r = soc.run();
    REQUIRE(r.quiesced);
    REQUIRE(soc.monitor.clean());
    auto& regs = soc.core(0).registers;
    REQUIRE(regs.size() == 8);
    for (size_t i = 0; i < 8; ++i) CHECK(regs[i] == i + 101);
    CHECK(soc.stats.irqs == 1);
    std::string why;
    CHECK_MESSAGE(soc.directory_accurate(&why), why);
}
