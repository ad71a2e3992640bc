// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Argument: the repository root (for configs/ and litmus/).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "tilesim/tilesim.hpp"

using namespace tilesim;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int idx, const char* what, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", idx, what,
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// evaluation topology with the hardware cache capacities (64KB L2s, two
// 512KB LLC slices)
SocConfig fig3_config(const fs::path& root) {
    std::ifstream in(root / "configs" / "fig3.cfg");
    if (!in) throw ConfigError("missing configs/fig3.cfg");
    return parse_config(in, "fig3.cfg");
}

// same tile layout with small caches, for the long soaks
SocConfig fig3_small_config(const fs::path& root) {
    std::ifstream in(root / "configs" / "litmus3x3.cfg");
    if (!in) throw ConfigError("missing configs/litmus3x3.cfg");
    return parse_config(in, "litmus3x3.cfg");
}

SocConfig accel_config(AccelMode mode) {
    SocConfig cfg;
    cfg.rows = 2;
    cfg.cols = 2;
    cfg.tiles = {TileKind::Processor, TileKind::Memory, TileKind::Accelerator,
                 TileKind::Auxiliary};
    cfg.l2_geom = {16, 64, 2};
    cfg.llc_geom = {16, 256, 4};
    cfg.l1d_geom = {16, 8, 2};
    cfg.mem_bytes = 1 << 20;
    cfg.mem_read_latency = 12;
    cfg.mem_write_latency = 12;
    AccelConfig ac;
    ac.mode = mode;
    ac.job.push_back({false, 0x1000, 256, 4});
    ac.job.push_back({true, 0x2000, 256, 0});
    cfg.accels[2] = ac;
    return cfg;
}

// --------------------------------------------------------------------------
// 1. litmus soundness
// --------------------------------------------------------------------------

void criterion_litmus(const fs::path& root, uint64_t seeds_per_test) {
    auto t0 = std::chrono::steady_clock::now();
    SocConfig cfg = fig3_config(root);
    std::vector<std::string> files;
    for (auto& e : fs::directory_iterator(root / "litmus"))
        if (e.path().extension() == ".litmus") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());

    bool pass = files.size() >= 10;
    std::string detail;
    if (!pass) detail = "corpus smaller than 10 tests";
    for (auto& path : files) {
        std::ifstream in(path);
        LitmusTest t = parse_litmus(in, path);
        auto res = run_litmus(t, cfg, seeds_per_test, 0xACC);
        if (!res.pass) {
            pass = false;
            detail += t.name + " failed";
            for (auto& o : res.observed)
                if (!res.allowed.count(o)) detail += " forbidden" + format_outcome(o);
            if (!res.violations.empty()) detail += " " + res.violations[0].format();
            break;
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu tests x %llu seeds in %.1fs", files.size(),
                  (unsigned long long)seeds_per_test, seconds_since(t0));
    report(1, "litmus soundness: observed outcomes within the SC oracle", pass,
           detail.empty() ? buf : detail);
}

// --------------------------------------------------------------------------
// 2. atomicity
// --------------------------------------------------------------------------

void criterion_atomicity(const fs::path& root) {
    SocConfig cfg = fig3_small_config(root);
    bool pass = true;
    std::string detail;

    {
        SocSim soc(cfg, 1);
        soc.set_program(make_amo_counter(4, 1000, 0x8000));
        auto r = soc.run();
        Word final_val = soc.monitor.shadow_word(0x8000);
        if (!r.quiesced || !soc.monitor.clean() || final_val != 4000) {
            pass = false;
            detail += "amo counter ended at " + std::to_string(final_val);
        }
    }
    {
        SocSim soc(cfg, 2);
        soc.set_program(make_spinlock_counter(4, 1000, 0x9000, 0x9100));
        auto r = soc.run();
        Word final_val = soc.monitor.shadow_word(0x9100);
        if (!r.quiesced || !soc.monitor.clean() || final_val != 4000) {
            pass = false;
            detail += " spinlock counter ended at " + std::to_string(final_val) +
                      (r.quiesced ? "" : " (no quiescence)");
        }
    }
    report(2, "atomicity: 4x1000 AMOADD and LR/SC spinlock both total 4000", pass, detail);
}

// --------------------------------------------------------------------------
// 3. monitors: clean soak + fault sensitivity
// --------------------------------------------------------------------------

void criterion_monitors(const fs::path& root) {
    SocConfig cfg = fig3_small_config(root);
    bool pass = true;
    std::string detail;

    {
        // 10^5 mixed ops over 64 shared lines on 4 cores
        TraceProgram prog = make_random_mixed(4, 25000, 64, cfg.l2_geom.line_bytes, 0x50AC);
        SocSim soc(cfg, 3);
        soc.set_program(prog);
        auto r = soc.run();
        if (!r.quiesced || !soc.monitor.violations.empty()) {
            pass = false;
            detail = "clean soak raised " + std::to_string(soc.monitor.violations.size()) +
                     " violations";
            if (!soc.monitor.violations.empty())
                detail += ": " + soc.monitor.violations[0].format();
        }
    }

    auto faulty = [&](FaultPlan f, const char* name, TraceProgram prog) {
        SocSim soc(cfg, 4, f);
        soc.set_program(prog);
        soc.run();
        if (soc.monitor.violations.empty()) {
            pass = false;
            detail += std::string(" fault ") + name + " went undetected;";
        }
    };
    {
        TraceProgram prog;
        prog.per_core.resize(2);
        for (int i = 0; i < 10; ++i) {
            prog.per_core[0].push_back({TraceOpKind::Store, 0x100, Word(i)});
            prog.per_core[1].push_back({TraceOpKind::Store, 0x100, Word(100 + i)});
        }
        FaultPlan f;
        f.duplicate_m = true;
        faulty(f, "duplicate-m", prog);
    }
    {
        FaultPlan f;
        f.drop_datarsp_nth = 2;
        faulty(f, "drop-response", make_random_mixed(4, 10, 4, 16, 7));
    }
    {
        TraceProgram prog;
        prog.per_core.resize(2);
        for (int i = 0; i < 12; ++i) prog.per_core[1].push_back({TraceOpKind::Load, 0x200, 0});
        prog.per_core[0].push_back({TraceOpKind::Load, 0x200, 0});
        for (int i = 0; i < 6; ++i)
            prog.per_core[0].push_back({TraceOpKind::Store, 0x200, Word(i)});
        FaultPlan f;
        f.skip_invack_wait = true;
        faulty(f, "skip-invack", prog);
    }
    report(3, "monitors: clean 1e5-op soak, seeded faults all detected", pass, detail);
}

// --------------------------------------------------------------------------
// 4. Valid-state semantics after an LLC-coherent DMA read
// --------------------------------------------------------------------------

void criterion_valid_state(const fs::path&) {
    SocConfig cfg = accel_config(AccelMode::LlcCoherent);
    cfg.accels[2].job.resize(1);  // read burst only
    SocSim soc(cfg, 5);

    TraceProgram prog;
    prog.per_core.resize(1);
    for (Addr a = 0x1000; a < 0x1100; a += 8)
        prog.per_core[0].push_back({TraceOpKind::Store, a, (a >> 3) & 0xff});
    prog.per_core[0].push_back({TraceOpKind::AccStart, 0, 0});
    prog.per_core[0].push_back({TraceOpKind::Wfi, 0, 0});
    soc.set_program(prog);
    auto r = soc.run();

    bool pass = r.quiesced && soc.monitor.clean();
    std::string detail;
    for (Addr a = 0x1000; a < 0x1100; a += 16)
        if (soc.slice(0).dir_kind(a) != DirKind::V) {
            pass = false;
            detail = "line not in V after the burst";
        }

    // a subsequent CPU read of every touched line must cost zero memory reads
    uint64_t reads_before = soc.slice(0).mem_reads;
    std::vector<TraceOp> again;
    for (Addr a = 0x1000; a < 0x1100; a += 16) again.push_back({TraceOpKind::Load, a, 0});
    soc.core(0).set_program(again);
    auto r2 = soc.run();
    uint64_t delta = soc.slice(0).mem_reads - reads_before;
    if (!r2.quiesced || delta != 0) {
        pass = false;
        detail += " cpu reread issued " + std::to_string(delta) + " memory reads";
    }
    report(4, "Valid state: DMA leaves lines in V, reread costs 0 memory reads", pass, detail);
}

// --------------------------------------------------------------------------
// 5. flush correctness
// --------------------------------------------------------------------------

void criterion_flush(const fs::path&) {
    bool pass = true;
    std::string detail;

    {
        SocConfig cfg = accel_config(AccelMode::NonCoherent);
        SocSim soc(cfg, 6);
        TraceProgram prog;
        prog.per_core.resize(1);
        auto& p = prog.per_core[0];
        for (Addr a = 0x1000; a < 0x1100; a += 8)
            p.push_back({TraceOpKind::Store, a, 0xA000 + ((a >> 3) & 0xff)});
        p.push_back({TraceOpKind::FlushL2, 0, 0});
        p.push_back({TraceOpKind::LlcFlush, 0, 0});
        p.push_back({TraceOpKind::AccStart, 0, 0});
        p.push_back({TraceOpKind::Wfi, 0, 0});
        soc.set_program(prog);
        auto r = soc.run();

        // handshake order: any flush writeback before flush_done would have
        // been recorded as a violation by the monitor
        if (!r.quiesced || !soc.monitor.clean()) {
            pass = false;
            detail = "flushed non-coherent flow raised violations";
            if (!soc.monitor.violations.empty())
                detail += ": " + soc.monitor.violations[0].format();
        }
        // after the L1/L2/LLC flush sequence the backing memory must equal
        // the serialized image byte for byte
        auto mem = soc.memory_image();
        auto img = soc.monitor.shadow_image(cfg.mem_bytes, cfg.endian);
        if (mem != img) {
            pass = false;
            detail += " memory image differs from the serialized image";
        }
    }
    {
        // negative: skipping the flushes leaves the accelerator reading stale
        SocConfig cfg = accel_config(AccelMode::NonCoherent);
        SocSim soc(cfg, 7);
        TraceProgram prog;
        prog.per_core.resize(1);
        auto& p = prog.per_core[0];
        for (Addr a = 0x1000; a < 0x1100; a += 8)
            p.push_back({TraceOpKind::Store, a, 0xB000 + ((a >> 3) & 0xff)});
        p.push_back({TraceOpKind::AccStart, 0, 0});
        p.push_back({TraceOpKind::Wfi, 0, 0});
        soc.set_program(prog);
        soc.run();
        bool stale = false;
        for (auto& v : soc.monitor.violations)
            if (v.kind == ViolationKind::StaleDma) stale = true;
        if (!stale) {
            pass = false;
            detail += " missing-flush staleness went undetected";
        }
    }
    report(5, "flush: ordered handshake, byte-exact memory image, staleness caught", pass,
           detail);
}

// --------------------------------------------------------------------------
// 6. exhaustive exploration
// --------------------------------------------------------------------------

void criterion_explore() {
    auto t0 = std::chrono::steady_clock::now();
    ExploreConfig cfg;
    cfg.cores = 2;
    cfg.lines = 1;
    cfg.ops_per_core = 3;
    cfg.op_set = {ExplOp::Load, ExplOp::Store, ExplOp::Amo, ExplOp::Lr, ExplOp::Sc};
    cfg.max_states = 10000000;
    Explorer ex(cfg);
    auto rep = ex.run();
    bool pass = rep.complete && rep.deadlocks == 0 && rep.violations == 0 &&
                rep.states <= 10000000;
    std::string detail;
    if (!pass && !rep.notes.empty()) detail = rep.notes[0];

    // eviction/recall stress: direct-mapped caches over two lines
    ExploreConfig ev = cfg;
    ev.lines = 2;
    ev.ops_per_core = 2;
    ev.l2_ways = 1;
    ev.llc_ways = 1;
    Explorer ex2(ev);
    auto rep2 = ex2.run();
    if (!(rep2.complete && rep2.deadlocks == 0 && rep2.violations == 0)) {
        pass = false;
        if (!rep2.notes.empty()) detail += " eviction-stress: " + rep2.notes[0];
    }

    // two contended lines, full op set: the deepest space in the gate
    ExploreConfig wide = cfg;
    wide.lines = 2;
    Explorer ex3(wide);
    auto rep3 = ex3.run();
    if (!(rep3.complete && rep3.deadlocks == 0 && rep3.violations == 0 &&
          rep3.states <= 10000000)) {
        pass = false;
        if (!rep3.notes.empty()) detail += " two-line: " + rep3.notes[0];
    }

    char buf[220];
    std::snprintf(buf, sizeof buf, "%llu + %llu + %llu states, %llu transitions in %.1fs",
                  (unsigned long long)rep.states, (unsigned long long)rep2.states,
                  (unsigned long long)rep3.states,
                  (unsigned long long)(rep.transitions + rep2.transitions + rep3.transitions),
                  seconds_since(t0));
    if (detail.empty()) detail = buf;
    report(6, "exploration to fixpoint: 0 deadlocks, 0 violations", pass, detail);
}

// --------------------------------------------------------------------------
// 7. NoC timing
// --------------------------------------------------------------------------

void criterion_noc() {
    bool pass = true;
    std::string detail;

    // exact Manhattan latency over every ordered pair of a 4x4 grid
    for (TileId src = 0; src < 16 && pass; ++src) {
        for (TileId dst = 0; dst < 16 && pass; ++dst) {
            if (src == dst) continue;
            Mesh mesh(4, 4, 4, 1);
            uint64_t cycle = 0;
            CohMsg m;
            m.kind = MsgKind::GetS;
            m.src = src;
            m.dst = dst;
            mesh.inject(m, cycle);
            int d = manhattan(mesh.coord_of(src), mesh.coord_of(dst));
            bool delivered = false;
            for (int k = 0; k < 16 && !delivered; ++k) {
                ++cycle;
                mesh.step(cycle);
                for (TileId t = 0; t < 16; ++t) {
                    auto& ib = mesh.inbox(t);
                    while (!ib.empty()) {
                        if (cycle != ib.front().injected_cycle + uint64_t(d)) {
                            pass = false;
                            detail = "latency mismatch";
                        }
                        delivered = true;
                        ib.pop_front();
                    }
                }
            }
            if (!delivered) {
                pass = false;
                detail = "probe lost";
            }
        }
    }

    // FIFO per (src,dst,plane) under saturation
    Mesh mesh(4, 4, 2, 3);
    Rng rng(41);
    std::map<std::pair<TileId, TileId>, uint64_t> last_seq;
    uint64_t cycle = 0, injected = 0, received = 0;
    std::deque<CohMsg> backlog;
    while (received < 20000) {
        for (int k = 0; k < 6 && injected < 20000; ++k) {
            TileId s = TileId(rng.below(16));
            TileId d = TileId(rng.below(16));
            if (s == d) continue;
            CohMsg m;
            m.kind = MsgKind::GetS;
            m.src = s;
            m.dst = d;
            backlog.push_back(m);
            ++injected;
        }
        std::deque<CohMsg> keep;
        while (!backlog.empty()) {
            CohMsg m = backlog.front();
            backlog.pop_front();
            if (!mesh.inject(m, cycle)) keep.push_back(m);
        }
        backlog = std::move(keep);
        ++cycle;
        mesh.step(cycle);
        for (TileId t = 0; t < 16; ++t) {
            auto& ib = mesh.inbox(t);
            while (!ib.empty()) {
                auto key = std::make_pair(ib.front().src, ib.front().dst);
                auto it = last_seq.find(key);
                if (it != last_seq.end() && ib.front().seq <= it->second) {
                    pass = false;
                    detail = "FIFO order broken under saturation";
                }
                last_seq[key] = ib.front().seq;
                ib.pop_front();
                ++received;
            }
        }
        if (cycle > 2000000) {
            pass = false;
            detail = "soak did not drain";
            break;
        }
    }
    report(7, "NoC: latency equals Manhattan distance exactly; FIFO holds in soak", pass,
           detail);
}

// --------------------------------------------------------------------------
// 8. scaling trend
// --------------------------------------------------------------------------

void criterion_scale(const fs::path& root) {
    SocConfig cfg = fig3_small_config(root);
    GraphWorkload wl;
    double cycles1 = 0, n2 = 0, n4 = 0;
    bool pass = true;
    std::string detail;
    for (unsigned c : {1u, 2u, 4u}) {
        SocSim soc(cfg, 8);
        soc.set_program(wl.build(c));
        auto r = soc.run();
        if (!r.quiesced || !soc.monitor.clean()) {
            pass = false;
            detail = "workload run failed";
            break;
        }
        if (c == 1) cycles1 = double(r.cycles);
        if (c == 2) n2 = double(r.cycles) / cycles1;
        if (c == 4) n4 = double(r.cycles) / cycles1;
    }
    if (pass) {
        if (!(n2 < 1.0 && n4 < n2)) {
            pass = false;
            detail = "normalized time not strictly decreasing";
        }
        if (n4 >= 0.75) {
            pass = false;
            detail += " 4-core normalized time too high";
        }
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "normalized 2-core %.3f, 4-core %.3f (hardware reference: 0.58 / 0.34)",
                      n2, n4);
        if (detail.empty()) detail = buf;
    }
    report(8, "scaling: strictly decreasing, 4-core < 0.75", pass, detail);
}

// --------------------------------------------------------------------------
// 9. determinism
// --------------------------------------------------------------------------

void criterion_determinism(const fs::path& root) {
    SocConfig cfg = fig3_small_config(root);
    TraceProgram prog = make_random_mixed(4, 2000, 32, 16, 0xDE7);
    auto run_once = [&] {
        SocSim soc(cfg, 1234);
        soc.set_program(prog);
        soc.run();
        std::ostringstream os;
        soc.stats.emit(os);
        return os.str();
    };
    std::string a = run_once();
    std::string b = run_once();
    report(9, "determinism: byte-identical stats for identical (config, trace, seed)",
           a == b && !a.empty());
}

}  // namespace

int main(int argc, char** argv) {
    fs::path root = argc > 1 ? fs::path(argv[1]) : fs::current_path();
    uint64_t litmus_seeds = 1000;
    if (const char* env = std::getenv("ACCEPT_LITMUS_SEEDS")) litmus_seeds = std::stoull(env);

    auto t0 = std::chrono::steady_clock::now();
    try {
        criterion_litmus(root, litmus_seeds);
        criterion_atomicity(root);
        criterion_monitors(root);
        criterion_valid_state(root);
        criterion_flush(root);
        criterion_explore();
        criterion_noc();
        criterion_scale(root);
        criterion_determinism(root);
    } catch (const std::exception& e) {
        std::printf("[FAIL] acceptance aborted: %s\n", e.what());
        return 1;
    }
    std::printf("acceptance: %s (%.1fs total)\n", g_failures == 0 ? "all criteria hold" : "FAILURES",
                seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
