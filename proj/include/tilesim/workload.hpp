#pragma once

#include <vector>

#include "tilesim/trace.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

// Synthetic workload generators. All are deterministic in their arguments.

// Random mix of loads/stores/AMOs/LR-SC over a window of shared lines.
inline TraceProgram make_random_mixed(unsigned cores, size_t ops_per_core, unsigned num_lines,
                                      uint32_t line_bytes, uint64_t seed, Addr base = 0x1000) {
    TraceProgram prog;
    prog.per_core.resize(cores);
    for (unsigned c = 0; c < cores; ++c) {
        Rng rng(hash_combine(seed, 0x717 + c));
        auto& p = prog.per_core[c];
        bool lr_open = false;
        Addr lr_addr = 0;
        for (size_t i = 0; i < ops_per_core; ++i) {
            Addr addr = base + rng.below(num_lines) * line_bytes +
                        rng.below(line_bytes / kWordBytes) * kWordBytes;
            if (lr_open) {
                // close the pair promptly so reservations do not linger
                p.push_back({TraceOpKind::Sc, lr_addr, Word(rng.below(1000))});
                lr_open = false;
                continue;
            }
            switch (rng.below(10)) {
                case 0:
                case 1:
                case 2:
                case 3: p.push_back({TraceOpKind::Load, addr, 0}); break;
                case 4:
                case 5:
                case 6: p.push_back({TraceOpKind::Store, addr, Word(c * 1000000 + i)}); break;
                case 7: p.push_back({TraceOpKind::AmoAdd, addr, 1}); break;
                case 8: p.push_back({TraceOpKind::AmoSwap, addr, Word(c * 1000000 + i)}); break;
                default:
                    p.push_back({TraceOpKind::Lr, addr, 0});
                    lr_open = true;
                    lr_addr = addr;
                    break;
            }
        }
        if (lr_open) p.push_back({TraceOpKind::Sc, lr_addr, 7});
    }
    return prog;
}

// n AMOADD(+1) per core on one shared word.
inline TraceProgram make_amo_counter(unsigned cores, size_t per_core, Addr addr) {
    TraceProgram prog;
    prog.per_core.resize(cores);
    for (unsigned c = 0; c < cores; ++c)
        for (size_t i = 0; i < per_core; ++i)
            prog.per_core[c].push_back({TraceOpKind::AmoAdd, addr, 1});
    return prog;
}

// n lock-protected non-atomic increments per core (LR/SC spinlock).
inline TraceProgram make_spinlock_counter(unsigned cores, size_t per_core, Addr lock_addr,
                                          Addr counter_addr) {
    TraceProgram prog;
    prog.per_core.resize(cores);
    for (unsigned c = 0; c < cores; ++c)
        for (size_t i = 0; i < per_core; ++i) {
            prog.per_core[c].push_back({TraceOpKind::Lock, lock_addr, 0});
            prog.per_core[c].push_back({TraceOpKind::Inc, counter_addr, 0});
            prog.per_core[c].push_back({TraceOpKind::Unlock, lock_addr, 0});
        }
    return prog;
}

// Graph-traversal-style workload: a fixed vertex set is split across the
// cores; each vertex visit reads the shared frontier word, loads the
// per-vertex adjacency data from the core's private partition, and marks
// shared visited words with AMOs. Total work is constant across core counts
// (strong scaling).
struct GraphWorkload {
    unsigned vertices = 256;
    unsigned degree = 4;
    uint64_t seed = 42;
    uint32_t line_bytes = 16;
    Addr frontier_base = 0x10000;  // shared
    Addr visited_base = 0x20000;   // shared, AMO-marked
    Addr data_base = 0x40000;      // per-core private regions

    TraceProgram build(unsigned cores) const {
        TraceProgram prog;
        prog.per_core.resize(cores);
        Rng graph_rng(seed);
        // adjacency is a fixed function of the seed, independent of cores
        std::vector<std::vector<unsigned>> adj(vertices);
        for (unsigned v = 0; v < vertices; ++v)
            for (unsigned d = 0; d < degree; ++d) adj[v].push_back(unsigned(graph_rng.below(vertices)));

        for (unsigned v = 0; v < vertices; ++v) {
            unsigned c = v % cores;
            auto& p = prog.per_core[c];
            p.push_back({TraceOpKind::Load, frontier_base + Addr(v) * kWordBytes, 0});
            for (unsigned u : adj[v]) {
                // private adjacency and weight data: distinct region per core
                Addr priv = data_base + Addr(c) * 0x8000;
                p.push_back({TraceOpKind::Load, priv + Addr(u % 512) * kWordBytes, 0});
                p.push_back({TraceOpKind::Load, priv + 0x2000 + Addr((u * 7) % 701) * kWordBytes, 0});
                p.push_back({TraceOpKind::Load, priv + 0x4000 + Addr((u * 13) % 701) * kWordBytes, 0});
                p.push_back({TraceOpKind::Store, priv + 0x6000 + Addr(u % 512) * kWordBytes, u});
                p.push_back({TraceOpKind::AmoOr, visited_base + Addr(u) * kWordBytes, 1});
            }
            p.push_back({TraceOpKind::Store, frontier_base + Addr(v) * kWordBytes, v + 1});
        }
        return prog;
    }
};

}  // namespace tilesim
