#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "tilesim/types.hpp"

namespace tilesim {

struct NocPlaneStats {
    uint64_t packets = 0;
    uint64_t delivered = 0;
    uint64_t latency_sum = 0;
};

// One record per run; emitted as fixed-order key=value lines so identical
// (config, trace, seed) runs produce byte-identical output.
struct RunStats {
    uint64_t cycles = 0;
    std::vector<uint64_t> retired;  // per core

    uint64_t l1d_hits = 0, l1d_misses = 0;
    uint64_t l2_hits = 0, l2_misses = 0;
    uint64_t llc_hits = 0, llc_misses = 0, llc_v_hits = 0;
    uint64_t mem_reads = 0, mem_writes = 0;
    uint64_t inval_sent = 0, inval_l1_hits = 0, inval_ignored = 0, icache_inval_noops = 0;
    uint64_t sc_success = 0, sc_fail = 0;
    uint64_t l2_flushes = 0, llc_flushes = 0;
    uint64_t dma_lines_read = 0, dma_lines_written = 0;
    uint64_t irqs = 0, thread_resumes = 0;
    NocPlaneStats noc[kNumPlanes];

    void emit(std::ostream& os) const {
        os << "cycles=" << cycles << "\n";
        for (size_t i = 0; i < retired.size(); ++i)
            os << "retired_core" << i << "=" << retired[i] << "\n";
        os << "l1d_hits=" << l1d_hits << "\n";
        os << "l1d_misses=" << l1d_misses << "\n";
        os << "l2_hits=" << l2_hits << "\n";
        os << "l2_misses=" << l2_misses << "\n";
        os << "llc_hits=" << llc_hits << "\n";
        os << "llc_misses=" << llc_misses << "\n";
        os << "llc_v_hits=" << llc_v_hits << "\n";
        os << "mem_reads=" << mem_reads << "\n";
        os << "mem_writes=" << mem_writes << "\n";
        os << "inval_sent=" << inval_sent << "\n";
        os << "inval_l1_hits=" << inval_l1_hits << "\n";
        os << "inval_ignored=" << inval_ignored << "\n";
        os << "icache_inval_noops=" << icache_inval_noops << "\n";
        os << "sc_success=" << sc_success << "\n";
        os << "sc_fail=" << sc_fail << "\n";
        os << "l2_flushes=" << l2_flushes << "\n";
        os << "llc_flushes=" << llc_flushes << "\n";
        os << "dma_lines_read=" << dma_lines_read << "\n";
        os << "dma_lines_written=" << dma_lines_written << "\n";
        os << "irqs=" << irqs << "\n";
        os << "thread_resumes=" << thread_resumes << "\n";
        for (int p = 0; p < kNumPlanes; ++p) {
            os << "noc_plane" << p << "_packets=" << noc[p].packets << "\n";
            char buf[32];
            double mean = noc[p].delivered
                              ? double(noc[p].latency_sum) / double(noc[p].delivered)
                              : 0.0;
            std::snprintf(buf, sizeof buf, "%.3f", mean);
            os << "noc_plane" << p << "_mean_latency=" << buf << "\n";
        }
    }
};

}  // namespace tilesim
