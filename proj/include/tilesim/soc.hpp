#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <sstream>
#include <vector>

#include "tilesim/accel.hpp"
#include "tilesim/config.hpp"
#include "tilesim/core.hpp"
#include "tilesim/l2.hpp"
#include "tilesim/llc.hpp"
#include "tilesim/monitor.hpp"
#include "tilesim/noc.hpp"
#include "tilesim/stats.hpp"
#include "tilesim/trace.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

// Memory-tile index servicing an address: equal contiguous partitions over
// the configured memory size, in tile raster order. Transparent to software;
// trace ops never name a tile.
inline size_t partition_target(Addr addr, const AddressMap& amap) {
    return amap.partition_of(addr);
}

// Round-trip helpers between a component's bus-level message and the packet
// the mesh carries; the proxy also resolves address-routed destinations.
inline Packet proxy_inject(const CohMsg& msg, const AddressMap& amap, uint64_t cycle) {
    Packet p;
    p.msg = msg;
    if (p.msg.dst == kNoTile) {
        switch (msg.kind) {
            case MsgKind::GetS:
            case MsgKind::GetM:
            case MsgKind::PutS:
            case MsgKind::PutM:
            case MsgKind::DmaReadBurst:
            case MsgKind::DmaWriteBurst: p.msg.dst = amap.home_tile(msg.addr); break;
            case MsgKind::MmioRead:
            case MsgKind::MmioWrite: {
                auto t = amap.resolve_mmio(msg.addr);
                p.msg.dst = t ? t->tile : kNoTile;
                break;
            }
            case MsgKind::Irq: p.msg.dst = amap.aux_tile; break;
            default: break;
        }
    }
    p.plane = uint8_t(plane_of(p.msg));
    p.src = p.msg.src;
    p.dst = p.msg.dst;
    p.injected_cycle = cycle;
    return p;
}

inline CohMsg proxy_eject(const Packet& p) { return p.msg; }

// ---------------------------------------------------------------------------
// The assembled SoC
// ---------------------------------------------------------------------------

class SocSim {
public:
    struct Tile {
        TileKind kind = TileKind::Empty;
        std::unique_ptr<CoreModel> core;
        std::unique_ptr<L2Controller> l2;
        std::unique_ptr<LlcSlice> llc;
        std::unique_ptr<AcceleratorModel> acc;
    };

    SocSim(const SocConfig& cfg, uint64_t seed = 0, FaultPlan faults = {},
           bool litmus_skew = false)
        : cfg_(cfg), faults_(faults), amap_(cfg), mesh_(uint16_t(cfg.rows), uint16_t(cfg.cols),
                                                       cfg.router_queue_depth, seed) {
        cfg_.validate();
        tiles_.resize(cfg_.tile_count());
        Rng rng(hash_combine(seed, 0x50c));
        unsigned core_idx = 0;
        size_t mem_idx = 0;
        for (TileId t = 0; t < cfg_.tile_count(); ++t) {
            Tile& tile = tiles_[t];
            tile.kind = cfg_.kind_of(t);
            switch (tile.kind) {
                case TileKind::Processor: {
                    tile.l2 = std::make_unique<L2Controller>(t, cfg_.l2_geom, cfg_.l2_mshrs,
                                                             cfg_.endian, amap_, &monitor, &stats,
                                                             &faults_);
                    tile.core = std::make_unique<CoreModel>(core_idx, t, cfg_, amap_, &monitor,
                                                            &stats, seed);
                    if (litmus_skew) tile.core->set_skew(uint32_t(rng.below(16)));
                    core_tiles_.push_back(t);
                    ++core_idx;
                    break;
                }
                case TileKind::Memory: {
                    tile.llc = std::make_unique<LlcSlice>(t, mem_idx, cfg_, amap_, &monitor,
                                                          &stats, &faults_);
                    ++mem_idx;
                    break;
                }
                case TileKind::Accelerator: {
                    auto it = cfg_.accels.find(t);
                    AccelConfig ac = it != cfg_.accels.end() ? it->second : AccelConfig{};
                    tile.acc = std::make_unique<AcceleratorModel>(t, ac, cfg_.llc_geom.line_bytes,
                                                                  cfg_.endian, amap_, &stats);
                    if (ac.mode == AccelMode::FullyCoherent)
                        tile.l2 = std::make_unique<L2Controller>(t, cfg_.l2_geom, cfg_.l2_mshrs,
                                                                 cfg_.endian, amap_, &monitor,
                                                                 &stats, &faults_);
                    break;
                }
                default: break;  // Auxiliary / Empty: router-only
            }
        }
        stats.retired.assign(core_tiles_.size(), 0);
    }

    GlobalMonitor monitor;
    RunStats stats;

    size_t num_cores() const { return core_tiles_.size(); }
    CoreModel& core(size_t i) { return *tiles_[core_tiles_[i]].core; }
    L2Controller& core_l2(size_t i) { return *tiles_[core_tiles_[i]].l2; }
    LlcSlice& slice(size_t i) { return *tiles_[amap_.mem_tiles[i]].llc; }
    size_t num_slices() const { return amap_.mem_tiles.size(); }
    Mesh& mesh() { return mesh_; }
    const AddressMap& amap() const { return amap_; }
    uint64_t now() const { return cycle_; }

    void set_program(const TraceProgram& prog) {
        if (prog.per_core.size() > core_tiles_.size())
            throw ConfigError("trace names more cores than processor tiles");
        for (size_t i = 0; i < prog.per_core.size(); ++i)
            core(i).set_program(prog.per_core[i]);
    }

    struct RunResult {
        bool quiesced = false;
        uint64_t cycles = 0;
    };

    RunResult run() {
        TS_LOG(1, "run: " << core_tiles_.size() << " cores, " << amap_.mem_tiles.size()
                          << " slices, grid " << cfg_.rows << "x" << cfg_.cols);
        uint64_t last_progress_cycle = cycle_;
        uint64_t last_retired = ~0ull;
        while (cycle_ < cfg_.max_cycles) {
            if (quiescent()) {
                finalize_stats();
                TS_LOG(1, "run: quiesced at cycle " << cycle_ << ", "
                                                    << total_retired() << " ops retired");
                return {true, cycle_};
            }
            cycle_once();
            uint64_t r = total_retired() + accel_jobs_done();
            if (r != last_retired) {
                last_retired = r;
                last_progress_cycle = cycle_;
            } else if (cycle_ - last_progress_cycle > cfg_.liveness_bound) {
                monitor.report_deadlock("no retirement progress within the liveness bound");
                report_stuck();
                finalize_stats();
                return {false, cycle_};
            }
        }
        monitor.report_deadlock("max cycle budget exhausted");
        report_stuck();
        finalize_stats();
        return {false, cycle_};
    }

    void cycle_once() {
        monitor.now = cycle_;
        mesh_.step(cycle_);
        for (TileId t = 0; t < TileId(tiles_.size()); ++t) {
            Tile& tile = tiles_[t];
            // deliver ejected packets to the tile's components
            auto& ib = mesh_.inbox(t);
            while (!ib.empty()) {
                CohMsg m = proxy_eject(ib.front());
                ib.pop_front();
                dispatch(t, tile, m);
            }
            if (tile.core) tile.core->step(*tile.l2, cycle_);
            if (tile.l2) {
                tile.l2->step();
                // AC-channel snoops reach the L1 within the tile; a
                // fully-coherent accelerator has no L1, so they are ignored
                for (auto& s : tile.l2->snoop_outbox) {
                    if (tile.core) tile.core->l1_snoop(s.addr, s.perm);
                    else stats.inval_ignored++;
                }
                tile.l2->snoop_outbox.clear();
            }
            if (tile.llc) tile.llc->step();
            if (tile.acc) tile.acc->step(tile.l2.get());
            // inject produced messages
            if (tile.core) drain_outbox(t, tile.core->outbox);
            if (tile.l2) drain_outbox(t, tile.l2->outbox);
            if (tile.llc) drain_outbox(t, tile.llc->outbox);
            if (tile.acc) drain_outbox(t, tile.acc->outbox);
        }
        ++cycle_;
    }

    bool quiescent() const {
        if (!mesh_.idle()) return false;
        for (auto& tile : tiles_) {
            if (tile.core && !tile.core->done()) return false;
            if (tile.l2 && tile.l2->busy()) return false;
            if (tile.llc && tile.llc->busy()) return false;
            if (tile.acc && tile.acc->busy()) return false;
        }
        return true;
    }

    uint64_t total_retired() const {
        uint64_t n = 0;
        for (TileId t : core_tiles_) n += tiles_[t].core->retired;
        return n;
    }

    // Full backing-memory image across the partitions, for flush checks.
    std::vector<uint8_t> memory_image() const {
        std::vector<uint8_t> img(cfg_.mem_bytes, 0);
        for (size_t i = 0; i < amap_.mem_tiles.size(); ++i) {
            const LlcSlice& s = *tiles_[amap_.mem_tiles[i]].llc;
            std::copy(s.memory.begin(), s.memory.end(), img.begin() + long(amap_.partition_base(i)));
        }
        return img;
    }

    // Directory contents must match the union of L2 states once quiescent.
    bool directory_accurate(std::string* why = nullptr) const {
        std::map<Addr, std::pair<TileId, std::vector<TileId>>> l2_view;  // owner, sharers
        for (TileId t : core_tiles_) l2_view_collect(t, l2_view);
        for (auto& tile : tiles_)
            if (tile.kind == TileKind::Accelerator && tile.l2)
                l2_view_collect(tile.l2->tile(), l2_view);

        bool ok = true;
        for (size_t i = 0; i < amap_.mem_tiles.size() && ok; ++i) {
            const LlcSlice& s = *tiles_[amap_.mem_tiles[i]].llc;
            s.for_each_entry([&](Addr laddr, const LlcSlice::Frame& f) {
                auto it = l2_view.find(laddr);
                TileId owner = it != l2_view.end() ? it->second.first : kNoTile;
                std::vector<TileId> sharers = it != l2_view.end() ? it->second.second
                                                                  : std::vector<TileId>{};
                bool good = true;
                switch (f.kind) {
                    case DirKind::M:
                    case DirKind::E: good = owner == f.owner && sharers.empty(); break;
                    case DirKind::S: good = owner == kNoTile && sharers == f.sharers; break;
                    case DirKind::V:
                    case DirKind::I: good = owner == kNoTile && sharers.empty(); break;
                    default: good = false; break;
                }
                if (!good) {
                    ok = false;
                    if (why) {
                        std::ostringstream os;
                        os << "dir mismatch at 0x" << std::hex << laddr << " state "
                           << to_string(f.kind);
                        *why = os.str();
                    }
                }
            });
        }
        // every line cached by an L2 must be tracked by its home slice
        for (auto& [laddr, hv] : l2_view) {
            const LlcSlice& s = *tiles_[amap_.home_tile(laddr)].llc;
            DirKind k = s.dir_kind(laddr);
            if (k == DirKind::I || k == DirKind::V) {
                ok = false;
                if (why) *why = "L2 holds a line the directory does not track";
            }
        }
        return ok;
    }

private:
    void l2_view_collect(TileId t,
                         std::map<Addr, std::pair<TileId, std::vector<TileId>>>& view) const {
        const L2Controller& l2 = *tiles_[t].l2;
        l2.for_each_line([&](Addr laddr, LineState st) {
            bool owner = st == LineState::M || st == LineState::E || st == LineState::XMW;
            bool sharer = st == LineState::S;
            if (!owner && !sharer) return;  // transients settle before quiescence
            auto& entry = view.emplace(laddr, std::make_pair(kNoTile, std::vector<TileId>{}))
                              .first->second;
            if (owner) entry.first = t;
            else {
                entry.second.push_back(t);
                std::sort(entry.second.begin(), entry.second.end());
            }
        });
    }

    void dispatch(TileId, Tile& tile, const CohMsg& m) {
        switch (tile.kind) {
            case TileKind::Processor:
                if (m.kind == MsgKind::MmioRsp) tile.core->deliver(m);
                else tile.l2->deliver(m);
                return;
            case TileKind::Memory: tile.llc->deliver(m); return;
            case TileKind::Accelerator:
                if (m.kind == MsgKind::DmaRsp || m.kind == MsgKind::MmioRead ||
                    m.kind == MsgKind::MmioWrite)
                    tile.acc->deliver(m);
                else if (tile.l2)
                    tile.l2->deliver(m);
                else
                    throw ProtocolError("coherence message at an L2-less accelerator tile");
                return;
            case TileKind::Auxiliary:
                if (m.kind == MsgKind::Irq) {
                    // single-event interrupt model: resume the invoking thread
                    TileId invoker = m.req;
                    if (invoker != kNoTile && tiles_[invoker].core) tiles_[invoker].core->resume();
                    return;
                }
                throw ProtocolError("auxiliary tile received unexpected message");
            case TileKind::Empty:
                throw ProtocolError("packet delivered to an empty tile");
        }
    }

    void drain_outbox(TileId t, std::deque<CohMsg>& ob) {
        bool blocked[kNumPlanes] = {};
        std::deque<CohMsg> keep;
        while (!ob.empty()) {
            CohMsg m = ob.front();
            ob.pop_front();
            m.src = t;
            Packet p = proxy_inject(m, amap_, cycle_);
            if (p.msg.dst == kNoTile) {
                // unmapped MMIO: error response packet straight back
                if (m.kind == MsgKind::MmioRead || m.kind == MsgKind::MmioWrite) {
                    CohMsg err;
                    err.kind = MsgKind::MmioRsp;
                    err.addr = m.addr;
                    err.src = t;
                    err.dst = t;
                    err.meta.error = true;
                    dispatch(t, tiles_[t], err);
                    continue;
                }
                throw ProtocolError("message with unresolved destination");
            }
            int plane = plane_of(p.msg);
            if (blocked[plane] || !mesh_.inject(p.msg, cycle_)) {
                blocked[plane] = true;  // keep per-plane FIFO under backpressure
                keep.push_back(p.msg);
            }
        }
        ob = std::move(keep);
    }

    uint64_t accel_jobs_done() const {
        uint64_t n = 0;
        for (auto& tile : tiles_)
            if (tile.acc) n += tile.acc->jobs_completed;
        return n;
    }

    void report_stuck() {
        if (mesh_.in_flight() > 0)
            monitor.report_lost(0, "packets still in flight at the cycle limit");
        for (TileId t : core_tiles_) {
            const CoreModel& c = *tiles_[t].core;
            if (!c.done()) {
                std::ostringstream os;
                os << "core at tile " << t << " stuck after " << c.retired << " retired ops";
                monitor.report_lost(0, os.str());
            }
        }
        for (auto& tile : tiles_)
            if (tile.l2 && tile.l2->busy())
                monitor.report_lost(0, "L2 busy at the cycle limit");
    }

    void finalize_stats() {
        stats.cycles = cycle_;
        for (int p = 0; p < kNumPlanes; ++p) stats.noc[p] = mesh_.plane_stats(p);
    }

    SocConfig cfg_;
    FaultPlan faults_;
    AddressMap amap_;
    Mesh mesh_;
    std::vector<Tile> tiles_;
    std::vector<TileId> core_tiles_;
    uint64_t cycle_ = 0;
};

// Convenience for tests and the CLI: build, load, run, evaluate.
struct SingleRun {
    RunStats stats;
    std::vector<Violation> violations;
    bool quiesced = false;
    uint64_t cycles = 0;
};

inline SingleRun run_trace(const SocConfig& cfg, const TraceProgram& prog, uint64_t seed,
                           FaultPlan faults = {}, bool litmus_skew = false) {
    SocSim soc(cfg, seed, faults, litmus_skew);
    soc.set_program(prog);
    auto r = soc.run();
    SingleRun out;
    out.stats = soc.stats;
    out.violations = soc.monitor.violations;
    out.quiesced = r.quiesced;
    out.cycles = r.cycles;
    return out;
}

}  // namespace tilesim
