#pragma once

#include <array>
#include <deque>
#include <functional>
#include <vector>

#include "tilesim/stats.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

enum Port : uint8_t { PORT_N = 0, PORT_E, PORT_S, PORT_W, PORT_LOCAL, PORT_COUNT };

struct Coord {
    uint16_t x = 0;  // column
    uint16_t y = 0;  // row
    bool operator==(const Coord& o) const { return x == o.x && y == o.y; }
};

// Dimension-order routing, X first. The lookahead property of the modeled
// router is represented functionally: the decision for the next hop is a pure
// function of (cur, dst), available the cycle the packet arrives.
inline Port route_next(Coord cur, Coord dst) {
    if (cur.x < dst.x) return PORT_E;
    if (cur.x > dst.x) return PORT_W;
    if (cur.y < dst.y) return PORT_S;
    if (cur.y > dst.y) return PORT_N;
    return PORT_LOCAL;
}

inline int manhattan(Coord a, Coord b) {
    return std::abs(int(a.x) - int(b.x)) + std::abs(int(a.y) - int(b.y));
}

struct Packet {
    CohMsg msg;
    uint8_t plane = 0;
    TileId src = kNoTile;
    TileId dst = kNoTile;
    uint64_t injected_cycle = 0;
    uint64_t seq = 0;  // per-mesh injection order, for FIFO checking
};

// One router per tile: per-plane input queue per port, round-robin output
// arbitration with seed-rotated initial pointers, single-cycle hops.
class Mesh {
public:
    using TraceSink = std::function<void(uint64_t cycle, const Packet&)>;

    Mesh() = default;
    Mesh(uint16_t rows, uint16_t cols, uint32_t queue_depth, uint64_t seed = 0)
        : rows_(rows), cols_(cols), depth_(queue_depth) {
        routers_.resize(size_t(rows) * cols);
        inboxes_.resize(size_t(rows) * cols);
        Rng rng(hash_combine(seed, 0x6e6f63));
        for (auto& r : routers_)
            for (int p = 0; p < kNumPlanes; ++p)
                for (int o = 0; o < PORT_COUNT; ++o) r.rr[p][o] = uint8_t(rng.below(PORT_COUNT));
    }

    Coord coord_of(TileId t) const { return Coord{uint16_t(t % cols_), uint16_t(t / cols_)}; }
    TileId tile_at(Coord c) const { return TileId(c.y * cols_ + c.x); }
    uint16_t rows() const { return rows_; }
    uint16_t cols() const { return cols_; }

    // Hands a message to the source tile's local port. Returns false when the
    // local input queue is full; the caller must retry (backpressure, no drop).
    bool inject(const CohMsg& msg, uint64_t cycle) {
        Packet pkt;
        pkt.msg = msg;
        pkt.plane = uint8_t(plane_of(msg));
        pkt.src = msg.src;
        pkt.dst = msg.dst;
        pkt.injected_cycle = cycle;
        if (pkt.dst == pkt.src) {  // same-tile delivery bypasses the network
            pkt.seq = seq_++;
            stats_[pkt.plane].packets++;
            if (trace_) trace_(cycle, pkt);
            deliver(pkt, cycle);
            return true;
        }
        auto& q = routers_[pkt.src].in[pkt.plane][PORT_LOCAL];
        if (q.size() >= depth_) return false;
        pkt.seq = seq_++;
        stats_[pkt.plane].packets++;
        if (trace_) trace_(cycle, pkt);
        active_[pkt.plane]++;
        q.push_back(std::move(pkt));
        return true;
    }

    // Advances every router by one cycle. Moves are planned against the
    // start-of-cycle occupancy and applied together, so a hop frees its slot
    // only for the following cycle.
    void step(uint64_t cycle) {
        moves_.clear();
        for (int plane = 0; plane < kNumPlanes; ++plane) {
            if (active_[plane] == 0) continue;
            for (TileId t = 0; t < TileId(routers_.size()); ++t) {
                Router& r = routers_[t];
                bool any = false;
                for (int p = 0; p < PORT_COUNT; ++p)
                    if (!r.in[plane][p].empty()) { any = true; break; }
                if (!any) continue;
                Coord here = coord_of(t);
                // one winner per output port
                for (int out = 0; out < PORT_COUNT; ++out) {
                    uint8_t start = r.rr[plane][out];
                    for (int k = 0; k < PORT_COUNT; ++k) {
                        uint8_t in = uint8_t((start + k) % PORT_COUNT);
                        auto& q = r.in[plane][in];
                        if (q.empty()) continue;
                        const Packet& pkt = q.front();
                        Port want = route_next(here, coord_of(pkt.dst));
                        if (want != out) continue;
                        if (want == PORT_LOCAL) {
                            moves_.push_back({t, uint8_t(plane), in, t, 0, true});
                            r.rr[plane][out] = uint8_t((in + 1) % PORT_COUNT);
                            break;
                        }
                        TileId nb = neighbor(t, Port(want));
                        Coord nb_c = coord_of(nb);
                        bool nb_ejects = route_next(nb_c, coord_of(pkt.dst)) == PORT_LOCAL;
                        if (!nb_ejects) {
                            uint8_t entry = opposite(Port(want));
                            auto& nq = routers_[nb].in[plane][entry];
                            if (nq.size() + planned_count(nb, plane, entry) >= depth_)
                                continue;  // backpressure: try next input
                            moves_.push_back({t, uint8_t(plane), in, nb, entry, false});
                        } else {
                            // final link traversal delivers straight to the tile
                            moves_.push_back({t, uint8_t(plane), in, nb, 0, true});
                        }
                        r.rr[plane][out] = uint8_t((in + 1) % PORT_COUNT);
                        break;
                    }
                }
            }
        }
        for (auto& m : moves_) {
            auto& q = routers_[m.from].in[m.plane][m.in_port];
            Packet pkt = std::move(q.front());
            q.pop_front();
            if (m.eject) {
                active_[m.plane]--;
                deliver(pkt, cycle);
            } else {
                routers_[m.to].in[m.plane][m.to_port].push_back(std::move(pkt));
            }
        }
    }

    std::deque<Packet>& inbox(TileId t) { return inboxes_[t]; }

    bool idle() const {
        for (int p = 0; p < kNumPlanes; ++p)
            if (active_[p]) return false;
        for (auto& ib : inboxes_)
            if (!ib.empty()) return false;
        return true;
    }

    uint64_t in_flight() const {
        uint64_t n = 0;
        for (int p = 0; p < kNumPlanes; ++p) n += active_[p];
        for (auto& ib : inboxes_) n += ib.size();
        return n;
    }

    void set_trace_sink(TraceSink s) { trace_ = std::move(s); }

    const NocPlaneStats& plane_stats(int p) const { return stats_[p]; }
    NocPlaneStats& plane_stats_mut(int p) { return stats_[p]; }

private:
    struct Router {
        std::array<std::array<std::deque<Packet>, PORT_COUNT>, kNumPlanes> in;
        uint8_t rr[kNumPlanes][PORT_COUNT] = {};
    };

    static Port opposite(Port p) {
        switch (p) {
            case PORT_N: return PORT_S;
            case PORT_S: return PORT_N;
            case PORT_E: return PORT_W;
            case PORT_W: return PORT_E;
            default: return PORT_LOCAL;
        }
    }

    TileId neighbor(TileId t, Port p) const {
        Coord c = coord_of(t);
        switch (p) {
            case PORT_N: c.y--; break;
            case PORT_S: c.y++; break;
            case PORT_E: c.x++; break;
            case PORT_W: c.x--; break;
            default: break;
        }
        return tile_at(c);
    }

    uint32_t planned_count(TileId t, int plane, uint8_t port) const {
        uint32_t n = 0;
        for (auto& m : moves_)
            if (!m.eject && m.to == t && m.plane == plane && m.to_port == port) ++n;
        return n;
    }

    void deliver(Packet& pkt, uint64_t cycle) {
        stats_[pkt.plane].delivered++;
        stats_[pkt.plane].latency_sum += cycle - pkt.injected_cycle;
        inboxes_[pkt.dst].push_back(std::move(pkt));
    }

    // planned moves for the in-progress step
    struct MoveItem {
        TileId from;
        uint8_t plane;
        uint8_t in_port;
        TileId to;
        uint8_t to_port;
        bool eject;
    };

    uint16_t rows_ = 0, cols_ = 0;
    uint32_t depth_ = 4;
    uint64_t seq_ = 0;
    std::vector<Router> routers_;
    std::vector<std::deque<Packet>> inboxes_;
    uint64_t active_[kNumPlanes] = {};
    NocPlaneStats stats_[kNumPlanes];
    TraceSink trace_;
    std::vector<MoveItem> moves_;
};

}  // namespace tilesim
