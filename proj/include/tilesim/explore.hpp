#pragma once

#include <deque>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "tilesim/l2.hpp"
#include "tilesim/llc.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

// Exhaustive exploration of tiny configurations: a handful of cores with L2s,
// one LLC slice, nondeterministic message delivery per (src,dst,plane)
// channel (FIFO within a channel), and nondeterministic op issue from a small
// op set with a per-core budget. Values are abstracted to {0,1,2}.
//
// Invariants asserted in every reachable state: single-writer/multi-reader
// over the L2s, and the directory's structural invariant. Deadlock = a state
// with pending work and no enabled transition.

enum class ExplOp : uint8_t { Load, Store, Amo, Lr, Sc };

struct ExploreConfig {
    unsigned cores = 2;
    unsigned lines = 1;
    uint32_t line_bytes = 8;
    unsigned ops_per_core = 2;
    std::vector<ExplOp> op_set{ExplOp::Load, ExplOp::Store};
    uint32_t l2_ways = 2;   // 1 forces evictions
    uint32_t llc_ways = 2;
    uint32_t l2_mshrs = 2;
    bool grant_exclusive = true;
    uint64_t max_states = 10000000;
    FaultPlan faults{};
};

struct ExploreReport {
    uint64_t states = 0;
    uint64_t transitions = 0;
    uint64_t deadlocks = 0;
    uint64_t violations = 0;
    bool complete = false;  // fixpoint reached under max_states
    std::vector<std::string> notes;
};

class Explorer {
public:
    explicit Explorer(const ExploreConfig& cfg) : cfg_(cfg) {
        llc_tile_ = TileId(cfg_.cores);
        amap_.mem_bytes = mem_bytes();
        amap_.mmio_base = mem_bytes();
        amap_.mem_tiles = {llc_tile_};

        soc_cfg_ = SocConfig{};
        soc_cfg_.mem_bytes = mem_bytes();
        soc_cfg_.llc_geom = CacheGeometry{cfg_.line_bytes, 1, cfg_.llc_ways};
        soc_cfg_.mem_read_latency = 0;
        soc_cfg_.mem_write_latency = 0;
        soc_cfg_.llc_mshrs = 4;
        soc_cfg_.llc_grant_exclusive = cfg_.grant_exclusive;
        soc_cfg_.endian = Endian::Little;
    }

    ExploreReport run() {
        ExploreReport rep;
        State init = make_initial();
        std::vector<uint8_t> enc;
        encode(init, enc);
        visited_.insert(hash(enc));
        std::vector<State> stack;
        stack.push_back(std::move(init));
        rep.states = 1;

        while (!stack.empty()) {
            if (rep.states > cfg_.max_states) {
                rep.notes.push_back("state bound exceeded; exploration truncated");
                return rep;
            }
            State st = std::move(stack.back());
            stack.pop_back();

            auto moves = enabled(st);
            if (moves.empty()) {
                if (!is_final(st)) {
                    ++rep.deadlocks;
                    if (rep.notes.size() < 8) rep.notes.push_back(describe_stuck(st));
                }
                continue;
            }
            for (auto& mv : moves) {
                State next = st;  // value copy of the whole machine
                ++rep.transitions;
                std::string violation;
                if (!apply(next, mv, violation)) {
                    ++rep.violations;
                    if (rep.notes.size() < 8) rep.notes.push_back(violation);
                    continue;
                }
                if (!check_invariants(next, violation)) {
                    ++rep.violations;
                    if (rep.notes.size() < 8) rep.notes.push_back(violation);
                    continue;
                }
                enc.clear();
                encode(next, enc);
                if (visited_.insert(hash(enc)).second) {
                    ++rep.states;
                    stack.push_back(std::move(next));
                }
            }
        }
        rep.complete = true;
        return rep;
    }

private:
    struct CoreStub {
        unsigned budget = 0;
        bool waiting = false;          // op outstanding in the L2
        bool has_pending_issue = false;
        CoreSideReq pending_issue{};
        bool amo_write_ready = false;
        CoreSideReq amo_write{};
        uint8_t store_seq = 0;
        CoreOp waiting_op = CoreOp::Load;
    };

    using ChanKey = std::tuple<TileId, TileId, int>;

    struct State {
        std::vector<L2Controller> l2s;
        LlcSlice llc;
        std::vector<CoreStub> cores;
        std::map<ChanKey, std::deque<CohMsg>> chans;
    };

    struct Move {
        bool is_issue = false;
        // deliver
        ChanKey chan{};
        // issue
        unsigned core = 0;
        ExplOp op = ExplOp::Load;
        bool amo_write = false;
    };

    uint64_t mem_bytes() const {
        uint64_t n = uint64_t(cfg_.lines) * cfg_.line_bytes;
        uint64_t p = 1;
        while (p < n) p <<= 1;
        return p;
    }

    State make_initial() {
        State st;
        CacheGeometry l2g{cfg_.line_bytes, 1, cfg_.l2_ways};
        for (unsigned c = 0; c < cfg_.cores; ++c)
            st.l2s.emplace_back(TileId(c), l2g, cfg_.l2_mshrs, Endian::Little, amap_, nullptr,
                                nullptr, &cfg_.faults);
        st.llc = LlcSlice(llc_tile_, 0, soc_cfg_, amap_, nullptr, nullptr, &cfg_.faults);
        st.cores.assign(cfg_.cores, CoreStub{});
        for (auto& c : st.cores) c.budget = cfg_.ops_per_core;
        return st;
    }

    // ------------------------------------------------------------------
    // Transition enumeration
    // ------------------------------------------------------------------

    std::vector<Move> enabled(const State& st) const {
        std::vector<Move> moves;
        for (auto& [key, q] : st.chans)
            if (!q.empty()) {
                Move m;
                m.chan = key;
                moves.push_back(m);
            }
        for (unsigned c = 0; c < st.cores.size(); ++c) {
            const CoreStub& cs = st.cores[c];
            if (cs.amo_write_ready) {
                Move m;
                m.is_issue = true;
                m.core = c;
                m.amo_write = true;
                moves.push_back(m);
                continue;
            }
            if (cs.waiting || cs.has_pending_issue || cs.budget == 0) continue;
            for (ExplOp op : cfg_.op_set) {
                Move m;
                m.is_issue = true;
                m.core = c;
                m.op = op;
                moves.push_back(m);
            }
        }
        return moves;
    }

    bool is_final(const State& st) const {
        for (auto& [key, q] : st.chans)
            if (!q.empty()) return false;
        for (auto& cs : st.cores)
            if (cs.waiting || cs.has_pending_issue || cs.amo_write_ready || cs.budget > 0)
                return false;
        for (auto& l2 : st.l2s)
            if (l2.busy()) return false;
        return !st.llc.busy();
    }

    std::string describe_stuck(const State& st) const {
        std::string s = "deadlock:";
        for (unsigned c = 0; c < st.cores.size(); ++c) {
            if (st.cores[c].waiting) s += " core" + std::to_string(c) + "=waiting";
            if (st.cores[c].has_pending_issue) s += " core" + std::to_string(c) + "=stalled";
        }
        for (unsigned c = 0; c < st.l2s.size(); ++c)
            if (st.l2s[c].busy()) s += " l2_" + std::to_string(c) + "=busy";
        if (st.llc.busy()) s += " llc=busy";
        return s;
    }

    // ------------------------------------------------------------------
    // Transition application
    // ------------------------------------------------------------------

    bool apply(State& st, const Move& mv, std::string& violation) {
        try {
            if (!mv.is_issue) {
                auto it = st.chans.find(mv.chan);
                CohMsg msg = it->second.front();
                it->second.pop_front();
                if (it->second.empty()) st.chans.erase(it);
                route(st, msg);
            } else if (mv.amo_write) {
                CoreStub& cs = st.cores[mv.core];
                cs.amo_write_ready = false;
                submit(st, mv.core, cs.amo_write);
            } else {
                issue_op(st, mv.core, mv.op);
            }
            drain(st);
            return true;
        } catch (const ProtocolError& e) {
            violation = std::string("protocol error: ") + e.what();
            return false;
        }
    }

    void route(State& st, const CohMsg& msg) {
        if (msg.dst == llc_tile_) {
            st.llc.deliver(msg);
            st.llc.step();
        } else {
            st.l2s[msg.dst].deliver(msg);
            st.l2s[msg.dst].step();
        }
    }

    void issue_op(State& st, unsigned c, ExplOp op) {
        CoreStub& cs = st.cores[c];
        cs.budget--;
        CoreSideReq r;
        Addr addr = Addr(cs.budget % cfg_.lines) * cfg_.line_bytes;  // cycle over the lines
        switch (op) {
            case ExplOp::Load:
                r.op = CoreOp::Load;
                r.addr = addr;
                break;
            case ExplOp::Store:
                r.op = CoreOp::Store;
                r.addr = addr;
                r.data = cs.store_seq++ % 3;
                break;
            case ExplOp::Amo:
                r.op = CoreOp::AmoRead;
                r.addr = addr;
                r.lock = true;
                r.atop = ATOP_ADD;
                break;
            case ExplOp::Lr:
                r.op = CoreOp::LrRead;
                r.addr = addr;
                r.lock = true;
                r.user = uint8_t(c + 1);
                break;
            case ExplOp::Sc:
                r.op = CoreOp::ScWrite;
                r.addr = addr;
                r.data = 2;
                r.lock = true;
                r.user = uint8_t(c + 1);
                break;
        }
        submit(st, c, r);
    }

    void submit(State& st, unsigned c, const CoreSideReq& r) {
        CoreStub& cs = st.cores[c];
        switch (st.l2s[c].core_request(r)) {
            case ReqStatus::Done: on_completion(st, c, *st.l2s[c].take_completion()); break;
            case ReqStatus::Pending:
                cs.waiting = true;
                cs.waiting_op = r.op;
                break;
            case ReqStatus::Stalled:
                cs.has_pending_issue = true;
                cs.pending_issue = r;
                break;
        }
    }

    void on_completion(State& st, unsigned c, const CoreCompletion& done) {
        CoreStub& cs = st.cores[c];
        cs.waiting = false;
        if (done.op == CoreOp::AmoRead) {
            // the closing write is its own transition so that forwards can
            // interleave into the open XMW window
            cs.amo_write_ready = true;
            cs.amo_write = CoreSideReq{};
            cs.amo_write.op = CoreOp::AmoWrite;
            cs.amo_write.addr = done.addr;
            cs.amo_write.data = (done.value + 1) % 3;
            cs.amo_write.lock = true;
            cs.amo_write.atop = ATOP_ADD;
        }
    }

    void drain(State& st) {
        bool changed = true;
        while (changed) {
            changed = false;
            for (unsigned c = 0; c < st.cores.size(); ++c) {
                if (auto done = st.l2s[c].take_completion()) {
                    on_completion(st, c, *done);
                    changed = true;
                }
                CoreStub& cs = st.cores[c];
                if (cs.has_pending_issue && !cs.waiting) {
                    CoreSideReq r = cs.pending_issue;
                    cs.has_pending_issue = false;
                    submit(st, c, r);
                    if (!cs.has_pending_issue) changed = true;
                }
            }
            for (unsigned c = 0; c < st.l2s.size(); ++c)
                changed |= move_outbox(st, st.l2s[c].outbox, TileId(c));
            changed |= move_outbox(st, st.llc.outbox, llc_tile_);
        }
    }

    bool move_outbox(State& st, std::deque<CohMsg>& ob, TileId src) {
        bool any = false;
        while (!ob.empty()) {
            CohMsg m = ob.front();
            ob.pop_front();
            m.src = src;
            st.chans[{src, m.dst, plane_of(m)}].push_back(m);
            any = true;
        }
        return any;
    }

    // ------------------------------------------------------------------
    // Invariants
    // ------------------------------------------------------------------

    bool check_invariants(const State& st, std::string& violation) const {
        for (unsigned l = 0; l < cfg_.lines; ++l) {
            Addr laddr = Addr(l) * cfg_.line_bytes;
            unsigned writable = 0, readable_elsewhere = 0;
            int writer = -1;
            for (unsigned c = 0; c < st.l2s.size(); ++c) {
                LineState s = st.l2s[c].line_state(laddr);
                if (line_state_writable(s)) {
                    ++writable;
                    writer = int(c);
                }
            }
            if (writable > 1) {
                violation = "SWMR: two writable copies of line " + std::to_string(l);
                return false;
            }
            if (writable == 1) {
                for (unsigned c = 0; c < st.l2s.size(); ++c) {
                    LineState s = st.l2s[c].line_state(laddr);
                    if (int(c) != writer && s == LineState::S) ++readable_elsewhere;
                }
                if (readable_elsewhere) {
                    violation = "SWMR: writable copy beside readers of line " + std::to_string(l);
                    return false;
                }
            }
        }
        bool ok = true;
        st.llc.for_each_entry([&](Addr laddr, const LlcSlice::Frame& f) {
            const char* bad = nullptr;
            switch (f.kind) {
                case DirKind::M:
                case DirKind::E:
                    if (f.owner == kNoTile || !f.sharers.empty()) bad = "owner state broken";
                    break;
                case DirKind::S:
                    if (f.owner != kNoTile || f.sharers.empty()) bad = "S state broken";
                    break;
                case DirKind::V:
                case DirKind::I:
                    if (f.owner != kNoTile || !f.sharers.empty()) bad = "V/I state broken";
                    break;
                default: break;
            }
            if (bad && ok) {
                ok = false;
                violation = std::string("directory invariant: ") + bad + " at line " +
                            std::to_string(laddr / cfg_.line_bytes);
            }
        });
        return ok;
    }

    // ------------------------------------------------------------------
    // Hashing
    // ------------------------------------------------------------------

    void encode(const State& st, std::vector<uint8_t>& out) const {
        for (auto& l2 : st.l2s) l2.encode_state(out);
        st.llc.encode_state(out);
        for (auto& cs : st.cores) {
            out.push_back(uint8_t(cs.budget));
            out.push_back(uint8_t(cs.waiting) | uint8_t(cs.has_pending_issue << 1) |
                          uint8_t(cs.amo_write_ready << 2));
            out.push_back(cs.store_seq);
            out.push_back(uint8_t(cs.waiting_op));
            if (cs.has_pending_issue) {
                out.push_back(uint8_t(cs.pending_issue.op));
                out.push_back(uint8_t(cs.pending_issue.addr));
                out.push_back(uint8_t(cs.pending_issue.data));
            }
            if (cs.amo_write_ready) {
                out.push_back(uint8_t(cs.amo_write.addr));
                out.push_back(uint8_t(cs.amo_write.data));
            }
        }
        for (auto& [key, q] : st.chans) {
            out.push_back(uint8_t(std::get<0>(key)));
            out.push_back(uint8_t(std::get<1>(key)));
            out.push_back(uint8_t(std::get<2>(key)));
            out.push_back(uint8_t(q.size()));
            for (auto& m : q) {
                out.push_back(uint8_t(m.kind));
                out.push_back(uint8_t(m.addr));
                out.push_back(uint8_t(m.src));
                out.push_back(uint8_t(m.dst));
                out.push_back(uint8_t(m.req));
                out.push_back(uint8_t(m.value));
                out.push_back(uint8_t(m.meta.dirty) | uint8_t(m.meta.exclusive << 1) |
                              uint8_t(m.meta.wb << 2) | uint8_t(m.meta.lock << 3) |
                              uint8_t(m.has_data << 4));
                if (m.has_data)
                    for (uint32_t b = 0; b < cfg_.line_bytes; ++b) out.push_back(m.data.bytes[b]);
            }
        }
    }

    // 128-bit hash stored as a pair of 64s
    struct H128 {
        uint64_t a, b;
        bool operator==(const H128& o) const { return a == o.a && b == o.b; }
    };
    struct H128Hash {
        size_t operator()(const H128& h) const { return size_t(h.a ^ (h.b << 1)); }
    };

    H128 hash(const std::vector<uint8_t>& enc) const {
        uint64_t a = 0xcbf29ce484222325ull, b = 0x9e3779b97f4a7c15ull;
        for (uint8_t byte : enc) {
            a = (a ^ byte) * 0x100000001b3ull;
            b = hash_combine(b, byte + (a & 0xff));
        }
        return {a, b};
    }

    ExploreConfig cfg_;
    TileId llc_tile_ = 0;
    AddressMap amap_;
    SocConfig soc_cfg_;
    std::unordered_set<H128, H128Hash> visited_;
};

}  // namespace tilesim
