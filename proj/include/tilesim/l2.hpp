#pragma once

#include <cassert>
#include <deque>
#include <optional>
#include <vector>

#include "tilesim/config.hpp"
#include "tilesim/monitor.hpp"
#include "tilesim/stats.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

enum class CoreOp : uint8_t { Load, Store, Ifetch, AmoRead, AmoWrite, LrRead, ScWrite, FlushL2 };

struct CoreSideReq {
    CoreOp op = CoreOp::Load;
    Addr addr = 0;
    Word data = 0;
    bool lock = false;
    uint8_t atop = 0;
    uint8_t user = 0;
};

enum class WriteResp : uint8_t { EXOKAY, OKAY };

struct CoreCompletion {
    CoreOp op = CoreOp::Load;
    Addr addr = 0;
    Word value = 0;
    WriteResp resp = WriteResp::EXOKAY;
    bool has_line = false;  // full line available for an L1 fill
    LineData line{};
};

enum class ReqStatus : uint8_t { Done, Pending, Stalled };

struct L1Snoop {
    Addr addr = 0;
    uint8_t perm = 0;
};

enum class MshrKind : uint8_t { Read, Write, AtomicAmo, AtomicLrsc, Writeback };

struct MshrEntry {
    Addr line = 0;  // line-aligned address
    MshrKind kind = MshrKind::Read;
    LineState pending = LineState::IS_A;
    bool atomic_open = false;  // atomic read served, closing write pending
    bool no_install = false;   // serve the data once, do not cache it
    bool inv_pending = false;  // invalidated while the fill was in flight
    std::deque<CohMsg> stalled;
    CoreSideReq req{};
    bool has_req = false;
};

// Fault knobs for monitor-sensitivity builds. All default off.
struct FaultPlan {
    bool duplicate_m = false;     // LLC grants M without recalling the owner
    bool skip_invack_wait = false;// LLC responds before collecting InvAcks
    uint64_t drop_datarsp_nth = 0;// LLC drops its nth DataRsp (1-based)
    bool skip_l1_inval = false;   // L2 never snoops the L1
};

// Private L2 cache controller: serves one blocking requester (a CPU core or a
// fully-coherent accelerator), participates in the directory protocol through
// its outbox, and snoops the tile's L1 over a MakeInvalid channel.
class L2Controller {
public:
    L2Controller() = default;
    L2Controller(TileId self, const CacheGeometry& geom, uint32_t mshr_capacity, Endian endian,
                 AddressMap amap, GlobalMonitor* mon = nullptr, RunStats* stats = nullptr,
                 const FaultPlan* faults = nullptr)
        : self_(self),
          geom_(geom),
          endian_(endian),
          mshr_cap_(mshr_capacity),
          amap_(std::move(amap)),
          mon_(mon),
          stats_(stats),
          faults_(faults) {
        lines_.resize(size_t(geom_.sets) * geom_.ways);
        plru_.assign(geom_.sets, 0);
    }

    std::deque<CohMsg> outbox;
    std::vector<L1Snoop> snoop_outbox;

    // ------------------------------------------------------------------
    // Core-side interface
    // ------------------------------------------------------------------

    ReqStatus core_request(const CoreSideReq& req) {
        switch (req.op) {
            case CoreOp::Load:
            case CoreOp::Ifetch: return handle_read(req);
            case CoreOp::Store: return handle_store(req);
            case CoreOp::AmoRead:
            case CoreOp::LrRead: return handle_atomic_read(req);
            case CoreOp::AmoWrite: return handle_amo_write(req);
            case CoreOp::ScWrite: return handle_sc(req);
            case CoreOp::FlushL2: return handle_flush_request(req);
        }
        return ReqStatus::Stalled;
    }

    std::optional<CoreCompletion> take_completion() {
        auto c = completion_;
        completion_.reset();
        return c;
    }

    bool l1_flush_requested() const { return flush_.phase == FlushPhase::WaitL1; }

    void l1_flush_done() {
        if (flush_.phase == FlushPhase::WaitL1) {
            if (mon_) mon_->on_l1_flush_done(self_, mon_->now);
            flush_.phase = FlushPhase::Scan;
            flush_.set = 0;
        }
    }

    // ------------------------------------------------------------------
    // Network-side interface
    // ------------------------------------------------------------------

    void deliver(const CohMsg& msg) { inbox_.push_back(msg); }

    void step() {
        while (!inbox_.empty()) {
            CohMsg m = inbox_.front();
            inbox_.pop_front();
            process_msg(m);
        }
        if (flush_.phase == FlushPhase::Scan) flush_scan();
        if (flush_.phase == FlushPhase::Drain) flush_try_finish();
    }

    // ------------------------------------------------------------------
    // Introspection
    // ------------------------------------------------------------------

    LineState line_state(Addr addr) const {
        const L2Line* l = probe(line_base(addr, geom_.line_bytes));
        return l ? l->state : LineState::I;
    }

    Word peek_word(Addr addr) const {
        const L2Line* l = probe(line_base(addr, geom_.line_bytes));
        if (!l) return 0;
        return l->data.word(uint32_t(addr & (geom_.line_bytes - 1)), endian_);
    }

    size_t mshr_in_use() const { return mshrs_.size(); }

    // Pending work that must drain before quiescence. An open LR window with
    // an empty stall queue is not pending work: the reservation may sit open
    // until something kills it.
    bool busy() const {
        if (flush_.phase != FlushPhase::None) return true;
        if (!inbox_.empty() || !outbox.empty()) return true;
        for (auto& m : mshrs_) {
            if (!m.stalled.empty()) return true;
            if (!(m.kind == MshrKind::AtomicLrsc && m.atomic_open)) return true;
        }
        return false;
    }

    bool reservation_live() const { return resv_.live; }

    template <typename Fn>
    void for_each_line(Fn&& fn) const {
        for (uint32_t s = 0; s < geom_.sets; ++s)
            for (uint32_t w = 0; w < geom_.ways; ++w) {
                const L2Line& l = lines_[size_t(s) * geom_.ways + w];
                if (l.state != LineState::I) fn(line_addr_of(s, l.tag), l.state);
            }
    }

    void encode_state(std::vector<uint8_t>& out) const;

    TileId tile() const { return self_; }

private:
    struct L2Line {
        uint64_t tag = 0;
        LineState state = LineState::I;
        uint8_t perm = 0;
        LineData data{};
    };

    struct Reservation {
        bool live = false;
        Addr line = 0;
        uint8_t user = 0;
    };

    enum class FlushPhase : uint8_t { None, WaitL1, Scan, Drain };

    struct FlushState {
        FlushPhase phase = FlushPhase::None;
        uint32_t set = 0;
    };

    // ------------------------------------------------------------------
    // Geometry helpers
    // ------------------------------------------------------------------

    Addr la(Addr addr) const { return line_base(addr, geom_.line_bytes); }

    Addr line_addr_of(uint32_t set, uint64_t tag) const {
        return tag * (uint64_t(geom_.line_bytes) * geom_.sets) + uint64_t(set) * geom_.line_bytes;
    }

    L2Line* probe(Addr laddr) {
        LineSplit sp = line_split(laddr, geom_);
        for (uint32_t w = 0; w < geom_.ways; ++w) {
            L2Line& l = lines_[size_t(sp.set) * geom_.ways + w];
            if (l.state != LineState::I && l.tag == sp.tag) return &l;
        }
        return nullptr;
    }
    const L2Line* probe(Addr laddr) const { return const_cast<L2Controller*>(this)->probe(laddr); }

    uint32_t way_of(const L2Line* l) const {
        size_t idx = size_t(l - lines_.data());
        return uint32_t(idx % geom_.ways);
    }
    uint32_t set_of(const L2Line* l) const {
        size_t idx = size_t(l - lines_.data());
        return uint32_t(idx / geom_.ways);
    }

    void touch_plru(uint32_t set, uint32_t way) {
        // tree PLRU over pow2 ways, plain counter otherwise
        if (is_pow2(geom_.ways)) {
            uint32_t bits = plru_[set];
            uint32_t node = 1;
            for (uint32_t span = geom_.ways; span > 1; span /= 2) {
                bool right = way & (span / 2);
                if (right) bits |= (1u << node); else bits &= ~(1u << node);
                node = node * 2 + (right ? 1 : 0);
            }
            plru_[set] = bits;
        } else {
            plru_[set] = way;
        }
    }

    uint32_t plru_victim(uint32_t set) const {
        if (is_pow2(geom_.ways)) {
            uint32_t bits = plru_[set];
            uint32_t node = 1;
            uint32_t way = 0;
            for (uint32_t span = geom_.ways; span > 1; span /= 2) {
                bool right = !(bits & (1u << node));  // go opposite the MRU side
                if (right) way += span / 2;
                node = node * 2 + (right ? 1 : 0);
            }
            return way;
        }
        return (plru_[set] + 1) % geom_.ways;
    }

    // ------------------------------------------------------------------
    // Monitor plumbing
    // ------------------------------------------------------------------

    void set_state(L2Line& l, uint32_t set, LineState ns) {
        l.state = ns;
        if (mon_)
            mon_->on_line_access_state(self_, line_addr_of(set, l.tag), line_state_readable(ns),
                                       line_state_writable(ns));
    }

    void mon_read(Addr word_addr, Word v) {
        if (mon_) mon_->on_read(self_, word_addr, v, false, true);
    }
    void mon_write(Addr word_addr, Word v) {
        if (mon_) mon_->on_write(self_, word_addr, v);
    }

    // ------------------------------------------------------------------
    // MSHR helpers
    // ------------------------------------------------------------------

    MshrEntry* find_mshr(Addr laddr) {
        for (auto& m : mshrs_)
            if (m.line == laddr) return &m;
        return nullptr;
    }

    size_t mshr_free() const { return mshr_cap_ - mshrs_.size(); }

    MshrEntry& alloc_mshr(Addr laddr, MshrKind kind, LineState pending) {
        assert(!find_mshr(laddr));  // at most one entry per line address
        mshrs_.push_back(MshrEntry{});
        MshrEntry& m = mshrs_.back();
        m.line = laddr;
        m.kind = kind;
        m.pending = pending;
        return m;
    }

    void free_mshr(Addr laddr) {
        std::deque<CohMsg> replay;
        for (size_t i = 0; i < mshrs_.size(); ++i) {
            if (mshrs_[i].line == laddr) {
                replay = std::move(mshrs_[i].stalled);
                mshrs_.erase(mshrs_.begin() + long(i));
                break;
            }
        }
        // stalled forwards replay in arrival order
        for (auto& m : replay) process_msg(m);
    }

    // ------------------------------------------------------------------
    // Message emission
    // ------------------------------------------------------------------

    void send(CohMsg m) {
        m.src = self_;
        outbox.push_back(std::move(m));
    }

    void send_request(MsgKind kind, Addr laddr, bool no_reg = false) {
        CohMsg m;
        m.kind = kind;
        m.addr = laddr;
        m.dst = amap_.home_tile(laddr);
        m.meta.no_reg = no_reg;
        send(std::move(m));
    }

    void send_putm(const L2Line& l, uint32_t set) {
        CohMsg m;
        m.kind = MsgKind::PutM;
        m.addr = line_addr_of(set, l.tag);
        m.dst = amap_.home_tile(m.addr);
        m.has_data = true;
        m.data = l.data;
        m.meta.dirty = true;
        send(std::move(m));
    }

    void snoop_l1(Addr laddr, uint8_t perm) {
        if (faults_ && faults_->skip_l1_inval) return;
        snoop_outbox.push_back({laddr, perm});
        if (stats_) stats_->inval_sent++;
    }

    // ------------------------------------------------------------------
    // Reservation / atomic window
    // ------------------------------------------------------------------

    // Closes an open LR window: the line returns to M and the MSHR entry is
    // released. Any subsequent SC fails with OKAY.
    void kill_reservation() {
        if (!resv_.live) return;
        resv_.live = false;
        MshrEntry* m = find_mshr(resv_.line);
        if (m && m->kind == MshrKind::AtomicLrsc && m->atomic_open) {
            L2Line* l = probe(resv_.line);
            if (l && l->state == LineState::XMW) set_state(*l, set_of(l), LineState::M);
            free_mshr(resv_.line);
        }
    }

    // ------------------------------------------------------------------
    // Core request handlers
    // ------------------------------------------------------------------

    void complete(const CoreSideReq& req, Word value, WriteResp resp, const L2Line* fill) {
        CoreCompletion c;
        c.op = req.op;
        c.addr = req.addr;
        c.value = value;
        c.resp = resp;
        if (fill) {
            c.has_line = true;
            c.line = fill->data;
        }
        completion_ = c;
    }

    ReqStatus handle_read(const CoreSideReq& req) {
        Addr laddr = la(req.addr);
        bool ifetch = req.op == CoreOp::Ifetch;
        if (MshrEntry* m = find_mshr(laddr)) {
            if (m->atomic_open) {
                if (m->kind == MshrKind::AtomicLrsc && !ifetch) {
                    // own non-atomic data access ends the LR window
                    kill_reservation();
                    return handle_read(req);
                }
                if (m->kind == MshrKind::AtomicLrsc && ifetch) {
                    // instruction fetches are served inside the window
                    L2Line* l = probe(laddr);
                    if (l) {
                        Word v = read_word(*l, req.addr);
                        l->perm |= kPermInstr;
                        complete(req, v, WriteResp::EXOKAY, l);
                        return ReqStatus::Done;
                    }
                }
                if (m->kind == MshrKind::AtomicAmo && ifetch) {
                    L2Line* l = probe(laddr);
                    if (l) {
                        Word v = read_word(*l, req.addr);
                        l->perm |= kPermInstr;
                        complete(req, v, WriteResp::EXOKAY, l);
                        return ReqStatus::Done;
                    }
                }
                return ReqStatus::Stalled;
            }
            return ReqStatus::Stalled;
        }
        // any non-atomic data access from the own core ends an open window
        if (!ifetch && resv_.live) kill_reservation();
        if (L2Line* l = probe(laddr)) {
            if (line_state_readable(l->state)) {
                Word v = read_word(*l, req.addr);
                l->perm |= ifetch ? kPermInstr : kPermData;
                touch_plru(set_of(l), way_of(l));
                if (!ifetch) mon_read(word_addr(req.addr), v);
                if (stats_) stats_->l2_hits++;
                complete(req, v, WriteResp::EXOKAY, l);
                return ReqStatus::Done;
            }
            return ReqStatus::Stalled;
        }
        // miss
        uint32_t set = line_split(laddr, geom_).set;
        int way = ensure_way(set);
        if (way < 0) {
            if (ifetch) {
                // a set pinned by an open atomic must not stall instruction
                // fetches: serve read-through without caching
                if (mshr_free() == 0) return ReqStatus::Stalled;
                if (stats_) stats_->l2_misses++;
                MshrEntry& m = alloc_mshr(laddr, MshrKind::Read, LineState::IS_A);
                m.no_install = true;
                m.req = req;
                m.has_req = true;
                send_request(MsgKind::GetS, laddr, true);
                return ReqStatus::Pending;
            }
            return ReqStatus::Stalled;
        }
        if (mshr_free() == 0) return ReqStatus::Stalled;
        if (stats_) stats_->l2_misses++;
        L2Line& l = lines_[size_t(set) * geom_.ways + uint32_t(way)];
        l.tag = line_split(laddr, geom_).tag;
        l.perm = ifetch ? kPermInstr : kPermData;
        set_state(l, set, LineState::IS_A);
        MshrEntry& m = alloc_mshr(laddr, MshrKind::Read, LineState::IS_A);
        m.req = req;
        m.has_req = true;
        send_request(MsgKind::GetS, laddr);
        return ReqStatus::Pending;
    }

    ReqStatus handle_store(const CoreSideReq& req) {
        Addr laddr = la(req.addr);
        if (MshrEntry* m = find_mshr(laddr)) {
            if (m->atomic_open && m->kind == MshrKind::AtomicLrsc) {
                kill_reservation();
                return handle_store(req);
            }
            return ReqStatus::Stalled;
        }
        if (resv_.live) kill_reservation();  // non-atomic data access ends the window
        if (L2Line* l = probe(laddr)) {
            if (l->state == LineState::M || l->state == LineState::E) {
                if (l->state == LineState::E) set_state(*l, set_of(l), LineState::M);
                write_word(*l, req.addr, req.data);
                l->perm |= kPermData;
                touch_plru(set_of(l), way_of(l));
                mon_write(word_addr(req.addr), req.data);
                if (stats_) stats_->l2_hits++;
                complete(req, 0, WriteResp::EXOKAY, nullptr);
                return ReqStatus::Done;
            }
            if (l->state == LineState::S) {
                if (mshr_free() == 0) return ReqStatus::Stalled;
                if (stats_) stats_->l2_misses++;
                set_state(*l, set_of(l), LineState::SM_A);
                MshrEntry& m = alloc_mshr(laddr, MshrKind::Write, LineState::SM_A);
                m.req = req;
                m.has_req = true;
                send_request(MsgKind::GetM, laddr);
                return ReqStatus::Pending;
            }
            return ReqStatus::Stalled;
        }
        uint32_t set = line_split(laddr, geom_).set;
        int way = ensure_way(set);
        if (way < 0 || mshr_free() == 0) return ReqStatus::Stalled;
        if (stats_) stats_->l2_misses++;
        L2Line& l = lines_[size_t(set) * geom_.ways + uint32_t(way)];
        l.tag = line_split(laddr, geom_).tag;
        l.perm = kPermData;
        set_state(l, set, LineState::IM_A);
        MshrEntry& m = alloc_mshr(laddr, MshrKind::Write, LineState::IM_A);
        m.req = req;
        m.has_req = true;
        send_request(MsgKind::GetM, laddr);
        return ReqStatus::Pending;
    }

    ReqStatus handle_atomic_read(const CoreSideReq& req) {
        Addr laddr = la(req.addr);
        bool lrsc = req.op == CoreOp::LrRead;
        if (!req.lock) throw ProtocolError("atomic read without lock");
        if (MshrEntry* m = find_mshr(laddr)) {
            if (m->atomic_open && m->kind == MshrKind::AtomicLrsc) {
                kill_reservation();  // re-reserve / AMO replaces the open window
                return handle_atomic_read(req);
            }
            return ReqStatus::Stalled;
        }
        if (resv_.live) kill_reservation();  // a new atomic replaces any open reservation
        MshrKind kind = lrsc ? MshrKind::AtomicLrsc : MshrKind::AtomicAmo;
        if (L2Line* l = probe(laddr)) {
            if (l->state == LineState::M || l->state == LineState::E) {
                if (mshr_free() == 0) return ReqStatus::Stalled;
                if (l->state == LineState::E) set_state(*l, set_of(l), LineState::M);
                Word v = read_word(*l, req.addr);
                mon_read(word_addr(req.addr), v);
                set_state(*l, set_of(l), LineState::XMW);
                MshrEntry& m = alloc_mshr(laddr, kind, LineState::IM_A);
                m.atomic_open = true;
                if (lrsc) resv_ = {true, laddr, req.user};
                touch_plru(set_of(l), way_of(l));
                l->perm |= kPermData;
                if (stats_) stats_->l2_hits++;
                complete(req, v, WriteResp::EXOKAY, nullptr);
                return ReqStatus::Done;
            }
            if (l->state == LineState::S) {
                if (mshr_free() == 0) return ReqStatus::Stalled;
                if (stats_) stats_->l2_misses++;
                set_state(*l, set_of(l), LineState::SM_A);
                MshrEntry& m = alloc_mshr(laddr, kind, LineState::SM_A);
                m.req = req;
                m.has_req = true;
                send_request(MsgKind::GetM, laddr);
                return ReqStatus::Pending;
            }
            return ReqStatus::Stalled;
        }
        uint32_t set = line_split(laddr, geom_).set;
        int way = ensure_way(set);
        if (way < 0 || mshr_free() == 0) return ReqStatus::Stalled;
        if (stats_) stats_->l2_misses++;
        L2Line& l = lines_[size_t(set) * geom_.ways + uint32_t(way)];
        l.tag = line_split(laddr, geom_).tag;
        l.perm = kPermData;
        set_state(l, set, LineState::IM_A);
        MshrEntry& m = alloc_mshr(laddr, kind, LineState::IM_A);
        m.req = req;
        m.has_req = true;
        send_request(MsgKind::GetM, laddr);
        return ReqStatus::Pending;
    }

    ReqStatus handle_amo_write(const CoreSideReq& req) {
        Addr laddr = la(req.addr);
        MshrEntry* m = find_mshr(laddr);
        if (!m || !m->atomic_open || m->kind != MshrKind::AtomicAmo)
            throw ProtocolError("AmoWrite with no open atomic on line");
        L2Line* l = probe(laddr);
        if (!l || l->state != LineState::XMW)
            throw ProtocolError("AmoWrite: line not in XMW");
        write_word(*l, req.addr, req.data);
        mon_write(word_addr(req.addr), req.data);
        set_state(*l, set_of(l), LineState::M);
        free_mshr(laddr);  // replays stalled forwards in arrival order
        complete(req, 0, WriteResp::EXOKAY, nullptr);
        return ReqStatus::Done;
    }

    ReqStatus handle_sc(const CoreSideReq& req) {
        Addr laddr = la(req.addr);
        bool ok = resv_.live && resv_.line == laddr && resv_.user == req.user;
        if (!ok) {
            kill_reservation();  // SC ends the atomic either way
            if (stats_) stats_->sc_fail++;
            complete(req, 1, WriteResp::OKAY, nullptr);
            return ReqStatus::Done;
        }
        L2Line* l = probe(laddr);
        MshrEntry* m = find_mshr(laddr);
        if (!l || l->state != LineState::XMW || !m || !m->atomic_open)
            throw ProtocolError("live reservation without an open XMW window");
        write_word(*l, req.addr, req.data);
        mon_write(word_addr(req.addr), req.data);
        set_state(*l, set_of(l), LineState::M);
        resv_.live = false;
        free_mshr(laddr);
        if (stats_) stats_->sc_success++;
        complete(req, 0, WriteResp::EXOKAY, nullptr);
        return ReqStatus::Done;
    }

    ReqStatus handle_flush_request(const CoreSideReq&) {
        if (flush_.phase != FlushPhase::None) return ReqStatus::Stalled;
        for (auto& m : mshrs_)
            if (m.atomic_open && m.kind == MshrKind::AtomicAmo)
                return ReqStatus::Stalled;  // deferred until the atomic closes
        kill_reservation();
        flush_.phase = FlushPhase::WaitL1;
        if (mon_) mon_->on_l2_flush_begin(self_, mon_->now);
        return ReqStatus::Pending;
    }

    // ------------------------------------------------------------------
    // Victim selection / eviction
    // ------------------------------------------------------------------

    // Returns a free way in the set, evicting if needed; -1 when every way is
    // pinned by an in-flight transaction or the eviction needs an MSHR that
    // is not available.
    int ensure_way(uint32_t set) {
        for (uint32_t w = 0; w < geom_.ways; ++w)
            if (lines_[size_t(set) * geom_.ways + w].state == LineState::I) return int(w);
        // evict: try PLRU choice first, then any stable line
        uint32_t first = plru_victim(set);
        for (uint32_t k = 0; k < geom_.ways; ++k) {
            uint32_t w = (first + k) % geom_.ways;
            L2Line& l = lines_[size_t(set) * geom_.ways + w];
            if (!line_state_stable(l.state) || l.state == LineState::I) continue;
            Addr laddr = line_addr_of(set, l.tag);
            if (find_mshr(laddr)) continue;
            if (l.state == LineState::M) {
                if (mshr_free() < 2) continue;  // need entries for both wb and miss
                send_putm(l, set);
                alloc_mshr(laddr, MshrKind::Writeback, LineState::MI_A);
            } else {
                // clean relinquish; the directory drops us as sharer/owner
                CohMsg m;
                m.kind = MsgKind::PutS;
                m.addr = laddr;
                m.dst = amap_.home_tile(laddr);
                send(std::move(m));
            }
            if (resv_.live && resv_.line == laddr) kill_reservation();
            snoop_l1(laddr, l.perm);  // inclusion: the L1 may still hold it
            set_state(l, set, LineState::I);
            return int(w);
        }
        return -1;
    }

    // ------------------------------------------------------------------
    // Flush FSM
    // ------------------------------------------------------------------

    void flush_scan() {
        uint32_t budget = 16;
        while (flush_.set < geom_.sets && budget > 0) {
            bool set_done = true;
            for (uint32_t w = 0; w < geom_.ways && budget > 0; ++w) {
                L2Line& l = lines_[size_t(flush_.set) * geom_.ways + w];
                if (l.state == LineState::I) continue;
                Addr laddr = line_addr_of(flush_.set, l.tag);
                if (find_mshr(laddr)) { set_done = false; continue; }
                if (l.state == LineState::M) {
                    if (mshr_free() == 0) { set_done = false; budget = 0; break; }
                    send_putm(l, flush_.set);
                    alloc_mshr(laddr, MshrKind::Writeback, LineState::MI_A);
                    if (mon_) mon_->on_flush_writeback(self_, mon_->now);
                } else if (l.state == LineState::S || l.state == LineState::E) {
                    CohMsg m;
                    m.kind = MsgKind::PutS;
                    m.addr = laddr;
                    m.dst = amap_.home_tile(laddr);
                    send(std::move(m));
                } else {
                    set_done = false;  // transient: wait for it to settle
                    continue;
                }
                set_state(l, flush_.set, LineState::I);
                --budget;
            }
            if (!set_done) break;
            ++flush_.set;
        }
        if (flush_.set >= geom_.sets) flush_.phase = FlushPhase::Drain;
    }

    void flush_try_finish() {
        for (auto& m : mshrs_)
            if (m.kind == MshrKind::Writeback) return;
        flush_.phase = FlushPhase::None;
        if (stats_) stats_->l2_flushes++;
        CoreCompletion c;
        c.op = CoreOp::FlushL2;
        completion_ = c;
    }

    // ------------------------------------------------------------------
    // Incoming message processing
    // ------------------------------------------------------------------

    void process_msg(const CohMsg& msg) {
        switch (msg.kind) {
            case MsgKind::FwdGetS:
            case MsgKind::FwdGetM: handle_forward(msg); break;
            case MsgKind::Inv: handle_inv(msg); break;
            case MsgKind::DataRsp: handle_data(msg); break;
            case MsgKind::WbAck: handle_wback(msg); break;
            default:
                throw ProtocolError(std::string("L2 received unexpected ") + to_string(msg.kind));
        }
    }

    void respond_data(const CohMsg& fwd, const L2Line& l, bool dirty) {
        CohMsg rsp;
        rsp.kind = MsgKind::DataRsp;
        rsp.addr = fwd.addr;
        rsp.dst = fwd.req;
        rsp.has_data = true;
        rsp.data = l.data;
        rsp.meta.dirty = dirty;
        send(std::move(rsp));
    }

    void respond_wb_copy(const CohMsg& fwd, const L2Line& l, bool dirty) {
        CohMsg rsp;
        rsp.kind = MsgKind::DataRsp;
        rsp.addr = fwd.addr;
        rsp.dst = amap_.home_tile(fwd.addr);
        rsp.has_data = true;
        rsp.data = l.data;
        rsp.meta.dirty = dirty;
        rsp.meta.wb = true;
        send(std::move(rsp));
    }

    void handle_forward(const CohMsg& msg) {
        Addr laddr = la(msg.addr);
        MshrEntry* m = find_mshr(laddr);
        L2Line* l = probe(laddr);

        if (m) {
            switch (m->pending) {
                case LineState::MI_A:
                    // ownership already on its way back via PutM; the home
                    // slice satisfies the requester from it
                    return;
                default: break;
            }
            if (m->atomic_open) {
                if (m->kind == MshrKind::AtomicAmo) {
                    m->stalled.push_back(msg);  // stalled until the closing write
                    return;
                }
                // LR window: serve the forward, then the atomic is completed
                kill_reservation();
                handle_forward(msg);
                return;
            }
            // fill still in flight (IS_A/IM_A/SM_A): the grant that makes us
            // owner is already on the response plane; stall and replay
            m->stalled.push_back(msg);
            return;
        }

        if (!l || l->state == LineState::I) {
            // unknown line: the copy was already relinquished (clean PutS in
            // flight, or a completed writeback). Acknowledge without data so
            // the home can close the recall.
            CohMsg ack;
            ack.kind = MsgKind::InvAck;
            ack.addr = laddr;
            ack.dst = amap_.home_tile(laddr);
            ack.meta.i_ack = true;
            send(std::move(ack));
            return;
        }

        bool home_is_req = msg.req == amap_.home_tile(laddr);
        switch (l->state) {
            case LineState::M:
            case LineState::E: {
                bool dirty = l->state == LineState::M;
                if (msg.kind == MsgKind::FwdGetS) {
                    respond_data(msg, *l, dirty);
                    respond_wb_copy(msg, *l, dirty);
                    set_state(*l, set_of(l), LineState::S);
                } else {
                    respond_data(msg, *l, dirty);
                    if (!home_is_req) {
                        CohMsg ack;
                        ack.kind = MsgKind::InvAck;
                        ack.addr = laddr;
                        ack.dst = amap_.home_tile(laddr);
                        send(std::move(ack));
                    }
                    snoop_l1(laddr, l->perm);
                    set_state(*l, set_of(l), LineState::I);
                }
                break;
            }
            case LineState::S:
                // directory race tolerance: an S copy cannot supply exclusive
                // data; invalidating forwards ack without data
                if (msg.kind == MsgKind::FwdGetM) {
                    CohMsg ack;
                    ack.kind = MsgKind::InvAck;
                    ack.addr = laddr;
                    ack.dst = amap_.home_tile(laddr);
                    send(std::move(ack));
                    snoop_l1(laddr, l->perm);
                    set_state(*l, set_of(l), LineState::I);
                } else {
                    respond_data(msg, *l, false);
                }
                break;
            default:
                throw ProtocolError("forward hit unexpected state");
        }
    }

    void handle_inv(const CohMsg& msg) {
        Addr laddr = la(msg.addr);
        MshrEntry* m = find_mshr(laddr);
        L2Line* l = probe(laddr);
        auto ack = [&] {
            CohMsg a;
            a.kind = MsgKind::InvAck;
            a.addr = laddr;
            a.dst = msg.src;
            send(std::move(a));
        };

        if (m) {
            switch (m->pending) {
                case LineState::IS_A:
                    // invalidated while the fill is in flight: ack now, use
                    // the data once when it lands, do not cache it
                    m->inv_pending = true;
                    ack();
                    return;
                case LineState::SM_A: {
                    m->pending = LineState::IM_A;
                    if (l) {
                        snoop_l1(laddr, l->perm);
                        set_state(*l, set_of(l), LineState::IM_A);
                    }
                    ack();
                    return;
                }
                case LineState::IM_A:
                case LineState::MI_A:
                    ack();  // stale sharer listing
                    return;
                default: break;
            }
            if (m->atomic_open) {
                if (m->kind == MshrKind::AtomicLrsc) {
                    kill_reservation();
                    handle_inv(msg);
                    return;
                }
                m->stalled.push_back(msg);
                return;
            }
        }
        if (l && l->state == LineState::S) {
            snoop_l1(laddr, l->perm);
            set_state(*l, set_of(l), LineState::I);
            ack();
            return;
        }
        if (l && (l->state == LineState::M || l->state == LineState::E)) {
            // only reachable under injected faults; shed the line so the run
            // proceeds and let the monitor flag the protocol damage
            snoop_l1(laddr, l->perm);
            set_state(*l, set_of(l), LineState::I);
            ack();
            return;
        }
        ack();  // unknown line: acknowledged without data
    }

    void handle_data(const CohMsg& msg) {
        Addr laddr = la(msg.addr);
        MshrEntry* m = find_mshr(laddr);
        if (!m) throw ProtocolError("DataRsp without MSHR");
        L2Line* l = probe(laddr);

        if (m->pending == LineState::IS_A) {
            CoreSideReq req = m->req;
            if (m->no_install || m->inv_pending) {
                Word v = msg.data.word(uint32_t(req.addr & (geom_.line_bytes - 1)), endian_);
                if (req.op == CoreOp::Load) mon_read(word_addr(req.addr), v);
                if (l) set_state(*l, set_of(l), LineState::I);
                CoreCompletion c;
                c.op = req.op;
                c.addr = req.addr;
                c.value = v;
                completion_ = c;  // no line fill: the copy is not retained
                free_mshr(laddr);
                return;
            }
            if (!l) throw ProtocolError("fill for unallocated way");
            l->data = msg.data;
            set_state(*l, set_of(l), msg.meta.exclusive ? LineState::E : LineState::S);
            touch_plru(set_of(l), way_of(l));
            Word v = read_word(*l, req.addr);
            if (req.op == CoreOp::Load) mon_read(word_addr(req.addr), v);
            complete(req, v, WriteResp::EXOKAY, l);
            free_mshr(laddr);
            return;
        }

        if (m->pending == LineState::IM_A || m->pending == LineState::SM_A) {
            if (!l) throw ProtocolError("fill for unallocated way");
            l->data = msg.data;
            set_state(*l, set_of(l), LineState::M);
            touch_plru(set_of(l), way_of(l));
            CoreSideReq req = m->req;
            switch (m->kind) {
                case MshrKind::Write: {
                    write_word(*l, req.addr, req.data);
                    mon_write(word_addr(req.addr), req.data);
                    complete(req, 0, WriteResp::EXOKAY, nullptr);
                    free_mshr(laddr);
                    break;
                }
                case MshrKind::AtomicAmo:
                case MshrKind::AtomicLrsc: {
                    Word v = read_word(*l, req.addr);
                    mon_read(word_addr(req.addr), v);
                    set_state(*l, set_of(l), LineState::XMW);
                    m->pending = LineState::IM_A;
                    m->atomic_open = true;
                    m->has_req = false;
                    if (m->kind == MshrKind::AtomicLrsc) {
                        resv_ = {true, laddr, req.user};
                        // forwards that queued behind the fill serialize
                        // inside the window: serve them now (killing it)
                        std::deque<CohMsg> q = std::move(m->stalled);
                        complete(req, v, WriteResp::EXOKAY, nullptr);
                        for (auto& f : q) process_msg(f);
                    } else {
                        complete(req, v, WriteResp::EXOKAY, nullptr);
                    }
                    break;
                }
                default: throw ProtocolError("DataRsp for unexpected MSHR kind");
            }
            return;
        }
        throw ProtocolError("DataRsp in unexpected pending state");
    }

    void handle_wback(const CohMsg& msg) {
        Addr laddr = la(msg.addr);
        MshrEntry* m = find_mshr(laddr);
        if (!m || m->kind != MshrKind::Writeback)
            throw ProtocolError("WbAck without writeback MSHR");
        free_mshr(laddr);
    }

    // ------------------------------------------------------------------
    // Word access
    // ------------------------------------------------------------------

    Addr word_addr(Addr a) const { return a & ~Addr(kWordBytes - 1); }

    Word read_word(const L2Line& l, Addr addr) const {
        return l.data.word(uint32_t(word_addr(addr) & (geom_.line_bytes - 1)), endian_);
    }
    void write_word(L2Line& l, Addr addr, Word v) {
        l.data.set_word(uint32_t(word_addr(addr) & (geom_.line_bytes - 1)), v, endian_);
    }

    TileId self_ = 0;
    CacheGeometry geom_{};
    Endian endian_ = Endian::Little;
    uint32_t mshr_cap_ = 4;
    AddressMap amap_{};
    GlobalMonitor* mon_ = nullptr;
    RunStats* stats_ = nullptr;
    const FaultPlan* faults_ = nullptr;

    std::vector<L2Line> lines_;
    std::vector<uint32_t> plru_;
    std::vector<MshrEntry> mshrs_;
    Reservation resv_{};
    FlushState flush_{};
    std::deque<CohMsg> inbox_;
    std::optional<CoreCompletion> completion_;
};

inline void L2Controller::encode_state(std::vector<uint8_t>& out) const {
    auto put8 = [&](uint8_t v) { out.push_back(v); };
    auto put64 = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
    };
    for (auto& l : lines_) {
        put8(uint8_t(l.state));
        if (l.state != LineState::I) {
            put64(l.tag);
            put8(l.perm);
            for (uint32_t b = 0; b < geom_.line_bytes; ++b) put8(l.data.bytes[b]);
        }
    }
    for (auto p : plru_) put8(uint8_t(p));
    put8(uint8_t(mshrs_.size()));
    for (auto& m : mshrs_) {
        put64(m.line);
        put8(uint8_t(m.kind));
        put8(uint8_t(m.pending));
        put8(uint8_t(m.atomic_open) | uint8_t(m.no_install << 1) | uint8_t(m.inv_pending << 2) |
             uint8_t(m.has_req << 3));
        put8(uint8_t(m.stalled.size()));
        for (auto& s : m.stalled) {
            put8(uint8_t(s.kind));
            put64(s.addr);
            put64(s.req);
        }
        if (m.has_req) {
            put8(uint8_t(m.req.op));
            put64(m.req.addr);
            put64(m.req.data);
            put8(m.req.user);
        }
    }
    put8(uint8_t(resv_.live));
    if (resv_.live) {
        put64(resv_.line);
        put8(resv_.user);
    }
}

}  // namespace tilesim
