#pragma once

#include <deque>
#include <set>
#include <vector>

#include "tilesim/config.hpp"
#include "tilesim/l2.hpp"
#include "tilesim/monitor.hpp"
#include "tilesim/stats.hpp"
#include "tilesim/trace.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

// In-order blocking core: one outstanding memory operation, a small
// write-through no-write-allocate L1D, an optional L1I presence set, and the
// read/write-splitting adapter for AMOs and LR/SC. Composite trace ops
// (LOCK, INC, LLCFLUSH, ...) expand into micro-sequences here.
class CoreModel {
public:
    CoreModel() = default;
    CoreModel(unsigned core_idx, TileId tile, const SocConfig& cfg, AddressMap amap,
              GlobalMonitor* mon = nullptr, RunStats* stats = nullptr, uint64_t seed = 0)
        : idx_(core_idx),
          tile_(tile),
          geom_(cfg.l1d_geom),
          l1i_present_(cfg.l1i_present),
          endian_(cfg.endian),
          amap_(std::move(amap)),
          mon_(mon),
          stats_(stats),
          rng_(hash_combine(seed, 0xc0de + core_idx)) {
        l1_.resize(size_t(geom_.sets) * geom_.ways);
        plru_.assign(geom_.sets, 0);
    }

    std::deque<CohMsg> outbox;           // MMIO traffic
    std::vector<Word> registers;         // register-producing op results, in order
    uint64_t retired = 0;

    void set_program(std::vector<TraceOp> prog) {
        prog_ = std::move(prog);
        pc_ = 0;
        phase_ = Phase::Ready;
        micro_ = Micro::None;
        registers.clear();
    }
    void set_skew(uint32_t cycles) { skew_ = cycles; }

    bool done() const { return pc_ >= prog_.size() && phase_ == Phase::Ready; }
    bool mmio_error() const { return mmio_error_; }

    void deliver(const CohMsg& msg) {
        if (msg.kind != MsgKind::MmioRsp) throw ProtocolError("core received non-MMIO message");
        mmio_rsp_ = msg;
        has_mmio_rsp_ = true;
    }

    void resume() { ++resume_credits_; if (stats_) stats_->thread_resumes++; }

    // ACE snoop from the tile's L2: data-permission hits invalidate the L1D
    // line, instruction invalidations are counted no-ops.
    void l1_snoop(Addr addr, uint8_t perm) {
        if (perm & kPermInstr) {
            if (stats_) stats_->icache_inval_noops++;
        }
        if (perm & kPermData) {
            if (l1_invalidate(line_base(addr, geom_.line_bytes))) {
                if (stats_) stats_->inval_l1_hits++;
            } else {
                if (stats_) stats_->inval_ignored++;
            }
        }
    }

    void step(L2Controller& l2, uint64_t cycle) {
        if (skew_ > 0) { --skew_; return; }

        if (auto c = l2.take_completion()) {
            on_l2_completion(l2, *c);
            return;
        }
        switch (phase_) {
            case Phase::WaitL2: return;  // completion polled above
            case Phase::WaitMmio:
                if (has_mmio_rsp_) {
                    has_mmio_rsp_ = false;
                    on_mmio_rsp(mmio_rsp_);
                }
                return;
            case Phase::WaitResume:
                if (resume_credits_ > 0) {
                    --resume_credits_;
                    retire();
                }
                return;
            case Phase::Backoff:
                if (backoff_ > 0) { --backoff_; return; }
                phase_ = Phase::Ready;
                return issue(l2, cycle);
            case Phase::WaitFlush: {
                if (l2.l1_flush_requested()) {
                    if (!l1_flush_started_) {
                        l1_flush_started_ = true;
                        l1_flush_delay_ = l1_any_valid() ? 1 : 0;
                    }
                    if (l1_flush_delay_ > 0) { --l1_flush_delay_; return; }
                    l1_flush_all();
                    l2.l1_flush_done();
                    l1_flush_started_ = false;
                }
                return;
            }
            case Phase::Ready: return issue(l2, cycle);
        }
    }

    // ------------------------------------------------------------------
    // L1D introspection (tests)
    // ------------------------------------------------------------------

    bool l1_holds(Addr addr) const {
        return const_cast<CoreModel*>(this)->l1_probe(line_base(addr, geom_.line_bytes)) != nullptr;
    }

private:
    enum class Phase : uint8_t { Ready, WaitL2, WaitMmio, WaitResume, Backoff, WaitFlush };

    // micro-op within the current trace op
    enum class Micro : uint8_t {
        None,
        AmoWritePhase,   // atomic read returned, write pending
        LockLr,          // spinlock: LR issued
        LockSc,          // spinlock: SC issued
        IncStore,        // INC: load returned, store pending
        LlcFlushTrigger, // writing flush registers, index in seq_idx_
        LlcFlushPoll,    // polling status registers
        AccStartWrite,
    };

    struct L1Line {
        uint64_t tag = 0;
        bool valid = false;
        LineData data{};
    };

    // ------------------------------------------------------------------
    // Issue path
    // ------------------------------------------------------------------

    void issue(L2Controller& l2, uint64_t cycle) {
        (void)cycle;
        if (pc_ >= prog_.size()) return;
        const TraceOp& op = prog_[pc_];
        // resume a micro-sequence before looking at the op kind
        switch (micro_) {
            case Micro::IncStore: issue_store(l2, op.addr, inc_temp_ + 1); return;
            case Micro::LockSc: issue_sc(l2, op.addr, 1, false); return;
            case Micro::LockLr: issue_lr(l2, op.addr, false); return;
            case Micro::AmoWritePhase: {
                CoreSideReq w;
                w.op = CoreOp::AmoWrite;
                w.addr = op.addr;
                w.data = amo_alu(atop_of(op.kind), amo_old_, op.value);
                w.lock = true;
                w.atop = atop_of(op.kind);
                issue_to_l2(l2, w);
                return;
            }
            default: break;
        }
        switch (op.kind) {
            case TraceOpKind::Load: issue_load(l2, op.addr, true); return;
            case TraceOpKind::Store: issue_store(l2, op.addr, op.value); return;
            case TraceOpKind::Ifetch: issue_ifetch(l2, op.addr); return;
            case TraceOpKind::Fence: retire(); return;  // blocking core: already drained
            case TraceOpKind::Lr: issue_lr(l2, op.addr, true); return;
            case TraceOpKind::Sc: issue_sc(l2, op.addr, op.value, true); return;
            case TraceOpKind::FlushL2: {
                CoreSideReq r;
                r.op = CoreOp::FlushL2;
                if (l2.core_request(r) == ReqStatus::Pending) phase_ = Phase::WaitFlush;
                return;
            }
            case TraceOpKind::LlcFlush: {
                micro_ = Micro::LlcFlushTrigger;
                seq_idx_ = 0;
                issue_mmio_write(amap_.mem_flush_trigger(0), 1);
                return;
            }
            case TraceOpKind::Lock: {
                micro_ = Micro::LockLr;
                issue_lr(l2, op.addr, false);
                return;
            }
            case TraceOpKind::Unlock: issue_store(l2, op.addr, 0); return;
            case TraceOpKind::Inc: issue_load(l2, op.addr, false); return;
            case TraceOpKind::Wfi:
                phase_ = Phase::WaitResume;
                return;
            case TraceOpKind::AccStart: {
                micro_ = Micro::AccStartWrite;
                if (op.addr >= amap_.acc_tiles.size())
                    throw ConfigError("ACCSTART: no such accelerator");
                issue_mmio_write(amap_.acc_start(size_t(op.addr)), 1);
                return;
            }
            default: {  // AMOs
                if (!op_is_amo(op.kind)) throw ProtocolError("unhandled op");
                issue_amo_read(l2, op.addr);
                return;
            }
        }
    }

    void issue_load(L2Controller& l2, Addr addr, bool record) {
        if (amap_.is_mmio(addr)) {
            record_next_ = record;
            issue_mmio_read(addr);
            return;
        }
        if (L1Line* l = l1_probe(line_base(addr, geom_.line_bytes))) {
            Word v = l->data.word(uint32_t(addr & (geom_.line_bytes - 1)) & ~uint32_t(kWordBytes - 1),
                                  endian_);
            if (stats_) stats_->l1d_hits++;
            if (mon_) mon_->on_read(kL1IdBase + tile_, addr & ~Addr(kWordBytes - 1), v, false, true);
            l1_touch(l);
            finish_value(v, record);
            return;
        }
        if (stats_) stats_->l1d_misses++;
        CoreSideReq r;
        r.op = CoreOp::Load;
        r.addr = addr;
        record_next_ = record;
        issue_to_l2(l2, r);
    }

    void issue_store(L2Controller& l2, Addr addr, Word value) {
        if (amap_.is_mmio(addr)) {
            issue_mmio_write(addr, value);
            return;
        }
        CoreSideReq r;
        r.op = CoreOp::Store;
        r.addr = addr;
        r.data = value;
        issue_to_l2(l2, r);
    }

    void issue_ifetch(L2Controller& l2, Addr addr) {
        if (l1i_present_) {
            Addr laddr = line_base(addr, geom_.line_bytes);
            if (l1i_.count(laddr)) {
                retire();
                return;
            }
        }
        CoreSideReq r;
        r.op = CoreOp::Ifetch;
        r.addr = addr;
        issue_to_l2(l2, r);
    }

    void issue_amo_read(L2Controller& l2, Addr addr) {
        l1_invalidate(line_base(addr, geom_.line_bytes));  // atomics bypass the L1
        CoreSideReq r;
        r.op = CoreOp::AmoRead;
        r.addr = addr;
        r.lock = true;
        r.atop = atop_of(prog_[pc_].kind);
        record_next_ = true;  // the AMO's read value is its register result
        issue_to_l2(l2, r);
    }

    void issue_lr(L2Controller& l2, Addr addr, bool record) {
        l1_invalidate(line_base(addr, geom_.line_bytes));
        CoreSideReq r;
        r.op = CoreOp::LrRead;
        r.addr = addr;
        r.lock = true;
        r.atop = 0;                       // zero distinguishes LR/SC from AMOs
        r.user = uint8_t(idx_ + 1);       // reservation tag rides the read
        record_next_ = record;
        issue_to_l2(l2, r);
    }

    void issue_sc(L2Controller& l2, Addr addr, Word value, bool record) {
        l1_invalidate(line_base(addr, geom_.line_bytes));
        CoreSideReq r;
        r.op = CoreOp::ScWrite;
        r.addr = addr;
        r.data = value;
        r.lock = true;
        r.atop = 0;
        r.user = uint8_t(idx_ + 1);
        record_next_ = record;
        issue_to_l2(l2, r);
    }

    void issue_to_l2(L2Controller& l2, const CoreSideReq& r) {
        switch (l2.core_request(r)) {
            case ReqStatus::Done:
                if (auto c = l2.take_completion()) on_l2_completion(l2, *c);
                return;
            case ReqStatus::Pending: phase_ = Phase::WaitL2; return;
            case ReqStatus::Stalled: return;  // retry next cycle from Ready
        }
    }

    void issue_mmio_read(Addr addr) {
        CohMsg m;
        m.kind = MsgKind::MmioRead;
        m.addr = addr;
        m.src = tile_;
        if (auto t = amap_.resolve_mmio(addr)) m.dst = t->tile;
        outbox.push_back(std::move(m));
        phase_ = Phase::WaitMmio;
    }

    void issue_mmio_write(Addr addr, Word value) {
        CohMsg m;
        m.kind = MsgKind::MmioWrite;
        m.addr = addr;
        m.value = value;
        m.src = tile_;
        if (auto t = amap_.resolve_mmio(addr)) m.dst = t->tile;
        outbox.push_back(std::move(m));
        phase_ = Phase::WaitMmio;
    }

    // ------------------------------------------------------------------
    // Completion path
    // ------------------------------------------------------------------

    void on_l2_completion(L2Controller& l2, const CoreCompletion& c) {
        const TraceOp& op = prog_[pc_];
        switch (c.op) {
            case CoreOp::Load: {
                if (c.has_line && line_state_readable(l2.line_state(c.addr)))
                    l1_install(c.addr, c.line);
                finish_value(c.value, record_next_);
                return;
            }
            case CoreOp::Ifetch: {
                if (l1i_present_) l1i_.insert(line_base(c.addr, geom_.line_bytes));
                retire();
                return;
            }
            case CoreOp::Store: {
                l1_update_word(c.addr, op_store_value(op));
                if (micro_ == Micro::IncStore) {
                    micro_ = Micro::None;
                    retire();
                    return;
                }
                retire();
                return;
            }
            case CoreOp::AmoRead: {
                // adapter ALU takes a cycle; the write issues next step
                (void)op;
                amo_old_ = c.value;
                if (record_next_) registers.push_back(c.value);
                record_next_ = false;
                micro_ = Micro::AmoWritePhase;
                phase_ = Phase::Ready;
                return;
            }
            case CoreOp::AmoWrite: {
                micro_ = Micro::None;
                retire();
                return;
            }
            case CoreOp::LrRead: {
                if (micro_ == Micro::LockLr) {
                    if (c.value != 0) {
                        // lock held: back off briefly and retry the LR
                        micro_ = Micro::LockLr;
                        start_backoff(false);
                        return;
                    }
                    micro_ = Micro::LockSc;
                    issue_sc(l2, op.addr, 1, false);
                    return;
                }
                finish_value(c.value, record_next_);
                return;
            }
            case CoreOp::ScWrite: {
                bool ok = c.resp == WriteResp::EXOKAY;
                if (micro_ == Micro::LockSc) {
                    if (ok) {
                        micro_ = Micro::None;
                        lock_retries_ = 0;
                        retire();
                    } else {
                        micro_ = Micro::LockLr;
                        start_backoff(true);
                    }
                    return;
                }
                // bresp forwarded verbatim: 0 on EXOKAY, 1 on OKAY
                finish_value(ok ? 0 : 1, record_next_);
                return;
            }
            case CoreOp::FlushL2: {
                phase_ = Phase::Ready;
                retire();
                return;
            }
        }
    }

    void on_mmio_rsp(const CohMsg& rsp) {
        if (rsp.meta.error) {
            mmio_error_ = true;
            throw ProtocolError("MMIO access to unmapped register");
        }
        phase_ = Phase::Ready;
        switch (micro_) {
            case Micro::LlcFlushTrigger: {
                ++seq_idx_;
                if (seq_idx_ < amap_.mem_tiles.size()) {
                    issue_mmio_write(amap_.mem_flush_trigger(seq_idx_), 1);
                } else {
                    micro_ = Micro::LlcFlushPoll;
                    seq_idx_ = 0;
                    issue_mmio_read(amap_.mem_flush_status(0));
                }
                return;
            }
            case Micro::LlcFlushPoll: {
                if (rsp.value == 1) {
                    ++seq_idx_;
                    if (seq_idx_ >= amap_.mem_tiles.size()) {
                        micro_ = Micro::None;
                        retire();
                        return;
                    }
                }
                issue_mmio_read(amap_.mem_flush_status(seq_idx_));
                return;
            }
            case Micro::AccStartWrite: {
                micro_ = Micro::None;
                retire();
                return;
            }
            default: {
                // plain LD/ST to an MMIO address
                const TraceOp& op = prog_[pc_];
                if (op.kind == TraceOpKind::Load) {
                    finish_value(rsp.value, record_next_);
                } else {
                    retire();
                }
                return;
            }
        }
    }

    void finish_value(Word v, bool record) {
        if (record) registers.push_back(v);
        record_next_ = false;
        if (micro_ == Micro::None && pc_ < prog_.size() && prog_[pc_].kind == TraceOpKind::Inc) {
            // INC: non-atomic read-modify-write as two separate accesses
            inc_temp_ = v;
            micro_ = Micro::IncStore;
            phase_ = Phase::Ready;
            return;
        }
        retire();
    }

    void retire() {
        TS_LOG(3, "core " << idx_ << ": retired op " << pc_);
        ++pc_;
        ++retired;
        if (stats_ && idx_ < stats_->retired.size()) stats_->retired[idx_]++;
        phase_ = Phase::Ready;
        micro_ = Micro::None;
    }

    void start_backoff(bool exponential) {
        if (exponential && lock_retries_ < 6) ++lock_retries_;
        uint32_t span = exponential ? (1u << lock_retries_) : 4;
        backoff_ = uint32_t(rng_.below(span)) + 1;
        phase_ = Phase::Backoff;
    }

    Word op_store_value(const TraceOp& op) const {
        if (op.kind == TraceOpKind::Unlock) return 0;
        if (op.kind == TraceOpKind::Inc) return inc_temp_ + 1;
        return op.value;
    }

    // ------------------------------------------------------------------
    // L1D
    // ------------------------------------------------------------------

    L1Line* l1_probe(Addr laddr) {
        LineSplit sp = line_split(laddr, geom_);
        for (uint32_t w = 0; w < geom_.ways; ++w) {
            L1Line& l = l1_[size_t(sp.set) * geom_.ways + w];
            if (l.valid && l.tag == sp.tag) return &l;
        }
        return nullptr;
    }

    void l1_touch(L1Line* l) {
        size_t idx = size_t(l - l1_.data());
        plru_[idx / geom_.ways] = uint32_t(idx % geom_.ways);
    }

    void l1_install(Addr addr, const LineData& data) {
        Addr laddr = line_base(addr, geom_.line_bytes);
        LineSplit sp = line_split(laddr, geom_);
        L1Line* slot = nullptr;
        for (uint32_t w = 0; w < geom_.ways; ++w) {
            L1Line& l = l1_[size_t(sp.set) * geom_.ways + w];
            if (!l.valid) { slot = &l; break; }
        }
        if (!slot) {
            uint32_t w = (plru_[sp.set] + 1) % geom_.ways;  // evict silently (write-through)
            L1Line& victim = l1_[size_t(sp.set) * geom_.ways + w];
            if (mon_)
                mon_->on_line_access_state(kL1IdBase + tile_,
                                           line_addr_of(sp.set, victim.tag), false, false);
            slot = &victim;
        }
        slot->tag = sp.tag;
        slot->valid = true;
        slot->data = data;
        l1_touch(slot);
        if (mon_) mon_->on_line_access_state(kL1IdBase + tile_, laddr, true, false);
    }

    bool l1_invalidate(Addr laddr) {
        if (L1Line* l = l1_probe(laddr)) {
            l->valid = false;
            if (mon_) mon_->on_line_access_state(kL1IdBase + tile_, laddr, false, false);
            return true;
        }
        return false;
    }

    void l1_update_word(Addr addr, Word v) {
        Addr laddr = line_base(addr, geom_.line_bytes);
        if (L1Line* l = l1_probe(laddr)) {
            uint32_t off = uint32_t(addr & (geom_.line_bytes - 1)) & ~uint32_t(kWordBytes - 1);
            l->data.set_word(off, v, endian_);
        }
    }

    bool l1_any_valid() const {
        for (auto& l : l1_)
            if (l.valid) return true;
        return false;
    }

    void l1_flush_all() {
        for (size_t i = 0; i < l1_.size(); ++i) {
            L1Line& l = l1_[i];
            if (!l.valid) continue;
            l.valid = false;
            if (mon_)
                mon_->on_line_access_state(kL1IdBase + tile_,
                                           line_addr_of(uint32_t(i / geom_.ways), l.tag), false,
                                           false);
        }
    }

    Addr line_addr_of(uint32_t set, uint64_t tag) const {
        return tag * (uint64_t(geom_.line_bytes) * geom_.sets) + uint64_t(set) * geom_.line_bytes;
    }

    unsigned idx_ = 0;
    TileId tile_ = 0;
    CacheGeometry geom_{};
    bool l1i_present_ = false;
    Endian endian_ = Endian::Little;
    AddressMap amap_{};
    GlobalMonitor* mon_ = nullptr;
    RunStats* stats_ = nullptr;
    Rng rng_;

    std::vector<TraceOp> prog_;
    size_t pc_ = 0;
    uint32_t skew_ = 0;
    Phase phase_ = Phase::Ready;
    Micro micro_ = Micro::None;
    size_t seq_idx_ = 0;
    bool record_next_ = false;
    Word amo_old_ = 0;
    Word inc_temp_ = 0;
    uint32_t lock_retries_ = 0;
    uint32_t backoff_ = 0;
    uint32_t resume_credits_ = 0;
    bool l1_flush_started_ = false;
    uint32_t l1_flush_delay_ = 0;
    bool mmio_error_ = false;
    bool has_mmio_rsp_ = false;
    CohMsg mmio_rsp_;

    std::vector<L1Line> l1_;
    std::vector<uint32_t> plru_;
    std::set<Addr> l1i_;
};

}  // namespace tilesim
