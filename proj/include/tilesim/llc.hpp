#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <vector>

#include "tilesim/config.hpp"
#include "tilesim/l2.hpp"
#include "tilesim/monitor.hpp"
#include "tilesim/stats.hpp"
#include "tilesim/types.hpp"

namespace tilesim {

// Last-level cache slice plus directory controller for one memory tile.
// The directory blocks per line: at most one transaction is in flight for a
// line, conflicting requests wait in arrival order. DMA bursts arrive on the
// DMA planes and leave every touched line in V.
class LlcSlice {
public:
    LlcSlice() = default;
    LlcSlice(TileId self, size_t slice_idx, const SocConfig& cfg, AddressMap amap,
             GlobalMonitor* mon = nullptr, RunStats* stats = nullptr,
             const FaultPlan* faults = nullptr)
        : self_(self),
          geom_(cfg.llc_geom),
          endian_(cfg.endian),
          amap_(std::move(amap)),
          rd_lat_(cfg.mem_read_latency),
          wr_lat_(cfg.mem_write_latency),
          txn_cap_(cfg.llc_mshrs),
          grant_excl_(cfg.llc_grant_exclusive),
          mon_(mon),
          stats_(stats),
          faults_(faults) {
        part_base_ = amap_.partition_base(slice_idx);
        part_size_ = amap_.partition_bytes();
        memory.assign(part_size_, 0);
        frames_.resize(size_t(geom_.sets) * geom_.ways);
        plru_.assign(geom_.sets, 0);
    }

    std::deque<CohMsg> outbox;
    std::vector<uint8_t> memory;  // backing storage for this slice's partition

    // per-slice counters (also aggregated into RunStats)
    uint64_t mem_reads = 0, mem_writes = 0;
    uint64_t hits = 0, misses = 0, v_hits = 0;

    void deliver(const CohMsg& msg) { inbox_.push_back(msg); }

    void step() {
        tick_txns();
        tick_flush();
        tick_nc_read();
        advance_read_burst();
        if (!retry_.empty()) {
            for (auto& m : retry_) inbox_.push_back(m);
            retry_.clear();
        }
        drain_inbox();
    }

    // ------------------------------------------------------------------
    // Introspection
    // ------------------------------------------------------------------

    DirKind dir_kind(Addr addr) const {
        Addr laddr = line_base(addr, geom_.line_bytes);
        if (const Txn* t = find_txn(laddr))
            return t->phase == Phase::MemRead || t->phase == Phase::MemWrite ? DirKind::BusyMem
                                                                             : DirKind::BusyRecall;
        const Frame* f = probe(laddr);
        return f ? f->kind : DirKind::I;
    }

    std::vector<TileId> sharers(Addr addr) const {
        const Frame* f = probe(line_base(addr, geom_.line_bytes));
        return f ? f->sharers : std::vector<TileId>{};
    }
    TileId owner(Addr addr) const {
        const Frame* f = probe(line_base(addr, geom_.line_bytes));
        return f ? f->owner : kNoTile;
    }
    bool dirty(Addr addr) const {
        const Frame* f = probe(line_base(addr, geom_.line_bytes));
        return f && f->dirty;
    }

    bool flush_active() const { return flush_remaining_ > 0 || flush_wait_ > 0; }

    bool busy() const {
        return !inbox_.empty() || !outbox.empty() || !txns_.empty() || !retry_.empty() ||
               !read_bursts_.empty() || flush_active() || nc_read_active() || !waiting_.empty();
    }

    uint64_t datarsp_sent = 0;  // for the drop-response fault

    Word peek_mem_word(Addr addr) const {
        return load_word(memory.data() + (addr - part_base_), endian_);
    }

    template <typename Fn>
    void for_each_entry(Fn&& fn) const {
        for (uint32_t s = 0; s < geom_.sets; ++s)
            for (uint32_t w = 0; w < geom_.ways; ++w) {
                const Frame& f = frames_[size_t(s) * geom_.ways + w];
                if (f.kind != DirKind::I) fn(frame_addr(s, f.tag), f);
            }
    }

    struct Frame {
        uint64_t tag = 0;
        DirKind kind = DirKind::I;
        TileId owner = kNoTile;
        std::vector<TileId> sharers;
        bool dirty = false;
        LineData data{};
    };

    void encode_state(std::vector<uint8_t>& out) const;

private:
    enum class Phase : uint8_t { VictimRecall, VictimInv, MemRead, MemWrite, Recall, InvCollect };

    enum class OpKind : uint8_t { GetS, GetM, DmaRead, DmaWrite, Evict };

    struct Txn {
        Addr line = 0;
        Addr victim = 0;         // busy victim line during eviction phases
        bool has_victim = false;
        Phase phase = Phase::MemRead;
        OpKind op = OpKind::GetS;
        CohMsg msg;              // original request (GetS/GetM/DMA line op)
        uint32_t acks = 0;
        uint32_t mem_wait = 0;
        TileId recall_from = kNoTile;
    };

    // ------------------------------------------------------------------
    // Geometry / frames
    // ------------------------------------------------------------------

    Addr frame_addr(uint32_t set, uint64_t tag) const {
        return tag * (uint64_t(geom_.line_bytes) * geom_.sets) + uint64_t(set) * geom_.line_bytes;
    }

    Frame* probe(Addr laddr) {
        LineSplit sp = line_split(laddr, geom_);
        for (uint32_t w = 0; w < geom_.ways; ++w) {
            Frame& f = frames_[size_t(sp.set) * geom_.ways + w];
            if (f.kind != DirKind::I && f.tag == sp.tag) return &f;
        }
        return nullptr;
    }
    const Frame* probe(Addr laddr) const { return const_cast<LlcSlice*>(this)->probe(laddr); }

    uint32_t set_of(const Frame* f) const {
        return uint32_t(size_t(f - frames_.data()) / geom_.ways);
    }

    void touch_plru(uint32_t set, uint32_t way) {
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

    uint32_t plru_choice(uint32_t set) const {
        if (is_pow2(geom_.ways)) {
            uint32_t bits = plru_[set];
            uint32_t node = 1;
            uint32_t way = 0;
            for (uint32_t span = geom_.ways; span > 1; span /= 2) {
                bool right = !(bits & (1u << node));
                if (right) way += span / 2;
                node = node * 2 + (right ? 1 : 0);
            }
            return way;
        }
        return (plru_[set] + 1) % geom_.ways;
    }

    // ------------------------------------------------------------------
    // Txn bookkeeping
    // ------------------------------------------------------------------

    Txn* find_txn(Addr laddr) {
        for (auto& t : txns_)
            if (t.line == laddr || (t.has_victim && t.victim == laddr)) return &t;
        return nullptr;
    }
    const Txn* find_txn(Addr laddr) const { return const_cast<LlcSlice*>(this)->find_txn(laddr); }

    void finish_txn(Txn* t) {
        Addr line = t->line;
        Addr victim = t->has_victim ? t->victim : 0;
        bool has_victim = t->has_victim;
        for (size_t i = 0; i < txns_.size(); ++i)
            if (&txns_[i] == t) {
                txns_.erase(txns_.begin() + long(i));
                break;
            }
        unlock(line);
        if (has_victim) unlock(victim);
    }

    void unlock(Addr laddr) {
        auto it = waiting_.find(laddr);
        if (it == waiting_.end()) return;
        for (auto& m : it->second) inbox_.push_back(m);
        waiting_.erase(it);
    }

    // ------------------------------------------------------------------
    // Emission helpers
    // ------------------------------------------------------------------

    void send(CohMsg m) {
        m.src = self_;
        if (m.kind == MsgKind::DataRsp) {
            ++datarsp_sent;
            if (faults_ && faults_->drop_datarsp_nth && datarsp_sent == faults_->drop_datarsp_nth)
                return;  // injected fault: the response vanishes
        }
        outbox.push_back(std::move(m));
    }

    void send_data(TileId dst, Addr laddr, const LineData& data, bool exclusive) {
        CohMsg m;
        m.kind = MsgKind::DataRsp;
        m.addr = laddr;
        m.dst = dst;
        m.has_data = true;
        m.data = data;
        m.meta.exclusive = exclusive;
        send(std::move(m));
    }

    void send_fwd(MsgKind kind, Addr laddr, TileId owner_tile, TileId requester) {
        CohMsg m;
        m.kind = kind;
        m.addr = laddr;
        m.dst = owner_tile;
        m.req = requester;
        send(std::move(m));
    }

    void send_inv(Addr laddr, TileId sharer) {
        CohMsg m;
        m.kind = MsgKind::Inv;
        m.addr = laddr;
        m.dst = sharer;
        send(std::move(m));
    }

    // ------------------------------------------------------------------
    // Memory access
    // ------------------------------------------------------------------

    void mem_read_line(Addr laddr, LineData& out) {
        std::copy_n(memory.data() + (laddr - part_base_), geom_.line_bytes, out.bytes.begin());
        ++mem_reads;
        if (stats_) stats_->mem_reads++;
    }

    void mem_write_line(Addr laddr, const LineData& data) {
        std::copy_n(data.bytes.begin(), geom_.line_bytes, memory.data() + (laddr - part_base_));
        ++mem_writes;
        if (stats_) stats_->mem_writes++;
    }

    // ------------------------------------------------------------------
    // Inbox
    // ------------------------------------------------------------------

    void drain_inbox() {
        while (!inbox_.empty()) {
            CohMsg m = inbox_.front();
            inbox_.pop_front();
            process_msg(m);
        }
    }

    void process_msg(const CohMsg& msg) {
        switch (msg.kind) {
            case MsgKind::GetS:
            case MsgKind::GetM:
            case MsgKind::PutS:
            case MsgKind::PutM: handle_request(msg); break;
            case MsgKind::DataRsp:
            case MsgKind::InvAck: handle_response(msg); break;
            case MsgKind::DmaReadBurst:
                if (msg.meta.dma_line) dma_line_request(msg, true);
                else handle_dma_read_burst(msg);
                break;
            case MsgKind::DmaWriteBurst: handle_dma_write(msg); break;
            case MsgKind::MmioRead:
            case MsgKind::MmioWrite: handle_mmio(msg); break;
            default:
                throw ProtocolError(std::string("LLC received unexpected ") + to_string(msg.kind));
        }
    }

    void assert_in_partition(Addr laddr) const {
        if (laddr < part_base_ || laddr >= part_base_ + part_size_)
            throw ProtocolError("request routed to the wrong LLC slice");
    }

    // ------------------------------------------------------------------
    // Coherence requests
    // ------------------------------------------------------------------

    void handle_request(const CohMsg& msg) {
        Addr laddr = line_base(msg.addr, geom_.line_bytes);
        assert_in_partition(laddr);

        if (Txn* t = find_txn(laddr)) {
            // a PutM from the recalled owner completes the recall in place
            // (the forward found the writeback already on the wire)
            if (msg.kind == MsgKind::PutM &&
                (t->phase == Phase::Recall || t->phase == Phase::VictimRecall) &&
                msg.src == t->recall_from && laddr == busy_recall_line(*t)) {
                complete_recall(t, msg);
                return;
            }
            if (msg.kind == MsgKind::PutS) {
                // a clean relinquish racing the recall or an invalidation
                // round; the closing ack arrives separately
                return;
            }
            waiting_[laddr].push_back(msg);
            return;
        }

        switch (msg.kind) {
            case MsgKind::GetS: handle_gets(msg, laddr); break;
            case MsgKind::GetM: handle_getm(msg, laddr); break;
            case MsgKind::PutS: handle_puts(msg, laddr); break;
            case MsgKind::PutM: handle_putm(msg, laddr); break;
            default: break;
        }
    }

    void handle_gets(const CohMsg& msg, Addr laddr) {
        Frame* f = probe(laddr);
        TileId r = msg.src;
        bool no_reg = msg.meta.no_reg;

        if (!f) {
            ++misses;
            if (stats_) stats_->llc_misses++;
            start_fill(msg, laddr);
            return;
        }
        ++hits;
        if (stats_) stats_->llc_hits++;
        touch_plru(set_of(f), uint32_t((f - frames_.data()) % geom_.ways));
        switch (f->kind) {
            case DirKind::V: {
                ++v_hits;
                if (stats_) stats_->llc_v_hits++;
                if (no_reg) {
                    send_data(r, laddr, f->data, false);
                } else if (grant_excl_) {
                    set_dir(f, DirKind::E, r, {});
                    send_data(r, laddr, f->data, true);
                } else {
                    set_dir(f, DirKind::S, kNoTile, {r});
                    send_data(r, laddr, f->data, false);
                }
                break;
            }
            case DirKind::S: {
                if (!no_reg) add_sharer(f, r);
                send_data(r, laddr, f->data, false);
                break;
            }
            case DirKind::E:
            case DirKind::M: {
                Txn t;
                t.line = laddr;
                t.phase = Phase::Recall;
                t.op = OpKind::GetS;
                t.msg = msg;
                t.recall_from = f->owner;
                send_fwd(MsgKind::FwdGetS, laddr, f->owner, r);
                txns_.push_back(std::move(t));
                break;
            }
            default: throw ProtocolError("GetS on invalid frame state");
        }
    }

    void handle_getm(const CohMsg& msg, Addr laddr) {
        Frame* f = probe(laddr);
        TileId r = msg.src;

        if (!f) {
            ++misses;
            if (stats_) stats_->llc_misses++;
            start_fill(msg, laddr);
            return;
        }
        ++hits;
        if (stats_) stats_->llc_hits++;
        touch_plru(set_of(f), uint32_t((f - frames_.data()) % geom_.ways));
        switch (f->kind) {
            case DirKind::V: {
                ++v_hits;
                if (stats_) stats_->llc_v_hits++;
                set_dir(f, DirKind::M, r, {});
                send_data(r, laddr, f->data, true);
                break;
            }
            case DirKind::S: {
                std::vector<TileId> others;
                for (TileId s : f->sharers)
                    if (s != r) others.push_back(s);
                if (others.empty()) {  // sole-sharer upgrade
                    set_dir(f, DirKind::M, r, {});
                    send_data(r, laddr, f->data, true);
                    break;
                }
                for (TileId s : others) send_inv(laddr, s);
                if (faults_ && faults_->skip_invack_wait) {
                    // fault: grant before the acks are in
                    set_dir(f, DirKind::M, r, {});
                    send_data(r, laddr, f->data, true);
                    Txn t;
                    t.line = laddr;
                    t.phase = Phase::InvCollect;
                    t.op = OpKind::GetM;
                    t.msg = msg;
                    t.acks = uint32_t(others.size());
                    t.msg.meta.error = true;  // marks "already responded"
                    txns_.push_back(std::move(t));
                    break;
                }
                Txn t;
                t.line = laddr;
                t.phase = Phase::InvCollect;
                t.op = OpKind::GetM;
                t.msg = msg;
                t.acks = uint32_t(others.size());
                txns_.push_back(std::move(t));
                break;
            }
            case DirKind::E:
            case DirKind::M: {
                if (f->owner == r)
                    throw ProtocolError("GetM from current owner");
                if (faults_ && faults_->duplicate_m) {
                    // fault: hand out a second writable copy
                    set_dir(f, DirKind::M, r, {});
                    send_data(r, laddr, f->data, true);
                    break;
                }
                Txn t;
                t.line = laddr;
                t.phase = Phase::Recall;
                t.op = OpKind::GetM;
                t.msg = msg;
                t.recall_from = f->owner;
                send_fwd(MsgKind::FwdGetM, laddr, f->owner, r);
                txns_.push_back(std::move(t));
                break;
            }
            default: throw ProtocolError("GetM on invalid frame state");
        }
    }

    void handle_puts(const CohMsg& msg, Addr laddr) {
        Frame* f = probe(laddr);
        if (!f) return;  // stale
        TileId p = msg.src;
        if (f->kind == DirKind::S) {
            remove_sharer(f, p);
            if (f->sharers.empty()) set_dir(f, DirKind::V, kNoTile, {});
        } else if (f->kind == DirKind::E && f->owner == p) {
            set_dir(f, DirKind::V, kNoTile, {});
        }
        // anything else: a race leftover, ignore
    }

    void handle_putm(const CohMsg& msg, Addr laddr) {
        Frame* f = probe(laddr);
        TileId p = msg.src;
        if (!f || !(f->kind == DirKind::M || f->kind == DirKind::E) || f->owner != p)
            throw ProtocolError("PutM from non-owner");
        f->data = msg.data;
        f->dirty = f->dirty || msg.meta.dirty;
        set_dir(f, DirKind::V, kNoTile, {});
        CohMsg ack;
        ack.kind = MsgKind::WbAck;
        ack.addr = laddr;
        ack.dst = p;
        send(std::move(ack));
    }

    // ------------------------------------------------------------------
    // Fills (memory reads) and evictions
    // ------------------------------------------------------------------

    // Allocates a frame for laddr, evicting if necessary, and starts the
    // backing-memory read. Enqueues to the retry queue when every candidate
    // way is busy or the txn table is full.
    // reserves a free way for laddr so concurrent fills cannot double-book it
    Frame* claim_frame(Addr laddr) {
        LineSplit sp = line_split(laddr, geom_);
        for (uint32_t w = 0; w < geom_.ways; ++w) {
            Frame& f = frames_[size_t(sp.set) * geom_.ways + w];
            if (f.kind == DirKind::I) {
                f.tag = sp.tag;
                f.kind = DirKind::V;
                f.owner = kNoTile;
                f.sharers.clear();
                f.dirty = false;
                f.data = LineData{};
                return &f;
            }
        }
        return nullptr;
    }

    void start_fill(const CohMsg& msg, Addr laddr) {
        if (txns_.size() >= txn_cap_) {
            retry_.push_back(msg);
            return;
        }
        LineSplit sp = line_split(laddr, geom_);
        bool have_free = false;
        for (uint32_t w = 0; w < geom_.ways; ++w)
            if (frames_[size_t(sp.set) * geom_.ways + w].kind == DirKind::I) have_free = true;
        Txn t;
        t.line = laddr;
        t.msg = msg;
        t.op = msg.kind == MsgKind::GetS                              ? OpKind::GetS
               : msg.kind == MsgKind::GetM                            ? OpKind::GetM
               : msg.kind == MsgKind::DmaReadBurst                    ? OpKind::DmaRead
                                                                      : OpKind::DmaWrite;
        if (!have_free) {
            // evict a victim first
            uint32_t first = plru_choice(sp.set);
            Frame* victim = nullptr;
            for (uint32_t k = 0; k < geom_.ways; ++k) {
                uint32_t w = (first + k) % geom_.ways;
                Frame& f = frames_[size_t(sp.set) * geom_.ways + w];
                if (find_txn(frame_addr(sp.set, f.tag))) continue;
                victim = &f;
                break;
            }
            if (!victim) {
                retry_.push_back(msg);  // all ways busy: allocation stalls
                return;
            }
            Addr vaddr = frame_addr(sp.set, victim->tag);
            t.victim = vaddr;
            t.has_victim = true;
            switch (victim->kind) {
                case DirKind::V:
                    txns_.push_back(t);
                    evict_clean_or_dirty(&txns_.back(), victim);
                    return;
                case DirKind::S: {
                    t.phase = Phase::VictimInv;
                    t.acks = uint32_t(victim->sharers.size());
                    for (TileId s : victim->sharers) send_inv(vaddr, s);
                    txns_.push_back(std::move(t));
                    return;
                }
                case DirKind::E:
                case DirKind::M: {
                    t.phase = Phase::VictimRecall;
                    t.recall_from = victim->owner;
                    send_fwd(MsgKind::FwdGetM, vaddr, victim->owner, self_);
                    txns_.push_back(std::move(t));
                    return;
                }
                default: throw ProtocolError("eviction victim in invalid state");
            }
        }
        claim_frame(laddr);
        t.phase = Phase::MemRead;
        txns_.push_back(std::move(t));
        start_mem_read(&txns_.back());
    }

    // victim data is coherent and unshared; write back if dirty, then fill
    void evict_clean_or_dirty(Txn* t, Frame* victim) {
        Addr vaddr = t->victim;
        if (victim->dirty) mem_write_line(vaddr, victim->data);
        victim->kind = DirKind::I;
        victim->sharers.clear();
        victim->owner = kNoTile;
        victim->dirty = false;
        claim_frame(t->line);  // the freed way belongs to this fill now
        t->phase = Phase::MemRead;
        start_mem_read(t);
    }

    void start_mem_read(Txn* t) {
        uint32_t lat = rd_lat_;
        // full-line DMA writes allocate without reading memory
        if (t->op == OpKind::DmaWrite && t->msg.meta.len == geom_.line_bytes) lat = 0;
        else {
            ++mem_reads;
            if (stats_) stats_->mem_reads++;
        }
        if (lat == 0) {
            complete_mem_read(t);
        } else {
            t->phase = Phase::MemRead;
            t->mem_wait = lat;
        }
    }

    void complete_mem_read(Txn* t) {
        LineSplit sp = line_split(t->line, geom_);
        Frame* target = probe(t->line);  // claimed when the fill started
        if (!target) throw ProtocolError("fill completed without its claimed way");
        bool skip_read = t->op == OpKind::DmaWrite && t->msg.meta.len == geom_.line_bytes;
        if (!skip_read)
            std::copy_n(memory.data() + (t->line - part_base_), geom_.line_bytes,
                        target->data.bytes.begin());
        touch_plru(sp.set, uint32_t((target - &frames_[size_t(sp.set) * geom_.ways])));
        finalize(t, target);
    }

    // ------------------------------------------------------------------
    // Recall / invalidation completions
    // ------------------------------------------------------------------

    Addr busy_recall_line(const Txn& t) const {
        return t.phase == Phase::VictimRecall ? t.victim : t.line;
    }

    void handle_response(const CohMsg& msg) {
        Addr laddr = line_base(msg.addr, geom_.line_bytes);
        Txn* t = find_txn(laddr);
        if (!t) {
            if (msg.kind == MsgKind::InvAck) return;  // late ack (fault builds)
            throw ProtocolError("LLC response without transaction");
        }
        if (msg.kind == MsgKind::InvAck) {
            if (t->phase == Phase::InvCollect || t->phase == Phase::VictimInv) {
                if (t->acks == 0) throw ProtocolError("InvAck underflow");
                if (--t->acks == 0) complete_inv_round(t);
                return;
            }
            if ((t->phase == Phase::Recall || t->phase == Phase::VictimRecall) &&
                msg.src == t->recall_from) {
                complete_recall(t, msg);
                return;
            }
            return;
        }
        // DataRsp: owner copy-back for a recall
        if (t->phase != Phase::Recall && t->phase != Phase::VictimRecall)
            throw ProtocolError("owner copy-back outside recall");
        complete_recall(t, msg);
    }

    // Recall completion: by owner copy-back (DataRsp), by owner writeback
    // racing the forward (PutM), by a clean owner's PutS, or by the owner's
    // InvAck after serving a FwdGetM directly.
    void complete_recall(Txn* t, const CohMsg& msg) {
        Addr laddr = busy_recall_line(*t);
        Frame* f = probe(laddr);
        if (!f) throw ProtocolError("recall completion without frame");

        bool owner_responded_requester = false;
        if (msg.kind == MsgKind::DataRsp) {
            if (msg.meta.dirty) {
                f->data = msg.data;
                f->dirty = true;
            }
            // wb copies accompany a FwdGetS the owner answered itself;
            // a FwdGetM recall for the slice carries the data here too
            owner_responded_requester = msg.meta.wb;
        } else if (msg.kind == MsgKind::PutM) {
            f->data = msg.data;
            f->dirty = f->dirty || msg.meta.dirty;
            CohMsg ack;
            ack.kind = MsgKind::WbAck;
            ack.addr = laddr;
            ack.dst = msg.src;
            send(std::move(ack));
        } else if (msg.kind == MsgKind::InvAck) {
            // plain ack: the owner served a FwdGetM directly. With i_ack the
            // owner held nothing (a clean relinquish raced the forward); the
            // slice data is still current and serves the requester.
            owner_responded_requester = !msg.meta.i_ack;
        }

        if (t->phase == Phase::VictimRecall) {
            // the old owner is gone; write back and continue the fill
            f->owner = kNoTile;
            f->sharers.clear();
            f->kind = DirKind::V;
            evict_clean_or_dirty(t, f);
            return;
        }

        TileId r = t->msg.src;
        switch (t->op) {
            case OpKind::GetS: {
                bool no_reg = t->msg.meta.no_reg;
                std::vector<TileId> sh;
                if (msg.kind == MsgKind::DataRsp && owner_responded_requester)
                    sh.push_back(t->recall_from);  // owner downgraded to S
                if (!no_reg && !owner_responded_requester) {
                    // owner is gone and never answered: serve from the slice
                    if (sh.empty() && grant_excl_) {
                        set_dir(f, DirKind::E, r, {});
                        send_data(r, t->line, f->data, true);
                    } else {
                        sh.push_back(r);
                        set_dir(f, DirKind::S, kNoTile, sh);
                        send_data(r, t->line, f->data, false);
                    }
                } else if (!no_reg) {
                    sh.push_back(r);
                    set_dir(f, DirKind::S, kNoTile, sh);
                } else {
                    if (!owner_responded_requester) send_data(r, t->line, f->data, false);
                    if (sh.empty()) set_dir(f, DirKind::V, kNoTile, {});
                    else set_dir(f, DirKind::S, kNoTile, sh);
                }
                finish_txn(t);
                break;
            }
            case OpKind::GetM: {
                if (!owner_responded_requester) send_data(r, t->line, f->data, true);
                f->dirty = false;  // the new owner's copy supersedes ours
                set_dir(f, DirKind::M, r, {});
                finish_txn(t);
                break;
            }
            case OpKind::DmaRead:
            case OpKind::DmaWrite: {
                set_dir(f, DirKind::V, kNoTile, {});
                finalize(t, f);
                break;
            }
            case OpKind::Evict: throw ProtocolError("unreachable");
        }
    }

    void complete_inv_round(Txn* t) {
        if (t->phase == Phase::VictimInv) {
            Frame* f = probe(t->victim);
            if (!f) throw ProtocolError("victim vanished during invalidation");
            f->sharers.clear();
            f->kind = DirKind::V;
            evict_clean_or_dirty(t, f);
            return;
        }
        Frame* f = probe(t->line);
        if (!f) throw ProtocolError("frame vanished during invalidation");
        switch (t->op) {
            case OpKind::GetM: {
                TileId r = t->msg.src;
                if (!t->msg.meta.error) {  // not already responded (fault path)
                    set_dir(f, DirKind::M, r, {});
                    send_data(r, t->line, f->data, true);
                }
                finish_txn(t);
                break;
            }
            case OpKind::DmaRead:
            case OpKind::DmaWrite: {
                set_dir(f, DirKind::V, kNoTile, {});
                finalize(t, f);
                break;
            }
            default: throw ProtocolError("invalidation round for unexpected op");
        }
    }

    // ------------------------------------------------------------------
    // Directory bookkeeping
    // ------------------------------------------------------------------

    void set_dir(Frame* f, DirKind kind, TileId owner, std::vector<TileId> sharers) {
        f->kind = kind;
        f->owner = owner;
        f->sharers = std::move(sharers);
        std::sort(f->sharers.begin(), f->sharers.end());
        check_dir_invariant(f);
    }

    void add_sharer(Frame* f, TileId t) {
        if (std::find(f->sharers.begin(), f->sharers.end(), t) == f->sharers.end()) {
            f->sharers.push_back(t);
            std::sort(f->sharers.begin(), f->sharers.end());
        }
        check_dir_invariant(f);
    }

    void remove_sharer(Frame* f, TileId t) {
        f->sharers.erase(std::remove(f->sharers.begin(), f->sharers.end(), t), f->sharers.end());
    }

    void check_dir_invariant(Frame* f) {
        const char* bad = nullptr;
        switch (f->kind) {
            case DirKind::M:
            case DirKind::E:
                if (f->owner == kNoTile || !f->sharers.empty()) bad = "owner state with sharers";
                break;
            case DirKind::S:
                if (f->owner != kNoTile || f->sharers.empty()) bad = "S without sharers";
                break;
            case DirKind::V:
            case DirKind::I:
                if (f->owner != kNoTile || !f->sharers.empty()) bad = "V/I with holders";
                break;
            default: break;
        }
        if (bad && mon_) {
            uint32_t set = set_of(f);
            mon_->on_dir_invariant_violation(frame_addr(set, f->tag), bad);
        }
    }

    // ------------------------------------------------------------------
    // DMA
    // ------------------------------------------------------------------

    struct ReadBurst {
        TileId src = kNoTile;
        Addr base = 0;
        uint32_t len = 0;
        Addr next = 0;
        bool line_pending = false;
    };

    void handle_dma_read_burst(const CohMsg& msg) {
        if (!msg.meta.coherent) {
            NcRead nc;
            nc.src = msg.src;
            nc.base = msg.addr;
            nc.len = msg.meta.len;
            nc.wait = rd_lat_;
            nc.next = line_base(msg.addr, geom_.line_bytes);
            nc_reads_.push_back(nc);
            if (rd_lat_ == 0) tick_nc_read();
            return;
        }
        ReadBurst b;
        b.src = msg.src;
        b.base = msg.addr;
        b.len = msg.meta.len;
        b.next = line_base(msg.addr, geom_.line_bytes);
        read_bursts_.push_back(b);
        advance_read_burst();
    }

    void advance_read_burst() {
        if (read_bursts_.empty()) return;
        ReadBurst& b = read_bursts_.front();
        if (b.line_pending) return;  // current line still in flight
        if (b.next >= b.base + b.len) {
            read_bursts_.pop_front();
            advance_read_burst();
            return;
        }
        CohMsg lm;
        lm.kind = MsgKind::DmaReadBurst;
        lm.addr = b.next;
        lm.src = b.src;
        lm.meta.len = geom_.line_bytes;
        b.line_pending = true;
        dma_line_request(lm, /*is_read=*/true);
    }

    // A single DMA line operation walks the same directory machinery as a
    // coherence request and always leaves the line in V.
    void dma_line_request(CohMsg lm, bool is_read) {
        lm.meta.dma_line = true;  // requeued copies must not re-enter as bursts
        Addr laddr = line_base(lm.addr, geom_.line_bytes);
        assert_in_partition(laddr);
        if (find_txn(laddr)) {
            waiting_[laddr].push_back(lm);
            return;
        }
        Frame* f = probe(laddr);
        if (!f) {
            ++misses;
            if (stats_) stats_->llc_misses++;
            start_fill(lm, laddr);
            return;
        }
        ++hits;
        if (stats_) stats_->llc_hits++;
        switch (f->kind) {
            case DirKind::V:
                ++v_hits;
                if (stats_) stats_->llc_v_hits++;
                finalize_dma(lm, f, is_read);
                break;
            case DirKind::S: {
                Txn t;
                t.line = laddr;
                t.phase = Phase::InvCollect;
                t.op = is_read ? OpKind::DmaRead : OpKind::DmaWrite;
                t.msg = lm;
                t.acks = uint32_t(f->sharers.size());
                for (TileId s : f->sharers) send_inv(laddr, s);
                txns_.push_back(std::move(t));
                break;
            }
            case DirKind::E:
            case DirKind::M: {
                Txn t;
                t.line = laddr;
                t.phase = Phase::Recall;
                t.op = is_read ? OpKind::DmaRead : OpKind::DmaWrite;
                t.msg = lm;
                t.recall_from = f->owner;
                send_fwd(MsgKind::FwdGetM, laddr, f->owner, self_);
                txns_.push_back(std::move(t));
                break;
            }
            default: throw ProtocolError("DMA line in invalid state");
        }
    }

    // called once the line is present and in V
    void finalize(Txn* t, Frame* f) {
        switch (t->op) {
            case OpKind::GetS: {
                TileId r = t->msg.src;
                bool no_reg = t->msg.meta.no_reg;
                if (no_reg) {
                    send_data(r, t->line, f->data, false);
                } else if (grant_excl_) {
                    set_dir(f, DirKind::E, r, {});
                    send_data(r, t->line, f->data, true);
                } else {
                    set_dir(f, DirKind::S, kNoTile, {r});
                    send_data(r, t->line, f->data, false);
                }
                finish_txn(t);
                break;
            }
            case OpKind::GetM: {
                TileId r = t->msg.src;
                set_dir(f, DirKind::M, r, {});
                send_data(r, t->line, f->data, true);
                finish_txn(t);
                break;
            }
            case OpKind::DmaRead:
            case OpKind::DmaWrite: {
                CohMsg lm = t->msg;
                bool is_read = t->op == OpKind::DmaRead;
                finish_txn(t);
                finalize_dma(lm, probe(line_base(lm.addr, geom_.line_bytes)), is_read);
                break;
            }
            case OpKind::Evict: throw ProtocolError("unreachable");
        }
    }

    void finalize_dma(const CohMsg& lm, Frame* f, bool is_read) {
        if (!f) throw ProtocolError("DMA finalize without frame");
        Addr laddr = line_base(lm.addr, geom_.line_bytes);
        if (is_read) {
            if (stats_) stats_->dma_lines_read++;
            if (mon_)
                for (uint32_t o = 0; o < geom_.line_bytes; o += kWordBytes)
                    mon_->on_read(lm.src, laddr + o, f->data.word(o, endian_), true, true);
            CohMsg rsp;
            rsp.kind = MsgKind::DmaRsp;
            rsp.addr = laddr;
            rsp.dst = lm.src;
            rsp.has_data = true;
            rsp.data = f->data;
            send(std::move(rsp));
            // burst bookkeeping
            if (!read_bursts_.empty() && read_bursts_.front().src == lm.src) {
                ReadBurst& b = read_bursts_.front();
                b.line_pending = false;
                b.next = laddr + geom_.line_bytes;
            }
        } else {
            uint32_t off = uint32_t(lm.addr - laddr);
            for (uint32_t i = 0; i < lm.meta.len; ++i)
                f->data.bytes[off + i] = lm.data.bytes[off + i];
            f->dirty = true;
            if (stats_) stats_->dma_lines_written++;
            if (mon_)
                for (uint32_t o = off & ~uint32_t(kWordBytes - 1); o < off + lm.meta.len;
                     o += kWordBytes)
                    mon_->on_write(lm.src, laddr + o, f->data.word(o, endian_));
            dma_write_done(lm);
        }
        if (f->kind != DirKind::V) set_dir(f, DirKind::V, kNoTile, {});
    }

    // per-source write-burst completion tracking: ack after the last line
    struct WriteTrack {
        uint32_t outstanding = 0;
        bool saw_last = false;
    };

    void handle_dma_write(const CohMsg& msg) {
        if (!msg.meta.coherent) {
            // non-coherent: straight to memory; drop any stale copy so later
            // cached reads observe the fresh bytes
            Addr laddr = line_base(msg.addr, geom_.line_bytes);
            assert_in_partition(laddr);
            if (Frame* f = probe(laddr)) {
                if (f->kind == DirKind::V && !find_txn(laddr)) {
                    f->kind = DirKind::I;
                    f->sharers.clear();
                    f->owner = kNoTile;
                    f->dirty = false;
                }
            }
            uint32_t off = uint32_t(msg.addr - laddr);
            for (uint32_t i = 0; i < msg.meta.len; ++i)
                memory[(laddr - part_base_) + off + i] = msg.data.bytes[off + i];
            ++mem_writes;
            if (stats_) stats_->mem_writes++;
            if (stats_) stats_->dma_lines_written++;
            if (mon_)
                for (uint32_t o = off & ~uint32_t(kWordBytes - 1); o < off + msg.meta.len;
                     o += kWordBytes)
                    mon_->on_write(msg.src, laddr + o,
                                   load_word(memory.data() + (laddr - part_base_) + o, endian_));
            if (msg.meta.last) {
                CohMsg rsp;
                rsp.kind = MsgKind::DmaRsp;
                rsp.addr = msg.addr;
                rsp.dst = msg.src;
                send(std::move(rsp));
            }
            return;
        }
        if (!msg.meta.dma_line) {
            WriteTrack& wt = write_tracks_[msg.src];
            wt.outstanding++;
            if (msg.meta.last) wt.saw_last = true;
        }
        dma_line_request(msg, /*is_read=*/false);
    }

    void dma_write_done(const CohMsg& lm) {
        auto it = write_tracks_.find(lm.src);
        if (it == write_tracks_.end()) return;
        WriteTrack& wt = it->second;
        if (wt.outstanding) wt.outstanding--;
        if (wt.saw_last && wt.outstanding == 0) {
            CohMsg rsp;
            rsp.kind = MsgKind::DmaRsp;
            rsp.addr = lm.addr;
            rsp.dst = lm.src;
            send(std::move(rsp));
            write_tracks_.erase(it);
        }
    }

    // non-coherent read bursts: memory latency once, then one line per cycle
    struct NcRead {
        TileId src = kNoTile;
        Addr base = 0;
        uint32_t len = 0;
        Addr next = 0;
        uint32_t wait = 0;
    };

    bool nc_read_active() const { return !nc_reads_.empty(); }

    void tick_nc_read() {
        if (nc_reads_.empty()) return;
        NcRead& nc = nc_reads_.front();
        if (nc.wait > 0) {
            --nc.wait;
            if (nc.wait > 0) return;
        }
        if (nc.next < nc.base + nc.len) {
            Addr laddr = nc.next;
            assert_in_partition(laddr);
            CohMsg rsp;
            rsp.kind = MsgKind::DmaRsp;
            rsp.addr = laddr;
            rsp.dst = nc.src;
            rsp.has_data = true;
            std::copy_n(memory.data() + (laddr - part_base_), geom_.line_bytes,
                        rsp.data.bytes.begin());
            ++mem_reads;
            if (stats_) stats_->mem_reads++;
            if (stats_) stats_->dma_lines_read++;
            if (mon_)
                for (uint32_t o = 0; o < geom_.line_bytes; o += kWordBytes)
                    mon_->on_read(nc.src, laddr + o, rsp.data.word(o, endian_), true, false);
            send(std::move(rsp));
            nc.next = laddr + geom_.line_bytes;
        }
        if (nc.next >= nc.base + nc.len) nc_reads_.pop_front();
    }

    // ------------------------------------------------------------------
    // MMIO flush registers
    // ------------------------------------------------------------------

    void handle_mmio(const CohMsg& msg) {
        CohMsg rsp;
        rsp.kind = MsgKind::MmioRsp;
        rsp.addr = msg.addr;
        rsp.dst = msg.src;
        Addr reg = (msg.addr - amap_.mmio_base) % AddressMap::kMmioStride;
        if (msg.kind == MsgKind::MmioWrite && reg == AddressMap::kRegFlushTrigger) {
            if (msg.value == 1 && !flush_active()) start_flush();
            rsp.value = 0;
        } else if (msg.kind == MsgKind::MmioRead && reg == AddressMap::kRegFlushStatus) {
            rsp.value = flush_active() ? 0 : 1;
        } else {
            rsp.meta.error = true;
        }
        send(std::move(rsp));
    }

    void start_flush() {
        uint32_t dirty_lines = 0;
        for (auto& f : frames_) {
            if (f.kind == DirKind::I) continue;
            if ((f.kind == DirKind::V || f.kind == DirKind::S) && f.dirty) {
                Addr laddr = frame_addr(uint32_t((&f - frames_.data()) / geom_.ways), f.tag);
                if (find_txn(laddr)) continue;  // mid-transaction, not ours to write
                mem_write_line(laddr, f.data);
                f.dirty = false;  // lines are left clean in V/S
                ++dirty_lines;
            }
        }
        // one write issued per cycle, pipelined behind the write latency
        flush_wait_ = wr_lat_;
        flush_remaining_ = dirty_lines;
        if (flush_wait_ == 0 && flush_remaining_ == 0) flush_done();
    }

    void tick_flush() {
        if (!flush_active()) return;
        if (flush_wait_ > 0) {
            --flush_wait_;
        } else if (flush_remaining_ > 0) {
            --flush_remaining_;
        }
        if (flush_wait_ == 0 && flush_remaining_ == 0) flush_done();
    }

    void flush_done() {
        if (stats_) stats_->llc_flushes++;
    }

    // ------------------------------------------------------------------
    // Timed transactions
    // ------------------------------------------------------------------

    void tick_txns() {
        std::vector<Addr> ready;
        for (auto& t : txns_)
            if ((t.phase == Phase::MemRead || t.phase == Phase::MemWrite) && t.mem_wait > 0 &&
                --t.mem_wait == 0)
                ready.push_back(t.line);
        // completions may append or erase; re-resolve each by line address
        for (Addr a : ready) {
            Txn* t = find_txn(a);
            if (t && t->line == a &&
                (t->phase == Phase::MemRead || t->phase == Phase::MemWrite) && t->mem_wait == 0)
                complete_mem_read(t);
        }
    }

    TileId self_ = 0;
    CacheGeometry geom_{};
    Endian endian_ = Endian::Little;
    AddressMap amap_{};
    Addr part_base_ = 0;
    uint64_t part_size_ = 0;
    uint32_t rd_lat_ = 30, wr_lat_ = 30;
    uint32_t txn_cap_ = 8;
    bool grant_excl_ = true;
    GlobalMonitor* mon_ = nullptr;
    RunStats* stats_ = nullptr;
    const FaultPlan* faults_ = nullptr;

    std::vector<Frame> frames_;
    std::vector<uint32_t> plru_;
    std::vector<Txn> txns_;
    std::deque<CohMsg> inbox_;
    std::deque<CohMsg> retry_;
    std::map<Addr, std::deque<CohMsg>> waiting_;
    std::deque<ReadBurst> read_bursts_;
    std::deque<NcRead> nc_reads_;
    std::map<TileId, WriteTrack> write_tracks_;
    uint32_t flush_wait_ = 0;
    uint32_t flush_remaining_ = 0;
};

inline void LlcSlice::encode_state(std::vector<uint8_t>& out) const {
    auto put8 = [&](uint8_t v) { out.push_back(v); };
    auto put64 = [&](uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
    };
    for (auto& f : frames_) {
        put8(uint8_t(f.kind));
        if (f.kind != DirKind::I) {
            put64(f.tag);
            put8(uint8_t(f.dirty));
            put64(f.owner);
            put8(uint8_t(f.sharers.size()));
            for (auto s : f.sharers) put64(s);
            for (uint32_t b = 0; b < geom_.line_bytes; ++b) put8(f.data.bytes[b]);
        }
    }
    for (auto p : plru_) put8(uint8_t(p));
    put8(uint8_t(txns_.size()));
    for (auto& t : txns_) {
        put64(t.line);
        put8(uint8_t(t.phase));
        put8(uint8_t(t.op));
        put64(t.msg.src);
        put8(uint8_t(t.msg.kind));
        put8(uint8_t(t.acks));
        put64(t.recall_from);
        put8(uint8_t(t.has_victim));
        if (t.has_victim) put64(t.victim);
    }
    put8(uint8_t(waiting_.size()));
    for (auto& [a, q] : waiting_) {
        put64(a);
        put8(uint8_t(q.size()));
        for (auto& m : q) {
            put8(uint8_t(m.kind));
            put64(m.src);
        }
    }
    put8(uint8_t(retry_.size()));
    for (auto& m : retry_) {
        put8(uint8_t(m.kind));
        put64(m.src);
        put64(m.addr);
    }
    for (uint64_t i = 0; i < part_size_; ++i) put8(memory[i]);
}

}  // namespace tilesim
