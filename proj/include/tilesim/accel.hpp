#pragma once

#include <deque>
#include <map>
#include <vector>

#include "tilesim/config.hpp"
#include "tilesim/l2.hpp"
#include "tilesim/stats.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

// Loosely-coupled accelerator tile. Software starts it through its MMIO
// start register; the job (a list of DMA read/write regions with compute
// delays) then runs in the configured coherence mode and posts an interrupt
// to the auxiliary tile on completion.
//
//  - llc-coherent: bursts to the LLC slices, touched lines left in V
//  - non-coherent: bursts bypass the LLC straight to backing memory
//  - fully-coherent: word accesses through the tile's private L2
class AcceleratorModel {
public:
    AcceleratorModel() = default;
    AcceleratorModel(TileId tile, const AccelConfig& ac, uint32_t line_bytes, Endian endian,
                     AddressMap amap, RunStats* stats = nullptr)
        : tile_(tile),
          mode_(ac.mode),
          job_(ac.job),
          line_bytes_(line_bytes),
          endian_(endian),
          amap_(std::move(amap)),
          stats_(stats) {}

    std::deque<CohMsg> outbox;

    bool idle() const { return state_ == State::Idle; }
    bool busy() const { return state_ != State::Idle || !outbox.empty(); }
    AccelMode mode() const { return mode_; }
    uint64_t jobs_completed = 0;

    void deliver(const CohMsg& msg) {
        switch (msg.kind) {
            case MsgKind::MmioWrite: {
                CohMsg rsp;
                rsp.kind = MsgKind::MmioRsp;
                rsp.addr = msg.addr;
                rsp.dst = msg.src;
                rsp.src = tile_;
                Addr reg = (msg.addr - amap_.mmio_base) % AddressMap::kMmioStride;
                if (reg == AddressMap::kRegAccStart && msg.value == 1) {
                    if (state_ == State::Idle) {
                        invoker_ = msg.src;
                        start_job();
                    }
                } else {
                    rsp.meta.error = true;
                }
                outbox.push_back(std::move(rsp));
                break;
            }
            case MsgKind::MmioRead: {
                CohMsg rsp;
                rsp.kind = MsgKind::MmioRsp;
                rsp.addr = msg.addr;
                rsp.dst = msg.src;
                rsp.src = tile_;
                Addr reg = (msg.addr - amap_.mmio_base) % AddressMap::kMmioStride;
                if (reg == AddressMap::kRegAccStatus) rsp.value = state_ == State::Idle ? 1 : 0;
                else rsp.meta.error = true;
                outbox.push_back(std::move(rsp));
                break;
            }
            case MsgKind::DmaRsp: {
                if (msg.has_data) absorb_read_line(msg.addr, msg.data);
                else if (acks_expected_ > 0) --acks_expected_;
                if (state_ == State::WaitDma && reads_expected_ == 0 && acks_expected_ == 0)
                    finish_step();
                break;
            }
            default: throw ProtocolError("accelerator received unexpected message");
        }
    }

    void step(L2Controller* l2) {
        switch (state_) {
            case State::Idle: return;
            case State::ComputeDelay:
                if (delay_ > 0) { --delay_; return; }
                next_step();
                return;
            case State::WaitDma: return;  // completions arrive via deliver()
            case State::CohAccess: coherent_step(l2); return;
        }
    }

private:
    enum class State : uint8_t { Idle, WaitDma, ComputeDelay, CohAccess };

    void start_job() {
        step_idx_ = 0;
        accum_.clear();
        if (job_.empty()) { complete_job(); return; }
        begin_step();
    }

    void begin_step() {
        const DmaDescriptor& d = job_[step_idx_];
        if (d.len == 0) { finish_step(); return; }
        if (mode_ == AccelMode::FullyCoherent) {
            state_ = State::CohAccess;
            coh_addr_ = d.base;
            coh_waiting_ = false;
            return;
        }
        if (d.write) emit_write_burst(d);
        else emit_read_burst(d);
        state_ = State::WaitDma;
    }

    void finish_step() {
        const DmaDescriptor& d = job_[step_idx_];
        if (d.compute_delay > 0) {
            delay_ = d.compute_delay;
            state_ = State::ComputeDelay;
            return;
        }
        next_step();
    }

    void next_step() {
        ++step_idx_;
        if (step_idx_ >= job_.size()) { complete_job(); return; }
        begin_step();
    }

    void complete_job() {
        state_ = State::Idle;
        ++jobs_completed;
        CohMsg irq;
        irq.kind = MsgKind::Irq;
        irq.src = tile_;
        irq.dst = amap_.aux_tile;
        irq.req = invoker_;  // whose thread to resume
        outbox.push_back(std::move(irq));
        if (stats_) stats_->irqs++;
    }

    // ------------------------------------------------------------------
    // DMA modes
    // ------------------------------------------------------------------

    // splits at partition boundaries: each slice sees one burst
    void emit_read_burst(const DmaDescriptor& d) {
        reads_expected_ = 0;
        acks_expected_ = 0;
        read_base_ = d.base;
        read_len_ = d.len;
        Addr cur = d.base;
        Addr end = d.base + d.len;
        while (cur < end) {
            size_t part = amap_.partition_of(cur);
            Addr part_end = amap_.partition_base(part) + amap_.partition_bytes();
            Addr chunk_end = std::min(end, part_end);
            CohMsg m;
            m.kind = MsgKind::DmaReadBurst;
            m.addr = cur;
            m.src = tile_;
            m.dst = amap_.mem_tiles[part];
            m.meta.len = uint32_t(chunk_end - cur);
            m.meta.coherent = mode_ == AccelMode::LlcCoherent;
            outbox.push_back(std::move(m));
            Addr first_line = line_base(cur, line_bytes_);
            Addr last_line = line_base(chunk_end - 1, line_bytes_);
            reads_expected_ += uint32_t((last_line - first_line) / line_bytes_ + 1);
            cur = chunk_end;
        }
        accum_.assign((d.len + kWordBytes - 1) / kWordBytes, 0);
    }

    void absorb_read_line(Addr laddr, const LineData& data) {
        if (reads_expected_ == 0) return;
        --reads_expected_;
        Addr end = read_base_ + read_len_;
        for (uint32_t o = 0; o < line_bytes_; o += kWordBytes) {
            Addr a = laddr + o;
            if (a >= read_base_ && a + kWordBytes <= end)
                accum_[(a - read_base_) / kWordBytes] = data.word(o, endian_);
        }
    }

    Word out_word(size_t i, Addr addr) const {
        if (!accum_.empty()) return accum_[i % accum_.size()] + 1;
        return hash_combine(0x9e37, addr);  // seedless fill pattern
    }

    void emit_write_burst(const DmaDescriptor& d) {
        reads_expected_ = 0;
        acks_expected_ = 0;
        Addr cur = d.base;
        Addr end = d.base + d.len;
        size_t word_i = 0;
        while (cur < end) {
            size_t part = amap_.partition_of(cur);
            Addr part_end = amap_.partition_base(part) + amap_.partition_bytes();
            Addr chunk_end = std::min(end, part_end);
            ++acks_expected_;
            Addr line = line_base(cur, line_bytes_);
            while (line < chunk_end) {
                Addr lo = std::max(cur, line);
                Addr hi = std::min(chunk_end, line + line_bytes_);
                CohMsg m;
                m.kind = MsgKind::DmaWriteBurst;
                m.addr = lo;
                m.src = tile_;
                m.dst = amap_.mem_tiles[part];
                m.meta.len = uint32_t(hi - lo);
                m.meta.coherent = mode_ == AccelMode::LlcCoherent;
                m.has_data = true;
                for (Addr a = lo; a < hi; a += kWordBytes, ++word_i)
                    m.data.set_word(uint32_t(a - line), out_word(word_i, a), endian_);
                m.meta.last = hi == chunk_end;
                outbox.push_back(std::move(m));
                line += line_bytes_;
            }
            cur = chunk_end;
        }
    }

    // ------------------------------------------------------------------
    // fully-coherent mode: word ops through the private L2
    // ------------------------------------------------------------------

    void coherent_step(L2Controller* l2) {
        if (!l2) throw ConfigError("fully-coherent accelerator needs a private L2");
        const DmaDescriptor& d = job_[step_idx_];
        if (coh_waiting_) {
            if (auto c = l2->take_completion()) {
                coh_waiting_ = false;
                if (c->op == CoreOp::Load) {
                    accum_.push_back(c->value);
                }
                coh_addr_ += kWordBytes;
            } else {
                return;
            }
        }
        if (coh_addr_ >= d.base + d.len) {
            finish_step();
            return;
        }
        CoreSideReq r;
        if (d.write) {
            r.op = CoreOp::Store;
            r.addr = coh_addr_;
            size_t i = (coh_addr_ - d.base) / kWordBytes;
            r.data = out_word(i, coh_addr_);
        } else {
            if (coh_addr_ == d.base) accum_.clear();
            r.op = CoreOp::Load;
            r.addr = coh_addr_;
        }
        switch (l2->core_request(r)) {
            case ReqStatus::Done: {
                auto c = l2->take_completion();
                if (c && c->op == CoreOp::Load) accum_.push_back(c->value);
                coh_addr_ += kWordBytes;
                if (coh_addr_ >= d.base + d.len) finish_step();
                return;
            }
            case ReqStatus::Pending: coh_waiting_ = true; return;
            case ReqStatus::Stalled: return;
        }
    }

    TileId tile_ = 0;
    AccelMode mode_ = AccelMode::LlcCoherent;
    std::vector<DmaDescriptor> job_;
    uint32_t line_bytes_ = 16;
    Endian endian_ = Endian::Little;
    AddressMap amap_{};
    RunStats* stats_ = nullptr;

    State state_ = State::Idle;
    size_t step_idx_ = 0;
    uint32_t delay_ = 0;
    TileId invoker_ = kNoTile;
    std::vector<Word> accum_;
    uint32_t reads_expected_ = 0;
    uint32_t acks_expected_ = 0;
    Addr read_base_ = 0;
    uint32_t read_len_ = 0;
    Addr coh_addr_ = 0;
    bool coh_waiting_ = false;
};

}  // namespace tilesim
