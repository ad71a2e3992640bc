#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tilesim/types.hpp"
#include "tilesim/util.hpp"

namespace tilesim {

enum class ViolationKind : uint8_t { SWMR, DataValue, Atomicity, LostMessage, Deadlock, StaleDma };

inline const char* to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::SWMR: return "SWMR";
        case ViolationKind::DataValue: return "DataValue";
        case ViolationKind::Atomicity: return "Atomicity";
        case ViolationKind::LostMessage: return "LostMessage";
        case ViolationKind::Deadlock: return "Deadlock";
        case ViolationKind::StaleDma: return "StaleDma";
    }
    return "?";
}

struct Violation {
    ViolationKind kind;
    uint64_t cycle = 0;
    Addr addr = 0;
    std::string note;

    std::string format() const {
        std::ostringstream os;
        os << "violation kind=" << to_string(kind) << " cycle=" << cycle << " addr=0x"
           << std::hex << addr << std::dec << " note=\"" << note << "\"";
        return os.str();
    }
};

inline void log_violation(const Violation& v) { TS_LOG(1, v.format()); }

// Cache identities as seen by the coherence monitor. L1 data caches are
// offset so they can coexist with L2 ids in one per-line holder table.
constexpr int kL1IdBase = 1000;

// Global correctness monitor. Subscribes to cache state changes and to every
// value binding: a read must return the most recent serialized write, and at
// any instant a line has at most one writable copy and no writable copy
// coexisting with readers elsewhere.
class GlobalMonitor {
public:
    bool enabled = true;
    uint64_t now = 0;

    std::vector<Violation> violations;

    // line address -> cache ids holding it readable / writable
    struct Holders {
        std::set<int> readers;
        std::set<int> writers;
        bool flagged = false;  // report each SWMR break once, on entry
    };

    void record(Violation v) {
        log_violation(v);
        violations.push_back(std::move(v));
    }

    void on_line_access_state(int cache_id, Addr line, bool readable, bool writable) {
        if (!enabled) return;
        auto& h = holders_[line];
        if (readable) h.readers.insert(cache_id); else h.readers.erase(cache_id);
        if (writable) h.writers.insert(cache_id); else h.writers.erase(cache_id);
        check_swmr(line, h);
    }

    void on_read(int source_id, Addr word_addr, Word v, bool is_dma, bool dma_coherent) {
        if (!enabled) return;
        Word expect = shadow_word(word_addr);
        if (v != expect) {
            std::ostringstream os;
            os << (is_dma ? "dma" : "cache") << " read by #" << source_id << " returned 0x"
               << std::hex << v << ", serialized value is 0x" << expect << std::dec;
            ViolationKind k = is_dma && !dma_coherent ? ViolationKind::StaleDma
                                                      : ViolationKind::DataValue;
            record({k, now, word_addr, os.str()});
        }
    }

    void on_write(int source_id, Addr word_addr, Word v) {
        if (!enabled) return;
        (void)source_id;
        shadow_[word_addr] = v;
    }

    void on_atomicity_violation(Addr line, const std::string& note) {
        if (!enabled) return;
        record({ViolationKind::Atomicity, now, line, note});
    }

    void on_dir_invariant_violation(Addr line, const std::string& note) {
        if (!enabled) return;
        record({ViolationKind::SWMR, now, line, "directory: " + note});
    }

    void report_lost(Addr addr, const std::string& note) {
        record({ViolationKind::LostMessage, now, addr, note});
    }

    void report_deadlock(const std::string& note) {
        record({ViolationKind::Deadlock, now, 0, note});
    }

    // flush handshake bookkeeping (criterion: no L2 writeback before the L1
    // reports flush_done)
    void on_l2_flush_begin(int core, uint64_t cycle) { flush_begin_[core] = cycle; }
    void on_l1_flush_done(int core, uint64_t cycle) { l1_done_[core] = cycle; }
    void on_flush_writeback(int core, uint64_t cycle) {
        auto it = l1_done_.find(core);
        if (it == l1_done_.end() || cycle < it->second) {
            std::ostringstream os;
            os << "L2 #" << core << " emitted a flush writeback before l1 flush_done";
            record({ViolationKind::Atomicity, cycle, 0, os.str()});
        }
    }

    Word shadow_word(Addr word_addr) const {
        auto it = shadow_.find(word_addr);
        return it == shadow_.end() ? 0 : it->second;
    }

    // Serialized memory image over [0, bytes) composed from the shadow words.
    std::vector<uint8_t> shadow_image(uint64_t bytes, Endian e) const {
        std::vector<uint8_t> img(bytes, 0);
        for (auto& [a, v] : shadow_)
            if (a + kWordBytes <= bytes) store_word(img.data() + a, v, e);
        return img;
    }

    bool clean() const { return violations.empty(); }

private:
    void check_swmr(Addr line, Holders& h) {
        std::string bad;
        if (h.writers.size() > 1) {
            std::ostringstream os;
            os << "caches {";
            for (int id : h.writers) os << " " << id;
            os << " } all hold a writable copy";
            bad = os.str();
        } else if (h.writers.size() == 1) {
            int w = *h.writers.begin();
            for (int r : h.readers) {
                // the writer's own tile keeps read permission in its L1
                if (r != w && r != w + kL1IdBase) {
                    std::ostringstream os;
                    os << "cache #" << w << " writable while #" << r << " holds a readable copy";
                    bad = os.str();
                    break;
                }
            }
        }
        if (bad.empty()) {
            h.flagged = false;
        } else if (!h.flagged) {
            h.flagged = true;
            record({ViolationKind::SWMR, now, line, bad});
        }
    }

    std::map<Addr, Holders> holders_;
    std::unordered_map<Addr, Word> shadow_;
    std::map<int, uint64_t> flush_begin_;
    std::map<int, uint64_t> l1_done_;
};

}  // namespace tilesim
