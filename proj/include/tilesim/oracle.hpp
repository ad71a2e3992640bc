#pragma once

#include <map>
#include <set>
#include <vector>

#include "tilesim/trace.hpp"
#include "tilesim/types.hpp"

namespace tilesim {

// One observed execution result: the values named by a test's observe
// directives, in directive order.
using Outcome = std::vector<Word>;
using OutcomeSet = std::set<Outcome>;

// Sequential-consistency oracle: enumerates every interleaving that respects
// per-core program order over an atomic flat memory. AMOs read-modify-write
// in one step. An SC succeeds iff its reservation survives: no other core
// touched the reserved line and no own non-atomic data access intervened
// since the LR. Instruction fetches are reads that do not end the window.
class ScOracle {
public:
    explicit ScOracle(uint32_t line_bytes = 16, size_t max_ops = 12)
        : line_bytes_(line_bytes), max_ops_(max_ops) {}

    OutcomeSet allowed_outcomes(const LitmusTest& test) const {
        if (test.prog.total_ops() > max_ops_)
            throw ConfigError("litmus test exceeds the oracle enumeration bound (" +
                              std::to_string(max_ops_) + " ops)");
        State st;
        st.pc.assign(test.prog.per_core.size(), 0);
        st.resv.assign(test.prog.per_core.size(), Resv{});
        st.regs.assign(test.prog.per_core.size(), {});
        OutcomeSet out;
        walk(test, st, out);
        return out;
    }

private:
    struct Resv {
        bool live = false;
        Addr line = 0;
    };

    struct State {
        std::vector<size_t> pc;
        std::map<Addr, Word> mem;
        std::vector<Resv> resv;
        std::vector<std::vector<Word>> regs;
    };

    Addr lb(Addr a) const { return a & ~Addr(line_bytes_ - 1); }

    Word read_mem(const State& st, Addr a) const {
        auto it = st.mem.find(a & ~Addr(kWordBytes - 1));
        return it == st.mem.end() ? 0 : it->second;
    }

    // another core touched this line: reservations on it die
    void kill_remote(State& st, size_t who, Addr line) const {
        for (size_t c = 0; c < st.resv.size(); ++c)
            if (c != who && st.resv[c].live && st.resv[c].line == line) st.resv[c].live = false;
    }

    void apply(State& st, size_t c, const TraceOp& op) const {
        Addr wa = op.addr & ~Addr(kWordBytes - 1);
        switch (op.kind) {
            case TraceOpKind::Load: {
                st.regs[c].push_back(read_mem(st, wa));
                st.resv[c].live = false;  // non-atomic data access ends the window
                kill_remote(st, c, lb(op.addr));
                break;
            }
            case TraceOpKind::Store: {
                st.mem[wa] = op.value;
                st.resv[c].live = false;
                kill_remote(st, c, lb(op.addr));
                break;
            }
            case TraceOpKind::Lr: {
                st.regs[c].push_back(read_mem(st, wa));
                st.resv[c] = {true, lb(op.addr)};
                kill_remote(st, c, lb(op.addr));
                break;
            }
            case TraceOpKind::Sc: {
                bool ok = st.resv[c].live && st.resv[c].line == lb(op.addr);
                st.resv[c].live = false;
                if (ok) {
                    st.mem[wa] = op.value;
                    kill_remote(st, c, lb(op.addr));
                }
                st.regs[c].push_back(ok ? 0 : 1);
                break;
            }
            case TraceOpKind::Ifetch: {
                // a read that does not end the own window
                kill_remote(st, c, lb(op.addr));
                break;
            }
            case TraceOpKind::FlushL2:
                st.resv[c].live = false;  // flushing tears down the own window
                break;
            case TraceOpKind::Fence:
            case TraceOpKind::LlcFlush:
                break;  // no effect on SC semantics
            default: {
                if (op_is_amo(op.kind)) {
                    Word old = read_mem(st, wa);
                    st.regs[c].push_back(old);
                    st.mem[wa] = amo_alu(atop_of(op.kind), old, op.value);
                    st.resv[c].live = false;
                    kill_remote(st, c, lb(op.addr));
                    break;
                }
                throw ConfigError("op not supported by the oracle");
            }
        }
    }

    void walk(const LitmusTest& test, const State& st, OutcomeSet& out) const {
        bool any = false;
        for (size_t c = 0; c < test.prog.per_core.size(); ++c) {
            if (st.pc[c] >= test.prog.per_core[c].size()) continue;
            any = true;
            State next = st;
            apply(next, c, test.prog.per_core[c][st.pc[c]]);
            next.pc[c]++;
            walk(test, next, out);
        }
        if (!any) out.insert(observe(test, st));
    }

    Outcome observe(const LitmusTest& test, const State& st) const {
        Outcome o;
        for (auto& ob : test.observes) {
            if (ob.is_mem) {
                o.push_back(read_mem(st, ob.addr & ~Addr(kWordBytes - 1)));
            } else {
                if (ob.core >= st.regs.size() || ob.reg_idx >= st.regs[ob.core].size())
                    throw ConfigError("observe names a register the program never writes");
                o.push_back(st.regs[ob.core][ob.reg_idx]);
            }
        }
        return o;
    }

    uint32_t line_bytes_;
    size_t max_ops_;
};

}  // namespace tilesim
