#pragma once

#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tilesim/types.hpp"

namespace tilesim {

// Per-core memory operations. The first block mirrors the RISC-V op set; the
// remainder are composite ops the core model expands into micro-sequences
// (spinlock acquire, MMIO flush triggers, accelerator start, wait-for-irq).
enum class TraceOpKind : uint8_t {
    Load,
    Store,
    AmoAdd,
    AmoSwap,
    AmoAnd,
    AmoOr,
    AmoXor,
    AmoMin,
    AmoMax,
    AmoMinu,
    AmoMaxu,
    Lr,
    Sc,
    Ifetch,
    Fence,
    FlushL2,   // flush own L1+L2 via the core-side flush port
    LlcFlush,  // write every memory tile's flush register, poll status
    Lock,      // LR/SC spinlock acquire on addr
    Unlock,    // release store of 0
    Inc,       // non-atomic load + store of value+1
    Wfi,       // idle until an accelerator-completion resume
    AccStart,  // MMIO write to accelerator start register (addr = acc index)
};

struct TraceOp {
    TraceOpKind kind = TraceOpKind::Load;
    Addr addr = 0;
    Word value = 0;
};

inline bool op_is_amo(TraceOpKind k) {
    return k >= TraceOpKind::AmoAdd && k <= TraceOpKind::AmoMaxu;
}

inline uint8_t atop_of(TraceOpKind k) {
    switch (k) {
        case TraceOpKind::AmoAdd: return ATOP_ADD;
        case TraceOpKind::AmoSwap: return ATOP_SWAP;
        case TraceOpKind::AmoAnd: return ATOP_AND;
        case TraceOpKind::AmoOr: return ATOP_OR;
        case TraceOpKind::AmoXor: return ATOP_XOR;
        case TraceOpKind::AmoMin: return ATOP_MIN;
        case TraceOpKind::AmoMax: return ATOP_MAX;
        case TraceOpKind::AmoMinu: return ATOP_MINU;
        case TraceOpKind::AmoMaxu: return ATOP_MAXU;
        default: return ATOP_NONE;
    }
}

// Register-producing ops: their result values are recorded in core order and
// addressable from litmus observe directives.
inline bool op_produces_register(TraceOpKind k) {
    return k == TraceOpKind::Load || k == TraceOpKind::Lr || k == TraceOpKind::Sc || op_is_amo(k);
}

inline const char* mnemonic(TraceOpKind k) {
    switch (k) {
        case TraceOpKind::Load: return "LD";
        case TraceOpKind::Store: return "ST";
        case TraceOpKind::AmoAdd: return "AMOADD";
        case TraceOpKind::AmoSwap: return "AMOSWAP";
        case TraceOpKind::AmoAnd: return "AMOAND";
        case TraceOpKind::AmoOr: return "AMOOR";
        case TraceOpKind::AmoXor: return "AMOXOR";
        case TraceOpKind::AmoMin: return "AMOMIN";
        case TraceOpKind::AmoMax: return "AMOMAX";
        case TraceOpKind::AmoMinu: return "AMOMINU";
        case TraceOpKind::AmoMaxu: return "AMOMAXU";
        case TraceOpKind::Lr: return "LR";
        case TraceOpKind::Sc: return "SC";
        case TraceOpKind::Ifetch: return "IF";
        case TraceOpKind::Fence: return "FENCE";
        case TraceOpKind::FlushL2: return "FLUSH";
        case TraceOpKind::LlcFlush: return "LLCFLUSH";
        case TraceOpKind::Lock: return "LOCK";
        case TraceOpKind::Unlock: return "UNLOCK";
        case TraceOpKind::Inc: return "INC";
        case TraceOpKind::Wfi: return "WFI";
        case TraceOpKind::AccStart: return "ACCSTART";
    }
    return "?";
}

struct TraceProgram {
    std::vector<std::vector<TraceOp>> per_core;

    size_t total_ops() const {
        size_t n = 0;
        for (auto& p : per_core) n += p.size();
        return n;
    }
};

namespace detail {

inline bool parse_mnemonic(const std::string& s, TraceOpKind& out) {
    static const std::map<std::string, TraceOpKind> table = {
        {"LD", TraceOpKind::Load},       {"ST", TraceOpKind::Store},
        {"AMOADD", TraceOpKind::AmoAdd}, {"AMOSWAP", TraceOpKind::AmoSwap},
        {"AMOAND", TraceOpKind::AmoAnd}, {"AMOOR", TraceOpKind::AmoOr},
        {"AMOXOR", TraceOpKind::AmoXor}, {"AMOMIN", TraceOpKind::AmoMin},
        {"AMOMAX", TraceOpKind::AmoMax}, {"AMOMINU", TraceOpKind::AmoMinu},
        {"AMOMAXU", TraceOpKind::AmoMaxu}, {"LR", TraceOpKind::Lr},
        {"SC", TraceOpKind::Sc},         {"IF", TraceOpKind::Ifetch},
        {"FENCE", TraceOpKind::Fence},   {"FLUSH", TraceOpKind::FlushL2},
        {"LLCFLUSH", TraceOpKind::LlcFlush}, {"LOCK", TraceOpKind::Lock},
        {"UNLOCK", TraceOpKind::Unlock}, {"INC", TraceOpKind::Inc},
        {"WFI", TraceOpKind::Wfi},       {"ACCSTART", TraceOpKind::AccStart},
    };
    auto it = table.find(s);
    if (it == table.end()) return false;
    out = it->second;
    return true;
}

inline bool op_takes_addr(TraceOpKind k) {
    return !(k == TraceOpKind::Fence || k == TraceOpKind::FlushL2 ||
             k == TraceOpKind::LlcFlush || k == TraceOpKind::Wfi);
}

inline bool op_takes_value(TraceOpKind k) {
    return k == TraceOpKind::Store || op_is_amo(k) || k == TraceOpKind::Sc;
}

// Parses one `core <id>: <OP> [<hex-addr>] [<value>]` line into (core, op).
inline bool parse_trace_line(const std::string& raw, const std::string& name, int lineno,
                             unsigned& core, TraceOp& op, bool& is_directive,
                             std::string& directive) {
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) return false;

    auto err = [&](const std::string& msg) -> ConfigError {
        return ConfigError(name + ":" + std::to_string(lineno) + ": " + msg);
    };

    if (line.rfind("core", 0) != 0) {
        is_directive = true;
        directive = line;
        return true;
    }
    is_directive = false;

    size_t colon = line.find(':');
    if (colon == std::string::npos) throw err("expected 'core <id>: <op>'");
    std::string core_s = trim(line.substr(4, colon - 4));
    core = unsigned(parse_u64(core_s, "core id"));
    if (core >= 64) throw err("core id out of range");

    std::istringstream body(line.substr(colon + 1));
    std::string mn, addr_s, val_s, extra;
    if (!(body >> mn)) throw err("missing op mnemonic");
    if (!parse_mnemonic(mn, op.kind)) throw err("unknown op '" + mn + "'");

    op.addr = 0;
    op.value = 0;
    if (op_takes_addr(op.kind)) {
        if (!(body >> addr_s)) throw err(mn + " needs an address");
        op.addr = parse_u64(addr_s, "address");
    }
    if (op_takes_value(op.kind)) {
        if (!(body >> val_s)) throw err(mn + " needs a value");
        op.value = parse_u64(val_s, "value");
    } else if (body >> val_s) {
        throw err(mn + " takes no value");
    }
    if (body >> extra) throw err("trailing tokens");

    if (op.kind != TraceOpKind::AccStart && op_takes_addr(op.kind) && (op.addr % kWordBytes) != 0)
        throw err("address must be 8-byte aligned");
    return true;
}

}  // namespace detail

inline TraceProgram parse_trace(std::istream& in, const std::string& name = "<trace>") {
    TraceProgram prog;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        unsigned core = 0;
        TraceOp op;
        bool is_dir = false;
        std::string dir;
        if (!detail::parse_trace_line(line, name, lineno, core, op, is_dir, dir)) continue;
        if (is_dir)
            throw ConfigError(name + ":" + std::to_string(lineno) +
                              ": directive '" + dir + "' not allowed in a plain trace");
        if (prog.per_core.size() <= core) prog.per_core.resize(core + 1);
        prog.per_core[core].push_back(op);
    }
    return prog;
}

inline TraceProgram parse_trace_string(const std::string& text, const std::string& name = "<trace>") {
    std::istringstream ss(text);
    return parse_trace(ss, name);
}

// ---------------------------------------------------------------------------
// Litmus tests: trace-format op lines plus directives
// ---------------------------------------------------------------------------

struct LitmusObserve {
    bool is_mem = false;
    unsigned core = 0;
    unsigned reg_idx = 0;  // index among register-producing ops of that core
    Addr addr = 0;
};

struct LitmusTest {
    std::string name;
    TraceProgram prog;
    std::vector<LitmusObserve> observes;
    bool expect_oracle = false;
};

inline LitmusTest parse_litmus(std::istream& in, const std::string& name = "<litmus>") {
    LitmusTest test;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        unsigned core = 0;
        TraceOp op;
        bool is_dir = false;
        std::string dir;
        if (!detail::parse_trace_line(line, name, lineno, core, op, is_dir, dir)) continue;
        auto err = [&](const std::string& msg) -> ConfigError {
            return ConfigError(name + ":" + std::to_string(lineno) + ": " + msg);
        };
        if (!is_dir) {
            switch (op.kind) {
                case TraceOpKind::Lock:
                case TraceOpKind::Unlock:
                case TraceOpKind::Inc:
                case TraceOpKind::Wfi:
                case TraceOpKind::AccStart:
                    throw err("composite op not allowed in a litmus test");
                default: break;
            }
            if (test.prog.per_core.size() <= core) test.prog.per_core.resize(core + 1);
            test.prog.per_core[core].push_back(op);
            continue;
        }
        std::istringstream ss(dir);
        std::string head;
        ss >> head;
        if (head == "litmus") {
            if (!(ss >> test.name)) throw err("litmus directive needs a name");
        } else if (head == "observe") {
            std::string what;
            if (!(ss >> what)) throw err("observe needs 'r <core> <idx>' or 'm <addr>'");
            LitmusObserve ob;
            if (what == "r") {
                std::string c, i;
                if (!(ss >> c >> i)) throw err("observe r needs '<core> <idx>'");
                ob.core = unsigned(detail::parse_u64(c, "core"));
                ob.reg_idx = unsigned(detail::parse_u64(i, "idx"));
            } else if (what == "m") {
                std::string a;
                if (!(ss >> a)) throw err("observe m needs '<addr>'");
                ob.is_mem = true;
                ob.addr = detail::parse_u64(a, "addr");
            } else {
                throw err("observe needs 'r' or 'm'");
            }
            test.observes.push_back(ob);
        } else if (head == "expect:" || head == "expect") {
            std::string what;
            if (head == "expect:") ss >> what;
            else {
                ss >> what;
                if (!what.empty() && what.front() == ':') what = what.substr(1);
            }
            if (what != "oracle") throw err("only 'expect: oracle' is supported");
            test.expect_oracle = true;
        } else {
            throw err("unknown directive '" + head + "'");
        }
    }
    if (test.name.empty()) throw ConfigError(name + ": missing 'litmus <name>' directive");
    if (!test.expect_oracle) throw ConfigError(name + ": missing 'expect: oracle' directive");
    if (test.observes.empty()) throw ConfigError(name + ": no observe directives");
    return test;
}

inline LitmusTest parse_litmus_string(const std::string& text, const std::string& name = "<litmus>") {
    std::istringstream ss(text);
    return parse_litmus(ss, name);
}

}  // namespace tilesim
