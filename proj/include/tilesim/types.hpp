#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace tilesim {

using Addr = uint64_t;
using Word = uint64_t;
using TileId = uint16_t;

constexpr TileId kNoTile = 0xffff;
constexpr unsigned kWordBytes = 8;
constexpr unsigned kMaxLineBytes = 64;

struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class Endian : uint8_t { Little, Big };

inline bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline uint64_t parse_u64(const std::string& s, const std::string& ctx) {
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(s, &pos, 0);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw ConfigError(ctx + ": expected a number, got '" + s + "'");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cache geometry and address slicing
// ---------------------------------------------------------------------------

struct CacheGeometry {
    uint32_t line_bytes = 16;
    uint32_t sets = 64;
    uint32_t ways = 4;

    uint64_t capacity_bytes() const { return uint64_t(line_bytes) * sets * ways; }
    uint32_t words_per_line() const { return line_bytes / kWordBytes; }

    void validate(const char* who) const {
        if (!is_pow2(line_bytes) || line_bytes < 8 || line_bytes > kMaxLineBytes)
            throw ConfigError(std::string(who) + ": line_bytes must be a power of two in [8,64]");
        if (!is_pow2(sets))
            throw ConfigError(std::string(who) + ": sets must be a power of two");
        if (ways == 0)
            throw ConfigError(std::string(who) + ": ways must be positive");
    }
};

struct LineSplit {
    uint64_t tag = 0;
    uint32_t set = 0;
    uint32_t offset = 0;
};

inline LineSplit line_split(Addr addr, const CacheGeometry& g) {
    LineSplit s;
    s.offset = uint32_t(addr & (g.line_bytes - 1));
    s.set = uint32_t((addr / g.line_bytes) & (g.sets - 1));
    s.tag = addr / (uint64_t(g.line_bytes) * g.sets);
    return s;
}

inline Addr line_recompose(const LineSplit& s, const CacheGeometry& g) {
    return s.tag * (uint64_t(g.line_bytes) * g.sets) + uint64_t(s.set) * g.line_bytes + s.offset;
}

inline Addr line_base(Addr addr, uint32_t line_bytes) { return addr & ~Addr(line_bytes - 1); }

// ---------------------------------------------------------------------------
// Word <-> line-byte codec (configurable endianness)
// ---------------------------------------------------------------------------

inline void store_word(uint8_t* p, Word v, Endian e) {
    if (e == Endian::Little) {
        for (unsigned i = 0; i < kWordBytes; ++i) p[i] = uint8_t(v >> (8 * i));
    } else {
        for (unsigned i = 0; i < kWordBytes; ++i) p[i] = uint8_t(v >> (8 * (kWordBytes - 1 - i)));
    }
}

inline Word load_word(const uint8_t* p, Endian e) {
    Word v = 0;
    if (e == Endian::Little) {
        for (unsigned i = 0; i < kWordBytes; ++i) v |= Word(p[i]) << (8 * i);
    } else {
        for (unsigned i = 0; i < kWordBytes; ++i) v |= Word(p[i]) << (8 * (kWordBytes - 1 - i));
    }
    return v;
}

struct LineData {
    std::array<uint8_t, kMaxLineBytes> bytes{};

    Word word(uint32_t offset, Endian e) const { return load_word(bytes.data() + offset, e); }
    void set_word(uint32_t offset, Word v, Endian e) { store_word(bytes.data() + offset, v, e); }
};

// ---------------------------------------------------------------------------
// Coherence states
// ---------------------------------------------------------------------------

// Private-cache (L2) line states. Stable: I,S,E,M. Transients track the open
// MSHR transaction; XMW marks an atomic read served with the write pending.
enum class LineState : uint8_t { I, S, E, M, IS_A, IM_A, SM_A, MI_A, XMW };

inline bool line_state_stable(LineState s) {
    return s == LineState::I || s == LineState::S || s == LineState::E || s == LineState::M;
}
inline bool line_state_writable(LineState s) {
    return s == LineState::E || s == LineState::M || s == LineState::XMW;
}
inline bool line_state_readable(LineState s) {
    return s == LineState::S || line_state_writable(s);
}

inline const char* to_string(LineState s) {
    switch (s) {
        case LineState::I: return "I";
        case LineState::S: return "S";
        case LineState::E: return "E";
        case LineState::M: return "M";
        case LineState::IS_A: return "IS_A";
        case LineState::IM_A: return "IM_A";
        case LineState::SM_A: return "SM_A";
        case LineState::MI_A: return "MI_A";
        case LineState::XMW: return "XMW";
    }
    return "?";
}

// Directory entry state at an LLC slice. V holds valid data with neither
// sharers nor an owner; the busy states block the line while a transaction
// is in flight (recall/invalidation vs. backing-memory access).
enum class DirKind : uint8_t { I, V, S, E, M, BusyRecall, BusyMem };

inline bool dir_kind_busy(DirKind k) { return k == DirKind::BusyRecall || k == DirKind::BusyMem; }

inline const char* to_string(DirKind k) {
    switch (k) {
        case DirKind::I: return "I";
        case DirKind::V: return "V";
        case DirKind::S: return "S";
        case DirKind::E: return "E";
        case DirKind::M: return "M";
        case DirKind::BusyRecall: return "Busy-Recall";
        case DirKind::BusyMem: return "Busy-Mem";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Atomic ALU
// ---------------------------------------------------------------------------

enum AtopCode : uint8_t {
    ATOP_NONE = 0,  // LR/SC travel with atop=0
    ATOP_ADD,
    ATOP_SWAP,
    ATOP_AND,
    ATOP_OR,
    ATOP_XOR,
    ATOP_MIN,
    ATOP_MAX,
    ATOP_MINU,
    ATOP_MAXU,
};

inline Word amo_alu(uint8_t atop, Word mem, Word operand) {
    switch (atop) {
        case ATOP_ADD: return mem + operand;
        case ATOP_SWAP: return operand;
        case ATOP_AND: return mem & operand;
        case ATOP_OR: return mem | operand;
        case ATOP_XOR: return mem ^ operand;
        case ATOP_MIN: return int64_t(mem) < int64_t(operand) ? mem : operand;
        case ATOP_MAX: return int64_t(mem) > int64_t(operand) ? mem : operand;
        case ATOP_MINU: return mem < operand ? mem : operand;
        case ATOP_MAXU: return mem > operand ? mem : operand;
        default: throw ProtocolError("unsupported atop code " + std::to_string(atop));
    }
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

enum class MsgKind : uint8_t {
    GetS,
    GetM,
    PutS,
    PutM,
    FwdGetS,
    FwdGetM,
    Inv,
    InvAck,
    DataRsp,
    WbAck,
    DmaReadBurst,
    DmaWriteBurst,
    DmaRsp,
    MmioRead,
    MmioWrite,
    MmioRsp,
    Irq,
};

inline const char* to_string(MsgKind k) {
    switch (k) {
        case MsgKind::GetS: return "GetS";
        case MsgKind::GetM: return "GetM";
        case MsgKind::PutS: return "PutS";
        case MsgKind::PutM: return "PutM";
        case MsgKind::FwdGetS: return "FwdGetS";
        case MsgKind::FwdGetM: return "FwdGetM";
        case MsgKind::Inv: return "Inv";
        case MsgKind::InvAck: return "InvAck";
        case MsgKind::DataRsp: return "DataRsp";
        case MsgKind::WbAck: return "WbAck";
        case MsgKind::DmaReadBurst: return "DmaReadBurst";
        case MsgKind::DmaWriteBurst: return "DmaWriteBurst";
        case MsgKind::DmaRsp: return "DmaRsp";
        case MsgKind::MmioRead: return "MmioRead";
        case MsgKind::MmioWrite: return "MmioWrite";
        case MsgKind::MmioRsp: return "MmioRsp";
        case MsgKind::Irq: return "Irq";
    }
    return "?";
}

constexpr uint8_t kPermData = 0x1;
constexpr uint8_t kPermInstr = 0x2;

struct MsgMeta {
    bool lock = false;      // read/write pair belongs to an atomic
    uint8_t atop = 0;       // atomic opcode, zero for LR/SC
    uint8_t user = 0;       // reservation tag (rides the read channel)
    uint8_t perm = 0;       // permission bits of an invalidated line
    bool dirty = false;     // payload differs from backing memory
    bool exclusive = false; // DataRsp grants E instead of S
    bool wb = false;        // DataRsp directed at the home slice as owner copy-back
    bool last = false;      // final beat of a DMA write burst
    bool coherent = true;   // DMA burst targets the LLC, else bypasses to memory
    bool no_reg = false;    // GetS that must not register the requester
    bool error = false;     // MMIO error response
    bool i_ack = false;     // forward found nothing cached: acknowledged without data
    bool dma_line = false;  // slice-internal per-line burst op (not a new burst)
    uint32_t len = 0;       // DMA burst length in bytes
};

struct CohMsg {
    MsgKind kind = MsgKind::GetS;
    Addr addr = 0;
    TileId src = kNoTile;
    TileId dst = kNoTile;
    TileId req = kNoTile;  // original requester of a forwarded transaction
    Word value = 0;        // MMIO payload / scalar response
    bool has_data = false;
    LineData data{};
    MsgMeta meta{};
};

// Fixed plane assignment: requests / forwards / responses for coherence,
// DMA requests / DMA responses, and MMIO + interrupts on the last plane.
constexpr int kNumPlanes = 6;
constexpr int kPlaneReq = 0;
constexpr int kPlaneFwd = 1;
constexpr int kPlaneRsp = 2;
constexpr int kPlaneDmaReq = 3;
constexpr int kPlaneDmaRsp = 4;
constexpr int kPlaneMmio = 5;

inline int plane_of(const CohMsg& m) {
    switch (m.kind) {
        case MsgKind::GetS:
        case MsgKind::GetM:
        case MsgKind::PutS:
        case MsgKind::PutM: return kPlaneReq;
        case MsgKind::FwdGetS:
        case MsgKind::FwdGetM:
        case MsgKind::Inv: return kPlaneFwd;
        case MsgKind::InvAck:
        case MsgKind::DataRsp:
        case MsgKind::WbAck: return kPlaneRsp;
        case MsgKind::DmaReadBurst:
        case MsgKind::DmaWriteBurst: return kPlaneDmaReq;
        case MsgKind::DmaRsp: return kPlaneDmaRsp;
        case MsgKind::MmioRead:
        case MsgKind::MmioWrite:
        case MsgKind::MmioRsp:
        case MsgKind::Irq: return kPlaneMmio;
    }
    return kPlaneMmio;
}

}  // namespace tilesim
