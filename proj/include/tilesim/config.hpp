#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tilesim/types.hpp"

namespace tilesim {

enum class TileKind : uint8_t { Empty, Processor, Memory, Accelerator, Auxiliary };

inline const char* to_string(TileKind k) {
    switch (k) {
        case TileKind::Empty: return "empty";
        case TileKind::Processor: return "cpu";
        case TileKind::Memory: return "mem";
        case TileKind::Accelerator: return "acc";
        case TileKind::Auxiliary: return "aux";
    }
    return "?";
}

enum class AccelMode : uint8_t { FullyCoherent, LlcCoherent, NonCoherent };

inline const char* to_string(AccelMode m) {
    switch (m) {
        case AccelMode::FullyCoherent: return "fully-coherent";
        case AccelMode::LlcCoherent: return "llc-coherent";
        case AccelMode::NonCoherent: return "non-coherent";
    }
    return "?";
}

// One step of an accelerator job: a DMA region plus an optional compute delay
// inserted after the step completes.
struct DmaDescriptor {
    bool write = false;
    Addr base = 0;
    uint32_t len = 0;           // bytes
    uint32_t compute_delay = 0; // idle cycles after the step
};

struct AccelConfig {
    AccelMode mode = AccelMode::LlcCoherent;
    std::vector<DmaDescriptor> job;
};

struct SocConfig {
    uint32_t rows = 2;
    uint32_t cols = 2;
    std::vector<TileKind> tiles;  // raster order, rows*cols entries

    CacheGeometry l1d_geom{16, 32, 2};    // 1 KB
    CacheGeometry l2_geom{16, 1024, 4};   // 64 KB per processor tile
    CacheGeometry llc_geom{16, 2048, 16}; // 512 KB per memory tile slice
    bool l1i_present = false;

    uint64_t mem_bytes = 1ull << 20;
    Endian endian = Endian::Little;
    uint32_t mem_read_latency = 30;
    uint32_t mem_write_latency = 30;
    uint32_t l2_mshrs = 4;
    uint32_t llc_mshrs = 8;
    uint32_t router_queue_depth = 4;
    bool llc_grant_exclusive = true;

    Addr mmio_base = 0x80000000ull;
    uint64_t max_cycles = 100000000ull;
    uint64_t liveness_bound = 10000;

    std::map<TileId, AccelConfig> accels;  // keyed by tile id

    TileId tile_count() const { return TileId(rows * cols); }
    TileKind kind_of(TileId t) const { return tiles[t]; }

    std::vector<TileId> tiles_of(TileKind k) const {
        std::vector<TileId> out;
        for (TileId t = 0; t < tile_count(); ++t)
            if (tiles[t] == k) out.push_back(t);
        return out;
    }

    void validate() const {
        if (rows == 0 || cols == 0) throw ConfigError("grid dimensions must be positive");
        if (tiles.size() != rows * size_t(cols))
            throw ConfigError("tile map must cover the whole grid");
        l1d_geom.validate("l1d");
        l2_geom.validate("l2");
        llc_geom.validate("llc");
        if (!is_pow2(mem_bytes)) throw ConfigError("mem: size must be a power of two");
        auto mems = tiles_of(TileKind::Memory);
        if (mems.empty()) throw ConfigError("at least one memory tile is required");
        if (!is_pow2(mems.size()))
            throw ConfigError("memory tile count must be a power of two");
        if (tiles_of(TileKind::Auxiliary).size() != 1)
            throw ConfigError("exactly one auxiliary tile is required");
        if (mmio_base < mem_bytes)
            throw ConfigError("mmio base must lie above the memory range");
        for (auto& [t, acc] : accels) {
            if (t >= tile_count() || tiles[t] != TileKind::Accelerator)
                throw ConfigError("accelerator config names a non-accelerator tile");
            for (auto& d : acc.job)
                if (d.len > 0 && d.base + d.len > mem_bytes)
                    throw ConfigError("accelerator job region exceeds memory size");
        }
        if (l2_mshrs == 0 || llc_mshrs == 0) throw ConfigError("mshr counts must be positive");
        if (router_queue_depth == 0) throw ConfigError("noc: queue depth must be positive");
    }
};

// ---------------------------------------------------------------------------
// Address partitioning and the MMIO register map
// ---------------------------------------------------------------------------

// The global address space is split into contiguous equal partitions, one per
// memory tile in raster order. MMIO blocks (stride 0x100) are assigned first
// to memory tiles (flush trigger at +0x0, flush status at +0x8) and then to
// accelerator tiles (start at +0x0, status at +0x8).
struct AddressMap {
    uint64_t mem_bytes = 0;
    Addr mmio_base = 0;
    std::vector<TileId> mem_tiles;
    std::vector<TileId> acc_tiles;
    TileId aux_tile = kNoTile;

    static constexpr Addr kMmioStride = 0x100;
    static constexpr Addr kRegFlushTrigger = 0x0;
    static constexpr Addr kRegFlushStatus = 0x8;
    static constexpr Addr kRegAccStart = 0x0;
    static constexpr Addr kRegAccStatus = 0x8;

    AddressMap() = default;
    explicit AddressMap(const SocConfig& cfg)
        : mem_bytes(cfg.mem_bytes),
          mmio_base(cfg.mmio_base),
          mem_tiles(cfg.tiles_of(TileKind::Memory)),
          acc_tiles(cfg.tiles_of(TileKind::Accelerator)) {
        auto aux = cfg.tiles_of(TileKind::Auxiliary);
        if (!aux.empty()) aux_tile = aux[0];
    }

    uint64_t partition_bytes() const { return mem_bytes / mem_tiles.size(); }

    // partition index servicing addr; total and deterministic
    size_t partition_of(Addr addr) const { return size_t(addr / partition_bytes()); }

    TileId home_tile(Addr addr) const { return mem_tiles[partition_of(addr)]; }

    Addr partition_base(size_t idx) const { return Addr(idx) * partition_bytes(); }

    bool is_mmio(Addr addr) const { return addr >= mmio_base; }

    Addr mem_flush_trigger(size_t mem_idx) const {
        return mmio_base + kMmioStride * mem_idx + kRegFlushTrigger;
    }
    Addr mem_flush_status(size_t mem_idx) const {
        return mmio_base + kMmioStride * mem_idx + kRegFlushStatus;
    }
    Addr acc_start(size_t acc_idx) const {
        return mmio_base + kMmioStride * (mem_tiles.size() + acc_idx) + kRegAccStart;
    }
    Addr acc_status(size_t acc_idx) const {
        return mmio_base + kMmioStride * (mem_tiles.size() + acc_idx) + kRegAccStatus;
    }

    struct MmioTarget {
        TileId tile = kNoTile;
        Addr reg = 0;  // offset within the tile's block
    };

    std::optional<MmioTarget> resolve_mmio(Addr addr) const {
        if (addr < mmio_base) return std::nullopt;
        uint64_t block = (addr - mmio_base) / kMmioStride;
        Addr reg = (addr - mmio_base) % kMmioStride;
        if (block < mem_tiles.size()) return MmioTarget{mem_tiles[block], reg};
        block -= mem_tiles.size();
        if (block < acc_tiles.size()) return MmioTarget{acc_tiles[block], reg};
        return std::nullopt;
    }
};

// ---------------------------------------------------------------------------
// Config file parser: sectioned key/value text
// ---------------------------------------------------------------------------

inline SocConfig parse_config(std::istream& in, const std::string& name = "<config>") {
    SocConfig cfg;
    cfg.tiles.clear();
    std::map<std::pair<uint32_t, uint32_t>, TileKind> placed;
    std::string section;
    TileId cur_accel = kNoTile;
    std::string line;
    int lineno = 0;
    bool grid_seen = false;

    auto err = [&](const std::string& msg) -> ConfigError {
        return ConfigError(name + ":" + std::to_string(lineno) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw err("unterminated section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section.rfind("accel", 0) == 0 && section != "accel") {
                // accel section bound to a coordinate: [accel r,c]
                std::string coord = detail::trim(section.substr(5));
                size_t comma = coord.find(',');
                if (comma == std::string::npos) throw err("accel section needs 'row,col'");
                uint32_t r = uint32_t(detail::parse_u64(detail::trim(coord.substr(0, comma)), name));
                uint32_t c = uint32_t(detail::parse_u64(detail::trim(coord.substr(comma + 1)), name));
                if (!grid_seen) throw err("[grid] must precede accel sections");
                if (r >= cfg.rows || c >= cfg.cols) throw err("accel coordinate outside grid");
                cur_accel = TileId(r * cfg.cols + c);
                cfg.accels[cur_accel];  // default-construct
                section = "accel";
            }
            continue;
        }

        size_t eq = line.find('=');
        if (eq == std::string::npos) throw err("expected 'key = value'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) throw err("expected 'key = value'");

        try {
        if (section == "grid") {
            if (key == "rows") cfg.rows = uint32_t(detail::parse_u64(val, key));
            else if (key == "cols") cfg.cols = uint32_t(detail::parse_u64(val, key));
            else throw err("unknown grid key '" + key + "'");
            grid_seen = true;
        } else if (section == "tiles") {
            size_t comma = key.find(',');
            if (comma == std::string::npos) throw err("tile key must be 'row,col'");
            uint32_t r = uint32_t(detail::parse_u64(detail::trim(key.substr(0, comma)), key));
            uint32_t c = uint32_t(detail::parse_u64(detail::trim(key.substr(comma + 1)), key));
            if (!grid_seen) throw err("[grid] must precede [tiles]");
            if (r >= cfg.rows || c >= cfg.cols) throw err("tile coordinate outside grid");
            if (placed.count({r, c})) throw err("tile assigned twice");
            TileKind k;
            if (val == "cpu") k = TileKind::Processor;
            else if (val == "mem") k = TileKind::Memory;
            else if (val == "acc") k = TileKind::Accelerator;
            else if (val == "aux") k = TileKind::Auxiliary;
            else if (val == "empty") k = TileKind::Empty;
            else throw err("unknown tile kind '" + val + "'");
            placed[{r, c}] = k;
        } else if (section == "l1d" || section == "l2" || section == "llc") {
            CacheGeometry* g = section == "l1d" ? &cfg.l1d_geom
                             : section == "l2"  ? &cfg.l2_geom
                                                : &cfg.llc_geom;
            if (key == "line_bytes") g->line_bytes = uint32_t(detail::parse_u64(val, key));
            else if (key == "sets") g->sets = uint32_t(detail::parse_u64(val, key));
            else if (key == "ways") g->ways = uint32_t(detail::parse_u64(val, key));
            else if (section == "l2" && key == "mshrs") cfg.l2_mshrs = uint32_t(detail::parse_u64(val, key));
            else if (section == "llc" && key == "mshrs") cfg.llc_mshrs = uint32_t(detail::parse_u64(val, key));
            else if (section == "llc" && key == "grant_exclusive") cfg.llc_grant_exclusive = detail::parse_u64(val, key) != 0;
            else throw err("unknown " + section + " key '" + key + "'");
        } else if (section == "l1i") {
            if (key == "present") cfg.l1i_present = detail::parse_u64(val, key) != 0;
            else throw err("unknown l1i key '" + key + "'");
        } else if (section == "mem") {
            if (key == "size_bytes") cfg.mem_bytes = detail::parse_u64(val, key);
            else if (key == "read_latency") cfg.mem_read_latency = uint32_t(detail::parse_u64(val, key));
            else if (key == "write_latency") cfg.mem_write_latency = uint32_t(detail::parse_u64(val, key));
            else if (key == "endian") {
                if (val == "little") cfg.endian = Endian::Little;
                else if (val == "big") cfg.endian = Endian::Big;
                else throw err("endian must be 'little' or 'big'");
            } else throw err("unknown mem key '" + key + "'");
        } else if (section == "noc") {
            if (key == "queue_depth") cfg.router_queue_depth = uint32_t(detail::parse_u64(val, key));
            else throw err("unknown noc key '" + key + "'");
        } else if (section == "sim") {
            if (key == "max_cycles") cfg.max_cycles = detail::parse_u64(val, key);
            else if (key == "liveness_bound") cfg.liveness_bound = detail::parse_u64(val, key);
            else if (key == "mmio_base") cfg.mmio_base = detail::parse_u64(val, key);
            else throw err("unknown sim key '" + key + "'");
        } else if (section == "accel") {
            if (cur_accel == kNoTile) throw err("accel keys outside an [accel r,c] section");
            AccelConfig& ac = cfg.accels[cur_accel];
            if (key == "mode") {
                if (val == "fully-coherent") ac.mode = AccelMode::FullyCoherent;
                else if (val == "llc-coherent") ac.mode = AccelMode::LlcCoherent;
                else if (val == "non-coherent") ac.mode = AccelMode::NonCoherent;
                else throw err("unknown accel mode '" + val + "'");
            } else if (key == "read" || key == "write") {
                std::istringstream ss(val);
                std::string a, l;
                if (!(ss >> a >> l)) throw err(key + " needs '<base> <len>'");
                DmaDescriptor d;
                d.write = key == "write";
                d.base = detail::parse_u64(a, key);
                d.len = uint32_t(detail::parse_u64(l, key));
                ac.job.push_back(d);
            } else if (key == "delay") {
                if (ac.job.empty()) throw err("delay must follow a read/write step");
                ac.job.back().compute_delay = uint32_t(detail::parse_u64(val, key));
            } else throw err("unknown accel key '" + key + "'");
        } else if (section.empty()) {
            throw err("key outside any section");
        } else {
            throw err("unknown section '" + section + "'");
        }
        } catch (const ConfigError& e) {
            std::string what = e.what();
            if (what.rfind(name + ":", 0) == 0) throw;
            throw err(what);
        }
    }

    cfg.tiles.assign(size_t(cfg.rows) * cfg.cols, TileKind::Empty);
    for (auto& [rc, k] : placed) cfg.tiles[size_t(rc.first) * cfg.cols + rc.second] = k;
    cfg.validate();
    return cfg;
}

inline SocConfig parse_config_string(const std::string& text, const std::string& name = "<config>") {
    std::istringstream ss(text);
    return parse_config(ss, name);
}

}  // namespace tilesim
