#pragma once

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>

namespace tilesim {

// splitmix64; deterministic across platforms
struct Rng {
    uint64_t state = 0x9e3779b97f4a7c15ull;

    explicit Rng(uint64_t seed = 0) { state = seed + 0x9e3779b97f4a7c15ull; }

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t below(uint64_t n) { return n ? next() % n : 0; }
};

inline uint64_t hash_combine(uint64_t h, uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

// Log verbosity from ESPSIM_LOG (0 = quiet .. 3 = debug).
inline int log_level() {
    static int lvl = [] {
        const char* e = std::getenv("ESPSIM_LOG");
        return e ? std::atoi(e) : 0;
    }();
    return lvl;
}

#define TS_LOG(lvl, expr)                                     \
    do {                                                      \
        if (::tilesim::log_level() >= (lvl)) {                \
            std::cerr << expr << "\n";                        \
        }                                                     \
    } while (0)

}  // namespace tilesim
