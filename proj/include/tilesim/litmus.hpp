#pragma once

#include <mutex>
#include <thread>
#include <vector>

#include "tilesim/oracle.hpp"
#include "tilesim/soc.hpp"
#include "tilesim/trace.hpp"

namespace tilesim {

struct LitmusResult {
    std::string name;
    bool pass = false;
    OutcomeSet allowed;
    OutcomeSet observed;
    std::vector<Violation> violations;
    uint64_t runs = 0;
};

// Resolves a test's observe directives against a finished simulation.
inline Outcome observe_run(const LitmusTest& test, SocSim& soc) {
    Outcome o;
    for (auto& ob : test.observes) {
        if (ob.is_mem) {
            o.push_back(soc.monitor.shadow_word(ob.addr & ~Addr(kWordBytes - 1)));
        } else {
            if (ob.core >= soc.num_cores())
                throw ConfigError("observe names a core the config does not have");
            const auto& regs = soc.core(ob.core).registers;
            if (ob.reg_idx >= regs.size())
                throw ConfigError("observe names a register the program never writes");
            o.push_back(regs[ob.reg_idx]);
        }
    }
    return o;
}

// Runs a litmus test n_seeds times with perturbed per-core start skew and
// NoC arbitration seeds; PASS iff every observed outcome is oracle-allowed
// and no run raised a violation or failed to quiesce.
inline LitmusResult run_litmus(const LitmusTest& test, const SocConfig& cfg, uint64_t n_seeds,
                               uint64_t base_seed = 0, unsigned workers = 0) {
    LitmusResult res;
    res.name = test.name;
    res.allowed = ScOracle(cfg.l2_geom.line_bytes).allowed_outcomes(test);

    if (workers == 0) {
        workers = std::thread::hardware_concurrency();
        if (workers == 0) workers = 1;
    }
    if (workers > n_seeds && n_seeds > 0) workers = unsigned(n_seeds);

    std::mutex mu;
    std::vector<std::thread> pool;
    std::atomic<uint64_t> next{0};
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            OutcomeSet local_obs;
            std::vector<Violation> local_viol;
            for (;;) {
                uint64_t i = next.fetch_add(1);
                if (i >= n_seeds) break;
                uint64_t seed = hash_combine(base_seed, i);
                try {
                    SocSim soc(cfg, seed, FaultPlan{}, /*litmus_skew=*/true);
                    soc.set_program(test.prog);
                    auto r = soc.run();
                    local_obs.insert(observe_run(test, soc));
                    if (!r.quiesced || !soc.monitor.clean()) {
                        for (auto& v : soc.monitor.violations) local_viol.push_back(v);
                    }
                } catch (const std::exception& e) {
                    local_viol.push_back({ViolationKind::LostMessage, 0, 0,
                                          std::string("run aborted: ") + e.what()});
                }
            }
            std::lock_guard<std::mutex> lock(mu);
            for (auto& o : local_obs) res.observed.insert(o);
            for (auto& v : local_viol) res.violations.push_back(v);
        });
    }
    for (auto& t : pool) t.join();

    res.runs = n_seeds;
    res.pass = res.violations.empty();
    for (auto& o : res.observed)
        if (!res.allowed.count(o)) res.pass = false;
    return res;
}

inline std::string format_outcome(const Outcome& o) {
    std::string s = "(";
    for (size_t i = 0; i < o.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(o[i]);
    }
    s += ")";
    return s;
}

}  // namespace tilesim
