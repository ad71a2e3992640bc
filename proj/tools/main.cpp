#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tilesim/tilesim.hpp"

using namespace tilesim;
namespace fs = std::filesystem;

namespace {

constexpr int kExitClean = 0;
constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;

FaultPlan parse_fault(const std::string& kind) {
    FaultPlan f;
    if (kind.empty() || kind == "none") return f;
    if (kind == "duplicate-m") f.duplicate_m = true;
    else if (kind == "drop-response") f.drop_datarsp_nth = 3;
    else if (kind == "skip-invack") f.skip_invack_wait = true;
    else if (kind == "skip-l1-inval") f.skip_l1_inval = true;
    else throw ConfigError("unknown fault kind '" + kind + "'");
    return f;
}

SocConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in, path);
}

TraceProgram load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace file '" + path + "'");
    return parse_trace(in, path);
}

LitmusTest load_litmus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open litmus file '" + path + "'");
    return parse_litmus(in, path);
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw ConfigError("cannot write to output directory '" + dir + "'");
    return out;
}

int cmd_run(const std::string& config_path, const std::string& trace_path, uint64_t seed,
            const std::string& out_dir, bool noc_trace, const std::string& fault_kind) {
    SocConfig cfg = load_config(config_path);
    TraceProgram prog = load_trace(trace_path);
    FaultPlan faults = parse_fault(fault_kind);

    SocSim soc(cfg, seed, faults);
    soc.set_program(prog);

    std::ofstream trace_out;
    if (noc_trace) {
        if (!out_dir.empty()) trace_out = open_out(out_dir, "noc_trace.txt");
        std::ostream& sink = out_dir.empty() ? std::cout : trace_out;
        soc.mesh().set_trace_sink([&sink](uint64_t cycle, const Packet& p) {
            sink << cycle << " plane=" << int(p.plane) << " src=" << p.src << " dst=" << p.dst
                 << " kind=" << to_string(p.msg.kind) << " addr=0x" << std::hex << p.msg.addr
                 << std::dec;
            if (p.msg.kind == MsgKind::MmioWrite || p.msg.kind == MsgKind::MmioRead ||
                p.msg.kind == MsgKind::MmioRsp)
                sink << " value=0x" << std::hex << p.msg.value << std::dec;
            sink << "\n";
        });
    }

    auto r = soc.run();

    std::ostringstream stats;
    stats << "config=" << config_path << "\n";
    stats << "trace=" << trace_path << "\n";
    stats << "seed=" << seed << "\n";
    stats << "quiesced=" << (r.quiesced ? 1 : 0) << "\n";
    soc.stats.emit(stats);

    if (out_dir.empty()) {
        std::cout << stats.str();
    } else {
        auto f = open_out(out_dir, "stats.txt");
        f << stats.str();
    }

    if (!soc.monitor.clean() || !r.quiesced) {
        for (auto& v : soc.monitor.violations) std::cerr << v.format() << "\n";
        return kExitViolation;
    }
    return kExitClean;
}

int cmd_litmus(const std::string& config_path, const std::string& corpus_dir,
               const std::string& single_test, uint64_t seeds, uint64_t base_seed,
               unsigned workers) {
    SocConfig cfg = load_config(config_path);
    std::vector<std::string> files;
    if (!single_test.empty()) {
        files.push_back(single_test);
    } else {
        if (!fs::is_directory(corpus_dir))
            throw ConfigError("litmus corpus directory '" + corpus_dir + "' does not exist");
        for (auto& e : fs::directory_iterator(corpus_dir))
            if (e.path().extension() == ".litmus") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ConfigError("no .litmus files in '" + corpus_dir + "'");
    }

    bool all_pass = true;
    for (auto& path : files) {
        LitmusTest t = load_litmus(path);
        auto res = run_litmus(t, cfg, seeds, base_seed, workers);
        std::cout << (res.pass ? "PASS" : "FAIL") << "  " << res.name << "  runs=" << res.runs
                  << " observed=" << res.observed.size() << " allowed=" << res.allowed.size()
                  << "\n";
        if (!res.pass) {
            all_pass = false;
            for (auto& o : res.observed)
                if (!res.allowed.count(o))
                    std::cout << "      forbidden outcome " << format_outcome(o) << "\n";
            for (size_t i = 0; i < res.violations.size() && i < 4; ++i)
                std::cout << "      " << res.violations[i].format() << "\n";
        }
    }
    return all_pass ? kExitClean : kExitViolation;
}

int cmd_explore(unsigned cores, unsigned lines, unsigned ops, const std::string& opset,
                uint64_t max_states, const std::string& fault_kind, uint32_t ways) {
    ExploreConfig cfg;
    cfg.cores = cores;
    cfg.lines = lines;
    cfg.ops_per_core = ops;
    cfg.max_states = max_states;
    cfg.l2_ways = ways;
    cfg.llc_ways = ways;
    cfg.faults = parse_fault(fault_kind);
    cfg.op_set.clear();
    std::istringstream ss(opset);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "ld") cfg.op_set.push_back(ExplOp::Load);
        else if (tok == "st") cfg.op_set.push_back(ExplOp::Store);
        else if (tok == "amo") cfg.op_set.push_back(ExplOp::Amo);
        else if (tok == "lr") cfg.op_set.push_back(ExplOp::Lr);
        else if (tok == "sc") cfg.op_set.push_back(ExplOp::Sc);
        else throw ConfigError("unknown op '" + tok + "' (use ld,st,amo,lr,sc)");
    }
    if (cfg.op_set.empty()) throw ConfigError("empty op set");

    Explorer ex(cfg);
    auto rep = ex.run();
    std::cout << "states=" << rep.states << "\n";
    std::cout << "transitions=" << rep.transitions << "\n";
    std::cout << "deadlocks=" << rep.deadlocks << "\n";
    std::cout << "violations=" << rep.violations << "\n";
    std::cout << "complete=" << (rep.complete ? 1 : 0) << "\n";
    for (auto& n : rep.notes) std::cout << "note: " << n << "\n";
    return rep.deadlocks == 0 && rep.violations == 0 && rep.complete ? kExitClean
                                                                     : kExitViolation;
}

int cmd_scale(const std::string& config_path, const std::string& cores_list, uint64_t seed,
              const std::string& out_dir) {
    SocConfig cfg = load_config(config_path);
    size_t cpu_tiles = cfg.tiles_of(TileKind::Processor).size();

    std::vector<unsigned> counts;
    std::istringstream ss(cores_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) counts.push_back(unsigned(std::stoul(tok)));
    if (counts.empty()) throw ConfigError("empty core-count list");
    for (unsigned c : counts)
        if (c == 0 || c > cpu_tiles)
            throw ConfigError("core count " + std::to_string(c) + " exceeds the " +
                              std::to_string(cpu_tiles) + " processor tiles in the config");

    GraphWorkload wl;
    wl.seed = seed;
    std::ostringstream csv;
    csv << "# graph-traversal workload, strong scaling (fixed total work)\n";
    csv << "# reference from hardware runs: 2-core geomean 0.58, 4-core geomean 0.34\n";
    csv << "cores,cycles,normalized\n";
    double base = 0;
    bool ok = true;
    for (unsigned c : counts) {
        SocSim soc(cfg, seed);
        soc.set_program(wl.build(c));
        auto r = soc.run();
        if (!r.quiesced || !soc.monitor.clean()) {
            ok = false;
            for (auto& v : soc.monitor.violations) std::cerr << v.format() << "\n";
        }
        if (base == 0) base = double(r.cycles);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", double(r.cycles) / base);
        csv << c << "," << r.cycles << "," << buf << "\n";
    }
    if (out_dir.empty()) {
        std::cout << csv.str();
    } else {
        auto f = open_out(out_dir, "scale.csv");
        f << csv.str();
        std::cout << csv.str();
    }
    return ok ? kExitClean : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cycle-level tile-based SoC coherence simulator"};
    app.require_subcommand(1);

    std::string config_path, trace_path, out_dir, fault_kind, corpus_dir, single_test;
    uint64_t seed = 0, seeds = 100, max_states = 10000000;
    unsigned cores = 2, lines = 1, ops = 2, workers = 0;
    uint32_t ways = 2;
    std::string opset = "ld,st";
    std::string cores_list = "1,2,4";
    bool noc_trace = false;

    auto* run = app.add_subcommand("run", "run a trace on a configured SoC");
    run->add_option("--config", config_path, "SoC config file")->required();
    run->add_option("--trace", trace_path, "trace file")->required();
    run->add_option("--seed", seed, "simulation seed");
    run->add_option("--out", out_dir, "output directory for stats");
    run->add_flag("--noc-trace", noc_trace, "emit per-cycle packet trace");
    run->add_option("--inject-fault", fault_kind,
                    "duplicate-m | drop-response | skip-invack | skip-l1-inval");

    auto* lit = app.add_subcommand("litmus", "run litmus tests against the SC oracle");
    lit->add_option("--config", config_path, "SoC config file")->required();
    lit->add_option("--corpus", corpus_dir, "directory of .litmus files");
    lit->add_option("--test", single_test, "single .litmus file");
    lit->add_option("--seeds", seeds, "number of perturbed runs per test");
    lit->add_option("--seed", seed, "base seed");
    lit->add_option("--workers", workers, "worker threads (0 = hardware)");

    auto* exp = app.add_subcommand("explore", "exhaustively explore a tiny configuration");
    exp->add_option("--cores", cores, "number of cores");
    exp->add_option("--lines", lines, "number of line addresses");
    exp->add_option("--ops", ops, "ops issued per core");
    exp->add_option("--opset", opset, "comma list of ld,st,amo,lr,sc");
    exp->add_option("--ways", ways, "cache ways (1 forces evictions)");
    exp->add_option("--max-states", max_states, "state bound");
    exp->add_option("--inject-fault", fault_kind, "fault to plant (see run)");

    auto* sc = app.add_subcommand("scale", "normalized execution time over core counts");
    sc->add_option("--config", config_path, "SoC config file")->required();
    sc->add_option("--cores", cores_list, "comma list of core counts");
    sc->add_option("--seed", seed, "workload seed");
    sc->add_option("--out", out_dir, "output directory for the CSV");

    try {
        app.parse(argc, argv);
        if (run->parsed())
            return cmd_run(config_path, trace_path, seed, out_dir, noc_trace, fault_kind);
        if (lit->parsed()) {
            if (corpus_dir.empty() == single_test.empty())
                throw ConfigError("litmus needs exactly one of --corpus or --test");
            return cmd_litmus(config_path, corpus_dir, single_test, seeds, seed, workers);
        }
        if (exp->parsed())
            return cmd_explore(cores, lines, ops, opset, max_states, fault_kind, ways);
        if (sc->parsed()) return cmd_scale(config_path, cores_list, seed, out_dir);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitClean : kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ProtocolError& e) {
        std::cerr << "simulation error: " << e.what() << "\n";
        return kExitViolation;
    }
    return kExitUsage;
}
