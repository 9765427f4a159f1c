// csgd: experiment harness for the stochastic composite solvers.
//
//   csgd run <config>            traces + summary.json in the config's `out` dir
//   csgd compare <dir>           runs every *.cfg in dir and merges their traces
//   csgd verify-bounds <config>  seed-averaged final gap against the theorem bound
//   csgd gen-data <config>       writes the generated dataset as CSV
//
// Exit status: 0 success, 1 runtime failure (or a failed bound check),
// 2 invalid configuration, 3 solver divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "csgd/harness/harness.hpp"

namespace {

using namespace csgd;
using namespace csgd::harness;

int cmd_run(const std::string& path) {
    const RunConfig cfg = load_config(path);
    const RunReport rep = run_command(cfg);
    for (std::size_t i = 0; i < rep.outcomes.size(); ++i) {
        const auto& o = rep.outcomes[i];
        std::printf("%-5s final objective %.10g  (%.3f s)  -> %s\n", to_string(o.solver).c_str(),
                    o.result.trace.back().objective, o.wall_seconds, rep.trace_paths[i].string().c_str());
    }
    std::printf("gap reference: %s (%.10g)\n", rep.gap_reference.c_str(), rep.reference_objective);
    std::printf("summary: %s\n", (cfg.out / "summary.json").string().c_str());
    return 0;
}

int cmd_compare(const std::string& dir) {
    const CompareReport rep = compare_command(dir);
    std::printf("%-32s %18s %10s\n", "run", "final objective", "seconds");
    for (std::size_t i = 0; i < rep.labels.size(); ++i)
        std::printf("%-32s %18.10g %10.3f\n", rep.labels[i].c_str(), rep.final_objective[i], rep.wall_seconds[i]);
    std::printf("merged traces: %s\n", rep.merged_csv.string().c_str());
    return 0;
}

int cmd_verify(const std::string& path) {
    const RunConfig cfg = load_config(path);
    const VerifyReport rep = verify_bounds_command(cfg);
    std::printf("replicates %zu%s, D = %.6g, sigma^2 = %.6g\n", rep.replicates,
                rep.high_variance ? " (high-variance check)" : "", rep.D, rep.sigma_sq);
    bool all = true;
    for (const auto& r : rep.rows) {
        std::printf("%-5s mean gap %.6e  bound %.6e  %s\n", to_string(r.solver).c_str(), r.mean_gap, r.bound,
                    r.pass ? "PASS" : "FAIL");
        all = all && r.pass;
    }
    return all ? 0 : 1;
}

int cmd_gen_data(const std::string& path) {
    const RunConfig cfg = load_config(path);
    std::printf("dataset: %s\n", gen_data_command(cfg).string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic gradient solvers for composite convex problems"};
    app.require_subcommand(1);
    std::string target;
    auto* run = app.add_subcommand("run", "Run the configured solvers and write traces + summary.json");
    run->add_option("config", target, "Config file")->required();
    auto* compare = app.add_subcommand("compare", "Run and merge every *.cfg in a directory");
    compare->add_option("dir", target, "Directory of config files")->required();
    auto* verify = app.add_subcommand("verify-bounds", "Check the seed-mean final gap against the theorem bound");
    verify->add_option("config", target, "Config file")->required();
    auto* gen = app.add_subcommand("gen-data", "Write the configured dataset as CSV");
    gen->add_option("config", target, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(target);
        if (compare->parsed()) return cmd_compare(target);
        if (verify->parsed()) return cmd_verify(target);
        if (gen->parsed()) return cmd_gen_data(target);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "invalid config: %s\n", e.what());
        return 2;
    } catch (const ParameterError& e) {
        std::fprintf(stderr, "invalid config: %s\n", e.what());
        return 2;
    } catch (const CapacityError& e) {
        std::fprintf(stderr, "invalid config: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "diverged: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
