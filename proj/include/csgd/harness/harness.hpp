#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "csgd/core.hpp"
#include "csgd/harness/config.hpp"
#include "csgd/problems.hpp"
#include "csgd/regularizers.hpp"
#include "csgd/smoothing.hpp"
#include "csgd/solvers.hpp"

namespace csgd::harness {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Problem instances
// ---------------------------------------------------------------------------

/// Stream id reserved for dataset / target generation, so the data never
/// shares draws with the solver stream even when data_seed == seed.
inline constexpr std::uint64_t kDataStream = 0xda7a;
/// Substream of the solver stream used by the sigma^2 pilot.
inline constexpr std::uint64_t kPilotSubstream = 1;

struct Instance {
    Problem problem = Problem::Quadratic;
    std::shared_ptr<const Dataset> data;
    Vector target;  // quadratic target a, or beta_hat of the continuous model
    Regularizer reg;
    double L = 1.0;
    std::optional<Vector> x_star;        // closed-form minimizer when one exists
    std::optional<double> known_sigma_sq;  // exact oracle variance when known by construction
};

using AnyOracle = std::variant<MinibatchLinearOracle, MinibatchLogisticOracle, ContinuousLinearOracle, QuadraticOracle>;

inline Regularizer build_regularizer(const RunConfig& c) {
    switch (c.regularizer) {
        case RegularizerChoice::L1: return Regularizer::l1(c.lambda, c.p);
        case RegularizerChoice::Hierarchical: return Regularizer::group_norm(c.lambda, build_hierarchical(static_cast<int>(*c.n)));
        case RegularizerChoice::Groups:
            try {
                return Regularizer::group_norm(c.lambda, load_groups(c.groups_file.string(), c.p));
            } catch (const ParameterError& e) {
                throw ConfigError("groups_file", e.what());
            }
    }
    throw ConfigError("regularizer", "unsupported");
}

inline Dataset generate_dataset(const RunConfig& c) {
    RngStream rng(c.data_seed, kDataStream);
    if (c.problem == Problem::LinearDiscrete) return gen_linear_dataset(c.K, c.p, rng);
    if (c.problem == Problem::Logistic) return gen_logistic_dataset(c.K, c.p, rng);
    throw ConfigError("problem", "'" + to_string(c.problem) + "' has no dataset to generate");
}

inline Vector quadratic_target(const RunConfig& c) {
    RngStream rng(c.data_seed, kDataStream);
    Vector a = sample_gaussian(rng, c.p);
    const double n = norm2(a);
    for (double& e : a) e *= c.target_norm / n;
    return a;
}

inline bool has_exact_prox(const Regularizer& reg) {
    return reg.kind == RegularizerKind::L1 || reg.structure->is_laminar();
}

inline Instance build_instance(const RunConfig& c) {
    Instance inst;
    inst.problem = c.problem;
    inst.reg = build_regularizer(c);
    switch (c.problem) {
        case Problem::LinearDiscrete:
            inst.data = std::make_shared<const Dataset>(generate_dataset(c));
            inst.L = c.L ? *c.L : lipschitz_linear(*inst.data, c.lipschitz_convention);
            break;
        case Problem::Logistic:
            inst.data = std::make_shared<const Dataset>(generate_dataset(c));
            inst.L = c.L.value_or(1.0);
            break;
        case Problem::LinearContinuous:
            inst.target = linear_ground_truth(c.p);
            inst.L = c.L.value_or(1.0);
            break;
        case Problem::Quadratic:
            inst.target = quadratic_target(c);
            inst.L = c.L.value_or(1.0);
            inst.known_sigma_sq = c.noise_sigma_sq;
            break;
    }
    // phi = 0.5 ||x - a||^2 + const + h(x) is minimized by prox_h(a) with eta = 1.
    if ((c.problem == Problem::Quadratic || c.problem == Problem::LinearContinuous) && has_exact_prox(inst.reg))
        inst.x_star = prox(inst.reg, Vector(c.p, 0.0), inst.target, 1.0);
    return inst;
}

inline AnyOracle make_oracle(const RunConfig& c, const Instance& inst) {
    switch (c.problem) {
        case Problem::LinearDiscrete: return MinibatchLinearOracle(inst.data, c.batch_size);
        case Problem::Logistic: return MinibatchLogisticOracle(inst.data, c.batch_size);
        case Problem::LinearContinuous: return ContinuousLinearOracle(inst.target, c.batch_size);
        case Problem::Quadratic: return QuadraticOracle(inst.target, c.noise_sigma_sq);
    }
    throw ConfigError("problem", "unsupported");
}

inline double exact_phi(const RunConfig& c, const Instance& inst, const Vector& x) {
    AnyOracle o = make_oracle(c, inst);
    return std::visit([&](const auto& oracle) { return oracle.objective(x); }, o) + evaluate(inst.reg, x);
}

// ---------------------------------------------------------------------------
// Single solver run
// ---------------------------------------------------------------------------

struct SolverOutcome {
    SolverKind solver = SolverKind::SG;
    std::uint64_t seed = 0;
    SolverResult result;
    double wall_seconds = 0.0;
    double sigma_sq_estimate = 0.0;
    std::string sigma_sq_source;  // "pilot", "config" or "injected"
    std::optional<AcsaParams> acsa;
};

inline SmoothedRegularizer smoothed_for(const RunConfig& c, const Regularizer& reg) {
    return c.mu ? SmoothedRegularizer(reg, *c.mu) : SmoothedRegularizer::for_iterations(reg, c.N);
}

inline SolverOutcome run_solver(const RunConfig& c, const Instance& inst, SolverKind solver, std::uint64_t seed,
                                std::size_t trace_every) {
    AnyOracle any = make_oracle(c, inst);
    SolverOutcome out;
    out.solver = solver;
    out.seed = seed;
    std::visit(
        [&](auto& oracle) {
            RngStream rng(seed);
            RngStream pilot = rng.substream(kPilotSubstream);
            if (c.acsa_sigma_sq) {
                out.sigma_sq_estimate = *c.acsa_sigma_sq;
                out.sigma_sq_source = "config";
            } else if (inst.known_sigma_sq) {
                out.sigma_sq_estimate = *inst.known_sigma_sq;
                out.sigma_sq_source = "injected";
            } else {
                out.sigma_sq_estimate = estimate_sigma_sq(oracle, Vector(oracle.dimension(), 0.0), pilot);
                out.sigma_sq_source = "pilot";
            }
            const auto start = std::chrono::steady_clock::now();
            try {
                switch (solver) {
                    case SolverKind::SG: out.result = run_sg(oracle, inst.reg, inst.L, c.N, rng, trace_every); break;
                    case SolverKind::SSG:
                        out.result = run_ssg(oracle, smoothed_for(c, inst.reg), inst.L, c.N, rng, trace_every);
                        break;
                    case SolverKind::ACSA: {
                        const AcsaParams params =
                            resolve_acsa_params(oracle, inst.L, c.N, pilot, out.sigma_sq_estimate, c.acsa_D);
                        out.acsa = params;
                        out.result = run_acsa(oracle, inst.reg, inst.L, c.N, params, rng, trace_every);
                        break;
                    }
                }
            } catch (const DivergenceError& e) {
                throw DivergenceError("solver " + to_string(solver) + ", seed " + std::to_string(seed) + ": " + e.what(),
                                      e.iteration);
            }
            out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        },
        any);
    return out;
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

struct Bounds {
    double D = 1.0;
    double sigma = 0.0;
    double theorem = 0.0;
    double theorem_smoothed = 0.0;
};

/// D = ||x*|| when the minimizer is known, otherwise the configured acsa_D.
inline Bounds compute_bounds(const RunConfig& c, const Instance& inst, double sigma_sq) {
    Bounds b;
    b.D = inst.x_star ? norm2(*inst.x_star) : c.acsa_D;
    b.sigma = std::sqrt(sigma_sq);
    b.theorem = theorem_bound(b.D, b.sigma, inst.L, c.N);
    const auto s = smoothed_for(c, inst.reg);
    b.theorem_smoothed = theorem_bound_smoothed(b.D, b.sigma, inst.L, s.a_norm(), s.M(), s.c(), c.N);
    return b;
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// COMPOSITE_SGD_THREADS if set, otherwise the number of logical CPUs.
inline std::size_t worker_cap() {
    if (const char* env = std::getenv("COMPOSITE_SGD_THREADS"); env && *env) {
        const std::string v(env);
        std::size_t n = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
        if (ec != std::errc() || ptr != v.data() + v.size() || n == 0)
            throw ConfigError("COMPOSITE_SGD_THREADS", "expected a positive integer, got '" + v + "'");
        return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(0..jobs-1) on at most worker_cap() threads. Results land in
/// job-indexed slots; the first failure in job order is rethrown.
template <class Fn>
void run_parallel(std::size_t jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(jobs, worker_cap());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline void write_trace_csv(const fs::path& path, const Trace& trace, std::optional<double> reference) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << "iteration,elapsed_seconds,objective" << (reference ? ",gap" : "") << '\n';
    for (const auto& r : trace) {
        out << r.iteration << ',' << format_double(r.elapsed_seconds) << ',' << format_double(r.objective);
        if (reference) out << ',' << format_double(r.objective - *reference);
        out << '\n';
    }
}

struct TraceRow {
    std::size_t iteration = 0;
    std::vector<std::string> fields;  // everything after the iteration column
};

inline std::vector<TraceRow> read_trace_csv(const fs::path& path, std::vector<std::string>* header = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read '" + path.string() + "'");
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) throw Error("empty trace '" + path.string() + "'");
    if (header) *header = split(line);
    std::vector<TraceRow> rows;
    while (std::getline(in, line)) {
        auto cells = split(line);
        if (cells.empty()) continue;
        TraceRow r;
        r.iteration = static_cast<std::size_t>(std::stoull(cells[0]));
        r.fields.assign(cells.begin() + 1, cells.end());
        rows.push_back(std::move(r));
    }
    return rows;
}

inline nlohmann::json config_echo(const RunConfig& c, const Instance& inst) {
    nlohmann::json j;
    j["problem"] = to_string(c.problem);
    j["regularizer"] = to_string(c.regularizer);
    if (!c.groups_file.empty()) j["groups_file"] = c.groups_file.string();
    std::vector<std::string> solvers;
    for (auto s : c.solvers) solvers.push_back(to_string(s));
    j["solver"] = solvers;
    if (c.K) j["K"] = c.K;
    j["p"] = c.p;
    if (c.n) j["n"] = *c.n;
    j["lambda"] = c.lambda;
    j["N"] = c.N;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["data_seed"] = c.data_seed;
    j["trace_every"] = c.trace_every;
    j["lipschitz_convention"] = to_string(c.lipschitz_convention);
    j["L"] = inst.L;
    j["mu"] = c.mu ? nlohmann::json(*c.mu) : nlohmann::json(nullptr);
    j["acsa_sigma_sq"] = c.acsa_sigma_sq ? nlohmann::json(*c.acsa_sigma_sq) : nlohmann::json(nullptr);
    j["acsa_D"] = c.acsa_D;
    if (c.problem == Problem::Quadratic) {
        j["noise_sigma_sq"] = c.noise_sigma_sq;
        j["target_norm"] = c.target_norm;
    }
    j["out"] = c.out.string();
    return j;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct RunReport {
    std::vector<SolverOutcome> outcomes;
    std::vector<fs::path> trace_paths;
    double reference_objective = 0.0;
    std::string gap_reference;  // "closed-form" or "empirical-best"
    nlohmann::json summary;
};

inline fs::path trace_path(const RunConfig& c, SolverKind s, std::uint64_t seed) {
    return c.out / ("trace_" + to_string(s) + "_" + std::to_string(seed) + ".csv");
}

/// `run`: every configured solver on one instance, one trace CSV per solver plus summary.json.
inline RunReport run_command(const RunConfig& c) {
    const Instance inst = build_instance(c);
    RunReport rep;
    rep.outcomes.resize(c.solvers.size());
    run_parallel(c.solvers.size(),
                 [&](std::size_t i) { rep.outcomes[i] = run_solver(c, inst, c.solvers[i], c.seed, c.trace_every); });

    if (inst.x_star) {
        rep.reference_objective = exact_phi(c, inst, *inst.x_star);
        rep.gap_reference = "closed-form";
    } else {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& o : rep.outcomes)
            for (const auto& r : o.result.trace) best = std::min(best, r.objective);
        rep.reference_objective = best;
        rep.gap_reference = "empirical-best";
    }

    fs::create_directories(c.out);
    nlohmann::json final_objective, wall, sigma, bound, bound_s, paths, acsa;
    for (const auto& o : rep.outcomes) {
        const std::string name = to_string(o.solver);
        const fs::path path = trace_path(c, o.solver, o.seed);
        write_trace_csv(path, o.result.trace, rep.reference_objective);
        rep.trace_paths.push_back(path);
        const Bounds b = compute_bounds(c, inst, o.sigma_sq_estimate);
        final_objective[name] = o.result.trace.back().objective;
        wall[name] = o.wall_seconds;
        sigma[name] = o.sigma_sq_estimate;
        bound[name] = b.theorem;
        bound_s[name] = b.theorem_smoothed;
        paths[name] = path.string();
        if (o.acsa)
            acsa = {{"gamma_star", o.acsa->gamma_star},
                    {"sigma_sq", o.acsa->sigma_sq_estimate},
                    {"sigma_sq_source", o.sigma_sq_source},
                    {"D", o.acsa->D_estimate}};
    }
    nlohmann::json s;
    s["config"] = config_echo(c, inst);
    s["final_objective"] = final_objective;
    s["wall_clock_seconds"] = wall;
    s["sigma_sq_estimate"] = sigma;
    s["theorem_bound"] = bound;
    s["theorem_bound_smoothed"] = bound_s;
    s["trace_path"] = paths;
    s["gap_reference"] = {{"kind", rep.gap_reference}, {"objective", rep.reference_objective}};
    if (!acsa.is_null()) s["acsa_parameters"] = acsa;
    rep.summary = s;

    std::ofstream js(c.out / "summary.json", std::ios::binary);
    if (!js) throw Error("cannot write summary.json in '" + c.out.string() + "'");
    js << s.dump(2) << '\n';
    return rep;
}

struct CompareReport {
    std::vector<std::string> labels;
    std::vector<double> final_objective;
    std::vector<double> wall_seconds;
    fs::path merged_csv;
};

/// `compare`: runs every *.cfg in `dir` (at least two, all on the same problem
/// instance) and merges the traces on the iteration column.
inline CompareReport compare_command(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("directory", "'" + dir.string() + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".cfg") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.size() < 2)
        throw ConfigError("directory", "compare needs at least 2 .cfg files, found " + std::to_string(files.size()));

    std::vector<RunConfig> cfgs;
    for (const auto& f : files) cfgs.push_back(load_config(f));
    const RunConfig& ref = cfgs.front();
    for (std::size_t i = 1; i < cfgs.size(); ++i) {
        const RunConfig& c = cfgs[i];
        auto mismatch = [&](const std::string& field) {
            throw ConfigError(field, "differs between " + files.front().filename().string() + " and " +
                                         files[i].filename().string());
        };
        if (c.problem != ref.problem) mismatch("problem");
        if (c.K != ref.K) mismatch("K");
        if (c.p != ref.p) mismatch("p");
        if (c.lambda != ref.lambda) mismatch("lambda");
        if (c.data_seed != ref.data_seed) mismatch("data_seed");
        if (c.regularizer != ref.regularizer) mismatch("regularizer");
        if (c.groups_file != ref.groups_file) mismatch("groups_file");
        if (c.noise_sigma_sq != ref.noise_sigma_sq) mismatch("noise_sigma_sq");
        if (c.target_norm != ref.target_norm) mismatch("target_norm");
    }

    CompareReport rep;
    std::map<std::size_t, std::vector<std::string>> merged;
    std::size_t column = 0;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        const RunReport run = run_command(cfgs[i]);
        for (std::size_t s = 0; s < run.outcomes.size(); ++s, ++column) {
            const auto& o = run.outcomes[s];
            rep.labels.push_back(files[i].stem().string() + "_" + to_string(o.solver));
            rep.final_objective.push_back(o.result.trace.back().objective);
            rep.wall_seconds.push_back(o.wall_seconds);
            for (const auto& r : o.result.trace) {
                auto& row = merged[r.iteration];
                row.resize(column + 1);
                row[column] = format_double(r.objective);
            }
        }
    }
    rep.merged_csv = dir / "compare.csv";
    std::ofstream out(rep.merged_csv, std::ios::binary);
    if (!out) throw Error("cannot write '" + rep.merged_csv.string() + "'");
    out << "iteration";
    for (const auto& l : rep.labels) out << ',' << l << "_objective";
    out << '\n';
    for (auto& [k, row] : merged) {
        row.resize(column);
        out << k;
        for (const auto& cell : row) out << ',' << cell;
        out << '\n';
    }
    return rep;
}

struct VerifyRow {
    SolverKind solver = SolverKind::SG;
    double mean_gap = 0.0;
    double bound = 0.0;
    bool pass = false;
};

struct VerifyReport {
    std::size_t replicates = 0;
    bool high_variance = false;
    double D = 0.0;
    double sigma_sq = 0.0;
    std::vector<VerifyRow> rows;
};

/// `verify-bounds`: seed-mean final gap over `replicates` seeds against the
/// matching theorem bound. Needs a closed-form optimum, i.e. the quadratic
/// problem with an L1 or laminar group regularizer.
inline VerifyReport verify_bounds_command(const RunConfig& c) {
    if (c.problem != Problem::Quadratic)
        throw ConfigError("problem", "verify-bounds needs a closed-form optimum; use problem = quadratic");
    const Instance inst = build_instance(c);
    if (!inst.x_star) throw ConfigError("regularizer", "verify-bounds needs an L1 or laminar group regularizer");
    const double best = exact_phi(c, inst, *inst.x_star);

    VerifyReport rep;
    rep.replicates = c.replicates;
    rep.high_variance = c.replicates == 1;
    rep.sigma_sq = *inst.known_sigma_sq;
    const Bounds b = compute_bounds(c, inst, rep.sigma_sq);
    rep.D = b.D;

    const std::size_t R = c.replicates;
    std::vector<double> gaps(c.solvers.size() * R);
    run_parallel(gaps.size(), [&](std::size_t job) {
        const std::size_t s = job / R, r = job % R;
        const auto o = run_solver(c, inst, c.solvers[s], c.seed + r, c.N + 1);
        gaps[job] = o.result.trace.back().objective - best;
    });
    for (std::size_t s = 0; s < c.solvers.size(); ++s) {
        VerifyRow row;
        row.solver = c.solvers[s];
        for (std::size_t r = 0; r < R; ++r) row.mean_gap += gaps[s * R + r];
        row.mean_gap /= static_cast<double>(R);
        row.bound = row.solver == SolverKind::SSG ? b.theorem_smoothed : b.theorem;
        row.pass = row.mean_gap <= row.bound;
        rep.rows.push_back(row);
    }
    return rep;
}

/// `gen-data`: writes the configured dataset to <out>/dataset.csv.
inline fs::path gen_data_command(const RunConfig& c) {
    const Dataset d = generate_dataset(c);
    fs::create_directories(c.out);
    const fs::path path = c.out / "dataset.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    write_dataset_csv(out, d);
    return path;
}

}  // namespace csgd::harness
