#pragma once

// Run configuration: flat `key = value` text, one entry per line, `#` starts
// a comment. Unknown or duplicated keys are rejected, and every validation
// failure names the offending field.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "csgd/core.hpp"
#include "csgd/problems.hpp"

namespace csgd::harness {

class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error("config field '" + field + "': " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

enum class Problem { LinearDiscrete, LinearContinuous, Logistic, Quadratic };
enum class RegularizerChoice { L1, Hierarchical, Groups };
enum class SolverKind { SG, SSG, ACSA };

inline std::string to_string(Problem p) {
    switch (p) {
        case Problem::LinearDiscrete: return "linear-discrete";
        case Problem::LinearContinuous: return "linear-continuous";
        case Problem::Logistic: return "logistic";
        case Problem::Quadratic: return "quadratic";
    }
    return "?";
}

inline std::string to_string(RegularizerChoice r) {
    switch (r) {
        case RegularizerChoice::L1: return "l1";
        case RegularizerChoice::Hierarchical: return "hierarchical";
        case RegularizerChoice::Groups: return "groups";
    }
    return "?";
}

inline std::string to_string(SolverKind s) {
    switch (s) {
        case SolverKind::SG: return "sg";
        case SolverKind::SSG: return "ssg";
        case SolverKind::ACSA: return "acsa";
    }
    return "?";
}

inline std::string to_string(LipschitzConvention c) { return c == LipschitzConvention::Paper ? "paper" : "scaled"; }

struct RunConfig {
    Problem problem = Problem::LinearDiscrete;
    RegularizerChoice regularizer = RegularizerChoice::L1;
    std::filesystem::path groups_file;
    std::vector<SolverKind> solvers;
    std::size_t K = 0;
    std::size_t p = 0;
    std::optional<std::size_t> n;  // tree depth, p = 2^n
    double lambda = 0.0;
    std::size_t N = 0;
    std::size_t batch_size = 10;
    std::uint64_t seed = 0;
    std::uint64_t data_seed = 0;
    std::size_t trace_every = 1;
    LipschitzConvention lipschitz_convention = LipschitzConvention::Scaled;
    std::optional<double> L;
    std::optional<double> mu;
    std::optional<double> acsa_sigma_sq;
    double acsa_D = 1.0;
    std::size_t replicates = 20;
    std::filesystem::path out = "out";
    double noise_sigma_sq = 0.0;
    double target_norm = 1.0;

    /// Raw key/value pairs as read, used for the summary echo.
    std::map<std::string, std::string> raw;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
    return out;
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
    const auto c = parse_unsigned(key, v);
    if (c == 0) throw ConfigError(key, "must be positive");
    return static_cast<std::size_t>(c);
}

inline double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key, "expected a finite real number, got '" + v + "'");
    return out;
}

inline double parse_nonnegative(const std::string& key, const std::string& v) {
    const double d = parse_real(key, v);
    if (d < 0.0) throw ConfigError(key, "must be >= 0");
    return d;
}

inline double parse_positive(const std::string& key, const std::string& v) {
    const double d = parse_real(key, v);
    if (!(d > 0.0)) throw ConfigError(key, "must be > 0");
    return d;
}

}  // namespace detail

/// Parses config text. Relative paths (out, groups_file) are resolved against `base_dir`.
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
    using namespace detail;
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno), "expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
        if (value.empty()) throw ConfigError(key, "empty value");
        if (!kv.emplace(key, value).second) throw ConfigError(key, "given more than once");
    }

    RunConfig c;
    c.raw = kv;
    auto take = [&](const std::string& key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto require = [&](const std::string& key) {
        auto v = take(key);
        if (!v) throw ConfigError(key, "required field is missing");
        return *v;
    };

    const std::string problem = require("problem");
    if (problem == "linear-discrete") c.problem = Problem::LinearDiscrete;
    else if (problem == "linear-continuous") c.problem = Problem::LinearContinuous;
    else if (problem == "logistic") c.problem = Problem::Logistic;
    else if (problem == "quadratic") c.problem = Problem::Quadratic;
    else throw ConfigError("problem", "unknown problem '" + problem + "'");

    const std::string reg = require("regularizer");
    if (reg == "l1") c.regularizer = RegularizerChoice::L1;
    else if (reg == "hierarchical") c.regularizer = RegularizerChoice::Hierarchical;
    else if (reg == "groups") c.regularizer = RegularizerChoice::Groups;
    else throw ConfigError("regularizer", "unknown regularizer '" + reg + "'");

    {
        std::stringstream ss(require("solver"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            SolverKind k;
            if (item == "sg") k = SolverKind::SG;
            else if (item == "ssg") k = SolverKind::SSG;
            else if (item == "acsa") k = SolverKind::ACSA;
            else throw ConfigError("solver", "unknown solver '" + item + "'");
            for (SolverKind s : c.solvers)
                if (s == k) throw ConfigError("solver", "solver '" + item + "' listed twice");
            c.solvers.push_back(k);
        }
        if (c.solvers.empty()) throw ConfigError("solver", "no solver given");
    }

    c.lambda = parse_nonnegative("lambda", require("lambda"));
    c.N = parse_count("N", require("N"));

    if (auto v = take("K")) c.K = parse_count("K", *v);
    if (auto v = take("p")) c.p = parse_count("p", *v);
    if (auto v = take("n")) c.n = static_cast<std::size_t>(parse_unsigned("n", *v));
    if (auto v = take("batch_size")) c.batch_size = parse_count("batch_size", *v);
    if (auto v = take("seed")) c.seed = parse_unsigned("seed", *v);
    c.data_seed = c.seed;
    if (auto v = take("data_seed")) c.data_seed = parse_unsigned("data_seed", *v);
    if (auto v = take("trace_every")) c.trace_every = parse_count("trace_every", *v);
    if (auto v = take("lipschitz_convention")) {
        if (*v == "paper") c.lipschitz_convention = LipschitzConvention::Paper;
        else if (*v == "scaled") c.lipschitz_convention = LipschitzConvention::Scaled;
        else throw ConfigError("lipschitz_convention", "expected 'paper' or 'scaled', got '" + *v + "'");
    }
    if (auto v = take("L")) c.L = parse_positive("L", *v);
    if (auto v = take("mu")) c.mu = parse_positive("mu", *v);
    if (auto v = take("acsa_sigma_sq")) c.acsa_sigma_sq = parse_nonnegative("acsa_sigma_sq", *v);
    if (auto v = take("acsa_D")) c.acsa_D = parse_positive("acsa_D", *v);
    if (auto v = take("replicates")) c.replicates = parse_count("replicates", *v);
    if (auto v = take("noise_sigma_sq")) c.noise_sigma_sq = parse_nonnegative("noise_sigma_sq", *v);
    if (auto v = take("target_norm")) c.target_norm = parse_nonnegative("target_norm", *v);
    if (auto v = take("out")) c.out = *v;
    if (auto v = take("groups_file")) c.groups_file = *v;

    if (!kv.empty()) throw ConfigError(kv.begin()->first, "unknown key");

    // dimension rules
    if (c.regularizer == RegularizerChoice::Hierarchical) {
        if (!c.n) throw ConfigError("n", "required field is missing (hierarchical regularizer needs the tree depth)");
        if (*c.n > 23) throw ConfigError("n", "tree depth above 23 is not supported");
        const std::size_t expect = std::size_t{1} << *c.n;
        if (c.p != 0 && c.p != expect)
            throw ConfigError("p", "hierarchical regularizer requires p = 2^n = " + std::to_string(expect));
        c.p = expect;
    } else {
        if (c.n) throw ConfigError("n", "only meaningful for the hierarchical regularizer");
        if (c.p == 0) throw ConfigError("p", "required field is missing");
    }
    if (c.regularizer == RegularizerChoice::Groups && c.groups_file.empty())
        throw ConfigError("groups_file", "required field is missing (regularizer = groups)");
    if (c.regularizer != RegularizerChoice::Groups && !c.groups_file.empty())
        throw ConfigError("groups_file", "only meaningful for regularizer = groups");

    const bool needs_data = c.problem == Problem::LinearDiscrete || c.problem == Problem::Logistic;
    if (needs_data && c.K == 0) throw ConfigError("K", "required field is missing");
    if (!needs_data && c.K != 0) throw ConfigError("K", "only meaningful for dataset-backed problems");
    if ((c.problem == Problem::LinearDiscrete || c.problem == Problem::LinearContinuous) && c.p % 2 != 0)
        throw ConfigError("p", "linear regression problems need an even p");
    if (c.problem != Problem::Quadratic && (c.raw.count("noise_sigma_sq") || c.raw.count("target_norm")))
        throw ConfigError(c.raw.count("noise_sigma_sq") ? "noise_sigma_sq" : "target_norm",
                          "only meaningful for problem = quadratic");

    if (!base_dir.empty()) {
        if (c.out.is_relative()) c.out = base_dir / c.out;
        if (!c.groups_file.empty() && c.groups_file.is_relative()) c.groups_file = base_dir / c.groups_file;
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path.string() + "'");
    return parse_config(in, path.parent_path());
}

}  // namespace csgd::harness
