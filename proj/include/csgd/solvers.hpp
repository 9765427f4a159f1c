#pragma once

#include <chrono>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <string>

#include "csgd/core.hpp"
#include "csgd/regularizers.hpp"
#include "csgd/smoothing.hpp"

namespace csgd {

template <class O>
concept StochasticOracle = requires(O& o, const O& co, const Vector& x, RngStream& rng) {
    { co.dimension() } -> std::convertible_to<std::size_t>;
    { o.sample(x, rng) } -> std::same_as<Vector>;
    { co.gradient(x) } -> std::same_as<Vector>;
    { co.objective(x) } -> std::convertible_to<double>;
};

// ---------------------------------------------------------------------------
// Step-size schedules
// ---------------------------------------------------------------------------

/// theta_t = 2 / (2 + t),  gamma_t = (2 / (t + 2)) (N^{3/2} / L_eff + 2).
struct Schedule {
    std::size_t N = 0;
    double L_eff = 1.0;

    Schedule(std::size_t n_iter, double l_eff) : N(n_iter), L_eff(l_eff) {
        if (!(L_eff > 0.0) || !std::isfinite(L_eff)) throw ParameterError("schedule: L must be positive");
    }

    static double theta(std::size_t t) { return 2.0 / (2.0 + static_cast<double>(t)); }

    double gamma(std::size_t t) const {
        const double n = static_cast<double>(N);
        return (2.0 / (static_cast<double>(t) + 2.0)) * (n * std::sqrt(n) / L_eff + 2.0);
    }
};

/// AC-SA parameters. gamma_star = max{2L, [2 sigma^2 N(N+1)(N+2) / (3 D^2)]^{1/2}}.
struct AcsaParams {
    double gamma_star = 0.0;
    double sigma_sq_estimate = 0.0;
    double D_estimate = 1.0;
};

inline double acsa_gamma_star(double lipschitz, std::size_t n_iter, double sigma_sq, double D) {
    if (!(D > 0.0)) throw ParameterError("acsa: D must be positive");
    if (!(sigma_sq >= 0.0)) throw ParameterError("acsa: sigma^2 must be >= 0");
    const double n = static_cast<double>(n_iter);
    const double variance_branch = std::sqrt(2.0 * sigma_sq * n * (n + 1.0) * (n + 2.0) / (3.0 * D * D));
    return std::max(2.0 * lipschitz, variance_branch);
}

/// Sample variance (1/(n-1)) sum ||G_i - mean G||^2 of `draws` oracle samples at x.
template <StochasticOracle Oracle>
double estimate_sigma_sq(Oracle& oracle, const Vector& x, RngStream& rng, std::size_t draws = 30) {
    if (draws < 2) throw ParameterError("estimate_sigma_sq: need at least 2 draws");
    std::vector<Vector> samples;
    samples.reserve(draws);
    for (std::size_t i = 0; i < draws; ++i) samples.push_back(oracle.sample(x, rng));
    Vector mean(x.size(), 0.0);
    for (const auto& s : samples)
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += s[j];
    for (double& m : mean) m /= static_cast<double>(draws);
    double acc = 0.0;
    for (const auto& s : samples) acc += squared_norm(subtract(s, mean));
    return acc / static_cast<double>(draws - 1);
}

/// sigma^2 from 30 pilot draws at x0 = 0 unless overridden; D defaults to 1.
/// The pilot consumes `pilot_rng`, never the solver's stream.
template <StochasticOracle Oracle>
AcsaParams resolve_acsa_params(Oracle& oracle, double lipschitz, std::size_t n_iter, RngStream pilot_rng,
                               std::optional<double> sigma_sq = std::nullopt, double D = 1.0) {
    AcsaParams p;
    p.sigma_sq_estimate =
        sigma_sq ? *sigma_sq : estimate_sigma_sq(oracle, Vector(oracle.dimension(), 0.0), pilot_rng);
    p.D_estimate = D;
    p.gamma_star = acsa_gamma_star(lipschitz, n_iter, p.sigma_sq_estimate, D);
    return p;
}

// ---------------------------------------------------------------------------
// Convergence bounds
// ---------------------------------------------------------------------------

/// (2D^2 + sigma^2) / (N+2)^{1/2} + L (4D^2 + 2 sigma^2) / (N+2)^2
inline double theorem_bound(double D, double sigma, double L, std::size_t n_iter) {
    const double n2 = static_cast<double>(n_iter) + 2.0;
    const double d2 = D * D;
    const double s2 = sigma * sigma;
    return (2.0 * d2 + s2) / std::sqrt(n2) + L * (4.0 * d2 + 2.0 * s2) / (n2 * n2);
}

/// theorem_bound + (||A|| / (N+2)) (M + (4D^2 + 2 sigma^2) / c)
inline double theorem_bound_smoothed(double D, double sigma, double L, double a_norm, double M, double c,
                                     std::size_t n_iter) {
    if (!(c > 0.0)) throw ParameterError("theorem_bound_smoothed: c must be positive");
    const double n2 = static_cast<double>(n_iter) + 2.0;
    return theorem_bound(D, sigma, L, n_iter) + (a_norm / n2) * (M + (4.0 * D * D + 2.0 * sigma * sigma) / c);
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

struct SolverResult {
    Vector x;
    Trace trace;
};

/// Iterates with any coordinate above this magnitude abort the run.
inline constexpr double kDivergenceThreshold = 1e12;

namespace detail {

struct TraceRecorder {
    using Clock = std::chrono::steady_clock;

    std::size_t every;
    std::size_t last_iteration;
    Clock::time_point start = Clock::now();
    Trace trace;

    template <class Objective>
    void maybe_record(std::size_t k, const Vector& x, Objective&& phi) {
        if (k != 0 && k != last_iteration && k % every != 0) return;
        const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
        trace.push_back({k, elapsed, phi(x)});
    }
};

inline void guard_divergence(const Vector& v, std::size_t t) {
    for (double e : v) {
        if (!std::isfinite(e) || std::abs(e) > kDivergenceThreshold)
            throw DivergenceError("iterate diverged at iteration " + std::to_string(t), t);
    }
}

// Shared outer loop, for t = 0..N:
//   y_t = (1 - theta_t) x_t + theta_t z_t
//   z_{t+1} = step(t, y_t, z_t)          (draws xi_t inside)
//   x_{t+1} = (1 - theta_t) x_t + theta_t z_{t+1}
// Returns x_{N+1}. Trace rows are indexed by k for the iterate x_k.
template <class Step, class Objective>
SolverResult accelerated_loop(std::size_t dim, std::size_t n_iter, std::size_t trace_every, Step&& step,
                              Objective&& phi) {
    if (n_iter < 1) throw ParameterError("solver: N must be >= 1");
    TraceRecorder rec{trace_every == 0 ? 1 : trace_every, n_iter + 1, TraceRecorder::Clock::now(), {}};
    Vector x(dim, 0.0);
    Vector z(dim, 0.0);
    Vector y(dim, 0.0);
    rec.maybe_record(0, x, phi);
    for (std::size_t t = 0; t <= n_iter; ++t) {
        const double theta = Schedule::theta(t);
        convex_combination(theta, x, z, y);
        z = step(t, y, z);
        guard_divergence(z, t);
        for (std::size_t i = 0; i < dim; ++i) x[i] = (1.0 - theta) * x[i] + theta * z[i];
        rec.maybe_record(t + 1, x, phi);
    }
    return {std::move(x), std::move(rec.trace)};
}

template <StochasticOracle Oracle, class GammaFn>
SolverResult run_prox_method(Oracle& oracle, const Regularizer& reg, double lipschitz, std::size_t n_iter,
                             RngStream& rng, std::size_t trace_every, GammaFn&& gamma) {
    if (oracle.dimension() != reg.p) throw DimensionError("solver: oracle and regularizer dimensions differ");
    auto step = [&](std::size_t t, const Vector& y, const Vector& z) {
        const Vector g = oracle.sample(y, rng);
        try {
            return prox(reg, g, z, gamma(t) * lipschitz);
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(std::string(e.what()) + " (solver iteration " + std::to_string(t) + ")",
                                   e.last_iterate);
        }
    };
    auto phi = [&](const Vector& x) { return oracle.objective(x) + evaluate(reg, x); };
    return accelerated_loop(oracle.dimension(), n_iter, trace_every, step, phi);
}

}  // namespace detail

/// Stochastic gradient method with an exact prox step:
///   z_{t+1} = argmin_x { <x, G(y_t, xi_t)> + (gamma_t L / 2) ||x - z_t||^2 + h(x) }.
template <StochasticOracle Oracle>
SolverResult run_sg(Oracle& oracle, const Regularizer& reg, double lipschitz, std::size_t n_iter, RngStream& rng,
                    std::size_t trace_every = 1) {
    const Schedule schedule(n_iter, lipschitz);
    return detail::run_prox_method(oracle, reg, lipschitz, n_iter, rng, trace_every,
                                   [&](std::size_t t) { return schedule.gamma(t); });
}

/// AC-SA baseline: the SG loop with gamma_t = 2 gamma* / (L (t + 1)).
template <StochasticOracle Oracle>
SolverResult run_acsa(Oracle& oracle, const Regularizer& reg, double lipschitz, std::size_t n_iter,
                      const AcsaParams& params, RngStream& rng, std::size_t trace_every = 1) {
    if (!(lipschitz > 0.0)) throw ParameterError("acsa: L must be positive");
    if (!(params.gamma_star > 0.0)) throw ParameterError("acsa: gamma* must be positive");
    return detail::run_prox_method(oracle, reg, lipschitz, n_iter, rng, trace_every, [&](std::size_t t) {
        return 2.0 * params.gamma_star / (lipschitz * (static_cast<double>(t) + 1.0));
    });
}

/// Smoothed stochastic gradient method. Uses L_mu = L + ||A||^2 / (c mu) in
/// the schedule and the closed-form step
///   z_{t+1} = z_t - (G(y_t, xi_t) + A^T v_mu(y_t)) / (gamma_t L_mu).
/// Trace rows report the original (non-smoothed) objective.
template <StochasticOracle Oracle>
SolverResult run_ssg(Oracle& oracle, const SmoothedRegularizer& sreg, double lipschitz, std::size_t n_iter,
                     RngStream& rng, std::size_t trace_every = 1) {
    if (oracle.dimension() != sreg.dimension())
        throw DimensionError("solver: oracle and regularizer dimensions differ");
    const double l_mu = lipschitz_mu(lipschitz, sreg);
    const Schedule schedule(n_iter, l_mu);
    auto step = [&](std::size_t t, const Vector& y, const Vector& z) {
        Vector g = oracle.sample(y, rng);
        accumulate_smoothed_gradient(sreg, y, g);
        const double inv_eta = 1.0 / (schedule.gamma(t) * l_mu);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = z[i] - g[i] * inv_eta;
        return g;
    };
    auto phi = [&](const Vector& x) { return oracle.objective(x) + evaluate(sreg.base(), x); };
    return detail::accelerated_loop(oracle.dimension(), n_iter, trace_every, step, phi);
}

/// run_ssg with mu = ||A|| / (N + 2).
template <StochasticOracle Oracle>
SolverResult run_ssg(Oracle& oracle, const Regularizer& reg, double lipschitz, std::size_t n_iter, RngStream& rng,
                     std::size_t trace_every = 1) {
    const auto sreg = SmoothedRegularizer::for_iterations(reg, n_iter);
    return run_ssg(oracle, sreg, lipschitz, n_iter, rng, trace_every);
}

}  // namespace csgd
