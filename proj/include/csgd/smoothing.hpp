#pragma once

#include <cmath>
#include <cstddef>

#include "csgd/core.hpp"
#include "csgd/regularizers.hpp"

namespace csgd {

/// Floor applied to mu when ||A|| = 0 and smoothing has nothing to smooth.
inline constexpr double kInertMuFloor = 1e-12;

struct MuSchedule {
    double mu = 0.0;
    bool inert = false;
};

/// mu = ||A|| / (N + 2); ||A|| = 0 gives the floor and marks smoothing inert.
inline MuSchedule mu_schedule(double a_norm, std::size_t n_iter) {
    if (!(a_norm > 0.0)) return {kInertMuFloor, true};
    return {a_norm / (static_cast<double>(n_iter) + 2.0), false};
}

/// h_mu(x) = max_{v in Q} { v^T A x - mu d(v) } with d(v) = 0.5 ||v||^2 and Q
/// the product of unit balls, one per group (the l1 case uses singleton
/// groups, so Q is the unit box).
class SmoothedRegularizer {
public:
    SmoothedRegularizer(Regularizer base, double mu)
        : base_(std::move(base)), map_(base_), mu_(mu) {
        if (!(mu_ > 0.0) || !std::isfinite(mu_))
            throw ParameterError("smoothing: mu must be positive and finite");
        a_norm_ = operator_norm(map_);
        inert_ = !(a_norm_ > 0.0);
        m_ = 0.5 * static_cast<double>(base_.num_blocks());
    }

    /// Uses mu = ||A|| / (N + 2).
    static SmoothedRegularizer for_iterations(Regularizer base, std::size_t n_iter) {
        const double a = operator_norm(base);
        return SmoothedRegularizer(std::move(base), mu_schedule(a, n_iter).mu);
    }

    const Regularizer& base() const { return base_; }
    const LinearMapA& linear_map() const { return map_; }
    double mu() const { return mu_; }
    double a_norm() const { return a_norm_; }
    /// max_{v in Q} d(v): p/2 for l1, |G|/2 for the group norm.
    double M() const { return m_; }
    /// Strong convexity modulus of d.
    double c() const { return 1.0; }
    bool inert() const { return inert_; }
    std::size_t dimension() const { return base_.p; }

private:
    Regularizer base_;
    LinearMapA map_;
    double mu_;
    double a_norm_ = 0.0;
    double m_ = 0.0;
    bool inert_ = false;
};

namespace detail {

// Scale s_g such that v_g = s_g * beta_g, i.e. the projection of
// (lambda w_g / mu) beta_g onto the unit ball.
inline double dual_block_scale(double coef, const std::vector<std::size_t>& idx, const Vector& x, double mu) {
    double sq = 0.0;
    for (std::size_t j : idx) sq += x[j] * x[j];
    const double r = coef * std::sqrt(sq) / mu;
    return r > 1.0 ? coef / (mu * r) : coef / mu;
}

inline void check_dim(const SmoothedRegularizer& s, const Vector& x) {
    if (x.size() != s.dimension()) throw DimensionError("smoothing: vector length does not match regularizer");
}

}  // namespace detail

inline DualVector maximizer(const SmoothedRegularizer& s, const Vector& x) {
    detail::check_dim(s, x);
    const auto& a = s.linear_map();
    const auto& st = *a.structure;
    DualVector v{a.structure, std::vector<double>(st.total_size(), 0.0)};
    for (std::size_t g = 0; g < st.size(); ++g) {
        const auto& idx = st.group(g);
        const double scale = detail::dual_block_scale(a.lambda * st.weight(g), idx, x, s.mu());
        auto blk = v.block(g);
        for (std::size_t k = 0; k < idx.size(); ++k) blk[k] = scale * x[idx[k]];
    }
    return v;
}

inline double smoothed_value(const SmoothedRegularizer& s, const Vector& x) {
    const DualVector v = maximizer(s, x);
    const DualVector ax = s.linear_map().apply(x);
    double inner = 0.0;
    double vsq = 0.0;
    for (std::size_t r = 0; r < v.values.size(); ++r) {
        inner += v.values[r] * ax.values[r];
        vsq += v.values[r] * v.values[r];
    }
    return inner - 0.5 * s.mu() * vsq;
}

/// out += A^T v_mu(x), without forming the dual vector.
inline void accumulate_smoothed_gradient(const SmoothedRegularizer& s, const Vector& x, Vector& out) {
    if (s.inert()) return;
    const auto& a = s.linear_map();
    const auto& st = *a.structure;
    for (std::size_t g = 0; g < st.size(); ++g) {
        const auto& idx = st.group(g);
        const double coef = a.lambda * st.weight(g);
        const double c = coef * detail::dual_block_scale(coef, idx, x, s.mu());
        for (std::size_t j : idx) out[j] += c * x[j];
    }
}

inline Vector smoothed_gradient(const SmoothedRegularizer& s, const Vector& x) {
    detail::check_dim(s, x);
    Vector out(x.size(), 0.0);
    accumulate_smoothed_gradient(s, x, out);
    return out;
}

/// L_mu = L + ||A||^2 / (c mu); equals L when smoothing is inert.
inline double lipschitz_mu(double lipschitz, const SmoothedRegularizer& s) {
    if (!(lipschitz >= 0.0)) throw ParameterError("lipschitz_mu: L must be >= 0");
    if (s.inert()) return lipschitz;
    return lipschitz + s.a_norm() * s.a_norm() / (s.c() * s.mu());
}

}  // namespace csgd
