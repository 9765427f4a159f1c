#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "csgd/core.hpp"

namespace csgd {

// ---------------------------------------------------------------------------
// Group structure
// ---------------------------------------------------------------------------

/// A family of index groups over {0, ..., p-1} with positive weights.
/// Indices are 0-based in memory; the text format is 1-based.
class GroupStructure {
public:
    GroupStructure(std::size_t p, std::vector<std::vector<std::size_t>> groups,
                   std::vector<double> weights)
        : p_(p), groups_(std::move(groups)), weights_(std::move(weights)) {
        if (p_ == 0) throw ParameterError("GroupStructure: p must be positive");
        if (groups_.size() != weights_.size())
            throw ParameterError("GroupStructure: one weight per group required");
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            auto& idx = groups_[g];
            if (idx.empty()) throw ParameterError("GroupStructure: empty group " + std::to_string(g + 1));
            std::sort(idx.begin(), idx.end());
            if (std::adjacent_find(idx.begin(), idx.end()) != idx.end())
                throw ParameterError("GroupStructure: repeated index in group " + std::to_string(g + 1));
            if (idx.back() >= p_)
                throw ParameterError("GroupStructure: index " + std::to_string(idx.back() + 1) +
                                     " outside [1, " + std::to_string(p_) + "]");
            if (!(weights_[g] > 0.0) || !std::isfinite(weights_[g]))
                throw ParameterError("GroupStructure: weight of group " + std::to_string(g + 1) +
                                     " must be positive and finite");
        }
        offsets_.resize(groups_.size() + 1, 0);
        for (std::size_t g = 0; g < groups_.size(); ++g) offsets_[g + 1] = offsets_[g] + groups_[g].size();

        visit_order_.resize(groups_.size());
        std::iota(visit_order_.begin(), visit_order_.end(), std::size_t{0});
        std::stable_sort(visit_order_.begin(), visit_order_.end(), [&](std::size_t a, std::size_t b) {
            if (groups_[a].size() != groups_[b].size()) return groups_[a].size() < groups_[b].size();
            return groups_[a].front() < groups_[b].front();
        });
        laminar_ = check_laminar();

        weight_sq_per_coordinate_.assign(p_, 0.0);
        for (std::size_t g = 0; g < groups_.size(); ++g)
            for (std::size_t j : groups_[g]) weight_sq_per_coordinate_[j] += weights_[g] * weights_[g];
    }

    /// Singleton groups {j} with unit weight: the l1 norm as a group norm.
    static GroupStructure singletons(std::size_t p) {
        std::vector<std::vector<std::size_t>> groups(p);
        for (std::size_t j = 0; j < p; ++j) groups[j] = {j};
        return GroupStructure(p, std::move(groups), std::vector<double>(p, 1.0));
    }

    std::size_t dimension() const { return p_; }
    std::size_t size() const { return groups_.size(); }
    const std::vector<std::size_t>& group(std::size_t g) const { return groups_[g]; }
    double weight(std::size_t g) const { return weights_[g]; }
    bool is_laminar() const { return laminar_; }

    /// Sum of group sizes, i.e. the number of rows of the induced map A.
    std::size_t total_size() const { return offsets_.back(); }
    std::size_t offset(std::size_t g) const { return offsets_[g]; }

    /// Groups sorted by non-decreasing size, ties by smallest first index.
    const std::vector<std::size_t>& visit_order() const { return visit_order_; }

    /// sum_{g containing j} w_g^2
    double weight_sq_at(std::size_t j) const { return weight_sq_per_coordinate_[j]; }

private:
    // Largest groups first; each group must lie entirely inside the most
    // recent group that claimed its indices (or in none of them).
    bool check_laminar() const {
        std::vector<std::size_t> order(visit_order_.rbegin(), visit_order_.rend());
        constexpr std::size_t kNone = static_cast<std::size_t>(-1);
        std::vector<std::size_t> owner(p_, kNone);
        for (std::size_t g : order) {
            const std::size_t o = owner[groups_[g].front()];
            for (std::size_t j : groups_[g])
                if (owner[j] != o) return false;
            for (std::size_t j : groups_[g]) owner[j] = g;
        }
        return true;
    }

    std::size_t p_;
    std::vector<std::vector<std::size_t>> groups_;
    std::vector<double> weights_;
    std::vector<std::size_t> offsets_;
    std::vector<std::size_t> visit_order_;
    std::vector<double> weight_sq_per_coordinate_;
    bool laminar_ = false;
};

/// Dyadic tree over p = 2^n coordinates: g_{i,j} = {(j-1)2^i + 1, ..., j 2^i}
/// for i = 0..n, j = 1..2^{n-i}, with w_g = sqrt(|g|). Groups are listed
/// level by level, leaves first.
inline GroupStructure build_hierarchical(int n) {
    if (n < 0) throw ParameterError("build_hierarchical: n must be >= 0");
    // p (n + 1) stored indices; cap at 2^28.
    if (n > 23) throw CapacityError("build_hierarchical: n = " + std::to_string(n) + " exceeds capacity");
    const std::size_t p = std::size_t{1} << n;
    std::vector<std::vector<std::size_t>> groups;
    std::vector<double> weights;
    groups.reserve(2 * p - 1);
    for (int i = 0; i <= n; ++i) {
        const std::size_t width = std::size_t{1} << i;
        for (std::size_t j = 0; j < (p >> i); ++j) {
            std::vector<std::size_t> g(width);
            std::iota(g.begin(), g.end(), j * width);
            groups.push_back(std::move(g));
            weights.push_back(std::sqrt(static_cast<double>(width)));
        }
    }
    return GroupStructure(p, std::move(groups), std::move(weights));
}

// Text format: one group per line, "w_g: i1,i2,...,ik" with 1-based indices.
// Blank lines and lines starting with '#' are ignored.

inline GroupStructure parse_groups(std::istream& in, std::size_t p) {
    std::vector<std::vector<std::size_t>> groups;
    std::vector<double> weights;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos)
            throw ParameterError("groups line " + std::to_string(line_no) + ": expected 'w: i1,i2,...'");
        double w = 0.0;
        try {
            w = std::stod(line.substr(0, colon));
        } catch (const std::exception&) {
            throw ParameterError("groups line " + std::to_string(line_no) + ": bad weight");
        }
        std::vector<std::size_t> idx;
        std::stringstream rest(line.substr(colon + 1));
        std::string tok;
        while (std::getline(rest, tok, ',')) {
            const auto b = tok.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            long long v = 0;
            try {
                v = std::stoll(tok);
            } catch (const std::exception&) {
                throw ParameterError("groups line " + std::to_string(line_no) + ": bad index '" + tok + "'");
            }
            if (v < 1)
                throw ParameterError("groups line " + std::to_string(line_no) + ": indices are 1-based");
            idx.push_back(static_cast<std::size_t>(v - 1));
        }
        groups.push_back(std::move(idx));
        weights.push_back(w);
    }
    return GroupStructure(p, std::move(groups), std::move(weights));
}

inline GroupStructure load_groups(const std::string& path, std::size_t p) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open groups file '" + path + "'");
    return parse_groups(in, p);
}

inline void write_groups(std::ostream& out, const GroupStructure& s) {
    out.precision(17);
    for (std::size_t g = 0; g < s.size(); ++g) {
        out << s.weight(g) << ':';
        const auto& idx = s.group(g);
        for (std::size_t k = 0; k < idx.size(); ++k) out << (k ? "," : " ") << idx[k] + 1;
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Regularizer
// ---------------------------------------------------------------------------

enum class RegularizerKind { L1, GroupNorm };

/// h(beta) = lambda * Omega(beta), with Omega either ||beta||_1 or
/// sum_g w_g ||beta_g||.
struct Regularizer {
    RegularizerKind kind = RegularizerKind::L1;
    double lambda = 0.0;
    std::size_t p = 0;
    std::shared_ptr<const GroupStructure> structure;  // GroupNorm only

    static Regularizer l1(double lambda, std::size_t p) {
        check_lambda(lambda);
        return Regularizer{RegularizerKind::L1, lambda, p, nullptr};
    }

    static Regularizer group_norm(double lambda, GroupStructure s) {
        check_lambda(lambda);
        const std::size_t p = s.dimension();
        return Regularizer{RegularizerKind::GroupNorm, lambda, p,
                           std::make_shared<const GroupStructure>(std::move(s))};
    }

    std::size_t dimension() const { return p; }

    /// Number of dual blocks: p for l1, |G| for the group norm.
    std::size_t num_blocks() const { return kind == RegularizerKind::L1 ? p : structure->size(); }

private:
    static void check_lambda(double lambda) {
        if (!(lambda >= 0.0) || !std::isfinite(lambda))
            throw ParameterError("regularizer: lambda must be finite and >= 0");
    }
};

inline double evaluate(const Regularizer& reg, const Vector& beta) {
    if (beta.size() != reg.p)
        throw DimensionError("evaluate: beta has length " + std::to_string(beta.size()) +
                             ", expected " + std::to_string(reg.p));
    double omega = 0.0;
    if (reg.kind == RegularizerKind::L1) {
        for (double v : beta) omega += std::abs(v);
    } else {
        const auto& s = *reg.structure;
        for (std::size_t g = 0; g < s.size(); ++g) {
            double sq = 0.0;
            for (std::size_t j : s.group(g)) sq += beta[j] * beta[j];
            omega += s.weight(g) * std::sqrt(sq);
        }
    }
    return reg.lambda * omega;
}

namespace detail {

inline void soft_threshold_inplace(Vector& u, double level) {
    for (double& v : u) {
        const double a = std::abs(v) - level;
        v = a > 0.0 ? std::copysign(a, v) : 0.0;
    }
}

// Shrinks u_g toward zero by `level` in Euclidean norm. A zero block stays zero.
inline void group_soft_threshold_inplace(Vector& u, const std::vector<std::size_t>& idx, double level) {
    double sq = 0.0;
    for (std::size_t j : idx) sq += u[j] * u[j];
    const double nrm = std::sqrt(sq);
    const double scale = nrm > level ? 1.0 - level / nrm : 0.0;
    for (std::size_t j : idx) u[j] *= scale;
}

}  // namespace detail

struct ProxOptions {
    double tol = 1e-10;
    std::size_t max_sweeps = 0;  // 0: 10 * |G| * p
};

/// Dual block-coordinate ascent for min_x 0.5 ||x - u||^2 + sum_g tau_g ||x_g||
/// with arbitrary overlap. Dual blocks xi_g live in balls of radius tau_g and
/// x = u - sum_g xi_g. Stops when a full sweep moves x by less than tol in
/// max-norm.
inline Vector prox_group_dual_ascent(const GroupStructure& s, const Vector& u, double lambda, double eta,
                                     const ProxOptions& opts = {}) {
    const std::size_t max_sweeps = opts.max_sweeps ? opts.max_sweeps : 10 * s.size() * s.dimension();
    Vector x(u);
    std::vector<double> xi(s.total_size(), 0.0);
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double moved = 0.0;
        for (std::size_t g : s.visit_order()) {
            const auto& idx = s.group(g);
            const double tau = lambda * s.weight(g) / eta;
            double* blk = xi.data() + s.offset(g);
            double sq = 0.0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double r = x[idx[k]] + blk[k];
                sq += r * r;
            }
            const double nrm = std::sqrt(sq);
            const double shrink = nrm > tau ? tau / nrm : 1.0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double r = x[idx[k]] + blk[k];
                const double nb = shrink * r;
                const double nx = r - nb;
                moved = std::max(moved, std::abs(nx - x[idx[k]]));
                x[idx[k]] = nx;
                blk[k] = nb;
            }
        }
        if (moved < opts.tol) return x;
    }
    throw ConvergenceError("prox: dual block-coordinate ascent did not converge in " +
                               std::to_string(max_sweeps) + " sweeps",
                           std::move(x));
}

/// argmin_x { <x, g> + (eta/2) ||x - z||^2 + h(x) }.
///
/// l1: soft threshold of u = z - g/eta at lambda/eta. Laminar groups: one
/// pass of group soft-thresholding over visit_order() (children before
/// parents), which is exact for tree-structured families. Otherwise dual
/// block-coordinate ascent.
inline Vector prox(const Regularizer& reg, const Vector& g, const Vector& z, double eta,
                   const ProxOptions& opts = {}) {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ParameterError("prox: eta must be positive and finite");
    detail::require_same_length(g, z, "prox");
    if (z.size() != reg.p) throw DimensionError("prox: vector length does not match regularizer");

    Vector u(z.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = z[i] - g[i] / eta;
    if (reg.lambda == 0.0) return u;

    if (reg.kind == RegularizerKind::L1) {
        detail::soft_threshold_inplace(u, reg.lambda / eta);
        return u;
    }
    const auto& s = *reg.structure;
    if (!s.is_laminar()) return prox_group_dual_ascent(s, u, reg.lambda, eta, opts);
    for (std::size_t grp : s.visit_order())
        detail::group_soft_threshold_inplace(u, s.group(grp), reg.lambda * s.weight(grp) / eta);
    return u;
}

// ---------------------------------------------------------------------------
// Induced linear map A: h(beta) = max_{alpha in Q} alpha^T A beta
// ---------------------------------------------------------------------------

/// Group-blocked vector indexed by (group, position-in-group). Block g has
/// |g| entries (one per row (i, g) of A).
struct DualVector {
    std::shared_ptr<const GroupStructure> structure;
    std::vector<double> values;

    std::span<double> block(std::size_t g) {
        return {values.data() + structure->offset(g), structure->group(g).size()};
    }
    std::span<const double> block(std::size_t g) const {
        return {values.data() + structure->offset(g), structure->group(g).size()};
    }
};

/// A_{(i,g),j} = lambda * w_g if i == j, else 0. Never materialized; apply and
/// adjoint work from the group structure.
struct LinearMapA {
    double lambda = 0.0;
    std::shared_ptr<const GroupStructure> structure;

    explicit LinearMapA(const Regularizer& reg)
        : lambda(reg.lambda),
          structure(reg.kind == RegularizerKind::L1
                        ? std::make_shared<const GroupStructure>(GroupStructure::singletons(reg.p))
                        : reg.structure) {}

    std::size_t rows() const { return structure->total_size(); }
    std::size_t cols() const { return structure->dimension(); }

    DualVector apply(const Vector& beta) const {
        if (beta.size() != cols()) throw DimensionError("LinearMapA::apply: length mismatch");
        DualVector out{structure, std::vector<double>(rows())};
        for (std::size_t g = 0; g < structure->size(); ++g) {
            const double c = lambda * structure->weight(g);
            auto blk = out.block(g);
            const auto& idx = structure->group(g);
            for (std::size_t k = 0; k < idx.size(); ++k) blk[k] = c * beta[idx[k]];
        }
        return out;
    }

    Vector adjoint(const DualVector& v) const {
        if (v.values.size() != rows()) throw DimensionError("LinearMapA::adjoint: length mismatch");
        Vector out(cols(), 0.0);
        for (std::size_t g = 0; g < structure->size(); ++g) {
            const double c = lambda * structure->weight(g);
            const auto blk = v.block(g);
            const auto& idx = structure->group(g);
            for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] += c * blk[k];
        }
        return out;
    }
};

/// Spectral norm of A. A^T A is diagonal with entries lambda^2 sum_{g∋j} w_g^2,
/// so ||A|| = lambda * max_j sqrt(sum_{g∋j} w_g^2).
inline double operator_norm(const LinearMapA& a) {
    double m = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, a.structure->weight_sq_at(j));
    return a.lambda * std::sqrt(m);
}

inline double operator_norm(const Regularizer& reg) {
    if (reg.kind == RegularizerKind::L1) return reg.lambda;
    return operator_norm(LinearMapA(reg));
}

}  // namespace csgd
