#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "csgd/core.hpp"

namespace csgd {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

enum class DatasetKind { Linear, Logistic };

inline double row_dot(std::span<const double> r, const Vector& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * b[j];
    return s;
}

struct Dataset {
    Matrix X;
    Vector y;
    DatasetKind kind = DatasetKind::Linear;

    Dataset(Matrix x, Vector labels, DatasetKind k) : X(std::move(x)), y(std::move(labels)), kind(k) {
        if (X.rows == 0 || X.cols == 0) throw ParameterError("Dataset: K and p must be >= 1");
        if (y.size() != X.rows) throw DimensionError("Dataset: y length must equal the number of rows of X");
        if (kind == DatasetKind::Logistic) {
            for (std::size_t i = 0; i < X.rows; ++i) {
                double sq = 0.0;
                for (double v : X.row(i)) sq += v * v;
                if (std::abs(std::sqrt(sq) - 1.0) > 1e-12)
                    throw ParameterError("Dataset: logistic row " + std::to_string(i + 1) + " is not unit norm");
                if (y[i] != 0.0 && y[i] != 1.0)
                    throw ParameterError("Dataset: logistic label " + std::to_string(i + 1) + " is not 0 or 1");
            }
        }
    }

    std::size_t K() const { return X.rows; }
    std::size_t p() const { return X.cols; }
};

/// beta_hat for the regression experiments: first p/2 entries 1, rest 0.
inline Vector linear_ground_truth(std::size_t p) {
    if (p == 0 || p % 2 != 0) throw ParameterError("linear ground truth needs an even p >= 2");
    Vector b(p, 0.0);
    for (std::size_t j = 0; j < p / 2; ++j) b[j] = 1.0;
    return b;
}

/// beta_hat for the logistic experiments: all ones.
inline Vector logistic_ground_truth(std::size_t p) {
    if (p == 0) throw ParameterError("logistic ground truth needs p >= 1");
    return Vector(p, 1.0);
}

/// x_ij ~ N(0,1), y_i = beta_hat^T x_i + eps_i / 10 with eps_i ~ N(0,1).
inline Dataset gen_linear_dataset(std::size_t K, std::size_t p, RngStream& rng) {
    if (K == 0) throw ParameterError("gen_linear_dataset: K must be >= 1");
    const Vector beta_hat = linear_ground_truth(p);
    Matrix X(K, p);
    Vector y(K);
    for (std::size_t i = 0; i < K; ++i) {
        auto r = X.row(i);
        for (double& v : r) v = rng.gaussian();
        y[i] = row_dot(r, beta_hat) + rng.gaussian() / 10.0;
    }
    return Dataset(std::move(X), std::move(y), DatasetKind::Linear);
}

/// Numerically stable logistic function.
inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Rows are normalized Gaussian draws; labels follow Pr(y = 1 | x) = sigmoid(beta^T x).
/// beta defaults to the all-ones ground truth.
inline Dataset gen_logistic_dataset(std::size_t K, std::size_t p, RngStream& rng, const Vector* beta = nullptr) {
    if (K == 0 || p == 0) throw ParameterError("gen_logistic_dataset: K and p must be >= 1");
    const Vector beta_hat = beta ? *beta : logistic_ground_truth(p);
    if (beta_hat.size() != p) throw DimensionError("gen_logistic_dataset: beta length mismatch");
    Matrix X(K, p);
    Vector y(K);
    for (std::size_t i = 0; i < K; ++i) {
        auto r = X.row(i);
        double sq = 0.0;
        while (sq == 0.0) {
            sq = 0.0;
            for (double& v : r) {
                v = rng.gaussian();
                sq += v * v;
            }
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : r) v *= inv;
        y[i] = rng.uniform() < sigmoid(row_dot(r, beta_hat)) ? 1.0 : 0.0;
    }
    return Dataset(std::move(X), std::move(y), DatasetKind::Logistic);
}

// ---------------------------------------------------------------------------
// Exact objectives and gradients
// ---------------------------------------------------------------------------

namespace detail {
inline void check_beta(const Dataset& d, const Vector& beta) {
    if (beta.size() != d.p())
        throw DimensionError("beta has length " + std::to_string(beta.size()) + ", expected " +
                             std::to_string(d.p()));
}
}  // namespace detail

/// (1/2K) ||X beta - y||^2
inline double exact_objective_linear(const Dataset& d, const Vector& beta) {
    detail::check_beta(d, beta);
    double s = 0.0;
    for (std::size_t i = 0; i < d.K(); ++i) {
        const double r = row_dot(d.X.row(i), beta) - d.y[i];
        s += r * r;
    }
    return s / (2.0 * static_cast<double>(d.K()));
}

/// (1/K) sum_i [ log(1 + e^{beta^T x_i}) - y_i beta^T x_i ]
inline double exact_objective_logistic(const Dataset& d, const Vector& beta) {
    detail::check_beta(d, beta);
    double s = 0.0;
    for (std::size_t i = 0; i < d.K(); ++i) {
        const double z = row_dot(d.X.row(i), beta);
        s += softplus(z) - d.y[i] * z;
    }
    return s / static_cast<double>(d.K());
}

/// (1/|S|) sum_{i in S} (x_i^T beta - y_i) x_i, written into out.
inline void minibatch_gradient_linear(const Dataset& d, const Vector& beta, std::span<const std::size_t> S,
                                      Vector& out) {
    if (S.empty()) throw ParameterError("minibatch gradient: S must be nonempty");
    detail::check_beta(d, beta);
    out.assign(d.p(), 0.0);
    for (std::size_t i : S) {
        if (i >= d.K()) throw ParameterError("minibatch gradient: index out of range");
        const auto r = d.X.row(i);
        const double res = row_dot(r, beta) - d.y[i];
        for (std::size_t j = 0; j < r.size(); ++j) out[j] += res * r[j];
    }
    const double inv = 1.0 / static_cast<double>(S.size());
    for (double& v : out) v *= inv;
}

inline Vector minibatch_gradient_linear(const Dataset& d, const Vector& beta, std::span<const std::size_t> S) {
    Vector out;
    minibatch_gradient_linear(d, beta, S, out);
    return out;
}

/// (1/|S|) sum_{i in S} (sigmoid(beta^T x_i) - y_i) x_i, written into out.
inline void minibatch_gradient_logistic(const Dataset& d, const Vector& beta, std::span<const std::size_t> S,
                                        Vector& out) {
    if (S.empty()) throw ParameterError("minibatch gradient: S must be nonempty");
    detail::check_beta(d, beta);
    out.assign(d.p(), 0.0);
    for (std::size_t i : S) {
        if (i >= d.K()) throw ParameterError("minibatch gradient: index out of range");
        const auto r = d.X.row(i);
        const double res = sigmoid(row_dot(r, beta)) - d.y[i];
        for (std::size_t j = 0; j < r.size(); ++j) out[j] += res * r[j];
    }
    const double inv = 1.0 / static_cast<double>(S.size());
    for (double& v : out) v *= inv;
}

inline Vector minibatch_gradient_logistic(const Dataset& d, const Vector& beta, std::span<const std::size_t> S) {
    Vector out;
    minibatch_gradient_logistic(d, beta, S, out);
    return out;
}

inline std::vector<std::size_t> full_batch(std::size_t K) {
    std::vector<std::size_t> s(K);
    for (std::size_t i = 0; i < K; ++i) s[i] = i;
    return s;
}

/// Uniform sampling with replacement.
inline void sample_minibatch(RngStream& rng, std::size_t K, std::size_t batch, std::vector<std::size_t>& out) {
    out.resize(batch);
    for (auto& i : out) i = rng.uniform_index(K);
}

// ---------------------------------------------------------------------------
// Lipschitz constants
// ---------------------------------------------------------------------------

enum class LipschitzConvention {
    Paper,   // lambda_max(X^T X)
    Scaled,  // lambda_max(X^T X) / K, the Lipschitz constant of (1/K) X^T (X beta - y)
};

struct PowerIterationOptions {
    double tol = 1e-8;
    std::size_t max_iter = 100000;
};

/// Largest eigenvalue of X^T X by power iteration.
/// When p is modest the p x p Gram matrix is formed once, so each iteration costs
/// O(p^2) instead of O(K p); otherwise X^T X is applied matrix-free.
inline double lambda_max_gram(const Matrix& X, const PowerIterationOptions& opts = {}) {
    const std::size_t p = X.cols;
    const bool dense = p <= 4096 && p <= X.rows;
    Vector gram;
    if (dense) {
        gram.assign(p * p, 0.0);
        for (std::size_t i = 0; i < X.rows; ++i) {
            const auto r = X.row(i);
            for (std::size_t j = 0; j < p; ++j) {
                const double rj = r[j];
                if (rj == 0.0) continue;
                double* gj = gram.data() + j * p;
                for (std::size_t k = j; k < p; ++k) gj[k] += rj * r[k];
            }
        }
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t k = 0; k < j; ++k) gram[j * p + k] = gram[k * p + j];
    }
    RngStream rng(0x5eed, 7);
    Vector v = sample_gaussian(rng, p);
    double nv = norm2(v);
    for (double& e : v) e /= nv;
    Vector xv(dense ? 0 : X.rows);
    Vector w(p);
    double estimate = 0.0;
    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        if (dense) {
            for (std::size_t j = 0; j < p; ++j) {
                const double* gj = gram.data() + j * p;
                double s = 0.0;
                for (std::size_t k = 0; k < p; ++k) s += gj[k] * v[k];
                w[j] = s;
            }
        } else {
            for (std::size_t i = 0; i < X.rows; ++i) xv[i] = row_dot(X.row(i), v);
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t i = 0; i < X.rows; ++i) {
                const auto r = X.row(i);
                for (std::size_t j = 0; j < p; ++j) w[j] += xv[i] * r[j];
            }
        }
        const double rayleigh = dot(v, w);
        const double nw = norm2(w);
        if (nw == 0.0) return 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) v[j] = w[j] / nw;
        if (it > 0 && std::abs(rayleigh - estimate) <= opts.tol * std::abs(rayleigh)) return rayleigh;
        estimate = rayleigh;
    }
    throw ConvergenceError("power iteration did not converge (last estimate " + std::to_string(estimate) + ")",
                           Vector{estimate});
}

inline double lipschitz_linear(const Dataset& d, LipschitzConvention convention = LipschitzConvention::Scaled,
                               const PowerIterationOptions& opts = {}) {
    const double lmax = lambda_max_gram(d.X, opts);
    return convention == LipschitzConvention::Paper ? lmax : lmax / static_cast<double>(d.K());
}

// ---------------------------------------------------------------------------
// Stochastic oracles
//
// Each oracle exposes
//   sample(x, rng)  -> unbiased estimate G(x, xi) of grad f(x)
//   gradient(x)     -> exact grad f(x)
//   objective(x)    -> exact f(x)
//   dimension()
// ---------------------------------------------------------------------------

/// G_1(beta, S) over a fixed dataset, S drawn uniformly with replacement.
class MinibatchLinearOracle {
public:
    MinibatchLinearOracle(std::shared_ptr<const Dataset> d, std::size_t batch) : data_(std::move(d)), batch_(batch) {
        if (batch_ == 0) throw ParameterError("batch size must be >= 1");
    }

    std::size_t dimension() const { return data_->p(); }
    const Dataset& dataset() const { return *data_; }

    Vector sample(const Vector& x, RngStream& rng) {
        sample_minibatch(rng, data_->K(), batch_, idx_);
        Vector g;
        minibatch_gradient_linear(*data_, x, idx_, g);
        return g;
    }

    Vector gradient(const Vector& x) const { return minibatch_gradient_linear(*data_, x, full_batch(data_->K())); }
    double objective(const Vector& x) const { return exact_objective_linear(*data_, x); }

private:
    std::shared_ptr<const Dataset> data_;
    std::size_t batch_;
    std::vector<std::size_t> idx_;
};

class MinibatchLogisticOracle {
public:
    MinibatchLogisticOracle(std::shared_ptr<const Dataset> d, std::size_t batch)
        : data_(std::move(d)), batch_(batch) {
        if (batch_ == 0) throw ParameterError("batch size must be >= 1");
        if (data_->kind != DatasetKind::Logistic) throw ParameterError("logistic oracle needs a logistic dataset");
    }

    std::size_t dimension() const { return data_->p(); }
    const Dataset& dataset() const { return *data_; }

    Vector sample(const Vector& x, RngStream& rng) {
        sample_minibatch(rng, data_->K(), batch_, idx_);
        Vector g;
        minibatch_gradient_logistic(*data_, x, idx_, g);
        return g;
    }

    Vector gradient(const Vector& x) const {
        return minibatch_gradient_logistic(*data_, x, full_batch(data_->K()));
    }
    double objective(const Vector& x) const { return exact_objective_logistic(*data_, x); }

private:
    std::shared_ptr<const Dataset> data_;
    std::size_t batch_;
    std::vector<std::size_t> idx_;
};

/// Infinite-data regression: x ~ N(0, I), y = x^T beta_hat + eps, eps ~ N(0,1).
/// f(beta) = 0.5 (beta^T beta - 2 beta^T beta_hat + beta_hat^T beta_hat + 1)
/// and grad f(beta) = beta - beta_hat.
class ContinuousLinearOracle {
public:
    ContinuousLinearOracle(Vector beta_hat, std::size_t batch) : beta_hat_(std::move(beta_hat)), batch_(batch) {
        if (batch_ == 0) throw ParameterError("batch size must be >= 1");
        if (beta_hat_.empty()) throw ParameterError("continuous oracle: beta_hat must be nonempty");
        xbuf_.resize(beta_hat_.size());
    }

    std::size_t dimension() const { return beta_hat_.size(); }
    const Vector& beta_hat() const { return beta_hat_; }

    /// One observation (x, y) from the model: x is written to `x_out`, y is returned.
    double draw(RngStream& rng, Vector& x_out) const {
        x_out.resize(beta_hat_.size());
        double xh = 0.0;
        for (std::size_t j = 0; j < x_out.size(); ++j) {
            x_out[j] = rng.gaussian();
            xh += x_out[j] * beta_hat_[j];
        }
        return xh + rng.gaussian();
    }

    Vector sample(const Vector& x, RngStream& rng) {
        if (x.size() != beta_hat_.size()) throw DimensionError("continuous oracle: length mismatch");
        Vector g(x.size(), 0.0);
        for (std::size_t s = 0; s < batch_; ++s) {
            const double y = draw(rng, xbuf_);
            const double res = dot(xbuf_, x) - y;
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += res * xbuf_[j];
        }
        const double inv = 1.0 / static_cast<double>(batch_);
        for (double& v : g) v *= inv;
        return g;
    }

    Vector gradient(const Vector& x) const { return subtract(x, beta_hat_); }

    double objective(const Vector& x) const {
        return 0.5 * (dot(x, x) - 2.0 * dot(x, beta_hat_) + dot(beta_hat_, beta_hat_) + 1.0);
    }

private:
    Vector beta_hat_;
    std::size_t batch_;
    Vector xbuf_;
};

/// f(x) = 0.5 ||x - a||^2 with G(x, xi) = x - a + noise, noise ~ N(0, (sigma^2 / p) I),
/// so E ||G - grad f||^2 = sigma^2 exactly. L = 1.
class QuadraticOracle {
public:
    QuadraticOracle(Vector target, double noise_sigma_sq = 0.0)
        : target_(std::move(target)), noise_sd_(0.0) {
        if (target_.empty()) throw ParameterError("quadratic oracle: target must be nonempty");
        if (!(noise_sigma_sq >= 0.0)) throw ParameterError("quadratic oracle: noise variance must be >= 0");
        noise_sd_ = std::sqrt(noise_sigma_sq / static_cast<double>(target_.size()));
    }

    std::size_t dimension() const { return target_.size(); }
    const Vector& target() const { return target_; }

    Vector sample(const Vector& x, RngStream& rng) {
        Vector g = gradient(x);
        if (noise_sd_ > 0.0)
            for (double& v : g) v += noise_sd_ * rng.gaussian();
        return g;
    }

    Vector gradient(const Vector& x) const { return subtract(x, target_); }
    double objective(const Vector& x) const { return 0.5 * squared_norm(subtract(x, target_)); }

private:
    Vector target_;
    double noise_sd_;
};

/// Wraps an oracle so that sample() returns the exact gradient (sigma = 0).
template <class Inner>
class ExactOracle {
public:
    explicit ExactOracle(Inner inner) : inner_(std::move(inner)) {}

    std::size_t dimension() const { return inner_.dimension(); }
    Vector sample(const Vector& x, RngStream&) { return inner_.gradient(x); }
    Vector gradient(const Vector& x) const { return inner_.gradient(x); }
    double objective(const Vector& x) const { return inner_.objective(x); }

private:
    Inner inner_;
};

// ---------------------------------------------------------------------------
// Dataset CSV: header "y,x1,...,xp", one row per sample.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_dataset_csv(std::ostream& out, const Dataset& d) {
    out << 'y';
    for (std::size_t j = 0; j < d.p(); ++j) out << ",x" << j + 1;
    out << '\n';
    for (std::size_t i = 0; i < d.K(); ++i) {
        out << format_double(d.y[i]);
        for (double v : d.X.row(i)) out << ',' << format_double(v);
        out << '\n';
    }
}

/// Validates the header, the column count of every row, and (for logistic
/// data) the unit-norm rows and {0,1} labels.
inline Dataset read_dataset_csv(std::istream& in, DatasetKind kind) {
    std::string line;
    if (!std::getline(in, line)) throw ParameterError("dataset csv: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) header.push_back(tok);
    }
    if (header.size() < 2 || header[0] != "y") throw ParameterError("dataset csv: header must be y,x1,...,xp");
    for (std::size_t j = 1; j < header.size(); ++j)
        if (header[j] != "x" + std::to_string(j)) throw ParameterError("dataset csv: bad header column " + header[j]);
    const std::size_t p = header.size() - 1;

    std::vector<double> xs;
    Vector ys;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::size_t col = 0;
        while (std::getline(ss, tok, ',')) {
            double v = 0.0;
            try {
                v = std::stod(tok);
            } catch (const std::exception&) {
                throw ParameterError("dataset csv line " + std::to_string(line_no) + ": bad number '" + tok + "'");
            }
            if (col == 0)
                ys.push_back(v);
            else
                xs.push_back(v);
            ++col;
        }
        if (col != p + 1)
            throw ParameterError("dataset csv line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(p + 1) + " columns");
    }
    Matrix X(ys.size(), p);
    X.data = std::move(xs);
    return Dataset(std::move(X), std::move(ys), kind);
}

}  // namespace csgd
