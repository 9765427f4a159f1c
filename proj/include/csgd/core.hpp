#pragma once

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace csgd {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ParameterError : Error {
    using Error::Error;
};

struct CapacityError : Error {
    using Error::Error;
};

/// Raised by iterative routines that hit their iteration cap. Carries the
/// last iterate so callers can inspect how far the routine got.
struct ConvergenceError : Error {
    ConvergenceError(const std::string& what, Vector last)
        : Error(what), last_iterate(std::move(last)) {}
    Vector last_iterate;
};

/// Raised by a solver when an iterate leaves the finite working range.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, std::size_t t)
        : Error(what), iteration(t) {}
    std::size_t iteration;
};

// ---------------------------------------------------------------------------
// Dense vector arithmetic
// ---------------------------------------------------------------------------

namespace detail {
inline void require_same_length(const Vector& a, const Vector& b, const char* op) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(op) + ": length mismatch (" +
                             std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()) + ")");
    }
}
}  // namespace detail

inline double dot(const Vector& a, const Vector& b) {
    detail::require_same_length(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(const Vector& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

inline double norm2(const Vector& a) { return std::sqrt(squared_norm(a)); }

/// alpha * x + y
inline Vector axpy(double alpha, const Vector& x, const Vector& y) {
    detail::require_same_length(x, y, "axpy");
    Vector out(y);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * x[i];
    return out;
}

/// (1 - theta) * a + theta * b, written into out.
inline void convex_combination(double theta, const Vector& a, const Vector& b, Vector& out) {
    detail::require_same_length(a, b, "convex_combination");
    out.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - theta) * a[i] + theta * b[i];
}

inline Vector subtract(const Vector& a, const Vector& b) { return axpy(-1.0, b, a); }

inline bool all_finite(const Vector& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double max_abs(const Vector& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Counter-based generator: the n-th output of a stream is a pure function of
/// (key, n), where key is derived from (seed, stream id). Outputs are the
/// SplitMix64 finalizer applied to key + n * golden gamma, so substreams are
/// cheap to derive and replay is bitwise exact on every platform.
///
/// Normals use the Box-Muller transform on pairs of uniforms:
///   u1 in (0, 1], u2 in [0, 1),  r = sqrt(-2 ln u1),
///   z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2).
/// z0 is returned first and z1 is cached for the next call.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
        : seed_(seed), stream_id_(stream_id), key_(mix(seed ^ mix(stream_id + kGamma))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    /// Independent stream derived from this stream's seed; does not consume
    /// any draws from *this.
    RngStream substream(std::uint64_t id) const {
        return RngStream(mix(seed_ + kGamma * (stream_id_ + 1)), id);
    }

    std::uint64_t next_u64() {
        ++counter_;
        return mix(key_ + counter_ * kGamma);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform index in [0, n), unbiased (rejection on the top partial range).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw ParameterError("uniform_index: n must be positive");
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return static_cast<std::size_t>(r % bound);
    }

    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(angle);
        has_cached_ = true;
        return r * std::cos(angle);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

inline Vector sample_gaussian(RngStream& rng, std::size_t n) {
    if (n == 0) throw ParameterError("sample_gaussian: n must be >= 1");
    Vector out(n);
    for (double& v : out) v = rng.gaussian();
    return out;
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct TraceRecord {
    std::size_t iteration = 0;
    double elapsed_seconds = 0.0;
    double objective = 0.0;
};

using Trace = std::vector<TraceRecord>;

}  // namespace csgd
