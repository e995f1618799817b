#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jtcn {

// Operation called outside its contract (bad shapes, empty input, unknown name).
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Unusable input data: malformed files, unknown ids, inconsistent artifacts.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values or corrupt numeric state.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline void warn(const std::string& msg) {
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 state advance; the raw u64 sequence is
// integer-only and therefore identical on every platform for a given seed.
// ---------------------------------------------------------------------------
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0, 1), 53 usable bits
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // Box-Muller; consumes exactly two draws per call.
    double next_normal() {
        double u1 = 1.0 - next_uniform();  // (0, 1]
        double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Unbiased integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw ContractViolation("next_below: n must be positive");
        std::uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t x = next_u64();
            if (x >= threshold) return x % n;
        }
    }

    template <class T>
    void shuffle(std::vector<T>& xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(xs[i - 1], xs[j]);
        }
    }

    // Derive an independent sub-seed; used to split one run seed into
    // per-purpose streams (init, splits, epoch shuffles, ...).
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Dense row-major matrix of 64-bit reals. Vectors are stored as n x 1.
// ---------------------------------------------------------------------------
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }

    std::size_t size() const { return rows * cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
};

inline std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

inline bool all_finite(std::span<const double> xs) {
    for (double x : xs)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double norm2(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

// y = W x
inline std::vector<double> matvec(const Tensor2& w, std::span<const double> x) {
    if (x.size() != w.cols)
        throw ContractViolation("matvec: shape mismatch " + shape_str(w.rows, w.cols) +
                                " vs vector[" + std::to_string(x.size()) + "]");
    std::vector<double> y(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) y[r] = dot({w.row(r), w.cols}, x);
    return y;
}

// y = W^T x
inline std::vector<double> matvec_t(const Tensor2& w, std::span<const double> x) {
    if (x.size() != w.rows)
        throw ContractViolation("matvec_t: shape mismatch " + shape_str(w.rows, w.cols) +
                                " vs vector[" + std::to_string(x.size()) + "]");
    std::vector<double> y(w.cols, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) axpy(x[r], {w.row(r), w.cols}, y);
    return y;
}

// A += a b^T
inline void add_outer(Tensor2& a, std::span<const double> lhs, std::span<const double> rhs) {
    if (lhs.size() != a.rows || rhs.size() != a.cols)
        throw ContractViolation("add_outer: shape mismatch " + shape_str(a.rows, a.cols) +
                                " vs " + shape_str(lhs.size(), rhs.size()));
    for (std::size_t r = 0; r < a.rows; ++r) axpy(lhs[r], rhs, {a.row(r), a.cols});
}

// ---------------------------------------------------------------------------
// Elementary ops with paired backward rules
// ---------------------------------------------------------------------------

// W x + b
inline std::vector<double> affine(std::span<const double> x, const Tensor2& w,
                                  std::span<const double> b) {
    if (x.size() != w.cols || b.size() != w.rows)
        throw ContractViolation("affine: shape mismatch W=" + shape_str(w.rows, w.cols) +
                                " x[" + std::to_string(x.size()) + "] b[" +
                                std::to_string(b.size()) + "]");
    std::vector<double> y = matvec(w, x);
    for (std::size_t r = 0; r < w.rows; ++r) y[r] += b[r];
    return y;
}

struct AffineGrads {
    std::vector<double> dx;
    Tensor2 dw;
    std::vector<double> db;
};

inline AffineGrads affine_backward(std::span<const double> dy, std::span<const double> x,
                                   const Tensor2& w) {
    if (dy.size() != w.rows || x.size() != w.cols)
        throw ContractViolation("affine_backward: shape mismatch W=" + shape_str(w.rows, w.cols) +
                                " dy[" + std::to_string(dy.size()) + "] x[" +
                                std::to_string(x.size()) + "]");
    AffineGrads g;
    g.dx = matvec_t(w, dy);
    g.dw = Tensor2(w.rows, w.cols);
    add_outer(g.dw, dy, x);
    g.db.assign(dy.begin(), dy.end());
    return g;
}

inline std::vector<double> relu(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

// Subgradient at 0 is 0.
inline std::vector<double> relu_backward(std::span<const double> dy, std::span<const double> x) {
    std::vector<double> dx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    return dx;
}

inline std::vector<double> stable_softmax(std::span<const double> v) {
    if (v.empty()) throw ContractViolation("stable_softmax: empty input");
    double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> y(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        y[i] = std::exp(v[i] - mx);
        sum += y[i];
    }
    for (double& x : y) x /= sum;
    return y;
}

// Given dL/dp for p = softmax(a), returns dL/da.
inline std::vector<double> softmax_backward(std::span<const double> p,
                                            std::span<const double> dp) {
    double acc = dot(p, dp);
    std::vector<double> da(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) da[i] = p[i] * (dp[i] - acc);
    return da;
}

}  // namespace jtcn
