#pragma once

// Dense linear algebra kernel and seeded sampling shared by the whole bench.
//
// Everything here is deterministic: identical inputs (including the Rng seed)
// produce bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tvbench {

using Vec = std::vector<double>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SingularError : std::runtime_error {
    SingularError(const std::string& what, std::size_t rank_)
        : std::runtime_error(what), rank(rank_) {}
    std::size_t rank;
};

struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& what, std::size_t iterations_)
        : std::runtime_error(what), iterations(iterations_) {}
    std::size_t iterations;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Mat(std::size_t rows, std::size_t cols, Vec data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("Mat: data length " + std::to_string(data_.size()) +
                             " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    Mat(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : init) {
            if (r.size() != cols_) throw ShapeError("Mat: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    Vec& data() noexcept { return data_; }
    const Vec& data() const noexcept { return data_; }

    Vec col(std::size_t c) const {
        Vec out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    bool operator==(const Mat&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

inline std::string shape_str(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// ---------------------------------------------------------------------------
// Random numbers

/// splitmix64 step; used for seeding and for deriving child seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Order-sensitive 64-bit mix of several words into one seed.
inline std::uint64_t mix64(std::initializer_list<std::uint64_t> words) noexcept {
    std::uint64_t state = 0x6A09E667F3BCC909ULL;
    std::uint64_t acc = 0;
    for (std::uint64_t w : words) {
        state ^= w;
        acc = splitmix64(state);
        state = acc;
    }
    return acc;
}

/// FNV-1a over a string; stable tag for seed derivation.
inline std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// xoshiro256** seeded through splitmix64. Gaussian draws use the
/// Box-Muller transform on 53-bit uniforms, consuming two uniforms per pair and
/// caching the second normal.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& s : s_) s = splitmix64(sm);
    }

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = next_u64();
            const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
            if (static_cast<std::uint64_t>(m) >= threshold)
                return static_cast<std::uint64_t>(m >> 64);
        }
    }

    /// Standard normal draw.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::uint64_t s_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// n independent N(0, stddev^2) draws. Draws are consumed even when stddev is
/// zero so that stream positions do not depend on the noise level.
inline Vec gauss_sample(Rng& rng, std::size_t n, double stddev) {
    if (!(stddev >= 0.0)) throw std::invalid_argument("gauss_sample: stddev must be >= 0");
    Vec out(n);
    for (auto& v : out) {
        const double g = rng.normal();
        v = stddev == 0.0 ? 0.0 : stddev * g;
    }
    return out;
}

inline Mat gauss_mat(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    return Mat(rows, cols, gauss_sample(rng, rows * cols, stddev));
}

// ---------------------------------------------------------------------------
// Products

inline Mat transpose(const Mat& a) {
    Mat t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// C = A * B
inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
    Mat c(a.rows(), b.cols());
    const std::size_t n = b.cols(), p = a.cols();
    const double* __restrict bp = b.data().data();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* __restrict ci = c.data().data() + i * n;
        for (std::size_t k = 0; k < p; ++k) {
            const double aik = a(i, k);
            const double* __restrict bk = bp + k * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

/// C = A * B^T. B is transposed up front so the inner loop is an axpy over
/// the output row, which vectorizes without reassociating sums.
inline Mat matmul_bt(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_bt: " + shape_str(a) + " * (" + shape_str(b) + ")^T");
    return matmul(a, transpose(b));
}

/// C = A^T * B
inline Mat matmul_at(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_at: (" + shape_str(a) + ")^T * " + shape_str(b));
    Mat c(a.cols(), b.cols());
    const std::size_t n = b.cols(), p = a.cols();
    double* __restrict cp = c.data().data();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* __restrict ar = a.data().data() + r * p;
        const double* __restrict br = b.data().data() + r * n;
        for (std::size_t i = 0; i < p; ++i) {
            const double x = ar[i];
            double* __restrict ci = cp + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += x * br[j];
        }
    }
    return c;
}

inline Vec matvec(const Mat& a, std::span<const double> x) {
    if (a.cols() != x.size())
        throw ShapeError("matvec: " + shape_str(a) + " * vec(" + std::to_string(x.size()) + ")");
    Vec y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        double s = 0.0;
        for (std::size_t k = 0; k < ai.size(); ++k) s += ai[k] * x[k];
        y[i] = s;
    }
    return y;
}


inline Mat scaled(Mat a, double s) {
    for (auto& v : a.data()) v *= s;
    return a;
}

inline Mat add(Mat a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("add: " + shape_str(a) + " + " + shape_str(b));
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
    return a;
}

inline Mat sub(Mat a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("sub: " + shape_str(a) + " - " + shape_str(b));
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] -= b.data()[i];
    return a;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double frobenius(const Mat& a) { return norm2(a.data()); }

inline double trace(const Mat& a) {
    if (a.rows() != a.cols()) throw ShapeError("trace: non-square " + shape_str(a));
    double t = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
    return t;
}

/// Rows [begin, end) as a new matrix.
inline Mat row_slice(const Mat& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) throw ShapeError("row_slice: range out of bounds");
    Mat out(end - begin, a.cols());
    std::copy(a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()),
              a.data().begin() + static_cast<std::ptrdiff_t>(end * a.cols()), out.data().begin());
    return out;
}

inline Mat select_cols(const Mat& a, std::span<const std::size_t> cols) {
    Mat out(a.rows(), cols.size());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (cols[j] >= a.cols()) throw ShapeError("select_cols: column out of range");
            out(r, j) = a(r, cols[j]);
        }
    return out;
}

inline Mat select_rows(const Mat& a, std::span<const std::size_t> rows) {
    Mat out(rows.size(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.rows()) throw ShapeError("select_rows: row out of range");
        auto src = a.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Symmetric solves

namespace detail {

// In-place Cholesky of a symmetric positive definite matrix. Returns the number
// of pivots that passed the relative threshold; failed pivots are zeroed and skipped.
inline std::size_t cholesky(Mat& a, double rel_tol) {
    const std::size_t n = a.rows();
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
    const double tol = rel_tol * (scale > 0.0 ? scale : 1.0);
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (!(d > tol)) {
            // Dependent column: drop it and keep counting so the caller learns the numerical rank.
            for (std::size_t i = j; i < n; ++i) a(i, j) = 0.0;
            continue;
        }
        ++rank;
        const double ljj = std::sqrt(d);
        a(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / ljj;
        }
    }
    return rank;
}

// Solve L L^T X = B in place on B given the lower factor in l.
inline void cholesky_solve(const Mat& l, Mat& b) {
    const std::size_t n = l.rows();
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = b(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * b(k, c);
            b(i, c) = s / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = b(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * b(k, c);
            b(ii, c) = s / l(ii, ii);
        }
    }
}

}  // namespace detail

/// Solves the SPD system G X = B by Cholesky. Throws SingularError when a pivot
/// falls below 1e-12 relative to the largest diagonal entry.
inline Mat solve_spd(const Mat& g, const Mat& b) {
    if (g.rows() != g.cols() || g.rows() != b.rows())
        throw ShapeError("solve_spd: " + shape_str(g) + " vs " + shape_str(b));
    Mat l = g;
    const std::size_t rank = detail::cholesky(l, 1e-12);
    if (rank < g.rows())
        throw SingularError("solve_spd: matrix is singular (rank " + std::to_string(rank) + " of " +
                                std::to_string(g.rows()) + ")",
                            rank);
    Mat x = b;
    detail::cholesky_solve(l, x);
    return x;
}

/// Inverse of an SPD matrix.
inline Mat inverse_spd(const Mat& g) { return solve_spd(g, Mat::identity(g.rows())); }

struct OlsOptions {
    bool with_intercept = false;
    bool ridge_fallback = true;
};

/// Least-squares map W (m x k, plus a trailing intercept column when requested)
/// minimizing sum_t ||s_t - W z_t||^2, via the normal equations. When the
/// Cholesky pivot test fails and the fallback is enabled, a ridge of
/// 1e-10 * trace(Z^T Z) / k is added and the solve retried.
inline Mat solve_ols(const Mat& z, const Mat& s, OlsOptions opt = {}) {
    if (z.rows() != s.rows())
        throw ShapeError("solve_ols: Z " + shape_str(z) + " and S " + shape_str(s) + " row mismatch");
    const std::size_t k = z.cols() + (opt.with_intercept ? 1 : 0);
    if (z.rows() < k)
        throw ShapeError("solve_ols: need at least " + std::to_string(k) + " rows, got " +
                         std::to_string(z.rows()));
    Mat design = z;
    if (opt.with_intercept) {
        design = Mat(z.rows(), k);
        for (std::size_t r = 0; r < z.rows(); ++r) {
            auto src = z.row(r);
            std::copy(src.begin(), src.end(), design.row(r).begin());
            design(r, k - 1) = 1.0;
        }
    }
    Mat gram = matmul_at(design, design);
    const Mat rhs = matmul_at(design, s);  // k x m

    Mat l = gram;
    std::size_t rank = detail::cholesky(l, 1e-12);
    if (rank < k) {
        if (!opt.ridge_fallback)
            throw SingularError("solve_ols: design matrix is rank deficient (rank " +
                                    std::to_string(rank) + " of " + std::to_string(k) + ")",
                                rank);
        const double ridge = 1e-10 * trace(gram) / static_cast<double>(k);
        l = gram;
        for (std::size_t i = 0; i < k; ++i) l(i, i) += ridge > 0.0 ? ridge : 1e-300;
        rank = detail::cholesky(l, 0.0);
        if (rank < k)
            throw SingularError("solve_ols: ridge fallback failed (rank " + std::to_string(rank) +
                                    " of " + std::to_string(k) + ")",
                                rank);
    }
    Mat coef = rhs;
    detail::cholesky_solve(l, coef);
    return transpose(coef);
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

struct EigenResult {
    Vec values;   // descending
    Mat vectors;  // column i pairs with values[i]
};

/// Cyclic Jacobi eigensolver for symmetric matrices. The input is symmetrized
/// as (M + M^T) / 2. Eigenvectors are orthonormal columns, each flipped so its
/// largest-magnitude entry (first one on ties) is positive.
inline EigenResult eig_sym(const Mat& m, std::size_t max_sweeps = 100) {
    if (m.rows() != m.cols()) throw ShapeError("eig_sym: non-square " + shape_str(m));
    const std::size_t n = m.rows();
    Mat a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (m(i, j) + m(j, i));
    Mat v = Mat::identity(n);

    const double scale = frobenius(a);
    const double tol = 1e-12 * (scale > 0.0 ? scale : 1.0);
    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    std::size_t sweep = 0;
    while (off_norm() >= tol) {
        if (sweep == max_sweeps)
            throw ConvergenceError("eig_sym: no convergence after " + std::to_string(sweep) + " sweeps",
                                   sweep);
        ++sweep;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    EigenResult out{Vec(n), Mat(n, n)};
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t src = order[c];
        out.values[c] = a(src, src);
        std::size_t arg = 0;
        for (std::size_t r = 1; r < n; ++r)
            if (std::abs(v(r, src)) > std::abs(v(arg, src))) arg = r;
        const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = sign * v(r, src);
    }
    return out;
}

// ---------------------------------------------------------------------------

/// Central-difference gradient of f at theta.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& theta, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
    Vec g(theta.size());
    Vec probe = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + h;
        const double fp = f(probe);
        probe[i] = theta[i] - h;
        const double fm = f(probe);
        probe[i] = theta[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                               std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace tvbench
