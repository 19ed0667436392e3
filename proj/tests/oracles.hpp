#pragma once

// Independent reference computations for the tests. These deliberately avoid
// the library kernels they check.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tvbench/numerics.hpp"

namespace oracle {

using tvbench::Mat;
using tvbench::Vec;

inline Mat triple_loop(const Mat& a, const Mat& b) {
    Mat c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double s = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
            c(i, j) = static_cast<double>(s);
        }
    return c;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

/// Gauss-Jordan inverse with partial pivoting, in long double.
inline Mat gauss_jordan_inverse(const Mat& m) {
    const std::size_t n = m.rows();
    std::vector<std::vector<long double>> a(n, std::vector<long double>(2 * n, 0.0L));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a[i][j] = m(i, j);
        a[i][n + i] = 1.0L;
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::fabs(a[r][c]) > std::fabs(a[p][c])) p = r;
        if (a[p][c] == 0.0L) throw std::runtime_error("oracle: singular");
        std::swap(a[p], a[c]);
        const long double d = a[c][c];
        for (auto& v : a[c]) v /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const long double f = a[r][c];
            for (std::size_t j = 0; j < 2 * n; ++j) a[r][j] -= f * a[c][j];
        }
    }
    Mat inv(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) inv(i, j) = static_cast<double>(a[i][n + j]);
    return inv;
}

/// Moore-Penrose pseudo-inverse of a full-column-rank matrix: (A^T A)^-1 A^T.
inline Mat left_pinv(const Mat& a) {
    Mat at(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) at(j, i) = a(i, j);
    return triple_loop(gauss_jordan_inverse(triple_loop(at, a)), at);
}

/// Textbook R^2 per column: 1 - sum (y - yhat)^2 / sum (y - mean y)^2.
inline Vec r2_per_column(const Mat& yhat, const Mat& y) {
    Vec out(y.cols());
    for (std::size_t j = 0; j < y.cols(); ++j) {
        long double mean = 0.0L;
        for (std::size_t t = 0; t < y.rows(); ++t) mean += y(t, j);
        mean /= static_cast<long double>(y.rows());
        long double sse = 0.0L, sst = 0.0L;
        for (std::size_t t = 0; t < y.rows(); ++t) {
            sse += (y(t, j) - yhat(t, j)) * static_cast<long double>(y(t, j) - yhat(t, j));
            sst += (y(t, j) - mean) * (y(t, j) - mean);
        }
        out[j] = static_cast<double>(1.0L - sse / sst);
    }
    return out;
}

/// Eigenvectors of a symmetric matrix by cyclic Jacobi rotations in long
/// double, columns sorted by descending eigenvalue.
inline Mat jacobi_eigenvectors(const Mat& m, Vec* values = nullptr) {
    const std::size_t n = m.rows();
    std::vector<std::vector<long double>> a(n, std::vector<long double>(n)), v(n, std::vector<long double>(n, 0.0L));
    for (std::size_t i = 0; i < n; ++i) {
        v[i][i] = 1.0L;
        for (std::size_t j = 0; j < n; ++j) a[i][j] = m(i, j);
    }
    for (int sweep = 0; sweep < 200; ++sweep) {
        long double off = 0.0L;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-40L) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0L) continue;
                const long double theta = (a[q][q] - a[p][p]) / (2.0L * a[p][q]);
                const long double t = (theta >= 0 ? 1.0L : -1.0L) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
                const long double c = 1.0L / std::sqrt(t * t + 1.0L), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const long double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const long double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const long double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
    Mat out(n, n);
    if (values) values->resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) out(i, j) = static_cast<double>(v[i][order[j]]);
        if (values) (*values)[j] = static_cast<double>(a[order[j]][order[j]]);
    }
    return out;
}

/// max_i |a_i - n_i| / max(1, |n_i|)
inline double max_rel_error(const Vec& analytic, const Vec& numeric) {
    double m = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        m = std::max(m, std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(numeric[i])));
    return m;
}

}  // namespace oracle
