#pragma once

// Linear probing of learned latents against the true state, and the latent
// diagnostics table used for scatter plots.

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "tvbench/env.hpp"
#include "tvbench/models.hpp"
#include "tvbench/numerics.hpp"

namespace tvbench {

struct ProbeConfig {
    bool with_intercept = false;
};

struct R2Result {
    double aggregate = 0.0;
    Vec per_dim;          // NaN where SST vanished
    bool degenerate = false;  // some dimension had zero SST and was left out
};

struct ProbeResult {
    Mat W;  // n_s x k (plus intercept column)
    double r2_eval = 0.0;
    double r2_train = 0.0;
    Vec r2_per_dim;
    bool degenerate = false;
};

inline Mat fit_probe(const Mat& z_train, const Mat& s_train, const ProbeConfig& cfg = {}) {
    OlsOptions o;
    o.with_intercept = cfg.with_intercept;
    return solve_ols(z_train, s_train, o);
}

inline Mat probe_predict(const Mat& W, const Mat& z) {
    const bool intercept = W.cols() == z.cols() + 1;
    if (!intercept && W.cols() != z.cols())
        throw ShapeError("probe_predict: W " + shape_str(W) + " does not fit latents " + shape_str(z));
    Mat out(z.rows(), W.rows());
    for (std::size_t t = 0; t < z.rows(); ++t)
        for (std::size_t i = 0; i < W.rows(); ++i) {
            double acc = intercept ? W(i, z.cols()) : 0.0;
            for (std::size_t j = 0; j < z.cols(); ++j) acc += W(i, j) * z(t, j);
            out(t, i) = acc;
        }
    return out;
}

/// Per-dimension 1 - SSE / SST with SST about the mean of s, averaged
/// uniformly over dimensions whose SST is nonzero.
inline R2Result r2_score(const Mat& s_hat, const Mat& s) {
    if (s_hat.rows() != s.rows() || s_hat.cols() != s.cols())
        throw ShapeError("r2_score: shapes " + shape_str(s_hat) + " and " + shape_str(s) + " differ");
    if (s.rows() < 2) throw ShapeError("r2_score: need at least 2 rows");
    R2Result r;
    r.per_dim.assign(s.cols(), std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < s.cols(); ++i) {
        double mean = 0.0;
        for (std::size_t t = 0; t < s.rows(); ++t) mean += s(t, i);
        mean /= static_cast<double>(s.rows());
        double sse = 0.0, sst = 0.0;
        for (std::size_t t = 0; t < s.rows(); ++t) {
            const double e = s(t, i) - s_hat(t, i);
            const double c = s(t, i) - mean;
            sse += e * e;
            sst += c * c;
        }
        if (sst == 0.0) {
            r.degenerate = true;
            continue;
        }
        r.per_dim[i] = 1.0 - sse / sst;
        sum += r.per_dim[i];
        ++used;
    }
    r.aggregate = used ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

/// Probe fitted on train-split latents only; scored on both splits.
inline ProbeResult probe_latents(const Mat& z, const Dataset& ds, const ProbeConfig& cfg = {}) {
    if (z.rows() != ds.length()) throw ShapeError("probe_latents: latent rows do not match dataset length");
    const Mat z_train = row_slice(z, 0, ds.split), z_eval = row_slice(z, ds.split, z.rows());
    const Mat s_train = ds.S_train(), s_eval = ds.S_eval();
    ProbeResult p;
    p.W = fit_probe(z_train, s_train, cfg);
    const R2Result ev = r2_score(probe_predict(p.W, z_eval), s_eval);
    const R2Result tr = r2_score(probe_predict(p.W, z_train), s_train);
    p.r2_eval = ev.aggregate;
    p.r2_per_dim = ev.per_dim;
    p.r2_train = tr.aggregate;
    p.degenerate = ev.degenerate || tr.degenerate;
    return p;
}

inline ProbeResult probe_eval(const Learner& learner, const Dataset& ds, const ProbeConfig& cfg = {}) {
    return probe_latents(encode(learner, ds.X), ds, cfg);
}

// ---------------------------------------------------------------------------
// Diagnostics table
//
// One row per eval step. Columns: z<i> for each latent, then pair<i>_<j>
// (centered product z_i z_j, whose column mean is the pairwise covariance) for
// i < j. Per-feature variance and pairwise covariance are summarized separately.

struct DiagnosticsTable {
    std::vector<std::string> columns;
    Mat values;   // eval rows x columns
    Vec variance;  // per feature, over the eval split
    Mat covariance;  // k x k, over the eval split
    std::size_t k = 0;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw std::out_of_range("diagnostics: no column '" + name + "'");
    }
};

inline Mat covariance_of(const Mat& z) {
    const std::size_t n = z.rows(), k = z.cols();
    Vec mean(k, 0.0);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < k; ++j) mean[j] += z(t, j);
    for (auto& v : mean) v /= static_cast<double>(n);
    Mat c(k, k);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) c(a, b) += (z(t, a) - mean[a]) * (z(t, b) - mean[b]);
    return scaled(std::move(c), 1.0 / static_cast<double>(n));
}

inline DiagnosticsTable diagnostics_from_latents(const Mat& z_eval) {
    DiagnosticsTable d;
    const std::size_t n = z_eval.rows(), k = z_eval.cols();
    d.k = k;
    d.covariance = covariance_of(z_eval);
    d.variance.resize(k);
    for (std::size_t j = 0; j < k; ++j) d.variance[j] = d.covariance(j, j);
    for (std::size_t j = 0; j < k; ++j) d.columns.push_back("z" + std::to_string(j));
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b)
            d.columns.push_back("pair" + std::to_string(a) + "_" + std::to_string(b));
    Vec mean(k, 0.0);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < k; ++j) mean[j] += z_eval(t, j);
    for (auto& v : mean) v /= static_cast<double>(n);
    d.values = Mat(n, d.columns.size());
    for (std::size_t t = 0; t < n; ++t) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < k; ++j) d.values(t, c++) = z_eval(t, j);
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = a + 1; b < k; ++b)
                d.values(t, c++) = (z_eval(t, a) - mean[a]) * (z_eval(t, b) - mean[b]);
    }
    return d;
}

inline DiagnosticsTable latent_diagnostics(const Learner& learner, const Dataset& ds) {
    return diagnostics_from_latents(encode(learner, ds.X_eval()));
}

inline void write_diagnostics_csv(std::ostream& os, const DiagnosticsTable& d) {
    for (std::size_t c = 0; c < d.columns.size(); ++c) os << (c ? "," : "") << d.columns[c];
    os << '\n';
    for (std::size_t r = 0; r < d.values.rows(); ++r) {
        for (std::size_t c = 0; c < d.values.cols(); ++c) os << (c ? "," : "") << format_real(d.values(r, c));
        os << '\n';
    }
}

}  // namespace tvbench
