#pragma once

// The "TV-series" testbed: a rotating, slowly contracting signal state mixed
// into a 20-dimensional observation together with an AR(1) distractor whose
// amplitude is the swept knob.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "tvbench/numerics.hpp"

namespace tvbench {

/// Decay of the distractor process. Fixed, not configurable.
inline constexpr double kDistractorDecay = 0.9;

struct EnvParams {
    std::size_t n_s = 4;
    std::size_t n_d = 4;
    std::size_t n_x = 20;
    double alpha = 0.99;
    double omega = 0.3;
    double sigma_w = 0.1;
    double sigma_v = 0.1;
    double sigma_e = 0.05;
    double sigma = 0.0;
    std::size_t T = 10000;
    double train_frac = 0.8;
    std::uint64_t seed = 1;

    double signal_stationary_var() const { return sigma_w * sigma_w / (1.0 - alpha * alpha); }
    double distractor_stationary_var() const {
        return sigma_v * sigma_v / (1.0 - kDistractorDecay * kDistractorDecay);
    }
    std::size_t split() const {
        return static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(T)));
    }

    void validate() const {
        auto fail = [](const std::string& what) { throw std::invalid_argument("EnvParams: " + what); };
        if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
        if (n_s == 0 || n_s % 2 != 0) fail("n_s must be even and positive");
        if (n_d == 0 || n_d % 2 != 0) fail("n_d must be even and positive");
        if (n_x == 0) fail("n_x must be positive");
        if (!(sigma_w >= 0.0) || !(sigma_v >= 0.0) || !(sigma_e >= 0.0)) fail("noise stddevs must be >= 0");
        if (!(sigma >= 0.0)) fail("sigma must be >= 0");
        if (!std::isfinite(omega)) fail("omega must be finite");
        if (!(train_frac > 0.0 && train_frac < 1.0)) fail("train_frac must lie in (0, 1)");
        const std::size_t s = split();
        if (T < 2 || s == 0 || s >= T) fail("T and train_frac leave an empty train or eval split");
    }

    bool operator==(const EnvParams&) const = default;
};

struct MixingMaps {
    Mat C;  // n_x x n_s
    Mat D;  // n_x x n_d
};

struct Dataset {
    EnvParams params;
    MixingMaps maps;
    Mat S;   // T x n_s
    Mat Dd;  // T x n_d
    Mat X;   // T x n_x
    std::size_t split = 0;
    double snr_db = 0.0;

    std::size_t length() const { return X.rows(); }
    Mat X_train() const { return row_slice(X, 0, split); }
    Mat X_eval() const { return row_slice(X, split, X.rows()); }
    Mat S_train() const { return row_slice(S, 0, split); }
    Mat S_eval() const { return row_slice(S, split, S.rows()); }
};

/// Block-diagonal rotation with 2x2 blocks [[cos w, -sin w], [sin w, cos w]].
inline Mat make_rotation(std::size_t n, double omega) {
    if (n % 2 != 0) throw std::invalid_argument("make_rotation: n must be even, got " + std::to_string(n));
    Mat q(n, n);
    const double c = std::cos(omega), s = std::sin(omega);
    for (std::size_t b = 0; b < n; b += 2) {
        q(b, b) = c;
        q(b, b + 1) = -s;
        q(b + 1, b) = s;
        q(b + 1, b + 1) = c;
    }
    return q;
}

namespace detail {

inline Mat unit_columns(Rng& rng, std::size_t rows, std::size_t cols) {
    Mat m(rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        for (;;) {
            Vec v = gauss_sample(rng, rows, 1.0);
            const double nrm = norm2(v);
            if (nrm == 0.0) continue;
            for (std::size_t r = 0; r < rows; ++r) m(r, c) = v[r] / nrm;
            break;
        }
    }
    return m;
}

}  // namespace detail

/// Gaussian mixing matrices with every column rescaled to unit norm.
inline MixingMaps make_mixing(const EnvParams& p, Rng& rng) {
    MixingMaps maps;
    maps.C = detail::unit_columns(rng, p.n_x, p.n_s);
    maps.D = detail::unit_columns(rng, p.n_x, p.n_d);
    return maps;
}

inline Vec step_signal(std::span<const double> s, const Mat& A, Rng& rng, double sigma_w) {
    Vec next = matvec(A, s);
    const Vec w = gauss_sample(rng, next.size(), sigma_w);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += w[i];
    return next;
}

inline Vec step_distractor(std::span<const double> d, Rng& rng, double sigma_v) {
    const Vec v = gauss_sample(rng, d.size(), sigma_v);
    Vec next(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) next[i] = kDistractorDecay * d[i] + v[i];
    return next;
}

/// x = C s + D (sigma d) + e
inline Vec observe(std::span<const double> s, std::span<const double> d, const MixingMaps& maps, double sigma,
                   Rng& rng, double sigma_e) {
    if (s.size() != maps.C.cols() || d.size() != maps.D.cols() || maps.C.rows() != maps.D.rows())
        throw ShapeError("observe: state sizes do not match mixing maps");
    Vec x = matvec(maps.C, s);
    Vec sd(d.begin(), d.end());
    for (auto& v : sd) v *= sigma;
    const Vec dx = matvec(maps.D, sd);
    const Vec e = gauss_sample(rng, x.size(), sigma_e);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[i] + e[i];
    return x;
}

/// Closed-form stationary SNR in dB; +inf when the denominator vanishes.
inline double analytic_snr_db(const EnvParams& p) {
    const double num = static_cast<double>(p.n_s) * p.signal_stationary_var();
    const double den = static_cast<double>(p.n_d) * p.sigma * p.sigma * p.distractor_stationary_var() +
                       static_cast<double>(p.n_x) * p.sigma_e * p.sigma_e;
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(num / den);
}

namespace detail {

// Trace of the empirical covariance of the rows of Y = Z M^T (scaled by s).
inline double total_variance_of_mapped(const Mat& z, const Mat& m, double s) {
    const std::size_t T = z.rows();
    Mat y = matmul_bt(z, m);
    double total = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < T; ++t) mean += y(t, c);
        mean /= static_cast<double>(T);
        double ss = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double dv = y(t, c) - mean;
            ss += dv * dv;
        }
        total += ss / static_cast<double>(T - 1);
    }
    return total * s * s;
}

}  // namespace detail

/// Empirical SNR in dB: total variance of C s_t over total variance of
/// D (sigma d_t), plus n_x sigma_e^2 for the (unstored) observation noise.
/// Returns +inf when the denominator is zero.
inline double compute_snr_db(const Dataset& ds, const MixingMaps& maps, const EnvParams& p) {
    if (ds.S.rows() < 2) throw std::invalid_argument("compute_snr_db: need T >= 2");
    const double signal = detail::total_variance_of_mapped(ds.S, maps.C, 1.0);
    const double noise = detail::total_variance_of_mapped(ds.Dd, maps.D, p.sigma) +
                         static_cast<double>(p.n_x) * p.sigma_e * p.sigma_e;
    if (noise == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / noise);
}

/// Independent sampling streams of one dataset. Each stream is keyed by the
/// dataset seed and a fixed tag, so S and Dd do not depend on sigma.
struct EnvStreams {
    Rng mixing, init, signal, distractor, observation;
    explicit EnvStreams(std::uint64_t seed)
        : mixing(mix64({seed, fnv1a("env.mixing")})),
          init(mix64({seed, fnv1a("env.init")})),
          signal(mix64({seed, fnv1a("env.signal")})),
          distractor(mix64({seed, fnv1a("env.distractor")})),
          observation(mix64({seed, fnv1a("env.observation")})) {}
};

struct InitialState {
    Vec s0, d0;
};

/// s_0 and d_0 from the stationary isotropic Gaussians of their processes.
inline InitialState stationary_initial_state(const EnvParams& p, Rng& rng) {
    return {gauss_sample(rng, p.n_s, std::sqrt(p.signal_stationary_var())),
            gauss_sample(rng, p.n_d, std::sqrt(p.distractor_stationary_var()))};
}

/// Rolls the dynamics from a given initial state.
inline Dataset generate_dataset_from(const EnvParams& p, const InitialState& init, EnvStreams& streams,
                                     MixingMaps maps) {
    p.validate();
    if (init.s0.size() != p.n_s || init.d0.size() != p.n_d)
        throw ShapeError("generate_dataset: initial state size mismatch");
    Dataset ds;
    ds.params = p;
    ds.maps = std::move(maps);
    ds.S = Mat(p.T, p.n_s);
    ds.Dd = Mat(p.T, p.n_d);
    ds.X = Mat(p.T, p.n_x);
    const Mat A = scaled(make_rotation(p.n_s, p.omega), p.alpha);
    Vec s = init.s0, d = init.d0;
    for (std::size_t t = 0; t < p.T; ++t) {
        std::copy(s.begin(), s.end(), ds.S.row(t).begin());
        std::copy(d.begin(), d.end(), ds.Dd.row(t).begin());
        const Vec x = observe(s, d, ds.maps, p.sigma, streams.observation, p.sigma_e);
        std::copy(x.begin(), x.end(), ds.X.row(t).begin());
        s = step_signal(s, A, streams.signal, p.sigma_w);
        d = step_distractor(d, streams.distractor, p.sigma_v);
    }
    ds.split = p.split();
    ds.snr_db = compute_snr_db(ds, ds.maps, p);
    return ds;
}

/// Full dataset as a pure function of the parameters (including the seed).
inline Dataset generate_dataset(const EnvParams& p) {
    p.validate();
    EnvStreams streams(p.seed);
    MixingMaps maps = make_mixing(p, streams.mixing);
    const InitialState init = stationary_initial_state(p, streams.init);
    return generate_dataset_from(p, init, streams, std::move(maps));
}

/// FNV-1a checksum over the raw bytes of X; logged per sweep cell.
inline std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (double v : ds.X.data()) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Dataset container
//
//   tvbench-dataset 1
//   n_s <int> / n_d / n_x / T / split       one key per line
//   alpha <real> / omega / sigma_w / sigma_v / sigma_e / sigma / train_frac
//   seed <uint64>
//   snr_db <real|inf>
//   matrix <name> <rows> <cols>             followed by rows of reals
//
// Matrices appear in the order C, D, S, Dd, X. Reals use the shortest form
// that round-trips, so a read-back is bit-exact.

inline std::string format_real(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_real(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("not a real number: '" + s + "'");
    return v;
}

inline void write_matrix(std::ostream& os, const std::string& name, const Mat& m) {
    os << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) os << (c ? " " : "") << format_real(m(r, c));
        os << '\n';
    }
}

inline Mat read_matrix(std::istream& is, const std::string& expected) {
    std::string tag, name;
    std::size_t rows = 0, cols = 0;
    if (!(is >> tag >> name >> rows >> cols) || tag != "matrix" || name != expected)
        throw std::runtime_error("dataset: expected matrix '" + expected + "'");
    Mat m(rows, cols);
    std::string tok;
    for (auto& v : m.data()) {
        if (!(is >> tok)) throw std::runtime_error("dataset: truncated matrix '" + expected + "'");
        v = parse_real(tok);
    }
    return m;
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
    const EnvParams& p = ds.params;
    os << "tvbench-dataset 1\n"
       << "n_s " << p.n_s << "\nn_d " << p.n_d << "\nn_x " << p.n_x << "\nT " << p.T << "\nsplit " << ds.split
       << "\nalpha " << format_real(p.alpha) << "\nomega " << format_real(p.omega) << "\nsigma_w "
       << format_real(p.sigma_w) << "\nsigma_v " << format_real(p.sigma_v) << "\nsigma_e "
       << format_real(p.sigma_e) << "\nsigma " << format_real(p.sigma) << "\ntrain_frac "
       << format_real(p.train_frac) << "\nseed " << p.seed << "\nsnr_db " << format_real(ds.snr_db) << '\n';
    write_matrix(os, "C", ds.maps.C);
    write_matrix(os, "D", ds.maps.D);
    write_matrix(os, "S", ds.S);
    write_matrix(os, "Dd", ds.Dd);
    write_matrix(os, "X", ds.X);
}

inline Dataset read_dataset(std::istream& is) {
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "tvbench-dataset" || version != 1)
        throw std::runtime_error("dataset: bad header");
    Dataset ds;
    EnvParams& p = ds.params;
    auto key = [&](const char* expected) {
        std::string k, v;
        if (!(is >> k >> v) || k != expected)
            throw std::runtime_error(std::string("dataset: expected key '") + expected + "'");
        return v;
    };
    p.n_s = std::stoul(key("n_s"));
    p.n_d = std::stoul(key("n_d"));
    p.n_x = std::stoul(key("n_x"));
    p.T = std::stoul(key("T"));
    ds.split = std::stoul(key("split"));
    p.alpha = parse_real(key("alpha"));
    p.omega = parse_real(key("omega"));
    p.sigma_w = parse_real(key("sigma_w"));
    p.sigma_v = parse_real(key("sigma_v"));
    p.sigma_e = parse_real(key("sigma_e"));
    p.sigma = parse_real(key("sigma"));
    p.train_frac = parse_real(key("train_frac"));
    p.seed = std::stoull(key("seed"));
    ds.snr_db = parse_real(key("snr_db"));
    ds.maps.C = read_matrix(is, "C");
    ds.maps.D = read_matrix(is, "D");
    ds.S = read_matrix(is, "S");
    ds.Dd = read_matrix(is, "Dd");
    ds.X = read_matrix(is, "X");
    return ds;
}

/// Plain CSV of a matrix with a header of the form prefix0,prefix1,...
inline void write_matrix_csv(std::ostream& os, const Mat& m, const std::string& prefix) {
    for (std::size_t c = 0; c < m.cols(); ++c) os << (c ? "," : "") << prefix << c;
    os << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) os << (c ? "," : "") << format_real(m(r, c));
        os << '\n';
    }
}

}  // namespace tvbench
