#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "tvbench/env.hpp"

using namespace tvbench;

TEST(Rotation, ZeroAngleIsIdentity) { EXPECT_EQ(make_rotation(6, 0.0), Mat::identity(6)); }

TEST(Rotation, QuarterTurn) {
    const Mat q = make_rotation(2, std::numbers::pi / 2);
    EXPECT_LT(oracle::max_abs_diff(q, Mat{{0, -1}, {1, 0}}), 1e-15);
}

TEST(Rotation, Orthogonal) {
    for (double w : {0.1, 0.3, 1.7, -2.2}) {
        const Mat q = make_rotation(8, w);
        EXPECT_LT(oracle::max_abs_diff(oracle::triple_loop(transpose(q), q), Mat::identity(8)), 1e-12);
    }
}

TEST(Rotation, OddSizeThrows) { EXPECT_THROW(make_rotation(3, 0.1), std::invalid_argument); }

TEST(Mixing, UnitColumnsAndDeterminism) {
    EnvParams p;
    Rng a(5), b(5);
    const MixingMaps m1 = make_mixing(p, a), m2 = make_mixing(p, b);
    EXPECT_EQ(m1.C, m2.C);
    EXPECT_EQ(m1.D, m2.D);
    for (const Mat* m : {&m1.C, &m1.D})
        for (std::size_t c = 0; c < m->cols(); ++c) EXPECT_NEAR(norm2(m->col(c)), 1.0, 1e-10);
}

TEST(Mixing, ColumnsNearlyOrthogonalOnAverage) {
    EnvParams p;
    double sum = 0.0;
    int n = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng r(seed);
        const MixingMaps m = make_mixing(p, r);
        for (std::size_t i = 0; i < p.n_s; ++i)
            for (std::size_t j = i + 1; j < p.n_s; ++j) {
                sum += std::abs(dot(m.C.col(i), m.C.col(j)));
                ++n;
            }
    }
    EXPECT_LT(sum / n, 0.4);
}

TEST(StepSignal, FixedPoint) {
    Rng r(1);
    const Mat A = scaled(make_rotation(4, 0.3), 0.99);
    for (double v : step_signal(Vec(4, 0.0), A, r, 0.0)) EXPECT_EQ(v, 0.0);
}

TEST(StepSignal, RotatesBasisVector) {
    Rng r(1);
    const double a = 0.99, w = 0.3;
    const Vec s = step_signal(Vec{1, 0, 0, 0}, scaled(make_rotation(4, w), a), r, 0.0);
    EXPECT_NEAR(s[0], a * std::cos(w), 1e-15);
    EXPECT_NEAR(s[1], a * std::sin(w), 1e-15);
    EXPECT_EQ(s[2], 0.0);
    EXPECT_EQ(s[3], 0.0);
}

TEST(StepSignal, NoiselessNormContraction) {
    Rng r(1);
    const double a = 0.99;
    const Mat A = scaled(make_rotation(4, 0.3), a);
    Vec s{0.3, -1.2, 0.7, 2.0};
    const double n0 = norm2(s);
    for (int t = 1; t <= 500; ++t) {
        s = step_signal(s, A, r, 0.0);
        ASSERT_NEAR(norm2(s), std::pow(a, t) * n0, 1e-12 * n0);
    }
}

TEST(StepDistractor, Decay) {
    Rng r(1);
    for (double v : step_distractor(Vec(4, 0.0), r, 0.0)) EXPECT_EQ(v, 0.0);
    for (double v : step_distractor(Vec(4, 1.0), r, 0.0)) EXPECT_EQ(v, 0.9);
}

TEST(StepDistractor, StationaryVarianceMillionSteps) {
    Rng r(77);
    const double sv = 0.1;
    Vec d = gauss_sample(r, 4, sv / std::sqrt(0.19));
    std::vector<double> s1(4, 0.0), s2(4, 0.0);
    const int n = 1000000;
    for (int t = 0; t < n; ++t) {
        d = step_distractor(d, r, sv);
        for (int i = 0; i < 4; ++i) {
            s1[i] += d[i];
            s2[i] += d[i] * d[i];
        }
    }
    for (int i = 0; i < 4; ++i) {
        const double mean = s1[i] / n;
        const double var = s2[i] / n - mean * mean;
        EXPECT_NEAR(var, sv * sv / 0.19, 0.02 * sv * sv / 0.19);
    }
}

TEST(Observe, ZeroInputsZeroNoise) {
    EnvParams p;
    Rng r(2);
    const MixingMaps m = make_mixing(p, r);
    for (double v : observe(Vec(4, 0.0), Vec(4, 0.0), m, 3.0, r, 0.0)) EXPECT_EQ(v, 0.0);
}

TEST(Observe, DistractorOffGivesCs) {
    EnvParams p;
    Rng r(2);
    const MixingMaps m = make_mixing(p, r);
    const Vec s{1, -2, 0.5, 3};
    const Vec x = observe(s, Vec{9, 9, 9, 9}, m, 0.0, r, 0.0);
    const Vec cs = matvec(m.C, s);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], cs[i]);
}

TEST(Observe, Linearity) {
    EnvParams p;
    Rng r(3);
    const MixingMaps m = make_mixing(p, r);
    const Vec s1{1, 2, 3, 4}, s2{-0.5, 0.1, 0.0, 2.0}, d{0.3, 0.2, -0.1, 1.0};
    Vec s12(4);
    for (int i = 0; i < 4; ++i) s12[i] = s1[i] + s2[i];
    const Vec a = observe(s12, d, m, 2.0, r, 0.0), b = observe(s2, d, m, 2.0, r, 0.0);
    const Vec cs1 = matvec(m.C, s1);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i] - b[i], cs1[i], 1e-12);
}

TEST(Observe, ShapeMismatchThrows) {
    EnvParams p;
    Rng r(3);
    const MixingMaps m = make_mixing(p, r);
    EXPECT_THROW(observe(Vec(3, 0.0), Vec(4, 0.0), m, 1.0, r, 0.0), ShapeError);
}

TEST(Dataset, SplitArithmetic) {
    EnvParams p;
    p.T = 100;
    p.train_frac = 0.8;
    const Dataset ds = generate_dataset(p);
    EXPECT_EQ(ds.split, 80u);
    EXPECT_EQ(ds.X_train().rows(), 80u);
    EXPECT_EQ(ds.X_eval().rows(), 20u);
}

TEST(Dataset, BitIdenticalReplay) {
    EnvParams p;
    p.T = 500;
    p.sigma = 2.0;
    p.seed = 99;
    const Dataset a = generate_dataset(p), b = generate_dataset(p);
    EXPECT_EQ(a.X, b.X);
    EXPECT_EQ(a.S, b.S);
    EXPECT_EQ(a.Dd, b.Dd);
    EXPECT_EQ(dataset_checksum(a), dataset_checksum(b));
}

TEST(Dataset, NoExcitationGivesZeros) {
    EnvParams p;
    p.T = 50;
    p.sigma_w = p.sigma_v = p.sigma_e = 0.0;
    EnvStreams st(1);
    const MixingMaps m = make_mixing(p, st.mixing);
    const Dataset ds = generate_dataset_from(p, {Vec(4, 0.0), Vec(4, 0.0)}, st, m);
    for (double v : ds.X.data()) EXPECT_EQ(v, 0.0);
}

TEST(Dataset, StatesDoNotDependOnSigma) {
    EnvParams p;
    p.T = 300;
    const Dataset a = generate_dataset(p);
    p.sigma = 5.0;
    const Dataset b = generate_dataset(p);
    EXPECT_EQ(a.S, b.S);
    EXPECT_EQ(a.Dd, b.Dd);
}

TEST(Dataset, InvalidParamsRejected) {
    EnvParams p;
    p.alpha = 1.0;
    EXPECT_THROW(generate_dataset(p), std::invalid_argument);
    p = EnvParams{};
    p.n_s = 3;
    EXPECT_THROW(generate_dataset(p), std::invalid_argument);
    p = EnvParams{};
    p.train_frac = 1.0;
    EXPECT_THROW(generate_dataset(p), std::invalid_argument);
    p = EnvParams{};
    p.sigma_e = -0.1;
    EXPECT_THROW(generate_dataset(p), std::invalid_argument);
}

TEST(Snr, EqualVarianceIsZeroDb) {
    // Signal and noise terms built to have identical total variance.
    EnvParams p;
    p.n_s = p.n_d = 2;
    p.n_x = 2;
    p.sigma = 1.0;
    p.sigma_e = 0.0;
    Dataset ds;
    ds.S = Mat{{1, 0}, {-1, 0}, {1, 0}, {-1, 0}};
    ds.Dd = ds.S;
    MixingMaps m{Mat::identity(2), Mat::identity(2)};
    EXPECT_NEAR(compute_snr_db(ds, m, p), 0.0, 1e-12);
}

TEST(Snr, InfiniteWhenDenominatorVanishes) {
    EnvParams p;
    p.T = 200;
    p.sigma = 0.0;
    p.sigma_e = 0.0;
    EXPECT_TRUE(std::isinf(generate_dataset(p).snr_db));
    EXPECT_TRUE(std::isinf(analytic_snr_db(p)));
}

TEST(Snr, AnalyticScalingLaw) {
    EnvParams p;
    p.sigma_e = 0.0;
    p.sigma = 1.5;
    const double a = analytic_snr_db(p);
    p.sigma = 3.0;
    EXPECT_NEAR(a - analytic_snr_db(p), 20.0 * std::log10(2.0), 1e-12);
}

TEST(Snr, AnalyticHandComputed) {
    // n_s s2 / (n_d sigma^2 d2 + n_x e2) with the defaults at sigma = 1:
    // 4 * 0.01 / 0.0199 over 4 * 0.01 / 0.19 + 20 * 0.0025.
    EnvParams p;
    p.sigma = 1.0;
    const double num = 4.0 * 0.01 / (1.0 - 0.99 * 0.99);
    const double den = 4.0 * 0.01 / 0.19 + 20.0 * 0.0025;
    EXPECT_NEAR(analytic_snr_db(p), 10.0 * std::log10(num / den), 1e-12);
}

TEST(Snr, NonIncreasingInSigma) {
    EnvParams p;
    p.T = 2000;
    double prev = INFINITY;
    for (double s : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
        p.sigma = s;
        const double v = generate_dataset(p).snr_db;
        EXPECT_LE(v, prev);
        prev = v;
    }
}

TEST(Container, RoundTripIsExact) {
    EnvParams p;
    p.T = 64;
    p.sigma = 1.25;
    p.seed = 3;
    const Dataset ds = generate_dataset(p);
    std::stringstream ss;
    write_dataset(ss, ds);
    const Dataset back = read_dataset(ss);
    EXPECT_EQ(back.params, ds.params);
    EXPECT_EQ(back.X, ds.X);
    EXPECT_EQ(back.S, ds.S);
    EXPECT_EQ(back.Dd, ds.Dd);
    EXPECT_EQ(back.maps.C, ds.maps.C);
    EXPECT_EQ(back.split, ds.split);
    EXPECT_EQ(back.snr_db, ds.snr_db);
}

TEST(Container, RejectsGarbage) {
    std::stringstream ss("not a dataset");
    EXPECT_THROW(read_dataset(ss), std::runtime_error);
}

TEST(RealFormat, ShortestRoundTrip) {
    for (double v : {0.99, 1e-3, 0.1, 1.0 / 3.0, -2.5e-300, 6.0}) EXPECT_EQ(parse_real(format_real(v)), v);
    EXPECT_EQ(format_real(0.99), "0.99");
    EXPECT_TRUE(std::isinf(parse_real(format_real(INFINITY))));
}
