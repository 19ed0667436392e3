#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tvbench/runner.hpp"

using namespace tvbench;
namespace fs = std::filesystem;

namespace {

SweepConfig parse(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

std::string csv_of(const std::vector<RunRecord>& recs) {
    std::ostringstream os;
    write_records_csv(os, recs);
    return os.str();
}

const char* kTiny =
    "env.T = 400\n"
    "sigmas = 0, 2\n"
    "seeds = 1, 2\n"
    "train.steps = 30\n"
    "train.batch = 32\n"
    "train.rounds = 3\n"
    "scatter_sigmas = 0\n"
    "models = vae, jepa, randproj, pca_5_8, gatedpredae\n";

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tvbench_runner_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Config, EmptyGivesDefaults) {
    const SweepConfig c = parse("");
    EXPECT_EQ(c, SweepConfig{});
    EXPECT_EQ(c.sigmas, (std::vector<double>{0, 1, 2, 3, 4, 5, 6, 8}));
    EXPECT_EQ(c.seeds.size(), 5u);
    EXPECT_EQ(c.models.size(), default_model_names().size());
    EXPECT_EQ(c.train.steps, 20000u);
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
    EXPECT_EQ(parse_config_file(std::string(TVBENCH_SOURCE_DIR) + "/configs/default.cfg"), SweepConfig{});
}

TEST(Config, DecreasingSigmasRejected) {
    try {
        parse("sigmas = 3, 1\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("strictly increasing"), std::string::npos);
    }
}

TEST(Config, ErrorsNameTheKey) {
    for (const char* bad : {"nonsense = 1\n", "env.bogus = 2\n", "train.lr = fast\n", "model.vae.wings = 2\n"}) {
        try {
            parse(bad);
            FAIL() << bad;
        } catch (const ConfigError& e) {
            const std::string key = std::string(bad).substr(0, std::string(bad).find(' '));
            EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
        }
    }
    EXPECT_THROW(parse("seeds = 1, 1\n"), ConfigError);
    EXPECT_THROW(parse("sigmas = \n"), ConfigError);
    EXPECT_THROW(parse("threads = 2\nthreads = 3\n"), ConfigError);
    EXPECT_THROW(parse("no equals sign\n"), ConfigError);
    EXPECT_THROW(parse("models = mystery\n"), ConfigError);
    EXPECT_THROW(parse("models = vae\nmodel.jepa.lr = 0.1\n"), ConfigError);
    EXPECT_THROW(parse("scatter_sigmas = 7\n"), ConfigError);
    EXPECT_THROW(parse("train.slice_start = 2\n"), ConfigError);
}

TEST(Config, OverridesAndCustomModels) {
    const SweepConfig c = parse(
        "train.lr = 0.002\n"
        "models = vae, wide_pca\n"
        "model.vae.beta = 0\n"
        "model.wide_pca.kind = pca\n"
        "model.wide_pca.slice_start = 8\n");
    ASSERT_EQ(c.models.size(), 2u);
    EXPECT_EQ(c.models[0].train.beta, 0.0);
    EXPECT_EQ(c.models[0].train.lr, 0.002);
    EXPECT_EQ(c.models[1].kind, Kind::pca);
    EXPECT_EQ(c.models[1].train.slice_start, 8u);
}

TEST(Config, SerializeRoundTrip) {
    for (const std::string& text : {std::string(""), std::string(kTiny),
                                   std::string("models = vae, wide_pca\nmodel.wide_pca.kind = pca\n"
                                               "model.wide_pca.slice_start = 8\nmodel.vae.tau = 0.5\n"
                                               "env.sigma_e = 0.01\nrecord_wall_time = true\n")}) {
        const SweepConfig a = parse(text);
        const std::string s = serialize_config(a);
        const SweepConfig b = parse(s);
        EXPECT_EQ(a, b);
        EXPECT_EQ(serialize_config(b), s);
    }
}

TEST(Seeds, KeyedByValueNotPosition) {
    EXPECT_EQ(train_seed(1, 6.0, "vae"), train_seed(1, 6.0, "vae"));
    EXPECT_NE(train_seed(1, 6.0, "vae"), train_seed(1, 6.0, "jepa"));
    EXPECT_NE(train_seed(1, 6.0, "vae"), train_seed(2, 6.0, "vae"));
    EXPECT_NE(train_seed(1, 6.0, "vae"), train_seed(1, 5.0, "vae"));
    EXPECT_NE(dataset_seed(1), dataset_seed(2));
}

TEST(Sweep, OneCellOneRecord) {
    SweepConfig c = parse("env.T = 300\nsigmas = 1\nseeds = 4\nmodels = randproj\nscatter_sigmas = 1\n");
    const SweepResult r = run_sweep(c);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0].model, "randproj");
    EXPECT_EQ(r.records[0].seed, 4u);
    EXPECT_EQ(r.records[0].flags, "ok");
    EXPECT_EQ(r.records[0].wall_ms, 0.0);
    EXPECT_EQ(r.cells.size(), 1u);
    EXPECT_EQ(r.scatters.size(), 1u);
}

TEST(Sweep, DeterministicAndParallelMatchesSerial) {
    SweepConfig c = parse(kTiny);
    const std::string a = csv_of(run_sweep(c).records);
    const std::string b = csv_of(run_sweep(c).records);
    c.threads = 3;
    const std::string p = csv_of(run_sweep(c).records);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, p);
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 5 * 2 * 2);
}

TEST(Sweep, AddingAModelLeavesOthersUntouched) {
    SweepConfig small = parse("env.T = 400\nsigmas = 2\nseeds = 1\ntrain.steps = 20\ntrain.batch = 32\n"
                              "models = jepa\nscatter_sigmas = 2\n");
    SweepConfig big = parse("env.T = 400\nsigmas = 2\nseeds = 1\ntrain.steps = 20\ntrain.batch = 32\n"
                            "models = vae, jepa\nscatter_sigmas = 2\n");
    EXPECT_EQ(run_sweep(small).records[0], run_sweep(big).records[1]);
}

TEST(Sweep, CellsShareOneDataset) {
    const SweepConfig c = parse(kTiny);
    const SweepResult r = run_sweep(c);
    ASSERT_EQ(r.cells.size(), 4u);
    // Per-record snr comes from the cell dataset.
    for (const auto& rec : r.records) {
        const auto it = std::find_if(r.cells.begin(), r.cells.end(), [&](const CellInfo& ci) {
            return ci.sigma == rec.sigma && ci.seed == rec.seed;
        });
        ASSERT_NE(it, r.cells.end());
        EXPECT_EQ(it->snr_db, rec.snr_db);
    }
}

TEST(Sweep, SnrNearAnalyticForEveryRecord) {
    const SweepConfig c = parse("env.T = 10000\nsigmas = 1, 4\nseeds = 1\nmodels = randproj\nscatter_sigmas = 1\n");
    for (const auto& r : run_sweep(c).records) {
        EnvParams p = c.env;
        p.sigma = r.sigma;
        EXPECT_NEAR(r.snr_db, analytic_snr_db(p), 0.5);
    }
}

TEST(Sweep, DivergedRunIsFlagged) {
    const SweepConfig c = parse("env.T = 300\nsigmas = 1\nseeds = 1\nmodels = vae, randproj\nscatter_sigmas = 1\n"
                          "train.steps = 5\nmodel.vae.lr = 1e308\n");
    const SweepResult r = run_sweep(c);
    ASSERT_EQ(r.records.size(), 2u);
    EXPECT_EQ(r.records[0].flags, "diverged");
    EXPECT_TRUE(std::isnan(r.records[0].r2_eval));
    EXPECT_EQ(r.records[1].flags, "ok");
}

TEST(Records, CsvRoundTrip) {
    std::vector<RunRecord> recs{{"vae", 6, 1, -3.25, 0.05, 0.07, 4, 0, "clipped"},
                                {"jepa", 0, 2, INFINITY, 0.99, 0.98, 4, 0, "ok"},
                                {"x", 1, 3, 1.5, NAN, NAN, 4, 0, "diverged"}};
    std::istringstream is(csv_of(recs));
    const auto back = read_records_csv(is);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back[0], recs[0]);
    EXPECT_EQ(back[1], recs[1]);
    EXPECT_TRUE(std::isnan(back[2].r2_eval));
    std::istringstream bad("model,sigma\n");
    EXPECT_THROW(read_records_csv(bad), std::runtime_error);
}

TEST(Curves, HandAggregation) {
    const std::vector<RunRecord> recs{{"a", 0, 1, 10, 0.2, 0, 4, 0, "ok"},
                                      {"a", 0, 2, 12, 0.6, 0, 4, 0, "ok"},
                                      {"a", 0, 3, 14, 0.7, 0, 4, 0, "ok"},
                                      {"a", 2, 1, 1, 0.1, 0, 4, 0, "ok"},
                                      {"b", 0, 1, 10, NAN, 0, 4, 0, "diverged"},
                                      {"b", 0, 2, 12, 0.4, 0, 4, 0, "ok"}};
    const auto pts = aggregate(recs);
    ASSERT_EQ(pts.size(), 3u);
    EXPECT_EQ(pts[0].model, "a");
    EXPECT_EQ(pts[0].n, 3u);
    EXPECT_NEAR(pts[0].r2_mean, 0.5, 1e-15);
    EXPECT_EQ(pts[0].r2_min, 0.2);
    EXPECT_EQ(pts[0].r2_max, 0.7);
    EXPECT_NEAR(pts[0].snr_db, 12.0, 1e-15);
    EXPECT_EQ(pts[1].sigma, 2.0);
    EXPECT_EQ(pts[2].model, "b");
    EXPECT_EQ(pts[2].n, 1u);
    EXPECT_EQ(pts[2].r2_mean, 0.4);
    EXPECT_THROW(aggregate({}), std::invalid_argument);

    std::ostringstream os;
    write_curves_csv(os, pts);
    EXPECT_NE(os.str().find("a,0,12,3,0.5,0.2,0.7\n"), std::string::npos);
}

TEST(Curves, SinglePointHasNoBand) {
    const auto pts = aggregate({{"a", 0, 1, 10, 0.3, 0, 4, 0, "ok"}});
    const std::string s = curves_svg(pts, CurveAxis::sigma);
    EXPECT_EQ(s.find("<polygon"), std::string::npos);
    EXPECT_NE(s.find("<circle"), std::string::npos);
}

TEST(Curves, ConstantIsFlatLine) {
    std::vector<RunRecord> recs;
    for (double s : {0.0, 1.0, 2.0, 4.0}) recs.push_back({"flat", s, 1, 0, 0.5, 0, 4, 0, "ok"});
    const std::string svg = curves_svg(aggregate(recs), CurveAxis::sigma);
    const auto at = svg.find("<polyline");
    ASSERT_NE(at, std::string::npos);
    const auto pts_at = svg.find("points=\"", at) + 8;
    std::istringstream pts(svg.substr(pts_at, svg.find('"', pts_at) - pts_at));
    std::string pair;
    std::set<std::string> ys;
    while (pts >> pair) ys.insert(pair.substr(pair.find(',') + 1));
    EXPECT_EQ(ys.size(), 1u);
    EXPECT_EQ(svg, curves_svg(aggregate(recs), CurveAxis::sigma));
}

TEST(Curves, EmitWritesFiles) {
    const fs::path dir = scratch_dir("curves");
    emit_curves({{"a", 0, 1, 10, 0.3, 0, 4, 0, "ok"}, {"a", 1, 1, 5, 0.2, 0, 4, 0, "ok"}}, dir);
    for (const char* f : {"curves.csv", "curves_sigma.svg", "curves_snr.svg"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
    fs::remove_all(dir);
}

TEST(Scatter, DeterministicAndBounded) {
    Rng r(1);
    const DiagnosticsTable t = diagnostics_from_latents(gauss_mat(r, 50, 4, 1.0));
    EXPECT_EQ(scatter_svg(t, 0, 1, "x"), scatter_svg(t, 0, 1, "x"));
    EXPECT_THROW(scatter_svg(t, 0, 4, "x"), std::out_of_range);
    EXPECT_EQ(scatter_filename("pca_1_4", 6.0), "scatter_pca_1_4_6.svg");
}

TEST(Scatter, CollapsedLatentsSitAtOrigin) {
    const DiagnosticsTable t = diagnostics_from_latents(Mat(20, 4));
    const std::string s = scatter_svg(t, 0, 1, "collapsed");
    // Every marker shares one position.
    std::set<std::string> spots;
    for (auto at = s.find("<circle"); at != std::string::npos; at = s.find("<circle", at + 1))
        spots.insert(s.substr(at, s.find("r=", at) - at));
    EXPECT_EQ(spots.size(), 1u);
}

TEST(Output, PrecedenceFlagThenEnvThenConfig) {
    SweepConfig c;
    c.output_dir = "from_config";
    ::unsetenv(kOutputEnv);
    EXPECT_EQ(resolve_output_dir("", c), "from_config");
    ::setenv(kOutputEnv, "from_env", 1);
    EXPECT_EQ(resolve_output_dir("", c), "from_env");
    EXPECT_EQ(resolve_output_dir("from_flag", c), "from_flag");
    ::unsetenv(kOutputEnv);
}

TEST(Output, SweepWritesAllArtifacts) {
    const SweepConfig c = parse(kTiny);
    const SweepResult r = run_sweep(c);
    const fs::path dir = scratch_dir("outputs");
    write_sweep_outputs(c, r, dir);
    for (const char* f : {"records.csv", "curves.csv", "curves_sigma.svg", "curves_snr.svg", "meta.txt", "timing.csv",
                          "scatter_jepa_0.svg", "scatter_pca_5_8_0.svg"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_FALSE(fs::exists(dir / "scatter_jepa_2.svg"));
    std::ifstream meta(dir / "meta.txt");
    std::stringstream ms;
    ms << meta.rdbuf();
    EXPECT_NE(ms.str().find("train.steps = 30"), std::string::npos);
    EXPECT_NE(ms.str().find("[cells]"), std::string::npos);
    fs::remove_all(dir);
}

TEST(ParallelFor, PropagatesExceptions) {
    EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                     if (i == 7) throw std::runtime_error("boom");
                 }),
                 std::runtime_error);
    std::vector<int> hit(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hit[i] += 1; });
    EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 100);
}
