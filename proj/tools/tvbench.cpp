// Command-line front end: generate, train, sweep, scatter, plot.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tvbench/runner.hpp"

namespace fs = std::filesystem;
using namespace tvbench;

namespace {

SweepConfig load_config(const std::string& path) {
    if (path.empty() || path == "default") return SweepConfig{};
    return parse_config_file(path);
}

ModelSpec find_model(const SweepConfig& cfg, const std::string& name) {
    for (const auto& m : cfg.models)
        if (m.name == name) return m;
    if (auto b = builtin_model(name, cfg.train)) return *b;
    throw ConfigError("unknown model '" + name + "'");
}

Dataset make_cell_dataset(const SweepConfig& cfg, double sigma, std::uint64_t seed) {
    EnvParams p = cfg.env;
    p.sigma = sigma;
    p.seed = dataset_seed(seed);
    return generate_dataset(p);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tvbench: representation learning under structured distractor noise"};
    app.require_subcommand(1);

    std::string config;
    double sigma = 0.0;
    std::uint64_t seed = 1;
    std::string model;
    std::string out;

    auto* gen = app.add_subcommand("generate", "Write one dataset (container text format)");
    gen->add_option("--config", config, "Config file or 'default'");
    gen->add_option("--sigma", sigma, "Distractor scale")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", seed, "Base seed");
    gen->add_option("--out", out, "Output file")->required();
    std::string csv_prefix;
    gen->add_option("--csv", csv_prefix, "Also write <prefix>_S.csv and <prefix>_X.csv");

    auto* train = app.add_subcommand("train", "Fit one model on one cell and print its probe R2");
    train->add_option("--config", config, "Config file or 'default'");
    train->add_option("--model", model, "Model name")->required();
    train->add_option("--sigma", sigma, "Distractor scale")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", seed, "Base seed");
    std::size_t steps = 0;
    train->add_option("--steps", steps, "Override optimizer steps");
    std::string checkpoint;
    train->add_option("--checkpoint", checkpoint, "Write the fitted learner here");

    auto* sweep = app.add_subcommand("sweep", "Run the full grid and write records, curves and scatters");
    sweep->add_option("--config", config, "Config file or 'default'")->required();
    sweep->add_option("--out", out, "Output directory (overrides " + std::string(kOutputEnv) + " and config)");
    std::size_t threads = 0;
    bool threads_set = false;
    sweep->add_option("--threads", threads, "Worker threads (0 = all cores)")->each([&](const std::string&) {
        threads_set = true;
    });
    bool quiet = false;
    sweep->add_flag("--quiet", quiet, "No per-record progress");

    auto* scat = app.add_subcommand("scatter", "Scatter plot of two latent features over the eval split");
    scat->add_option("--config", config, "Config file or 'default'");
    scat->add_option("--model", model, "Model name")->required();
    scat->add_option("--sigma", sigma, "Distractor scale")->check(CLI::NonNegativeNumber);
    scat->add_option("--seed", seed, "Base seed");
    std::vector<std::size_t> pair{0, 1};
    scat->add_option("--pair", pair, "Feature indices i,j")->delimiter(',')->expected(2);
    scat->add_option("--out", out, "Output SVG")->required();
    scat->add_option("--steps", steps, "Override optimizer steps");
    std::string diag_csv;
    scat->add_option("--csv", diag_csv, "Also write the diagnostics table");

    auto* plot = app.add_subcommand("plot", "Curves from an existing records.csv");
    std::string records_path;
    plot->add_option("--csv", records_path, "records.csv")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", out, "Output directory (default: next to the CSV)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*gen) {
            const SweepConfig cfg = load_config(config);
            const Dataset ds = make_cell_dataset(cfg, sigma, seed);
            std::ofstream f(out);
            if (!f) throw std::runtime_error("cannot write '" + out + "'");
            write_dataset(f, ds);
            if (!csv_prefix.empty()) {
                std::ofstream s(csv_prefix + "_S.csv"), x(csv_prefix + "_X.csv");
                write_matrix_csv(s, ds.S, "s");
                write_matrix_csv(x, ds.X, "x");
            }
            std::printf("wrote %s  T=%zu  snr_db=%.3f  checksum=%016llx\n", out.c_str(), ds.length(), ds.snr_db,
                        static_cast<unsigned long long>(dataset_checksum(ds)));
        } else if (*train) {
            const SweepConfig cfg = load_config(config);
            ModelSpec spec = find_model(cfg, model);
            if (steps) spec.train.steps = steps;
            spec.train.seed = train_seed(seed, sigma, spec.name);
            const Dataset ds = make_cell_dataset(cfg, sigma, seed);
            const Learner l = fit(spec.kind, ds, spec.train);
            ProbeConfig pc;
            pc.with_intercept = cfg.probe_intercept;
            const ProbeResult pr = probe_eval(l, ds, pc);
            if (!checkpoint.empty()) {
                std::ofstream f(checkpoint);
                write_learner(f, l);
            }
            std::printf("model=%s sigma=%s seed=%llu snr_db=%.3f r2_eval=%.6f r2_train=%.6f\n", spec.name.c_str(),
                        fmt_g(sigma).c_str(), static_cast<unsigned long long>(seed), ds.snr_db, pr.r2_eval,
                        pr.r2_train);
        } else if (*sweep) {
            SweepConfig cfg = load_config(config);
            if (threads_set) cfg.threads = threads;
            const fs::path dir = resolve_output_dir(out, cfg);
            SweepProgress progress;
            if (!quiet)
                progress.on_record = [](const RunRecord& r, std::size_t done, std::size_t total) {
                    std::fprintf(stderr, "[%zu/%zu] %-14s sigma=%-4s seed=%llu r2=%.3f (%.0f ms)\n", done, total,
                                 r.model.c_str(), fmt_g(r.sigma).c_str(), static_cast<unsigned long long>(r.seed),
                                 r.r2_eval, r.wall_ms);
                };
            const SweepResult res = run_sweep(cfg, progress);
            write_sweep_outputs(cfg, res, dir);
            std::printf("wrote %zu records to %s\n", res.records.size(), (dir / "records.csv").string().c_str());
        } else if (*scat) {
            const SweepConfig cfg = load_config(config);
            ModelSpec spec = find_model(cfg, model);
            if (steps) spec.train.steps = steps;
            spec.train.seed = train_seed(seed, sigma, spec.name);
            const Dataset ds = make_cell_dataset(cfg, sigma, seed);
            const Learner l = fit(spec.kind, ds, spec.train);
            const DiagnosticsTable t = latent_diagnostics(l, ds);
            write_file(out, scatter_svg(t, pair[0], pair[1], spec.name + ", sigma = " + fmt_g(sigma)));
            if (!diag_csv.empty()) {
                std::ofstream f(diag_csv);
                write_diagnostics_csv(f, t);
            }
            std::printf("wrote %s\n", out.c_str());
        } else if (*plot) {
            std::ifstream f(records_path);
            const auto recs = read_records_csv(f);
            const fs::path dir = out.empty() ? fs::path(records_path).parent_path() : fs::path(out);
            emit_curves(recs, dir.empty() ? fs::path(".") : dir);
            std::printf("wrote curves for %zu records\n", recs.size());
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
