#pragma once

// Sweep orchestration: config parsing, the (model x sigma x seed) grid, CSV
// records and the curve / scatter figures.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tvbench/env.hpp"
#include "tvbench/eval.hpp"
#include "tvbench/models.hpp"
#include "tvbench/svg.hpp"

namespace tvbench {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputEnv = "TVBENCH_OUT";

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ModelSpec {
    std::string name;
    Kind kind = Kind::vae;
    TrainConfig train;

    bool operator==(const ModelSpec&) const = default;
};

struct SweepConfig {
    EnvParams env;  // sigma and seed are set per cell
    std::vector<double> sigmas{0, 1, 2, 3, 4, 5, 6, 8};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    TrainConfig train;  // defaults shared by all models
    std::vector<ModelSpec> models;
    std::vector<double> scatter_sigmas{0, 6};
    std::string output_dir = "out";
    std::size_t threads = 0;  // 0 = hardware concurrency; records do not depend on it
    bool record_wall_time = false;
    bool probe_intercept = false;

    SweepConfig();
    void validate() const;
    bool operator==(const SweepConfig&) const = default;
};

inline const std::vector<std::string>& default_model_names() {
    static const std::vector<std::string> names{"vae",      "jepa",     "predvae", "latentpredvae", "predenc",
                                                "randproj", "pca_1_4", "pca_5_8", "gatedpredae"};
    return names;
}

/// Kind and preset overrides for a built-in model name, if it is one.
inline std::optional<ModelSpec> builtin_model(const std::string& name, const TrainConfig& base) {
    ModelSpec m{name, Kind::vae, base};
    if (name == "pca_1_4") {
        m.kind = Kind::pca;
        m.train.slice_start = 0;
        return m;
    }
    if (name == "pca_5_8") {
        m.kind = Kind::pca;
        m.train.slice_start = 4;
        return m;
    }
    for (Kind k : kAllKinds)
        if (name == to_string(k)) {
            m.kind = k;
            return m;
        }
    return std::nullopt;
}

inline SweepConfig::SweepConfig() {
    for (const auto& n : default_model_names()) models.push_back(*builtin_model(n, train));
}

// ---------------------------------------------------------------------------
// Key-value format
//
//   # comment
//   key = value
//
// Lists are comma separated. Keys:
//   env.<field>                 EnvParams fields except sigma and seed
//   sigmas, seeds, models, scatter_sigmas, output_dir, threads,
//   record_wall_time, probe.intercept
//   train.<field>               default TrainConfig for every model
//   model.<name>.<field>        per-model override; model.<name>.kind is
//                               required for names that are not built in

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double to_real(const std::string& key, const std::string& v) {
    try {
        return parse_real(v);
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' is out of range: '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

inline std::string fmt_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
    return s;
}

inline std::string fmt_list(const std::vector<std::uint64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline const std::vector<std::string>& train_keys() {
    static const std::vector<std::string> keys{"latent_dim", "hidden",  "steps",       "batch",
                                               "rule",       "lr",      "clip_norm",   "beta",
                                               "lambda_pred", "tau",    "pred_identity_init", "rounds",
                                               "predenc_stop_target", "gated_width", "slice_start"};
    return keys;
}

inline std::string get_train(const TrainConfig& c, const std::string& key) {
    if (key == "latent_dim") return std::to_string(c.latent_dim);
    if (key == "hidden") return std::to_string(c.hidden);
    if (key == "steps") return std::to_string(c.steps);
    if (key == "batch") return std::to_string(c.batch);
    if (key == "rule") return c.rule == UpdateRule::adam ? "adam" : "sgd";
    if (key == "lr") return format_real(c.lr);
    if (key == "clip_norm") return format_real(c.clip_norm);
    if (key == "beta") return format_real(c.beta);
    if (key == "lambda_pred") return format_real(c.lambda_pred);
    if (key == "tau") return format_real(c.tau);
    if (key == "pred_identity_init") return fmt_bool(c.pred_identity_init);
    if (key == "rounds") return std::to_string(c.rounds);
    if (key == "predenc_stop_target") return fmt_bool(c.predenc_stop_target);
    if (key == "gated_width") return std::to_string(c.gated_width);
    if (key == "slice_start") return std::to_string(c.slice_start);
    throw ConfigError("config: unknown key '" + key + "'");
}

inline void set_train(TrainConfig& c, const std::string& key, const std::string& full, const std::string& v) {
    if (key == "latent_dim") c.latent_dim = to_uint(full, v);
    else if (key == "hidden") c.hidden = to_uint(full, v);
    else if (key == "steps") c.steps = to_uint(full, v);
    else if (key == "batch") c.batch = to_uint(full, v);
    else if (key == "rule") {
        if (v == "adam") c.rule = UpdateRule::adam;
        else if (v == "sgd") c.rule = UpdateRule::sgd;
        else throw ConfigError("config: '" + full + "' expects adam or sgd, got '" + v + "'");
    }
    else if (key == "lr") c.lr = to_real(full, v);
    else if (key == "clip_norm") c.clip_norm = to_real(full, v);
    else if (key == "beta") c.beta = to_real(full, v);
    else if (key == "lambda_pred") c.lambda_pred = to_real(full, v);
    else if (key == "tau") c.tau = to_real(full, v);
    else if (key == "pred_identity_init") c.pred_identity_init = to_bool(full, v);
    else if (key == "rounds") c.rounds = to_uint(full, v);
    else if (key == "predenc_stop_target") c.predenc_stop_target = to_bool(full, v);
    else if (key == "gated_width") c.gated_width = to_uint(full, v);
    else if (key == "slice_start") c.slice_start = to_uint(full, v);
    else throw ConfigError("config: unknown key '" + full + "'");
}

inline const std::vector<std::string>& env_keys() {
    static const std::vector<std::string> keys{"n_s",     "n_d",     "n_x",     "alpha", "omega",
                                               "sigma_w", "sigma_v", "sigma_e", "T",     "train_frac"};
    return keys;
}

inline std::string get_env(const EnvParams& p, const std::string& key) {
    if (key == "n_s") return std::to_string(p.n_s);
    if (key == "n_d") return std::to_string(p.n_d);
    if (key == "n_x") return std::to_string(p.n_x);
    if (key == "alpha") return format_real(p.alpha);
    if (key == "omega") return format_real(p.omega);
    if (key == "sigma_w") return format_real(p.sigma_w);
    if (key == "sigma_v") return format_real(p.sigma_v);
    if (key == "sigma_e") return format_real(p.sigma_e);
    if (key == "T") return std::to_string(p.T);
    if (key == "train_frac") return format_real(p.train_frac);
    throw ConfigError("config: unknown key 'env." + key + "'");
}

inline void set_env(EnvParams& p, const std::string& key, const std::string& full, const std::string& v) {
    if (key == "n_s") p.n_s = to_uint(full, v);
    else if (key == "n_d") p.n_d = to_uint(full, v);
    else if (key == "n_x") p.n_x = to_uint(full, v);
    else if (key == "alpha") p.alpha = to_real(full, v);
    else if (key == "omega") p.omega = to_real(full, v);
    else if (key == "sigma_w") p.sigma_w = to_real(full, v);
    else if (key == "sigma_v") p.sigma_v = to_real(full, v);
    else if (key == "sigma_e") p.sigma_e = to_real(full, v);
    else if (key == "T") p.T = to_uint(full, v);
    else if (key == "train_frac") p.train_frac = to_real(full, v);
    else throw ConfigError("config: unknown key '" + full + "'");
}

}  // namespace detail

inline void validate_train(const TrainConfig& c, const std::string& who) {
    auto fail = [&](const std::string& what) { throw ConfigError("config: " + who + ": " + what); };
    if (c.latent_dim == 0) fail("latent_dim must be positive");
    if (c.batch == 0) fail("batch must be positive");
    if (!(c.lr > 0.0)) fail("lr must be positive");
    if (!(c.clip_norm > 0.0)) fail("clip_norm must be positive");
    if (!(c.beta >= 0.0)) fail("beta must be >= 0");
    if (!(c.lambda_pred >= 0.0)) fail("lambda_pred must be >= 0");
    if (!(c.tau >= 0.0 && c.tau <= 1.0)) fail("tau must lie in [0, 1]");
}

inline void SweepConfig::validate() const {
    if (sigmas.empty()) throw ConfigError("config: sigmas must not be empty");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!(sigmas[i] >= 0.0) || !std::isfinite(sigmas[i]))
            throw ConfigError("config: sigmas must be finite and non-negative");
        if (i > 0 && !(sigmas[i] > sigmas[i - 1])) throw ConfigError("config: sigmas must be strictly increasing");
    }
    if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("config: seeds must be distinct");
    if (models.empty()) throw ConfigError("config: models must not be empty");
    std::set<std::string> names;
    for (const auto& m : models) {
        if (!names.insert(m.name).second) throw ConfigError("config: models: duplicate name '" + m.name + "'");
        validate_train(m.train, "model." + m.name);
        if (m.kind == Kind::pca && m.train.slice_start + m.train.latent_dim > env.n_x)
            throw ConfigError("config: model." + m.name + ": PCA slice exceeds env.n_x");
        if (m.kind == Kind::gatedpredae && m.train.gated_width <= m.train.latent_dim)
            throw ConfigError("config: model." + m.name + ": gated_width must exceed latent_dim");
    }
    validate_train(train, "train");
    for (double s : scatter_sigmas)
        if (std::find(sigmas.begin(), sigmas.end(), s) == sigmas.end())
            throw ConfigError("config: scatter_sigmas entry " + format_real(s) + " is not in sigmas");
    try {
        env.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: env: ") + e.what());
    }
}

inline SweepConfig parse_config(std::istream& is) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + ": expected 'key = value'");
        kv.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }

    SweepConfig c;
    std::vector<std::string> names = default_model_names();
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> overrides;
    std::set<std::string> seen;
    for (const auto& [key, v] : kv) {
        if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
        if (key.rfind("env.", 0) == 0) detail::set_env(c.env, key.substr(4), key, v);
        else if (key.rfind("train.", 0) == 0) {
            const std::string sub = key.substr(6);
            if (sub == "slice_start") throw ConfigError("config: 'train.slice_start' is per model only");
            detail::set_train(c.train, sub, key, v);
        } else if (key.rfind("model.", 0) == 0) {
            const auto dot = key.find('.', 6);
            if (dot == std::string::npos) throw ConfigError("config: malformed key '" + key + "'");
            overrides[key.substr(6, dot - 6)].emplace_back(key.substr(dot + 1), v);
        } else if (key == "sigmas") {
            c.sigmas.clear();
            for (const auto& s : detail::split_list(v)) c.sigmas.push_back(detail::to_real(key, s));
        } else if (key == "seeds") {
            c.seeds.clear();
            for (const auto& s : detail::split_list(v)) c.seeds.push_back(detail::to_uint(key, s));
        } else if (key == "scatter_sigmas") {
            c.scatter_sigmas.clear();
            for (const auto& s : detail::split_list(v)) c.scatter_sigmas.push_back(detail::to_real(key, s));
        } else if (key == "models") names = detail::split_list(v);
        else if (key == "output_dir") c.output_dir = v;
        else if (key == "threads") c.threads = detail::to_uint(key, v);
        else if (key == "record_wall_time") c.record_wall_time = detail::to_bool(key, v);
        else if (key == "probe.intercept") c.probe_intercept = detail::to_bool(key, v);
        else throw ConfigError("config: unknown key '" + key + "'");
    }

    c.models.clear();
    for (const auto& name : names) {
        auto preset = builtin_model(name, c.train);
        ModelSpec m = preset ? *preset : ModelSpec{name, Kind::vae, c.train};
        bool has_kind = preset.has_value();
        auto it = overrides.find(name);
        if (it != overrides.end()) {
            for (const auto& [sub, v] : it->second)
                if (sub == "kind") {
                    try {
                        m.kind = kind_from_string(v);
                    } catch (const std::invalid_argument&) {
                        throw ConfigError("config: 'model." + name + ".kind': unknown kind '" + v + "'");
                    }
                    has_kind = true;
                }
            for (const auto& [sub, v] : it->second)
                if (sub != "kind") detail::set_train(m.train, sub, "model." + name + "." + sub, v);
            overrides.erase(it);
        }
        if (!has_kind) throw ConfigError("config: model '" + name + "' is not built in; set model." + name + ".kind");
        c.models.push_back(std::move(m));
    }
    if (!overrides.empty())
        throw ConfigError("config: overrides for model '" + overrides.begin()->first + "' which is not in models");
    c.validate();
    return c;
}

inline SweepConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    return parse_config(in);
}

/// Full resolved config; parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const SweepConfig& c) {
    std::ostringstream os;
    for (const auto& k : detail::env_keys()) os << "env." << k << " = " << detail::get_env(c.env, k) << '\n';
    os << "sigmas = " << detail::fmt_list(c.sigmas) << '\n';
    os << "seeds = " << detail::fmt_list(c.seeds) << '\n';
    os << "scatter_sigmas = " << detail::fmt_list(c.scatter_sigmas) << '\n';
    os << "output_dir = " << c.output_dir << '\n';
    os << "threads = " << c.threads << '\n';
    os << "record_wall_time = " << detail::fmt_bool(c.record_wall_time) << '\n';
    os << "probe.intercept = " << detail::fmt_bool(c.probe_intercept) << '\n';
    for (const auto& k : detail::train_keys())
        if (k != "slice_start") os << "train." << k << " = " << detail::get_train(c.train, k) << '\n';
    os << "models = ";
    for (std::size_t i = 0; i < c.models.size(); ++i) os << (i ? "," : "") << c.models[i].name;
    os << '\n';
    for (const auto& m : c.models) {
        auto preset = builtin_model(m.name, c.train);
        const ModelSpec base = preset ? *preset : ModelSpec{m.name, m.kind, c.train};
        if (!preset || preset->kind != m.kind) os << "model." << m.name << ".kind = " << to_string(m.kind) << '\n';
        for (const auto& k : detail::train_keys())
            if (detail::get_train(m.train, k) != detail::get_train(base.train, k))
                os << "model." << m.name << '.' << k << " = " << detail::get_train(m.train, k) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Seeds
//
// Every random stream of a cell is keyed by values, not positions, so adding
// a model or a sigma leaves the other cells untouched:
//   dataset  mix64(base_seed, fnv1a("dataset"))           (shared across sigma)
//   training mix64(base_seed, bits(sigma), fnv1a(model name), fnv1a("train"))

inline std::uint64_t dataset_seed(std::uint64_t base_seed) { return mix64({base_seed, fnv1a("dataset")}); }

inline std::uint64_t train_seed(std::uint64_t base_seed, double sigma, const std::string& model) {
    return mix64({base_seed, std::bit_cast<std::uint64_t>(sigma), fnv1a(model), fnv1a("train")});
}

// ---------------------------------------------------------------------------
// Records

struct RunRecord {
    std::string model;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    double snr_db = 0.0;
    double r2_eval = 0.0;
    double r2_train = 0.0;
    std::size_t latent_dim = 0;
    double wall_ms = 0.0;
    std::string flags;  // '|'-separated subset of collapsed, clipped, degenerate, diverged; "ok" if none

    bool operator==(const RunRecord&) const = default;
};

inline const char* kRecordHeader = "model,sigma,seed,snr_db,r2_eval,r2_train,latent_dim,wall_ms,flags";

inline std::string fmt_g(double v, int digits = 10) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline void write_records_csv(std::ostream& os, const std::vector<RunRecord>& recs) {
    os << kRecordHeader << '\n';
    for (const auto& r : recs)
        os << r.model << ',' << fmt_g(r.sigma) << ',' << r.seed << ',' << fmt_g(r.snr_db) << ','
           << fmt_g(r.r2_eval) << ',' << fmt_g(r.r2_train) << ',' << r.latent_dim << ',' << fmt_g(r.wall_ms, 6)
           << ',' << r.flags << '\n';
}

inline std::vector<RunRecord> read_records_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || detail::trim(line) != kRecordHeader)
        throw std::runtime_error("records: expected header '" + std::string(kRecordHeader) + "'");
    std::vector<RunRecord> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() == 8) f.emplace_back();
        if (f.size() != 9) throw std::runtime_error("records: line " + std::to_string(lineno) + ": expected 9 fields");
        try {
            RunRecord r;
            r.model = f[0];
            r.sigma = parse_real(f[1]);
            r.seed = std::stoull(f[2]);
            r.snr_db = parse_real(f[3]);
            r.r2_eval = parse_real(f[4]);
            r.r2_train = parse_real(f[5]);
            r.latent_dim = std::stoul(f[6]);
            r.wall_ms = parse_real(f[7]);
            r.flags = f[8];
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::runtime_error("records: line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sweep

struct CellInfo {
    double sigma = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t dataset_seed = 0;
    std::uint64_t checksum = 0;
    double snr_db = 0.0;
};

struct ScatterData {
    std::string model;
    double sigma = 0.0;
    DiagnosticsTable table;
};

struct SweepResult {
    std::vector<RunRecord> records;  // model-major, then sigma, then seed
    std::vector<CellInfo> cells;     // sigma-major, then seed
    std::vector<ScatterData> scatters;
    std::vector<double> measured_ms;  // per record, always filled
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions from
/// any task are rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(err_mu);
                    if (!err) err = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

struct SweepProgress {
    std::function<void(const RunRecord&, std::size_t done, std::size_t total)> on_record;
};

inline SweepResult run_sweep(const SweepConfig& cfg, const SweepProgress& progress = {}) {
    cfg.validate();
    const std::size_t ns = cfg.sigmas.size(), nseed = cfg.seeds.size(), nm = cfg.models.size();
    SweepResult out;
    out.cells.resize(ns * nseed);
    std::vector<Dataset> data(ns * nseed);
    parallel_for(ns * nseed, cfg.threads, [&](std::size_t c) {
        EnvParams p = cfg.env;
        p.sigma = cfg.sigmas[c / nseed];
        p.seed = dataset_seed(cfg.seeds[c % nseed]);
        data[c] = generate_dataset(p);
        out.cells[c] = {p.sigma, cfg.seeds[c % nseed], p.seed, dataset_checksum(data[c]), data[c].snr_db};
    });

    const std::size_t total = nm * ns * nseed;
    out.records.resize(total);
    out.measured_ms.resize(total);
    std::vector<std::optional<ScatterData>> scatter(total);
    std::mutex progress_mu;
    std::size_t done = 0;
    ProbeConfig probe;
    probe.with_intercept = cfg.probe_intercept;
    parallel_for(total, cfg.threads, [&](std::size_t i) {
        const std::size_t mi = i / (ns * nseed), c = i % (ns * nseed);
        const ModelSpec& spec = cfg.models[mi];
        const Dataset& ds = data[c];
        RunRecord& r = out.records[i];
        r.model = spec.name;
        r.sigma = cfg.sigmas[c / nseed];
        r.seed = cfg.seeds[c % nseed];
        r.snr_db = ds.snr_db;
        r.latent_dim = spec.train.latent_dim;
        TrainConfig tc = spec.train;
        tc.seed = train_seed(r.seed, r.sigma, spec.name);
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::string> flags;
        try {
            const Learner l = fit(spec.kind, ds, tc);
            const ProbeResult pr = probe_eval(l, ds, probe);
            r.r2_eval = pr.r2_eval;
            r.r2_train = pr.r2_train;
            if (l.diag.collapsed) flags.emplace_back("collapsed");
            if (l.diag.clip_events > 0) flags.emplace_back("clipped");
            if (pr.degenerate) flags.emplace_back("degenerate");
            if (c % nseed == 0 &&
                std::find(cfg.scatter_sigmas.begin(), cfg.scatter_sigmas.end(), r.sigma) != cfg.scatter_sigmas.end())
                scatter[i] = ScatterData{spec.name, r.sigma, latent_diagnostics(l, ds)};
        } catch (const TrainingDiverged&) {
            r.r2_eval = r.r2_train = std::nan("");
            flags.emplace_back("diverged");
        } catch (const NumericError&) {
            r.r2_eval = r.r2_train = std::nan("");
            flags.emplace_back("diverged");
        }
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out.measured_ms[i] = ms;
        r.wall_ms = cfg.record_wall_time ? ms : 0.0;
        for (std::size_t f = 0; f < flags.size(); ++f) r.flags += (f ? "|" : "") + flags[f];
        if (r.flags.empty()) r.flags = "ok";
        if (progress.on_record) {
            std::lock_guard lock(progress_mu);
            RunRecord shown = r;
            shown.wall_ms = ms;
            progress.on_record(shown, ++done, total);
        }
    });
    for (auto& s : scatter)
        if (s) out.scatters.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation and figures

struct CurvePoint {
    std::string model;
    double sigma = 0.0;
    double snr_db = 0.0;  // mean over seeds
    std::size_t n = 0;    // finite r2 values aggregated
    double r2_mean = 0.0, r2_min = 0.0, r2_max = 0.0;
};

/// Mean, min and max of r2_eval over seeds per (model, sigma), models in
/// first-appearance order and sigma ascending. NaN r2 values are skipped.
inline std::vector<CurvePoint> aggregate(const std::vector<RunRecord>& recs) {
    if (recs.empty()) throw std::invalid_argument("aggregate: no records");
    std::vector<std::string> order;
    std::map<std::string, std::map<double, std::vector<const RunRecord*>>> groups;
    for (const auto& r : recs) {
        if (!groups.count(r.model)) order.push_back(r.model);
        groups[r.model][r.sigma].push_back(&r);
    }
    std::vector<CurvePoint> out;
    for (const auto& m : order)
        for (const auto& [sigma, rs] : groups[m]) {
            CurvePoint p;
            p.model = m;
            p.sigma = sigma;
            double snr = 0.0, sum = 0.0;
            p.r2_min = INFINITY;
            p.r2_max = -INFINITY;
            for (const RunRecord* r : rs) {
                snr += r->snr_db;
                if (std::isnan(r->r2_eval)) continue;
                sum += r->r2_eval;
                p.r2_min = std::min(p.r2_min, r->r2_eval);
                p.r2_max = std::max(p.r2_max, r->r2_eval);
                ++p.n;
            }
            p.snr_db = snr / static_cast<double>(rs.size());
            if (p.n == 0) p.r2_mean = p.r2_min = p.r2_max = std::nan("");
            else p.r2_mean = sum / static_cast<double>(p.n);
            out.push_back(p);
        }
    return out;
}

inline void write_curves_csv(std::ostream& os, const std::vector<CurvePoint>& pts) {
    os << "model,sigma,snr_db,n,r2_mean,r2_min,r2_max\n";
    for (const auto& p : pts)
        os << p.model << ',' << fmt_g(p.sigma) << ',' << fmt_g(p.snr_db) << ',' << p.n << ',' << fmt_g(p.r2_mean)
           << ',' << fmt_g(p.r2_min) << ',' << fmt_g(p.r2_max) << '\n';
}

enum class CurveAxis { sigma, snr_db };

inline std::string curves_svg(const std::vector<CurvePoint>& pts, CurveAxis axis) {
    std::vector<svg::Series> series;
    double ylo = 0.0;
    for (const auto& p : pts) {
        if (series.empty() || series.back().label != p.model) series.push_back({p.model, {}, {}, {}, {}});
        const double x = axis == CurveAxis::sigma ? p.sigma : p.snr_db;
        if (!std::isfinite(x) || std::isnan(p.r2_mean)) continue;
        auto& s = series.back();
        s.x.push_back(x);
        s.y.push_back(p.r2_mean);
        s.lo.push_back(p.r2_min);
        s.hi.push_back(p.r2_max);
        ylo = std::min(ylo, p.r2_min);
    }
    std::erase_if(series, [](const svg::Series& s) { return s.x.empty(); });
    if (axis == CurveAxis::snr_db)
        for (auto& s : series) {
            // Plot left to right in SNR.
            std::vector<std::size_t> idx(s.x.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
            svg::Series t{s.label, {}, {}, {}, {}};
            for (std::size_t i : idx) {
                t.x.push_back(s.x[i]);
                t.y.push_back(s.y[i]);
                t.lo.push_back(s.lo[i]);
                t.hi.push_back(s.hi[i]);
            }
            s = std::move(t);
        }
    const svg::Range yr{std::floor(std::max(ylo, -1.0) * 10.0) / 10.0, 1.0};
    return svg::line_chart(series, "Probe R2 on held-out data",
                           axis == CurveAxis::sigma ? "distractor scale sigma" : "SNR (dB)", "R2 (mean, min-max band)",
                           yr);
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << content;
}

/// curves.csv, curves_sigma.svg and curves_snr.svg in dir.
inline void emit_curves(const std::vector<RunRecord>& recs, const std::filesystem::path& dir) {
    const auto pts = aggregate(recs);
    std::filesystem::create_directories(dir);
    std::ostringstream csv;
    write_curves_csv(csv, pts);
    write_file(dir / "curves.csv", csv.str());
    write_file(dir / "curves_sigma.svg", curves_svg(pts, CurveAxis::sigma));
    write_file(dir / "curves_snr.svg", curves_svg(pts, CurveAxis::snr_db));
}

inline std::string scatter_svg(const DiagnosticsTable& t, std::size_t i, std::size_t j, const std::string& title) {
    if (i >= t.k || j >= t.k)
        throw std::out_of_range("scatter: feature pair (" + std::to_string(i) + ", " + std::to_string(j) +
                                ") out of range for k = " + std::to_string(t.k));
    std::vector<double> x(t.values.rows()), y(t.values.rows());
    for (std::size_t r = 0; r < t.values.rows(); ++r) {
        x[r] = t.values(r, i);
        y[r] = t.values(r, j);
    }
    return svg::scatter(x, y, title, "z" + std::to_string(i), "z" + std::to_string(j));
}

inline std::string scatter_filename(const std::string& model, double sigma) {
    return "scatter_" + model + "_" + fmt_g(sigma) + ".svg";
}

inline void emit_scatter(const ScatterData& s, const std::filesystem::path& dir, std::size_t i = 0,
                         std::size_t j = 1) {
    std::filesystem::create_directories(dir);
    write_file(dir / scatter_filename(s.model, s.sigma),
               scatter_svg(s.table, i, j, s.model + ", sigma = " + fmt_g(s.sigma)));
}

/// Output directory precedence: explicit flag, then the TVBENCH_OUT
/// environment variable, then the config value.
inline std::string resolve_output_dir(const std::string& flag, const SweepConfig& cfg) {
    if (!flag.empty()) return flag;
    if (const char* e = std::getenv(kOutputEnv); e && *e) return e;
    return cfg.output_dir;
}

inline std::string meta_text(const SweepConfig& cfg, const SweepResult& res) {
    std::ostringstream os;
    os << "tvbench " << kVersion << '\n';
#if defined(__VERSION__)
    os << "compiler " << __VERSION__ << '\n';
#endif
    os << "cxx_standard " << __cplusplus << "\n\n[config]\n" << serialize_config(cfg) << "\n[cells]\n";
    os << "sigma,seed,dataset_seed,dataset_checksum,snr_db\n";
    for (const auto& c : res.cells) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(c.checksum));
        os << fmt_g(c.sigma) << ',' << c.seed << ',' << c.dataset_seed << ',' << buf << ',' << fmt_g(c.snr_db) << '\n';
    }
    os << "\n[train_seeds]\nmodel,sigma,seed,train_seed\n";
    for (const auto& r : res.records)
        os << r.model << ',' << fmt_g(r.sigma) << ',' << r.seed << ',' << train_seed(r.seed, r.sigma, r.model) << '\n';
    return os.str();
}

/// Writes records.csv, curves, scatters and meta.txt into dir. timing.csv
/// holds the measured wall times, which never enter records.csv unless
/// record_wall_time is set.
inline void write_sweep_outputs(const SweepConfig& cfg, const SweepResult& res, const std::filesystem::path& dir) {
    const auto& wall_ms = res.measured_ms;
    std::filesystem::create_directories(dir);
    std::ostringstream rec;
    write_records_csv(rec, res.records);
    write_file(dir / "records.csv", rec.str());
    emit_curves(res.records, dir);
    for (const auto& s : res.scatters) emit_scatter(s, dir);
    write_file(dir / "meta.txt", meta_text(cfg, res));
    if (!wall_ms.empty()) {
        std::ostringstream t;
        t << "model,sigma,seed,wall_ms\n";
        for (std::size_t i = 0; i < res.records.size() && i < wall_ms.size(); ++i)
            t << res.records[i].model << ',' << fmt_g(res.records[i].sigma) << ',' << res.records[i].seed << ','
              << fmt_g(wall_ms[i], 6) << '\n';
        write_file(dir / "timing.csv", t.str());
    }
}

}  // namespace tvbench
