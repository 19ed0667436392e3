#pragma once

// Small differentiable-model kernel: affine layers with optional tanh, batched
// forward/backward with explicit caches, the loss primitives the learners use,
// Adam/SGD updates, EMA tracking and a text checkpoint format.
//
// Batches are row-major matrices, one sample per row.

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tvbench/env.hpp"
#include "tvbench/numerics.hpp"

namespace tvbench {

enum class Activation { identity, tanh };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

/// y = act(W x + b). An empty bias means the layer is linear (no offset).
struct Layer {
    Mat W;  // out x in
    Vec b;  // out, or empty
    Activation act = Activation::identity;

    std::size_t in_dim() const { return W.cols(); }
    std::size_t out_dim() const { return W.rows(); }
    bool has_bias() const { return !b.empty(); }
    bool operator==(const Layer&) const = default;
};

struct Network {
    std::vector<Layer> layers;
    // Bumped on every in-place parameter update; caches remember it.
    std::uint64_t revision = 0;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.W.size() + l.b.size();
        return n;
    }

    void validate() const {
        for (std::size_t i = 0; i + 1 < layers.size(); ++i)
            if (layers[i].out_dim() != layers[i + 1].in_dim())
                throw ShapeError("Network: layer " + std::to_string(i) + " output does not chain into layer " +
                                 std::to_string(i + 1));
        for (const auto& l : layers)
            if (l.has_bias() && l.b.size() != l.out_dim()) throw ShapeError("Network: bias length mismatch");
    }

    bool same_architecture(const Network& o) const {
        if (layers.size() != o.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto &a = layers[i], &b = o.layers[i];
            if (a.W.rows() != b.W.rows() || a.W.cols() != b.W.cols() || a.b.size() != b.b.size() ||
                a.act != b.act)
                return false;
        }
        return true;
    }

    /// Parameters equal; the revision counter is bookkeeping and ignored.
    bool same_params(const Network& o) const { return layers == o.layers; }
};

/// Weights N(0, 1/in), zero bias.
inline Layer init_layer(std::size_t in, std::size_t out, Activation act, Rng& rng, bool bias = true) {
    Layer l;
    l.W = gauss_mat(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in)));
    if (bias) l.b.assign(out, 0.0);
    l.act = act;
    return l;
}

/// Affine map in -> out, or in -> hidden (tanh) -> out when hidden > 0.
inline Network make_network(std::size_t in, std::size_t out, std::size_t hidden, Rng& rng) {
    Network net;
    if (hidden > 0) {
        net.layers.push_back(init_layer(in, hidden, Activation::tanh, rng));
        net.layers.push_back(init_layer(hidden, out, Activation::identity, rng));
    } else {
        net.layers.push_back(init_layer(in, out, Activation::identity, rng));
    }
    return net;
}

inline Network linear_network(Mat W, Vec b = {}) {
    Network net;
    net.layers.push_back(Layer{std::move(W), std::move(b), Activation::identity});
    net.validate();
    return net;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
    const Network* net = nullptr;
    std::uint64_t revision = 0;
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> outputs;  // post-activation output of each layer
};

struct ForwardResult {
    Mat y;
    ForwardCache cache;
};

namespace detail {

// Y = X W^T + b
inline Mat affine(const Mat& x, const Layer& l) {
    if (x.cols() != l.in_dim())
        throw ShapeError("forward: input width " + std::to_string(x.cols()) + " != layer input " +
                         std::to_string(l.in_dim()));
    Mat y = matmul_bt(x, l.W);
    if (l.has_bias())
        for (std::size_t r = 0; r < y.rows(); ++r) {
            auto yr = y.row(r);
            for (std::size_t j = 0; j < yr.size(); ++j) yr[j] += l.b[j];
        }
    return y;
}

}  // namespace detail

/// Batched forward pass without a cache.
inline Mat apply(const Network& net, const Mat& x) {
    Mat h = x;
    for (const auto& l : net.layers) {
        h = detail::affine(h, l);
        if (l.act == Activation::tanh)
            for (auto& v : h.data()) v = std::tanh(v);
    }
    return h;
}

inline ForwardResult forward(const Network& net, const Mat& x) {
    if (x.cols() != net.in_dim())
        throw ShapeError("forward: input width " + std::to_string(x.cols()) + " != network input " +
                         std::to_string(net.in_dim()));
    ForwardResult r;
    r.cache.net = &net;
    r.cache.revision = net.revision;
    Mat h = x;
    for (const auto& l : net.layers) {
        r.cache.inputs.push_back(h);
        h = detail::affine(h, l);
        if (l.act == Activation::tanh)
            for (auto& v : h.data()) v = std::tanh(v);
        r.cache.outputs.push_back(h);
    }
    r.y = std::move(h);
    return r;
}

/// Single-sample forward.
inline ForwardResult forward(const Network& net, std::span<const double> x) {
    return forward(net, Mat(1, x.size(), Vec(x.begin(), x.end())));
}

struct LayerGrad {
    Mat dW;
    Vec db;
};

/// Per-parameter gradient buffers shaped like a Network.
struct GradTape {
    std::vector<LayerGrad> layers;

    static GradTape zeros_like(const Network& net) {
        GradTape t;
        for (const auto& l : net.layers) t.layers.push_back({Mat(l.W.rows(), l.W.cols()), Vec(l.b.size(), 0.0)});
        return t;
    }

    void zero() {
        for (auto& g : layers) {
            std::fill(g.dW.data().begin(), g.dW.data().end(), 0.0);
            std::fill(g.db.begin(), g.db.end(), 0.0);
        }
    }

    void add(const GradTape& o, double scale = 1.0) {
        if (o.layers.size() != layers.size()) throw ShapeError("GradTape::add: layer count mismatch");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& a = layers[i];
            const auto& b = o.layers[i];
            if (a.dW.size() != b.dW.size() || a.db.size() != b.db.size())
                throw ShapeError("GradTape::add: shape mismatch");
            for (std::size_t j = 0; j < a.dW.size(); ++j) a.dW.data()[j] += scale * b.dW.data()[j];
            for (std::size_t j = 0; j < a.db.size(); ++j) a.db[j] += scale * b.db[j];
        }
    }

    void scale(double s) {
        for (auto& g : layers) {
            for (auto& v : g.dW.data()) v *= s;
            for (auto& v : g.db) v *= s;
        }
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& g : layers) {
            for (double v : g.dW.data()) s += v * v;
            for (double v : g.db) s += v * v;
        }
        return s;
    }

    bool all_zero() const {
        for (const auto& g : layers) {
            for (double v : g.dW.data())
                if (v != 0.0) return false;
            for (double v : g.db)
                if (v != 0.0) return false;
        }
        return true;
    }
};

struct BackwardResult {
    GradTape tape;
    Mat dx;
};

/// Exact gradients for every parameter and the input, given dL/dy.
inline BackwardResult backward(const Network& net, const ForwardCache& cache, const Mat& dy) {
    if (cache.net != &net || cache.revision != net.revision || cache.inputs.size() != net.layers.size())
        throw std::logic_error("backward: cache does not belong to the current network state");
    if (dy.rows() != cache.outputs.back().rows() || dy.cols() != net.out_dim())
        throw ShapeError("backward: upstream gradient " + shape_str(dy) + " does not match output " +
                         shape_str(cache.outputs.back()));
    BackwardResult r;
    r.tape = GradTape::zeros_like(net);
    Mat g = dy;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const Layer& l = net.layers[li];
        if (l.act == Activation::tanh) {
            const Mat& out = cache.outputs[li];
            for (std::size_t j = 0; j < g.size(); ++j) {
                const double y = out.data()[j];
                g.data()[j] *= 1.0 - y * y;
            }
        }
        r.tape.layers[li].dW = matmul_at(g, cache.inputs[li]);
        if (l.has_bias()) {
            auto& db = r.tape.layers[li].db;
            for (std::size_t row = 0; row < g.rows(); ++row) {
                auto gr = g.row(row);
                for (std::size_t j = 0; j < gr.size(); ++j) db[j] += gr[j];
            }
        }
        g = matmul(g, l.W);
    }
    r.dx = std::move(g);
    return r;
}

// ---------------------------------------------------------------------------
// Losses

struct LossGrad {
    double loss = 0.0;
    Mat grad;
};

/// Mean over samples of the per-sample mean squared error.
inline LossGrad mse_loss(const Mat& y, const Mat& t) {
    if (y.rows() != t.rows() || y.cols() != t.cols())
        throw ShapeError("mse_loss: " + shape_str(y) + " vs " + shape_str(t));
    LossGrad r{0.0, Mat(y.rows(), y.cols())};
    const double n = static_cast<double>(y.size());
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y.data()[i] - t.data()[i];
        s += d * d;
        r.grad.data()[i] = 2.0 * d / n;
    }
    r.loss = s / n;
    return r;
}

inline LossGrad mse_loss(std::span<const double> y, std::span<const double> t) {
    return mse_loss(Mat(1, y.size(), Vec(y.begin(), y.end())), Mat(1, t.size(), Vec(t.begin(), t.end())));
}

struct KlGrad {
    double loss = 0.0;
    Mat d_mu;
    Mat d_logvar;
};

/// Batch mean of sum_i 0.5 (mu_i^2 + exp(logvar_i) - 1 - logvar_i).
inline KlGrad kl_diag_gauss(const Mat& mu, const Mat& logvar) {
    if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols())
        throw ShapeError("kl_diag_gauss: " + shape_str(mu) + " vs " + shape_str(logvar));
    KlGrad r{0.0, Mat(mu.rows(), mu.cols()), Mat(mu.rows(), mu.cols())};
    const double inv_b = 1.0 / static_cast<double>(mu.rows());
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.data()[i], lv = logvar.data()[i];
        const double e = std::exp(lv);
        s += 0.5 * (m * m + e - 1.0 - lv);
        r.d_mu.data()[i] = m * inv_b;
        r.d_logvar.data()[i] = 0.5 * (e - 1.0) * inv_b;
    }
    r.loss = s * inv_b;
    return r;
}

inline KlGrad kl_diag_gauss(std::span<const double> mu, std::span<const double> logvar) {
    return kl_diag_gauss(Mat(1, mu.size(), Vec(mu.begin(), mu.end())),
                         Mat(1, logvar.size(), Vec(logvar.begin(), logvar.end())));
}

/// z = mu + exp(logvar / 2) * eps for a given eps.
inline Mat reparam_apply(const Mat& mu, const Mat& logvar, const Mat& eps) {
    if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || eps.rows() != mu.rows() ||
        eps.cols() != mu.cols())
        throw ShapeError("reparam: shape mismatch");
    Mat z(mu.rows(), mu.cols());
    for (std::size_t i = 0; i < z.size(); ++i)
        z.data()[i] = mu.data()[i] + std::exp(0.5 * logvar.data()[i]) * eps.data()[i];
    return z;
}

struct ReparamSample {
    Mat z;
    Mat eps;
};

inline ReparamSample reparam_sample(const Mat& mu, const Mat& logvar, Rng& rng) {
    Mat eps = gauss_mat(rng, mu.rows(), mu.cols(), 1.0);
    Mat z = reparam_apply(mu, logvar, eps);
    return {std::move(z), std::move(eps)};
}

inline Vec reparam_sample(std::span<const double> mu, std::span<const double> logvar, Rng& rng) {
    return reparam_sample(Mat(1, mu.size(), Vec(mu.begin(), mu.end())),
                          Mat(1, logvar.size(), Vec(logvar.begin(), logvar.end())), rng)
        .z.data();
}

/// Pulls dL/dz back onto mu and logvar.
inline std::pair<Mat, Mat> reparam_backward(const Mat& logvar, const Mat& eps, const Mat& dz) {
    Mat d_mu = dz;
    Mat d_lv(dz.rows(), dz.cols());
    for (std::size_t i = 0; i < dz.size(); ++i)
        d_lv.data()[i] = dz.data()[i] * 0.5 * std::exp(0.5 * logvar.data()[i]) * eps.data()[i];
    return {std::move(d_mu), std::move(d_lv)};
}

// ---------------------------------------------------------------------------
// Optimization

enum class UpdateRule { sgd, adam };

struct OptConfig {
    UpdateRule rule = UpdateRule::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptState {
    OptConfig cfg;
    Vec m, v;  // flattened like the owning network
    std::size_t step = 0;

    OptState() = default;
    OptState(OptConfig c, const Network& net) : cfg(c), m(net.param_count(), 0.0), v(net.param_count(), 0.0) {}
};

/// One update of net along tape. Throws NumericError naming the block when a
/// gradient entry is not finite.
inline void sgd_step(Network& net, const GradTape& tape, OptState& opt) {
    if (tape.layers.size() != net.layers.size()) throw ShapeError("sgd_step: tape/network layer mismatch");
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& g = tape.layers[li];
        const auto& l = net.layers[li];
        if (g.dW.rows() != l.W.rows() || g.dW.cols() != l.W.cols() || g.db.size() != l.b.size())
            throw ShapeError("sgd_step: tape/network shape mismatch at layer " + std::to_string(li));
        if (!all_finite(g.dW.data()))
            throw NumericError("sgd_step: non-finite gradient in layer " + std::to_string(li) + " weights");
        if (!all_finite(g.db))
            throw NumericError("sgd_step: non-finite gradient in layer " + std::to_string(li) + " bias");
    }
    if (opt.cfg.rule == UpdateRule::adam && opt.m.size() != net.param_count())
        throw ShapeError("sgd_step: optimizer state does not match network");
    ++opt.step;
    const double lr = opt.cfg.lr;
    const double bc1 = 1.0 - std::pow(opt.cfg.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.cfg.beta2, static_cast<double>(opt.step));
    std::size_t k = 0;
    auto update = [&](double& p, double grad) {
        if (opt.cfg.rule == UpdateRule::sgd) {
            p -= lr * grad;
        } else {
            double& m = opt.m[k];
            double& v = opt.v[k];
            m = opt.cfg.beta1 * m + (1.0 - opt.cfg.beta1) * grad;
            v = opt.cfg.beta2 * v + (1.0 - opt.cfg.beta2) * grad * grad;
            p -= lr * (m / bc1) / (std::sqrt(v / bc2) + opt.cfg.eps);
        }
        ++k;
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& l = net.layers[li];
        const auto& g = tape.layers[li];
        for (std::size_t j = 0; j < l.W.size(); ++j) update(l.W.data()[j], g.dW.data()[j]);
        for (std::size_t j = 0; j < l.b.size(); ++j) update(l.b[j], g.db[j]);
    }
    ++net.revision;
}

/// Adam/SGD state for a bare parameter vector (used for gate logits).
inline void sgd_step(Vec& params, const Vec& grad, OptState& opt) {
    if (params.size() != grad.size()) throw ShapeError("sgd_step: parameter/gradient length mismatch");
    if (!all_finite(grad)) throw NumericError("sgd_step: non-finite gradient in parameter vector");
    if (opt.m.size() != params.size()) {
        opt.m.assign(params.size(), 0.0);
        opt.v.assign(params.size(), 0.0);
    }
    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.cfg.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.cfg.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (opt.cfg.rule == UpdateRule::sgd) {
            params[i] -= opt.cfg.lr * grad[i];
            continue;
        }
        opt.m[i] = opt.cfg.beta1 * opt.m[i] + (1.0 - opt.cfg.beta1) * grad[i];
        opt.v[i] = opt.cfg.beta2 * opt.v[i] + (1.0 - opt.cfg.beta2) * grad[i] * grad[i];
        params[i] -= opt.cfg.lr * (opt.m[i] / bc1) / (std::sqrt(opt.v[i] / bc2) + opt.cfg.eps);
    }
}

/// Rescales all tapes jointly so their global L2 norm is at most max_norm.
/// Returns true when clipping happened.
inline bool clip_global_norm(std::span<GradTape* const> tapes, double max_norm, Vec* extra = nullptr) {
    double sq = 0.0;
    for (const GradTape* t : tapes) sq += t->squared_norm();
    if (extra)
        for (double v : *extra) sq += v * v;
    const double nrm = std::sqrt(sq);
    if (!(nrm > max_norm)) return false;
    const double s = max_norm / nrm;
    for (GradTape* t : tapes) t->scale(s);
    if (extra)
        for (double& v : *extra) v *= s;
    return true;
}

/// teacher <- tau * teacher + (1 - tau) * student
inline void ema_update(Network& teacher, const Network& student, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ema_update: tau must lie in [0, 1]");
    if (!teacher.same_architecture(student)) throw ShapeError("ema_update: architecture mismatch");
    for (std::size_t li = 0; li < teacher.layers.size(); ++li) {
        auto& t = teacher.layers[li];
        const auto& s = student.layers[li];
        for (std::size_t j = 0; j < t.W.size(); ++j)
            t.W.data()[j] = tau * t.W.data()[j] + (1.0 - tau) * s.W.data()[j];
        for (std::size_t j = 0; j < t.b.size(); ++j) t.b[j] = tau * t.b[j] + (1.0 - tau) * s.b[j];
    }
    ++teacher.revision;
}

struct DegenerateRowError : std::runtime_error {
    DegenerateRowError(const std::string& what, std::size_t row_) : std::runtime_error(what), row(row_) {}
    std::size_t row;
};

/// Each row divided by its Euclidean norm. Zero rows are an error; the caller
/// decides how to reinitialize them.
inline Mat renorm_rows_unit(Mat w) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
        auto row = w.row(r);
        const double n = norm2(row);
        if (n == 0.0 || !std::isfinite(n))
            throw DegenerateRowError("renorm_rows_unit: row " + std::to_string(r) + " has zero norm", r);
        for (auto& v : row) v /= n;
    }
    return w;
}

/// Random k x n matrix with unit-norm rows.
inline Mat random_unit_rows(std::size_t k, std::size_t n, Rng& rng) {
    for (;;) {
        try {
            return renorm_rows_unit(gauss_mat(rng, k, n, 1.0));
        } catch (const DegenerateRowError&) {
        }
    }
}

// ---------------------------------------------------------------------------
// Flat parameter views (finite-difference checks, checkpoint comparisons)

inline Vec flatten(const Network& net) {
    Vec out;
    out.reserve(net.param_count());
    for (const auto& l : net.layers) {
        out.insert(out.end(), l.W.data().begin(), l.W.data().end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
}

inline Vec flatten(const GradTape& tape) {
    Vec out;
    for (const auto& g : tape.layers) {
        out.insert(out.end(), g.dW.data().begin(), g.dW.data().end());
        out.insert(out.end(), g.db.begin(), g.db.end());
    }
    return out;
}

/// Writes params into net; returns the number of values consumed.
inline std::size_t unflatten(Network& net, std::span<const double> params) {
    if (params.size() < net.param_count()) throw ShapeError("unflatten: not enough values");
    std::size_t k = 0;
    for (auto& l : net.layers) {
        for (auto& v : l.W.data()) v = params[k++];
        for (auto& v : l.b) v = params[k++];
    }
    ++net.revision;
    return k;
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   network <name> <layer count>
//   layer <out> <in> <activation> <bias|nobias>
//   <out rows of in reals>
//   [<one row of out reals>]          when bias

inline void write_network(std::ostream& os, const std::string& name, const Network& net) {
    os << "network " << name << ' ' << net.layers.size() << '\n';
    for (const auto& l : net.layers) {
        os << "layer " << l.W.rows() << ' ' << l.W.cols() << ' ' << to_string(l.act) << ' '
           << (l.has_bias() ? "bias" : "nobias") << '\n';
        for (std::size_t r = 0; r < l.W.rows(); ++r) {
            for (std::size_t c = 0; c < l.W.cols(); ++c) os << (c ? " " : "") << format_real(l.W(r, c));
            os << '\n';
        }
        if (l.has_bias()) {
            for (std::size_t j = 0; j < l.b.size(); ++j) os << (j ? " " : "") << format_real(l.b[j]);
            os << '\n';
        }
    }
}

inline Network read_network(std::istream& is, const std::string& expected) {
    std::string tag, name;
    std::size_t count = 0;
    if (!(is >> tag >> name >> count) || tag != "network" || name != expected)
        throw std::runtime_error("checkpoint: expected network '" + expected + "'");
    Network net;
    std::string tok;
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t out = 0, in = 0;
        std::string act, bias;
        if (!(is >> tag >> out >> in >> act >> bias) || tag != "layer")
            throw std::runtime_error("checkpoint: bad layer header in '" + expected + "'");
        Layer l;
        l.W = Mat(out, in);
        l.act = activation_from_string(act);
        for (auto& v : l.W.data()) {
            if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated weights");
            v = parse_real(tok);
        }
        if (bias == "bias") {
            l.b.resize(out);
            for (auto& v : l.b) {
                if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated bias");
                v = parse_real(tok);
            }
        } else if (bias != "nobias") {
            throw std::runtime_error("checkpoint: bad bias tag '" + bias + "'");
        }
        net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
}

}  // namespace tvbench
