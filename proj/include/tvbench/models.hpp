#pragma once

// The learners. Every kind is fit on the train prefix of a Dataset and then
// maps observations to k-dimensional latents through encode().
//
// Each trainable objective is exposed as a pure function of (networks, batch,
// noise) returning the loss and its analytic gradients, so the gradient
// oracle in the tests can probe exactly what the training loops use.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tvbench/env.hpp"
#include "tvbench/numerics.hpp"
#include "tvbench/traincore.hpp"

namespace tvbench {

enum class Kind { vae, jepa, predvae, latentpredvae, predenc, randproj, pca, gatedpredae };

inline constexpr Kind kAllKinds[] = {Kind::vae,     Kind::jepa,     Kind::predvae, Kind::latentpredvae,
                                     Kind::predenc, Kind::randproj, Kind::pca,     Kind::gatedpredae};

inline const char* to_string(Kind k) {
    switch (k) {
        case Kind::vae: return "vae";
        case Kind::jepa: return "jepa";
        case Kind::predvae: return "predvae";
        case Kind::latentpredvae: return "latentpredvae";
        case Kind::predenc: return "predenc";
        case Kind::randproj: return "randproj";
        case Kind::pca: return "pca";
        case Kind::gatedpredae: return "gatedpredae";
    }
    return "?";
}

inline Kind kind_from_string(const std::string& s) {
    for (Kind k : kAllKinds)
        if (s == to_string(k)) return k;
    throw std::invalid_argument("unknown model kind '" + s + "'");
}

struct TrainConfig {
    std::size_t latent_dim = 4;
    std::size_t hidden = 0;  // > 0 switches VAE/JEPA nets to one tanh hidden layer
    std::size_t steps = 20000;
    std::size_t batch = 256;
    UpdateRule rule = UpdateRule::adam;
    double lr = 1e-3;
    double clip_norm = 10.0;
    double beta = 1e-3;         // KL weight
    double lambda_pred = 1.0;   // prediction term weight
    double tau = 0.99;          // JEPA EMA rate per optimizer step
    bool pred_identity_init = false;
    std::size_t rounds = 20;    // PredEnc alternations; each phase gets steps / (2 rounds)
    bool predenc_stop_target = true;
    std::size_t gated_width = 8;
    std::size_t slice_start = 0;  // PCA component offset
    std::uint64_t seed = 1;

    bool operator==(const TrainConfig&) const = default;
};

struct Diagnostics {
    std::size_t optimizer_steps = 0;
    std::size_t clip_events = 0;
    std::size_t row_reinits = 0;
    bool collapsed = false;
    // One entry per epoch (ceil(train pairs / batch) steps).
    Vec loss_trace;
    Vec latent_var_trace;   // mean per-dimension batch variance of the encoder latents
    Vec latent_norm_trace;  // mean ||z|| over the batch
};

struct GateState {
    Vec logits;
    std::vector<std::size_t> selected;  // ascending
};

/// Indices of the k largest values, ties to the lowest index, returned in
/// ascending index order.
inline std::vector<std::size_t> top_k_indices(std::span<const double> v, std::size_t k) {
    if (k > v.size()) throw std::invalid_argument("top_k_indices: k exceeds length");
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct Learner {
    Kind kind = Kind::randproj;
    std::size_t latent_dim = 4;
    bool fitted = false;
    TrainConfig cfg;
    // VAE family: encoder emits [mu | logvar]; encode() keeps the mu half.
    // Gated: encoder has gated_width rows; encode() keeps gate.selected.
    Network encoder;
    Network decoder;
    Network predictor;
    Network teacher;
    GateState gate;
    Diagnostics diag;
};

struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& what, std::size_t step_) : std::runtime_error(what), step(step_) {}
    std::size_t step;
};

struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Optional observer called after every optimizer step.
struct TrainHooks {
    std::function<void(std::size_t step, const Learner&)> on_step;
};

// ---------------------------------------------------------------------------
// Encoding

inline Mat encode(const Learner& learner, const Mat& x) {
    if (!learner.fitted) throw StateError("encode: learner is not fitted");
    if (x.cols() != learner.encoder.in_dim())
        throw ShapeError("encode: expected " + std::to_string(learner.encoder.in_dim()) + " columns, got " +
                         std::to_string(x.cols()));
    Mat h = apply(learner.encoder, x);
    if (!learner.gate.selected.empty()) return select_cols(h, learner.gate.selected);
    if (h.cols() == learner.latent_dim) return h;
    std::vector<std::size_t> head(learner.latent_dim);
    std::iota(head.begin(), head.end(), 0);
    return select_cols(h, head);
}

// ---------------------------------------------------------------------------
// Objectives

namespace detail {

inline Mat take_cols(const Mat& m, std::size_t begin, std::size_t count) {
    Mat out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t j = 0; j < count; ++j) out(r, j) = m(r, begin + j);
    return out;
}

inline Mat concat_cols(const Mat& a, const Mat& b) {
    Mat out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(r, j) = a(r, j);
        for (std::size_t j = 0; j < b.cols(); ++j) out(r, a.cols() + j) = b(r, j);
    }
    return out;
}

inline void axpy(Mat& y, const Mat& x, double a) {
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += a * x.data()[i];
}

}  // namespace detail

/// Sampled diagonal-Gaussian posterior of a VAE-style encoder.
struct Posterior {
    ForwardResult enc;
    Mat mu, logvar, eps, z;
};

inline Posterior posterior(const Network& enc, const Mat& x, const Mat& eps) {
    Posterior p;
    p.enc = forward(enc, x);
    const std::size_t k = enc.out_dim() / 2;
    if (eps.cols() != k || eps.rows() != x.rows()) throw ShapeError("posterior: noise shape mismatch");
    p.mu = detail::take_cols(p.enc.y, 0, k);
    p.logvar = detail::take_cols(p.enc.y, k, k);
    p.eps = eps;
    p.z = reparam_apply(p.mu, p.logvar, eps);
    return p;
}

/// Gradient on the encoder from dL/dz plus kl_weight * KL(mu, logvar).
inline GradTape posterior_backward(const Network& enc, const Posterior& p, const Mat& dz, const KlGrad& kl,
                                   double kl_weight) {
    auto [d_mu, d_lv] = reparam_backward(p.logvar, p.eps, dz);
    detail::axpy(d_mu, kl.d_mu, kl_weight);
    detail::axpy(d_lv, kl.d_logvar, kl_weight);
    return backward(enc, p.enc.cache, detail::concat_cols(d_mu, d_lv)).tape;
}

struct VaeGrads {
    GradTape enc, dec, pred;
};

struct ObjectiveResult {
    double loss = 0.0;
    double recon = 0.0;
    double kl = 0.0;
    double pred = 0.0;
    VaeGrads grads;
    Mat latents;  // encoder means (or deterministic latents) for diagnostics
};

/// mse(dec(z), x0) + beta * KL, z ~ q(z | x0) via eps.
inline ObjectiveResult vae_objective(const Network& enc, const Network& dec, const Mat& x0, const Mat& eps,
                                     double beta) {
    ObjectiveResult r;
    const Posterior p = posterior(enc, x0, eps);
    const ForwardResult d = forward(dec, p.z);
    const LossGrad rec = mse_loss(d.y, x0);
    const KlGrad kl = kl_diag_gauss(p.mu, p.logvar);
    r.recon = rec.loss;
    r.kl = kl.loss;
    r.loss = rec.loss + beta * kl.loss;
    BackwardResult bd = backward(dec, d.cache, rec.grad);
    r.grads.dec = std::move(bd.tape);
    r.grads.enc = posterior_backward(enc, p, bd.dx, kl, beta);
    r.latents = p.mu;
    return r;
}

/// VAE objective plus lambda * mse(dec(pred(z)), x1).
inline ObjectiveResult predvae_objective(const Network& enc, const Network& dec, const Network& pred, const Mat& x0,
                                         const Mat& x1, const Mat& eps, double beta, double lambda) {
    ObjectiveResult r;
    const Posterior p = posterior(enc, x0, eps);
    const ForwardResult d = forward(dec, p.z);
    const LossGrad rec = mse_loss(d.y, x0);
    const KlGrad kl = kl_diag_gauss(p.mu, p.logvar);
    r.recon = rec.loss;
    r.kl = kl.loss;
    r.loss = rec.loss + beta * kl.loss;

    const ForwardResult q = forward(pred, p.z);
    const ForwardResult d2 = forward(dec, q.y);
    const LossGrad nxt = mse_loss(d2.y, x1);
    r.pred = nxt.loss;
    r.loss += lambda * nxt.loss;

    BackwardResult bd = backward(dec, d.cache, rec.grad);
    BackwardResult bd2 = backward(dec, d2.cache, scaled(nxt.grad, lambda));
    BackwardResult bq = backward(pred, q.cache, bd2.dx);
    r.grads.dec = std::move(bd.tape);
    r.grads.dec.add(bd2.tape);
    r.grads.pred = std::move(bq.tape);
    Mat dz = add(std::move(bd.dx), bq.dx);
    r.grads.enc = posterior_backward(enc, p, dz, kl, beta);
    r.latents = p.mu;
    return r;
}

/// mse(dec(z1), x1) + beta * (KL_0 + KL_1) / 2 + lambda * mse(pred(z0), z1),
/// with gradients reaching both z0 and z1.
inline ObjectiveResult latentpredvae_objective(const Network& enc, const Network& dec, const Network& pred,
                                               const Mat& x0, const Mat& x1, const Mat& eps0, const Mat& eps1,
                                               double beta, double lambda) {
    ObjectiveResult r;
    const Posterior p0 = posterior(enc, x0, eps0);
    const Posterior p1 = posterior(enc, x1, eps1);
    const ForwardResult d = forward(dec, p1.z);
    const LossGrad rec = mse_loss(d.y, x1);
    const KlGrad kl0 = kl_diag_gauss(p0.mu, p0.logvar);
    const KlGrad kl1 = kl_diag_gauss(p1.mu, p1.logvar);
    const ForwardResult q = forward(pred, p0.z);
    const LossGrad lp = mse_loss(q.y, p1.z);
    r.recon = rec.loss;
    r.kl = 0.5 * (kl0.loss + kl1.loss);
    r.pred = lp.loss;
    r.loss = rec.loss + beta * r.kl + lambda * lp.loss;

    BackwardResult bd = backward(dec, d.cache, rec.grad);
    BackwardResult bq = backward(pred, q.cache, scaled(lp.grad, lambda));
    Mat dz1 = std::move(bd.dx);
    detail::axpy(dz1, lp.grad, -lambda);
    r.grads.dec = std::move(bd.tape);
    r.grads.pred = std::move(bq.tape);
    r.grads.enc = posterior_backward(enc, p0, bq.dx, kl0, 0.5 * beta);
    r.grads.enc.add(posterior_backward(enc, p1, dz1, kl1, 0.5 * beta));
    r.latents = p0.mu;
    return r;
}

/// mse(pred(student(x0)), teacher(x1)); the teacher is a constant.
inline ObjectiveResult jepa_objective(const Network& student, const Network& pred, const Network& teacher,
                                      const Mat& x0, const Mat& x1) {
    ObjectiveResult r;
    const ForwardResult s = forward(student, x0);
    const ForwardResult q = forward(pred, s.y);
    const Mat target = apply(teacher, x1);
    const LossGrad l = mse_loss(q.y, target);
    r.loss = r.pred = l.loss;
    BackwardResult bq = backward(pred, q.cache, l.grad);
    r.grads.pred = std::move(bq.tape);
    r.grads.enc = backward(student, s.cache, bq.dx).tape;
    r.latents = s.y;
    return r;
}

/// mse(pred(enc(x0)), enc(x1)). With stop_target the target side is a
/// constant; otherwise gradients also flow through enc(x1).
inline ObjectiveResult predenc_objective(const Network& enc, const Network& pred, const Mat& x0, const Mat& x1,
                                         bool stop_target) {
    ObjectiveResult r;
    const ForwardResult e0 = forward(enc, x0);
    const ForwardResult q = forward(pred, e0.y);
    std::optional<ForwardResult> e1;
    Mat target;
    if (stop_target) {
        target = apply(enc, x1);
    } else {
        e1 = forward(enc, x1);
        target = e1->y;
    }
    const LossGrad l = mse_loss(q.y, target);
    r.loss = r.pred = l.loss;
    BackwardResult bq = backward(pred, q.cache, l.grad);
    r.grads.pred = std::move(bq.tape);
    r.grads.enc = backward(enc, e0.cache, bq.dx).tape;
    if (e1) r.grads.enc.add(backward(enc, e1->cache, scaled(l.grad, -1.0)).tape);
    r.latents = e0.y;
    return r;
}

struct GatedResult {
    double loss = 0.0;       // recon + lambda * whitened prediction loss (hard-gated forward value)
    double recon = 0.0;
    double pred = 0.0;       // tr(Sigma^{-1} E) / k over the selected features
    double aux = 0.0;        // lambda * sum over unselected features of normalized error / k
    double surrogate = 0.0;  // lambda * sum_i soft_i * score_i / k (gate surrogate value)
    Vec scores;              // per-feature normalized prediction error, all m features
    GradTape enc, dec, pred_tape;
    Vec d_logits;
    Mat latents;
};

/// Gated predictive autoencoder objective.
///
/// z = W x with unit-norm rows of W (m x n_x). The decoder reconstructs x from
/// all m features. The predictor maps the k selected features at t to all m
/// features at t+1. The selected rows enter a whitened prediction loss
/// tr(Sigma^{-1} E) / k, with Sigma the second moment of the selected features
/// and E that of the prediction residual. Rows of unselected features are
/// trained on their normalized error with the encoder held constant. Gate logits
/// take a straight-through gradient: hard top-k forward, soft weights
/// k * sigmoid(g) / sum(sigmoid(g)) against the normalized per-feature errors
/// backward.
inline GatedResult gated_objective(const Network& enc, const Network& dec, const Network& pred, const Vec& logits,
                                   std::span<const std::size_t> selected, const Mat& x0, const Mat& x1,
                                   double lambda) {
    const std::size_t m = enc.out_dim();
    const std::size_t k = selected.size();
    const double B = static_cast<double>(x0.rows());
    if (logits.size() != m || pred.in_dim() != k || pred.out_dim() != m || enc.layers.size() != 1)
        throw ShapeError("gated_objective: inconsistent gate / predictor shapes");
    GatedResult r;

    const ForwardResult f0 = forward(enc, x0);
    const Mat z1 = apply(enc, x1);
    const ForwardResult d = forward(dec, f0.y);
    const LossGrad rec = mse_loss(d.y, x0);
    r.recon = rec.loss;

    const Mat zs = select_cols(f0.y, selected);
    const ForwardResult q = forward(pred, zs);  // B x m

    // Residual of the selected targets.
    Mat res(x0.rows(), k);
    for (std::size_t b = 0; b < res.rows(); ++b)
        for (std::size_t j = 0; j < k; ++j) res(b, j) = q.y(b, selected[j]) - z1(b, selected[j]);
    const Mat sigma = scaled(matmul_at(zs, zs), 1.0 / B);
    const Mat err = scaled(matmul_at(res, res), 1.0 / B);
    const Mat sigma_inv = inverse_spd(sigma);
    const Mat si_e = matmul(sigma_inv, err);
    r.pred = trace(si_e) / static_cast<double>(k);
    r.loss = rec.loss + lambda * r.pred;

    // Per-feature normalized errors (constants for the aux and gate terms).
    r.scores.assign(m, 0.0);
    Vec target_power(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double e = 0.0, pw = 0.0;
        for (std::size_t b = 0; b < q.y.rows(); ++b) {
            const double dv = q.y(b, i) - z1(b, i);
            e += dv * dv;
            pw += z1(b, i) * z1(b, i);
        }
        target_power[i] = pw / B;
        r.scores[i] = target_power[i] > 0.0 ? (e / B) / target_power[i] : 0.0;
    }
    std::vector<bool> is_sel(m, false);
    for (std::size_t s : selected) is_sel[s] = true;
    for (std::size_t i = 0; i < m; ++i)
        if (!is_sel[i]) r.aux += lambda * r.scores[i] / static_cast<double>(k);

    // Gate surrogate.
    Vec sg(m);
    double ssum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sg[i] = 1.0 / (1.0 + std::exp(-logits[i]));
        ssum += sg[i];
    }
    double sbar = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        r.surrogate += lambda * sg[i] / ssum * r.scores[i];
        sbar += sg[i] * r.scores[i];
    }
    sbar /= ssum;
    r.d_logits.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        r.d_logits[i] = lambda * sg[i] * (1.0 - sg[i]) / ssum * (r.scores[i] - sbar);

    // Backward: whitened term.
    const double c = 2.0 * lambda / (B * static_cast<double>(k));
    const Mat d_res = scaled(matmul(res, sigma_inv), c);                                  // B x k
    const Mat m_mat = matmul(si_e, sigma_inv);                                            // Sigma^-1 E Sigma^-1
    Mat d_zs = scaled(matmul(zs, m_mat), -c);                                             // via Sigma
    Mat dq(q.y.rows(), m);
    for (std::size_t b = 0; b < dq.rows(); ++b)
        for (std::size_t j = 0; j < k; ++j) dq(b, selected[j]) = d_res(b, j);
    // Aux rows: gradient of lambda/k * e_i / power_i on the predictor output only.
    for (std::size_t i = 0; i < m; ++i) {
        if (is_sel[i] || target_power[i] == 0.0) continue;
        const double w = lambda / static_cast<double>(k) * 2.0 / (B * target_power[i]);
        for (std::size_t b = 0; b < dq.rows(); ++b) dq(b, i) = w * (q.y(b, i) - z1(b, i));
    }
    BackwardResult bq = backward(pred, q.cache, dq);
    r.pred_tape = std::move(bq.tape);
    // The aux rows must not reach the encoder: recompute dL/dzs from the selected rows only.
    {
        Mat dq_sel(dq.rows(), m);
        for (std::size_t b = 0; b < dq.rows(); ++b)
            for (std::size_t j = 0; j < k; ++j) dq_sel(b, selected[j]) = d_res(b, j);
        d_zs = add(std::move(d_zs), matmul(dq_sel, pred.layers[0].W));
    }

    // Reconstruction path.
    BackwardResult bd = backward(dec, d.cache, rec.grad);
    r.dec = std::move(bd.tape);
    Mat dz0 = std::move(bd.dx);  // B x m
    Mat dz1(x1.rows(), m);
    for (std::size_t b = 0; b < dz0.rows(); ++b)
        for (std::size_t j = 0; j < k; ++j) {
            dz0(b, selected[j]) += d_zs(b, j);
            dz1(b, selected[j]) -= d_res(b, j);
        }
    r.enc = GradTape::zeros_like(enc);
    r.enc.layers[0].dW = add(matmul_at(dz0, x0), matmul_at(dz1, x1));
    r.latents = select_cols(f0.y, selected);
    return r;
}

// ---------------------------------------------------------------------------
// Training loops

namespace detail {

struct Streams {
    Rng init, batch, noise;
    explicit Streams(std::uint64_t seed)
        : init(mix64({seed, fnv1a("fit.init")})),
          batch(mix64({seed, fnv1a("fit.batch")})),
          noise(mix64({seed, fnv1a("fit.noise")})) {}
};

/// Draws minibatches of time indices from the train prefix. With pairs, t is
/// drawn from [0, split - 2] so that (t, t + 1) stays inside the prefix.
class BatchSampler {
public:
    BatchSampler(const Dataset& ds, std::size_t batch, bool pairs) : ds_(ds), batch_(batch) {
        span_ = pairs ? ds.split - 1 : ds.split;
        if (span_ == 0) throw std::invalid_argument("fit: train split too short");
        if (batch_ == 0) throw std::invalid_argument("fit: batch must be positive");
    }

    void draw(Rng& rng) {
        idx_.resize(batch_);
        for (auto& i : idx_) i = static_cast<std::size_t>(rng.below(span_));
    }

    Mat gather(std::size_t offset) const {
        Mat out(batch_, ds_.X.cols());
        for (std::size_t b = 0; b < batch_; ++b) {
            auto src = ds_.X.row(idx_[b] + offset);
            std::copy(src.begin(), src.end(), out.row(b).begin());
        }
        return out;
    }

    std::size_t epoch_steps() const { return (span_ + batch_ - 1) / batch_; }

private:
    const Dataset& ds_;
    std::size_t batch_;
    std::size_t span_ = 0;
    std::vector<std::size_t> idx_;
};

/// Epoch-level accumulator for the loss / latent traces and the collapse flag.
class TraceRecorder {
public:
    TraceRecorder(Diagnostics& diag, std::size_t epoch_steps) : diag_(diag), epoch_(epoch_steps) {}

    void record(double loss, const Mat& latents) {
        const std::size_t B = latents.rows(), k = latents.cols();
        double var_sum = 0.0, norm_sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            double mean = 0.0;
            for (std::size_t b = 0; b < B; ++b) mean += latents(b, j);
            mean /= static_cast<double>(B);
            double ss = 0.0;
            for (std::size_t b = 0; b < B; ++b) ss += (latents(b, j) - mean) * (latents(b, j) - mean);
            var_sum += ss / static_cast<double>(B);
        }
        for (std::size_t b = 0; b < B; ++b) norm_sum += norm2(latents.row(b));
        loss_ += loss;
        var_ += var_sum / static_cast<double>(k);
        norm_ += norm_sum / static_cast<double>(B);
        if (++n_ == epoch_) flush();
    }

    void flush() {
        if (n_ == 0) return;
        const double n = static_cast<double>(n_);
        diag_.loss_trace.push_back(loss_ / n);
        diag_.latent_var_trace.push_back(var_ / n);
        diag_.latent_norm_trace.push_back(norm_ / n);
        if (var_ / n < 1e-6) diag_.collapsed = true;
        loss_ = var_ = norm_ = 0.0;
        n_ = 0;
    }

private:
    Diagnostics& diag_;
    std::size_t epoch_;
    std::size_t n_ = 0;
    double loss_ = 0.0, var_ = 0.0, norm_ = 0.0;
};

inline void check_loss(double loss, std::size_t step) {
    if (!std::isfinite(loss))
        throw TrainingDiverged("training diverged: non-finite loss at step " + std::to_string(step), step);
}

inline OptConfig opt_config(const TrainConfig& cfg) {
    OptConfig o;
    o.rule = cfg.rule;
    o.lr = cfg.lr;
    return o;
}

inline Network make_predictor(std::size_t in, std::size_t out, const TrainConfig& cfg, Rng& rng) {
    Network p = make_network(in, out, 0, rng);
    if (cfg.pred_identity_init && in == out) {
        p.layers[0].W = Mat::identity(in);
        std::fill(p.layers[0].b.begin(), p.layers[0].b.end(), 0.0);
    }
    return p;
}

inline void require_pairs(const Dataset& ds, const char* who) {
    if (ds.split < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 consecutive train steps");
}

inline Learner new_learner(Kind kind, const Dataset& ds, const TrainConfig& cfg) {
    if (ds.split == 0 || ds.split > ds.X.rows()) throw std::invalid_argument("fit: empty train split");
    if (cfg.latent_dim == 0) throw std::invalid_argument("fit: latent_dim must be positive");
    Learner l;
    l.kind = kind;
    l.latent_dim = cfg.latent_dim;
    l.cfg = cfg;
    return l;
}

}  // namespace detail

inline Learner fit_vae(const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    Learner l = detail::new_learner(Kind::vae, ds, cfg);
    detail::Streams st(cfg.seed);
    const std::size_t k = cfg.latent_dim, nx = ds.X.cols();
    l.encoder = make_network(nx, 2 * k, cfg.hidden, st.init);
    l.decoder = make_network(k, nx, cfg.hidden, st.init);
    OptState oe(detail::opt_config(cfg), l.encoder), od(detail::opt_config(cfg), l.decoder);
    detail::BatchSampler sampler(ds, cfg.batch, false);
    detail::TraceRecorder trace(l.diag, sampler.epoch_steps());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        sampler.draw(st.batch);
        const Mat x0 = sampler.gather(0);
        const Mat eps = gauss_mat(st.noise, cfg.batch, k, 1.0);
        ObjectiveResult r = vae_objective(l.encoder, l.decoder, x0, eps, cfg.beta);
        detail::check_loss(r.loss, step);
        GradTape* tapes[] = {&r.grads.enc, &r.grads.dec};
        if (clip_global_norm(tapes, cfg.clip_norm)) ++l.diag.clip_events;
        sgd_step(l.encoder, r.grads.enc, oe);
        sgd_step(l.decoder, r.grads.dec, od);
        ++l.diag.optimizer_steps;
        trace.record(r.loss, r.latents);
        if (hooks.on_step) hooks.on_step(step, l);
    }
    trace.flush();
    l.fitted = true;
    return l;
}

inline Learner fit_predvae(const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    detail::require_pairs(ds, "fit_predvae");
    Learner l = detail::new_learner(Kind::predvae, ds, cfg);
    detail::Streams st(cfg.seed);
    const std::size_t k = cfg.latent_dim, nx = ds.X.cols();
    l.encoder = make_network(nx, 2 * k, cfg.hidden, st.init);
    l.decoder = make_network(k, nx, cfg.hidden, st.init);
    l.predictor = detail::make_predictor(k, k, cfg, st.init);
    OptState oe(detail::opt_config(cfg), l.encoder), od(detail::opt_config(cfg), l.decoder),
        op(detail::opt_config(cfg), l.predictor);
    detail::BatchSampler sampler(ds, cfg.batch, true);
    detail::TraceRecorder trace(l.diag, sampler.epoch_steps());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        sampler.draw(st.batch);
        const Mat x0 = sampler.gather(0), x1 = sampler.gather(1);
        const Mat eps = gauss_mat(st.noise, cfg.batch, k, 1.0);
        ObjectiveResult r =
            predvae_objective(l.encoder, l.decoder, l.predictor, x0, x1, eps, cfg.beta, cfg.lambda_pred);
        detail::check_loss(r.loss, step);
        GradTape* tapes[] = {&r.grads.enc, &r.grads.dec, &r.grads.pred};
        if (clip_global_norm(tapes, cfg.clip_norm)) ++l.diag.clip_events;
        sgd_step(l.encoder, r.grads.enc, oe);
        sgd_step(l.decoder, r.grads.dec, od);
        sgd_step(l.predictor, r.grads.pred, op);
        ++l.diag.optimizer_steps;
        trace.record(r.loss, r.latents);
        if (hooks.on_step) hooks.on_step(step, l);
    }
    trace.flush();
    l.fitted = true;
    return l;
}

inline Learner fit_latentpredvae(const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    detail::require_pairs(ds, "fit_latentpredvae");
    Learner l = detail::new_learner(Kind::latentpredvae, ds, cfg);
    detail::Streams st(cfg.seed);
    const std::size_t k = cfg.latent_dim, nx = ds.X.cols();
    l.encoder = make_network(nx, 2 * k, cfg.hidden, st.init);
    l.decoder = make_network(k, nx, cfg.hidden, st.init);
    l.predictor = detail::make_predictor(k, k, cfg, st.init);
    OptState oe(detail::opt_config(cfg), l.encoder), od(detail::opt_config(cfg), l.decoder),
        op(detail::opt_config(cfg), l.predictor);
    detail::BatchSampler sampler(ds, cfg.batch, true);
    detail::TraceRecorder trace(l.diag, sampler.epoch_steps());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        sampler.draw(st.batch);
        const Mat x0 = sampler.gather(0), x1 = sampler.gather(1);
        const Mat eps0 = gauss_mat(st.noise, cfg.batch, k, 1.0);
        const Mat eps1 = gauss_mat(st.noise, cfg.batch, k, 1.0);
        ObjectiveResult r = latentpredvae_objective(l.encoder, l.decoder, l.predictor, x0, x1, eps0, eps1, cfg.beta,
                                                    cfg.lambda_pred);
        detail::check_loss(r.loss, step);
        GradTape* tapes[] = {&r.grads.enc, &r.grads.dec, &r.grads.pred};
        if (clip_global_norm(tapes, cfg.clip_norm)) ++l.diag.clip_events;
        sgd_step(l.encoder, r.grads.enc, oe);
        sgd_step(l.decoder, r.grads.dec, od);
        sgd_step(l.predictor, r.grads.pred, op);
        ++l.diag.optimizer_steps;
        trace.record(r.loss, r.latents);
        if (hooks.on_step) hooks.on_step(step, l);
    }
    trace.flush();
    l.fitted = true;
    return l;
}

inline Learner fit_jepa(const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    detail::require_pairs(ds, "fit_jepa");
    if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) throw std::invalid_argument("fit_jepa: tau must lie in [0, 1]");
    Learner l = detail::new_learner(Kind::jepa, ds, cfg);
    detail::Streams st(cfg.seed);
    const std::size_t k = cfg.latent_dim, nx = ds.X.cols();
    l.encoder = make_network(nx, k, cfg.hidden, st.init);
    l.predictor = detail::make_predictor(k, k, cfg, st.init);
    l.teacher = l.encoder;
    OptState oe(detail::opt_config(cfg), l.encoder), op(detail::opt_config(cfg), l.predictor);
    detail::BatchSampler sampler(ds, cfg.batch, true);
    detail::TraceRecorder trace(l.diag, sampler.epoch_steps());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        sampler.draw(st.batch);
        const Mat x0 = sampler.gather(0), x1 = sampler.gather(1);
        ObjectiveResult r = jepa_objective(l.encoder, l.predictor, l.teacher, x0, x1);
        detail::check_loss(r.loss, step);
        GradTape* tapes[] = {&r.grads.enc, &r.grads.pred};
        if (clip_global_norm(tapes, cfg.clip_norm)) ++l.diag.clip_events;
        sgd_step(l.encoder, r.grads.enc, oe);
        sgd_step(l.predictor, r.grads.pred, op);
        ema_update(l.teacher, l.encoder, cfg.tau);
        ++l.diag.optimizer_steps;
        trace.record(r.loss, r.latents);
        if (hooks.on_step) hooks.on_step(step, l);
    }
    trace.flush();
    l.fitted = true;
    return l;
}

inline Learner fit_randproj(const Dataset& ds, const TrainConfig& cfg) {
    Learner l = detail::new_learner(Kind::randproj, ds, cfg);
    detail::Streams st(cfg.seed);
    l.encoder = linear_network(random_unit_rows(cfg.latent_dim, ds.X.cols(), st.init));
    l.fitted = true;
    return l;
}

/// Random-projection encoder, then `rounds` alternations of predictor-only and
/// encoder-only training on mse(pred(enc(x_t)), enc(x_{t+1})).
inline Learner fit_predenc(const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    detail::require_pairs(ds, "fit_predenc");
    Learner l = detail::new_learner(Kind::predenc, ds, cfg);
    detail::Streams st(cfg.seed);
    const std::size_t k = cfg.latent_dim, nx = ds.X.cols();
    l.encoder = linear_network(random_unit_rows(k, nx, st.init));
    l.predictor = detail::make_predictor(k, k, cfg, st.init);
    const std::size_t per_phase = cfg.rounds == 0 ? 0 : cfg.steps / (2 * cfg.rounds);
    detail::BatchSampler sampler(ds, cfg.batch, true);
    detail::TraceRecorder trace(l.diag, sampler.epoch_steps());
    std::size_t step = 0;
    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        for (int phase = 0; phase < 2; ++phase) {
            const bool train_encoder = phase == 1;
            OptState opt = train_encoder ? OptState(detail::opt_config(cfg), l.encoder)
                                         : OptState(detail::opt_config(cfg), l.predictor);
            for (std::size_t i = 0; i < per_phase; ++i, ++step) {
                sampler.draw(st.batch);
                const Mat x0 = sampler.gather(0), x1 = sampler.gather(1);
                ObjectiveResult r = predenc_objective(l.encoder, l.predictor, x0, x1, cfg.predenc_stop_target);
                detail::check_loss(r.loss, step);
                GradTape& g = train_encoder ? r.grads.enc : r.grads.pred;
                GradTape* tapes[] = {&g};
                if (clip_global_norm(tapes, cfg.clip_norm)) ++l.diag.clip_events;
                sgd_step(train_encoder ? l.encoder : l.predictor, g, opt);
                ++l.diag.optimizer_steps;
                trace.record(r.loss, r.latents);
                if (hooks.on_step) hooks.on_step(step, l);
            }
        }
    }
    trace.flush();
    l.fitted = true;
    return l;
}

/// Projection onto principal axes [slice_start, slice_start + k) of the
/// centered train observations.
inline Learner fit_pca(const Dataset& ds, std::size_t slice_start, const TrainConfig& cfg) {
    Learner l = detail::new_learner(Kind::pca, ds, cfg);
    const std::size_t k = cfg.latent_dim, nx = ds.X.cols();
    if (slice_start + k > nx)
        throw std::invalid_argument("fit_pca: slice [" + std::to_string(slice_start) + ", " +
                                    std::to_string(slice_start + k) + ") exceeds n_x = " + std::to_string(nx));
    l.cfg.slice_start = slice_start;
    const Mat xt = ds.X_train();
    const std::size_t n = xt.rows();
    Vec mean(nx, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < nx; ++c) mean[c] += xt(r, c);
    for (auto& v : mean) v /= static_cast<double>(n);
    Mat xc = xt;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < nx; ++c) xc(r, c) -= mean[c];
    const Mat cov = scaled(matmul_at(xc, xc), 1.0 / static_cast<double>(n));
    const EigenResult eig = eig_sym(cov);
    Mat W(k, nx);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < nx; ++c) W(j, c) = eig.vectors(c, slice_start + j);
    Vec b = matvec(W, mean);
    for (auto& v : b) v = -v;
    l.encoder = linear_network(std::move(W), std::move(b));
    l.fitted = true;
    return l;
}

inline Learner fit_gatedpredae(const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    detail::require_pairs(ds, "fit_gatedpredae");
    const std::size_t k = cfg.latent_dim, m = cfg.gated_width, nx = ds.X.cols();
    if (m <= k) throw std::invalid_argument("fit_gatedpredae: gated_width must exceed latent_dim");
    if (m > nx) throw std::invalid_argument("fit_gatedpredae: gated_width exceeds n_x");
    Learner l = detail::new_learner(Kind::gatedpredae, ds, cfg);
    detail::Streams st(cfg.seed);
    l.encoder = linear_network(random_unit_rows(m, nx, st.init));
    l.decoder = make_network(m, nx, 0, st.init);
    l.predictor = make_network(k, m, 0, st.init);
    l.gate.logits.assign(m, 0.0);
    l.gate.selected = top_k_indices(l.gate.logits, k);
    OptState oe(detail::opt_config(cfg), l.encoder), od(detail::opt_config(cfg), l.decoder),
        op(detail::opt_config(cfg), l.predictor);
    OptState og;
    og.cfg = detail::opt_config(cfg);
    detail::BatchSampler sampler(ds, cfg.batch, true);
    detail::TraceRecorder trace(l.diag, sampler.epoch_steps());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        sampler.draw(st.batch);
        const Mat x0 = sampler.gather(0), x1 = sampler.gather(1);
        GatedResult r = gated_objective(l.encoder, l.decoder, l.predictor, l.gate.logits, l.gate.selected, x0, x1,
                                        cfg.lambda_pred);
        detail::check_loss(r.loss, step);
        GradTape* tapes[] = {&r.enc, &r.dec, &r.pred_tape};
        if (clip_global_norm(tapes, cfg.clip_norm, &r.d_logits)) ++l.diag.clip_events;
        sgd_step(l.encoder, r.enc, oe);
        sgd_step(l.decoder, r.dec, od);
        sgd_step(l.predictor, r.pred_tape, op);
        sgd_step(l.gate.logits, r.d_logits, og);
        Mat& W = l.encoder.layers[0].W;
        for (;;) {
            try {
                W = renorm_rows_unit(std::move(W));
                break;
            } catch (const DegenerateRowError& e) {
                const Vec fresh = gauss_sample(st.init, nx, 1.0);
                std::copy(fresh.begin(), fresh.end(), W.row(e.row).begin());
                ++l.diag.row_reinits;
            }
        }
        ++l.encoder.revision;
        l.gate.selected = top_k_indices(l.gate.logits, k);
        ++l.diag.optimizer_steps;
        trace.record(r.loss + r.aux, r.latents);
        if (hooks.on_step) hooks.on_step(step, l);
    }
    trace.flush();
    l.fitted = true;
    return l;
}

/// Dispatches on kind. PCA uses cfg.slice_start.
inline Learner fit(Kind kind, const Dataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    switch (kind) {
        case Kind::vae: return fit_vae(ds, cfg, hooks);
        case Kind::jepa: return fit_jepa(ds, cfg, hooks);
        case Kind::predvae: return fit_predvae(ds, cfg, hooks);
        case Kind::latentpredvae: return fit_latentpredvae(ds, cfg, hooks);
        case Kind::predenc: return fit_predenc(ds, cfg, hooks);
        case Kind::randproj: return fit_randproj(ds, cfg);
        case Kind::pca: return fit_pca(ds, cfg.slice_start, cfg);
        case Kind::gatedpredae: return fit_gatedpredae(ds, cfg, hooks);
    }
    throw std::invalid_argument("fit: unknown kind");
}

// ---------------------------------------------------------------------------
// Learner checkpoints
//
//   tvbench-checkpoint 1
//   kind <kind>
//   latent_dim <k>
//   seed <uint64>
//   config <key> <value>            one line per TrainConfig field
//   gate <m> <logits...> selected <k> <indices...>     (gatedpredae only)
//   networks <count>
//   network ... (see traincore)

inline void write_learner(std::ostream& os, const Learner& l) {
    if (!l.fitted) throw StateError("write_learner: learner is not fitted");
    const TrainConfig& c = l.cfg;
    os << "tvbench-checkpoint 1\nkind " << to_string(l.kind) << "\nlatent_dim " << l.latent_dim << "\nseed "
       << c.seed << '\n';
    os << "config hidden " << c.hidden << "\nconfig steps " << c.steps << "\nconfig batch " << c.batch
       << "\nconfig rule " << (c.rule == UpdateRule::adam ? "adam" : "sgd") << "\nconfig lr " << format_real(c.lr)
       << "\nconfig clip_norm " << format_real(c.clip_norm) << "\nconfig beta " << format_real(c.beta)
       << "\nconfig lambda_pred " << format_real(c.lambda_pred) << "\nconfig tau " << format_real(c.tau)
       << "\nconfig rounds " << c.rounds << "\nconfig predenc_stop_target " << (c.predenc_stop_target ? 1 : 0)
       << "\nconfig gated_width " << c.gated_width << "\nconfig slice_start " << c.slice_start << '\n';
    if (l.kind == Kind::gatedpredae) {
        os << "gate " << l.gate.logits.size();
        for (double v : l.gate.logits) os << ' ' << format_real(v);
        os << " selected " << l.gate.selected.size();
        for (std::size_t s : l.gate.selected) os << ' ' << s;
        os << '\n';
    }
    std::vector<std::pair<const char*, const Network*>> nets{{"encoder", &l.encoder}};
    if (!l.decoder.layers.empty()) nets.emplace_back("decoder", &l.decoder);
    if (!l.predictor.layers.empty()) nets.emplace_back("predictor", &l.predictor);
    if (!l.teacher.layers.empty()) nets.emplace_back("teacher", &l.teacher);
    os << "networks " << nets.size() << '\n';
    for (auto [name, net] : nets) write_network(os, name, *net);
}

inline Learner read_learner(std::istream& is) {
    std::string tag, val;
    int version = 0;
    if (!(is >> tag >> version) || tag != "tvbench-checkpoint" || version != 1)
        throw std::runtime_error("checkpoint: bad header");
    Learner l;
    auto expect = [&](const char* key) {
        if (!(is >> tag >> val) || tag != key)
            throw std::runtime_error(std::string("checkpoint: expected '") + key + "'");
        return val;
    };
    l.kind = kind_from_string(expect("kind"));
    l.latent_dim = std::stoul(expect("latent_dim"));
    l.cfg.latent_dim = l.latent_dim;
    l.cfg.seed = std::stoull(expect("seed"));
    std::size_t n_nets = 0;
    while (is >> tag) {
        if (tag == "config") {
            std::string key;
            is >> key >> val;
            TrainConfig& c = l.cfg;
            if (key == "hidden") c.hidden = std::stoul(val);
            else if (key == "steps") c.steps = std::stoul(val);
            else if (key == "batch") c.batch = std::stoul(val);
            else if (key == "rule") c.rule = val == "sgd" ? UpdateRule::sgd : UpdateRule::adam;
            else if (key == "lr") c.lr = parse_real(val);
            else if (key == "clip_norm") c.clip_norm = parse_real(val);
            else if (key == "beta") c.beta = parse_real(val);
            else if (key == "lambda_pred") c.lambda_pred = parse_real(val);
            else if (key == "tau") c.tau = parse_real(val);
            else if (key == "rounds") c.rounds = std::stoul(val);
            else if (key == "predenc_stop_target") c.predenc_stop_target = val == "1";
            else if (key == "gated_width") c.gated_width = std::stoul(val);
            else if (key == "slice_start") c.slice_start = std::stoul(val);
            else throw std::runtime_error("checkpoint: unknown config key '" + key + "'");
        } else if (tag == "gate") {
            std::size_t m = 0, k = 0;
            is >> m;
            l.gate.logits.resize(m);
            for (auto& v : l.gate.logits) {
                is >> val;
                v = parse_real(val);
            }
            is >> tag >> k;
            l.gate.selected.resize(k);
            for (auto& s : l.gate.selected) is >> s;
        } else if (tag == "networks") {
            is >> n_nets;
            break;
        } else {
            throw std::runtime_error("checkpoint: unexpected token '" + tag + "'");
        }
    }
    for (std::size_t i = 0; i < n_nets; ++i) {
        const auto pos = is.tellg();
        std::string name;
        is >> tag >> name;
        is.seekg(pos);
        Network net = read_network(is, name);
        if (name == "encoder") l.encoder = std::move(net);
        else if (name == "decoder") l.decoder = std::move(net);
        else if (name == "predictor") l.predictor = std::move(net);
        else if (name == "teacher") l.teacher = std::move(net);
        else throw std::runtime_error("checkpoint: unknown network '" + name + "'");
    }
    if (!is) throw std::runtime_error("checkpoint: truncated");
    l.fitted = true;
    return l;
}

}  // namespace tvbench
