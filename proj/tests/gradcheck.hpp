#pragma once

// Central-difference checks of every training objective's analytic gradient.
// Shared by the model unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tvbench/models.hpp"

namespace gradcheck {

using namespace tvbench;

inline constexpr double kStep = 1e-5;

/// max relative error between the concatenated tapes and central differences
/// of f over the concatenated parameters of nets.
inline double check_nets(const std::vector<Network>& nets, const std::vector<const GradTape*>& tapes,
                         const std::function<double(const std::vector<Network>&)>& f) {
    Vec theta, analytic;
    for (const auto& n : nets) {
        const Vec p = flatten(n);
        theta.insert(theta.end(), p.begin(), p.end());
    }
    for (const GradTape* t : tapes) {
        const Vec g = flatten(*t);
        analytic.insert(analytic.end(), g.begin(), g.end());
    }
    auto loss = [&](const Vec& th) {
        std::vector<Network> copy = nets;
        std::size_t off = 0;
        for (auto& n : copy) off += unflatten(n, std::span<const double>(th).subspan(off));
        return f(copy);
    };
    return oracle::max_rel_error(analytic, finite_diff_grad(loss, theta, kStep));
}

inline Network randomized(Network n, Rng& r) {
    for (auto& l : n.layers)
        for (auto& v : l.b) v = 0.3 * r.normal();
    return n;
}

struct Shapes {
    std::size_t nx = 20, k = 4, m = 8, batch = 16;
};

/// One random point per call. Returns the max relative error for the named objective.
inline double check_point(const std::string& objective, std::uint64_t seed, const Shapes& sh = {}) {
    Rng r(mix64({seed, fnv1a(objective)}));
    const std::size_t hidden = seed % 2 ? 5 : 0;
    const Mat x0 = gauss_mat(r, sh.batch, sh.nx, 1.0), x1 = gauss_mat(r, sh.batch, sh.nx, 1.0);
    const Mat eps0 = gauss_mat(r, sh.batch, sh.k, 1.0), eps1 = gauss_mat(r, sh.batch, sh.k, 1.0);
    const double beta = 0.5, lambda = 0.7;

    if (objective == "vae") {
        const Network enc = randomized(make_network(sh.nx, 2 * sh.k, hidden, r), r);
        const Network dec = randomized(make_network(sh.k, sh.nx, hidden, r), r);
        const ObjectiveResult o = vae_objective(enc, dec, x0, eps0, beta);
        return check_nets({enc, dec}, {&o.grads.enc, &o.grads.dec},
                          [&](const std::vector<Network>& n) { return vae_objective(n[0], n[1], x0, eps0, beta).loss; });
    }
    if (objective == "predvae") {
        const Network enc = randomized(make_network(sh.nx, 2 * sh.k, hidden, r), r);
        const Network dec = randomized(make_network(sh.k, sh.nx, hidden, r), r);
        const Network pred = randomized(make_network(sh.k, sh.k, 0, r), r);
        const ObjectiveResult o = predvae_objective(enc, dec, pred, x0, x1, eps0, beta, lambda);
        return check_nets({enc, dec, pred}, {&o.grads.enc, &o.grads.dec, &o.grads.pred},
                          [&](const std::vector<Network>& n) {
                              return predvae_objective(n[0], n[1], n[2], x0, x1, eps0, beta, lambda).loss;
                          });
    }
    if (objective == "latentpredvae") {
        const Network enc = randomized(make_network(sh.nx, 2 * sh.k, hidden, r), r);
        const Network dec = randomized(make_network(sh.k, sh.nx, hidden, r), r);
        const Network pred = randomized(make_network(sh.k, sh.k, 0, r), r);
        const ObjectiveResult o = latentpredvae_objective(enc, dec, pred, x0, x1, eps0, eps1, beta, lambda);
        return check_nets({enc, dec, pred}, {&o.grads.enc, &o.grads.dec, &o.grads.pred},
                          [&](const std::vector<Network>& n) {
                              return latentpredvae_objective(n[0], n[1], n[2], x0, x1, eps0, eps1, beta, lambda).loss;
                          });
    }
    if (objective == "jepa") {
        const Network student = randomized(make_network(sh.nx, sh.k, hidden, r), r);
        const Network teacher = randomized(make_network(sh.nx, sh.k, hidden, r), r);
        const Network pred = randomized(make_network(sh.k, sh.k, 0, r), r);
        const ObjectiveResult o = jepa_objective(student, pred, teacher, x0, x1);
        return check_nets({student, pred}, {&o.grads.enc, &o.grads.pred}, [&](const std::vector<Network>& n) {
            return jepa_objective(n[0], n[1], teacher, x0, x1).loss;
        });
    }
    if (objective == "predenc" || objective == "predenc_joint") {
        const bool stop = objective == "predenc";
        const Network enc = linear_network(random_unit_rows(sh.k, sh.nx, r));
        const Network pred = randomized(make_network(sh.k, sh.k, 0, r), r);
        const ObjectiveResult o = predenc_objective(enc, pred, x0, x1, stop);
        // With the stop, the target side is evaluated at the unperturbed encoder.
        const Mat frozen = apply(enc, x1);
        return check_nets({enc, pred}, {&o.grads.enc, &o.grads.pred}, [&](const std::vector<Network>& n) {
            const Mat target = stop ? frozen : apply(n[0], x1);
            return mse_loss(apply(n[1], apply(n[0], x0)), target).loss;
        });
    }
    if (objective == "gatedpredae") {
        const Network enc = linear_network(random_unit_rows(sh.m, sh.nx, r));
        const Network dec = randomized(make_network(sh.m, sh.nx, 0, r), r);
        const Network pred = randomized(make_network(sh.k, sh.m, 0, r), r);
        const Vec logits = gauss_sample(r, sh.m, 1.0);
        const auto sel = top_k_indices(logits, sh.k);
        const GatedResult g = gated_objective(enc, dec, pred, logits, sel, x0, x1, lambda);
        auto eval = [&](const Network& e, const Network& d, const Network& p, const Vec& lg) {
            return gated_objective(e, d, p, lg, sel, x0, x1, lambda);
        };
        // Encoder: main loss only. Decoder and predictor: main plus aux rows.
        double worst = check_nets({enc}, {&g.enc}, [&](const std::vector<Network>& n) {
            return eval(n[0], dec, pred, logits).loss;
        });
        worst = std::max(worst, check_nets({dec, pred}, {&g.dec, &g.pred_tape}, [&](const std::vector<Network>& n) {
                             const GatedResult o = eval(enc, n[0], n[1], logits);
                             return o.loss + o.aux;
                         }));
        const Vec fd = finite_diff_grad([&](const Vec& lg) { return eval(enc, dec, pred, lg).surrogate; }, logits, kStep);
        return std::max(worst, oracle::max_rel_error(g.d_logits, fd));
    }
    throw std::invalid_argument("gradcheck: unknown objective " + objective);
}

inline const std::vector<std::string>& objectives() {
    static const std::vector<std::string> names{"vae", "predvae", "latentpredvae", "jepa", "predenc", "gatedpredae"};
    return names;
}

}  // namespace gradcheck
