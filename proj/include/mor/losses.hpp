// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Losses that reach the generator come with their exact
// gradients; balance losses hand back dL/dprobs for each routing decision so the
// router gradient can be formed by `router_backward`.

#pragma once

#include "mor/estimator.hpp"
#include "mor/image.hpp"
#include "mor/mor_layer.hpp"

#include <functional>

namespace mor {

/// Linear-β DDPM schedule; `abar(t)` for t in 1..T.
class NoiseSchedule {
public:
    NoiseSchedule() : NoiseSchedule(1000) {}
    explicit NoiseSchedule(std::size_t steps, double beta_start = 1e-4, double beta_end = 0.02) {
        if (steps == 0)
            throw std::invalid_argument("NoiseSchedule: need at least one step");
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
            throw std::invalid_argument("NoiseSchedule: need 0 < beta_start <= beta_end < 1");
        abar_.reserve(steps);
        double prod = 1.0;
        for (std::size_t t = 0; t < steps; ++t) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
            prod *= 1.0 - (beta_start + frac * (beta_end - beta_start));
            abar_.push_back(prod);
        }
    }

    std::size_t steps() const noexcept { return abar_.size(); }
    double abar(std::size_t t) const {
        if (t < 1 || t > abar_.size())
            throw std::out_of_range("NoiseSchedule: step " + std::to_string(t) + " outside 1.." +
                                    std::to_string(abar_.size()));
        return abar_[t - 1];
    }

private:
    Vector abar_;
};

struct LossWeights {
    double lambda_vsd = 1.0;
    double lambda_gan = 0.1;
    double alpha_balance = 0.01;
    double lambda_grad = 0.5;

    void validate() const {
        if (lambda_vsd < 0 || lambda_gan < 0 || alpha_balance < 0 || lambda_grad < 0)
            throw std::invalid_argument("LossWeights: weights must be non-negative");
    }
};

/// z_t = √ᾱ z0 + √(1−ᾱ) ε
inline Vector add_noise(std::span<const double> z0, std::span<const double> eps, double abar) {
    if (z0.size() != eps.size())
        throw std::invalid_argument("add_noise: shape mismatch");
    const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    Vector out(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i)
        out[i] = a * z0[i] + b * eps[i];
    return out;
}

/// ẑ0 = (z − √(1−ᾱ) ε̂) / √ᾱ
inline Vector predict_x0(std::span<const double> z_in, std::span<const double> eps_pred, double abar_t) {
    if (!(abar_t > 0.0) || abar_t > 1.0)
        throw std::invalid_argument("predict_x0: abar_T must lie in (0, 1], got " + format_double(abar_t));
    if (z_in.size() != eps_pred.size())
        throw std::invalid_argument("predict_x0: shape mismatch");
    const double a = std::sqrt(abar_t), b = std::sqrt(1.0 - abar_t);
    Vector out(z_in.size());
    for (std::size_t i = 0; i < z_in.size(); ++i)
        out[i] = (z_in[i] - b * eps_pred[i]) / a;
    return out;
}

inline double mse(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("mse: shape mismatch or empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

inline double diffusion_loss(std::span<const double> eps_true, std::span<const double> eps_pred) {
    return mse(eps_pred, eps_true);
}

/// d diffusion_loss / d eps_pred
inline Vector diffusion_loss_grad(std::span<const double> eps_true, std::span<const double> eps_pred) {
    if (eps_true.size() != eps_pred.size() || eps_true.empty())
        throw std::invalid_argument("diffusion_loss_grad: shape mismatch or empty input");
    Vector g(eps_pred.size());
    const double scale = 2.0 / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = scale * (eps_pred[i] - eps_true[i]);
    return g;
}

using ScoreFn = std::function<Vector(std::span<const double>, std::size_t)>;
using WeightFn = std::function<double(std::size_t)>;

inline double unit_weight(std::size_t) { return 1.0; }

/// Gradient of the distillation objective with respect to ẑ0:
/// ω(t) (ε_teacher(z_t, t) − ε_student(z_t, t)) √ᾱ_t.
inline Vector vsd_gradient(std::span<const double> z0_hat, std::size_t t, std::span<const double> eps,
                           const ScoreFn &teacher, const ScoreFn &student, const WeightFn &omega,
                           const NoiseSchedule &schedule) {
    const double abar = schedule.abar(t);
    const Vector zt = add_noise(z0_hat, eps, abar);
    const Vector et = teacher(zt, t);
    const Vector es = student(zt, t);
    if (et.size() != z0_hat.size() || es.size() != z0_hat.size())
        throw std::invalid_argument("vsd_gradient: score output has " + std::to_string(et.size()) + "/" +
                                    std::to_string(es.size()) + " entries, latent has " +
                                    std::to_string(z0_hat.size()));
    const double w = omega(t) * std::sqrt(abar);
    Vector g(z0_hat.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = w * (et[i] - es[i]);
    return g;
}

inline double gan_generator_loss(std::span<const double> disc_outputs) {
    if (disc_outputs.empty())
        throw std::invalid_argument("gan_generator_loss: no discriminator outputs");
    double acc = 0.0;
    for (double v : disc_outputs)
        acc += v;
    return -acc / static_cast<double>(disc_outputs.size());
}

/// Hinge loss mean(relu(1 − real)) + mean(relu(1 + fake)).
inline double discriminator_loss(std::span<const double> real, std::span<const double> fake) {
    if (real.empty() || fake.empty())
        throw std::invalid_argument("discriminator_loss: empty output list");
    double r = 0.0, f = 0.0;
    for (double v : real)
        r += std::max(0.0, 1.0 - v);
    for (double v : fake)
        f += std::max(0.0, 1.0 + v);
    return r / static_cast<double>(real.size()) + f / static_cast<double>(fake.size());
}

/// Subgradients of `discriminator_loss` (0 at the hinge).
inline std::pair<Vector, Vector> discriminator_loss_grad(std::span<const double> real, std::span<const double> fake) {
    if (real.empty() || fake.empty())
        throw std::invalid_argument("discriminator_loss_grad: empty output list");
    Vector gr(real.size()), gf(fake.size());
    for (std::size_t i = 0; i < real.size(); ++i)
        gr[i] = real[i] < 1.0 ? -1.0 / static_cast<double>(real.size()) : 0.0;
    for (std::size_t i = 0; i < fake.size(); ++i)
        gf[i] = fake[i] > -1.0 ? 1.0 / static_cast<double>(fake.size()) : 0.0;
    return {gr, gf};
}

// ---------------------------------------------------------------------------
// Load balancing

struct BalanceStats {
    Vector f; // fraction of samples whose argmax expert is i
    Vector p; // mean router probability of expert i
    std::size_t batch = 0;

    std::size_t experts() const noexcept { return f.size(); }
};

inline BalanceStats balance_stats(std::span<const RoutingDecision> decisions) {
    if (decisions.empty())
        throw std::invalid_argument("balance_stats: no routing decisions");
    const std::size_t n = decisions.front().probs.size();
    if (n == 0)
        throw std::invalid_argument("balance_stats: layer has no routed experts");
    BalanceStats st{Vector(n, 0.0), Vector(n, 0.0), decisions.size()};
    const double inv_b = 1.0 / static_cast<double>(decisions.size());
    for (const auto &d : decisions) {
        if (d.probs.size() != n)
            throw std::invalid_argument("balance_stats: decisions disagree on expert count (" + std::to_string(n) +
                                        " vs " + std::to_string(d.probs.size()) + ")");
        // max_element returns the first maximum, i.e. ties go to the lowest index
        const auto arg = static_cast<std::size_t>(std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin());
        st.f[arg] += inv_b;
        for (std::size_t i = 0; i < n; ++i)
            st.p[i] += inv_b * d.probs[i];
    }
    return st;
}

/// Per-expert weights α_i: α for real experts (i < n_real), s·α for zero experts.
inline Vector balance_weights(std::size_t experts, double alpha, std::size_t n_real, double s) {
    if (n_real > experts)
        throw std::invalid_argument("balance_weights: n_real exceeds expert count");
    Vector w(experts, alpha);
    for (std::size_t i = n_real; i < experts; ++i)
        w[i] = s * alpha;
    return w;
}

inline double weighted_balance_loss(const BalanceStats &st, std::span<const double> alpha_i) {
    if (alpha_i.size() != st.experts())
        throw std::invalid_argument("weighted_balance_loss: weight vector size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < st.experts(); ++i)
        acc += alpha_i[i] * st.f[i] * st.p[i];
    return static_cast<double>(st.experts()) * acc;
}

/// α N Σ f_i P_i; α is applied last so uniform routing gives exactly α.
inline double balance_loss(const BalanceStats &st, double alpha) {
    return alpha * weighted_balance_loss(st, Vector(st.experts(), 1.0));
}

/// N Σ α_i f_i P_i with α_i = α (real experts) or s·α (zero experts).
inline double deg_aware_balance_loss(const BalanceStats &st, double alpha, std::size_t n_real, ScalarDegradation s) {
    return weighted_balance_loss(st, balance_weights(st.experts(), alpha, n_real, s.value));
}

/// dL/dp_i(x) for each sample's probabilities, with the dispatch fractions f
/// held constant: N α_i f_i / b.
inline Vector balance_prob_grad(const BalanceStats &st, std::span<const double> alpha_i) {
    Vector g(st.experts());
    const double scale = static_cast<double>(st.experts()) / static_cast<double>(st.batch);
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = scale * alpha_i[i] * st.f[i];
    return g;
}

// ---------------------------------------------------------------------------
// Reconstruction

namespace detail {

/// Visits every forward difference (horizontal then vertical) as index pairs (a, b), meaning v[a] − v[b].
template <typename Fn> void for_each_difference(const ImageF &img, Fn &&fn) {
    const std::size_t h = img.height(), w = img.width(), c = img.channels();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x + 1 < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                fn((y * w + x + 1) * c + ch, (y * w + x) * c + ch);
    for (std::size_t y = 0; y + 1 < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                fn(((y + 1) * w + x) * c + ch, (y * w + x) * c + ch);
}

inline std::size_t difference_count(const ImageF &img) {
    return img.channels() * (img.height() * (img.width() - 1) + (img.height() - 1) * img.width());
}

} // namespace detail

/// MSE(pred, target) + λ_grad · MSE(∇pred, ∇target) with forward-difference gradients.
inline double reconstruction_loss(const ImageF &pred, const ImageF &target, double lambda_grad = 0.5) {
    require_same_shape(pred, target, "reconstruction_loss");
    const double base = mse(pred.data(), target.data());
    const std::size_t nd = detail::difference_count(pred);
    if (nd == 0 || lambda_grad == 0.0)
        return base;
    const auto &p = pred.data();
    const auto &t = target.data();
    double acc = 0.0;
    detail::for_each_difference(pred, [&](std::size_t a, std::size_t b) {
        const double d = (p[a] - p[b]) - (t[a] - t[b]);
        acc += d * d;
    });
    return base + lambda_grad * acc / static_cast<double>(nd);
}

/// d reconstruction_loss / d pred, as an image of the same shape.
inline ImageF reconstruction_loss_grad(const ImageF &pred, const ImageF &target, double lambda_grad = 0.5) {
    require_same_shape(pred, target, "reconstruction_loss_grad");
    ImageF g(pred.height(), pred.width(), pred.channels());
    const auto &p = pred.data();
    const auto &t = target.data();
    auto &gd = g.data();
    const double base_scale = 2.0 / static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        gd[i] = base_scale * (p[i] - t[i]);
    const std::size_t nd = detail::difference_count(pred);
    if (nd == 0 || lambda_grad == 0.0)
        return g;
    const double scale = 2.0 * lambda_grad / static_cast<double>(nd);
    detail::for_each_difference(pred, [&](std::size_t a, std::size_t b) {
        const double d = (p[a] - p[b]) - (t[a] - t[b]);
        gd[a] += scale * d;
        gd[b] -= scale * d;
    });
    return g;
}

struct LossParts {
    double rec = 0.0;
    double vsd = 0.0; // surrogate value; the gradient is applied directly
    double gan = 0.0;
    double balance = 0.0;
};

/// L_rec + λ1 L_VSD + λ2 L_GAN + L_balance (the balance term already carries α).
inline double total_generator_loss(const LossParts &parts, const LossWeights &w) {
    return parts.rec + w.lambda_vsd * parts.vsd + w.lambda_gan * parts.gan + parts.balance;
}

} // namespace mor
