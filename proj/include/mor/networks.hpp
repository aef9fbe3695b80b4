// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy-scale networks for single-step latent restoration: the ε-prediction MLP
// used for the teacher and the online score network, the multi-level
// discriminator, and the generator (trainable encoder, two MoR layers, frozen
// decoder). All backward passes are written out by hand.

#pragma once

#include "mor/losses.hpp"
#include "mor/mor_layer.hpp"

#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace mor {

using NamedParams = std::vector<std::pair<std::string, Matrix *>>;
using NamedConstParams = std::vector<std::pair<std::string, const Matrix *>>;

inline constexpr std::size_t kTimeFeatures = 4;

/// [1, t/T, sin(πt/T), cos(πt/T)]; the constant entry doubles as a bias input.
inline std::array<double, kTimeFeatures> time_embedding(std::size_t t, std::size_t steps) {
    const double u = static_cast<double>(t) / static_cast<double>(steps);
    return {1.0, u, std::sin(std::numbers::pi * u), std::cos(std::numbers::pi * u)};
}

inline Vector with_time(std::span<const double> z, std::size_t t, std::size_t steps) {
    Vector x(z.begin(), z.end());
    const auto te = time_embedding(t, steps);
    x.insert(x.end(), te.begin(), te.end());
    return x;
}

inline void tanh_inplace(Vector &v) {
    for (double &x : v)
        x = std::tanh(x);
}

// ---------------------------------------------------------------------------
// Score network: ε̂ = W2 tanh(W1 [z; temb(t)])

struct ScoreNet {
    Matrix w1; // hidden x (d + 4)
    Matrix w2; // d x hidden
    std::size_t steps = 1000;

    struct Cache {
        Vector input;
        Vector hidden;
    };

    static ScoreNet init(std::size_t latent, std::size_t hidden, std::size_t steps, SeededRng &rng) {
        ScoreNet net;
        net.w1 = random_normal(hidden, latent + kTimeFeatures, 1.0 / std::sqrt(double(latent + kTimeFeatures)), rng);
        net.w2 = random_normal(latent, hidden, 1.0 / std::sqrt(double(hidden)), rng);
        net.steps = steps;
        return net;
    }
    static ScoreNet zeros_like(const ScoreNet &o) {
        return {Matrix(o.w1.rows(), o.w1.cols()), Matrix(o.w2.rows(), o.w2.cols()), o.steps};
    }

    std::size_t latent() const noexcept { return w2.rows(); }

    Vector forward(std::span<const double> z, std::size_t t, Cache *cache = nullptr) const {
        if (z.size() != latent())
            throw std::invalid_argument("ScoreNet: latent has " + std::to_string(z.size()) + " entries, expected " +
                                        std::to_string(latent()));
        Vector x = with_time(z, t, steps);
        Vector h = matvec(w1, x);
        tanh_inplace(h);
        Vector out = matvec(w2, h);
        if (cache)
            *cache = {std::move(x), std::move(h)};
        return out;
    }
    Vector operator()(std::span<const double> z, std::size_t t) const { return forward(z, t); }

    /// Accumulates into `grad` and returns dL/dz.
    Vector backward(const Cache &c, std::span<const double> upstream, ScoreNet &grad) const {
        add_outer(grad.w2, upstream, c.hidden);
        Vector dh = matvec_transposed(w2, upstream);
        for (std::size_t i = 0; i < dh.size(); ++i)
            dh[i] *= 1.0 - c.hidden[i] * c.hidden[i];
        add_outer(grad.w1, dh, c.input);
        Vector dx = matvec_transposed(w1, dh);
        dx.resize(latent());
        return dx;
    }

    NamedParams params() { return {{"w1", &w1}, {"w2", &w2}}; }
    NamedConstParams params() const { return {{"w1", &w1}, {"w2", &w2}}; }
};

// ---------------------------------------------------------------------------
// Discriminator: one two-layer head per noise level, each scoring z_t.

struct Discriminator {
    std::vector<std::size_t> levels; // t per head
    std::vector<Matrix> v1;          // hidden x (d + 4)
    std::vector<Matrix> v2;          // 1 x hidden
    std::size_t steps = 1000;

    struct HeadCache {
        Vector input;
        Vector hidden;
    };
    struct Cache {
        std::vector<HeadCache> heads;
    };

    /// Heads at T/4, T/2 and 3T/4.
    static Discriminator init(std::size_t latent, std::size_t hidden, std::size_t steps, SeededRng &rng) {
        Discriminator d;
        d.steps = steps;
        for (std::size_t q = 1; q <= 3; ++q) {
            d.levels.push_back(std::max<std::size_t>(1, q * steps / 4));
            d.v1.push_back(random_normal(hidden, latent + kTimeFeatures, 1.0 / std::sqrt(double(latent + kTimeFeatures)), rng));
            d.v2.push_back(random_normal(1, hidden, 1.0 / std::sqrt(double(hidden)), rng));
        }
        return d;
    }
    static Discriminator zeros_like(const Discriminator &o) {
        Discriminator d;
        d.levels = o.levels;
        d.steps = o.steps;
        for (std::size_t h = 0; h < o.heads(); ++h) {
            d.v1.emplace_back(o.v1[h].rows(), o.v1[h].cols());
            d.v2.emplace_back(o.v2[h].rows(), o.v2[h].cols());
        }
        return d;
    }

    std::size_t heads() const noexcept { return levels.size(); }
    std::size_t latent() const noexcept { return v1.empty() ? 0 : v1.front().cols() - kTimeFeatures; }

    /// Scores a clean latent: head h sees √ᾱ z0 + √(1−ᾱ) ε_h at its level.
    Vector forward(std::span<const double> z0, const std::vector<Vector> &eps, const NoiseSchedule &schedule,
                   Cache *cache = nullptr) const {
        if (eps.size() != heads())
            throw std::invalid_argument("Discriminator: need one noise vector per head");
        Vector out(heads());
        if (cache)
            cache->heads.resize(heads());
        for (std::size_t h = 0; h < heads(); ++h) {
            const Vector zt = add_noise(z0, eps[h], schedule.abar(levels[h]));
            Vector x = with_time(zt, levels[h], steps);
            Vector hid = matvec(v1[h], x);
            tanh_inplace(hid);
            out[h] = dot(v2[h].row(0), hid);
            if (cache)
                cache->heads[h] = {std::move(x), std::move(hid)};
        }
        return out;
    }

    /// Accumulates into `grad`; returns dL/dz0.
    Vector backward(const Cache &c, std::span<const double> dout, const NoiseSchedule &schedule,
                    Discriminator &grad) const {
        Vector dz0(latent(), 0.0);
        for (std::size_t h = 0; h < heads(); ++h) {
            const auto &hc = c.heads[h];
            const double g = dout[h];
            Vector dh(hc.hidden.size());
            for (std::size_t i = 0; i < dh.size(); ++i) {
                grad.v2[h](0, i) += g * hc.hidden[i];
                dh[i] = g * v2[h](0, i) * (1.0 - hc.hidden[i] * hc.hidden[i]);
            }
            add_outer(grad.v1[h], dh, hc.input);
            const Vector dx = matvec_transposed(v1[h], dh);
            const double a = std::sqrt(schedule.abar(levels[h]));
            for (std::size_t i = 0; i < dz0.size(); ++i)
                dz0[i] += a * dx[i];
        }
        return dz0;
    }

    NamedParams params() {
        NamedParams p;
        for (std::size_t h = 0; h < heads(); ++h) {
            p.emplace_back("v1_" + std::to_string(h), &v1[h]);
            p.emplace_back("v2_" + std::to_string(h), &v2[h]);
        }
        return p;
    }
    NamedConstParams params() const {
        NamedConstParams p;
        for (std::size_t h = 0; h < heads(); ++h) {
            p.emplace_back("v1_" + std::to_string(h), &v1[h]);
            p.emplace_back("v2_" + std::to_string(h), &v2[h]);
        }
        return p;
    }
};

// ---------------------------------------------------------------------------
// Generator

/// Orthonormal 2-D DCT-II basis restricted to the lowest `kh` x `kw`
/// frequencies, as a (h·w) x (kh·kw) matrix with orthonormal columns.
inline Matrix dct_basis(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw) {
    if (kh > h || kw > w)
        throw std::invalid_argument("dct_basis: more frequencies than pixels");
    const auto basis1d = [](std::size_t n, std::size_t k, std::size_t x) {
        const double scale = k == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
        return scale * std::cos(std::numbers::pi * (double(x) + 0.5) * double(k) / double(n));
    };
    Matrix m(h * w, kh * kw);
    for (std::size_t u = 0; u < kh; ++u)
        for (std::size_t v = 0; v < kw; ++v)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    m(y * w + x, u * kw + v) = basis1d(h, u, y) * basis1d(w, v, x);
    return m;
}

/// Pixels are centred before encoding and the offset restored after decoding.
inline constexpr double kPixelOffset = 0.5;

inline Vector centered_pixels(const ImageF &img) {
    Vector v = img.data();
    for (double &x : v)
        x -= kPixelOffset;
    return v;
}

struct ToyGenerator {
    std::size_t height = 0, width = 0;
    Matrix encoder; // d x P, trainable
    Matrix decoder; // P x d, frozen
    MorLayer mor1;  // (d + 4) -> hidden
    MorLayer mor2;  // hidden -> d
    std::size_t steps = 1000;
    double abar_t = 1.0; // ᾱ at the generator's fixed step T

    struct Cache {
        Vector pixels;
        Vector in1;
        RoutingDecision route1, route2;
        Vector hidden;
        Vector z0_hat;
        ImageF output;
    };

    struct Grads {
        Matrix encoder;
        MorGrads mor1, mor2;

        static Grads zeros_like(const ToyGenerator &g) {
            return {Matrix(g.encoder.rows(), g.encoder.cols()), MorGrads::zeros_like(g.mor1),
                    MorGrads::zeros_like(g.mor2)};
        }
        NamedParams params() {
            NamedParams p{{"encoder", &encoder}};
            const auto g1 = mor1.groups(), g2 = mor2.groups();
            for (std::size_t i = 0; i < kMorParamNames.size(); ++i)
                p.emplace_back(std::string("mor1.") + kMorParamNames[i], g1[i]);
            for (std::size_t i = 0; i < kMorParamNames.size(); ++i)
                p.emplace_back(std::string("mor2.") + kMorParamNames[i], g2[i]);
            return p;
        }
    };

    std::size_t latent() const noexcept { return decoder.cols(); }
    std::size_t pixels() const noexcept { return decoder.rows(); }

    /// Base maps W0 come from the pretrained score network; adapters from `cfg`.
    static ToyGenerator init(std::size_t height, std::size_t width, const Matrix &decoder, const ScoreNet &base,
                             const MorConfig &adapter, double abar_t, SeededRng &rng) {
        if (decoder.rows() != height * width)
            throw std::invalid_argument("ToyGenerator: decoder rows do not match image size");
        if (base.latent() != decoder.cols())
            throw std::invalid_argument("ToyGenerator: score network latent size does not match decoder");
        ToyGenerator g;
        g.height = height;
        g.width = width;
        g.decoder = decoder;
        g.encoder = decoder.transposed();
        g.steps = base.steps;
        g.abar_t = abar_t;
        MorConfig c1 = adapter;
        c1.d_in = base.w1.cols();
        c1.d_out = base.w1.rows();
        MorConfig c2 = adapter;
        c2.d_in = base.w2.cols();
        c2.d_out = base.w2.rows();
        g.mor1 = init_mor_layer(c1, rng, base.w1);
        g.mor2 = init_mor_layer(c2, rng, base.w2);
        return g;
    }

    Vector encode(const ImageF &img) const {
        if (img.height() != height || img.width() != width || img.channels() != 1)
            throw std::invalid_argument("ToyGenerator: expected " + std::to_string(height) + "x" +
                                        std::to_string(width) + "x1 input, got " + img.shape_string());
        return matvec(encoder, centered_pixels(img));
    }

    ImageF decode(std::span<const double> z) const {
        Vector px = matvec(decoder, z);
        for (double &v : px)
            v += kPixelOffset;
        return ImageF(height, width, 1, std::move(px));
    }

    /// Latent of a clean image under the frozen decoder's basis (teacher data, real samples).
    Vector clean_latent(const ImageF &img) const { return matvec_transposed(decoder, centered_pixels(img)); }

    /// One restoration: ẑ0 = predict_x0(z_L, ε_θ(z_L, T; s)), output Dec ẑ0.
    ImageF forward(const ImageF &lr, std::span<const double> scores, Cache *cache = nullptr) const {
        Cache local;
        Cache &c = cache ? *cache : local;
        c.pixels = centered_pixels(lr);
        const Vector zl = encode(lr);
        c.in1 = with_time(zl, steps, steps);
        c.route1 = route(mor1, scores);
        c.route2 = route(mor2, scores);
        c.hidden = mor_forward(mor1, c.in1, c.route1);
        tanh_inplace(c.hidden);
        const Vector eps = mor_forward(mor2, c.hidden, c.route2);
        c.z0_hat = predict_x0(zl, eps, abar_t);
        c.output = decode(c.z0_hat);
        return c.output;
    }

    /// Accumulates generator gradients given dL/dẑ0 and optional direct
    /// gradients on each layer's router probabilities.
    void backward(const Cache &c, std::span<const double> dz0, Grads &g, std::span<const double> dprobs1 = {},
                  std::span<const double> dprobs2 = {}) const {
        const double a = std::sqrt(abar_t), b = std::sqrt(1.0 - abar_t);
        Vector deps(dz0.size()), dzl(dz0.size());
        for (std::size_t i = 0; i < dz0.size(); ++i) {
            deps[i] = -b / a * dz0[i];
            dzl[i] = dz0[i] / a;
        }
        Vector dh = mor_backward(mor2, c.hidden, c.route2, deps, g.mor2, dprobs2);
        for (std::size_t i = 0; i < dh.size(); ++i)
            dh[i] *= 1.0 - c.hidden[i] * c.hidden[i];
        const Vector din = mor_backward(mor1, c.in1, c.route1, dh, g.mor1, dprobs1);
        for (std::size_t i = 0; i < dzl.size(); ++i)
            dzl[i] += din[i];
        add_outer(g.encoder, dzl, c.pixels);
    }

    NamedParams trainable_params() {
        NamedParams p{{"encoder", &encoder}};
        const auto g1 = trainable(mor1), g2 = trainable(mor2);
        for (std::size_t i = 0; i < kMorParamNames.size(); ++i)
            p.emplace_back(std::string("mor1.") + kMorParamNames[i], g1[i]);
        for (std::size_t i = 0; i < kMorParamNames.size(); ++i)
            p.emplace_back(std::string("mor2.") + kMorParamNames[i], g2[i]);
        return p;
    }
    /// Everything, frozen tensors included (checkpoint order).
    NamedConstParams all_params() const {
        NamedConstParams p{{"encoder", &encoder}, {"decoder", &decoder}, {"mor1.w0", &mor1.w0}};
        const auto g1 = trainable(mor1), g2 = trainable(mor2);
        for (std::size_t i = 0; i < kMorParamNames.size(); ++i)
            p.emplace_back(std::string("mor1.") + kMorParamNames[i], g1[i]);
        p.emplace_back("mor2.w0", &mor2.w0);
        for (std::size_t i = 0; i < kMorParamNames.size(); ++i)
            p.emplace_back(std::string("mor2.") + kMorParamNames[i], g2[i]);
        return p;
    }
};

} // namespace mor
