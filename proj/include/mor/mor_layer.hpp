// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mixture-of-Ranks layer. Every rank of the low-rank update is its own expert:
//
//   y = W0 x + Σ_{i ∈ top-k} g_i B_i A_i x + Σ_{j shared} B_j A_j x
//
// with gates g = softmax(s W_g) restricted to the k largest entries (not
// renormalized). Routed indices 0..n-1 are real rank-1 experts, n..N-1 are zero
// experts that own no parameters and always contribute nothing.

#pragma once

#include "mor/numeric.hpp"

#include <array>
#include <numeric>
#include <optional>
#include <string>

namespace mor {

struct MorConfig {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::size_t m = 8;  // shared ranks
    std::size_t n = 28; // routed real ranks
    std::size_t z = 4;  // zero experts
    std::size_t k = 8;  // active routed experts per input
    std::size_t score_dim = 7;

    std::size_t routed() const noexcept { return n + z; }

    void validate() const {
        if (d_in == 0 || d_out == 0)
            throw std::invalid_argument("MorConfig: d_in and d_out must be positive");
        if (k > routed())
            throw std::invalid_argument("MorConfig: k=" + std::to_string(k) + " exceeds n+z=" + std::to_string(routed()));
        if (routed() > 0 && k == 0)
            throw std::invalid_argument("MorConfig: k must be positive when routed experts exist");
        if (score_dim == 0)
            throw std::invalid_argument("MorConfig: score_dim must be positive");
    }
};

struct RoutingDecision {
    Vector scores;                     // router input s
    Vector probs;                      // softmax(s W_g) over all N routed experts
    std::vector<std::size_t> selected; // k indices, by descending probability
    Vector gates;                      // probs at selected indices, 0 elsewhere

    std::size_t zero_selected(std::size_t n_real) const {
        return static_cast<std::size_t>(
            std::count_if(selected.begin(), selected.end(), [&](std::size_t i) { return i >= n_real; }));
    }
};

/// Parameters of one layer. Row j of `shared_a` is A_j, column j of `shared_b` is
/// B_j; likewise for the routed real experts.
struct MorLayer {
    MorConfig config;
    Matrix w0;       // d_out x d_in, frozen
    Matrix shared_a; // m x d_in
    Matrix shared_b; // d_out x m
    Matrix routed_a; // n x d_in
    Matrix routed_b; // d_out x n
    Matrix w_g;      // score_dim x N
};

/// Trainable parameter groups in a fixed order (also the checkpoint order).
inline constexpr std::array<const char *, 5> kMorParamNames = {"shared_a", "shared_b", "routed_a", "routed_b", "w_g"};

inline std::array<Matrix *, 5> trainable(MorLayer &l) {
    return {&l.shared_a, &l.shared_b, &l.routed_a, &l.routed_b, &l.w_g};
}
inline std::array<const Matrix *, 5> trainable(const MorLayer &l) {
    return {&l.shared_a, &l.shared_b, &l.routed_a, &l.routed_b, &l.w_g};
}

struct MorGrads {
    Matrix shared_a, shared_b, routed_a, routed_b, w_g;

    static MorGrads zeros_like(const MorLayer &l) {
        return {Matrix(l.shared_a.rows(), l.shared_a.cols()), Matrix(l.shared_b.rows(), l.shared_b.cols()),
                Matrix(l.routed_a.rows(), l.routed_a.cols()), Matrix(l.routed_b.rows(), l.routed_b.cols()),
                Matrix(l.w_g.rows(), l.w_g.cols())};
    }
    std::array<Matrix *, 5> groups() { return {&shared_a, &shared_b, &routed_a, &routed_b, &w_g}; }
    std::array<const Matrix *, 5> groups() const { return {&shared_a, &shared_b, &routed_a, &routed_b, &w_g}; }
};

/// A ~ N(0, 1/d_in), B = 0, W_g ~ N(0, 1/score_dim). Without `w0` the base map is
/// the (rectangular) identity.
inline MorLayer init_mor_layer(const MorConfig &cfg, SeededRng &rng, std::optional<Matrix> w0 = std::nullopt) {
    cfg.validate();
    MorLayer l;
    l.config = cfg;
    if (w0) {
        if (w0->rows() != cfg.d_out || w0->cols() != cfg.d_in)
            throw std::invalid_argument("init_mor_layer: W0 is " + w0->shape_string() + ", expected " +
                                        std::to_string(cfg.d_out) + "x" + std::to_string(cfg.d_in));
        l.w0 = std::move(*w0);
    } else {
        l.w0 = Matrix(cfg.d_out, cfg.d_in);
        for (std::size_t i = 0; i < std::min(cfg.d_in, cfg.d_out); ++i)
            l.w0(i, i) = 1.0;
    }
    const double a_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_in));
    l.shared_a = random_normal(cfg.m, cfg.d_in, a_std, rng);
    l.shared_b = Matrix(cfg.d_out, cfg.m);
    l.routed_a = random_normal(cfg.n, cfg.d_in, a_std, rng);
    l.routed_b = Matrix(cfg.d_out, cfg.n);
    l.w_g = random_normal(cfg.score_dim, cfg.routed(), 1.0 / std::sqrt(static_cast<double>(cfg.score_dim)), rng);
    return l;
}

/// Indices of the k largest values; equal values keep ascending index order.
inline std::vector<std::size_t> top_k_indices(const Vector &v, std::size_t k) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

/// Builds a decision from given probabilities (used directly by tests).
inline RoutingDecision decision_from_probs(Vector probs, std::size_t k, Vector scores = {}) {
    RoutingDecision d;
    d.scores = std::move(scores);
    d.selected = top_k_indices(probs, k);
    d.gates.assign(probs.size(), 0.0);
    for (std::size_t i : d.selected)
        d.gates[i] = probs[i];
    d.probs = std::move(probs);
    return d;
}

inline RoutingDecision route(const MorLayer &l, std::span<const double> s) {
    if (s.size() != l.config.score_dim)
        throw std::invalid_argument("route: score vector has " + std::to_string(s.size()) +
                                    " entries, router expects " + std::to_string(l.config.score_dim));
    if (l.config.routed() == 0)
        return RoutingDecision{Vector(s.begin(), s.end()), {}, {}, {}};
    return decision_from_probs(softmax(matvec_transposed(l.w_g, s)), l.config.k, Vector(s.begin(), s.end()));
}

namespace detail {

inline void check_forward_shapes(const MorLayer &l, std::span<const double> x, const RoutingDecision &d,
                                 const char *what) {
    if (x.size() != l.config.d_in)
        throw std::invalid_argument(std::string(what) + ": input has " + std::to_string(x.size()) +
                                    " entries, layer expects " + std::to_string(l.config.d_in));
    if (d.probs.size() != l.config.routed() || d.gates.size() != l.config.routed())
        throw std::invalid_argument(std::string(what) + ": routing decision covers " +
                                    std::to_string(d.probs.size()) + " experts, layer has " +
                                    std::to_string(l.config.routed()));
}

} // namespace detail

inline Vector mor_forward(const MorLayer &l, std::span<const double> x, const RoutingDecision &d) {
    detail::check_forward_shapes(l, x, d, "mor_forward");
    Vector y = matvec(l.w0, x);
    const std::size_t d_out = l.config.d_out;
    for (std::size_t j = 0; j < l.config.m; ++j) {
        const double ax = dot(l.shared_a.row(j), x);
        for (std::size_t r = 0; r < d_out; ++r)
            y[r] += l.shared_b(r, j) * ax;
    }
    for (std::size_t i : d.selected) {
        if (i >= l.config.n)
            continue; // zero expert
        const double coeff = d.gates[i] * dot(l.routed_a.row(i), x);
        for (std::size_t r = 0; r < d_out; ++r)
            y[r] += l.routed_b(r, i) * coeff;
    }
    return y;
}

/// dL/dW_g given dL/dprobs for one decision, through the softmax Jacobian:
/// dlogit_j = p_j (dp_j − Σ_i p_i dp_i), dW_g = s ⊗ dlogit.
inline void router_backward(const RoutingDecision &d, std::span<const double> dprobs, Matrix &dw_g) {
    if (dprobs.size() != d.probs.size() || dw_g.cols() != d.probs.size() || dw_g.rows() != d.scores.size())
        throw std::invalid_argument("router_backward: shape mismatch");
    const double mean = dot(d.probs, dprobs);
    Vector dlogit(d.probs.size());
    for (std::size_t j = 0; j < d.probs.size(); ++j)
        dlogit[j] = d.probs[j] * (dprobs[j] - mean);
    add_outer(dw_g, d.scores, dlogit);
}

/// Accumulates parameter gradients into `g` and returns dL/dx. Only selected
/// real experts receive expert gradients; the router gradient flows through the
/// selected probabilities with the top-k mask held fixed. `extra_dprobs`, if
/// given, adds a direct gradient on the probabilities (balance losses).
inline Vector mor_backward(const MorLayer &l, std::span<const double> x, const RoutingDecision &d,
                           std::span<const double> upstream, MorGrads &g, std::span<const double> extra_dprobs = {}) {
    detail::check_forward_shapes(l, x, d, "mor_backward");
    if (upstream.size() != l.config.d_out)
        throw std::invalid_argument("mor_backward: upstream gradient has " + std::to_string(upstream.size()) +
                                    " entries, layer output is " + std::to_string(l.config.d_out));
    if (!extra_dprobs.empty() && extra_dprobs.size() != l.config.routed())
        throw std::invalid_argument("mor_backward: probability gradient size mismatch");
    Vector dx = matvec_transposed(l.w0, upstream);

    for (std::size_t j = 0; j < l.config.m; ++j) {
        const double ax = dot(l.shared_a.row(j), x);
        double btu = 0.0;
        for (std::size_t r = 0; r < l.config.d_out; ++r) {
            btu += l.shared_b(r, j) * upstream[r];
            g.shared_b(r, j) += upstream[r] * ax;
        }
        auto ga = g.shared_a.row(j);
        auto a = l.shared_a.row(j);
        for (std::size_t c = 0; c < l.config.d_in; ++c) {
            ga[c] += btu * x[c];
            dx[c] += btu * a[c];
        }
    }

    Vector dprobs(l.config.routed(), 0.0);
    if (!extra_dprobs.empty())
        std::copy(extra_dprobs.begin(), extra_dprobs.end(), dprobs.begin());
    for (std::size_t i : d.selected) {
        if (i >= l.config.n)
            continue;
        const double gate = d.gates[i];
        const double ax = dot(l.routed_a.row(i), x);
        double btu = 0.0;
        for (std::size_t r = 0; r < l.config.d_out; ++r) {
            btu += l.routed_b(r, i) * upstream[r];
            g.routed_b(r, i) += gate * upstream[r] * ax;
        }
        auto ga = g.routed_a.row(i);
        auto a = l.routed_a.row(i);
        for (std::size_t c = 0; c < l.config.d_in; ++c) {
            ga[c] += gate * btu * x[c];
            dx[c] += gate * btu * a[c];
        }
        dprobs[i] += btu * ax; // dL/dg_i = upstreamᵀ B_i A_i x
    }
    if (l.config.routed() > 0)
        router_backward(d, dprobs, g.w_g);
    return dx;
}

/// Dense oracle B·A with the stacked rank-1 pairs (shared first, then routed).
inline Matrix dense_lora_delta(const MorLayer &l) {
    Matrix delta(l.config.d_out, l.config.d_in);
    const auto accumulate = [&](const Matrix &a, const Matrix &b) {
        for (std::size_t j = 0; j < a.rows(); ++j)
            for (std::size_t r = 0; r < b.rows(); ++r)
                for (std::size_t c = 0; c < a.cols(); ++c)
                    delta(r, c) += b(r, j) * a(j, c);
    };
    accumulate(l.shared_a, l.shared_b);
    accumulate(l.routed_a, l.routed_b);
    return delta;
}

inline double routing_entropy(const RoutingDecision &d) {
    double h = 0.0;
    for (double p : d.probs)
        if (p > 0.0)
            h -= p * std::log(p);
    return h;
}

} // namespace mor
