// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense linear algebra, seeded random streams, Adam, and a central-difference
// gradient oracle. Everything is double precision with fixed reduction order so
// that results are reproducible bit-for-bit across runs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mor {

using Vector = std::vector<double>;

/// Row-major dense matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_string());
    }
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto &r : rows) {
            if (r.size() != cols_)
                throw std::invalid_argument("Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double> &data() noexcept { return data_; }
    const std::vector<double> &data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    std::string shape_string() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }
    bool same_shape(const Matrix &o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix &o) const = default;

    Matrix &operator+=(const Matrix &o) {
        check_same(o, "operator+=");
        for (std::size_t i = 0; i < data_.size(); ++i)
            data_[i] += o.data_[i];
        return *this;
    }
    Matrix &operator*=(double s) {
        for (double &v : data_)
            v *= s;
        return *this;
    }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c)
                t(c, r) = (*this)(r, c);
        return t;
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void check_same(const Matrix &o, const char *what) const {
        if (!same_shape(o))
            throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string() +
                                        " vs " + o.shape_string());
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Row-by-row accumulation; the k loop order is fixed for determinism.
inline Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: dimension mismatch " + a.shape_string() + " x " +
                                    b.shape_string());
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0)
                continue;
            const auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j)
                orow[j] += aik * brow[j];
        }
    }
    return out;
}

/// y = M x
inline Vector matvec(const Matrix &m, std::span<const double> x) {
    if (m.cols() != x.size())
        throw std::invalid_argument("matvec: " + m.shape_string() + " times vector of length " +
                                    std::to_string(x.size()));
    Vector y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c)
            acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

/// y = Mᵀ x
inline Vector matvec_transposed(const Matrix &m, std::span<const double> x) {
    if (m.rows() != x.size())
        throw std::invalid_argument("matvec_transposed: " + m.shape_string() +
                                    " transposed times vector of length " + std::to_string(x.size()));
    Vector y(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double xr = x[r];
        if (xr == 0.0)
            continue;
        const auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c)
            y[c] += row[c] * xr;
    }
    return y;
}

/// M += scale * u ⊗ v
inline void add_outer(Matrix &m, std::span<const double> u, std::span<const double> v, double scale = 1.0) {
    if (m.rows() != u.size() || m.cols() != v.size())
        throw std::invalid_argument("add_outer: " + m.shape_string() + " vs outer " +
                                    std::to_string(u.size()) + "x" + std::to_string(v.size()));
    for (std::size_t r = 0; r < u.size(); ++r) {
        const double ur = scale * u[r];
        if (ur == 0.0)
            continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < v.size(); ++c)
            row[c] += ur * v[c];
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vector softmax(std::span<const double> logits) {
    if (logits.empty())
        throw std::invalid_argument("softmax: empty vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        total += out[i];
    }
    for (double &v : out)
        v /= total;
    return out;
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine_similarity: dimension mismatch " + std::to_string(u.size()) +
                                    " vs " + std::to_string(v.size()));
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (nu == 0.0 || nv == 0.0)
        throw std::invalid_argument("cosine_similarity: zero-norm embedding");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Random numbers

/// SplitMix64 (Steele, Lea, Flood 2014): a Weyl counter with increment
/// 0x9E3779B97F4A7C15 followed by the variant-13 finalizer. Integer-only, so the
/// raw stream is identical on every platform.
class SeededRng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    explicit SeededRng(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        state_ += kGolden;
        return mix(state_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Box-Muller; consumes exactly two draws per call.
    double normal() noexcept {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t n) noexcept { return n ? next_u64() % n : 0; }

    /// Poisson(lambda). Inverse CDF for lambda < 30, otherwise Hörmann's PTRS.
    std::int64_t poisson(double lambda) {
        if (!(lambda >= 0.0) || !std::isfinite(lambda))
            throw std::invalid_argument("poisson: lambda must be finite and non-negative");
        if (lambda == 0.0)
            return 0;
        if (lambda < 30.0) {
            const double u = uniform();
            double p = std::exp(-lambda);
            double cdf = p;
            std::int64_t k = 0;
            while (u > cdf && k < 1000) {
                ++k;
                p *= lambda / static_cast<double>(k);
                cdf += p;
            }
            return k;
        }
        const double slam = std::sqrt(lambda);
        const double loglam = std::log(lambda);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform() - 0.5;
            const double v = uniform();
            const double us = 0.5 - std::abs(u);
            const auto k = static_cast<std::int64_t>(std::floor((2.0 * a / us + b) * u + lambda + 0.43));
            if (us >= 0.07 && v <= vr)
                return k;
            if (k < 0 || (us < 0.013 && v > us))
                continue;
            if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
                -lambda + static_cast<double>(k) * loglam - std::lgamma(static_cast<double>(k) + 1.0))
                return k;
        }
    }

    std::uint64_t state() const noexcept { return state_; }
    void set_state(std::uint64_t s) noexcept { state_ = s; }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Independent child seed for a numbered sub-stream: mix(seed + (stream+1)·golden),
/// remixed once more so that neighbouring streams share no counter values.
constexpr std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return SeededRng::mix(SeededRng::mix(seed + (stream + 1) * SeededRng::kGolden) ^ 0xD1B54A32D192ED03ULL);
}

/// FNV-1a 64-bit, used to key per-file seeds by name.
inline std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, SeededRng &rng) {
    Matrix m(rows, cols);
    for (double &v : m.data())
        v = stddev * rng.normal();
    return m;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
    Matrix m;
    Matrix v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 5e-5; // fine-tuning rate used for the full-scale model

    AdamState() = default;
    AdamState(std::size_t rows, std::size_t cols, double learning_rate)
        : m(rows, cols), v(rows, cols), lr(learning_rate) {}
    static AdamState like(const Matrix &p, double learning_rate) {
        return AdamState(p.rows(), p.cols(), learning_rate);
    }

    bool operator==(const AdamState &) const = default;
};

inline void adam_step(Matrix &params, const Matrix &grads, AdamState &state) {
    params.check_same(grads, "adam_step(params, grads)");
    if (state.m.empty() && !params.empty()) {
        state.m = Matrix(params.rows(), params.cols());
        state.v = Matrix(params.rows(), params.cols());
    }
    params.check_same(state.m, "adam_step(params, state)");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    auto &p = params.data();
    auto &m = state.m.data();
    auto &v = state.v.data();
    const auto &g = grads.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

// ---------------------------------------------------------------------------
// Gradient oracle

inline Matrix finite_diff_grad(const std::function<double(const Matrix &)> &f, const Matrix &x, double h) {
    if (!(h > 0.0))
        throw std::invalid_argument("finite_diff_grad: step must be positive");
    Matrix probe = x;
    Matrix grad(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double fp = f(probe);
        probe.data()[i] = orig - h;
        const double fm = f(probe);
        probe.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::domain_error("finite_diff_grad: non-finite function value at entry " +
                                    std::to_string(i));
        grad.data()[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// ‖a − b‖₂ / max(‖b‖₂, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-10) {
    if (a.size() != b.size())
        throw std::invalid_argument("relative_error: length mismatch");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

inline double relative_error(const Matrix &a, const Matrix &b, double floor = 1e-10) {
    a.check_same(b, "relative_error");
    return relative_error(a.data(), b.data(), floor);
}

} // namespace mor
