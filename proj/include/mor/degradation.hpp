// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic LR/HR pair generation with a two-stage degradation chain:
//   stage 1: blur -> bicubic downsample -> noise -> jpeg
//   stage 2: blur (gated) -> noise -> jpeg
// All randomness flows from one pipeline seed. Parameter draws use sub-stream 0,
// stage-1 noise sub-stream 1 and stage-2 noise sub-stream 2. The number of
// parameter draws is fixed, so two profiles evaluated with the same seed see the
// same uniforms mapped into their own ranges.

#pragma once

#include "mor/image.hpp"
#include "mor/kv_config.hpp"
#include "mor/numeric.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

namespace mor {

namespace detail {

/// Mirror without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1)
        return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0)
        i += period;
    if (i >= static_cast<std::ptrdiff_t>(n))
        i = period - i;
    return static_cast<std::size_t>(i);
}

/// Kernels wider than the image are fine: reflection is periodic.
inline void require_odd_kernel(int ksize, const char *what) {
    if (ksize <= 0 || ksize % 2 == 0)
        throw std::invalid_argument(std::string(what) + ": kernel size must be odd and positive, got " +
                                    std::to_string(ksize));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Blur

/// Normalized 1-D Gaussian taps; sigma = 0 gives a unit impulse.
inline Vector gaussian_kernel1d(int ksize, double sigma) {
    Vector k(static_cast<std::size_t>(ksize), 0.0);
    const int r = ksize / 2;
    if (sigma == 0.0) {
        k[static_cast<std::size_t>(r)] = 1.0;
        return k;
    }
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = v;
        total += v;
    }
    for (double &v : k)
        v /= total;
    return k;
}

/// Shape-exponent kernel exp(-½ (r²/σ²)^β); β = 1 is the Gaussian.
inline Matrix generalized_gaussian_kernel2d(int ksize, double sigma, double beta) {
    Matrix k(static_cast<std::size_t>(ksize), static_cast<std::size_t>(ksize));
    const int r = ksize / 2;
    if (sigma == 0.0) {
        k(static_cast<std::size_t>(r), static_cast<std::size_t>(r)) = 1.0;
        return k;
    }
    double total = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double q = (x * x + y * y) / (sigma * sigma);
            const double v = std::exp(-0.5 * std::pow(q, beta));
            k(static_cast<std::size_t>(y + r), static_cast<std::size_t>(x + r)) = v;
            total += v;
        }
    k *= 1.0 / total;
    return k;
}

inline ImageF convolve_separable(const ImageF &img, const Vector &kernel) {
    const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const std::size_t h = img.height(), w = img.width(), c = img.channels();
    ImageF tmp(h, w, c), out(h, w, c);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::ptrdiff_t i = -r; i <= r; ++i)
                    acc += kernel[static_cast<std::size_t>(i + r)] *
                           img.at(y, detail::reflect_index(static_cast<std::ptrdiff_t>(x) + i, w), ch);
                tmp.at(y, x, ch) = acc;
            }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::ptrdiff_t i = -r; i <= r; ++i)
                    acc += kernel[static_cast<std::size_t>(i + r)] *
                           tmp.at(detail::reflect_index(static_cast<std::ptrdiff_t>(y) + i, h), x, ch);
                out.at(y, x, ch) = acc;
            }
    return out;
}

inline ImageF convolve2d(const ImageF &img, const Matrix &kernel) {
    const auto r = static_cast<std::ptrdiff_t>(kernel.rows() / 2);
    const std::size_t h = img.height(), w = img.width(), c = img.channels();
    ImageF out(h, w, c);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
                    const std::size_t sy = detail::reflect_index(static_cast<std::ptrdiff_t>(y) + dy, h);
                    for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
                        acc += kernel(static_cast<std::size_t>(dy + r), static_cast<std::size_t>(dx + r)) *
                               img.at(sy, detail::reflect_index(static_cast<std::ptrdiff_t>(x) + dx, w), ch);
                }
                out.at(y, x, ch) = acc;
            }
    return out;
}

inline ImageF gaussian_blur(const ImageF &img, int kernel_size, double sigma) {
    detail::require_odd_kernel(kernel_size, "gaussian_blur");
    if (!(sigma >= 0.0))
        throw std::invalid_argument("gaussian_blur: sigma must be non-negative");
    if (sigma == 0.0)
        return img;
    ImageF out = convolve_separable(img, gaussian_kernel1d(kernel_size, sigma));
    out.clamp01();
    return out;
}

inline ImageF generalized_gaussian_blur(const ImageF &img, int kernel_size, double sigma, double beta) {
    detail::require_odd_kernel(kernel_size, "generalized_gaussian_blur");
    if (!(sigma >= 0.0) || !(beta > 0.0))
        throw std::invalid_argument("generalized_gaussian_blur: need sigma >= 0 and beta > 0");
    if (sigma == 0.0)
        return img;
    ImageF out = convolve2d(img, generalized_gaussian_kernel2d(kernel_size, sigma, beta));
    out.clamp01();
    return out;
}

// ---------------------------------------------------------------------------
// Noise

/// sigma is on the 0..255 scale.
inline ImageF add_gaussian_noise(const ImageF &img, double sigma_8bit, SeededRng &rng) {
    if (!(sigma_8bit >= 0.0))
        throw std::invalid_argument("add_gaussian_noise: sigma must be non-negative");
    if (sigma_8bit == 0.0)
        return img;
    const double s = sigma_8bit / 255.0;
    ImageF out = img;
    for (double &v : out.data())
        v = std::clamp(v + s * rng.normal(), 0.0, 1.0);
    return out;
}

/// λ = v·255/scale, output Poisson(λ)·scale/255. Larger scale means more noise.
inline ImageF add_poisson_noise(const ImageF &img, double scale, SeededRng &rng) {
    if (!(scale > 0.0))
        throw std::invalid_argument("add_poisson_noise: scale must be positive");
    ImageF out = img;
    for (double &v : out.data()) {
        const double lambda = std::max(v, 0.0) * 255.0 / scale;
        v = std::clamp(static_cast<double>(rng.poisson(lambda)) * scale / 255.0, 0.0, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JPEG-like compression proxy

namespace detail {

inline constexpr std::array<int, 64> kLumaQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<int, 64> kChromaQuant = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

/// IJG quality scaling of a base table.
inline std::array<double, 64> scaled_quant_table(const std::array<int, 64> &base, int quality) {
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<double, 64> out{};
    for (std::size_t i = 0; i < 64; ++i)
        out[i] = static_cast<double>(std::clamp((base[i] * scale + 50) / 100, 1, 255));
    return out;
}

struct DctBasis {
    std::array<double, 64> c{}; // c[u*8+x] = α(u) cos((2x+1)uπ/16)
    DctBasis() {
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x) {
                const double alpha = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
                c[static_cast<std::size_t>(u * 8 + x)] = alpha * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
            }
    }
};

inline const DctBasis &dct_basis() {
    static const DctBasis basis;
    return basis;
}

/// Orthonormal 8x8 DCT-II on a row-major block.
inline std::array<double, 64> dct8x8(const std::array<double, 64> &block) {
    const auto &c = dct_basis().c;
    std::array<double, 64> tmp{}, out{};
    for (int y = 0; y < 8; ++y)
        for (int u = 0; u < 8; ++u) {
            double acc = 0.0;
            for (int x = 0; x < 8; ++x)
                acc += c[static_cast<std::size_t>(u * 8 + x)] * block[static_cast<std::size_t>(y * 8 + x)];
            tmp[static_cast<std::size_t>(y * 8 + u)] = acc;
        }
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
            double acc = 0.0;
            for (int y = 0; y < 8; ++y)
                acc += c[static_cast<std::size_t>(v * 8 + y)] * tmp[static_cast<std::size_t>(y * 8 + u)];
            out[static_cast<std::size_t>(v * 8 + u)] = acc;
        }
    return out;
}

inline std::array<double, 64> idct8x8(const std::array<double, 64> &coef) {
    const auto &c = dct_basis().c;
    std::array<double, 64> tmp{}, out{};
    for (int v = 0; v < 8; ++v)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u)
                acc += c[static_cast<std::size_t>(u * 8 + x)] * coef[static_cast<std::size_t>(v * 8 + u)];
            tmp[static_cast<std::size_t>(v * 8 + x)] = acc;
        }
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int v = 0; v < 8; ++v)
                acc += c[static_cast<std::size_t>(v * 8 + y)] * tmp[static_cast<std::size_t>(v * 8 + x)];
            out[static_cast<std::size_t>(y * 8 + x)] = acc;
        }
    return out;
}

/// Quantize the AC coefficients of every 8x8 block of a plane on the 0..255 scale.
/// Borders are padded by edge replication. The DC coefficient is passed through.
inline void quantize_plane(std::vector<double> &plane, std::size_t h, std::size_t w,
                           const std::array<double, 64> &table) {
    for (std::size_t by = 0; by < h; by += 8)
        for (std::size_t bx = 0; bx < w; bx += 8) {
            std::array<double, 64> block{};
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    const std::size_t sy = std::min(by + y, h - 1);
                    const std::size_t sx = std::min(bx + x, w - 1);
                    block[y * 8 + x] = plane[sy * w + sx];
                }
            auto coef = dct8x8(block);
            for (std::size_t i = 1; i < 64; ++i)
                coef[i] = std::round(coef[i] / table[i]) * table[i];
            const auto rec = idct8x8(coef);
            for (std::size_t y = 0; y < 8 && by + y < h; ++y)
                for (std::size_t x = 0; x < 8 && bx + x < w; ++x)
                    plane[(by + y) * w + bx + x] = rec[y * 8 + x];
        }
}

} // namespace detail

/// Block-DCT quantization proxy for JPEG compression; not a bit-compatible codec.
inline ImageF jpeg_proxy_compress(const ImageF &img, int quality) {
    if (quality < 1 || quality > 100)
        throw std::invalid_argument("jpeg_proxy_compress: quality must be in [1,100], got " +
                                    std::to_string(quality));
    const std::size_t h = img.height(), w = img.width(), n = img.pixels();
    ImageF out(h, w, img.channels());
    const auto luma = detail::scaled_quant_table(detail::kLumaQuant, quality);
    if (img.channels() == 1) {
        std::vector<double> plane(n);
        for (std::size_t i = 0; i < n; ++i)
            plane[i] = img.data()[i] * 255.0 - 128.0;
        detail::quantize_plane(plane, h, w, luma);
        for (std::size_t i = 0; i < n; ++i)
            out.data()[i] = std::clamp((plane[i] + 128.0) / 255.0, 0.0, 1.0);
        return out;
    }
    const auto chroma = detail::scaled_quant_table(detail::kChromaQuant, quality);
    std::vector<double> yp(n), cb(n), cr(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = img.data()[3 * i] * 255.0, g = img.data()[3 * i + 1] * 255.0,
                     b = img.data()[3 * i + 2] * 255.0;
        yp[i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        cb[i] = -0.168735892 * r - 0.331264108 * g + 0.5 * b;
        cr[i] = 0.5 * r - 0.418687589 * g - 0.081312411 * b;
    }
    detail::quantize_plane(yp, h, w, luma);
    detail::quantize_plane(cb, h, w, chroma);
    detail::quantize_plane(cr, h, w, chroma);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = yp[i] + 128.0;
        out.data()[3 * i] = std::clamp((y + 1.402 * cr[i]) / 255.0, 0.0, 1.0);
        out.data()[3 * i + 1] = std::clamp((y - 0.344136286 * cb[i] - 0.714136286 * cr[i]) / 255.0, 0.0, 1.0);
        out.data()[3 * i + 2] = std::clamp((y + 1.772 * cb[i]) / 255.0, 0.0, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bicubic resampling

inline double catmull_rom(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0)
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0)
        return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

namespace detail {

/// Resample along one axis: `n_in` -> `n_out` samples, half-pixel centres.
struct AxisTaps {
    std::vector<std::array<std::size_t, 4>> index;
    std::vector<std::array<double, 4>> weight;
};

inline AxisTaps bicubic_taps(std::size_t n_in, std::size_t n_out) {
    AxisTaps taps;
    taps.index.resize(n_out);
    taps.weight.resize(n_out);
    const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const double base = std::floor(src);
        const double t = src - base;
        for (int j = 0; j < 4; ++j) {
            const auto i = static_cast<std::ptrdiff_t>(base) - 1 + j;
            taps.index[o][static_cast<std::size_t>(j)] = reflect_index(i, n_in);
            taps.weight[o][static_cast<std::size_t>(j)] = catmull_rom(t - (j - 1));
        }
    }
    return taps;
}

} // namespace detail

/// Resize by `factor` (output side = round(input side × factor)).
inline ImageF resize_bicubic(const ImageF &img, double factor, bool clamp = true) {
    if (!(factor > 0.0))
        throw std::invalid_argument("resize_bicubic: factor must be positive");
    const auto oh = static_cast<std::size_t>(std::llround(static_cast<double>(img.height()) * factor));
    const auto ow = static_cast<std::size_t>(std::llround(static_cast<double>(img.width()) * factor));
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("resize_bicubic: degenerate output size for factor " + format_double(factor));
    if (oh == img.height() && ow == img.width())
        return img;
    const auto tx = detail::bicubic_taps(img.width(), ow);
    const auto ty = detail::bicubic_taps(img.height(), oh);
    const std::size_t c = img.channels();
    ImageF tmp(img.height(), ow, c), out(oh, ow, c);
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < ow; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t j = 0; j < 4; ++j)
                    acc += tx.weight[x][j] * img.at(y, tx.index[x][j], ch);
                tmp.at(y, x, ch) = acc;
            }
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t j = 0; j < 4; ++j)
                    acc += ty.weight[y][j] * tmp.at(ty.index[y][j], x, ch);
                out.at(y, x, ch) = acc;
            }
    if (clamp)
        out.clamp01();
    return out;
}

// ---------------------------------------------------------------------------
// Profiles and records

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double at(double u) const noexcept { return lo + u * (hi - lo); }
    bool operator==(const Range &) const = default;
};

/// Probability that a noise stage uses Gaussian rather than Poisson noise.
inline constexpr double kGaussianNoiseProb = 0.5;
/// Probability that the stage-2 blur uses the generalized (β-shaped) kernel.
inline constexpr double kGeneralizedKernelProb = 0.2;

struct DegradationProfile {
    std::string name = "custom";
    Range noise_range{1, 15};
    Range poisson_scale_range{0.05, 1};
    Range jpeg_range{60, 95};
    double second_blur_prob = 0.5;
    Range noise_range2{1, 12};
    Range poisson_scale_range2{0.05, 1};
    Range jpeg_range2{60, 100};
    int blur_kernel_size2 = 11;
    Range blur_sigma2{0.2, 1.0};
    Range betag_range2{0.5, 2.0};
    Range betap_range2{1, 1.5}; // plateau kernels are not implemented; validated only
    int blur_kernel_size = 7;
    Range blur_sigma{0.2, 1.0};

    static DegradationProfile deg1() {
        DegradationProfile p;
        p.name = "deg1";
        return p;
    }

    static DegradationProfile deg2() {
        DegradationProfile p;
        p.name = "deg2";
        p.noise_range = {1, 30};
        p.poisson_scale_range = {0.05, 3};
        p.jpeg_range = {30, 95};
        p.second_blur_prob = 0.8;
        p.noise_range2 = {1, 25};
        p.poisson_scale_range2 = {0.05, 2.5};
        p.jpeg_range2 = {30, 95};
        p.blur_kernel_size2 = 21;
        p.blur_sigma2 = {0.2, 1.5};
        p.betag_range2 = {0.5, 4.0};
        p.betap_range2 = {1, 2};
        return p;
    }

    static DegradationProfile by_name(const std::string &name) {
        if (name == "deg1")
            return deg1();
        if (name == "deg2")
            return deg2();
        throw std::invalid_argument("unknown degradation profile '" + name + "'");
    }

    void validate() const {
        auto range = [](const Range &r, const char *key, double min_lo, double max_hi) {
            if (!(r.lo <= r.hi) || r.lo < min_lo || r.hi > max_hi)
                throw std::invalid_argument(std::string("degradation profile: invalid range for ") + key + " [" +
                                            format_double(r.lo) + "," + format_double(r.hi) + "]");
        };
        const double inf = std::numeric_limits<double>::infinity();
        range(noise_range, "noise_range", 0, inf);
        range(poisson_scale_range, "poisson_scale_range", 0, inf);
        range(jpeg_range, "jpeg_range", 1, 100);
        range(noise_range2, "noise_range2", 0, inf);
        range(poisson_scale_range2, "poisson_scale_range2", 0, inf);
        range(jpeg_range2, "jpeg_range2", 1, 100);
        range(blur_sigma2, "blur_sigma2", 0, inf);
        range(blur_sigma, "blur_sigma", 0, inf);
        range(betag_range2, "betag_range2", 1e-6, inf);
        range(betap_range2, "betap_range2", 1e-6, inf);
        if (!(second_blur_prob >= 0.0 && second_blur_prob <= 1.0))
            throw std::invalid_argument("degradation profile: second_blur_prob must be in [0,1]");
        for (int k : {blur_kernel_size2, blur_kernel_size})
            if (k <= 0 || k % 2 == 0)
                throw std::invalid_argument("degradation profile: kernel sizes must be odd, got " + std::to_string(k));
    }

    /// Keys absent from the file keep their Degradation-1 defaults.
    static DegradationProfile from_key_values(const KeyValues &kv) {
        kv.require_known({"name", "noise_range", "poisson_scale_range", "jpeg_range", "second_blur_prob",
                          "noise_range2", "poisson_scale_range2", "jpeg_range2", "blur_kernel_size2", "blur_sigma2",
                          "betag_range2", "betap_range2", "blur_kernel_size", "blur_sigma"},
                         "degradation profile");
        DegradationProfile p;
        auto range = [&](const char *key, Range &r) {
            if (kv.has(key)) {
                auto [lo, hi] = kv.get_range(key);
                r = {lo, hi};
            }
        };
        if (kv.has("name"))
            p.name = kv.get("name");
        range("noise_range", p.noise_range);
        range("poisson_scale_range", p.poisson_scale_range);
        range("jpeg_range", p.jpeg_range);
        if (kv.has("second_blur_prob"))
            p.second_blur_prob = kv.get_double("second_blur_prob");
        range("noise_range2", p.noise_range2);
        range("poisson_scale_range2", p.poisson_scale_range2);
        range("jpeg_range2", p.jpeg_range2);
        if (kv.has("blur_kernel_size2"))
            p.blur_kernel_size2 = static_cast<int>(kv.get_int("blur_kernel_size2"));
        range("blur_sigma2", p.blur_sigma2);
        range("betag_range2", p.betag_range2);
        range("betap_range2", p.betap_range2);
        if (kv.has("blur_kernel_size"))
            p.blur_kernel_size = static_cast<int>(kv.get_int("blur_kernel_size"));
        range("blur_sigma", p.blur_sigma);
        p.validate();
        return p;
    }

    static DegradationProfile load(const std::filesystem::path &path) {
        return from_key_values(KeyValues::load(path));
    }
};

enum class NoiseKind { gaussian, poisson };
enum class BlurKind { gaussian, generalized };

struct NoiseStage {
    NoiseKind kind = NoiseKind::gaussian;
    double sigma = 0.0;         // gaussian, 8-bit scale
    double poisson_scale = 0.0; // poisson; 0 skips the stage
    bool operator==(const NoiseStage &) const = default;
};

/// Every sampled value of one pipeline run; replaying it is bit-exact.
struct DegradationRecord {
    std::string profile = "custom";
    std::uint64_t seed = 0;
    int scale = 4;
    int blur1_kernel = 7;
    double blur1_sigma = 0.0;
    NoiseStage noise1;
    int jpeg1_quality = 100;
    bool blur2_applied = false;
    BlurKind blur2_kind = BlurKind::gaussian;
    int blur2_kernel = 11;
    double blur2_sigma = 0.0;
    double blur2_beta = 1.0;
    NoiseStage noise2;
    int jpeg2_quality = 100;

    bool operator==(const DegradationRecord &) const = default;

    KeyValues to_key_values() const {
        KeyValues kv;
        kv.set("profile", profile);
        kv.set("seed", std::to_string(seed));
        kv.set("scale", std::to_string(scale));
        kv.set("blur1_kernel", std::to_string(blur1_kernel));
        kv.set("blur1_sigma", blur1_sigma);
        write_noise(kv, "noise1", noise1);
        kv.set("jpeg1_quality", std::to_string(jpeg1_quality));
        kv.set("blur2_applied", blur2_applied ? "1" : "0");
        kv.set("blur2_kind", blur2_kind == BlurKind::gaussian ? "gaussian" : "generalized");
        kv.set("blur2_kernel", std::to_string(blur2_kernel));
        kv.set("blur2_sigma", blur2_sigma);
        kv.set("blur2_beta", blur2_beta);
        write_noise(kv, "noise2", noise2);
        kv.set("jpeg2_quality", std::to_string(jpeg2_quality));
        return kv;
    }

    std::string to_string() const { return to_key_values().to_string(); }

    static DegradationRecord parse(std::string_view text) {
        const KeyValues kv = KeyValues::parse(text, "degradation record");
        DegradationRecord r;
        r.profile = kv.get("profile");
        r.seed = kv.get_u64("seed");
        r.scale = static_cast<int>(kv.get_int("scale"));
        r.blur1_kernel = static_cast<int>(kv.get_int("blur1_kernel"));
        r.blur1_sigma = kv.get_double("blur1_sigma");
        r.noise1 = read_noise(kv, "noise1");
        r.jpeg1_quality = static_cast<int>(kv.get_int("jpeg1_quality"));
        r.blur2_applied = kv.get_int("blur2_applied") != 0;
        const std::string kind = kv.get("blur2_kind");
        if (kind != "gaussian" && kind != "generalized")
            throw std::runtime_error("degradation record: unknown blur2_kind '" + kind + "'");
        r.blur2_kind = kind == "gaussian" ? BlurKind::gaussian : BlurKind::generalized;
        r.blur2_kernel = static_cast<int>(kv.get_int("blur2_kernel"));
        r.blur2_sigma = kv.get_double("blur2_sigma");
        r.blur2_beta = kv.get_double("blur2_beta");
        r.noise2 = read_noise(kv, "noise2");
        r.jpeg2_quality = static_cast<int>(kv.get_int("jpeg2_quality"));
        return r;
    }

private:
    static void write_noise(KeyValues &kv, const std::string &prefix, const NoiseStage &n) {
        kv.set(prefix + "_kind", n.kind == NoiseKind::gaussian ? "gaussian" : "poisson");
        kv.set(prefix + "_sigma", n.sigma);
        kv.set(prefix + "_poisson_scale", n.poisson_scale);
    }
    static NoiseStage read_noise(const KeyValues &kv, const std::string &prefix) {
        NoiseStage n;
        const std::string kind = kv.get(prefix + "_kind");
        if (kind != "gaussian" && kind != "poisson")
            throw std::runtime_error("degradation record: unknown " + prefix + "_kind '" + kind + "'");
        n.kind = kind == "gaussian" ? NoiseKind::gaussian : NoiseKind::poisson;
        n.sigma = kv.get_double(prefix + "_sigma");
        n.poisson_scale = kv.get_double(prefix + "_poisson_scale");
        return n;
    }
};

inline int sample_quality(const Range &r, double u) {
    const int lo = static_cast<int>(std::lround(r.lo));
    const int hi = static_cast<int>(std::lround(r.hi));
    return std::min(hi, lo + static_cast<int>(std::floor(u * (hi - lo + 1))));
}

/// Draws all random parameters from sub-stream 0 of `seed`; always 13 uniforms.
inline DegradationRecord sample_degradation(const DegradationProfile &profile, std::uint64_t seed, int scale = 4) {
    profile.validate();
    if (scale < 1)
        throw std::invalid_argument("sample_degradation: scale must be >= 1");
    SeededRng rng(split_seed(seed, 0));
    std::array<double, 13> u{};
    for (double &v : u)
        v = rng.uniform();
    DegradationRecord r;
    r.profile = profile.name;
    r.seed = seed;
    r.scale = scale;
    r.blur1_kernel = profile.blur_kernel_size;
    r.blur1_sigma = profile.blur_sigma.at(u[0]);
    r.noise1.kind = u[1] < kGaussianNoiseProb ? NoiseKind::gaussian : NoiseKind::poisson;
    r.noise1.sigma = profile.noise_range.at(u[2]);
    r.noise1.poisson_scale = profile.poisson_scale_range.at(u[3]);
    r.jpeg1_quality = sample_quality(profile.jpeg_range, u[4]);
    r.blur2_applied = u[5] < profile.second_blur_prob;
    r.blur2_kind = u[6] < kGeneralizedKernelProb ? BlurKind::generalized : BlurKind::gaussian;
    r.blur2_kernel = profile.blur_kernel_size2;
    r.blur2_sigma = profile.blur_sigma2.at(u[7]);
    r.blur2_beta = r.blur2_kind == BlurKind::generalized ? profile.betag_range2.at(u[8]) : 1.0;
    r.noise2.kind = u[9] < kGaussianNoiseProb ? NoiseKind::gaussian : NoiseKind::poisson;
    r.noise2.sigma = profile.noise_range2.at(u[10]);
    r.noise2.poisson_scale = profile.poisson_scale_range2.at(u[11]);
    r.jpeg2_quality = sample_quality(profile.jpeg_range2, u[12]);
    return r;
}

namespace detail {

inline ImageF apply_noise(const ImageF &img, const NoiseStage &n, SeededRng &rng) {
    if (n.kind == NoiseKind::gaussian)
        return add_gaussian_noise(img, n.sigma, rng);
    if (n.poisson_scale == 0.0)
        return img;
    return add_poisson_noise(img, n.poisson_scale, rng);
}

} // namespace detail

/// Re-executes a record on `hr`; the output is a pure function of (hr, record).
inline ImageF replay_degradation(const ImageF &hr, const DegradationRecord &r) {
    if (r.scale < 1 || hr.height() % static_cast<std::size_t>(r.scale) != 0 ||
        hr.width() % static_cast<std::size_t>(r.scale) != 0)
        throw std::invalid_argument("degradation: image " + hr.shape_string() + " not divisible by scale " +
                                    std::to_string(r.scale));
    SeededRng noise1_rng(split_seed(r.seed, 1));
    SeededRng noise2_rng(split_seed(r.seed, 2));
    ImageF img = gaussian_blur(hr, r.blur1_kernel, r.blur1_sigma);
    if (r.scale != 1)
        img = resize_bicubic(img, 1.0 / r.scale);
    img = detail::apply_noise(img, r.noise1, noise1_rng);
    img = jpeg_proxy_compress(img, r.jpeg1_quality);
    if (r.blur2_applied) {
        img = r.blur2_kind == BlurKind::gaussian
                  ? gaussian_blur(img, r.blur2_kernel, r.blur2_sigma)
                  : generalized_gaussian_blur(img, r.blur2_kernel, r.blur2_sigma, r.blur2_beta);
    }
    img = detail::apply_noise(img, r.noise2, noise2_rng);
    img = jpeg_proxy_compress(img, r.jpeg2_quality);
    return img;
}

struct DegradedPair {
    ImageF lr;
    DegradationRecord record;
};

/// One pipeline seed is drawn from `rng`; all further randomness derives from it.
inline DegradedPair apply_second_order_pipeline(const ImageF &hr, const DegradationProfile &profile, SeededRng &rng,
                                                int scale = 4) {
    DegradationRecord rec = sample_degradation(profile, rng.next_u64(), scale);
    ImageF lr = replay_degradation(hr, rec);
    return {std::move(lr), std::move(rec)};
}

inline double rmse(const ImageF &a, const ImageF &b) {
    require_same_shape(a, b, "rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

} // namespace mor
