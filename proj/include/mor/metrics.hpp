// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mor/image.hpp"
#include "mor/numeric.hpp"

#include <array>
#include <cmath>

namespace mor {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) on the [0, 1] range; 99 dB when MSE < 1e-10.
inline double psnr(const ImageF &pred, const ImageF &target) {
    require_same_shape(pred, target, "psnr");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(pred.size());
    if (mse < 1e-10)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline constexpr std::size_t kSsimWindow = 11;

/// Normalized 11x11 Gaussian window, σ = 1.5, as a separable 1-D kernel.
inline std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double total = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i) - 5.0;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        total += k[i];
    }
    for (double &v : k)
        v /= total;
    return k;
}

/// Mean SSIM over every fully-contained 11x11 window (valid region) and channel,
/// C1 = 0.01², C2 = 0.03².
inline double ssim(const ImageF &pred, const ImageF &target) {
    require_same_shape(pred, target, "ssim");
    if (pred.height() < kSsimWindow || pred.width() < kSsimWindow)
        throw std::invalid_argument("ssim: image " + pred.shape_string() + " smaller than the 11x11 window");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto k = ssim_kernel();
    const std::size_t oh = pred.height() - kSsimWindow + 1, ow = pred.width() - kSsimWindow + 1;
    const std::size_t ch = pred.channels();
    double total = 0.0;
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (std::size_t i = 0; i < kSsimWindow; ++i)
                    for (std::size_t j = 0; j < kSsimWindow; ++j) {
                        const double w = k[i] * k[j];
                        const double a = pred.at(y + i, x + j, c), b = target.at(y + i, x + j, c);
                        mx += w * a;
                        my += w * b;
                        sxx += w * a * a;
                        syy += w * b * b;
                        sxy += w * a * b;
                    }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
    return total / static_cast<double>(oh * ow * ch);
}

} // namespace mor
