// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mor/image.hpp"
#include "mor/numeric.hpp"

#include <cmath>
#include <numbers>

namespace mor {

/// Deterministic piecewise-smooth grayscale texture: low-frequency shading,
/// soft region edges, Gaussian blobs and one windowed high-frequency grating.
/// Frequencies are in cycles per pixel.
inline ImageF procedural_texture(std::size_t height, std::size_t width, std::uint64_t seed) {
    SeededRng rng(split_seed(seed, 0x7E47));
    ImageF img(height, width, 1, rng.uniform(0.3, 0.7));
    const double two_pi = 2.0 * std::numbers::pi;
    const double fw = static_cast<double>(width), fh = static_cast<double>(height);

    const int shades = 1 + static_cast<int>(rng.below(2));
    for (int g = 0; g < shades; ++g) {
        const double amp = rng.uniform(0.04, 0.12);
        const double freq = rng.uniform(0.005, 0.03);
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const double phase = rng.uniform(0.0, two_pi);
        const double fx = freq * std::cos(theta), fy = freq * std::sin(theta);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                img.at(y, x) += amp * std::sin(two_pi * (fx * x + fy * y) + phase);
    }

    const int edges = 2 + static_cast<int>(rng.below(3));
    for (int e = 0; e < edges; ++e) {
        const double contrast = rng.uniform(0.08, 0.3) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        const double theta = rng.uniform(0.0, two_pi);
        const double cx = rng.uniform(0.0, fw), cy = rng.uniform(0.0, fh);
        const double nx = std::cos(theta), ny = std::sin(theta);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double d = (static_cast<double>(x) - cx) * nx + (static_cast<double>(y) - cy) * ny;
                img.at(y, x) += contrast * logistic(d / 0.6);
            }
    }

    const int blobs = 1 + static_cast<int>(rng.below(3));
    for (int b = 0; b < blobs; ++b) {
        const double amp = rng.uniform(-0.2, 0.2);
        const double radius = rng.uniform(0.05, 0.2) * std::min(fw, fh);
        const double cx = rng.uniform(0.0, fw), cy = rng.uniform(0.0, fh);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                img.at(y, x) += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
            }
    }

    {
        const double amp = rng.uniform(0.03, 0.1);
        const double freq = rng.uniform(0.06, 0.2);
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const double phase = rng.uniform(0.0, two_pi);
        const double radius = rng.uniform(0.1, 0.25) * std::min(fw, fh);
        const double cx = rng.uniform(0.0, fw), cy = rng.uniform(0.0, fh);
        const double fx = freq * std::cos(theta), fy = freq * std::sin(theta);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                const double window = std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                img.at(y, x) += amp * window * std::sin(two_pi * (fx * x + fy * y) + phase);
            }
    }
    img.clamp01();
    return img;
}

/// Three-channel variant: shared structure with per-channel gain and offset.
inline ImageF procedural_texture_rgb(std::size_t height, std::size_t width, std::uint64_t seed) {
    const ImageF luma = procedural_texture(height, width, seed);
    SeededRng rng(split_seed(seed, 0xC010));
    ImageF img(height, width, 3);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        const double gain = rng.uniform(0.7, 1.2);
        const double offset = rng.uniform(-0.1, 0.1);
        for (std::size_t i = 0; i < luma.pixels(); ++i)
            img.data()[i * 3 + ch] = std::clamp(luma.data()[i] * gain + offset, 0.0, 1.0);
    }
    return img;
}

} // namespace mor
