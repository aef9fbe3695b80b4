// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#include "mor/dataset.hpp"
#include "mor/degradation.hpp"
#include "mor/estimator.hpp"
#include "mor/textures.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace mor;
using Catch::Approx;

namespace {

ImageF constant(std::size_t h, std::size_t w, double v, std::size_t c = 1) { return ImageF(h, w, c, v); }

double max_abs_diff(const ImageF &a, const ImageF &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

DegradationProfile degenerate_profile() {
    DegradationProfile p;
    p.name = "degenerate";
    p.noise_range = p.noise_range2 = {0, 0};
    p.poisson_scale_range = p.poisson_scale_range2 = {0, 0};
    p.jpeg_range = p.jpeg_range2 = {100, 100};
    p.blur_sigma = p.blur_sigma2 = {0, 0};
    p.second_blur_prob = 0.0;
    return p;
}

} // namespace

TEST_CASE("gaussian blur: identity, DC preservation, kernel peak", "[degradation][blur]") {
    const ImageF tex = procedural_texture(32, 32, 1);
    CHECK(gaussian_blur(tex, 7, 0.0).data() == tex.data());

    const ImageF c = constant(20, 20, 0.37);
    CHECK(max_abs_diff(gaussian_blur(c, 7, 1.3), c) < 1e-12);

    ImageF impulse(15, 15, 1, 0.0);
    impulse.at(7, 7) = 1.0;
    // Direct 5x5 kernel table: peak = 1 / (Σ_i exp(-i²/2))² for i in -2..2.
    double s = 0.0;
    for (int i = -2; i <= 2; ++i)
        s += std::exp(-0.5 * i * i);
    const ImageF out = gaussian_blur(impulse, 5, 1.0);
    CHECK(out.at(7, 7) == Approx(1.0 / (s * s)).epsilon(1e-12));
    CHECK(out.at(7, 9) == Approx(std::exp(-2.0) / (s * s)).epsilon(1e-12));
    CHECK(out.at(7, 10) == 0.0);

    CHECK_THROWS_AS(gaussian_blur(tex, 4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_blur(tex, 5, -1.0), std::invalid_argument);
}

TEST_CASE("generalized gaussian kernel at beta 1 equals the separable gaussian", "[degradation][blur]") {
    const ImageF tex = procedural_texture(24, 24, 9);
    const ImageF a = gaussian_blur(tex, 11, 1.2);
    const ImageF b = generalized_gaussian_blur(tex, 11, 1.2, 1.0);
    CHECK(max_abs_diff(a, b) < 1e-12);
    CHECK(max_abs_diff(generalized_gaussian_blur(constant(16, 16, 0.6), 11, 1.0, 3.0), constant(16, 16, 0.6)) < 1e-12);
}

TEST_CASE("gaussian noise: sigma 0 identity and sample sigma within 5%", "[degradation][noise]") {
    SeededRng rng(1);
    const ImageF half = constant(256, 256, 0.5);
    CHECK(add_gaussian_noise(half, 0.0, rng).data() == half.data());

    for (double sigma : {5.0, 15.0, 25.0}) {
        const ImageF out = add_gaussian_noise(half, sigma, rng);
        double m = 0.0, v = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
            m += out.data()[i] - half.data()[i];
        m /= static_cast<double>(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double d = out.data()[i] - half.data()[i] - m;
            v += d * d;
        }
        const double sd = std::sqrt(v / static_cast<double>(out.size() - 1));
        CHECK(std::abs(sd - sigma / 255.0) < 0.05 * sigma / 255.0);
    }

    const ImageF white = constant(64, 64, 1.0);
    const ImageF noisy = add_gaussian_noise(white, 20.0, rng);
    double mean = 0.0;
    for (double v : noisy.data()) {
        CHECK(v <= 1.0);
        mean += v;
    }
    CHECK(mean / static_cast<double>(noisy.size()) <= 1.0);
}

TEST_CASE("poisson noise: black stays black, small scale is near-lossless, reproducible", "[degradation][noise]") {
    SeededRng rng(2);
    const ImageF black = constant(32, 32, 0.0);
    CHECK(add_poisson_noise(black, 1.0, rng).data() == black.data());

    const ImageF tex = procedural_texture(256, 256, 4);
    const ImageF low = add_poisson_noise(tex, 1e-3, rng);
    CHECK(rmse(low, tex) < 0.01);

    SeededRng a(99), b(99);
    CHECK(add_poisson_noise(tex, 2.0, a).data() == add_poisson_noise(tex, 2.0, b).data());
    CHECK_THROWS_AS(add_poisson_noise(tex, 0.0, rng), std::invalid_argument);
}

TEST_CASE("jpeg proxy: near-lossless at 100, monotone in quality, constants preserved", "[degradation][jpeg]") {
    ImageF ramp(64, 64, 1);
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
            ramp.at(y, x) = 0.1 + 0.8 * (static_cast<double>(x + y) / 126.0);
    CHECK(rmse(jpeg_proxy_compress(ramp, 100), ramp) < 0.01);

    const ImageF tex = procedural_texture(64, 64, 12);
    CHECK(rmse(jpeg_proxy_compress(tex, 10), tex) > rmse(jpeg_proxy_compress(tex, 90), tex));

    for (double v : {0.0, 0.25, 128.0 / 255.0, 0.8, 1.0})
        for (int q : {1, 10, 50, 95, 100}) {
            const ImageF c = constant(24, 24, v);
            CHECK(max_abs_diff(jpeg_proxy_compress(c, q), c) < 1e-9);
        }
    const ImageF rgb = constant(16, 16, 0.4, 3);
    CHECK(max_abs_diff(jpeg_proxy_compress(rgb, 30), rgb) < 1e-9);

    CHECK_THROWS_AS(jpeg_proxy_compress(tex, 0), std::invalid_argument);
    CHECK_THROWS_AS(jpeg_proxy_compress(tex, 101), std::invalid_argument);
}

TEST_CASE("bicubic resize: identity, constants, linear reproduction", "[degradation][resize]") {
    const ImageF tex = procedural_texture(32, 32, 3);
    CHECK(max_abs_diff(resize_bicubic(tex, 1.0), tex) < 1e-12);

    for (double f : {0.25, 0.5, 2.0, 3.0}) {
        const ImageF c = constant(16, 16, 0.42);
        const auto side = static_cast<std::size_t>(16 * f);
        CHECK(max_abs_diff(resize_bicubic(c, f), constant(side, side, 0.42)) < 1e-12);
    }

    // A 2x downsample of a ramp samples it at x_out = 2x + 0.5; away from the
    // reflected border the Catmull-Rom kernel reproduces linears exactly.
    ImageF ramp(32, 32, 1);
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
            ramp.at(y, x) = 0.01 * static_cast<double>(x) + 0.02 * static_cast<double>(y) + 0.1;
    const ImageF half = resize_bicubic(ramp, 0.5, false);
    for (std::size_t y = 2; y + 2 < half.height(); ++y)
        for (std::size_t x = 2; x + 2 < half.width(); ++x) {
            const double want = 0.01 * (2.0 * x + 0.5) + 0.02 * (2.0 * y + 0.5) + 0.1;
            CHECK(std::abs(half.at(y, x) - want) < 1e-6);
        }
    CHECK_THROWS_AS(resize_bicubic(tex, 0.0), std::invalid_argument);
}

TEST_CASE("pipeline: degenerate profile equals bicubic downsample", "[degradation][pipeline]") {
    const DegradationProfile p = degenerate_profile();
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ImageF hr = procedural_texture(96, 96, s);
        SeededRng rng(s);
        const auto pair = apply_second_order_pipeline(hr, p, rng, 4);
        CHECK(rmse(pair.lr, resize_bicubic(hr, 0.25)) < 0.01);
    }
}

TEST_CASE("pipeline: record round trip and bit-exact replay", "[degradation][pipeline]") {
    const ImageF hr = procedural_texture(64, 64, 21);
    for (const auto &p : {DegradationProfile::deg1(), DegradationProfile::deg2()})
        for (std::uint64_t s = 0; s < 20; ++s) {
            const DegradationRecord r = sample_degradation(p, s, 4);
            const DegradationRecord back = DegradationRecord::parse(r.to_string());
            REQUIRE(back == r);
            CHECK(replay_degradation(hr, back).data() == replay_degradation(hr, r).data());
        }
    SeededRng a(5), b(5);
    const auto pa = apply_second_order_pipeline(hr, DegradationProfile::deg2(), a);
    const auto pb = apply_second_order_pipeline(hr, DegradationProfile::deg2(), b);
    CHECK(pa.lr.data() == pb.lr.data());
    CHECK(pa.record == pb.record);
}

TEST_CASE("pipeline: sampled parameters stay inside the profile ranges", "[degradation][pipeline]") {
    const DegradationProfile p = DegradationProfile::deg2();
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto r = sample_degradation(p, s);
        CHECK(r.blur1_sigma >= p.blur_sigma.lo);
        CHECK(r.blur1_sigma <= p.blur_sigma.hi);
        CHECK(r.noise1.sigma >= p.noise_range.lo);
        CHECK(r.noise1.sigma <= p.noise_range.hi);
        CHECK(r.noise2.poisson_scale >= p.poisson_scale_range2.lo);
        CHECK(r.noise2.poisson_scale <= p.poisson_scale_range2.hi);
        CHECK(r.jpeg1_quality >= 30);
        CHECK(r.jpeg1_quality <= 95);
        CHECK(r.jpeg2_quality >= 30);
        CHECK(r.jpeg2_quality <= 95);
        CHECK(r.blur2_kernel == 21);
        if (r.blur2_kind == BlurKind::generalized) {
            CHECK(r.blur2_beta >= 0.5);
            CHECK(r.blur2_beta <= 4.0);
        }
    }
}

TEST_CASE("pipeline: Degradation-2 is more severe than Degradation-1", "[degradation][pipeline]") {
    double e1 = 0.0, e2 = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const ImageF hr = procedural_texture(96, 96, 500 + s);
        const ImageF ref = resize_bicubic(hr, 0.25);
        e1 += rmse(replay_degradation(hr, sample_degradation(DegradationProfile::deg1(), s)), ref);
        e2 += rmse(replay_degradation(hr, sample_degradation(DegradationProfile::deg2(), s)), ref);
    }
    CHECK(e2 > e1);
}

TEST_CASE("pipeline: statistical estimator scores Degradation-2 above Degradation-1", "[degradation][estimator]") {
    // The toy task's held-out textures: each one degraded by both profiles from
    // the same pipeline seed.
    const auto ds = make_toy_dataset(50, 24, split_seed(0, 12), {DegradationProfile::deg1(), DegradationProfile::deg2()});
    int above = 0;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        REQUIRE(ds[i].regime == "deg1");
        REQUIRE(ds[50 + i].regime == "deg2");
        m1 += ds[i].scalar.value / 50.0;
        m2 += ds[50 + i].scalar.value / 50.0;
        above += ds[50 + i].scalar.value > ds[i].scalar.value;
    }
    INFO("mean deg1 " << m1 << ", mean deg2 " << m2 << ", textures with deg2 above deg1: " << above);
    CHECK(m2 > m1);
    CHECK(above >= 40);
}

TEST_CASE("profiles: built-in values and key=value loading", "[degradation][profile]") {
    const auto d1 = DegradationProfile::deg1();
    const auto d2 = DegradationProfile::deg2();
    CHECK(d1.noise_range == Range{1, 15});
    CHECK(d2.noise_range == Range{1, 30});
    CHECK(d1.poisson_scale_range == Range{0.05, 1});
    CHECK(d2.poisson_scale_range == Range{0.05, 3});
    CHECK(d1.jpeg_range == Range{60, 95});
    CHECK(d2.jpeg_range == Range{30, 95});
    CHECK(d1.second_blur_prob == 0.5);
    CHECK(d2.second_blur_prob == 0.8);
    CHECK(d1.noise_range2 == Range{1, 12});
    CHECK(d2.noise_range2 == Range{1, 25});
    CHECK(d1.poisson_scale_range2 == Range{0.05, 1});
    CHECK(d2.poisson_scale_range2 == Range{0.05, 2.5});
    CHECK(d1.jpeg_range2 == Range{60, 100});
    CHECK(d2.jpeg_range2 == Range{30, 95});
    CHECK(d1.blur_kernel_size2 == 11);
    CHECK(d2.blur_kernel_size2 == 21);
    CHECK(d1.blur_sigma2 == Range{0.2, 1.0});
    CHECK(d2.blur_sigma2 == Range{0.2, 1.5});
    CHECK(d1.betag_range2 == Range{0.5, 2.0});
    CHECK(d2.betag_range2 == Range{0.5, 4.0});
    CHECK(d1.betap_range2 == Range{1, 1.5});
    CHECK(d2.betap_range2 == Range{1, 2});

    const auto p = DegradationProfile::from_key_values(KeyValues::parse("name=mild\nnoise_range=2,4\njpeg_range=80,90\n"));
    CHECK(p.name == "mild");
    CHECK(p.noise_range == Range{2, 4});
    CHECK(p.jpeg_range == Range{80, 90});
    CHECK(p.noise_range2 == d1.noise_range2);
    CHECK_THROWS(DegradationProfile::from_key_values(KeyValues::parse("noise_rang=1,2\n")));
    CHECK_THROWS(DegradationProfile::from_key_values(KeyValues::parse("jpeg_range=90,80\n")));
    CHECK_THROWS(DegradationProfile::by_name("deg3"));
}

TEST_CASE("pipeline rejects sizes not divisible by the scale", "[degradation][pipeline]") {
    const ImageF hr = procedural_texture(30, 30, 1);
    CHECK_THROWS_AS(replay_degradation(hr, sample_degradation(DegradationProfile::deg1(), 0, 4)), std::invalid_argument);
}
