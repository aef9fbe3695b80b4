// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#include "mor/degradation.hpp"
#include "mor/embedding.hpp"
#include "mor/textures.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace mor;
using Catch::Approx;

namespace {

std::string full_prompt_table(const std::string &skip = "") {
    std::string t = "dim 3\n# prompt embeddings\n";
    int i = 0;
    for (const auto &d : kQualityTable) {
        const std::string stem = prompt_id_stem(d.name);
        for (const char *suffix : {".pos", ".neg"}) {
            if (stem + suffix == skip)
                continue;
            t += stem + suffix + " " + std::to_string(1 + i) + " " + std::to_string(i % 3) + " 1\n";
            ++i;
        }
    }
    return t;
}

} // namespace

TEST_CASE("embedding table: parse and normalize", "[embedding]") {
    const auto t = parse_embedding_table("dim 4\nimgA 1 0 0 0\nimgB 3 4 0 0\n");
    REQUIRE(t.size() == 2);
    CHECK(t.at("imgA").values() == Vector{1, 0, 0, 0});
    CHECK(t.at("imgB")[0] == Approx(0.6).epsilon(1e-15));
    CHECK(t.at("imgB")[1] == Approx(0.8).epsilon(1e-15));
    CHECK(t.at("imgB")[2] == 0.0);
}

TEST_CASE("embedding table: malformed input names the problem", "[embedding]") {
    const auto message = [](const std::string &text) {
        try {
            parse_embedding_table(text, "emb.txt");
        } catch (const std::runtime_error &e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK_THAT(message("dim 4\nimgC 1 2 3\n"), Catch::Matchers::ContainsSubstring("imgC"));
    CHECK_THAT(message("dim 4\nimgC 1 2 3\n"), Catch::Matchers::ContainsSubstring("emb.txt:2"));
    CHECK_THAT(message("imgA 1 0\n"), Catch::Matchers::ContainsSubstring("dim"));
    CHECK_THAT(message("dim 2\nz 0 0\n"), Catch::Matchers::ContainsSubstring("z"));
    CHECK_THAT(message("dim 2\na 1 x\n"), Catch::Matchers::ContainsSubstring("malformed"));
    CHECK_THAT(message("dim 2\na 1 0\na 0 1\n"), Catch::Matchers::ContainsSubstring("duplicate"));
    CHECK_THAT(message(""), Catch::Matchers::ContainsSubstring("dim"));
}

TEST_CASE("embedding file loader", "[embedding]") {
    const std::filesystem::path p = "embedding_loader_test.txt";
    {
        std::ofstream(p) << "dim 2\nx 0 2\n";
    }
    const auto t = load_embedding_file(p);
    CHECK(t.at("x").values() == Vector{0, 1});
    std::filesystem::remove(p);
    CHECK_THROWS_AS(load_embedding_file("no_such_embedding_file.txt"), std::runtime_error);
}

TEST_CASE("prompt pairs from a file follow table order", "[embedding]") {
    const EmbeddingSource src = FileEmbeddingSource{parse_embedding_table(full_prompt_table())};
    const PromptPairSet pairs = prompt_pairs_for(src);
    REQUIRE(pairs.size() == kQualityDimensions);
    for (std::size_t i = 0; i < pairs.size(); ++i)
        CHECK(pairs[i].name == kQualityTable[i].name);
    CHECK(pairs.dim() == 3);
}

TEST_CASE("prompt pairs: a missing prompt names its dimension", "[embedding]") {
    const EmbeddingSource src = FileEmbeddingSource{parse_embedding_table(full_prompt_table("Noise.neg"))};
    try {
        prompt_pairs_for(src);
        FAIL("expected an error");
    } catch (const std::runtime_error &e) {
        CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("Noise"));
        CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("Noise.neg"));
    }
}

TEST_CASE("statistical prompt pairs are antipodal on their feature axis", "[embedding]") {
    const PromptPairSet pairs = prompt_pairs_for(StatisticalEmbeddingSource{});
    REQUIRE(pairs.size() == kQualityDimensions);
    for (std::size_t d = 0; d < pairs.size(); ++d) {
        const std::size_t axis = 2 * kStatisticalAxes[d].feature + 1;
        for (std::size_t i = 0; i < pairs.dim(); ++i) {
            if (i == axis) {
                CHECK(pairs[d].positive[i] == kStatisticalAxes[d].sign);
                CHECK(pairs[d].negative[i] == -kStatisticalAxes[d].sign);
            } else {
                CHECK(pairs[d].positive[i] == 0.0);
                CHECK(pairs[d].negative[i] == 0.0);
            }
        }
    }
}

TEST_CASE("statistical embedding is unit norm with one plane per feature", "[embedding]") {
    const Embedding e = statistical_embed(procedural_texture(24, 24, 1));
    REQUIRE(e.dim() == kStatEmbeddingDim);
    CHECK(norm2(e.values()) == Approx(1.0).epsilon(1e-14));
    for (std::size_t i = 0; i < kStatFeatureCount; ++i) {
        const double r = std::hypot(e[2 * i], e[2 * i + 1]);
        CHECK(r * r == Approx(1.0 / kStatFeatureCount).epsilon(1e-12));
        CHECK(e[2 * i] > 0.0);
    }
    CHECK_THROWS_AS(statistical_embed(ImageF(12, 12, 1, 0.5)), std::invalid_argument);
}

TEST_CASE("image features: flat image has no blur or noise response", "[embedding][features]") {
    const FeatureVector f = image_features(ImageF(24, 24, 1, 0.6));
    CHECK(f[kNoise] == 0.0);
    CHECK(f[kSharpness] == 0.0);
    CHECK(f[kResolution] == 0.0);
    CHECK(f[kContrast] == Approx(0.0).margin(1e-12));
    CHECK(f[kLuminance] == Approx(0.6).epsilon(1e-14));
}

TEST_CASE("image features: blur lowers the sharpness proxy", "[embedding][features]") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const ImageF tex = procedural_texture(24, 24, 300 + s);
        const ImageF blurred = gaussian_blur(tex, 13, 2.0);
        INFO("texture " << s);
        CHECK(image_features(blurred)[kSharpness] < image_features(tex)[kSharpness]);
    }
}

TEST_CASE("image features: added noise raises the noise proxy", "[embedding][features]") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const ImageF tex = procedural_texture(24, 24, 300 + s);
        SeededRng rng(s);
        const ImageF noisy = add_gaussian_noise(tex, 25.0, rng);
        INFO("texture " << s);
        CHECK(image_features(noisy)[kNoise] > image_features(tex)[kNoise]);
    }
}

TEST_CASE("image features: the noise proxy estimates white-noise sigma", "[embedding][features]") {
    SeededRng rng(4);
    const ImageF noisy = add_gaussian_noise(ImageF(128, 128, 1, 0.5), 10.0, rng);
    CHECK(image_features(noisy)[kNoise] == Approx(10.0).epsilon(0.1));
}

TEST_CASE("calibration constants match a recomputation over the corpus", "[embedding][calibration]") {
    const FeatureCalibration cal = calibrate_features(calibration_corpus());
    for (std::size_t i = 0; i < kStatFeatureCount; ++i) {
        INFO("feature " << i);
        CHECK(cal.mean[i] == Approx(kFeatureMean[i]).epsilon(1e-9));
        CHECK(cal.stddev[i] == Approx(kFeatureStd[i]).epsilon(1e-9));
    }
}

TEST_CASE("prompt id stems", "[embedding]") {
    CHECK(prompt_id_stem("Edge Clarity") == "Edge_Clarity");
    CHECK(prompt_id_stem("Noise") == "Noise");
}
