// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Paired HR/LR samples tagged with their degradation regime. On disk a dataset
// is `<dir>/<regime>/hr/<name>.pgm` and `<dir>/<regime>/lr/<name>.pgm`.

#pragma once

#include "mor/degradation.hpp"
#include "mor/estimator.hpp"
#include "mor/image.hpp"
#include "mor/textures.hpp"

#include <algorithm>
#include <filesystem>

namespace mor {

struct Sample {
    std::string regime;
    std::string name;
    ImageF hr;
    ImageF lr;
    DegradationScoreVector scores;
    ScalarDegradation scalar;
};

inline void attach_scores(Sample &s) {
    s.scores = estimate_statistical(s.lr);
    s.scalar = aggregate_scalar(s.scores);
}

/// `count` textures of side `side`, each degraded by every profile in
/// `profiles` (same pipeline seed for every profile, so regimes differ only in
/// their parameter ranges). Texture i uses seed split_seed(seed, 2i), its
/// pipeline split_seed(seed, 2i+1).
inline std::vector<Sample> make_toy_dataset(std::size_t count, std::size_t side, std::uint64_t seed,
                                            const std::vector<DegradationProfile> &profiles, int scale = 1) {
    std::vector<Sample> out;
    out.reserve(count * profiles.size());
    for (const auto &profile : profiles) {
        for (std::size_t i = 0; i < count; ++i) {
            Sample s;
            s.regime = profile.name;
            std::string idx = std::to_string(i);
            s.name = std::string(idx.size() < 5 ? 5 - idx.size() : 0, '0') + idx;
            s.hr = procedural_texture(side * static_cast<std::size_t>(scale), side * static_cast<std::size_t>(scale),
                                      split_seed(seed, 2 * i));
            s.lr = replay_degradation(s.hr, sample_degradation(profile, split_seed(seed, 2 * i + 1), scale));
            attach_scores(s);
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline void save_dataset(const std::filesystem::path &dir, const std::vector<Sample> &samples) {
    for (const auto &s : samples) {
        std::filesystem::create_directories(dir / s.regime / "hr");
        std::filesystem::create_directories(dir / s.regime / "lr");
        write_image(dir / s.regime / "hr" / (s.name + ".pgm"), s.hr);
        write_image(dir / s.regime / "lr" / (s.name + ".pgm"), s.lr);
    }
}

/// Regimes in lexicographic order, samples by file name within a regime.
inline std::vector<Sample> load_dataset(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("dataset directory not found: " + dir.string());
    std::vector<std::filesystem::path> regimes;
    for (const auto &e : std::filesystem::directory_iterator(dir))
        if (e.is_directory())
            regimes.push_back(e.path());
    std::sort(regimes.begin(), regimes.end());
    std::vector<Sample> out;
    for (const auto &rdir : regimes) {
        if (!std::filesystem::is_directory(rdir / "lr"))
            throw std::runtime_error("dataset regime " + rdir.string() + " has no lr/ directory");
        std::vector<std::filesystem::path> files;
        for (const auto &e : std::filesystem::directory_iterator(rdir / "lr"))
            if (e.is_regular_file() && (e.path().extension() == ".pgm" || e.path().extension() == ".ppm"))
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto &f : files) {
            Sample s;
            s.regime = rdir.filename().string();
            s.name = f.stem().string();
            s.lr = read_image(f);
            const auto hr_path = rdir / "hr" / f.filename();
            if (!std::filesystem::exists(hr_path))
                throw std::runtime_error("dataset: missing HR counterpart " + hr_path.string());
            s.hr = read_image(hr_path);
            attach_scores(s);
            out.push_back(std::move(s));
        }
    }
    if (out.empty())
        throw std::runtime_error("dataset " + dir.string() + " contains no samples");
    return out;
}

} // namespace mor
