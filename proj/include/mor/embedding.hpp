// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Unit-norm embeddings for images and quality prompts. Two sources:
//   * file-backed: a text table of precomputed vectors (e.g. from an external
//     CLIP encoder), keyed by image id and `<Dimension>.pos|neg` prompt ids;
//   * statistical: a 7-feature image-statistics embedder whose prompt pairs are
//     signed unit vectors along the feature axis of each quality dimension.

#pragma once

#include "mor/degradation.hpp"
#include "mor/image.hpp"
#include "mor/kv_config.hpp"
#include "mor/numeric.hpp"
#include "mor/textures.hpp"

#include <array>
#include <charconv>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <variant>

namespace mor {

class Embedding {
public:
    Embedding() = default;

    /// L2-normalizes `values`; throws on zero norm or dimension < 2.
    explicit Embedding(Vector values) : values_(std::move(values)) {
        if (values_.size() < 2)
            throw std::invalid_argument("Embedding: dimension must be >= 2, got " + std::to_string(values_.size()));
        const double n = norm2(values_);
        if (!(n > 0.0) || !std::isfinite(n))
            throw std::invalid_argument("Embedding: cannot normalize a zero or non-finite vector");
        for (double &v : values_)
            v /= n;
    }

    std::size_t dim() const noexcept { return values_.size(); }
    const Vector &values() const noexcept { return values_; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    bool operator==(const Embedding &) const = default;

private:
    Vector values_;
};

inline constexpr std::size_t kQualityDimensions = 7;

/// Evaluation dimensions in table order, with their prompt texts. The prompt
/// strings are only needed when computing file-backed embeddings offline.
struct QualityDimension {
    const char *name;
    const char *positive_prompt;
    const char *negative_prompt;
};

inline constexpr std::array<QualityDimension, kQualityDimensions> kQualityTable = {{
    {"Overall Quality", "Good Image", "Bad Image"},
    {"Blurriness", "Sharp Image", "Blurry Image"},
    {"Noise", "Noise-free image", "Noisy Image"},
    {"Resolution", "High-Resolution", "Low-Resolution"},
    {"Edge Clarity", "Sharp Edge", "Blurry Edge"},
    {"Clarity", "Clear image", "Vague image"},
    {"Details", "Fine Details", "Coarse Details"},
}};

/// "Edge Clarity" -> "Edge_Clarity"
inline std::string prompt_id_stem(std::string_view name) {
    std::string out(name);
    for (char &c : out)
        if (c == ' ')
            c = '_';
    return out;
}

struct PromptPair {
    std::string name;
    Embedding positive;
    Embedding negative;
};

class PromptPairSet {
public:
    PromptPairSet() = default;
    explicit PromptPairSet(std::vector<PromptPair> pairs) : pairs_(std::move(pairs)) {
        if (pairs_.empty())
            throw std::invalid_argument("PromptPairSet: empty");
        std::set<std::string> names;
        for (const auto &p : pairs_) {
            if (!names.insert(p.name).second)
                throw std::invalid_argument("PromptPairSet: duplicate dimension '" + p.name + "'");
            if (p.positive.dim() != dim() || p.negative.dim() != dim())
                throw std::invalid_argument("PromptPairSet: dimension '" + p.name + "' has inconsistent size");
        }
    }

    std::size_t size() const noexcept { return pairs_.size(); }
    std::size_t dim() const noexcept { return pairs_.empty() ? 0 : pairs_.front().positive.dim(); }
    const PromptPair &operator[](std::size_t i) const noexcept { return pairs_[i]; }
    auto begin() const noexcept { return pairs_.begin(); }
    auto end() const noexcept { return pairs_.end(); }

private:
    std::vector<PromptPair> pairs_;
};

// ---------------------------------------------------------------------------
// Image-statistics features

/// Raw feature order of the statistical embedder.
enum Feature : std::size_t {
    kNoise = 0,       // robust noise σ (8-bit units) from the Laplacian MAD, two scales
    kSharpness = 1,   // edge profile ratio at smoothing scale 1.3 px
    kBlockiness = 2,  // 8-px boundary vs interior step ratio
    kContrast = 3,    // noise-compensated standard deviation
    kLuminance = 4,   // mean value
    kResolution = 5,  // edge profile ratio at smoothing scale 2 px
    kDynamicRange = 6 // noise-compensated 2..98 percentile spread of the 3x3 box mean
};
inline constexpr std::size_t kStatFeatureCount = 7;
using FeatureVector = std::array<double, kStatFeatureCount>;

namespace detail {

inline double median_inplace(std::vector<double> &v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        m = 0.5 * (m + lower);
    }
    return m;
}

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double laplacian_noise_sigma(const ImageF &img) {
    const std::size_t h = img.height(), w = img.width();
    std::vector<double> lap;
    lap.reserve((h - 2) * (w - 2));
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x)
            lap.push_back(img.at(y, x - 1) + img.at(y, x + 1) + img.at(y - 1, x) + img.at(y + 1, x) -
                          4.0 * img.at(y, x));
    const double med = median_inplace(lap);
    for (double &v : lap)
        v = std::abs(v - med);
    return median_inplace(lap) / 0.6745 / std::sqrt(20.0);
}

inline ImageF bin2x2(const ImageF &img) {
    ImageF out(img.height() / 2, img.width() / 2, 1);
    for (std::size_t y = 0; y < out.height(); ++y)
        for (std::size_t x = 0; x < out.width(); ++x)
            out.at(y, x) = 0.25 * (img.at(2 * y, 2 * x) + img.at(2 * y + 1, 2 * x) + img.at(2 * y, 2 * x + 1) +
                                   img.at(2 * y + 1, 2 * x + 1));
    return out;
}

/// Edge profile ratio Σ|∇(G_s*I)| / Σ|∇(G_2s*I)| over the 10% of pixels with
/// the strongest coarse-scale gradient. An ideal step blurred by σ_b gives
/// √((4s²+σ_b²)/(s²+σ_b²)): 2 for a perfect step, falling to 1 as blur grows,
/// independent of edge contrast; the pre-smoothing averages most noise away.
/// Returns 0 for an image without structure.
inline double edge_scale_ratio(const ImageF &img, double s) {
    const int side = static_cast<int>(std::min(img.height(), img.width()));
    const int largest_odd = side % 2 == 1 ? side : side - 1;
    const auto odd_size = [&](double sigma) {
        return std::min(2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1, largest_odd);
    };
    const ImageF fine = convolve_separable(img, gaussian_kernel1d(odd_size(s), s));
    const ImageF coarse = convolve_separable(img, gaussian_kernel1d(odd_size(2.0 * s), 2.0 * s));
    const std::size_t h = img.height(), w = img.width();
    std::vector<std::pair<double, double>> g; // (coarse, fine)
    g.reserve((h - 2) * (w - 2));
    const auto mag = [](const ImageF &im, std::size_t y, std::size_t x) {
        const double gx = 0.5 * (im.at(y, x + 1) - im.at(y, x - 1));
        const double gy = 0.5 * (im.at(y + 1, x) - im.at(y - 1, x));
        return std::sqrt(gx * gx + gy * gy);
    };
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x)
            g.emplace_back(mag(coarse, y, x), mag(fine, y, x));
    const std::size_t top = std::max<std::size_t>(1, g.size() / 10);
    std::nth_element(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(top), g.end(),
                     [](const auto &a, const auto &b) { return a.first > b.first; });
    double sc = 0.0, sf = 0.0;
    for (std::size_t i = 0; i < top; ++i) {
        sc += g[i].first;
        sf += g[i].second;
    }
    return sc > 1e-9 * static_cast<double>(top) ? sf / sc : 0.0;
}

} // namespace detail

inline constexpr std::size_t kMinEmbedSide = 16;

inline FeatureVector image_features(const ImageF &input) {
    if (input.height() < kMinEmbedSide || input.width() < kMinEmbedSide)
        throw std::invalid_argument("statistical_embed: image " + input.shape_string() + " smaller than 16x16");
    const ImageF img = input.luminance();
    const std::size_t h = img.height(), w = img.width();
    FeatureVector f{};

    // Noise: MAD of the 4-neighbour Laplacian; white noise of std σ gives a
    // Laplacian std of √20·σ. The same estimate on the 2x2-binned image (which
    // halves white noise) catches noise that compression pushed to lower
    // frequencies; the larger of the two is reported.
    const double sigma = detail::laplacian_noise_sigma(img);
    const ImageF binned = detail::bin2x2(img);
    f[kNoise] = 255.0 * std::max(sigma, 2.0 * detail::laplacian_noise_sigma(binned));

    f[kSharpness] = detail::edge_scale_ratio(img, 1.3);
    f[kResolution] = detail::edge_scale_ratio(img, 2.0);

    // Blockiness: mean |step| across 8-px block boundaries over mean |step| elsewhere.
    double boundary = 0.0, interior = 0.0;
    std::size_t nb = 0, ni = 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x + 1 < w; ++x) {
            const double d = std::abs(img.at(y, x + 1) - img.at(y, x));
            if (x % 8 == 7) {
                boundary += d;
                ++nb;
            } else {
                interior += d;
                ++ni;
            }
        }
    for (std::size_t y = 0; y + 1 < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double d = std::abs(img.at(y + 1, x) - img.at(y, x));
            if (y % 8 == 7) {
                boundary += d;
                ++nb;
            } else {
                interior += d;
                ++ni;
            }
        }
    boundary /= static_cast<double>(std::max<std::size_t>(nb, 1));
    interior /= static_cast<double>(std::max<std::size_t>(ni, 1));
    f[kBlockiness] = (boundary + 1e-4) / (interior + 1e-4);

    double mean = 0.0;
    for (double v : img.data())
        mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (double v : img.data())
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.size());
    const double signal_var = std::max(0.0, var - sigma * sigma);
    f[kContrast] = std::sqrt(signal_var);
    f[kLuminance] = mean;

    ImageF box(h, w, 1);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    acc += img.at(detail::reflect_index(static_cast<std::ptrdiff_t>(y) + dy, h),
                                  detail::reflect_index(static_cast<std::ptrdiff_t>(x) + dx, w));
            box.at(y, x) = acc / 9.0;
        }

    // Box-filtered noise keeps σ/3; its 2..98 percentile spread is ≈ 4.1 of those.
    const double spread = detail::percentile(box.data(), 0.98) - detail::percentile(box.data(), 0.02);
    const double noise_spread = 4.107 * sigma / 3.0;
    f[kDynamicRange] = std::sqrt(std::max(0.0, spread * spread - noise_spread * noise_spread));
    return f;
}

/// Axis and sign of each quality dimension in the statistical embedding; a
/// positive sign means larger feature values indicate better quality.
struct DimensionAxis {
    std::size_t feature;
    double sign;
};

inline constexpr std::array<DimensionAxis, kQualityDimensions> kStatisticalAxes = {{
    {kDynamicRange, +1.0}, // Overall Quality
    {kSharpness, +1.0},    // Blurriness
    {kNoise, -1.0},        // Noise
    {kResolution, +1.0},   // Resolution
    {kBlockiness, -1.0},   // Edge Clarity
    {kContrast, +1.0},     // Clarity
    {kLuminance, +1.0},    // Details
}};

/// Z-scoring constants: mean and standard deviation of every feature over the
/// calibration corpus (see `calibration_corpus`). Regenerate with
/// `mor-calibrate` after changing any feature definition.
inline constexpr FeatureVector kFeatureMean = {13.757166126606188, 1.551102338340157, 1.14328383012427, 0.12821981068498245, 0.50157585274298322, 1.7500025578805916, 0.43969094126438463};
inline constexpr FeatureVector kFeatureStd = {7.3257864125251988, 0.19233137086591379, 0.2543370006770716, 0.04759829050325029, 0.22093752495733462, 0.31065934628090136, 0.14875328644622357};

inline std::array<double, kStatFeatureCount> zscore(const FeatureVector &f) {
    FeatureVector z{};
    for (std::size_t i = 0; i < kStatFeatureCount; ++i)
        z[i] = (f[i] - kFeatureMean[i]) / kFeatureStd[i];
    return z;
}

/// Each feature occupies its own plane of the embedding: z ↦ (1, z)/√(1+z²),
/// i.e. the point at angle atan(z) on the unit circle. The embedding norm is
/// then the same for every image, so one extreme feature cannot pull the
/// cosines of the other dimensions toward zero, and each score depends only on
/// its own feature.
inline constexpr std::size_t kStatEmbeddingDim = 2 * kStatFeatureCount;

inline Embedding statistical_embed(const ImageF &img) {
    const auto z = zscore(image_features(img));
    Vector e(kStatEmbeddingDim);
    for (std::size_t i = 0; i < kStatFeatureCount; ++i) {
        const double r = std::sqrt(1.0 + z[i] * z[i]);
        e[2 * i] = 1.0 / r;
        e[2 * i + 1] = z[i] / r;
    }
    return Embedding(std::move(e));
}

/// 64 procedural textures (seeds 0..63), each as a 24x24 patch and as the ×4
/// bicubic reduction of a 96x96 patch; every patch appears clean and degraded by
/// the Degradation-1 and Degradation-2 profiles (pipeline seeds split_seed(s, 1|2)).
inline std::vector<ImageF> calibration_corpus() {
    std::vector<ImageF> out;
    const auto deg1 = DegradationProfile::deg1();
    const auto deg2 = DegradationProfile::deg2();
    for (std::uint64_t s = 0; s < 64; ++s) {
        const ImageF small = procedural_texture(24, 24, s);
        out.push_back(small);
        out.push_back(replay_degradation(small, sample_degradation(deg1, split_seed(s, 1), 1)));
        out.push_back(replay_degradation(small, sample_degradation(deg2, split_seed(s, 2), 1)));
        const ImageF big = procedural_texture(96, 96, s + 1000);
        out.push_back(resize_bicubic(big, 0.25));
        out.push_back(replay_degradation(big, sample_degradation(deg1, split_seed(s, 3), 4)));
        out.push_back(replay_degradation(big, sample_degradation(deg2, split_seed(s, 4), 4)));
    }
    return out;
}

struct FeatureCalibration {
    FeatureVector mean{};
    FeatureVector stddev{};
};

inline FeatureCalibration calibrate_features(const std::vector<ImageF> &corpus) {
    FeatureCalibration cal;
    std::vector<FeatureVector> feats;
    feats.reserve(corpus.size());
    for (const auto &img : corpus)
        feats.push_back(image_features(img));
    const double n = static_cast<double>(feats.size());
    for (std::size_t i = 0; i < kStatFeatureCount; ++i) {
        double m = 0.0;
        for (const auto &f : feats)
            m += f[i];
        m /= n;
        double v = 0.0;
        for (const auto &f : feats)
            v += (f[i] - m) * (f[i] - m);
        cal.mean[i] = m;
        cal.stddev[i] = std::sqrt(v / n);
    }
    return cal;
}

inline PromptPairSet statistical_prompt_pairs() {
    std::vector<PromptPair> pairs;
    for (std::size_t d = 0; d < kQualityDimensions; ++d) {
        Vector pos(kStatEmbeddingDim, 0.0), neg(kStatEmbeddingDim, 0.0);
        pos[2 * kStatisticalAxes[d].feature + 1] = kStatisticalAxes[d].sign;
        neg[2 * kStatisticalAxes[d].feature + 1] = -kStatisticalAxes[d].sign;
        pairs.push_back({kQualityTable[d].name, Embedding(pos), Embedding(neg)});
    }
    return PromptPairSet(std::move(pairs));
}

// ---------------------------------------------------------------------------
// Embedding files

using EmbeddingTable = std::map<std::string, Embedding>;

/// Format: first non-comment line `dim <D>`, then `<id> <v1> ... <vD>`.
inline EmbeddingTable parse_embedding_table(std::string_view text, const std::string &origin = "<text>") {
    EmbeddingTable table;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    std::size_t dim = 0;
    auto fail = [&](const std::string &msg) {
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::istringstream fields(line);
        std::vector<std::string> tok;
        for (std::string t; fields >> t;)
            tok.push_back(t);
        if (tok.empty())
            continue;
        if (dim == 0) {
            if (tok.size() != 2 || tok[0] != "dim")
                fail("expected header 'dim <D>'");
            long long d = 0;
            auto res = std::from_chars(tok[1].data(), tok[1].data() + tok[1].size(), d);
            if (res.ec != std::errc() || res.ptr != tok[1].data() + tok[1].size() || d < 2)
                fail("invalid dimension '" + tok[1] + "'");
            dim = static_cast<std::size_t>(d);
            continue;
        }
        if (tok.size() != dim + 1)
            fail("row '" + tok[0] + "' has " + std::to_string(tok.size() - 1) + " values, expected " +
                 std::to_string(dim));
        Vector v(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            const std::string &s = tok[i + 1];
            auto res = std::from_chars(s.data(), s.data() + s.size(), v[i]);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size())
                fail("row '" + tok[0] + "': malformed value '" + s + "'");
        }
        if (table.count(tok[0]))
            fail("duplicate id '" + tok[0] + "'");
        try {
            table.emplace(tok[0], Embedding(std::move(v)));
        } catch (const std::invalid_argument &e) {
            fail("row '" + tok[0] + "': " + e.what());
        }
    }
    if (dim == 0)
        throw std::runtime_error(origin + ": missing 'dim <D>' header");
    return table;
}

inline EmbeddingTable load_embedding_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("load_embedding_file: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_embedding_table(ss.str(), path.string());
}

struct FileEmbeddingSource {
    EmbeddingTable table;

    const Embedding &lookup(const std::string &id) const {
        auto it = table.find(id);
        if (it == table.end())
            throw std::runtime_error("embedding id '" + id + "' not found");
        return it->second;
    }
};

struct StatisticalEmbeddingSource {
    Embedding embed(const ImageF &img) const { return statistical_embed(img); }
};

using EmbeddingSource = std::variant<FileEmbeddingSource, StatisticalEmbeddingSource>;

inline PromptPairSet prompt_pairs_for(const EmbeddingSource &source) {
    if (std::holds_alternative<StatisticalEmbeddingSource>(source))
        return statistical_prompt_pairs();
    const auto &file = std::get<FileEmbeddingSource>(source);
    std::vector<PromptPair> pairs;
    for (const auto &dim : kQualityTable) {
        const std::string stem = prompt_id_stem(dim.name);
        auto pos = file.table.find(stem + ".pos");
        auto neg = file.table.find(stem + ".neg");
        if (pos == file.table.end() || neg == file.table.end())
            throw std::runtime_error(std::string("prompt embeddings missing for dimension ") + dim.name + " (" +
                                     (pos == file.table.end() ? stem + ".pos" : stem + ".neg") + ")");
        pairs.push_back({dim.name, pos->second, neg->second});
    }
    return PromptPairSet(std::move(pairs));
}

} // namespace mor
