// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Degradation scores: for each quality dimension i,
//   d_p = cos(e, pos_i), d_n = cos(e, neg_i),
//   s_i = exp(d_n) / (exp(d_p) + exp(d_n))
// so s_i → 1 means the image sits closer to the negative prompt.

#pragma once

#include "mor/embedding.hpp"

#include <numeric>

namespace mor {

class DegradationScoreVector {
public:
    DegradationScoreVector() = default;
    explicit DegradationScoreVector(Vector scores) : scores_(std::move(scores)) {
        for (double s : scores_)
            if (!(s > 0.0 && s < 1.0))
                throw std::invalid_argument("DegradationScoreVector: score outside (0,1): " + format_double(s));
    }
    std::size_t size() const noexcept { return scores_.size(); }
    double operator[](std::size_t i) const noexcept { return scores_[i]; }
    const Vector &values() const noexcept { return scores_; }
    bool operator==(const DegradationScoreVector &) const = default;

private:
    Vector scores_;
};

struct ScalarDegradation {
    double value = 0.5;
};

inline double dimension_score(const Embedding &image, const Embedding &pos, const Embedding &neg) {
    const double dp = cosine_similarity(image.values(), pos.values());
    const double dn = cosine_similarity(image.values(), neg.values());
    // exp(dn)/(exp(dp)+exp(dn)), shifted by max for stability
    const double m = std::max(dp, dn);
    const double ep = std::exp(dp - m), en = std::exp(dn - m);
    return en / (ep + en);
}

inline DegradationScoreVector estimate(const Embedding &image, const PromptPairSet &pairs) {
    if (image.dim() != pairs.dim())
        throw std::invalid_argument("estimate: embedding dimension " + std::to_string(image.dim()) +
                                    " does not match prompt dimension " + std::to_string(pairs.dim()));
    Vector s;
    s.reserve(pairs.size());
    for (const auto &p : pairs)
        s.push_back(dimension_score(image, p.positive, p.negative));
    return DegradationScoreVector(std::move(s));
}

/// Image route: the source must be able to embed images (statistical).
inline DegradationScoreVector estimate(const ImageF &img, const PromptPairSet &pairs, const EmbeddingSource &source) {
    if (!std::holds_alternative<StatisticalEmbeddingSource>(source))
        throw std::invalid_argument("estimate: a file-backed source cannot embed images; pass an embedding id");
    return estimate(std::get<StatisticalEmbeddingSource>(source).embed(img), pairs);
}

inline DegradationScoreVector estimate(const std::string &image_id, const PromptPairSet &pairs,
                                       const EmbeddingSource &source) {
    if (!std::holds_alternative<FileEmbeddingSource>(source))
        throw std::invalid_argument("estimate: the statistical source has no embedding table");
    return estimate(std::get<FileEmbeddingSource>(source).lookup(image_id), pairs);
}

inline ScalarDegradation aggregate_scalar(const DegradationScoreVector &v) {
    if (v.size() == 0)
        throw std::invalid_argument("aggregate_scalar: empty score vector");
    const double sum = std::accumulate(v.values().begin(), v.values().end(), 0.0);
    return {sum / static_cast<double>(v.size())};
}

/// Statistical-provider convenience used by the trainer and the pipelines.
inline DegradationScoreVector estimate_statistical(const ImageF &img) {
    static const PromptPairSet pairs = statistical_prompt_pairs();
    return estimate(statistical_embed(img), pairs);
}

} // namespace mor
