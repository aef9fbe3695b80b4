// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prints the z-scoring constants of the statistical embedder, computed over the
// calibration corpus, in a form that can be pasted into embedding.hpp.

#include "mor/embedding.hpp"

#include <cstdio>

int main() {
    const auto cal = mor::calibrate_features(mor::calibration_corpus());
    auto print = [](const char *name, const mor::FeatureVector &v) {
        std::printf("inline constexpr FeatureVector %s = {", name);
        for (std::size_t i = 0; i < v.size(); ++i)
            std::printf("%s%.17g", i ? ", " : "", v[i]);
        std::printf("};\n");
    };
    print("kFeatureMean", cal.mean);
    print("kFeatureStd", cal.stddev);
    return 0;
}
