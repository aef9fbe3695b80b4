// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Expert-activation statistics over a trained generator and per-image quality
// metrics. Everything here is read-only over the model; results come out as
// plain structs and CSV.
//
// zero_counts.csv       layer,regime,samples,zero_experts,k,mean_zero_active
// expert_freq_layer<L>  expert,kind,regime,frequency      (kind: real | zero)
// metrics.csv           regime,name,psnr,ssim,baseline_psnr,scalar_degradation

#pragma once

#include "mor/checkpoint.hpp"
#include "mor/dataset.hpp"
#include "mor/metrics.hpp"
#include "mor/networks.hpp"
#include "mor/trainer.hpp"

#include <iomanip>
#include <ostream>

namespace mor {

struct LayerShape {
    std::size_t n_real = 0;
    std::size_t zero = 0;
    std::size_t k = 0;
    std::size_t experts() const noexcept { return n_real + zero; }
};

/// One routing decision: layer `layer` on sample `sample` of the dataset.
struct ActivationRecord {
    std::size_t layer = 0;
    std::size_t sample = 0;
    std::string regime;
    std::string name;
    Vector scores;
    double scalar = 0.0;
    std::vector<std::size_t> selected; // by descending probability
    Vector gates;                      // aligned with `selected`
};

struct ActivationLog {
    std::vector<LayerShape> layers;
    std::vector<ActivationRecord> records; // sample-major, then layer

    /// Regime tags in first-seen order.
    std::vector<std::string> regimes() const {
        std::vector<std::string> out;
        for (const auto &r : records)
            if (std::find(out.begin(), out.end(), r.regime) == out.end())
                out.push_back(r.regime);
        return out;
    }

    void check_layer(std::size_t layer) const {
        if (layer >= layers.size())
            throw std::out_of_range("activation log: layer " + std::to_string(layer) + " does not exist (model has " +
                                    std::to_string(layers.size()) + ")");
    }
};

inline LayerShape layer_shape(const MorLayer &l) { return {l.config.n, l.config.z, l.config.routed() ? l.config.k : 0}; }

inline ActivationLog log_activations(const ToyGenerator &gen, const std::vector<Sample> &samples) {
    if (samples.empty())
        throw std::invalid_argument("log_activations: empty dataset");
    ActivationLog log;
    log.layers = {layer_shape(gen.mor1), layer_shape(gen.mor2)};
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample &s = samples[i];
        ToyGenerator::Cache c;
        gen.forward(s.lr, s.scores.values(), &c);
        const RoutingDecision *d[2] = {&c.route1, &c.route2};
        for (std::size_t layer = 0; layer < 2; ++layer) {
            ActivationRecord r;
            r.layer = layer;
            r.sample = i;
            r.regime = s.regime;
            r.name = s.name;
            r.scores = s.scores.values();
            r.scalar = s.scalar.value;
            r.selected = d[layer]->selected;
            for (std::size_t e : r.selected)
                r.gates.push_back(d[layer]->gates[e]);
            log.records.push_back(std::move(r));
        }
    }
    return log;
}

inline ActivationLog log_activations(const Checkpoint &ck, const std::vector<Sample> &samples) {
    return log_activations(generator_from_checkpoint(ck, config_from_checkpoint(ck)), samples);
}

/// Mean number of selected zero experts per sample of `regime` in `layer`.
inline double zero_expert_count(const ActivationLog &log, std::size_t layer, const std::string &regime) {
    log.check_layer(layer);
    const std::size_t n_real = log.layers[layer].n_real;
    std::size_t total = 0, samples = 0;
    for (const auto &r : log.records) {
        if (r.layer != layer || r.regime != regime)
            continue;
        ++samples;
        total += static_cast<std::size_t>(
            std::count_if(r.selected.begin(), r.selected.end(), [&](std::size_t e) { return e >= n_real; }));
    }
    if (samples == 0)
        throw std::invalid_argument("zero_expert_count: no samples tagged with regime '" + regime + "'");
    return static_cast<double>(total) / static_cast<double>(samples);
}

struct ZeroCountRow {
    std::size_t layer = 0;
    std::string regime;
    std::size_t samples = 0;
    double mean_zero_active = 0.0;
};

/// One row per layer and regime; the regimes must all occur in the log.
inline std::vector<ZeroCountRow> zero_expert_counts(const ActivationLog &log, const std::vector<std::string> &regimes) {
    std::vector<ZeroCountRow> rows;
    for (std::size_t layer = 0; layer < log.layers.size(); ++layer)
        for (const auto &reg : regimes) {
            ZeroCountRow row{layer, reg, 0, zero_expert_count(log, layer, reg)};
            for (const auto &r : log.records)
                row.samples += r.layer == layer && r.regime == reg;
            rows.push_back(row);
        }
    return rows;
}

inline std::vector<ZeroCountRow> zero_expert_counts(const ActivationLog &log) {
    return zero_expert_counts(log, log.regimes());
}

/// Per-regime selection frequency of each routed expert in `layer`; every
/// sample contributes k selections, so each vector sums to k.
inline std::map<std::string, Vector> expert_frequency(const ActivationLog &log, std::size_t layer) {
    log.check_layer(layer);
    const std::size_t experts = log.layers[layer].experts();
    std::map<std::string, Vector> freq;
    std::map<std::string, std::size_t> count;
    for (const auto &r : log.records) {
        if (r.layer != layer)
            continue;
        Vector &f = freq[r.regime];
        f.resize(experts, 0.0);
        for (std::size_t e : r.selected)
            f[e] += 1.0;
        ++count[r.regime];
    }
    for (auto &[reg, f] : freq)
        for (double &v : f)
            v /= static_cast<double>(count[reg]);
    return freq;
}

inline void write_zero_counts_csv(std::ostream &os, const ActivationLog &log, const std::vector<ZeroCountRow> &rows) {
    os << "layer,regime,samples,zero_experts,k,mean_zero_active\n" << std::setprecision(9);
    for (const auto &r : rows)
        os << r.layer << ',' << r.regime << ',' << r.samples << ',' << log.layers[r.layer].zero << ','
           << log.layers[r.layer].k << ',' << r.mean_zero_active << '\n';
}

inline void write_expert_frequency_csv(std::ostream &os, const ActivationLog &log, std::size_t layer) {
    const auto freq = expert_frequency(log, layer);
    const std::size_t n_real = log.layers[layer].n_real;
    os << "expert,kind,regime,frequency\n" << std::setprecision(9);
    for (std::size_t e = 0; e < log.layers[layer].experts(); ++e)
        for (const auto &reg : log.regimes())
            os << e << ',' << (e < n_real ? "real" : "zero") << ',' << reg << ',' << freq.at(reg)[e] << '\n';
}

struct ImageMetrics {
    std::string regime;
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    double baseline_psnr = 0.0;
    double scalar = 0.0;
};

struct MetricReport {
    std::vector<ImageMetrics> images;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

inline MetricReport metric_report(const ToyGenerator &gen, const std::vector<Sample> &samples) {
    if (samples.empty())
        throw std::invalid_argument("metric_report: empty dataset");
    MetricReport rep;
    for (const auto &s : samples) {
        ImageF out = gen.forward(s.lr, s.scores.values());
        out.clamp01();
        rep.images.push_back({s.regime, s.name, psnr(out, s.hr), ssim(out, s.hr), psnr(s.lr, s.hr), s.scalar.value});
        rep.mean_psnr += rep.images.back().psnr;
        rep.mean_ssim += rep.images.back().ssim;
    }
    rep.mean_psnr /= static_cast<double>(samples.size());
    rep.mean_ssim /= static_cast<double>(samples.size());
    return rep;
}

inline void write_metrics_csv(std::ostream &os, const MetricReport &rep) {
    os << "regime,name,psnr,ssim,baseline_psnr,scalar_degradation\n" << std::setprecision(9);
    for (const auto &m : rep.images)
        os << m.regime << ',' << m.name << ',' << m.psnr << ',' << m.ssim << ',' << m.baseline_psnr << ',' << m.scalar
           << '\n';
}

} // namespace mor
