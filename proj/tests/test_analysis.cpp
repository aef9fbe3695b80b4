// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#include "mor/analysis.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

using namespace mor;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

/// Layer 0 has experts {0, 1} real and {2} zero, k = 1. Regime "a" picks the
/// zero expert on 3 of 10 samples; regime "b" never does.
ActivationLog hand_log() {
    ActivationLog log;
    log.layers = {LayerShape{2, 1, 1}};
    for (std::size_t i = 0; i < 20; ++i) {
        ActivationRecord r;
        r.sample = i;
        r.regime = i < 10 ? "a" : "b";
        r.name = std::to_string(i);
        r.selected = {i < 3 ? 2u : i % 2};
        r.gates = {0.5};
        log.records.push_back(r);
    }
    return log;
}

struct TrainedSmall {
    Trainer trainer;
    TrainedSmall() : trainer(make_config()) { trainer.run(); }
    static TrainConfig make_config() {
        TrainConfig c = TrainConfig::variant("mor_full");
        c.iterations = 20;
        c.train_size = 60;
        c.heldout_size = 10;
        c.teacher_max_steps = 200;
        return c;
    }
};

const Trainer &trained() {
    static const TrainedSmall t;
    return t.trainer;
}

std::vector<std::string> lines(const std::string &s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);)
        out.push_back(l);
    return out;
}

} // namespace

TEST_CASE("zero-expert counts on a hand-built log", "[analysis]") {
    const ActivationLog log = hand_log();
    CHECK(zero_expert_count(log, 0, "a") == Approx(0.3).epsilon(1e-15));
    CHECK(zero_expert_count(log, 0, "b") == 0.0);
    CHECK(log.regimes() == std::vector<std::string>{"a", "b"});

    const auto rows = zero_expert_counts(log);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].samples == 10);
    CHECK(rows[0].mean_zero_active == Approx(0.3).epsilon(1e-15));

    const auto freq = expert_frequency(log, 0);
    CHECK(freq.at("a") == Vector{0.3, 0.4, 0.3});
    CHECK(freq.at("b") == Vector{0.5, 0.5, 0.0});

    CHECK_THROWS_WITH(zero_expert_count(log, 1, "a"), ContainsSubstring("layer 1"));
    CHECK_THROWS_WITH(zero_expert_count(log, 0, "c"), ContainsSubstring("'c'"));
    CHECK_THROWS_AS(expert_frequency(log, 3), std::out_of_range);
}

TEST_CASE("CSV outputs", "[analysis][csv]") {
    const ActivationLog log = hand_log();
    std::ostringstream zc;
    write_zero_counts_csv(zc, log, zero_expert_counts(log));
    const auto z = lines(zc.str());
    REQUIRE(z.size() == 3);
    CHECK(z[0] == "layer,regime,samples,zero_experts,k,mean_zero_active");
    CHECK(z[1] == "0,a,10,1,1,0.3");
    CHECK(z[2] == "0,b,10,1,1,0");

    std::ostringstream ef;
    write_expert_frequency_csv(ef, log, 0);
    const auto f = lines(ef.str());
    REQUIRE(f.size() == 7);
    CHECK(f[0] == "expert,kind,regime,frequency");
    CHECK(f[1] == "0,real,a,0.3");
    CHECK(f[6] == "2,zero,b,0");
}

TEST_CASE("activation log of a trained generator", "[analysis]") {
    const Trainer &tr = trained();
    const ToyGenerator &g = tr.generator();
    const ActivationLog log = log_activations(g, tr.heldout_set());
    REQUIRE(log.layers.size() == 2);
    CHECK(log.layers[0].n_real == 28);
    CHECK(log.layers[0].zero == 4);
    CHECK(log.layers[0].k == 8);
    REQUIRE(log.records.size() == 2 * tr.heldout_set().size());

    // Each record matches a fresh routing of the sample's scores.
    for (const auto &r : log.records) {
        const MorLayer &l = r.layer == 0 ? g.mor1 : g.mor2;
        const RoutingDecision d = route(l, r.scores);
        CHECK(r.selected == d.selected);
        REQUIRE(r.gates.size() == r.selected.size());
        for (std::size_t i = 0; i < r.selected.size(); ++i)
            CHECK(r.gates[i] == d.gates[r.selected[i]]);
        CHECK(r.regime == tr.heldout_set()[r.sample].regime);
    }

    for (std::size_t layer = 0; layer < 2; ++layer)
        for (const auto &[reg, f] : expert_frequency(log, layer)) {
            double sum = 0.0;
            for (double v : f)
                sum += v;
            CHECK(sum == Approx(8.0).epsilon(1e-12));
        }

    // Agrees with the evaluation summary and with a checkpoint round trip.
    const EvalReport ev = tr.evaluate(tr.heldout_set());
    for (const auto &[reg, z] : ev.zero_active)
        for (std::size_t layer = 0; layer < 2; ++layer)
            CHECK(zero_expert_count(log, layer, reg) == Approx(z[layer]).epsilon(1e-12));
    const ActivationLog again = log_activations(tr.checkpoint(), tr.heldout_set());
    REQUIRE(again.records.size() == log.records.size());
    for (std::size_t i = 0; i < log.records.size(); ++i)
        CHECK(again.records[i].selected == log.records[i].selected);

    CHECK_THROWS_AS(log_activations(g, {}), std::invalid_argument);
}

TEST_CASE("per-image metric report", "[analysis][metrics]") {
    const Trainer &tr = trained();
    const MetricReport rep = metric_report(tr.generator(), tr.heldout_set());
    REQUIRE(rep.images.size() == tr.heldout_set().size());
    const EvalReport ev = tr.evaluate(tr.heldout_set());
    CHECK(rep.mean_psnr == Approx(ev.psnr).epsilon(1e-12));
    CHECK(rep.mean_ssim == Approx(ev.ssim).epsilon(1e-12));
    for (std::size_t i = 0; i < rep.images.size(); ++i) {
        CHECK(rep.images[i].name == tr.heldout_set()[i].name);
        CHECK(rep.images[i].baseline_psnr == psnr(tr.heldout_set()[i].lr, tr.heldout_set()[i].hr));
    }
    std::ostringstream os;
    write_metrics_csv(os, rep);
    const auto l = lines(os.str());
    CHECK(l.size() == rep.images.size() + 1);
    CHECK(l[0] == "regime,name,psnr,ssim,baseline_psnr,scalar_degradation");
    CHECK(std::count(l[1].begin(), l[1].end(), ',') == 5);
    CHECK_THROWS_AS(metric_report(tr.generator(), {}), std::invalid_argument);
}
