// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#include "mor/trainer.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

using namespace mor;
using Catch::Matchers::ContainsSubstring;

namespace {

TrainConfig small_config(std::size_t iterations = 20) {
    TrainConfig c = TrainConfig::variant("mor_full");
    c.iterations = iterations;
    c.train_size = 60;
    c.heldout_size = 10;
    c.teacher_max_steps = 200;
    return c;
}

struct SmallData {
    std::vector<Sample> train, heldout;
};

const SmallData &small_data() {
    static const SmallData d = [] {
        const TrainConfig c = small_config();
        const std::vector<DegradationProfile> p = {DegradationProfile::deg1(), DegradationProfile::deg2()};
        return SmallData{make_toy_dataset(c.train_size, c.image_size, split_seed(c.seed, 11), p),
                         make_toy_dataset(c.heldout_size, c.image_size, split_seed(c.seed, 12), p)};
    }();
    return d;
}

std::vector<Matrix> snapshot(const NamedConstParams &params) {
    std::vector<Matrix> out;
    for (const auto &[_, m] : params)
        out.push_back(*m);
    return out;
}

NamedConstParams const_view(const NamedParams &p) {
    NamedConstParams out;
    for (const auto &[n, m] : p)
        out.emplace_back(n, m);
    return out;
}

double fixed_student_loss(const Trainer &tr, const Batch &batch) {
    SeededRng rng(99);
    const std::size_t d = tr.generator().latent();
    double loss = 0.0;
    for (std::size_t idx : batch.indices) {
        const Sample &s = tr.train_set()[idx];
        ToyGenerator::Cache c;
        tr.generator().forward(s.lr, s.scores.values(), &c);
        for (int rep = 0; rep < 8; ++rep) {
            const std::size_t t = 1 + rng.below(tr.schedule().steps());
            const Vector eps = normal_vector(d, rng);
            loss += diffusion_loss(eps, tr.student()(add_noise(c.z0_hat, eps, tr.schedule().abar(t)), t));
        }
    }
    return loss;
}

} // namespace

TEST_CASE("train config: key=value parsing", "[trainer][config]") {
    const TrainConfig c = TrainConfig::from_key_values(KeyValues::parse("seed=7\niterations=30\nmor_z=2\nbalance_mode=standard\n"
                                                                        "lr_schedule=cosine\nalpha_balance=0.01\n"));
    CHECK(c.seed == 7);
    CHECK(c.iterations == 30);
    CHECK(c.mor.z == 2);
    CHECK(c.balance == BalanceMode::kStandard);
    CHECK(c.lr_schedule == LrSchedule::kCosine);
    CHECK(c.weights.alpha_balance == 0.01);
    const TrainConfig back = TrainConfig::from_key_values(c.to_key_values());
    CHECK(back.to_key_values().to_string() == c.to_key_values().to_string());

    CHECK_THROWS_WITH(TrainConfig::from_key_values(KeyValues::parse("iteratons=5\n")), ContainsSubstring("unknown key"));
    CHECK_THROWS_WITH(TrainConfig::from_key_values(KeyValues::parse("iteratons=5\n")), ContainsSubstring("iteratons"));
    CHECK_THROWS_AS(TrainConfig::from_key_values(KeyValues::parse("balance_mode=fancy\n")), std::runtime_error);
    CHECK_THROWS_AS(TrainConfig::from_key_values(KeyValues::parse("lr_schedule=step\n")), std::runtime_error);
    CHECK_THROWS_AS(TrainConfig::from_key_values(KeyValues::parse("train_size=40\n")), std::runtime_error);
    CHECK_THROWS_AS(TrainConfig::from_key_values(KeyValues::parse("mor_k=40\n")), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_key_values(KeyValues::parse("latent_side=30\n")), std::runtime_error);
    CHECK_THROWS_WITH(TrainConfig::load("no_such_config.cfg"), ContainsSubstring("no_such_config.cfg"));
}

TEST_CASE("train config: variants share a rank budget of 36", "[trainer][config]") {
    for (const char *v : {"mor_full", "mor_v2", "mor_v1", "lora"}) {
        const TrainConfig c = TrainConfig::variant(v);
        INFO(v);
        CHECK(c.mor.m + c.mor.n == 36);
    }
    CHECK(TrainConfig::variant("mor_full").balance == BalanceMode::kDegradationAware);
    CHECK(TrainConfig::variant("mor_v2").balance == BalanceMode::kStandard);
    CHECK(TrainConfig::variant("mor_v1").mor.z == 0);
    CHECK(TrainConfig::variant("lora").mor.routed() == 0);
    CHECK_THROWS_AS(TrainConfig::variant("mor_v3"), std::invalid_argument);
}

TEST_CASE("teacher pretraining lowers held-out diffusion loss", "[trainer][teacher]") {
    const Trainer tr(small_config(), &small_data().train, &small_data().heldout);
    const TeacherReport &r = tr.teacher_report();
    CHECK(r.steps > 0);
    CHECK(r.steps <= 200);
    CHECK(r.final_heldout < r.initial_heldout);

    SeededRng rng(1);
    CHECK_THROWS_WITH(pretrain_teacher(std::vector<Vector>(99, Vector(4, 0.0)), small_config(), tr.schedule(), rng),
                      ContainsSubstring("100"));
}

TEST_CASE("training is deterministic", "[trainer][determinism]") {
    Trainer a(small_config(), &small_data().train, &small_data().heldout);
    Trainer b(small_config(), &small_data().train, &small_data().heldout);
    a.run();
    b.run();
    CHECK(serialize_checkpoint(a.checkpoint()) == serialize_checkpoint(b.checkpoint()));
    CHECK(a.evaluate(a.heldout_set()).psnr == b.evaluate(b.heldout_set()).psnr);
}

TEST_CASE("resume from a checkpoint equals an uninterrupted run", "[trainer][checkpoint]") {
    for (LrSchedule sched : {LrSchedule::kConstant, LrSchedule::kCosine}) {
        INFO(to_string(sched));
        TrainConfig cfg = small_config(20);
        cfg.lr_schedule = sched;
        Trainer full(cfg, &small_data().train, &small_data().heldout);
        full.run();

        Trainer first(cfg, &small_data().train, &small_data().heldout);
        first.run(nullptr, 10);
        REQUIRE(first.iteration() == 10);
        const std::string saved = serialize_checkpoint(first.checkpoint());

        Trainer resumed(deserialize_checkpoint(saved), &small_data().train, &small_data().heldout);
        CHECK(resumed.iteration() == 10);
        resumed.run();
        CHECK(resumed.iteration() == 20);
        CHECK(serialize_checkpoint(resumed.checkpoint()) == serialize_checkpoint(full.checkpoint()));
    }

    // Extending a finished constant-rate run continues the same trajectory.
    Trainer full(small_config(20), &small_data().train, &small_data().heldout);
    full.run();
    Trainer shorter(small_config(10), &small_data().train, &small_data().heldout);
    shorter.run();
    Trainer extended(shorter.checkpoint(), &small_data().train, &small_data().heldout);
    extended.mutable_config().iterations = 20;
    extended.run();
    CHECK(serialize_checkpoint(extended.checkpoint()) == serialize_checkpoint(full.checkpoint()));
}

TEST_CASE("phases touch only their own parameters", "[trainer][isolation]") {
    Trainer tr(small_config(), &small_data().train, &small_data().heldout);
    const Batch batch = tr.sample_batch();
    REQUIRE(batch.indices.size() == 16);
    const std::string regime = tr.train_set()[batch.indices.front()].regime;
    for (std::size_t i : batch.indices)
        CHECK(tr.train_set()[i].regime == regime);

    const auto gen0 = snapshot(tr.generator().all_params());
    const auto teacher0 = snapshot(tr.teacher().params());
    const auto student0 = snapshot(tr.student().params());
    const auto disc0 = snapshot(tr.discriminator().params());

    tr.phase_student(batch);
    CHECK(snapshot(tr.generator().all_params()) == gen0);
    CHECK(snapshot(tr.teacher().params()) == teacher0);
    CHECK(snapshot(tr.discriminator().params()) == disc0);
    CHECK(snapshot(tr.student().params()) != student0);

    const auto student1 = snapshot(tr.student().params());
    const Matrix decoder = tr.generator().decoder, w0a = tr.generator().mor1.w0, w0b = tr.generator().mor2.w0;
    for (int i = 0; i < 5; ++i)
        tr.phase_generator(tr.sample_batch());
    CHECK(snapshot(tr.teacher().params()) == teacher0);
    CHECK(snapshot(tr.student().params()) == student1);
    CHECK(tr.generator().decoder == decoder);
    CHECK(tr.generator().mor1.w0 == w0a);
    CHECK(tr.generator().mor2.w0 == w0b);
    CHECK(tr.generator().encoder != gen0[0]);
    CHECK(snapshot(tr.discriminator().params()) != disc0);
}

TEST_CASE("student steps fit the generator's outputs", "[trainer][student]") {
    Trainer tr(small_config(), &small_data().train, &small_data().heldout);
    for (int i = 0; i < 10; ++i)
        tr.phase_generator(tr.sample_batch()); // move the generator away from the teacher
    const Batch batch = tr.sample_batch();
    const double before = fixed_student_loss(tr, batch);
    for (int i = 0; i < 30; ++i)
        tr.phase_student(batch);
    CHECK(fixed_student_loss(tr, batch) < before);
}

TEST_CASE("pure reconstruction training halves the loss in 200 iterations", "[trainer][training]") {
    TrainConfig c = small_config(200);
    c.weights.lambda_vsd = 0.0;
    c.weights.lambda_gan = 0.0;
    c.weights.alpha_balance = 0.0;
    Trainer tr(c, &small_data().train, &small_data().heldout);
    tr.run();
    const auto &h = tr.history();
    REQUIRE(h.size() == 200);
    double tail = 0.0;
    for (std::size_t i = 190; i < 200; ++i)
        tail += h[i].parts.rec / 10.0;
    INFO("first " << h.front().parts.rec << ", last ten " << tail);
    CHECK(tail <= 0.5 * h.front().parts.rec);
    for (const auto &l : h) {
        CHECK(l.parts.vsd == 0.0);
        CHECK(l.parts.gan == 0.0);
        CHECK(l.parts.balance == 0.0);
    }
}

TEST_CASE("the balance term reaches only the routers", "[trainer][balance]") {
    TrainConfig off = small_config();
    off.balance = BalanceMode::kStandard;
    off.weights.alpha_balance = 0.0;
    TrainConfig on = off;
    on.weights.alpha_balance = 0.01;
    Trainer a(off, &small_data().train, &small_data().heldout), b(on, &small_data().train, &small_data().heldout);

    // One generator step from identical states: only W_g may differ.
    const Batch batch = a.sample_batch();
    REQUIRE(b.sample_batch().indices == batch.indices);
    a.phase_generator(batch);
    const IterationLog lb = b.phase_generator(batch);
    CHECK(lb.parts.balance > 0.0);
    const auto pa = const_view(a.generator().trainable_params());
    const auto pb = const_view(b.generator().trainable_params());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        INFO(pa[i].first);
        if (pa[i].first.ends_with(".w_g"))
            CHECK(*pa[i].second != *pb[i].second);
        else
            CHECK(*pa[i].second == *pb[i].second);
    }
    CHECK(snapshot(a.discriminator().params()) == snapshot(b.discriminator().params()));

    // Over longer runs the routing statistics separate.
    a.mutable_config().iterations = b.mutable_config().iterations = 60;
    a.run();
    b.run();
    CHECK(a.evaluate(a.heldout_set()).routing_entropy != b.evaluate(b.heldout_set()).routing_entropy);
    CHECK(a.history().back().routing_entropy != b.history().back().routing_entropy);
}

TEST_CASE("training log format", "[trainer][log]") {
    Trainer tr(small_config(5), &small_data().train, &small_data().heldout);
    std::ostringstream log;
    tr.run(&log);
    std::istringstream in(log.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == kLogHeader);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 6);
        CHECK(line.starts_with(std::to_string(rows) + ","));
        ++rows;
    }
    CHECK(rows == 5);
    CHECK(tr.history().size() == 5);
    for (const auto &l : tr.history()) {
        CHECK(l.routing_entropy > 0.0);
        CHECK(l.mean_zero_active >= 0.0);
        CHECK(l.mean_zero_active <= 8.0);
    }
}

TEST_CASE("the generator rebuilds from a checkpoint", "[trainer][checkpoint]") {
    Trainer tr(small_config(5), &small_data().train, &small_data().heldout);
    tr.run();
    const Checkpoint ck = tr.checkpoint();
    const TrainConfig cfg = config_from_checkpoint(ck);
    const ToyGenerator g = generator_from_checkpoint(ck, cfg);
    for (std::size_t i = 0; i < 5; ++i) {
        const Sample &s = tr.heldout_set()[i];
        CHECK(g.forward(s.lr, s.scores.values()).data() == tr.restore_image(s).data());
    }
    const EvalReport a = evaluate_generator(g, tr.heldout_set(), cfg.weights.lambda_grad);
    const EvalReport b = tr.evaluate(tr.heldout_set());
    CHECK(a.psnr == b.psnr);
    CHECK(a.ssim == b.ssim);
    CHECK(a.zero_active == b.zero_active);
    CHECK(a.samples == 20);
    CHECK(a.zero_active.size() == 2);

    TrainConfig wrong = cfg;
    wrong.hidden = 32;
    CHECK_THROWS_WITH(generator_from_checkpoint(ck, wrong), ContainsSubstring("config implies"));
    CHECK_THROWS_AS(evaluate_generator(g, {}, 0.5), std::runtime_error);
}

TEST_CASE("a trained generator beats the degraded input", "[trainer][slow]") {
    // Full-size toy data; the cosine schedule anneals away the batch noise.
    TrainConfig c = TrainConfig::variant("mor_full");
    c.iterations = 2400;
    c.lr_generator = 2e-3;
    c.lr_schedule = LrSchedule::kCosine;
    Trainer tr(c);
    tr.run();
    const EvalReport r = tr.evaluate(tr.heldout_set());
    INFO("psnr " << r.psnr << " vs baseline " << r.baseline_psnr);
    CHECK(r.samples == 200);
    CHECK(r.psnr > r.baseline_psnr);
    CHECK(r.ssim > 0.0);
    CHECK(r.ssim <= 1.0);
}
