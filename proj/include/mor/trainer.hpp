// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Alternating two-phase training on the toy restoration task:
//
//   student phase   fit the online score network to re-noised generator outputs
//                   with the diffusion loss;
//   generator phase reconstruction + score distillation + adversarial +
//                   load-balancing gradients into encoder and MoR layers, then a
//                   hinge step on the discriminator.
//
// Everything is single-threaded and driven by explicitly seeded streams, so a
// run is a pure function of its config.

#pragma once

#include "mor/checkpoint.hpp"
#include "mor/dataset.hpp"
#include "mor/kv_config.hpp"
#include "mor/losses.hpp"
#include "mor/metrics.hpp"
#include "mor/networks.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>

namespace mor {

enum class BalanceMode { kNone, kStandard, kDegradationAware };

inline BalanceMode parse_balance_mode(const std::string &s) {
    if (s == "none")
        return BalanceMode::kNone;
    if (s == "standard")
        return BalanceMode::kStandard;
    if (s == "degradation_aware")
        return BalanceMode::kDegradationAware;
    throw std::runtime_error("balance_mode must be none, standard or degradation_aware, got '" + s + "'");
}

inline std::string to_string(BalanceMode m) {
    switch (m) {
    case BalanceMode::kNone:
        return "none";
    case BalanceMode::kStandard:
        return "standard";
    case BalanceMode::kDegradationAware:
        return "degradation_aware";
    }
    return "?";
}

enum class LrSchedule { kConstant, kCosine };

inline LrSchedule parse_lr_schedule(const std::string &s) {
    if (s == "constant")
        return LrSchedule::kConstant;
    if (s == "cosine")
        return LrSchedule::kCosine;
    throw std::runtime_error("lr_schedule must be constant or cosine, got '" + s + "'");
}

inline std::string to_string(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "constant"; }

struct TrainConfig {
    std::uint64_t seed = 0;
    // Full-scale fine-tuning used b=16, 25000 iterations, lr 5e-5; the toy
    // problem converges with far fewer, larger steps.
    std::size_t iterations = 1200;
    std::size_t batch_size = 16;
    double lr_generator = 1e-3;
    double lr_router = 5e-2;
    double lr_student = 1e-3;
    double lr_discriminator = 1e-3;
    double lr_teacher = 2e-3;
    LrSchedule lr_schedule = LrSchedule::kConstant; // cosine: every online rate decays to 0 over `iterations`
    std::size_t teacher_max_steps = 3000;
    std::size_t teacher_eval_every = 100;
    std::size_t teacher_patience = 3;
    std::size_t steps = 100; // diffusion steps T
    std::size_t image_size = 24;
    std::size_t latent_side = 12;
    std::size_t hidden = 64;
    std::size_t disc_hidden = 32;
    MorConfig mor{};
    BalanceMode balance = BalanceMode::kDegradationAware;
    // Far below the library's alpha: the router only sees reconstruction
    // gradients through gates of order 1/N, and at alpha = 0.01 the balance
    // term alone steers it (routing entropy stays pinned at ln N).
    LossWeights weights{1.0, 0.1, 1e-5, 0.5};
    std::size_t student_steps = 1;
    std::size_t generator_steps = 1;
    std::size_t train_size = 256;   // textures per regime
    std::size_t heldout_size = 100; // textures per regime
    std::string train_dataset;      // empty: synthesize
    std::string heldout_dataset;    // empty: synthesize
    std::string log_path;           // empty: no CSV log

    static const std::set<std::string> &keys() {
        static const std::set<std::string> k = {
            "seed", "iterations", "batch_size", "lr_generator", "lr_router", "lr_student", "lr_discriminator",
            "lr_teacher", "lr_schedule", "teacher_max_steps", "teacher_eval_every", "teacher_patience", "T", "image_size",
            "latent_side", "hidden", "disc_hidden", "mor_m", "mor_n", "mor_z", "mor_k", "balance_mode",
            "lambda_vsd", "lambda_gan", "alpha_balance", "lambda_grad", "student_steps", "generator_steps",
            "train_size", "heldout_size", "train_dataset", "heldout_dataset", "log_path"};
        return k;
    }

    /// Named ablation variants; all share the same total rank budget of 36.
    static TrainConfig variant(const std::string &name) {
        TrainConfig c;
        if (name == "mor_full") {
            c.mor = {0, 0, 8, 28, 4, 8, 7};
            c.balance = BalanceMode::kDegradationAware;
        } else if (name == "mor_v2") {
            c.mor = {0, 0, 8, 28, 4, 8, 7};
            c.balance = BalanceMode::kStandard;
        } else if (name == "mor_v1") {
            c.mor = {0, 0, 8, 28, 0, 8, 7};
            c.balance = BalanceMode::kStandard;
        } else if (name == "lora") {
            c.mor = {0, 0, 36, 0, 0, 0, 7};
            c.balance = BalanceMode::kNone;
        } else {
            throw std::invalid_argument("unknown variant '" + name + "' (mor_full, mor_v2, mor_v1, lora)");
        }
        return c;
    }

    void validate() const {
        const auto positive = [](std::size_t v, const char *what) {
            if (v == 0)
                throw std::runtime_error(std::string("config: ") + what + " must be positive");
        };
        positive(batch_size, "batch_size");
        positive(steps, "T");
        positive(hidden, "hidden");
        positive(disc_hidden, "disc_hidden");
        positive(generator_steps, "generator_steps");
        positive(teacher_eval_every, "teacher_eval_every");
        if (latent_side == 0 || latent_side > image_size)
            throw std::runtime_error("config: latent_side must lie in 1..image_size");
        if (image_size < kMinEmbedSide)
            throw std::runtime_error("config: image_size must be at least 16 for the degradation estimator");
        for (double lr : {lr_generator, lr_router, lr_student, lr_discriminator, lr_teacher})
            if (!(lr > 0.0))
                throw std::runtime_error("config: learning rates must be positive");
        weights.validate();
        MorConfig probe = mor;
        probe.d_in = probe.d_out = 1;
        probe.validate();
        if (train_dataset.empty() && train_size * 2 < 100)
            throw std::runtime_error("config: teacher pretraining needs at least 100 clean samples");
    }

    static TrainConfig from_key_values(const KeyValues &kv) {
        kv.require_known(keys(), "train config");
        TrainConfig c;
        const auto sz = [&](const char *k, std::size_t &dst) {
            if (kv.has(k)) {
                const auto v = kv.get_int(k);
                if (v < 0)
                    throw std::runtime_error(std::string("key '") + k + "' must be non-negative");
                dst = static_cast<std::size_t>(v);
            }
        };
        const auto dbl = [&](const char *k, double &dst) {
            if (kv.has(k))
                dst = kv.get_double(k);
        };
        const auto str = [&](const char *k, std::string &dst) {
            if (kv.has(k))
                dst = kv.get(k);
        };
        if (kv.has("seed"))
            c.seed = kv.get_u64("seed");
        sz("iterations", c.iterations);
        sz("batch_size", c.batch_size);
        dbl("lr_generator", c.lr_generator);
        dbl("lr_router", c.lr_router);
        dbl("lr_student", c.lr_student);
        dbl("lr_discriminator", c.lr_discriminator);
        dbl("lr_teacher", c.lr_teacher);
        if (kv.has("lr_schedule"))
            c.lr_schedule = parse_lr_schedule(kv.get("lr_schedule"));
        sz("teacher_max_steps", c.teacher_max_steps);
        sz("teacher_eval_every", c.teacher_eval_every);
        sz("teacher_patience", c.teacher_patience);
        sz("T", c.steps);
        sz("image_size", c.image_size);
        sz("latent_side", c.latent_side);
        sz("hidden", c.hidden);
        sz("disc_hidden", c.disc_hidden);
        sz("mor_m", c.mor.m);
        sz("mor_n", c.mor.n);
        sz("mor_z", c.mor.z);
        sz("mor_k", c.mor.k);
        if (kv.has("balance_mode"))
            c.balance = parse_balance_mode(kv.get("balance_mode"));
        dbl("lambda_vsd", c.weights.lambda_vsd);
        dbl("lambda_gan", c.weights.lambda_gan);
        dbl("alpha_balance", c.weights.alpha_balance);
        dbl("lambda_grad", c.weights.lambda_grad);
        sz("student_steps", c.student_steps);
        sz("generator_steps", c.generator_steps);
        sz("train_size", c.train_size);
        sz("heldout_size", c.heldout_size);
        str("train_dataset", c.train_dataset);
        str("heldout_dataset", c.heldout_dataset);
        str("log_path", c.log_path);
        c.validate();
        return c;
    }

    static TrainConfig load(const std::filesystem::path &p) { return from_key_values(KeyValues::load(p)); }

    KeyValues to_key_values() const {
        KeyValues kv;
        const auto n = [](std::size_t v) { return std::to_string(v); };
        kv.set("seed", std::to_string(seed));
        kv.set("iterations", n(iterations));
        kv.set("batch_size", n(batch_size));
        kv.set("lr_generator", lr_generator);
        kv.set("lr_router", lr_router);
        kv.set("lr_student", lr_student);
        kv.set("lr_discriminator", lr_discriminator);
        kv.set("lr_teacher", lr_teacher);
        kv.set("lr_schedule", mor::to_string(lr_schedule));
        kv.set("teacher_max_steps", n(teacher_max_steps));
        kv.set("teacher_eval_every", n(teacher_eval_every));
        kv.set("teacher_patience", n(teacher_patience));
        kv.set("T", n(steps));
        kv.set("image_size", n(image_size));
        kv.set("latent_side", n(latent_side));
        kv.set("hidden", n(hidden));
        kv.set("disc_hidden", n(disc_hidden));
        kv.set("mor_m", n(mor.m));
        kv.set("mor_n", n(mor.n));
        kv.set("mor_z", n(mor.z));
        kv.set("mor_k", n(mor.k));
        kv.set("balance_mode", mor::to_string(balance));
        kv.set("lambda_vsd", weights.lambda_vsd);
        kv.set("lambda_gan", weights.lambda_gan);
        kv.set("alpha_balance", weights.alpha_balance);
        kv.set("lambda_grad", weights.lambda_grad);
        kv.set("student_steps", n(student_steps));
        kv.set("generator_steps", n(generator_steps));
        kv.set("train_size", n(train_size));
        kv.set("heldout_size", n(heldout_size));
        kv.set("train_dataset", train_dataset);
        kv.set("heldout_dataset", heldout_dataset);
        kv.set("log_path", log_path);
        return kv;
    }
};

// ---------------------------------------------------------------------------
// Teacher pretraining

struct TeacherReport {
    double initial_heldout = 0.0;
    double final_heldout = 0.0;
    std::size_t steps = 0;
};

/// Held-out diffusion loss with fixed (t, ε) draws.
inline double heldout_diffusion_loss(const ScoreNet &net, const std::vector<Vector> &latents,
                                     const std::vector<std::size_t> &ts, const std::vector<Vector> &eps,
                                     const NoiseSchedule &schedule) {
    double acc = 0.0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const Vector zt = add_noise(latents[i], eps[i], schedule.abar(ts[i]));
        acc += diffusion_loss(eps[i], net(zt, ts[i]));
    }
    return acc / static_cast<double>(latents.size());
}

inline Vector normal_vector(std::size_t n, SeededRng &rng) {
    Vector v(n);
    for (double &x : v)
        x = rng.normal();
    return v;
}

/// Diffusion-loss training on clean latents (90/10 split) until the held-out
/// loss stops improving by 0.1% for `patience` evaluations; keeps the best
/// snapshot.
inline ScoreNet pretrain_teacher(const std::vector<Vector> &clean_latents, const TrainConfig &cfg,
                                 const NoiseSchedule &schedule, SeededRng &rng, TeacherReport *report = nullptr) {
    if (clean_latents.size() < 100)
        throw std::runtime_error("pretrain_teacher: need at least 100 clean samples, got " +
                                 std::to_string(clean_latents.size()));
    const std::size_t d = clean_latents.front().size();
    const std::size_t n_hold = std::max<std::size_t>(10, clean_latents.size() / 10);
    const std::vector<Vector> train(clean_latents.begin(), clean_latents.end() - static_cast<std::ptrdiff_t>(n_hold));
    const std::vector<Vector> hold(clean_latents.end() - static_cast<std::ptrdiff_t>(n_hold), clean_latents.end());
    std::vector<std::size_t> hold_t;
    std::vector<Vector> hold_eps;
    for (std::size_t i = 0; i < hold.size(); ++i) {
        hold_t.push_back(1 + static_cast<std::size_t>(rng.below(schedule.steps())));
        hold_eps.push_back(normal_vector(d, rng));
    }

    ScoreNet net = ScoreNet::init(d, cfg.hidden, schedule.steps(), rng);
    std::vector<AdamState> opt;
    for (auto &[_, p] : net.params())
        opt.push_back(AdamState::like(*p, cfg.lr_teacher));

    double best = heldout_diffusion_loss(net, hold, hold_t, hold_eps, schedule);
    if (report)
        report->initial_heldout = best;
    ScoreNet best_net = net;
    std::size_t stale = 0, step = 0;
    while (step < cfg.teacher_max_steps && stale < cfg.teacher_patience) {
        for (std::size_t inner = 0; inner < cfg.teacher_eval_every && step < cfg.teacher_max_steps; ++inner, ++step) {
            ScoreNet grad = ScoreNet::zeros_like(net);
            for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                const Vector &z0 = train[rng.below(train.size())];
                const std::size_t t = 1 + static_cast<std::size_t>(rng.below(schedule.steps()));
                const Vector eps = normal_vector(d, rng);
                ScoreNet::Cache cache;
                const Vector pred = net.forward(add_noise(z0, eps, schedule.abar(t)), t, &cache);
                Vector up = diffusion_loss_grad(eps, pred);
                for (double &v : up)
                    v /= static_cast<double>(cfg.batch_size);
                net.backward(cache, up, grad);
            }
            auto params = net.params();
            auto grads = grad.params();
            for (std::size_t i = 0; i < params.size(); ++i)
                adam_step(*params[i].second, *grads[i].second, opt[i]);
        }
        const double loss = heldout_diffusion_loss(net, hold, hold_t, hold_eps, schedule);
        if (loss < best * (1.0 - 1e-3)) {
            best = loss;
            best_net = net;
            stale = 0;
        } else {
            ++stale;
        }
    }
    if (report) {
        report->final_heldout = best;
        report->steps = step;
    }
    return best_net;
}

// ---------------------------------------------------------------------------
// Training state

struct IterationLog {
    std::size_t iter = 0;
    LossParts parts;
    double routing_entropy = 0.0;
    double mean_zero_active = 0.0;
    double student_loss = 0.0;
    double disc_loss = 0.0;
};

inline constexpr const char *kLogHeader = "iter,loss_rec,loss_vsd_surrogate,loss_gan,loss_balance,routing_entropy,mean_zero_active";

inline std::string format_log_row(const IterationLog &l) {
    std::ostringstream os;
    os << std::setprecision(9) << l.iter << ',' << l.parts.rec << ',' << l.parts.vsd << ',' << l.parts.gan << ','
       << l.parts.balance << ',' << l.routing_entropy << ',' << l.mean_zero_active;
    return os.str();
}

namespace detail {

inline void take_tensor(const Checkpoint &ck, const std::string &name, Matrix &dst, std::size_t rows, std::size_t cols) {
    const Matrix &m = ck.tensor(name);
    if (m.rows() != rows || m.cols() != cols)
        throw std::runtime_error("checkpoint: tensor '" + name + "' is " + m.shape_string() + ", config implies " +
                                 std::to_string(rows) + "x" + std::to_string(cols));
    dst = m;
}

} // namespace detail

struct EvalReport {
    std::size_t samples = 0;
    double rec_loss = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double baseline_psnr = 0.0; // degraded input vs HR
    double scalar_degradation = 0.0;
    Vector mean_scores;
    double routing_entropy = 0.0;
    std::map<std::string, std::array<double, 2>> zero_active; // regime -> per-layer mean zero count
};

/// Held-out metrics; PSNR/SSIM on outputs clipped to [0, 1], loss on raw outputs.
inline EvalReport evaluate_generator(const ToyGenerator &gen, const std::vector<Sample> &samples, double lambda_grad) {
    if (samples.empty())
        throw std::runtime_error("evaluate: empty dataset");
    EvalReport r;
    r.samples = samples.size();
    r.mean_scores.assign(samples.front().scores.size(), 0.0);
    std::map<std::string, std::size_t> per_regime;
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (const auto &s : samples) {
        ToyGenerator::Cache c;
        const ImageF out = gen.forward(s.lr, s.scores.values(), &c);
        ImageF clipped = out;
        clipped.clamp01();
        r.rec_loss += inv * reconstruction_loss(out, s.hr, lambda_grad);
        r.psnr += inv * psnr(clipped, s.hr);
        r.ssim += inv * ssim(clipped, s.hr);
        r.baseline_psnr += inv * psnr(s.lr, s.hr);
        r.scalar_degradation += inv * s.scalar.value;
        for (std::size_t i = 0; i < r.mean_scores.size(); ++i)
            r.mean_scores[i] += inv * s.scores[i];
        r.routing_entropy += inv * 0.5 * (routing_entropy(c.route1) + routing_entropy(c.route2));
        auto &z = r.zero_active[s.regime];
        z[0] += static_cast<double>(c.route1.zero_selected(gen.mor1.config.n));
        z[1] += static_cast<double>(c.route2.zero_selected(gen.mor2.config.n));
        ++per_regime[s.regime];
    }
    for (auto &[reg, z] : r.zero_active)
        for (double &v : z)
            v /= static_cast<double>(per_regime[reg]);
    return r;
}

/// Rebuilds the trained generator alone, without datasets or optimizers.
inline ToyGenerator generator_from_checkpoint(const Checkpoint &ck, const TrainConfig &cfg) {
    const std::size_t side = cfg.image_size;
    const std::size_t d = cfg.latent_side * cfg.latent_side, in1 = d + kTimeFeatures;
    ToyGenerator g;
    g.height = g.width = side;
    g.steps = cfg.steps;
    g.abar_t = NoiseSchedule(cfg.steps).abar(cfg.steps);
    detail::take_tensor(ck, "generator.encoder", g.encoder, d, side * side);
    detail::take_tensor(ck, "generator.decoder", g.decoder, side * side, d);
    const auto take_layer = [&](const std::string &p, MorLayer &l, std::size_t din, std::size_t dout) {
        l.config = cfg.mor;
        l.config.d_in = din;
        l.config.d_out = dout;
        detail::take_tensor(ck, p + "w0", l.w0, dout, din);
        detail::take_tensor(ck, p + "shared_a", l.shared_a, l.config.m, din);
        detail::take_tensor(ck, p + "shared_b", l.shared_b, dout, l.config.m);
        detail::take_tensor(ck, p + "routed_a", l.routed_a, l.config.n, din);
        detail::take_tensor(ck, p + "routed_b", l.routed_b, dout, l.config.n);
        detail::take_tensor(ck, p + "w_g", l.w_g, l.config.score_dim, l.config.routed());
    };
    take_layer("generator.mor1.", g.mor1, in1, cfg.hidden);
    take_layer("generator.mor2.", g.mor2, cfg.hidden, d);
    return g;
}

inline TrainConfig config_from_checkpoint(const Checkpoint &ck) {
    return TrainConfig::from_key_values(KeyValues::parse(ck.config, "checkpoint config"));
}

struct Batch {
    std::vector<std::size_t> indices;
};


class Trainer {
public:
    Trainer(TrainConfig cfg, const std::vector<Sample> *train = nullptr, const std::vector<Sample> *heldout = nullptr)
        : cfg_(std::move(cfg)), schedule_(cfg_.steps), rng_(split_seed(cfg_.seed, 16)) {
        cfg_.validate();
        load_data(train, heldout);
        const std::size_t side = cfg_.image_size;
        const Matrix decoder = dct_basis(side, side, cfg_.latent_side, cfg_.latent_side);

        std::vector<Vector> clean;
        clean.reserve(train_.size());
        for (const auto &s : train_)
            clean.push_back(matvec_transposed(decoder, centered_pixels(s.hr)));
        SeededRng teacher_rng(split_seed(cfg_.seed, 13));
        teacher_ = pretrain_teacher(clean, cfg_, schedule_, teacher_rng, &teacher_report_);
        student_ = teacher_;

        SeededRng gen_rng(split_seed(cfg_.seed, 14));
        gen_ = ToyGenerator::init(side, side, decoder, teacher_, cfg_.mor, schedule_.abar(cfg_.steps), gen_rng);
        SeededRng disc_rng(split_seed(cfg_.seed, 15));
        disc_ = Discriminator::init(decoder.cols(), cfg_.disc_hidden, cfg_.steps, disc_rng);
        init_optimizers();
    }

    /// Restores a saved run; samples come from the config (or are supplied).
    Trainer(const Checkpoint &ck, const std::vector<Sample> *train = nullptr, const std::vector<Sample> *heldout = nullptr)
        : cfg_(config_from_checkpoint(ck)), schedule_(cfg_.steps),
          rng_(0) {
        load_data(train, heldout);
        restore(ck);
    }

    const TrainConfig &config() const noexcept { return cfg_; }
    TrainConfig &mutable_config() noexcept { return cfg_; }
    const NoiseSchedule &schedule() const noexcept { return schedule_; }
    const ToyGenerator &generator() const noexcept { return gen_; }
    ToyGenerator &generator() noexcept { return gen_; }
    const ScoreNet &teacher() const noexcept { return teacher_; }
    const ScoreNet &student() const noexcept { return student_; }
    const Discriminator &discriminator() const noexcept { return disc_; }
    const std::vector<Sample> &train_set() const noexcept { return train_; }
    const std::vector<Sample> &heldout_set() const noexcept { return heldout_; }
    std::size_t iteration() const noexcept { return iteration_; }
    const TeacherReport &teacher_report() const noexcept { return teacher_report_; }

    /// Regime-homogeneous batch: pick a regime, then b samples of it.
    Batch sample_batch() {
        const auto &regs = regime_index_;
        const auto &members = regs[rng_.below(regs.size())];
        Batch b;
        for (std::size_t i = 0; i < cfg_.batch_size; ++i)
            b.indices.push_back(members[rng_.below(members.size())]);
        return b;
    }

    /// One optimizer step of the online score network; returns its loss.
    double phase_student(const Batch &batch) {
        const std::size_t d = gen_.latent();
        ScoreNet grad = ScoreNet::zeros_like(student_);
        double loss = 0.0;
        const double inv_b = 1.0 / static_cast<double>(batch.indices.size());
        for (std::size_t idx : batch.indices) {
            const Sample &s = train_[idx];
            ToyGenerator::Cache gc;
            gen_.forward(s.lr, s.scores.values(), &gc);
            const std::size_t t = 1 + static_cast<std::size_t>(rng_.below(cfg_.steps));
            const Vector eps = normal_vector(d, rng_);
            ScoreNet::Cache cache;
            const Vector pred = student_.forward(add_noise(gc.z0_hat, eps, schedule_.abar(t)), t, &cache);
            loss += inv_b * diffusion_loss(eps, pred);
            Vector up = diffusion_loss_grad(eps, pred);
            for (double &v : up)
                v *= inv_b;
            student_.backward(cache, up, grad);
        }
        step(student_.params(), grad.params(), student_opt_);
        return loss;
    }

    /// Generator update (reconstruction, distillation, adversarial and balance
    /// gradients) followed by one discriminator step.
    IterationLog phase_generator(const Batch &batch) {
        const std::size_t b = batch.indices.size();
        const double inv_b = 1.0 / static_cast<double>(b);
        const std::size_t d = gen_.latent();
        // The VSD surrogate and the adversarial term are both reduced per output
        // pixel, like the reconstruction MSE, so the lambdas are relative weights.
        const double inv_pixels = 1.0 / static_cast<double>(gen_.decoder.rows());
        IterationLog log;

        std::vector<ToyGenerator::Cache> caches(b);
        for (std::size_t i = 0; i < b; ++i) {
            const Sample &s = train_[batch.indices[i]];
            gen_.forward(s.lr, s.scores.values(), &caches[i]);
        }

        // Load balancing per layer over this batch's routing decisions.
        std::array<Vector, 2> dprobs;
        double batch_scalar = 0.0;
        for (std::size_t idx : batch.indices)
            batch_scalar += inv_b * train_[idx].scalar.value;
        for (int layer = 0; layer < 2; ++layer) {
            const MorLayer &l = layer == 0 ? gen_.mor1 : gen_.mor2;
            if (l.config.routed() == 0 || cfg_.balance == BalanceMode::kNone || cfg_.weights.alpha_balance == 0.0)
                continue;
            std::vector<RoutingDecision> ds;
            for (const auto &c : caches)
                ds.push_back(layer == 0 ? c.route1 : c.route2);
            const BalanceStats st = balance_stats(ds);
            const double s = cfg_.balance == BalanceMode::kDegradationAware ? batch_scalar : 1.0;
            const Vector alpha_i = balance_weights(st.experts(), cfg_.weights.alpha_balance, l.config.n, s);
            log.parts.balance += weighted_balance_loss(st, alpha_i);
            dprobs[layer] = balance_prob_grad(st, alpha_i);
        }

        ToyGenerator::Grads grads = ToyGenerator::Grads::zeros_like(gen_);
        Discriminator disc_scratch = Discriminator::zeros_like(disc_);
        const ScoreFn teacher_fn = [&](std::span<const double> z, std::size_t t) { return teacher_(z, t); };
        const ScoreFn student_fn = [&](std::span<const double> z, std::size_t t) { return student_(z, t); };
        std::size_t zero_total = 0;
        for (std::size_t i = 0; i < b; ++i) {
            const Sample &s = train_[batch.indices[i]];
            const auto &c = caches[i];
            log.parts.rec += inv_b * reconstruction_loss(c.output, s.hr, cfg_.weights.lambda_grad);
            const ImageF gimg = reconstruction_loss_grad(c.output, s.hr, cfg_.weights.lambda_grad);
            Vector dz0 = matvec_transposed(gen_.decoder, gimg.data());
            for (double &v : dz0)
                v *= inv_b;

            if (cfg_.weights.lambda_vsd > 0.0) {
                const std::size_t t = 1 + static_cast<std::size_t>(rng_.below(cfg_.steps));
                const Vector eps = normal_vector(d, rng_);
                const Vector g = vsd_gradient(c.z0_hat, t, eps, teacher_fn, student_fn, unit_weight, schedule_);
                const double scale = cfg_.weights.lambda_vsd * inv_b * inv_pixels;
                log.parts.vsd += inv_b * dot(g, c.z0_hat) * inv_pixels;
                for (std::size_t j = 0; j < d; ++j)
                    dz0[j] += scale * g[j];
            }
            if (cfg_.weights.lambda_gan > 0.0) {
                std::vector<Vector> eps;
                for (std::size_t h = 0; h < disc_.heads(); ++h)
                    eps.push_back(normal_vector(d, rng_));
                Discriminator::Cache dc;
                const Vector out = disc_.forward(c.z0_hat, eps, schedule_, &dc);
                log.parts.gan += inv_b * inv_pixels * gan_generator_loss(out);
                const Vector dout(out.size(),
                                  -cfg_.weights.lambda_gan * inv_b * inv_pixels / static_cast<double>(out.size()));
                const Vector dzg = disc_.backward(dc, dout, schedule_, disc_scratch);
                for (std::size_t j = 0; j < d; ++j)
                    dz0[j] += dzg[j];
            }
            gen_.backward(c, dz0, grads, dprobs[0], dprobs[1]);
            log.routing_entropy += inv_b * 0.5 * (routing_entropy(c.route1) + routing_entropy(c.route2));
            zero_total += c.route1.zero_selected(gen_.mor1.config.n) + c.route2.zero_selected(gen_.mor2.config.n);
        }
        log.mean_zero_active = static_cast<double>(zero_total) / static_cast<double>(2 * b);
        step(gen_.trainable_params(), grads.params(), gen_opt_);

        // Discriminator: clean latents are real, generator outputs fake.
        if (cfg_.weights.lambda_gan > 0.0) {
            Discriminator dgrad = Discriminator::zeros_like(disc_);
            double dloss = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                const Sample &s = train_[batch.indices[i]];
                const Vector real = gen_.clean_latent(s.hr);
                std::vector<Vector> er, ef;
                for (std::size_t h = 0; h < disc_.heads(); ++h) {
                    er.push_back(normal_vector(d, rng_));
                    ef.push_back(normal_vector(d, rng_));
                }
                Discriminator::Cache rc, fc;
                const Vector out_r = disc_.forward(real, er, schedule_, &rc);
                const Vector out_f = disc_.forward(caches[i].z0_hat, ef, schedule_, &fc);
                dloss += inv_b * discriminator_loss(out_r, out_f);
                auto [gr, gf] = discriminator_loss_grad(out_r, out_f);
                for (double &v : gr)
                    v *= inv_b;
                for (double &v : gf)
                    v *= inv_b;
                disc_.backward(rc, gr, schedule_, dgrad);
                disc_.backward(fc, gf, schedule_, dgrad);
            }
            log.disc_loss = dloss;
            step(disc_.params(), dgrad.params(), disc_opt_);
        }
        return log;
    }

    /// Runs until `config().iterations` (or `stop`, if earlier); writes one CSV
    /// row per iteration to `log`.
    void run(std::ostream *log = nullptr, std::size_t stop = std::numeric_limits<std::size_t>::max()) {
        if (log && iteration_ == 0)
            *log << kLogHeader << '\n';
        while (iteration_ < std::min(cfg_.iterations, stop)) {
            apply_lr_schedule();
            const Batch batch = sample_batch();
            double sl = 0.0;
            for (std::size_t i = 0; i < cfg_.student_steps; ++i)
                sl = phase_student(batch);
            IterationLog l;
            for (std::size_t i = 0; i < cfg_.generator_steps; ++i)
                l = phase_generator(batch);
            l.student_loss = sl;
            l.iter = iteration_;
            history_.push_back(l);
            if (log)
                *log << format_log_row(l) << '\n';
            ++iteration_;
        }
    }

    const std::vector<IterationLog> &history() const noexcept { return history_; }

    ImageF restore_image(const Sample &s, ToyGenerator::Cache *cache = nullptr) const {
        return gen_.forward(s.lr, s.scores.values(), cache);
    }

    EvalReport evaluate(const std::vector<Sample> &samples) const {
        return evaluate_generator(gen_, samples, cfg_.weights.lambda_grad);
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        for (const auto &[name, m] : gen_.all_params())
            ck.add_tensor("generator." + name, *m);
        for (const auto &[name, m] : teacher_.params())
            ck.add_tensor("teacher." + name, *m);
        for (const auto &[name, m] : student_.params())
            ck.add_tensor("student." + name, *m);
        for (const auto &[name, m] : disc_.params())
            ck.add_tensor("discriminator." + name, *m);
        ck.add_tensor("train.iteration", Matrix(1, 1, static_cast<double>(iteration_)));
        const auto add_opt = [&](const std::string &prefix, const auto &params, const std::vector<AdamState> &opt) {
            for (std::size_t i = 0; i < params.size(); ++i)
                ck.add_optimizer(prefix + params[i].first, opt[i]);
        };
        add_opt("generator.", const_cast<ToyGenerator &>(gen_).trainable_params(), gen_opt_);
        add_opt("student.", student_.params(), student_opt_);
        add_opt("discriminator.", disc_.params(), disc_opt_);
        ck.rng_state = rng_.state();
        ck.config = cfg_.to_key_values().to_string();
        return ck;
    }

private:
    void load_data(const std::vector<Sample> *train, const std::vector<Sample> *heldout) {
        const std::vector<DegradationProfile> profiles = {DegradationProfile::deg1(), DegradationProfile::deg2()};
        if (train)
            train_ = *train;
        else if (!cfg_.train_dataset.empty())
            train_ = load_dataset(cfg_.train_dataset);
        else
            train_ = make_toy_dataset(cfg_.train_size, cfg_.image_size, split_seed(cfg_.seed, 11), profiles);
        if (heldout)
            heldout_ = *heldout;
        else if (!cfg_.heldout_dataset.empty())
            heldout_ = load_dataset(cfg_.heldout_dataset);
        else
            heldout_ = make_toy_dataset(cfg_.heldout_size, cfg_.image_size, split_seed(cfg_.seed, 12), profiles);
        if (train_.size() < 100)
            throw std::runtime_error("training set needs at least 100 samples, got " + std::to_string(train_.size()));
        std::map<std::string, std::vector<std::size_t>> by_regime;
        for (std::size_t i = 0; i < train_.size(); ++i) {
            if (train_[i].hr.height() != cfg_.image_size || train_[i].hr.width() != cfg_.image_size ||
                !train_[i].hr.same_shape(train_[i].lr) || train_[i].hr.channels() != 1)
                throw std::runtime_error("training sample " + train_[i].regime + "/" + train_[i].name + " is not a " +
                                         std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) +
                                         " grayscale HR/LR pair");
            by_regime[train_[i].regime].push_back(i);
        }
        regime_index_.clear();
        for (auto &[_, v] : by_regime)
            regime_index_.push_back(std::move(v));
    }

    /// Multiplier on every online learning rate at the current iteration.
    double lr_factor() const {
        if (cfg_.lr_schedule == LrSchedule::kConstant || cfg_.iterations == 0)
            return 1.0;
        const double frac = static_cast<double>(iteration_) / static_cast<double>(cfg_.iterations);
        return 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }

    void apply_lr_schedule() {
        const double f = lr_factor();
        const auto params = gen_.trainable_params();
        for (std::size_t i = 0; i < params.size(); ++i)
            gen_opt_[i].lr = f * (params[i].first.ends_with(".w_g") ? cfg_.lr_router : cfg_.lr_generator);
        for (auto &o : student_opt_)
            o.lr = f * cfg_.lr_student;
        for (auto &o : disc_opt_)
            o.lr = f * cfg_.lr_discriminator;
    }

    void init_optimizers() {
        gen_opt_.clear();
        for (const auto &[name, p] : gen_.trainable_params()) {
            const bool router = name.ends_with(".w_g");
            gen_opt_.push_back(AdamState::like(*p, router ? cfg_.lr_router : cfg_.lr_generator));
        }
        student_opt_.clear();
        for (const auto &[_, p] : student_.params())
            student_opt_.push_back(AdamState::like(*p, cfg_.lr_student));
        disc_opt_.clear();
        for (const auto &[_, p] : disc_.params())
            disc_opt_.push_back(AdamState::like(*p, cfg_.lr_discriminator));
    }

    static void step(const NamedParams &params, const NamedParams &grads, std::vector<AdamState> &opt) {
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params[i].second->empty())
                adam_step(*params[i].second, *grads[i].second, opt[i]);
    }

    void restore(const Checkpoint &ck) {
        const std::size_t d = cfg_.latent_side * cfg_.latent_side, in1 = d + kTimeFeatures;
        for (ScoreNet *net : {&teacher_, &student_}) {
            const std::string p = net == &teacher_ ? "teacher." : "student.";
            net->steps = cfg_.steps;
            detail::take_tensor(ck, p + "w1", net->w1, cfg_.hidden, in1);
            detail::take_tensor(ck, p + "w2", net->w2, d, cfg_.hidden);
        }
        gen_ = generator_from_checkpoint(ck, cfg_);
        disc_ = Discriminator::init(d, cfg_.disc_hidden, cfg_.steps, rng_); // shapes and levels only
        for (auto &[name, m] : disc_.params())
            detail::take_tensor(ck, "discriminator." + name, *m, m->rows(), m->cols());
        iteration_ = static_cast<std::size_t>(ck.tensor("train.iteration")(0, 0));

        init_optimizers();
        const auto load_opt = [&](const std::string &prefix, const NamedParams &params, std::vector<AdamState> &opt) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                const AdamState &s = ck.optimizer(prefix + params[i].first);
                if (!s.m.same_shape(*params[i].second))
                    throw std::runtime_error("checkpoint: optimizer state '" + prefix + params[i].first +
                                             "' does not match its parameter");
                opt[i] = s;
            }
        };
        load_opt("generator.", gen_.trainable_params(), gen_opt_);
        load_opt("student.", student_.params(), student_opt_);
        load_opt("discriminator.", disc_.params(), disc_opt_);
        rng_.set_state(ck.rng_state);
    }

    TrainConfig cfg_;
    NoiseSchedule schedule_;
    SeededRng rng_;
    std::vector<Sample> train_, heldout_;
    std::vector<std::vector<std::size_t>> regime_index_;
    ScoreNet teacher_, student_;
    ToyGenerator gen_;
    Discriminator disc_;
    std::vector<AdamState> gen_opt_, student_opt_, disc_opt_;
    std::size_t iteration_ = 0;
    TeacherReport teacher_report_;
    std::vector<IterationLog> history_;
};

} // namespace mor
