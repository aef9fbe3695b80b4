// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `mor` command line: degrade, estimate, dataset, train, eval, analyze.
// Exit codes: 0 success, 1 usage error (help printed), 2 runtime error.

#pragma once

#include "mor/analysis.hpp"
#include "mor/checkpoint.hpp"
#include "mor/dataset.hpp"
#include "mor/degradation.hpp"
#include "mor/estimator.hpp"
#include "mor/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace mor {

inline constexpr const char *kVersion = "1.0.0";

namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct Streams {
    std::ostream &out;
    std::ostream &err;
};

inline void write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f)
        throw std::runtime_error("error writing " + path.string());
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("input directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto &e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && (e.path().extension() == ".pgm" || e.path().extension() == ".ppm"))
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw std::runtime_error("no .pgm/.ppm images in " + dir.string());
    return files;
}

inline DegradationProfile resolve_profile(const std::string &spec) {
    if (spec == "deg1" || spec == "deg2")
        return DegradationProfile::by_name(spec);
    if (!std::filesystem::exists(spec))
        throw std::runtime_error("profile '" + spec + "' is neither deg1, deg2 nor an existing file");
    return DegradationProfile::load(spec);
}

/// Image i (in sorted file order) is degraded with seed split_seed(seed, i).
inline void run_degrade(const std::string &input, const std::string &output, const std::string &profile_spec,
                        std::uint64_t seed, int scale, Streams io) {
    const DegradationProfile profile = resolve_profile(profile_spec);
    const auto files = list_images(input);
    std::filesystem::create_directories(output);
    for (std::size_t i = 0; i < files.size(); ++i) {
        const ImageF hr = read_image(files[i]);
        const DegradationRecord rec = sample_degradation(profile, split_seed(seed, i), scale);
        const ImageF lr = replay_degradation(hr, rec);
        const std::filesystem::path out = std::filesystem::path(output) / files[i].filename();
        write_image(out, lr);
        write_text(std::filesystem::path(output) / (files[i].stem().string() + ".record"), rec.to_string());
    }
    io.out << "degraded " << files.size() << " image(s) into " << output << '\n';
}

inline void print_scores(const DegradationScoreVector &scores, const PromptPairSet &pairs, std::ostream &out) {
    out << std::fixed << std::setprecision(6);
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << prompt_id_stem(pairs[i].name) << '=' << scores[i] << '\n';
    out << "scalar=" << aggregate_scalar(scores).value << '\n';
    out.unsetf(std::ios::floatfield);
}

inline void run_estimate(const std::string &image, bool statistical, const std::string &embeddings,
                         const std::string &id, const std::string &prompt_embeddings, Streams io) {
    if (statistical) {
        if (image.empty())
            throw CLI::ValidationError("--statistical needs --image");
        const PromptPairSet pairs = statistical_prompt_pairs();
        print_scores(estimate_statistical(read_image(image)), pairs, io.out);
        return;
    }
    if (embeddings.empty())
        throw CLI::ValidationError("pass either --statistical or --embeddings");
    std::string key = id;
    if (key.empty()) {
        if (image.empty())
            throw CLI::ValidationError("--embeddings needs --id (or --image to use its file stem)");
        key = std::filesystem::path(image).stem().string();
    }
    const EmbeddingSource images = FileEmbeddingSource{load_embedding_file(embeddings)};
    const EmbeddingSource prompts =
        prompt_embeddings.empty() ? images : EmbeddingSource{FileEmbeddingSource{load_embedding_file(prompt_embeddings)}};
    const PromptPairSet pairs = prompt_pairs_for(prompts);
    print_scores(estimate(key, pairs, images), pairs, io.out);
}

inline void run_dataset(const std::string &output, std::size_t count, std::size_t size, std::uint64_t seed,
                        Streams io) {
    const auto samples =
        make_toy_dataset(count, size, seed, {DegradationProfile::deg1(), DegradationProfile::deg2()});
    save_dataset(output, samples);
    io.out << "wrote " << samples.size() << " HR/LR pairs to " << output << '\n';
}

inline void print_eval(const EvalReport &r, std::ostream &out) {
    out << std::fixed << std::setprecision(6);
    out << "samples=" << r.samples << '\n'
        << "rec_loss=" << r.rec_loss << '\n'
        << "psnr=" << r.psnr << '\n'
        << "ssim=" << r.ssim << '\n'
        << "baseline_psnr=" << r.baseline_psnr << '\n'
        << "scalar_degradation=" << r.scalar_degradation << '\n'
        << "routing_entropy=" << r.routing_entropy << '\n';
    for (const auto &[reg, z] : r.zero_active)
        out << "zero_active." << reg << '=' << z[0] << ',' << z[1] << '\n';
    out.unsetf(std::ios::floatfield);
}

/// Without --resume the config file defines the run. With --resume the
/// checkpoint's config is authoritative; a --config then only sets the target
/// iteration count.
inline void run_train(const std::string &config, const std::string &out, const std::string &resume,
                      std::optional<std::uint64_t> seed, Streams io) {
    std::optional<Trainer> trainer;
    if (resume.empty()) {
        if (config.empty())
            throw CLI::ValidationError("train needs --config (or --resume)");
        TrainConfig cfg = TrainConfig::load(config);
        if (seed)
            cfg.seed = *seed;
        trainer.emplace(cfg);
    } else {
        trainer.emplace(load_checkpoint(resume));
        if (!config.empty())
            trainer->mutable_config().iterations = TrainConfig::load(config).iterations;
    }
    std::ofstream log;
    const std::string &log_path = trainer->config().log_path;
    if (!log_path.empty()) {
        log.open(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
        if (!log)
            throw std::runtime_error("cannot write training log " + log_path);
    }
    trainer->run(log_path.empty() ? nullptr : &log);
    save_checkpoint(out, trainer->checkpoint());
    io.out << "trained to iteration " << trainer->iteration() << ", checkpoint " << out << '\n';
    print_eval(trainer->evaluate(trainer->heldout_set()), io.out);
}

inline void run_eval(const std::string &ckpt, const std::string &dataset, const std::string &csv, Streams io) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const TrainConfig cfg = config_from_checkpoint(ck);
    const ToyGenerator gen = generator_from_checkpoint(ck, cfg);
    const auto samples = load_dataset(dataset);
    print_eval(evaluate_generator(gen, samples, cfg.weights.lambda_grad), io.out);
    if (!csv.empty()) {
        std::ostringstream os;
        write_metrics_csv(os, metric_report(gen, samples));
        write_text(csv, os.str());
    }
}

inline void run_analyze(const std::string &ckpt, const std::string &dataset, const std::string &csv_dir,
                        std::optional<std::size_t> layer, Streams io) {
    const ActivationLog log = log_activations(load_checkpoint(ckpt), load_dataset(dataset));
    if (layer)
        log.check_layer(*layer);
    std::filesystem::create_directories(csv_dir);
    const auto rows = zero_expert_counts(log);
    std::ostringstream zc;
    write_zero_counts_csv(zc, log, rows);
    write_text(std::filesystem::path(csv_dir) / "zero_counts.csv", zc.str());
    for (std::size_t l = 0; l < log.layers.size(); ++l) {
        if (layer && l != *layer)
            continue;
        std::ostringstream ef;
        write_expert_frequency_csv(ef, log, l);
        write_text(std::filesystem::path(csv_dir) / ("expert_freq_layer" + std::to_string(l) + ".csv"), ef.str());
    }
    io.out << std::fixed << std::setprecision(6);
    for (const auto &r : rows)
        io.out << "layer " << r.layer << ' ' << r.regime << ": " << r.mean_zero_active << " zero experts/sample over "
               << r.samples << " samples\n";
    io.out.unsetf(std::ios::floatfield);
}

} // namespace cli

/// Parses and dispatches; never throws.
inline int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
    using namespace cli;
    const Streams io{out, err};
    CLI::App app{"Degradation-aware mixture-of-ranks restoration toolkit", "mor"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    app.set_version_flag("--version",
                         std::string("mor ") + kVersion + " (checkpoint format " + std::to_string(kCheckpointVersion) +
                             ")");
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "Seed for every random stream of the subcommand")->type_name("U64");

    std::string input, output, profile = "deg1";
    int scale = 4;
    auto *degrade = app.add_subcommand("degrade", "Degrade a directory of HR images");
    degrade->add_option("--input", input, "Directory of .pgm/.ppm HR images")->required();
    degrade->add_option("--output", output, "Output directory for LR images and .record files")->required();
    degrade->add_option("--profile", profile, "deg1, deg2 or a key=value profile file")->capture_default_str();
    degrade->add_option("--scale", scale, "Downscaling factor")->check(CLI::Range(1, 16))->capture_default_str();
    degrade->add_option("--seed", seed, "Pipeline seed")->type_name("U64");

    std::string image, embeddings, id, prompt_embeddings;
    bool statistical = false;
    auto *est = app.add_subcommand("estimate", "Print the seven degradation scores of an image");
    est->add_option("--image", image, "Image file")->check(CLI::ExistingFile);
    auto *stat_flag = est->add_flag("--statistical", statistical, "Use the built-in statistical embedder");
    auto *emb_opt = est->add_option("--embeddings", embeddings, "Embedding table file")->check(CLI::ExistingFile);
    est->add_option("--id", id, "Image id in the embedding table (default: image file stem)");
    est->add_option("--prompt-embeddings", prompt_embeddings, "Prompt table (default: --embeddings)")
        ->check(CLI::ExistingFile);
    stat_flag->excludes(emb_opt);

    std::size_t count = 100, size = 24;
    auto *ds = app.add_subcommand("dataset", "Synthesize a paired deg1/deg2 toy dataset");
    ds->add_option("--output", output, "Dataset directory")->required();
    ds->add_option("--count", count, "Textures per regime")->check(CLI::PositiveNumber)->capture_default_str();
    ds->add_option("--size", size, "Image side in pixels")->check(CLI::Range(16, 4096))->capture_default_str();
    ds->add_option("--seed", seed, "Dataset seed")->type_name("U64");

    std::string config, ckpt_out, resume;
    auto *train = app.add_subcommand("train", "Train the restoration generator");
    train->add_option("--config", config, "key=value training config");
    train->add_option("--out", ckpt_out, "Checkpoint to write")->required();
    train->add_option("--resume", resume, "Checkpoint to continue from");
    train->add_option("--seed", seed, "Overrides the config seed")->type_name("U64");

    std::string ckpt, dataset, csv;
    std::optional<std::size_t> layer;
    auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
    eval->add_option("--dataset", dataset, "Dataset directory (<regime>/{hr,lr}/*.pgm)")->required();
    eval->add_option("--csv", csv, "Per-image metrics CSV");

    auto *analyze = app.add_subcommand("analyze", "Expert-activation statistics of a checkpoint");
    analyze->add_option("--ckpt", ckpt, "Checkpoint")->required();
    analyze->add_option("--dataset", dataset, "Dataset directory")->required();
    analyze->add_option("--csv", csv, "Output directory for the CSV files")->required();
    analyze->add_option("--layer", layer, "Only write expert frequencies for this layer");

    if (argc <= 1) {
        out << app.help();
        return kExitUsage;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &) {
        out << app.help(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name());
        return kExitOk;
    } catch (const CLI::CallForVersion &e) {
        out << e.what() << '\n';
        return kExitOk;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << '\n';
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }
    if (app.get_subcommands().empty()) {
        out << app.help();
        return kExitUsage;
    }
    CLI::App *sub = app.get_subcommands().front();
    try {
        if (sub == degrade)
            run_degrade(input, output, profile, seed.value_or(0), scale, io);
        else if (sub == est)
            run_estimate(image, statistical, embeddings, id, prompt_embeddings, io);
        else if (sub == ds)
            run_dataset(output, count, size, seed.value_or(0), io);
        else if (sub == train)
            run_train(config, ckpt_out, resume, seed, io);
        else if (sub == eval)
            run_eval(ckpt, dataset, csv, io);
        else
            run_analyze(ckpt, dataset, csv, layer, io);
    } catch (const CLI::ValidationError &e) {
        err << "error: " << e.what() << '\n' << sub->help();
        return kExitUsage;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

} // namespace mor
