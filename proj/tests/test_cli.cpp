// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0

#include "mor/cli.hpp"
#include "mor/textures.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

using namespace mor;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "mor");
    std::vector<const char *> argv;
    for (const auto &a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path &p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

/// Fresh scratch directory, removed on scope exit.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string &tag) : path(fs::temp_directory_path() / ("mor_cli_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string &s) const { return (path / s).string(); }
};

std::vector<std::string> lines(const std::string &s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);)
        out.push_back(l);
    return out;
}

} // namespace

TEST_CASE("usage errors exit 1", "[cli]") {
    const Result none = invoke({});
    CHECK(none.code == 1);
    CHECK_THAT(none.out, ContainsSubstring("degrade"));
    CHECK(invoke({"frobnicate"}).code == 1);
    CHECK(invoke({"degrade", "--input", "x"}).code == 1);
    CHECK(invoke({"dataset", "--output", "x", "--size", "8"}).code == 1);
    const Result est = invoke({"estimate"});
    CHECK(est.code == 1);
    CHECK_THAT(est.err, ContainsSubstring("--statistical"));
}

TEST_CASE("version and help", "[cli]") {
    const Result v = invoke({"--version"});
    CHECK(v.code == 0);
    CHECK(v.out == "mor 1.0.0 (checkpoint format 1)\n");
    const Result h = invoke({"train", "--help"});
    CHECK(h.code == 0);
    CHECK_THAT(h.out, ContainsSubstring("--resume"));
}

TEST_CASE("degrade is deterministic and writes records", "[cli][degrade]") {
    const TempDir dir("degrade");
    fs::create_directories(dir.path / "hr");
    for (int i = 0; i < 3; ++i)
        write_image(dir.path / "hr" / ("t" + std::to_string(i) + ".pgm"), procedural_texture(48, 48, 40 + i));

    const Result a = invoke({"degrade", "--input", dir / "hr", "--output", dir / "a", "--profile", "deg2", "--seed", "5"});
    REQUIRE(a.code == 0);
    CHECK(a.out == "degraded 3 image(s) into " + (dir / "a") + "\n");
    REQUIRE(invoke({"degrade", "--input", dir / "hr", "--output", dir / "b", "--profile", "deg2", "--seed", "5"}).code == 0);
    REQUIRE(invoke({"degrade", "--input", dir / "hr", "--output", dir / "c", "--profile", "deg2", "--seed", "6"}).code == 0);
    for (int i = 0; i < 3; ++i) {
        const std::string stem = "t" + std::to_string(i);
        CHECK(slurp(dir.path / "a" / (stem + ".pgm")) == slurp(dir.path / "b" / (stem + ".pgm")));
        CHECK(slurp(dir.path / "a" / (stem + ".record")) == slurp(dir.path / "b" / (stem + ".record")));
        CHECK(slurp(dir.path / "a" / (stem + ".record")) != slurp(dir.path / "c" / (stem + ".record")));
        const ImageF lr = read_image(dir.path / "a" / (stem + ".pgm"));
        CHECK(lr.height() == 12);
        CHECK(lr.width() == 12);
    }
    // Each image replays from its record.
    const ImageF hr = read_image(dir.path / "hr" / "t1.pgm");
    const DegradationRecord rec = DegradationRecord::parse(slurp(dir.path / "a" / "t1.record"));
    ImageF replay = replay_degradation(hr, rec);
    CHECK(quantize8(replay).data() == read_image(dir.path / "a" / "t1.pgm").data());

    const Result bad = invoke({"degrade", "--input", dir / "hr", "--output", dir / "d", "--profile", "deg3"});
    CHECK(bad.code == 2);
    CHECK_THAT(bad.err, ContainsSubstring("deg3"));
    CHECK(invoke({"degrade", "--input", dir / "missing", "--output", dir / "d"}).code == 2);
}

TEST_CASE("estimate prints seven scores and the scalar", "[cli][estimate]") {
    const TempDir dir("estimate");
    const std::string img = dir / "tex.pgm";
    write_image(img, procedural_texture(24, 24, 3));
    const Result r = invoke({"estimate", "--statistical", "--image", img});
    REQUIRE(r.code == 0);
    const auto l = lines(r.out);
    REQUIRE(l.size() == 8);
    const auto want = estimate_statistical(read_image(img));
    double mean = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
        const auto eq = l[i].find('=');
        REQUIRE(eq != std::string::npos);
        CHECK(std::stod(l[i].substr(eq + 1)) == Catch::Approx(want[i]).margin(1e-6));
        mean += want[i] / 7.0;
    }
    CHECK(l[7].starts_with("scalar="));
    CHECK(std::stod(l[7].substr(7)) == Catch::Approx(mean).margin(1e-6));

    CHECK(invoke({"estimate", "--statistical"}).code == 1);
    CHECK(invoke({"estimate", "--statistical", "--image", dir / "nope.pgm"}).code == 1);
}

TEST_CASE("train, resume, eval and analyze end to end", "[cli][train]") {
    const TempDir dir("train");
    const Result missing = invoke({"train", "--config", dir / "absent.cfg", "--out", dir / "ck.bin"});
    CHECK(missing.code == 2);
    CHECK_THAT(missing.err, ContainsSubstring("absent.cfg"));
    CHECK(invoke({"train", "--out", dir / "ck.bin"}).code == 1);

    std::ofstream(dir.path / "run.cfg") << "# tiny run\niterations=3\ntrain_size=60\nheldout_size=10\n"
                                        << "teacher_max_steps=50\nlog_path=" << (dir / "log.csv") << "\n";
    const Result t = invoke({"train", "--config", dir / "run.cfg", "--out", dir / "ck.bin"});
    REQUIRE(t.code == 0);
    CHECK_THAT(t.out, ContainsSubstring("trained to iteration 3"));
    CHECK_THAT(t.out, ContainsSubstring("psnr="));
    CHECK(lines(slurp(dir.path / "log.csv")).size() == 4);

    std::ofstream(dir.path / "more.cfg") << "iterations=5\n";
    const Result r = invoke({"train", "--resume", dir / "ck.bin", "--config", dir / "more.cfg", "--out", dir / "ck5.bin"});
    REQUIRE(r.code == 0);
    CHECK_THAT(r.out, ContainsSubstring("trained to iteration 5"));
    const auto log = lines(slurp(dir.path / "log.csv"));
    REQUIRE(log.size() == 6);
    CHECK(log[0] == kLogHeader);
    CHECK(log[5].starts_with("4,"));

    // The CLI run matches the library with the same config.
    TrainConfig cfg = TrainConfig::load(dir.path / "run.cfg");
    cfg.iterations = 5;
    Trainer lib(cfg);
    lib.run();
    const Checkpoint from_cli = load_checkpoint(dir.path / "ck5.bin");
    CHECK(from_cli.tensors == lib.checkpoint().tensors);

    REQUIRE(invoke({"dataset", "--output", dir / "ds", "--count", "4", "--seed", "9"}).code == 0);
    const Result e = invoke({"eval", "--ckpt", dir / "ck5.bin", "--dataset", dir / "ds", "--csv", dir / "m.csv"});
    REQUIRE(e.code == 0);
    CHECK_THAT(e.out, ContainsSubstring("samples=8"));
    CHECK_THAT(e.out, ContainsSubstring("zero_active.deg1="));
    CHECK(lines(slurp(dir.path / "m.csv")).size() == 9);

    const Result a = invoke({"analyze", "--ckpt", dir / "ck5.bin", "--dataset", dir / "ds", "--csv", dir / "an"});
    REQUIRE(a.code == 0);
    CHECK(lines(a.out).size() == 4);
    CHECK(lines(slurp(dir.path / "an" / "zero_counts.csv")).size() == 5);
    CHECK(fs::exists(dir.path / "an" / "expert_freq_layer0.csv"));
    CHECK(fs::exists(dir.path / "an" / "expert_freq_layer1.csv"));
    const Result bad_layer =
        invoke({"analyze", "--ckpt", dir / "ck5.bin", "--dataset", dir / "ds", "--csv", dir / "an2", "--layer", "5"});
    CHECK(bad_layer.code == 2);
    CHECK_THAT(bad_layer.err, ContainsSubstring("layer 5"));

    std::ofstream(dir.path / "junk.bin") << "not a checkpoint";
    CHECK(invoke({"eval", "--ckpt", dir / "junk.bin", "--dataset", dir / "ds"}).code == 2);
}
