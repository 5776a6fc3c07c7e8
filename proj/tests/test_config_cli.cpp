#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "anima/config.hpp"
#include "anima/errors.hpp"
#include "anima/ndt_io.hpp"
#include "anima/rng.hpp"
#include "test_util.hpp"

using namespace anima;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = ANIMA_SOURCE_DIR;
const std::string kBin = DIT_ANIMA_BIN;

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << s;
}

std::string replace_line(std::string text, const std::string& key, const std::string& value) {
    const auto at = text.find("\n" + key + " = ");
    if (at == std::string::npos) throw std::runtime_error("no key " + key);
    const auto end = text.find('\n', at + 1);
    return text.substr(0, at + 1) + key + " = " + value + text.substr(end);
}

struct Run {
    int code;
    std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Run cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + kBin + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("anima_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    // desk.ini shrunk to a few steps, written under the test directory.
    fs::path quick_config(int steps, const std::string& name = "quick.ini") {
        std::string text = slurp(kSource / "configs/desk.ini");
        text = replace_line(text, "identity_steps", std::to_string(steps));
        text = replace_line(text, "audio_steps", std::to_string(steps));
        text = replace_line(text, "corpus_size", "4");
        text = replace_line(text, "steps", "4");
        text = replace_line(text, "output_dir", (dir_ / "run").string());
        const auto p = dir_ / name;
        spit(p, text);
        return p;
    }

    fs::path dir_;
};

}  // namespace

TEST(Config, ShippedConfigsRoundTrip) {
    for (const char* name : {"desk.ini", "ablation.ini"}) {
        const auto cfg = RunConfig::load(kSource / "configs" / name);
        const auto text = cfg.serialize();
        const auto back = RunConfig::parse(text);
        EXPECT_TRUE(back == cfg) << name;
        EXPECT_EQ(back.serialize(), text) << name;
    }
}

TEST(Config, DeskValues) {
    const auto cfg = RunConfig::load(kSource / "configs/desk.ini");
    EXPECT_EQ(cfg.seed, 1u);
    EXPECT_EQ(cfg.schedule.T, 1000);
    EXPECT_EQ(cfg.guidance.scales.lambda_a, 3.5);
    EXPECT_EQ(cfg.guidance.scales.lambda_t, 3.5);
    EXPECT_EQ(cfg.guidance.scales.lambda_i, 1.0);
    EXPECT_EQ(cfg.train.base.drop_prob, 0.05);
    EXPECT_EQ(cfg.train.base.motion_mask_prob, 0.25);
    EXPECT_TRUE(cfg.filter.single_speaker);
}

TEST(Config, UnknownKeyAndMissingSectionAreNamed) {
    const std::string desk = slurp(kSource / "configs/desk.ini");
    std::string typo = desk;
    typo.replace(typo.find("depth = 2"), 9, "depht = 2");
    try {
        RunConfig::parse(typo);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("model.depht"), std::string::npos) << e.what();
    }
    const std::string no_filter = desk.substr(0, desk.find("[filter]"));
    try {
        RunConfig::parse(no_filter);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("[filter]"), std::string::npos) << e.what();
    }
    EXPECT_THROW(RunConfig::parse(replace_line(desk, "lr", "fast")), ConfigError);
    EXPECT_THROW(RunConfig::parse(replace_line(desk, "heads", "3")), ConfigError);
    EXPECT_THROW(RunConfig::load("/nonexistent/run.ini"), IoError);
}

TEST(Config, SeedEnvironmentOverride) {
    auto cfg = RunConfig::load(kSource / "configs/desk.ini");
    ::unsetenv("DIT_ANIMA_SEED");
    apply_seed_env(cfg);
    EXPECT_EQ(cfg.seed, 1u);
    ::setenv("DIT_ANIMA_SEED", "42", 1);
    apply_seed_env(cfg);
    EXPECT_EQ(cfg.seed, 42u);
    ::setenv("DIT_ANIMA_SEED", "-3", 1);
    EXPECT_THROW(apply_seed_env(cfg), ConfigError);
    ::unsetenv("DIT_ANIMA_SEED");
}

TEST_F(CliTest, ZeroStepTrainingWritesInitialWeights) {
    const auto ini = quick_config(0);
    const auto r = cli("train --config " + ini.string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto cfg = RunConfig::load(ini);
    const auto loaded = model::DitModel::load(dir_ / "run/checkpoint", cfg.model);
    const auto init = model::DitModel::init(cfg.model, Rng(cfg.seed).split("init").next_u64());
    ASSERT_EQ(loaded.params().names(), init.params().names());
    for (const auto& n : init.params().names())
        EXPECT_TRUE(loaded.params().get(n).bit_equal(init.params().get(n))) << n;
}

TEST_F(CliTest, TrainingIsByteReproducibleAndSeedSensitive) {
    const auto ini = quick_config(3);
    auto checkpoint_bytes = [&](const std::string& out, const std::string& env) {
        const auto r = cli("train --config " + ini.string() + " --out " + (dir_ / out).string(), env);
        EXPECT_EQ(r.code, 0) << r.out;
        std::string all;
        for (const auto& e : fs::directory_iterator(dir_ / out / "checkpoint")) all += slurp(e.path());
        return all + slurp(dir_ / out / "loss_trace.csv");
    };
    const auto a = checkpoint_bytes("a", ""), b = checkpoint_bytes("b", "");
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    EXPECT_NE(checkpoint_bytes("c", "DIT_ANIMA_SEED=7"), a);
    EXPECT_EQ(checkpoint_bytes("d", "DIT_ANIMA_SEED=1"), a);
}

TEST_F(CliTest, ExtrapolateOneClipEqualsSample) {
    const auto ini = quick_config(1);
    ASSERT_EQ(cli("train --config " + ini.string()).code, 0);
    const auto s = cli("sample --config " + ini.string() + " --out " + (dir_ / "s.ndt").string());
    ASSERT_EQ(s.code, 0) << s.out;
    const auto e = cli("extrapolate --clips 1 --config " + ini.string() + " --out " + (dir_ / "e.ndt").string());
    ASSERT_EQ(e.code, 0) << e.out;
    EXPECT_EQ(slurp(dir_ / "s.ndt"), slurp(dir_ / "e.ndt"));
    EXPECT_EQ(slurp(dir_ / "s_video.ndt"), slurp(dir_ / "e_video.ndt"));

    const auto three = cli("extrapolate --clips 3 --config " + ini.string() + " --out " + (dir_ / "x.ndt").string());
    ASSERT_EQ(three.code, 0) << three.out;
    const auto cfg = RunConfig::load(ini);
    EXPECT_EQ(ndt::load(dir_ / "x.ndt").dims()[0], 3 * cfg.model.latent_frames);
}

TEST_F(CliTest, CurateHeaderOnlyManifest) {
    const auto manifest = dir_ / "m.csv";
    spit(manifest, std::string(datapipe::kManifestHeader) + "\n");
    const auto r = cli("curate --config " + (kSource / "configs/desk.ini").string() + " --manifest " +
                       manifest.string() + " --out " + (dir_ / "cur").string());
    ASSERT_EQ(r.code, 0) << r.out;
    std::istringstream kept(slurp(dir_ / "cur/kept.csv"));
    EXPECT_TRUE(datapipe::read_manifest(kept).empty());
    EXPECT_NE(r.out.find("kept 0"), std::string::npos);
}

TEST_F(CliTest, FrechetOfIdenticalDumpsIsZero) {
    const auto feats = testutil::random({40, 5}, 3);
    ndt::save(feats, dir_ / "a.ndt");
    ndt::save(feats, dir_ / "b.ndt");
    const auto r = cli("metrics frechet --a " + (dir_ / "a.ndt").string() + " --b " + (dir_ / "b.ndt").string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NEAR(std::stod(r.out), 0.0, 1e-6);
}

TEST_F(CliTest, ExitCodes) {
    const std::string desk = slurp(kSource / "configs/desk.ini");

    // 2: configuration errors, naming the culprit.
    spit(dir_ / "nofilter.ini", desk.substr(0, desk.find("[filter]")));
    const auto missing = cli("train --config " + (dir_ / "nofilter.ini").string());
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.out.find("[filter]"), std::string::npos) << missing.out;
    EXPECT_EQ(cli("ablate --config " + (kSource / "configs/desk.ini").string() + " --axis colour").code, 2);
    EXPECT_EQ(cli("no-such-command").code, 2);
    EXPECT_EQ(cli("train --config " + (kSource / "configs/desk.ini").string(), "DIT_ANIMA_SEED=abc").code, 2);

    // 3: non-finite numerics.
    auto bad = testutil::random({10, 3}, 1);
    bad[4] = std::numeric_limits<Scalar>::infinity();
    ndt::save(bad, dir_ / "bad.ndt");
    ndt::save(testutil::random({10, 3}, 2), dir_ / "ok.ndt");
    EXPECT_EQ(cli("metrics frechet --a " + (dir_ / "bad.ndt").string() + " --b " + (dir_ / "ok.ndt").string()).code, 3);

    // 4: I/O.
    EXPECT_EQ(cli("train --config /nonexistent/run.ini").code, 4);
    EXPECT_EQ(cli("stats --manifest /nonexistent/m.csv").code, 4);
    spit(dir_ / "garbage.ndt", "not a tensor");
    EXPECT_EQ(cli("metrics frechet --a " + (dir_ / "garbage.ndt").string() + " --b " + (dir_ / "ok.ndt").string()).code,
              4);
    const auto ini = quick_config(0);
    EXPECT_EQ(cli("sample --config " + ini.string() + " --checkpoint " + (dir_ / "none").string()).code, 4);
}
