#include "support.hpp"

#include "cli.hpp"
#include "tempoc/config.hpp"
#include "tempoc/data.hpp"
#include "tempoc/image_io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace tempoc;
using tempoc::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args)
{
    args.insert(args.begin(), "tempoc");
    std::vector<char*> argv;
    for (auto& a : args)
        argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path write_tiny_config(const fs::path& dir)
{
    config::Config c;
    c.seed = 5;
    c.model.widths = {8, 16};
    c.model.residual_blocks = 1;
    c.model.lstm_channels = 8;
    c.flow.pyramid = {2, 3, {8, 8, 4}};
    c.flow.pretrain_steps = 10;
    c.flow.pretrain_clips = 4;
    c.flow.pretrain_batch = 2;
    c.data.synthetic = {2, 5, 16, 16, 1};
    c.data.validation = {2, 4, 16, 16, 2};
    c.train.frames = 3;
    c.train.patch = 16;
    c.train.iterations = 3;
    c.train.validation_interval = 0;
    c.train.checkpoint_interval = 0;
    fs::create_directories(dir);
    const auto path = dir / "tiny.json";
    std::ofstream(path) << config::to_json(c).dump(2);
    return path;
}

void write_static_video(const fs::path& dir)
{
    auto frame = torch::rand({1, 3, 12, 12});
    io::save_video(dir, VideoSequence(frame.expand({4, 3, 12, 12}).clone(), Role::output));
}

}  // namespace

TEST(Cli, EvalOfStaticVideoPrintsZero)
{
    TempDir dir("cli_static");
    write_static_video(dir / "static");
    auto r = run({"eval", "--video", (dir / "static").string(), "--set", "flow.estimator=zero", "--set",
                  "eval.mode=self"});
    EXPECT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(r.out.rfind("warp_error 0.0000000000 mode self", 0), 0u) << r.out;
}

TEST(Cli, StaticVideoWithLearnedEstimatorIsZero)
{
    TempDir dir("cli_static_pyramid");
    write_static_video(dir / "static");
    const auto cfg = write_tiny_config(dir.path());
    auto r = run({"eval", "--config", cfg.string(), "--video", (dir / "static").string()});
    EXPECT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NE(r.out.find("warp_error 0.0000000000"), std::string::npos) << r.out;
}

TEST(Cli, MissingConfigExitsTwoAndNamesPath)
{
    TempDir dir("cli_missing");
    auto r = run({"train", "--config", "missing.json", "--out", dir.path().string()});
    EXPECT_EQ(r.code, cli::kConfigError);
    EXPECT_NE(r.err.find("missing.json"), std::string::npos) << r.err;
}

TEST(Cli, ProcessExitCodeMatches)
{
    const std::string cmd = std::string(TEMPOC_CLI_PATH) + " train --config missing.json > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    ASSERT_TRUE(WIFEXITED(status));
    EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST(Cli, ParseAndConfigErrorsExitTwo)
{
    EXPECT_EQ(run({"train", "--set", "train.no_such_key=1"}).code, cli::kConfigError);
    EXPECT_EQ(run({"train", "--bogus"}).code, cli::kConfigError);
    EXPECT_EQ(run({"frobnicate"}).code, cli::kConfigError);
    EXPECT_EQ(run({"train", "--set", "train.frames=1", "--out", "/tmp"}).code, cli::kConfigError);
}

TEST(Cli, ContractViolationExitsOne)
{
    TempDir dir("cli_contract");
    io::save_video(dir / "single", VideoSequence(torch::rand({1, 3, 8, 8}), Role::output));
    auto r = run({"eval", "--video", (dir / "single").string(), "--set", "flow.estimator=zero"});
    EXPECT_EQ(r.code, cli::kContractViolation) << r.err;
}

TEST(Cli, SynthFlickerWritesCorpusAndManifest)
{
    TempDir dir("cli_synth");
    const auto cfg = write_tiny_config(dir / "cfg");
    auto r = run({"synth-flicker", "--config", cfg.string(), "--out", (dir / "out").string()});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
    EXPECT_TRUE(fs::exists(dir / "out" / "resolved_config.json"));
    auto manifest = data::load_manifest(dir / "out" / "manifest.json");
    EXPECT_TRUE(manifest.errors.empty());
    ASSERT_EQ(manifest.clips.size(), 2u);
    auto clip = data::load_clip(manifest.clips[0]);
    EXPECT_EQ(clip.processed.length(), 5);

    // Single-directory mode
    auto single = run({"synth-flicker", "--config", cfg.string(), "--input", manifest.clips[0].raw_dir.string(),
                       "--out", (dir / "single").string()});
    ASSERT_EQ(single.code, cli::kOk) << single.err;
    EXPECT_EQ(io::load_video(dir / "single" / "processed", Role::processed).length(), 5);
}

TEST(Cli, TrainIterateAndRerunsAreByteIdentical)
{
    TempDir dir("cli_train");
    const auto cfg = write_tiny_config(dir / "cfg");
    for (const char* run_name : {"a", "b"}) {
        auto r = run({"train", "--config", cfg.string(), "--out", (dir / run_name).string()});
        ASSERT_EQ(r.code, cli::kOk) << r.err;
        EXPECT_TRUE(fs::exists(dir / run_name / "resolved_config.json"));
        EXPECT_TRUE(fs::exists(dir / run_name / "train_log.csv"));
    }
    EXPECT_EQ(slurp(dir / "a" / "final.tpc"), slurp(dir / "b" / "final.tpc"));
    EXPECT_EQ(slurp(dir / "a" / "train_log.csv"), slurp(dir / "b" / "train_log.csv"));
    EXPECT_EQ(slurp(dir / "a" / "train_log.csv").rfind("iteration,l_fg,l_rec,l_p,l_const,total,val_warp_error\n1,", 0),
              0u);

    const auto ckpt = (dir / "a" / "final.tpc").string();
    for (const char* run_name : {"it1", "it2"}) {
        auto r = run({"iterate", "--ckpt", ckpt, "--k", "3", "--clips", "1", "--out", (dir / run_name).string()});
        ASSERT_EQ(r.code, cli::kOk) << r.err;
    }
    for (int i = 0; i < 4; ++i) {
        const auto sub = fs::path("validation-000") / ("iter_" + std::to_string(i));
        ASSERT_TRUE(fs::is_directory(dir / "it1" / sub)) << sub;
        EXPECT_EQ(io::load_video(dir / "it1" / sub, Role::output).length(), 4);
        EXPECT_EQ(slurp(dir / "it1" / sub / "00001.png"), slurp(dir / "it2" / sub / "00001.png"));
    }
    const auto curve = slurp(dir / "it1" / "curve.csv");
    EXPECT_EQ(curve, slurp(dir / "it2" / "curve.csv"));
    EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 5);

    auto infer = run({"infer", "--ckpt", ckpt, "--video", (dir / "it1" / "validation-000" / "iter_0").string(),
                      "--out", (dir / "infer").string()});
    ASSERT_EQ(infer.code, cli::kOk) << infer.err;
    EXPECT_EQ(io::load_video(dir / "infer" / "frames", Role::output).length(), 4);

    auto report = run({"eval", "--ckpt", ckpt, "--task", "deflicker", "--cite", "published=0.002", "--out",
                       (dir / "report").string()});
    ASSERT_EQ(report.code, cli::kOk) << report.err;
    const auto csv = slurp(dir / "report" / "report.csv");
    EXPECT_EQ(csv.rfind("task,method,clip,warp_error,mode\n", 0), 0u);
    EXPECT_NE(csv.find("deflicker,processed,validation-000,"), std::string::npos);
    EXPECT_NE(slurp(dir / "report" / "table.txt").find("published (cited)"), std::string::npos);

    auto resumed = run({"train", "--config", cfg.string(), "--set", "train.iterations=5", "--resume", ckpt, "--out",
                        (dir / "resumed").string()});
    EXPECT_EQ(resumed.code, cli::kOk) << resumed.err;
}

TEST(Cli, GradcheckPasses)
{
    TempDir dir("cli_grad");
    const auto cfg = write_tiny_config(dir / "cfg");
    auto r = run({"gradcheck", "--config", cfg.string(), "--probes", "4", "--out", (dir / "g").string()});
    EXPECT_EQ(r.code, cli::kOk) << r.out << r.err;
    EXPECT_TRUE(fs::exists(dir / "g" / "gradcheck.csv"));
}

TEST(Cli, CorruptCheckpointExitsTwo)
{
    TempDir dir("cli_corrupt");
    std::ofstream(dir / "bad.tpc") << "not a checkpoint";
    EXPECT_EQ(run({"iterate", "--ckpt", (dir / "bad.tpc").string(), "--out", (dir / "o").string()}).code,
              cli::kConfigError);
}
