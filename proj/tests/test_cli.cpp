#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "cure/cli.hpp"
#include "cure/persistence.hpp"

using namespace cure;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / "cure_cli_tests" / name;
    fs::remove_all(dir);
    return dir;
}

std::vector<std::string> quick(const fs::path& out)
{
    return {"--n", "160", "--epochs", "2", "--attack.steps", "2", "--eval.steps", "2", "--output_dir", out.string()};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

} // namespace

TEST(Cli, TrainWritesArtifactsAndManifest)
{
    const auto dir = fresh_dir("train");
    const auto r = run(cat({"train", "--mode", "at"}, quick(dir)));
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"model.ckpt", "runlog.csv", "summary.json", "config.resolved", "MANIFEST.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_TRUE(verify_manifest(dir).empty());
    const auto log = read_runlog_csv(dir / "runlog.csv");
    EXPECT_EQ(log.records.size(), 2u);
}

TEST(Cli, ZeroEpsilonAttackEvalMatchesCleanAccuracy)
{
    const auto dir = fresh_dir("clean");
    ASSERT_EQ(run(cat({"train"}, quick(dir))).code, 0);
    const auto eval_dir = fresh_dir("clean_eval");
    const auto r = run(cat({"attack-eval", "--checkpoint", (dir / "model.ckpt").string(), "--eval.epsilon", "0"},
                           quick(eval_dir)));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(read_text(eval_dir / "attack_eval.json"));
    const auto log = read_runlog_csv(dir / "runlog.csv");
    EXPECT_NEAR(j["accuracy"].get<double>(), log.records.back().nat_test_acc, 0.005);
}

TEST(Cli, RerunsAreByteIdentical)
{
    const auto a = fresh_dir("rerun_a");
    const auto b = fresh_dir("rerun_b");
    ASSERT_EQ(run(cat({"train", "--mode", "trades"}, quick(a))).code, 0);
    ASSERT_EQ(run(cat({"train", "--mode", "trades"}, quick(b))).code, 0);
    for (const char* f : {"runlog.csv", "summary.json", "model.ckpt"})
        EXPECT_EQ(read_text(a / f), read_text(b / f)) << f;
}

TEST(Cli, CureRequiresCheckpoint)
{
    const auto dir = fresh_dir("cure_missing");
    const auto r = run(cat({"train", "--mode", "cure"}, quick(dir)));
    EXPECT_EQ(r.code, 1);
    const auto j = nlohmann::json::parse(r.err);
    EXPECT_EQ(j["error"], "config");
    EXPECT_EQ(j["key"], "init_checkpoint");
}

TEST(Cli, CureFromPretrainedCheckpoint)
{
    const auto pre = fresh_dir("cure_pre");
    ASSERT_EQ(run(cat({"train"}, quick(pre))).code, 0);
    const auto dir = fresh_dir("cure_run");
    const auto r = run(cat({"train", "--mode", "cure", "--init_checkpoint", (pre / "model.ckpt").string(),
                            "--dump_masks", "true"},
                           quick(dir)));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "masks.bin"));
    const auto stats_dir = fresh_dir("cure_stats");
    const auto s = run({"analyze", "grad-stats", "--dump", (dir / "masks.bin").string(), "--output_dir",
                        stats_dir.string()});
    EXPECT_EQ(s.code, 0) << s.err;
    EXPECT_TRUE(fs::exists(stats_dir / "grad_stats.csv"));
}

TEST(Cli, ConfigErrorsAreJson)
{
    const auto r = run({"train", "--p", "130", "--output_dir", fresh_dir("bad").string()});
    EXPECT_EQ(r.code, 1);
    const auto j = nlohmann::json::parse(r.err);
    EXPECT_EQ(j["error"], "config");
    EXPECT_EQ(j["key"], "cure.p");
    EXPECT_EQ(run({"nonsense"}).code, 1);
    EXPECT_EQ(run({"train", "--nokey", "1"}).code, 1);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, AnalyzeNrr)
{
    const auto dir = fresh_dir("nrr");
    const auto r = run({"analyze", "nrr", "--nat", "82.41", "--rob", "50.43", "--output_dir", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("62.57"), std::string::npos);
}

TEST(Cli, OutputDirMayNotHoldInputs)
{
    const auto dir = fresh_dir("nested");
    ASSERT_EQ(run(cat({"train"}, quick(dir))).code, 0);
    const auto r = run(cat({"attack-eval", "--checkpoint", (dir / "model.ckpt").string()}, quick(dir)));
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(nlohmann::json::parse(r.err)["key"], "output_dir");
}
