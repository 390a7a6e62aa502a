#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "test_util.hpp"

using namespace fabseg;
using fabseg::testutil::throws_kind;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& s) const { return path_ / s; }
    std::string str(const std::string& s) const { return (path_ / s).string(); }

private:
    fs::path path_;
};

}  // namespace

TEST(CliParse, EvaluateCommand) {
    auto cmd = cli::parse_args({"evaluate", "--pred", "p/", "--gt", "g/"});
    EXPECT_EQ(cmd.name, "evaluate");
    EXPECT_EQ(cmd.get("pred"), "p/");
    EXPECT_EQ(cmd.get("gt"), "g/");
    EXPECT_FALSE(cmd.has("report"));
}

TEST(CliParse, UnknownCommandNamesToken) {
    try {
        cli::parse_args({"frobnicate"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UsageError);
        EXPECT_NE(std::string(e.what()).find("frobnicate"), std::string::npos);
    }
}

TEST(CliParse, UnknownFlagNamesToken) {
    try {
        cli::parse_args({"evaluate", "--pred", "p", "--sparkle"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UsageError);
        EXPECT_NE(std::string(e.what()).find("--sparkle"), std::string::npos);
    }
}

TEST(CliParse, AblationSwitchesMapToFlags) {
    EXPECT_FALSE(cli::parse_args({"finetune", "--no-mp"}).config.ablation.mp);
    auto all = cli::parse_args({"finetune", "--no-ftd", "--no-ftpe", "--no-pp"});
    EXPECT_FALSE(all.config.ablation.ftd);
    EXPECT_FALSE(all.config.ablation.ftpe);
    EXPECT_TRUE(all.config.ablation.mp);
    EXPECT_FALSE(all.config.ablation.pp);
    EXPECT_TRUE(cli::parse_args({"finetune"}).config.ablation.mp);
}

TEST(CliParse, ConfigThenFlagOverrides) {
    auto cmd = cli::parse_args({"finetune", "--config", testutil::toy_config_path(), "--n-fg", "2", "--t-fg", "0.8", "--epochs", "3"});
    EXPECT_EQ(cmd.config.data.tile, 64);
    EXPECT_EQ(cmd.config.prompts.n_fg, 2);
    EXPECT_DOUBLE_EQ(cmd.config.prompts.t_fg, 0.8);
    EXPECT_EQ(cmd.config.train_finetune.epochs, 3);
    EXPECT_TRUE(throws_kind(ErrorKind::UsageError, [] { cli::parse_args({"finetune", "--n-fg", "two"}); }));
    EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { cli::parse_args({"finetune", "--head", "edges"}); }));
}

TEST(CliParse, HelpExitsSuccessfully) {
    auto cmd = cli::parse_args({"--help"});
    EXPECT_TRUE(cmd.help);
    EXPECT_NE(cmd.usage.find("train-prompter"), std::string::npos);
    auto sub = cli::parse_args({"predict", "--help"});
    EXPECT_TRUE(sub.help);
    EXPECT_NE(sub.usage.find("--sam-ckpt-boundary"), std::string::npos);
    ::testing::internal::CaptureStdout();
    EXPECT_EQ(cli::run(sub), 0);
    ::testing::internal::GetCapturedStdout();
}

TEST(CliRun, ModuleErrorsGoToStderrByName) {
    ::testing::internal::CaptureStderr();
    const int code = cli::main_entry({"evaluate", "--pred", "/nonexistent/p", "--gt", "/nonexistent/g"});
    const auto err = ::testing::internal::GetCapturedStderr();
    EXPECT_NE(code, 0);
    EXPECT_NE(err.find("IoError"), std::string::npos) << err;
    ::testing::internal::CaptureStderr();
    EXPECT_NE(cli::main_entry({"synth", "--n", "2"}), 0);
    EXPECT_NE(::testing::internal::GetCapturedStderr().find("--out"), std::string::npos);
}

TEST(CliRun, SyntheticSelfEvaluationIsPerfect) {
    TempDir dir("fabseg_cli_self");
    ASSERT_EQ(cli::main_entry({"synth", "--n", "8", "--seed", "1", "--out", dir.str("d")}), 0);
    ASSERT_EQ(cli::main_entry({"evaluate", "--pred", dir.str("d"), "--gt", dir.str("d"), "--report", dir.str("r.txt")}), 0);
    const auto report = slurp(dir / "r.txt");
    EXPECT_NE(report.find("miou,100.00"), std::string::npos) << report;
    EXPECT_TRUE(fs::exists(dir / "d/manifest.tsv"));
    EXPECT_TRUE(fs::exists(dir / "d/images/scene_007.png"));
}

TEST(CliRun, PrepareTilesAndSplits) {
    TempDir dir("fabseg_cli_prepare");
    ASSERT_EQ(cli::main_entry({"synth", "--n", "3", "--size", "40", "--out", dir.str("raw")}), 0);
    ASSERT_EQ(cli::main_entry({"prepare", "--manifest", dir.str("raw/manifest.tsv"), "--lo", "0", "--hi", "255", "--tile", "32",
                               "--split", "0.6,0.2,0.2", "--seed", "3", "--out", dir.str("prep")}),
              0);
    // 3 scenes x 2x2 tiles
    const auto all = read_manifest(dir.str("prep/manifest.tsv"));
    EXPECT_EQ(all.size(), 12u);
    EXPECT_EQ(read_manifest(dir.str("prep/train.tsv")).size() + read_manifest(dir.str("prep/val.tsv")).size() +
                  read_manifest(dir.str("prep/test.tsv")).size(),
              12u);
    const auto samples = load_samples(all);
    EXPECT_EQ(samples.front().image.height(), 32);
    EXPECT_EQ(samples.front().boundary.width(), 32);
}

TEST(CliRun, ToyPipelineSmoke) {
    TempDir dir("fabseg_cli_pipeline");
    const auto cfg = testutil::toy_config_path();
    const auto d = dir.str("d");
    ASSERT_EQ(cli::main_entry({"synth", "--n", "2", "--out", d}), 0);
    const auto data = dir.str("d/manifest.tsv");
    ASSERT_EQ(cli::main_entry({"train-prompter", "--config", cfg, "--data", data, "--iterations", "3", "--out", dir.str("p.ckpt"),
                               "--log", dir.str("p.csv")}),
              0);
    for (const char* head : {"region", "boundary"})
        ASSERT_EQ(cli::main_entry({"finetune", "--config", cfg, "--data", data, "--head", head, "--epochs", "1", "--prompter-ckpt",
                                   dir.str("p.ckpt"), "--out", dir.str(std::string(head) + ".ckpt")}),
                  0);
    auto predict = [&](const std::string& out) {
        return cli::main_entry({"predict", "--prompter-ckpt", dir.str("p.ckpt"), "--sam-ckpt-region", dir.str("region.ckpt"),
                                "--sam-ckpt-boundary", dir.str("boundary.ckpt"), "--images", dir.str("d/images"), "--out", out});
    };
    ASSERT_EQ(predict(dir.str("pred")), 0);
    ASSERT_EQ(cli::main_entry({"evaluate", "--pred", dir.str("pred"), "--gt", d, "--report", dir.str("rep.txt")}), 0);
    const auto report = slurp(dir / "rep.txt");
    EXPECT_EQ(report.rfind("region,", 0), 0u);
    EXPECT_NE(report.find("\nmiou,"), std::string::npos);
    for (const char* sub : {"region", "boundary", "fused", "prompter", "parcels"})
        EXPECT_TRUE(fs::exists(dir / (std::string("pred/") + sub + "/scene_000.png"))) << sub;
    EXPECT_EQ(slurp(dir / "pred/parcels/scene_001.csv").rfind("parcel_id,area_px,bbox\n", 0), 0u);
    EXPECT_EQ(slurp(dir / "p.csv").rfind("step,lr,loss,main,aux\n", 0), 0u);

    // re-running overwrites with identical bytes
    ASSERT_EQ(predict(dir.str("pred2")), 0);
    EXPECT_EQ(slurp(dir / "pred/fused/scene_001.png"), slurp(dir / "pred2/fused/scene_001.png"));
    EXPECT_EQ(slurp(dir / "pred/parcels/scene_001.png"), slurp(dir / "pred2/parcels/scene_001.png"));
}
