#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "paramrel/cli.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "paramrel");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = paramrel::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> tiny(const std::string& kind) {
  return {"--set", "schedule.kind=" + kind, "--set", "data.N=200",      "--set", "model.hidden=16",
          "--set", "train.max_steps=3",     "--set", "train.epochs=1", "--set", "eval.folds=2"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, NoArgumentsPrintsUsage) {
  const Result r = invoke({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train"), std::string::npos);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(invoke({"--help"}).code, 0); }

TEST(Cli, UnknownSubcommand) { EXPECT_EQ(invoke({"bogus"}).code, 1); }

TEST(Cli, MissingCheckpointIsUsageError) {
  const auto dir = test_support::scratch_dir("cli_nockpt");
  EXPECT_EQ(invoke({"sample", "--out", dir.string()}).code, 1);
}

TEST(Cli, UnknownConfigKeyIsUsageError) {
  const auto dir = test_support::scratch_dir("cli_badkey");
  const Result r = invoke({"train", "--out", dir.string(), "--set", "model.widht=3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("model.widht"), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  const auto dir = test_support::scratch_dir("cli_grad");
  const Result r = invoke({"gradcheck", "--seed", "7", "--out", dir.string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("max_rel_err"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "config.txt"));
  EXPECT_NE(slurp(dir / "config.txt").find("train.seed=7"), std::string::npos);
}

TEST(Cli, CorruptCheckpointIsRuntimeFailure) {
  const auto dir = test_support::scratch_dir("cli_corrupt");
  {
    std::ofstream f(dir / "bad.prlc", std::ios::binary);
    f << "definitely not a checkpoint";
  }
  EXPECT_EQ(invoke({"sample", "--out", (dir / "o").string(), "--checkpoint", (dir / "bad.prlc").string()}).code, 2);
}

TEST(Cli, FlowHeatmapRejectsDiscrete) {
  const auto dir = test_support::scratch_dir("cli_heat_d");
  EXPECT_EQ(invoke({"flow-heatmap", "--out", dir.string(), "--set", "schedule.kind=discrete"}).code, 1);
}

TEST(Cli, FlowHeatmapWritesGrid) {
  const auto dir = test_support::scratch_dir("cli_heat");
  const Result r = invoke({"flow-heatmap", "--out", dir.string(), "--bins", "20", "--trajectories", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string grid = slurp(dir / "flow_heatmap.csv");
  // header plus (T+1) columns of 20 bins at the default T=10
  EXPECT_EQ(std::count(grid.begin(), grid.end(), '\n'), 1 + 11 * 20);
  const std::string traj = slurp(dir / "flow_trajectories.csv");
  EXPECT_EQ(std::count(traj.begin(), traj.end(), '\n'), 1 + 3 * 11);
}

class CliWorkflow : public ::testing::TestWithParam<std::string> {};

TEST_P(CliWorkflow, TrainThenUseCheckpoint) {
  const std::string kind = GetParam();
  const auto dir = test_support::scratch_dir("cli_flow_" + kind);
  const std::string run = (dir / "run").string();
  const Result tr = invoke(cat({"train", "--seed", "3", "--out", run}, tiny(kind)));
  ASSERT_EQ(tr.code, 0) << tr.err;
  for (const char* f : {"config.txt", "log.txt", "metrics.csv", "epochs.csv", "checkpoint.prlc"})
    EXPECT_TRUE(fs::exists(fs::path(run) / f)) << f;
  const std::string metrics = slurp(fs::path(run) / "metrics.csv");
  EXPECT_EQ(metrics.rfind("step,flow_kl,latent_rate,mmd,distortion,total", 0), 0u);
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 4);

  // The sibling config.txt is picked up so no --set flags are repeated.
  const std::string ckpt = (fs::path(run) / "checkpoint.prlc").string();
  auto use = [&](const std::string& sub, std::vector<std::string> extra) {
    const std::string out = (dir / sub).string();
    const Result r = invoke(cat({sub, "--out", out, "--checkpoint", ckpt}, extra));
    EXPECT_EQ(r.code, 0) << sub << ": " << r.err;
    return fs::path(out);
  };
  EXPECT_TRUE(fs::exists(use("sample", {"--n", "4"}) / "samples.csv"));
  EXPECT_TRUE(fs::exists(use("reconstruct", {"--n", "3"}) / "reconstruction.csv"));
  EXPECT_TRUE(fs::exists(use("interpolate", {"--m", "5"}) / "interpolation.csv"));

  const fs::path tdir = use("traverse", {"--m", "5", "--dim", "1"});
  const std::string trav = slurp(tdir / "traversal.csv");
  EXPECT_EQ(std::count(trav.begin(), trav.end(), '\n'), 1 + 5 * 64);
  EXPECT_TRUE(fs::exists(tdir / "traversal.pgm"));

  const std::string probe = slurp(use("probe", {}) / "probe.csv");
  EXPECT_NE(probe.find(kind == "continuous" ? "auroc_intensity" : "auroc_shape"), std::string::npos);
  EXPECT_NE(probe.find("_permuted"), std::string::npos);

  // Row range outside the dataset is a usage error, not a crash.
  EXPECT_EQ(invoke({"reconstruct", "--out", (dir / "r2").string(), "--checkpoint", ckpt, "--first", "195", "--n", "10"}).code, 1);
}

TEST_P(CliWorkflow, SameSeedSameArtifacts) {
  const std::string kind = GetParam();
  const auto dir = test_support::scratch_dir("cli_repro_" + kind);
  for (const char* name : {"a", "b"})
    ASSERT_EQ(invoke(cat({"train", "--seed", "11", "--out", (dir / name).string()}, tiny(kind))).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "checkpoint.prlc"), slurp(dir / "b" / "checkpoint.prlc"));
  EXPECT_EQ(slurp(dir / "a" / "config.txt"), slurp(dir / "b" / "config.txt"));
}

INSTANTIATE_TEST_SUITE_P(Kinds, CliWorkflow, ::testing::Values("continuous", "discrete"));
