#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(DAAN_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kSmall =
    " --epochs 2 --n_source 60 --n_target 60 --dim 2 --feature_dim 6 --hidden_width 8"
    " --disc_hidden 6 --repeats 2";

}  // namespace

TEST(Cli, GenWritesDatasets) {
  const fs::path out = fresh_dir("gen");
  const Result r = run("gen --out " + out.string() + kSmall);
  ASSERT_EQ(r.code, 0) << r.output;
  const fs::path data = out / "marginal_m1_s0" / "data";
  EXPECT_TRUE(fs::exists(data / "source.csv"));
  EXPECT_TRUE(fs::exists(data / "target_x.csv"));
  EXPECT_TRUE(fs::exists(data / "target_eval.csv"));
}

TEST(Cli, TrainIsDeterministic) {
  const fs::path a = fresh_dir("train_a");
  const fs::path b = fresh_dir("train_b");
  for (const auto& out : {a, b}) {
    const Result r = run("train --omega fixed:0.3 --seed 4 --out " + out.string() + kSmall);
    ASSERT_EQ(r.code, 0) << r.output;
  }
  const fs::path rel = fs::path("marginal_m1_s4") / "train" / "fixed0.3_seed4_metrics.csv";
  const std::string metrics = slurp(a / rel);
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')),
            "epoch,loss_y,loss_g,loss_l,omega,lr,src_acc,tgt_acc,seconds");
  EXPECT_EQ(metrics, slurp(b / rel));
  EXPECT_TRUE(fs::exists(a / "marginal_m1_s4" / "train" / "fixed0.3_seed4.ckpt"));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const fs::path out = fresh_dir("config");
  const fs::path cfg = out / "run.cfg";
  std::ofstream(cfg) << "epochs = 3\nscenario = conditional\nmagnitude = 0.5\n";
  const Result r = run("train --config " + cfg.string() + " --epochs 1 --out " +
                       out.string() + " --n_source 60 --n_target 60 --dim 2");
  ASSERT_EQ(r.code, 0) << r.output;
  const fs::path task = out / "conditional_m0.5_s0";
  EXPECT_NE(slurp(task / "config.txt").find("epochs = 1\n"), std::string::npos);
}

TEST(Cli, StrategiesAndReport) {
  const fs::path out = fresh_dir("strategies");
  const std::string common = " --out " + out.string() + kSmall;
  for (const std::string sub : {"dynamic", "grid", "avg", "random --t 2"}) {
    const Result r = run(sub + common);
    ASSERT_EQ(r.code, 0) << sub << ": " << r.output;
  }
  const Result r = run("report --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string summary = slurp(out / "marginal_m1_s0" / "summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 5);
}

TEST(Cli, RejectedPreconditionsExitNonZeroWithOneLine) {
  const fs::path out = fresh_dir("errors");
  for (const std::string& args : std::vector<std::string>{
        "train --omega fixed:1.5 --out " + out.string(),
        "train --omega sometimes --out " + out.string(),
        "train --scenario sideways --out " + out.string(),
        "random --t 0 --out " + out.string(),
        "report --out " + (out / "nothing").string(),
        "report --out " + out.string(),
        "grid --repeats 0 --out " + out.string(),
        "frobnicate",
        ""}) {
    const Result r = run(args);
    EXPECT_NE(r.code, 0) << args;
    EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1) << args << ": " << r.output;
  }
}

TEST(Cli, UnknownConfigKeyIsRejected) {
  const fs::path out = fresh_dir("badcfg");
  std::ofstream(out / "bad.cfg") << "epoch = 3\n";
  const Result r = run("gen --config " + (out / "bad.cfg").string() + " --out " + out.string());
  EXPECT_NE(r.code, 0);
}
