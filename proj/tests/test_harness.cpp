#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "daan/harness.hpp"

using namespace daan;
using namespace daan::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(const fs::path& out, int repeats = 2) {
  ExperimentConfig c;
  c.task.scenario = {ShiftKind::kMarginal, 1.0, 0.0, 5};
  c.task.model = {3, 2, 1.0};
  c.task.n_source = 48;
  c.task.n_target = 48;
  c.train.epochs = 2;
  c.train.net.feature_dim = 6;
  c.train.net.hidden_width = 8;
  c.train.net.discriminator_hidden = 6;
  c.repeats = repeats;
  c.random_trials = 3;
  c.out_dir = out;
  return c;
}

std::size_t data_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n - 1;
}

}  // namespace

TEST(OmegaError, Examples) {
  EXPECT_NEAR(omega_error(0.885, 0.900), 1.5, 1e-12);
  EXPECT_EQ(omega_error(0.9, 0.9), 0.0);
  EXPECT_NEAR(omega_error(0.910, 0.900), -1.0, 1e-12);
}

TEST(GridOmegas, ElevenValues) {
  const auto g = grid_omegas();
  ASSERT_EQ(g.size(), 11u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_EQ(g[3], 0.3);
}

TEST(DefaultTasks, TwoMarginalTwoConditional) {
  const auto t = default_tasks(4);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0].scenario.kind, ShiftKind::kMarginal);
  EXPECT_EQ(t[1].scenario.kind, ShiftKind::kMarginal);
  EXPECT_EQ(t[2].scenario.kind, ShiftKind::kConditional);
  EXPECT_EQ(t[3].scenario.kind, ShiftKind::kConditional);
  for (const auto& task : t) EXPECT_EQ(task.scenario.seed, 4u);
}

TEST(ExperimentConfig, RejectsBadRepeatsAndTrials) {
  ExperimentConfig c = tiny(fresh_dir("bad"));
  c.repeats = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny(fresh_dir("bad"));
  c.random_trials = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  Experiment e(tiny(fresh_dir("bad_t")));
  EXPECT_THROW(e.run_random(0), std::invalid_argument);
}

TEST(Experiment, DynamicRunsOnePerRepeat) {
  Experiment e(tiny(fresh_dir("dynamic"), 3));
  const StrategyResult r = e.run_dynamic();
  EXPECT_EQ(r.per_run.size(), 3u);
  for (double a : r.per_run) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  EXPECT_TRUE(std::isnan(r.omega_error));
}

TEST(Experiment, SingleRepeatIsSingleFit) {
  const ExperimentConfig cfg = tiny(fresh_dir("single"), 1);
  Experiment e(cfg);
  const StrategyResult r = e.run_dynamic();
  TrainConfig tc = e.config().train;
  tc.seed = e.seed_for(0);
  tc.net.init_seed = tc.seed;
  const FitResult f = fit(tc, e.source(), e.target_features(), e.target_eval());
  EXPECT_NEAR(r.mean_accuracy, f.metrics.back().tgt_acc, 1e-9);
}

TEST(Experiment, GridAndAverageShareRuns) {
  const fs::path out = fresh_dir("grid");
  Experiment e(tiny(out));
  const StrategyResult grid = e.run_grid();
  ASSERT_EQ(grid.trial_accuracies.size(), 2u);
  EXPECT_EQ(grid.trial_accuracies[0].size(), 11u);
  EXPECT_EQ(grid.omega_error, 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    for (double a : grid.trial_accuracies[s]) EXPECT_LE(a, grid.per_run[s]);
  }
  const auto runs_before = std::distance(fs::directory_iterator(e.task_dir() / "runs"),
                                         fs::directory_iterator{});
  const StrategyResult avg = e.run_average();
  const auto runs_after = std::distance(fs::directory_iterator(e.task_dir() / "runs"),
                                        fs::directory_iterator{});
  EXPECT_EQ(runs_before, runs_after);
  EXPECT_EQ(runs_after, 22);
  EXPECT_EQ(avg.trial_accuracies, grid.trial_accuracies);
  EXPECT_LE(avg.mean_accuracy, grid.mean_accuracy + 1e-12);
  EXPECT_GE(avg.omega_error, -1e-9);
}

TEST(Experiment, RandomDrawsReproducibleAndMeanBounded) {
  Experiment e(tiny(fresh_dir("random")));
  EXPECT_EQ(e.random_omegas(0, 5), e.random_omegas(0, 5));
  EXPECT_NE(e.random_omegas(0, 5), e.random_omegas(1, 5));
  for (double w : e.random_omegas(0, 50)) {
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
  const StrategyResult r = e.run_random(3);
  for (std::size_t s = 0; s < r.per_run.size(); ++s) {
    const auto& a = r.trial_accuracies[s];
    EXPECT_GE(r.per_run[s], *std::min_element(a.begin(), a.end()));
    EXPECT_LE(r.per_run[s], *std::max_element(a.begin(), a.end()));
  }
}

TEST(Experiment, RandomSingleTrialEqualsFixedRun) {
  Experiment e(tiny(fresh_dir("random1"), 1));
  const StrategyResult r = e.run_random(1);
  const double w = e.random_omegas(0, 1)[0];
  EXPECT_EQ(r.per_run[0], e.run(w, 0).final_target_accuracy());
  EXPECT_TRUE(e.run(w, 0).cached);
}

TEST(Experiment, GridEndpointsMatchDirectFixedFits) {
  Experiment e(tiny(fresh_dir("endpoints"), 1));
  const StrategyResult grid = e.run_grid();
  for (double w : {0.0, 1.0}) {
    TrainConfig tc = e.config().train;
    tc.omega = OmegaSetting::Fixed(w);
    tc.seed = e.seed_for(0);
    tc.net.init_seed = tc.seed;
    const FitResult f = fit(tc, e.source(), e.target_features(), e.target_eval());
    const std::size_t k = w == 0.0 ? 0 : 10;
    EXPECT_NEAR(grid.trial_accuracies[0][k], f.metrics.back().tgt_acc, 1e-9);
  }
}

TEST(Experiment, DatasetsPersistedAndShared) {
  const fs::path out = fresh_dir("data");
  Experiment a(tiny(out));
  const Matrix x = a.source().x;
  EXPECT_TRUE(fs::exists(a.task_dir() / "data" / "source.csv"));
  EXPECT_TRUE(fs::exists(a.task_dir() / "data" / "target_x.csv"));
  EXPECT_TRUE(fs::exists(a.task_dir() / "data" / "target_eval.csv"));
  Experiment b(tiny(out));
  EXPECT_EQ(b.source().x, x);
}

TEST(Experiment, RejectsDirectoryFromDifferentConfig) {
  const fs::path out = fresh_dir("mismatch");
  Experiment a(tiny(out));
  ExperimentConfig other = tiny(out);
  other.train.epochs = 3;
  EXPECT_THROW(Experiment{other}, std::runtime_error);
}

TEST(Experiment, RerunIsByteIdentical) {
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  Experiment ea(tiny(a));
  Experiment eb(tiny(b));
  ea.run_dynamic();
  eb.run_dynamic();
  ea.run_grid();
  eb.run_grid();
  report(a);
  report(b);
  const std::string task = ea.config().task.name();
  for (const char* f : {"summary.csv", "results/dynamic.csv", "results/grid.csv",
                        "runs/dynamic_seed0.csv", "data/source.csv"}) {
    EXPECT_EQ(slurp(a / task / f), slurp(b / task / f)) << f;
  }
}

TEST(Report, EmptyDirectoryIsAnError) {
  const fs::path out = fresh_dir("empty");
  fs::create_directories(out);
  try {
    report(out);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("0 runs"), std::string::npos);
  }
}

TEST(Report, OneRowPerStrategyAndIdempotent) {
  const fs::path out = fresh_dir("report");
  Experiment e(tiny(out));
  e.run_dynamic();
  e.run_average();
  const ReportResult r = report(out);
  ASSERT_EQ(r.tasks.size(), 1u);
  EXPECT_EQ(r.tasks[0].strategies, (std::vector<std::string>{"dynamic", "average"}));
  const fs::path summary = e.task_dir() / "summary.csv";
  EXPECT_EQ(data_rows(summary), 2u);
  const std::string first = slurp(summary);
  report(out);
  EXPECT_EQ(slurp(summary), first);
  EXPECT_EQ(slurp(e.task_dir() / "summary.csv").substr(0, first.find('\n')),
            "strategy,mean_accuracy,std,omega_error,seeds");
  EXPECT_TRUE(fs::exists(e.task_dir() / "omega_trajectory_seed0.csv"));
  EXPECT_TRUE(fs::exists(e.task_dir() / "omega_trajectory_seed1.csv"));
  EXPECT_EQ(data_rows(e.task_dir() / "omega_trajectory_seed0.csv"), 2u);
}

TEST(Report, MissingRunsAreListedAndSummaryStillWritten) {
  const fs::path out = fresh_dir("missing");
  Experiment e(tiny(out));
  e.run_dynamic();
  e.run_grid();
  fs::remove(e.task_dir() / "runs" / "dynamic_seed1.csv");
  const ReportResult r = report(out);
  ASSERT_EQ(r.missing.size(), 1u);
  EXPECT_NE(r.missing[0].find("dynamic_seed1.csv"), std::string::npos);
  EXPECT_EQ(data_rows(e.task_dir() / "summary.csv"), 2u);
}

TEST(Report, OmegaErrorMatchesStrategyResult) {
  const fs::path out = fresh_dir("consistency");
  Experiment e(tiny(out));
  e.run_grid();
  const StrategyResult avg = e.run_average();
  report(out);
  std::ifstream in(e.task_dir() / "summary.csv");
  std::string line;
  std::getline(in, line);
  bool found = false;
  while (std::getline(in, line)) {
    if (line.rfind("average,", 0) != 0) continue;
    found = true;
    std::stringstream s(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    EXPECT_NEAR(std::stod(cells[1]), avg.mean_accuracy, 1e-8);
    EXPECT_NEAR(std::stod(cells[3]), avg.omega_error, 1e-6);
  }
  EXPECT_TRUE(found);
}
