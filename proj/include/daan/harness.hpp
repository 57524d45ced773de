#pragma once

// Experiment driver for comparing ways of choosing omega. Every run is a
// cached file under <out>/<task>/runs keyed by (omega, seed), so grid search
// and average search share their eleven runs per seed.
//
// Layout of one task directory:
//   config.txt                 resolved configuration (key = value)
//   data/source.csv, data/target_x.csv, data/target_eval.csv
//   runs/<tag>_seed<k>.csv     per-run metrics
//   results/<strategy>.csv     per-strategy run listing
//   summary.csv                written by report()
//   omega_trajectory_seed<k>.csv

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "daan/datagen.hpp"
#include "daan/trainer.hpp"

namespace daan::harness {

struct TaskSpec {
  ShiftScenario scenario;
  ClusterModel model{3, 4, 1.0};
  std::size_t n_source = 600;
  std::size_t n_target = 600;

  /// e.g. "marginal_m3_s7".
  std::string name() const;
};

/// Four tasks: marginal shift at magnitudes 1.5 and 3, conditional shift at
/// magnitudes 1 and 1.5, all generated from `seed`.
std::vector<TaskSpec> default_tasks(std::uint64_t seed = 0);

struct ExperimentConfig {
  TaskSpec task;
  TrainConfig train;
  int repeats = 5;
  int random_trials = 20;
  std::filesystem::path out_dir = "daan_out";

  void validate() const;
};

/// Resolved configuration as `key = value` lines; identical configs give
/// identical text.
std::string config_text(const ExperimentConfig& cfg);

/// Per-seed accuracy gap to the grid optimum in percentage points.
double omega_error(double method_acc, double grid_best_acc);

struct StrategyResult {
  std::string strategy;
  /// One entry per seed: the accuracy this strategy reports for it.
  std::vector<double> per_run;
  double mean_accuracy = 0;
  double std_accuracy = 0;
  /// Per seed: every trial's omega and accuracy (grid, average, random).
  std::vector<std::vector<double>> trial_omegas;
  std::vector<std::vector<double>> trial_accuracies;
  /// Grid only: the best omega per seed.
  std::vector<double> best_omega;
  /// Mean over seeds of omega_error against the per-seed grid best; NaN
  /// when the grid runs are not available.
  double omega_error = 0;
};

struct RunOutcome {
  std::vector<MetricsRow> metrics;
  bool cached = false;

  double final_target_accuracy() const;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  std::filesystem::path task_dir() const;

  /// Generates the task data on first use, persists it, and returns the
  /// reloaded copy so every strategy trains on identical bytes.
  const LabeledDomain& source();
  const Matrix& target_features();
  const std::vector<int>& target_eval();

  std::uint64_t seed_for(int repeat) const;

  /// Fits (or loads from cache) one run. An empty omega means dynamic.
  RunOutcome run(std::optional<double> fixed_omega, int repeat);

  StrategyResult run_dynamic();
  StrategyResult run_grid();
  StrategyResult run_random(int trials);
  StrategyResult run_average();

  /// Omega values drawn for random guessing at a given repeat.
  std::vector<double> random_omegas(int repeat, int trials) const;

  /// Per-seed grid best from cached runs only; nullopt if any is missing.
  std::optional<std::vector<double>> grid_reference() const;

 private:
  void load_data();
  std::filesystem::path run_path(std::optional<double> fixed_omega,
                                 int repeat) const;
  void finish(StrategyResult& result, const std::string& file) const;

  ExperimentConfig cfg_;
  std::optional<LabeledDomain> source_;
  Matrix target_x_;
  std::vector<int> target_eval_;
};

/// The eleven grid values 0, 0.1, ..., 1.0.
std::vector<double> grid_omegas();

struct TaskSummary {
  std::string task;
  std::vector<std::string> strategies;  // rows written to summary.csv
};

struct ReportResult {
  std::vector<TaskSummary> tasks;
  std::vector<std::string> missing;  // run files referenced but absent
};

/// Rebuilds summary.csv and the omega trajectories of every task under
/// out_dir. Throws if no task with results exists.
ReportResult report(const std::filesystem::path& out_dir);

}  // namespace daan::harness
