// Command-line driver: dataset generation, single fits, omega strategies and
// reports. Every subcommand accepts the same flags; a --config file supplies
// defaults that flags on the command line override.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "daan/harness.hpp"
#include "daan/net.hpp"
#include "daan/trainer.hpp"

namespace fs = std::filesystem;
using namespace daan;
using harness::Experiment;
using harness::ExperimentConfig;
using harness::StrategyResult;

namespace {

struct Options {
  std::string out = "daan_out";
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;
  std::string scenario = "marginal";
  double magnitude = 1.0;
  double conditional_magnitude = 1.0;
  int classes = 3;
  int dim = 4;
  double spread = 1.0;
  std::size_t n_source = 600;
  std::size_t n_target = 600;
  std::string omega = "dynamic";
  int repeats = 5;
  int t = 20;
  bool protocol = false;
  std::string local_statistic = "members";
  TrainConfig train;
};

std::vector<ExperimentConfig> configs(const Options& o) {
  TrainConfig tc = o.train;
  tc.omega = OmegaSetting::parse(o.omega);
  tc.seed = o.seed;
  tc.local_statistic = parse_local_statistic(o.local_statistic);

  std::vector<harness::TaskSpec> tasks;
  const std::uint64_t data_seed = o.data_seed.value_or(o.seed);
  if (o.protocol) {
    tasks = harness::default_tasks(data_seed);
  } else {
    harness::TaskSpec t;
    t.scenario.kind = parse_shift_kind(o.scenario);
    t.scenario.magnitude = o.magnitude;
    t.scenario.conditional_magnitude = o.conditional_magnitude;
    t.scenario.seed = data_seed;
    tasks.push_back(t);
  }
  std::vector<ExperimentConfig> out;
  for (auto& task : tasks) {
    task.model = {o.classes, o.dim, o.spread};
    task.n_source = o.n_source;
    task.n_target = o.n_target;
    ExperimentConfig cfg;
    cfg.task = task;
    cfg.train = tc;
    cfg.repeats = o.repeats;
    cfg.random_trials = o.t;
    cfg.out_dir = o.out;
    out.push_back(cfg);
  }
  return out;
}

void print(const std::string& task, const StrategyResult& r) {
  std::printf("%s %s mean_accuracy=%.6f std=%.6f omega_error=", task.c_str(),
              r.strategy.c_str(), r.mean_accuracy, r.std_accuracy);
  if (std::isnan(r.omega_error)) {
    std::printf("n/a (no grid runs)\n");
  } else {
    std::printf("%.4f\n", r.omega_error);
  }
}

void cmd_gen(const Options& o) {
  for (const auto& cfg : configs(o)) {
    Experiment e(cfg);
    e.source();
    std::printf("%s\n", (e.task_dir() / "data").string().c_str());
  }
}

void cmd_train(const Options& o) {
  for (const auto& cfg : configs(o)) {
    Experiment e(cfg);
    TrainConfig tc = e.config().train;
    tc.net.init_seed = tc.seed;
    const FitResult r = fit(tc, e.source(), e.target_features(),
                            std::span<const int>(e.target_eval()));
    const fs::path dir = e.task_dir() / "train";
    fs::create_directories(dir);
    std::string tag = tc.omega.dynamic ? "dynamic" : "fixed";
    if (!tc.omega.dynamic) {
      char buf[32];
      tag += std::string(buf, std::to_chars(buf, buf + sizeof buf, tc.omega.value).ptr);
    }
    const std::string stem = tag + "_seed" + std::to_string(tc.seed);
    write_metrics_csv((dir / (stem + "_metrics.csv")).string(), r.metrics);
    save_checkpoint((dir / (stem + ".ckpt")).string(), r.model);
    const MetricsRow& last = r.metrics.back();
    std::printf("%s src_acc=%.6f tgt_acc=%.6f omega=%.6f metrics=%s\n",
                e.config().task.name().c_str(), last.src_acc, last.tgt_acc,
                r.omega_history.back().second,
                (dir / (stem + "_metrics.csv")).string().c_str());
  }
}

template <typename F>
void cmd_strategy(const Options& o, F run) {
  for (const auto& cfg : configs(o)) {
    Experiment e(cfg);
    print(cfg.task.name(), run(e));
  }
}

void cmd_report(const Options& o) {
  const auto r = harness::report(o.out);
  for (const auto& t : r.tasks) {
    std::printf("%s:", t.task.c_str());
    for (const auto& s : t.strategies) std::printf(" %s", s.c_str());
    std::printf("\n");
  }
  for (const auto& m : r.missing) std::fprintf(stderr, "missing run file: %s\n", m.c_str());
}

void add_options(CLI::App& app, Options& o) {
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--seed", o.seed, "Base seed for runs (repeat r uses seed + r)");
  app.add_option("--data_seed", o.data_seed, "Dataset seed (default: --seed)");
  app.add_option("--scenario", o.scenario, "marginal|conditional|mixed")
      ->check(CLI::IsMember({"marginal", "conditional", "mixed"}));
  app.add_option("--magnitude", o.magnitude, "Shift magnitude");
  app.add_option("--conditional_magnitude", o.conditional_magnitude,
                 "Conditional part of a mixed shift");
  app.add_option("--classes", o.classes, "Number of classes");
  app.add_option("--dim", o.dim, "Feature dimension");
  app.add_option("--spread", o.spread, "Cluster spread");
  app.add_option("--n_source", o.n_source, "Source samples");
  app.add_option("--n_target", o.n_target, "Target samples");
  app.add_flag("--protocol", o.protocol,
                 "Run the four default tasks instead of --scenario/--magnitude");
  app.add_option("--omega", o.omega, "fixed:<v> or dynamic (train only)");
  app.add_option("--repeats", o.repeats, "Seeds per strategy");
  app.add_option("--t", o.t, "Random guessing trials");
  app.add_option("--epochs", o.train.epochs, "Training epochs");
  app.add_option("--lambda", o.train.lambda, "Adversarial weight");
  app.add_option("--batch_size", o.train.batch_size, "Batch size (half per domain)");
  app.add_option("--eta0", o.train.eta0, "Initial learning rate");
  app.add_option("--alpha", o.train.alpha, "Learning-rate decay alpha");
  app.add_option("--beta", o.train.beta, "Learning-rate decay beta");
  app.add_option("--momentum", o.train.momentum, "SGD momentum");
  app.add_option("--classifier_lr_mult", o.train.classifier_lr_mult,
                 "Classifier learning-rate multiplier");
  app.add_option("--feature_dim", o.train.net.feature_dim, "Feature width");
  app.add_option("--hidden_width", o.train.net.hidden_width, "Extractor hidden width");
  app.add_option("--disc_hidden", o.train.net.discriminator_hidden,
                 "Discriminator hidden width");
  app.add_option("--class_weight_grad", o.train.objective.class_weight_gradient,
                 "Backpropagate through the class weights of local inputs");
  app.add_option("--local_class_mean", o.train.objective.local_class_mean,
                 "Average the local loss over classes instead of summing");
  app.add_option("--local_statistic", o.local_statistic,
                 "members|batch: local loss fed to the omega estimate")
      ->check(CLI::IsMember({"members", "batch"}));
  app.add_option("--mass_threshold", o.train.omega_options.mass_threshold,
                 "Mask classes below this share of samples");
  app.add_option("--omega_ema", o.train.omega_options.ema, "Omega smoothing (0 = off)");
  app.add_option("--timing", o.train.record_time, "Record wall time in metrics");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic adversarial adaptation experiments", "daan"};
  app.set_config("--config", "", "Flat key = value file; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  Options o;
  add_options(app, o);

  auto* gen = app.add_subcommand("gen", "Write the task datasets");
  auto* train = app.add_subcommand("train", "Single fit with --omega");
  auto* grid = app.add_subcommand("grid", "Grid search over omega in {0, 0.1, ..., 1}");
  auto* random = app.add_subcommand("random", "Random guessing with --t draws");
  auto* avg = app.add_subcommand("avg", "Average over the omega grid");
  auto* dynamic = app.add_subcommand("dynamic", "Per-epoch omega estimate");
  auto* rep = app.add_subcommand("report", "Summarize an output directory");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "daan: %s\n", e.what());
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (gen->parsed()) cmd_gen(o);
    if (train->parsed()) cmd_train(o);
    if (grid->parsed()) cmd_strategy(o, [](Experiment& e) { return e.run_grid(); });
    if (avg->parsed()) cmd_strategy(o, [](Experiment& e) { return e.run_average(); });
    if (dynamic->parsed()) cmd_strategy(o, [](Experiment& e) { return e.run_dynamic(); });
    if (random->parsed()) {
      cmd_strategy(o, [&](Experiment& e) { return e.run_random(o.t); });
    }
    if (rep->parsed()) cmd_report(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "daan: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
