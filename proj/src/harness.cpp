#include "daan/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "csv.hpp"

namespace daan::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) { return csv::format(v, 9); }

std::string exact(double v) { return csv::format(v, 17); }

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string omega_tag(std::optional<double> omega) {
  if (!omega) return "dynamic";
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, *omega).ptr;
  return "omega_" + std::string(buf, end);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for fewer than two values.
double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Per-seed aggregation of the trials of one strategy.
double aggregate(const std::string& strategy, const std::vector<double>& accs) {
  if (strategy == "grid") return *std::max_element(accs.begin(), accs.end());
  return mean(accs);
}

const std::vector<std::string> kStrategies = {"dynamic", "grid", "random",
                                              "average"};

}  // namespace

std::string TaskSpec::name() const {
  std::string n = std::string(to_string(scenario.kind)) + "_m" +
                  csv::format(scenario.magnitude, 6);
  if (scenario.kind == ShiftKind::kMixed) {
    n += "_c" + csv::format(scenario.conditional_magnitude, 6);
  }
  return n + "_s" + std::to_string(scenario.seed);
}

std::vector<TaskSpec> default_tasks(std::uint64_t seed) {
  std::vector<TaskSpec> tasks;
  const std::pair<ShiftKind, double> grid[] = {{ShiftKind::kMarginal, 1.5},
                                                {ShiftKind::kMarginal, 3.0},
                                                {ShiftKind::kConditional, 0.5},
                                                {ShiftKind::kConditional, 1.0}};
  for (const auto& [kind, magnitude] : grid) {
    TaskSpec t;
    t.scenario.kind = kind;
    t.scenario.magnitude = magnitude;
    t.scenario.seed = seed;
    tasks.push_back(t);
  }
  return tasks;
}

void ExperimentConfig::validate() const {
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (random_trials < 1) throw std::invalid_argument("random t must be >= 1");
  if (!(task.scenario.magnitude >= 0) || !std::isfinite(task.scenario.magnitude)) {
    throw std::invalid_argument("magnitude must be finite and >= 0");
  }
  if (task.model.num_classes < 2) throw std::invalid_argument("classes must be >= 2");
  if (task.model.dim < 2) throw std::invalid_argument("dim must be >= 2");
  if (!(task.model.spread > 0)) throw std::invalid_argument("spread must be > 0");
  if (task.n_source < static_cast<std::size_t>(task.model.num_classes) ||
      task.n_target < 1) {
    throw std::invalid_argument("too few samples for the number of classes");
  }
  if (out_dir.empty()) throw std::invalid_argument("output directory is empty");
  train.validate();
}

std::string config_text(const ExperimentConfig& cfg) {
  const auto& s = cfg.task.scenario;
  const auto& t = cfg.train;
  std::ostringstream o;
  o << "scenario = " << to_string(s.kind) << '\n'
    << "magnitude = " << exact(s.magnitude) << '\n'
    << "conditional_magnitude = " << exact(s.conditional_magnitude) << '\n'
    << "data_seed = " << s.seed << '\n'
    << "classes = " << cfg.task.model.num_classes << '\n'
    << "dim = " << cfg.task.model.dim << '\n'
    << "spread = " << exact(cfg.task.model.spread) << '\n'
    << "n_source = " << cfg.task.n_source << '\n'
    << "n_target = " << cfg.task.n_target << '\n'
    << "lambda = " << exact(t.lambda) << '\n'
    << "batch_size = " << t.batch_size << '\n'
    << "epochs = " << t.epochs << '\n'
    << "eta0 = " << exact(t.eta0) << '\n'
    << "alpha = " << exact(t.alpha) << '\n'
    << "beta = " << exact(t.beta) << '\n'
    << "momentum = " << exact(t.momentum) << '\n'
    << "classifier_lr_mult = " << exact(t.classifier_lr_mult) << '\n'
    << "feature_dim = " << t.net.feature_dim << '\n'
    << "hidden_width = " << t.net.hidden_width << '\n'
    << "disc_hidden = " << t.net.discriminator_hidden << '\n'
    << "seed = " << t.seed << '\n'
    << "class_weight_grad = " << (t.objective.class_weight_gradient ? 1 : 0) << '\n'
    << "local_class_mean = " << (t.objective.local_class_mean ? 1 : 0) << '\n'
    << "mass_threshold = " << exact(t.omega_options.mass_threshold) << '\n'
    << "omega_ema = " << exact(t.omega_options.ema) << '\n'
    << "local_statistic = " << to_string(t.local_statistic) << '\n'
    << "timing = " << (t.record_time ? 1 : 0) << '\n';
  return o.str();
}

double omega_error(double method_acc, double grid_best_acc) {
  return (grid_best_acc - method_acc) * 100.0;
}

std::vector<double> grid_omegas() {
  std::vector<double> v;
  for (int i = 0; i <= 10; ++i) v.push_back(i / 10.0);
  return v;
}

double RunOutcome::final_target_accuracy() const {
  if (metrics.empty()) throw std::runtime_error("run has no metrics");
  return metrics.back().tgt_acc;
}

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.train.net.input_dim = cfg_.task.model.dim;
  cfg_.train.net.num_classes = cfg_.task.model.num_classes;
  cfg_.validate();

  const fs::path dir = task_dir();
  fs::create_directories(dir / "runs");
  fs::create_directories(dir / "results");
  fs::create_directories(dir / "data");
  const fs::path config_file = dir / "config.txt";
  const std::string text = config_text(cfg_);
  if (fs::exists(config_file)) {
    if (read_text(config_file) != text) {
      throw std::runtime_error(dir.string() +
                               " holds runs from a different configuration");
    }
  } else {
    write_text_atomic(config_file, text);
  }
}

fs::path Experiment::task_dir() const { return cfg_.out_dir / cfg_.task.name(); }

void Experiment::load_data() {
  if (source_) return;
  const fs::path data = task_dir() / "data";
  const std::string src = (data / "source.csv").string();
  const std::string stem = (data / "target").string();
  if (!fs::exists(src) || !fs::exists(stem + "_x.csv") ||
      !fs::exists(stem + "_eval.csv")) {
    const DomainPair pair = make_task(cfg_.task.model, cfg_.task.n_source,
                                      cfg_.task.n_target, cfg_.task.scenario);
    write_source_csv(src, pair.source);
    write_target_csv(stem, pair.target);
  }
  source_ = read_source_csv(src, cfg_.task.model.num_classes);
  target_x_ = read_target_features(stem);
  target_eval_ = read_target_eval(stem);
}

const LabeledDomain& Experiment::source() {
  load_data();
  return *source_;
}

const Matrix& Experiment::target_features() {
  load_data();
  return target_x_;
}

const std::vector<int>& Experiment::target_eval() {
  load_data();
  return target_eval_;
}

std::uint64_t Experiment::seed_for(int repeat) const {
  return cfg_.train.seed + static_cast<std::uint64_t>(repeat);
}

fs::path Experiment::run_path(std::optional<double> fixed_omega,
                              int repeat) const {
  return task_dir() / "runs" /
         (omega_tag(fixed_omega) + "_seed" + std::to_string(seed_for(repeat)) +
          ".csv");
}

RunOutcome Experiment::run(std::optional<double> fixed_omega, int repeat) {
  const fs::path path = run_path(fixed_omega, repeat);
  if (fs::exists(path)) return {read_metrics_csv(path.string()), true};

  TrainConfig tc = cfg_.train;
  tc.omega = fixed_omega ? OmegaSetting::Fixed(*fixed_omega) : OmegaSetting::Dynamic();
  tc.seed = seed_for(repeat);
  tc.net.init_seed = tc.seed;
  load_data();
  const FitResult r = fit(tc, *source_, target_x_,
                          std::span<const int>(target_eval_));
  write_metrics_csv(path.string(), r.metrics);
  return {read_metrics_csv(path.string()), false};
}

std::vector<double> Experiment::random_omegas(int repeat, int trials) const {
  std::mt19937_64 rng(mix(seed_for(repeat), 0x72616e646f6dULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(trials));
  for (double& w : v) w = u(rng);
  return v;
}

std::optional<std::vector<double>> Experiment::grid_reference() const {
  std::vector<double> best;
  for (int r = 0; r < cfg_.repeats; ++r) {
    double b = -1;
    for (double w : grid_omegas()) {
      const fs::path p = run_path(w, r);
      if (!fs::exists(p)) return std::nullopt;
      const auto rows = read_metrics_csv(p.string());
      if (rows.empty()) return std::nullopt;
      b = std::max(b, rows.back().tgt_acc);
    }
    best.push_back(b);
  }
  return best;
}

void Experiment::finish(StrategyResult& result, const std::string& file) const {
  result.mean_accuracy = mean(result.per_run);
  result.std_accuracy = stddev(result.per_run);
  if (result.strategy == "grid") {
    result.omega_error = 0.0;
  } else if (const auto ref = grid_reference()) {
    std::vector<double> errs;
    for (std::size_t i = 0; i < result.per_run.size(); ++i) {
      errs.push_back(omega_error(result.per_run[i], (*ref)[i]));
    }
    result.omega_error = mean(errs);
  } else {
    result.omega_error = std::numeric_limits<double>::quiet_NaN();
  }

  csv::Writer w((task_dir() / "results" / file).string(),
                {"seed", "omega", "accuracy", "run"});
  for (std::size_t r = 0; r < result.per_run.size(); ++r) {
    const int repeat = static_cast<int>(r);
    const std::string seed = std::to_string(seed_for(repeat));
    if (result.strategy == "dynamic") {
      w.row({seed, "dynamic", exact(result.per_run[r]),
             run_path(std::nullopt, repeat).filename().string()});
      continue;
    }
    for (std::size_t k = 0; k < result.trial_omegas[r].size(); ++k) {
      const double omega = result.trial_omegas[r][k];
      w.row({seed, exact(omega), exact(result.trial_accuracies[r][k]),
             run_path(omega, repeat).filename().string()});
    }
  }
  w.commit();
}

StrategyResult Experiment::run_dynamic() {
  StrategyResult res;
  res.strategy = "dynamic";
  for (int r = 0; r < cfg_.repeats; ++r) {
    res.per_run.push_back(run(std::nullopt, r).final_target_accuracy());
  }
  finish(res, "dynamic.csv");
  return res;
}

namespace {

StrategyResult fixed_strategy(Experiment& e, const std::string& name,
                              const std::function<std::vector<double>(int)>& omegas) {
  StrategyResult res;
  res.strategy = name;
  for (int r = 0; r < e.config().repeats; ++r) {
    std::vector<double> ws = omegas(r);
    std::vector<double> accs;
    for (double w : ws) accs.push_back(e.run(w, r).final_target_accuracy());
    if (name == "grid") {
      const auto it = std::max_element(accs.begin(), accs.end());
      res.best_omega.push_back(ws[static_cast<std::size_t>(it - accs.begin())]);
    }
    res.per_run.push_back(aggregate(name, accs));
    res.trial_omegas.push_back(std::move(ws));
    res.trial_accuracies.push_back(std::move(accs));
  }
  return res;
}

}  // namespace

StrategyResult Experiment::run_grid() {
  auto res = fixed_strategy(*this, "grid", [](int) { return grid_omegas(); });
  finish(res, "grid.csv");
  return res;
}

StrategyResult Experiment::run_average() {
  auto res = fixed_strategy(*this, "average", [](int) { return grid_omegas(); });
  finish(res, "average.csv");
  return res;
}

StrategyResult Experiment::run_random(int trials) {
  if (trials < 1) throw std::invalid_argument("random t must be >= 1");
  auto res = fixed_strategy(*this, "random",
                            [&](int r) { return random_omegas(r, trials); });
  finish(res, "random.csv");
  return res;
}

ReportResult report(const fs::path& out_dir) {
  if (!fs::is_directory(out_dir)) {
    throw std::runtime_error(out_dir.string() + " is not a directory");
  }
  std::vector<fs::path> task_dirs;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    if (entry.is_directory() && fs::is_directory(entry.path() / "results")) {
      task_dirs.push_back(entry.path());
    }
  }
  std::sort(task_dirs.begin(), task_dirs.end());

  ReportResult out;
  std::size_t total_runs = 0;
  for (const fs::path& dir : task_dirs) {
    // strategy -> seed -> accuracies of the runs present
    std::map<std::string, std::map<std::uint64_t, std::vector<double>>> acc;
    std::vector<std::pair<std::uint64_t, fs::path>> dynamic_runs;
    for (const std::string& strategy : kStrategies) {
      const fs::path listing = dir / "results" / (strategy + ".csv");
      if (!fs::exists(listing)) continue;
      const csv::Table t = csv::read(listing.string());
      if (t.header != std::vector<std::string>{"seed", "omega", "accuracy", "run"}) {
        throw std::runtime_error(listing.string() + ": unexpected header");
      }
      auto& per_seed = acc[strategy];
      for (const auto& row : t.rows) {
        const fs::path run = dir / "runs" / row[3];
        const auto seed = static_cast<std::uint64_t>(std::stoull(row[0]));
        if (!fs::exists(run)) {
          out.missing.push_back(run.string());
          continue;
        }
        const auto metrics = read_metrics_csv(run.string());
        if (metrics.empty()) {
          out.missing.push_back(run.string());
          continue;
        }
        per_seed[seed].push_back(metrics.back().tgt_acc);
        ++total_runs;
        if (strategy == "dynamic") dynamic_runs.emplace_back(seed, run);
      }
    }
    if (acc.empty()) continue;

    std::map<std::uint64_t, double> grid_best;
    if (acc.count("grid")) {
      for (const auto& [seed, accs] : acc["grid"]) {
        if (!accs.empty()) grid_best[seed] = aggregate("grid", accs);
      }
    }

    TaskSummary summary;
    summary.task = dir.filename().string();
    csv::Writer w((dir / "summary.csv").string(),
                  {"strategy", "mean_accuracy", "std", "omega_error", "seeds"});
    for (const std::string& strategy : kStrategies) {
      if (!acc.count(strategy)) continue;
      std::vector<double> per_run;
      std::vector<double> errs;
      for (const auto& [seed, accs] : acc[strategy]) {
        if (accs.empty()) continue;
        const double a = aggregate(strategy, accs);
        per_run.push_back(a);
        if (grid_best.count(seed)) errs.push_back(omega_error(a, grid_best[seed]));
      }
      if (per_run.empty()) continue;
      w.row({strategy, fmt(mean(per_run)), fmt(stddev(per_run)),
             fmt(errs.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(errs)),
             std::to_string(per_run.size())});
      summary.strategies.push_back(strategy);
    }
    w.commit();

    for (const auto& [seed, run] : dynamic_runs) {
      const auto metrics = read_metrics_csv(run.string());
      csv::Writer tw((dir / ("omega_trajectory_seed" + std::to_string(seed) + ".csv"))
                         .string(),
                     {"epoch", "omega"});
      for (const auto& m : metrics) {
        tw.row({std::to_string(m.epoch), fmt(m.omega)});
      }
      tw.commit();
    }
    out.tasks.push_back(std::move(summary));
  }
  if (total_runs == 0) {
    std::ostringstream msg;
    msg << "no completed runs under " << out_dir.string() << " (0 runs found";
    if (!out.missing.empty()) msg << ", " << out.missing.size() << " missing";
    msg << ")";
    throw std::runtime_error(msg.str());
  }
  return out;
}

}  // namespace daan::harness
