#include "daan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "csv.hpp"

namespace daan {

OmegaSetting OmegaSetting::Fixed(double v) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument("fixed omega must lie in [0, 1]");
  }
  return {false, v};
}

OmegaSetting OmegaSetting::parse(const std::string& text) {
  if (text == "dynamic") return Dynamic();
  const std::string prefix = "fixed:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string num = text.substr(prefix.size());
    char* end = nullptr;
    const double v = std::strtod(num.c_str(), &end);
    if (num.empty() || *end != '\0') {
      throw std::invalid_argument("bad omega value '" + num + "'");
    }
    return Fixed(v);
  }
  throw std::invalid_argument("omega must be 'dynamic' or 'fixed:<v>', got '" +
                              text + "'");
}

std::string OmegaSetting::str() const {
  return dynamic ? "dynamic" : "fixed:" + csv::format(value, 17);
}

const char* to_string(LocalStatistic s) {
  return s == LocalStatistic::kClassMembers ? "members" : "batch";
}

LocalStatistic parse_local_statistic(const std::string& name) {
  if (name == "members") return LocalStatistic::kClassMembers;
  if (name == "batch") return LocalStatistic::kBatchMean;
  throw std::invalid_argument("local statistic must be 'members' or 'batch', "
                              "got '" + name + "'");
}

void TrainConfig::validate() const {
  net.validate();
  if (!(eta0 > 0.0)) throw std::invalid_argument("eta0 must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw std::invalid_argument("alpha and beta must be >= 0");
  }
  if (!(classifier_lr_mult > 0.0)) {
    throw std::invalid_argument("classifier_lr_mult must be > 0");
  }
  if (!omega.dynamic && !(omega.value >= 0.0 && omega.value <= 1.0)) {
    throw std::invalid_argument("fixed omega must lie in [0, 1]");
  }
}

double lr_at(double k, const TrainConfig& cfg) {
  if (!(k >= 0.0 && k <= 1.0)) {
    throw std::invalid_argument("lr_at: progress must lie in [0, 1]");
  }
  return cfg.eta0 / std::pow(1.0 + cfg.alpha * k, cfg.beta);
}

std::size_t steps_per_epoch(std::size_t n_source, std::size_t n_target,
                            int batch_size) {
  const std::size_t half = static_cast<std::size_t>(std::max(1, batch_size / 2));
  const std::size_t longer = std::max(n_source, n_target);
  return (longer + half - 1) / half;
}

TrainingState::TrainingState(DaanModel m, const TrainConfig& cfg,
                             std::size_t total)
    : model(std::move(m)),
      velocity(zeros_like(model.params)),
      omega(static_cast<std::size_t>(model.config.num_classes),
            cfg.omega_options),
      rng(cfg.seed),
      total_steps(total) {}

void sgd_step(ParamSet& params, ParamSet& velocity, const ParamSet& grads,
              double lr, const TrainConfig& cfg) {
  std::vector<Matrix*> v;
  velocity.visit([&v](ParamGroup, Matrix& m) { v.push_back(&m); });
  std::vector<const Matrix*> g;
  grads.visit([&g](ParamGroup, const Matrix& m) { g.push_back(&m); });
  std::size_t k = 0;
  params.visit([&](ParamGroup group, Matrix& p) {
    const double rate =
        group == ParamGroup::kClassifier ? lr * cfg.classifier_lr_mult : lr;
    Matrix& vel = *v[k];
    vel = cfg.momentum * vel + *g[k];
    p -= rate * vel;
    ++k;
  });
}

namespace {

// Shuffled index stream that reshuffles when exhausted.
class IndexStream {
 public:
  IndexStream(std::size_t n, std::mt19937_64& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64& rng_;
  std::size_t pos_ = 0;
};

}  // namespace

EpochLosses train_epoch(TrainingState& state, const LabeledDomain& source,
                        const Matrix& target_x, const TrainConfig& cfg,
                        double omega) {
  const std::size_t ns = source.size();
  const auto nt = static_cast<std::size_t>(target_x.rows());
  if (ns == 0 || nt == 0) {
    throw std::invalid_argument("train_epoch: both domains must be nonempty");
  }
  if (source.x.cols() != target_x.cols()) {
    throw std::invalid_argument("train_epoch: source and target dimensions "
                                "differ");
  }
  const std::size_t half = static_cast<std::size_t>(cfg.batch_size / 2);
  const std::size_t longer = std::max(ns, nt);
  const std::size_t steps = steps_per_epoch(ns, nt, cfg.batch_size);
  const auto classes = static_cast<std::size_t>(state.model.config.num_classes);
  const auto d = source.x.cols();

  IndexStream src_stream(ns, state.rng);
  IndexStream tgt_stream(nt, state.rng);

  EpochLosses out;
  out.per_class_local.assign(classes, 0.0);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t count = std::min(half, longer - s * half);
    Batch batch;
    batch.x.resize(static_cast<Eigen::Index>(2 * count), d);
    batch.n_target = static_cast<Eigen::Index>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = src_stream.next();
      batch.x.row(static_cast<Eigen::Index>(i)) =
          source.x.row(static_cast<Eigen::Index>(j));
      batch.source_labels.push_back(source.y[j]);
    }
    for (std::size_t i = 0; i < count; ++i) {
      batch.x.row(static_cast<Eigen::Index>(count + i)) =
          target_x.row(static_cast<Eigen::Index>(tgt_stream.next()));
    }

    Tape tape;
    const BoundParams bound = bind(tape, state.model.params);
    const ObjectiveGraph graph =
        build_objective(tape, bound, batch, omega, cfg.lambda, cfg.objective,
                        Realization::kGradientReversal);
    tape.backward(graph.objective);
    const ParamSet grads = gradients(tape, bound);

    const double progress =
        state.total_steps == 0
            ? 0.0
            : std::min(1.0, static_cast<double>(state.step) /
                                static_cast<double>(state.total_steps));
    const double lr = lr_at(progress, cfg);
    sgd_step(state.model.params, state.velocity, grads, lr, cfg);
    ++state.step;

    const LossBundle losses = loss_values(graph, omega, cfg.lambda);
    out.label += losses.label;
    out.global += losses.global;
    out.local += losses.local;
    for (std::size_t c = 0; c < classes; ++c) {
      out.per_class_local[c] += losses.per_class_local[c];
    }
    if (cfg.local_statistic == LocalStatistic::kClassMembers) {
      const ClassMemberLosses members = class_member_losses(graph, batch);
      state.omega.accumulate(losses.global, members.loss, members.count,
                             2 * count);
    } else {
      const Eigen::RowVectorXd mass =
          graph.class_probs.value().colwise().sum();
      state.omega.accumulate(
          losses.global, losses.per_class_local,
          std::span<const double>(mass.data(),
                                  static_cast<std::size_t>(mass.size())),
          2 * count);
    }
    out.last_lr = lr;
    ++out.batches;
  }
  const double n = static_cast<double>(out.batches);
  out.label /= n;
  out.global /= n;
  out.local /= n;
  for (double& v : out.per_class_local) v /= n;
  return out;
}

Matrix predict_proba(const DaanModel& model, const Matrix& x) {
  Tape tape;
  const BoundParams bound = model.params.map<Var>(
      [&tape](const Matrix& m) { return tape.constant(m); });
  return classify(bound, extract_features(bound, tape.constant(x))).value();
}

double accuracy(const Matrix& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(probs.rows()) +
                                " predictions");
  }
  if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate(const DaanModel& model, const Matrix& x,
                std::span<const int> labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(x.rows()) +
                                " samples");
  }
  return accuracy(predict_proba(model, x), labels);
}

FitResult fit(const TrainConfig& cfg, const LabeledDomain& source,
              const Matrix& target_x,
              std::optional<std::span<const int>> target_eval) {
  cfg.validate();
  source.validate();
  if (source.num_classes != cfg.net.num_classes) {
    throw std::invalid_argument("fit: source has " +
                                std::to_string(source.num_classes) +
                                " classes, network expects " +
                                std::to_string(cfg.net.num_classes));
  }
  if (source.x.cols() != cfg.net.input_dim ||
      target_x.cols() != cfg.net.input_dim) {
    throw std::invalid_argument("fit: data dimension does not match input_dim");
  }
  if (target_x.rows() == 0) {
    throw std::invalid_argument("fit: target domain is empty");
  }
  if (target_eval &&
      target_eval->size() != static_cast<std::size_t>(target_x.rows())) {
    throw std::invalid_argument("fit: eval labels do not match target size");
  }

  const std::size_t per_epoch = steps_per_epoch(
      source.size(), static_cast<std::size_t>(target_x.rows()), cfg.batch_size);
  TrainingState state(init_model(cfg.net), cfg,
                      per_epoch * static_cast<std::size_t>(cfg.epochs));

  FitResult result{{}, {}, {}, {}, {}};
  double omega = cfg.omega.dynamic ? state.omega.current() : cfg.omega.value;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const EpochLosses losses = train_epoch(state, source, target_x, cfg, omega);

    const double global_mean = state.omega.epoch_global_mean();
    const double estimate = state.omega.epoch_update();
    result.global_loss.push_back(global_mean);
    result.global_distance.push_back(a_distance(global_mean));

    MetricsRow row;
    row.epoch = epoch;
    row.loss_y = losses.label;
    row.loss_g = losses.global;
    row.loss_l = losses.local;
    row.omega = omega;
    row.lr = losses.last_lr;
    row.src_acc = evaluate(state.model, source.x, source.y);
    row.tgt_acc = target_eval ? evaluate(state.model, target_x, *target_eval)
                              : std::numeric_limits<double>::quiet_NaN();
    if (cfg.record_time) {
      row.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    }
    result.metrics.push_back(row);
    if (cfg.omega.dynamic) omega = estimate;
  }
  if (cfg.omega.dynamic) {
    result.omega_history = state.omega.history();
  } else {
    for (int e = 0; e <= cfg.epochs; ++e) {
      result.omega_history.emplace_back(e, cfg.omega.value);
    }
  }
  result.model = std::move(state.model);
  return result;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) {
    out << r.epoch;
    for (double v : {r.loss_y, r.loss_g, r.loss_l, r.omega, r.lr, r.src_acc,
                     r.tgt_acc, r.seconds}) {
      out << ',' << csv::format(v, 9);
    }
    out << '\n';
  }
  return out.str();
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows) {
  csv::Writer w(path, csv::split(kMetricsHeader));
  for (const MetricsRow& r : rows) {
    std::vector<std::string> cells{std::to_string(r.epoch)};
    for (double v : {r.loss_y, r.loss_g, r.loss_l, r.omega, r.lr, r.src_acc,
                     r.tgt_acc, r.seconds}) {
      cells.push_back(csv::format(v, 9));
    }
    w.row(cells);
  }
  w.commit();
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  const csv::Table t = csv::read(path);
  if (t.header != csv::split(kMetricsHeader)) {
    throw std::runtime_error(path + ": not a metrics file (header mismatch)");
  }
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& c = t.rows[i];
    auto num = [&](std::size_t k) { return csv::parse_number(c[k], i + 2, path); };
    MetricsRow r;
    r.epoch = static_cast<int>(num(0));
    r.loss_y = num(1);
    r.loss_g = num(2);
    r.loss_l = num(3);
    r.omega = num(4);
    r.lr = num(5);
    r.src_acc = num(6);
    r.tgt_acc = num(7);
    r.seconds = num(8);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace daan
