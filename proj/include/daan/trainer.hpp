#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "daan/datagen.hpp"
#include "daan/losses.hpp"
#include "daan/net.hpp"
#include "daan/omega.hpp"

namespace daan {

/// Either the per-epoch estimate or a constant omega.
struct OmegaSetting {
  bool dynamic = true;
  double value = 1.0;  // used when !dynamic

  static OmegaSetting Dynamic() { return {true, 1.0}; }
  static OmegaSetting Fixed(double v);
  /// "dynamic" or "fixed:<v>".
  static OmegaSetting parse(const std::string& text);
  std::string str() const;
};

/// Which per-class discriminator loss feeds the omega estimate.
enum class LocalStatistic {
  /// Discriminator c's loss over class-c members (source label, target
  /// pseudo-label), weighted by member count.
  kClassMembers,
  /// Discriminator c's mean loss over the whole batch, weighted by the
  /// summed class-c probability.
  kBatchMean,
};

const char* to_string(LocalStatistic s);
LocalStatistic parse_local_statistic(const std::string& name);

struct TrainConfig {
  double lambda = 1.0;
  int batch_size = 32;
  int epochs = 30;
  double eta0 = 0.01;
  double alpha = 10.0;
  double beta = 0.75;
  double momentum = 0.9;
  double classifier_lr_mult = 10.0;
  OmegaSetting omega;
  NetConfig net;
  std::uint64_t seed = 0;  // minibatch shuffling
  ObjectiveOptions objective;
  OmegaOptions omega_options;
  LocalStatistic local_statistic = LocalStatistic::kClassMembers;
  /// Write measured wall time to the metrics; off keeps the CSV a pure
  /// function of the configuration.
  bool record_time = false;

  void validate() const;
};

struct MetricsRow {
  int epoch = 0;
  double loss_y = 0;
  double loss_g = 0;
  double loss_l = 0;
  double omega = 0;
  double lr = 0;
  double src_acc = 0;
  double tgt_acc = 0;  // NaN when no eval labels were supplied
  double seconds = 0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,loss_y,loss_g,loss_l,omega,lr,src_acc,tgt_acc,seconds";

/// eta0 / (1 + alpha k)^beta for training progress k in [0, 1].
double lr_at(double k, const TrainConfig& cfg);

/// ceil(max(n_s, n_t) / (batch_size / 2)).
std::size_t steps_per_epoch(std::size_t n_source, std::size_t n_target,
                            int batch_size);

/// Everything a run mutates.
struct TrainingState {
  DaanModel model;
  ParamSet velocity;
  OmegaState omega;
  std::mt19937_64 rng;
  std::size_t step = 0;
  std::size_t total_steps = 0;

  TrainingState(DaanModel m, const TrainConfig& cfg, std::size_t total);
};

struct EpochLosses {
  double label = 0;
  double global = 0;
  double local = 0;
  std::vector<double> per_class_local;
  std::size_t batches = 0;
  double last_lr = 0;
};

/// SGD with momentum: v = mu v + g, p -= lr v; classifier lr is scaled by
/// cfg.classifier_lr_mult.
void sgd_step(ParamSet& params, ParamSet& velocity, const ParamSet& grads,
              double lr, const TrainConfig& cfg);

/// One pass over the longer domain in balanced half-source/half-target
/// batches with a constant omega. Feeds batch statistics to state.omega.
EpochLosses train_epoch(TrainingState& state, const LabeledDomain& source,
                        const Matrix& target_x, const TrainConfig& cfg,
                        double omega);

/// Class probabilities for every row.
Matrix predict_proba(const DaanModel& model, const Matrix& x);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Matrix& probs, std::span<const int> labels);
double evaluate(const DaanModel& model, const Matrix& x,
                std::span<const int> labels);

struct FitResult {
  std::vector<MetricsRow> metrics;
  DaanModel model;
  std::vector<std::pair<int, double>> omega_history;
  /// Per epoch: epoch-mean global discriminator loss and its A-distance.
  std::vector<double> global_loss;
  std::vector<double> global_distance;
};

/// Trains from init_model(cfg.net). Target labels, when given, only feed
/// the tgt_acc column.
FitResult fit(const TrainConfig& cfg, const LabeledDomain& source,
              const Matrix& target_x,
              std::optional<std::span<const int>> target_eval = std::nullopt);

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows);
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

}  // namespace daan
