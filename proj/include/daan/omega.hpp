#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace daan {

/// Proxy A-distance 2(1 - 2L) with L clamped to [0, 1] and the result
/// clamped to [0, 2].
double a_distance(double loss);

/// d_g / (d_g + mean of unmasked d_l^c). Returns `previous` when the
/// denominator is below 1e-9. Throws if every class is masked.
double estimate_omega(double global_loss, std::span<const double> per_class_losses,
                      const std::vector<bool>& class_mask, double previous);

struct OmegaOptions {
  /// Classes whose epoch soft mass is below this fraction of the samples
  /// seen are left out of the local mean.
  double mass_threshold = 1e-6;
  /// 0 disables smoothing; otherwise new = a * old + (1 - a) * estimate.
  double ema = 0.0;
};

struct OmegaEpoch {
  int epoch = 0;
  double omega = 1.0;
  double global_distance = 0.0;
  double mean_local_distance = 0.0;
};

/// Per-run accumulator for the dynamic adversarial factor. omega starts at 1
/// and changes only in epoch_update().
class OmegaState {
 public:
  explicit OmegaState(std::size_t num_classes, OmegaOptions options = {});

  double current() const { return omega_; }
  std::size_t num_classes() const { return class_loss_sums_.size(); }

  /// Adds one batch. `class_mass` is the weight of each class in the batch
  /// (member count or summed class probability); per-class epoch means are
  /// weighted by it, the global mean is a plain mean over batches.
  void accumulate(double global_loss, std::span<const double> per_class_losses,
                  std::span<const double> class_mass,
                  std::size_t batch_samples);

  std::size_t batch_count() const { return batches_; }
  double epoch_global_mean() const;
  std::vector<double> epoch_class_means() const;

  /// Computes the new omega from the epoch means, records it, and resets
  /// the accumulators. Throws if no batch was accumulated.
  double epoch_update();

  /// (epoch, omega) with history()[0] == (0, 1).
  const std::vector<std::pair<int, double>>& history() const {
    return history_;
  }
  const std::vector<OmegaEpoch>& epochs() const { return epochs_; }

 private:
  OmegaOptions options_;
  double omega_ = 1.0;
  double global_sum_ = 0.0;
  std::vector<double> class_loss_sums_;
  std::vector<double> class_mass_;
  std::size_t batches_ = 0;
  std::size_t samples_ = 0;
  std::vector<std::pair<int, double>> history_;
  std::vector<OmegaEpoch> epochs_;
};

}  // namespace daan
