#include "daan/omega.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace daan {

double a_distance(double loss) {
  const double l = std::clamp(loss, 0.0, 1.0);
  return std::clamp(2.0 * (1.0 - 2.0 * l), 0.0, 2.0);
}

double estimate_omega(double global_loss,
                      std::span<const double> per_class_losses,
                      const std::vector<bool>& class_mask, double previous) {
  if (class_mask.size() != per_class_losses.size()) {
    throw std::invalid_argument("estimate_omega: mask size mismatch");
  }
  double local_sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < per_class_losses.size(); ++c) {
    if (!class_mask[c]) continue;
    local_sum += a_distance(per_class_losses[c]);
    ++used;
  }
  if (used == 0) {
    throw std::invalid_argument("estimate_omega: every class is masked");
  }
  const double global = a_distance(global_loss);
  const double denom = global + local_sum / static_cast<double>(used);
  if (denom < 1e-9) return previous;
  return std::clamp(global / denom, 0.0, 1.0);
}

OmegaState::OmegaState(std::size_t num_classes, OmegaOptions options)
    : options_(options),
      class_loss_sums_(num_classes, 0.0),
      class_mass_(num_classes, 0.0) {
  if (num_classes < 1) {
    throw std::invalid_argument("OmegaState: need at least one class");
  }
  if (!(options_.ema >= 0.0 && options_.ema < 1.0)) {
    throw std::invalid_argument("OmegaState: ema must lie in [0, 1)");
  }
  history_.emplace_back(0, omega_);
}

void OmegaState::accumulate(double global_loss,
                            std::span<const double> per_class_losses,
                            std::span<const double> class_mass,
                            std::size_t batch_samples) {
  if (per_class_losses.size() != class_loss_sums_.size() ||
      class_mass.size() != class_mass_.size()) {
    throw std::invalid_argument("OmegaState::accumulate: expected " +
                                std::to_string(class_loss_sums_.size()) +
                                " classes");
  }
  auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
  if (bad(global_loss) ||
      std::any_of(per_class_losses.begin(), per_class_losses.end(), bad) ||
      std::any_of(class_mass.begin(), class_mass.end(), bad)) {
    throw std::invalid_argument(
        "OmegaState::accumulate: losses and masses must be finite and >= 0");
  }
  global_sum_ += global_loss;
  for (std::size_t c = 0; c < class_loss_sums_.size(); ++c) {
    class_loss_sums_[c] += class_mass[c] * per_class_losses[c];
    class_mass_[c] += class_mass[c];
  }
  ++batches_;
  samples_ += batch_samples;
}

double OmegaState::epoch_global_mean() const {
  if (batches_ == 0) {
    throw std::logic_error("OmegaState: no batches accumulated this epoch");
  }
  return global_sum_ / static_cast<double>(batches_);
}

std::vector<double> OmegaState::epoch_class_means() const {
  if (batches_ == 0) {
    throw std::logic_error("OmegaState: no batches accumulated this epoch");
  }
  std::vector<double> out(class_loss_sums_.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = class_mass_[c] > 0.0 ? class_loss_sums_[c] / class_mass_[c] : 0.0;
  }
  return out;
}

double OmegaState::epoch_update() {
  const double global = epoch_global_mean();
  const auto local = epoch_class_means();
  const double floor =
      options_.mass_threshold * static_cast<double>(samples_);
  std::vector<bool> mask(local.size());
  for (std::size_t c = 0; c < mask.size(); ++c) {
    mask[c] = class_mass_[c] >= floor;
  }

  double estimate = estimate_omega(global, local, mask, omega_);
  if (options_.ema > 0.0) {
    estimate = options_.ema * omega_ + (1.0 - options_.ema) * estimate;
  }
  omega_ = std::clamp(estimate, 0.0, 1.0);

  OmegaEpoch e;
  e.epoch = static_cast<int>(history_.size());
  e.omega = omega_;
  e.global_distance = a_distance(global);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < local.size(); ++c) {
    if (mask[c]) {
      sum += a_distance(local[c]);
      ++used;
    }
  }
  e.mean_local_distance = sum / static_cast<double>(used);
  epochs_.push_back(e);
  history_.emplace_back(e.epoch, omega_);

  global_sum_ = 0.0;
  std::fill(class_loss_sums_.begin(), class_loss_sums_.end(), 0.0);
  std::fill(class_mass_.begin(), class_mass_.end(), 0.0);
  batches_ = 0;
  samples_ = 0;
  return omega_;
}

}  // namespace daan
