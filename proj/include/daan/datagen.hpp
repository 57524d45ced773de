#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "daan/autodiff.hpp"

namespace daan {

/// Labeled samples: n x d features and n class indices in [0, C).
struct LabeledDomain {
  Matrix x;
  std::vector<int> y;
  int num_classes = 0;

  std::size_t size() const { return y.size(); }
  /// Throws unless n >= C, every class occurs, and all values are finite.
  void validate() const;
};

/// Target features. The held-out labels are only reachable through
/// eval_labels(), which the trainer's loss path never receives.
class TargetDomain {
 public:
  TargetDomain() = default;
  TargetDomain(Matrix x, std::vector<int> eval_labels)
      : x_(std::move(x)), eval_(std::move(eval_labels)) {}

  const Matrix& features() const { return x_; }
  const std::vector<int>& eval_labels() const { return eval_; }
  std::size_t size() const { return static_cast<std::size_t>(x_.rows()); }

 private:
  Matrix x_;
  std::vector<int> eval_;
};

enum class ShiftKind { kMarginal, kConditional, kMixed };

const char* to_string(ShiftKind kind);
ShiftKind parse_shift_kind(const std::string& name);

struct ShiftScenario {
  ShiftKind kind = ShiftKind::kMarginal;
  double magnitude = 1.0;
  /// Conditional magnitude of a mixed scenario; unused otherwise.
  double conditional_magnitude = 1.0;
  std::uint64_t seed = 0;
};

/// C isotropic Gaussian clusters whose means sit on a circle of radius
/// 4 * spread in the first two dimensions; the other dimensions are noise.
struct ClusterModel {
  int num_classes = 3;
  int dim = 2;
  double spread = 1.0;

  Matrix class_means() const;  // C x d
};

/// n samples with balanced class counts (the first n % C classes get one
/// extra), drawn around the given class means.
LabeledDomain sample_clusters(const ClusterModel& model, const Matrix& means,
                              std::size_t n, std::uint64_t seed);

LabeledDomain make_source(std::size_t n, int num_classes, int dim,
                          double spread, std::uint64_t seed);

/// Fresh draw from the source model, rotated by magnitude * 15 degrees about
/// the origin in the first two dimensions and translated by
/// magnitude * spread along a seeded random direction in that plane.
TargetDomain apply_marginal_shift(const ClusterModel& model, std::size_t n,
                                  double magnitude, std::uint64_t seed);

/// Fresh draw where each class mean is rotated about the global centroid by
/// magnitude times a seeded per-class angle, then recentred.
TargetDomain apply_conditional_shift(const ClusterModel& model, std::size_t n,
                                     double magnitude, std::uint64_t seed);

/// Dispatches on the scenario kind; a mixed scenario applies the conditional
/// shift and then the rigid marginal motion.
TargetDomain make_target(const ClusterModel& model, std::size_t n,
                         const ShiftScenario& scenario);

/// Source and target of one task, generated from a single seed.
struct DomainPair {
  LabeledDomain source;
  TargetDomain target;
};

DomainPair make_task(const ClusterModel& model, std::size_t n_source,
                     std::size_t n_target, const ShiftScenario& scenario);

// CSV persistence, 17 significant digits.
//   source:  x0,...,x{d-1},label
//   target:  <stem>_x.csv (x0,...,x{d-1}) and <stem>_eval.csv (label)
void write_source_csv(const std::string& path, const LabeledDomain& domain);
LabeledDomain read_source_csv(const std::string& path, int num_classes = 0);
void write_target_csv(const std::string& stem, const TargetDomain& domain);
/// Features only; the eval file is read separately by evaluation code.
Matrix read_target_features(const std::string& stem);
std::vector<int> read_target_eval(const std::string& stem);
TargetDomain read_target_csv(const std::string& stem);

}  // namespace daan
