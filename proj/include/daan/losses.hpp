#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "daan/autodiff.hpp"
#include "daan/net.hpp"

namespace daan {

struct LossBundle {
  double label = 0;   // L_y
  double global = 0;  // L_g
  double local = 0;   // L_l
  std::vector<double> per_class_local;  // L_l^c
  double total = 0;   // L_y - lambda((1 - omega) L_g + omega L_l)
};

struct ObjectiveOptions {
  /// Let gradients flow through the class probabilities that weight the
  /// local discriminator inputs. Off: the probabilities are constants.
  bool class_weight_gradient = false;
  /// Divide the summed local loss by C.
  bool local_class_mean = false;
};

/// How the minus sign in front of the domain terms is realized.
enum class Realization {
  /// Minimize L_y + lambda * D with reversal layers before every
  /// discriminator (the training path).
  kGradientReversal,
  /// Differentiate L_y - lambda * D directly with no reversal.
  kSignedObjective,
};

/// Mean cross-entropy over source rows.
Var label_loss(const Var& class_probs_source, std::span<const int> labels);

/// Mean cross-entropy of 2-way domain predictions over a batch that must
/// contain both domains.
Var global_domain_loss(const Var& domain_probs, std::span<const int> domains);

struct LocalLoss {
  Var total;
  std::vector<Var> per_class;
};

/// Per-class means L_l^c and their sum L_l (or mean when class_mean).
LocalLoss local_domain_loss(std::span<const Var> domain_probs_per_class,
                            std::span<const int> domains, int num_classes,
                            bool class_mean = false);

/// L_y - lambda((1 - omega) L_g + omega L_l).
double total_loss(double label, double global, double local, double omega,
                  double lambda);

/// One minibatch: source rows first, then target rows.
struct Batch {
  Matrix x;
  std::vector<int> source_labels;
  Eigen::Index n_target = 0;

  Eigen::Index n_source() const {
    return static_cast<Eigen::Index>(source_labels.size());
  }
  std::vector<int> domain_labels() const;
};

struct ObjectiveGraph {
  Var objective;  // the node backward() is called on
  Var label;
  Var global;
  LocalLoss local;
  Var class_probs;
  std::vector<Var> local_probs;
};

ObjectiveGraph build_objective(Tape& tape, const BoundParams& params,
                               const Batch& batch, double omega, double lambda,
                               const ObjectiveOptions& options,
                               Realization realization);

LossBundle loss_values(const ObjectiveGraph& graph, double omega,
                       double lambda);

/// Loss of discriminator c over the members of class c only: source rows by
/// their label, target rows by their argmax pseudo-label.
struct ClassMemberLosses {
  std::vector<double> loss;   // 0 for a class without members
  std::vector<double> count;  // members per class
};

ClassMemberLosses class_member_losses(const ObjectiveGraph& graph,
                                      const Batch& batch);

/// Random small model and batch (deterministic in seed) for gradient checks
/// of the signed objective.
struct GradientCheckSetup {
  NetConfig net;
  int batch_size = 4;  // split evenly between source and target
  double omega = 0.5;
  double lambda = 1.0;
  ObjectiveOptions options{true, false};
};

/// Worst relative error of backward() against central differences over the
/// full objective.
double check_objective_gradients(const GradientCheckSetup& setup,
                                 std::uint64_t seed,
                                 const GradientCheckOptions<double>& check = {});

}  // namespace daan
