#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "daan/autodiff.hpp"

namespace daan {

struct NetConfig {
  int input_dim = 2;
  int feature_dim = 32;
  int hidden_width = 64;
  int num_classes = 2;
  int discriminator_hidden = 64;
  std::uint64_t init_seed = 0;

  /// Throws std::invalid_argument on a non-positive dimension or C < 2.
  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

/// Domain label of a sample: source rows are 0, target rows are 1.
enum class DomainLabel : int { kSource = 0, kTarget = 1 };

/// Weight (in x out) and bias (1 x out) of one affine layer.
template <typename T>
struct DenseT {
  T weight;
  T bias;
};

/// Which optimizer group a parameter belongs to.
enum class ParamGroup { kExtractor, kClassifier, kGlobalDisc, kLocalDisc };

/// The full DAAN parameter set with leaves of type T. T = Matrix holds the
/// model itself (or a gradient of the same shape); T = Var holds the same
/// parameters bound to a tape.
template <typename T>
struct DaanParams {
  std::vector<DenseT<T>> extractor;                // input -> h -> h -> feature
  DenseT<T> classifier;                            // feature -> C
  std::vector<DenseT<T>> global_disc;              // feature -> dh -> 2
  std::vector<std::vector<DenseT<T>>> local_disc;  // C x (feature -> dh -> 2)

  /// Visits every leaf in a fixed order: extractor, classifier, global
  /// discriminator, then local discriminators by class.
  template <typename F>
  void visit(F&& f) {
    for (auto& l : extractor) {
      f(ParamGroup::kExtractor, l.weight);
      f(ParamGroup::kExtractor, l.bias);
    }
    f(ParamGroup::kClassifier, classifier.weight);
    f(ParamGroup::kClassifier, classifier.bias);
    for (auto& l : global_disc) {
      f(ParamGroup::kGlobalDisc, l.weight);
      f(ParamGroup::kGlobalDisc, l.bias);
    }
    for (auto& d : local_disc) {
      for (auto& l : d) {
        f(ParamGroup::kLocalDisc, l.weight);
        f(ParamGroup::kLocalDisc, l.bias);
      }
    }
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<DaanParams&>(*this).visit(
        [&f](ParamGroup g, T& leaf) { f(g, static_cast<const T&>(leaf)); });
  }

  template <typename U, typename F>
  DaanParams<U> map(F&& f) const {
    DaanParams<U> out;
    auto dense = [&f](const DenseT<T>& l) {
      return DenseT<U>{f(l.weight), f(l.bias)};
    };
    for (const auto& l : extractor) out.extractor.push_back(dense(l));
    out.classifier = dense(classifier);
    for (const auto& l : global_disc) out.global_disc.push_back(dense(l));
    for (const auto& d : local_disc) {
      auto& dst = out.local_disc.emplace_back();
      for (const auto& l : d) dst.push_back(dense(l));
    }
    return out;
  }
};

using ParamSet = DaanParams<Matrix>;
using BoundParams = DaanParams<Var>;

struct DaanModel {
  NetConfig config;
  ParamSet params;

  bool operator==(const DaanModel& other) const;
};

/// Glorot-uniform weights, zero biases; a pure function of cfg.
DaanModel init_model(const NetConfig& cfg);

/// Same shapes as the model, every entry zero.
ParamSet zeros_like(const ParamSet& params);

/// Registers every parameter as a tape variable.
BoundParams bind(Tape& tape, const ParamSet& params);

/// Collects gradients from the tape after backward().
ParamSet gradients(const Tape& tape, const BoundParams& bound);

std::vector<const Matrix*> flatten(const ParamSet& params);

Var extract_features(const BoundParams& p, const Var& x);
Var classify(const BoundParams& p, const Var& features);
Var global_domain_probs(const BoundParams& p, const Var& features,
                        double coeff);

/// Discriminator c sees features scaled row-wise by the class-c probability.
/// With class_weight_gradient false the probabilities enter as constants.
std::vector<Var> local_domain_probs(const BoundParams& p, const Var& features,
                                    const Var& class_probs, double coeff,
                                    bool class_weight_gradient = false);

// Checkpoint: text, versioned, bit-exact via hexadecimal floats.
inline constexpr const char* kCheckpointTag = "daan-checkpoint v1";

void write_checkpoint(std::ostream& out, const DaanModel& model);
DaanModel read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const DaanModel& model);
DaanModel load_checkpoint(const std::string& path);

}  // namespace daan
