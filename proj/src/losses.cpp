#include "daan/losses.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>
#include <string>

namespace daan {

namespace {

void require_both_domains(std::span<const int> domains, const char* what) {
  bool src = false, tgt = false;
  for (int d : domains) {
    if (d == static_cast<int>(DomainLabel::kSource)) {
      src = true;
    } else if (d == static_cast<int>(DomainLabel::kTarget)) {
      tgt = true;
    } else {
      throw std::invalid_argument(std::string(what) + ": domain label " +
                                  std::to_string(d) + " is not 0 or 1");
    }
  }
  if (!src || !tgt) {
    throw std::invalid_argument(std::string(what) +
                                ": batch must contain source and target rows");
  }
}

}  // namespace

Var label_loss(const Var& class_probs_source, std::span<const int> labels) {
  if (labels.empty()) {
    throw std::invalid_argument("label_loss: empty source batch");
  }
  return mean_cross_entropy(class_probs_source, labels);
}

Var global_domain_loss(const Var& domain_probs, std::span<const int> domains) {
  require_both_domains(domains, "global_domain_loss");
  return mean_cross_entropy(domain_probs, domains);
}

LocalLoss local_domain_loss(std::span<const Var> domain_probs_per_class,
                            std::span<const int> domains, int num_classes,
                            bool class_mean) {
  if (num_classes < 2 ||
      domain_probs_per_class.size() != static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument(
        "local_domain_loss: got " +
        std::to_string(domain_probs_per_class.size()) +
        " discriminator outputs for " + std::to_string(num_classes) +
        " classes");
  }
  require_both_domains(domains, "local_domain_loss");
  LocalLoss out;
  for (const Var& probs : domain_probs_per_class) {
    out.per_class.push_back(mean_cross_entropy(probs, domains));
  }
  out.total = out.per_class.front();
  for (std::size_t c = 1; c < out.per_class.size(); ++c) {
    out.total = out.total + out.per_class[c];
  }
  if (class_mean) out.total = (1.0 / num_classes) * out.total;
  return out;
}

double total_loss(double label, double global, double local, double omega,
                  double lambda) {
  if (!(omega >= 0.0 && omega <= 1.0)) {
    throw std::invalid_argument("total_loss: omega must lie in [0, 1]");
  }
  if (!(lambda >= 0.0)) {
    throw std::invalid_argument("total_loss: lambda must be >= 0");
  }
  return label - lambda * ((1.0 - omega) * global + omega * local);
}

std::vector<int> Batch::domain_labels() const {
  std::vector<int> d(static_cast<std::size_t>(n_source() + n_target),
                     static_cast<int>(DomainLabel::kTarget));
  std::fill_n(d.begin(), n_source(), static_cast<int>(DomainLabel::kSource));
  return d;
}

ObjectiveGraph build_objective(Tape& tape, const BoundParams& params,
                               const Batch& batch, double omega, double lambda,
                               const ObjectiveOptions& options,
                               Realization realization) {
  total_loss(0, 0, 0, omega, lambda);  // range checks
  if (batch.x.rows() != batch.n_source() + batch.n_target) {
    throw std::invalid_argument("build_objective: batch rows do not match "
                                "source + target counts");
  }
  // A coefficient of -1 turns the reversal node into a plain pass-through.
  const double coeff =
      realization == Realization::kGradientReversal ? 1.0 : -1.0;
  const auto domains = batch.domain_labels();
  const int classes = static_cast<int>(params.local_disc.size());

  ObjectiveGraph g;
  const Var x = tape.constant(batch.x);
  const Var features = extract_features(params, x);
  g.class_probs = classify(params, features);
  g.label = label_loss(slice_rows(g.class_probs, 0, batch.n_source()),
                       batch.source_labels);
  g.global = global_domain_loss(global_domain_probs(params, features, coeff),
                                domains);
  const auto local_probs = local_domain_probs(params, features, g.class_probs,
                                              coeff,
                                              options.class_weight_gradient);
  g.local_probs = local_probs;
  g.local = local_domain_loss(local_probs, domains, classes,
                              options.local_class_mean);

  const double sign = realization == Realization::kGradientReversal ? 1.0 : -1.0;
  const Var domain_term =
      (1.0 - omega) * g.global + omega * g.local.total;
  g.objective = g.label + (sign * lambda) * domain_term;
  return g;
}

LossBundle loss_values(const ObjectiveGraph& graph, double omega,
                       double lambda) {
  LossBundle b;
  b.label = graph.label.scalar();
  b.global = graph.global.scalar();
  b.local = graph.local.total.scalar();
  for (const Var& v : graph.local.per_class) {
    b.per_class_local.push_back(v.scalar());
  }
  b.total = total_loss(b.label, b.global, b.local, omega, lambda);
  return b;
}

ClassMemberLosses class_member_losses(const ObjectiveGraph& graph,
                                      const Batch& batch) {
  const Matrix& probs = graph.class_probs.value();
  const auto classes = graph.local_probs.size();
  const Eigen::Index ns = batch.n_source();
  ClassMemberLosses out{std::vector<double>(classes, 0.0),
                        std::vector<double>(classes, 0.0)};
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    int c = 0;
    int domain = static_cast<int>(DomainLabel::kTarget);
    if (i < ns) {
      c = batch.source_labels[static_cast<std::size_t>(i)];
      domain = static_cast<int>(DomainLabel::kSource);
    } else {
      probs.row(i).maxCoeff(&c);
    }
    const auto k = static_cast<std::size_t>(c);
    const Matrix& d = graph.local_probs[k].value();
    out.loss[k] += cross_entropy<double>(
        std::span<const double>(d.row(i).data(), 2), domain);
    out.count[k] += 1.0;
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (out.count[k] > 0) out.loss[k] /= out.count[k];
  }
  return out;
}

double check_objective_gradients(const GradientCheckSetup& setup,
                                 std::uint64_t seed,
                                 const GradientCheckOptions<double>& check) {
  NetConfig net = setup.net;
  net.init_seed = seed;
  const DaanModel model = init_model(net);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, net.num_classes - 1);
  Batch batch;
  const int n_source = std::max(1, setup.batch_size / 2);
  batch.n_target = std::max(1, setup.batch_size - n_source);
  batch.x.resize(n_source + batch.n_target, net.input_dim);
  for (Eigen::Index i = 0; i < batch.x.size(); ++i) {
    batch.x.data()[i] = normal(rng);
  }
  for (int i = 0; i < n_source; ++i) batch.source_labels.push_back(label(rng));

  // Parameters travel as a flat list in visit() order.
  std::vector<Matrix> flat;
  model.params.visit(
      [&flat](ParamGroup, const Matrix& m) { flat.push_back(m); });

  const LossBuilder<double> build = [&](Tape& tape, std::span<const Var> vars) {
    std::size_t k = 0;
    const BoundParams bound =
        model.params.map<Var>([&](const Matrix&) { return vars[k++]; });
    return build_objective(tape, bound, batch, setup.omega, setup.lambda,
                           setup.options, Realization::kSignedObjective)
        .objective;
  };
  return check_gradients(build, std::move(flat), check);
}

}  // namespace daan
