#include "daan/datagen.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "csv.hpp"

namespace daan {

namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void validate_model(const ClusterModel& m) {
  if (m.num_classes < 2) {
    throw std::invalid_argument("cluster model: need at least 2 classes");
  }
  if (m.dim < 2) {
    throw std::invalid_argument("cluster model: dimension must be >= 2");
  }
  if (!(m.spread >= 0.0) || !std::isfinite(m.spread)) {
    throw std::invalid_argument("cluster model: spread must be >= 0");
  }
}

void require_magnitude(double magnitude) {
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
    throw std::invalid_argument("shift magnitude must be finite and >= 0");
  }
}

// Rotates the first two columns by `angle` and adds `offset` to them.
void rigid_motion(Matrix& x, double angle, double dx, double dy) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double a = x(i, 0), b = x(i, 1);
    x(i, 0) = c * a - s * b + dx;
    x(i, 1) = s * a + c * b + dy;
  }
}

TargetDomain to_target(LabeledDomain&& d) {
  return TargetDomain(std::move(d.x), std::move(d.y));
}

Matrix conditional_means(const ClusterModel& model, double magnitude,
                         std::uint64_t seed) {
  Matrix means = model.class_means();
  std::mt19937_64 rng(mix(seed, 2));
  std::uniform_real_distribution<double> angle(30.0, 60.0);
  std::bernoulli_distribution flip(0.5);
  const Eigen::RowVectorXd centroid = means.colwise().mean();
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    const double sign = flip(rng) ? -1.0 : 1.0;
    const double t = magnitude * sign * angle(rng) * kDegree;
    const double a = means(c, 0) - centroid(0), b = means(c, 1) - centroid(1);
    means(c, 0) = centroid(0) + std::cos(t) * a - std::sin(t) * b;
    means(c, 1) = centroid(1) + std::sin(t) * a + std::cos(t) * b;
  }
  means.rowwise() -= means.colwise().mean() - centroid;
  const double before = (model.class_means().rowwise() - centroid).squaredNorm();
  const double after = (means.rowwise() - centroid).squaredNorm();
  if (after > 0.0) {
    const double k = std::sqrt(before / after);
    for (Eigen::Index c = 0; c < means.rows(); ++c) {
      means.row(c) = centroid + k * (means.row(c) - centroid);
    }
  }
  return means;
}

}  // namespace

const char* to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::kMarginal:
      return "marginal";
    case ShiftKind::kConditional:
      return "conditional";
    case ShiftKind::kMixed:
      return "mixed";
  }
  return "unknown";
}

ShiftKind parse_shift_kind(const std::string& name) {
  if (name == "marginal") return ShiftKind::kMarginal;
  if (name == "conditional") return ShiftKind::kConditional;
  if (name == "mixed") return ShiftKind::kMixed;
  throw std::invalid_argument("unknown scenario '" + name +
                              "' (expected marginal|conditional|mixed)");
}

void LabeledDomain::validate() const {
  if (num_classes < 2) {
    throw std::invalid_argument("domain: need at least 2 classes");
  }
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw std::invalid_argument("domain: feature and label counts differ");
  }
  if (y.size() < static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("domain: fewer samples than classes");
  }
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int label : y) {
    if (label < 0 || label >= num_classes) {
      throw std::invalid_argument("domain: label " + std::to_string(label) +
                                  " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
    ++counts[static_cast<std::size_t>(label)];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw std::invalid_argument("domain: class " + std::to_string(c) +
                                  " has no samples");
    }
  }
  if (!x.allFinite()) {
    throw std::invalid_argument("domain: non-finite feature value");
  }
}

Matrix ClusterModel::class_means() const {
  validate_model(*this);
  Matrix means = Matrix::Zero(num_classes, dim);
  const double radius = 4.0 * spread;
  for (int c = 0; c < num_classes; ++c) {
    const double t = 2.0 * std::numbers::pi * c / num_classes;
    means(c, 0) = radius * std::cos(t);
    means(c, 1) = radius * std::sin(t);
  }
  return means;
}

LabeledDomain sample_clusters(const ClusterModel& model, const Matrix& means,
                              std::size_t n, std::uint64_t seed) {
  validate_model(model);
  if (n < static_cast<std::size_t>(model.num_classes)) {
    throw std::invalid_argument("need at least one sample per class");
  }
  std::mt19937_64 rng(mix(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  LabeledDomain d;
  d.num_classes = model.num_classes;
  d.x.resize(static_cast<Eigen::Index>(n), model.dim);
  d.y.reserve(n);
  const std::size_t base = n / static_cast<std::size_t>(model.num_classes);
  const std::size_t extra = n % static_cast<std::size_t>(model.num_classes);
  Eigen::Index row = 0;
  for (int c = 0; c < model.num_classes; ++c) {
    const std::size_t count =
        base + (static_cast<std::size_t>(c) < extra ? 1 : 0);
    for (std::size_t k = 0; k < count; ++k, ++row) {
      for (int j = 0; j < model.dim; ++j) {
        d.x(row, j) = means(c, j) + model.spread * normal(rng);
      }
      d.y.push_back(c);
    }
  }
  return d;
}

LabeledDomain make_source(std::size_t n, int num_classes, int dim,
                          double spread, std::uint64_t seed) {
  const ClusterModel model{num_classes, dim, spread};
  return sample_clusters(model, model.class_means(), n, seed);
}

TargetDomain apply_marginal_shift(const ClusterModel& model, std::size_t n,
                                  double magnitude, std::uint64_t seed) {
  require_magnitude(magnitude);
  LabeledDomain d = sample_clusters(model, model.class_means(), n, seed);
  std::mt19937_64 rng(mix(seed, 3));
  std::uniform_real_distribution<double> dir(0.0, 2.0 * std::numbers::pi);
  const double phi = dir(rng);
  const double shift = magnitude * model.spread;
  rigid_motion(d.x, magnitude * 15.0 * kDegree, shift * std::cos(phi),
               shift * std::sin(phi));
  return to_target(std::move(d));
}

TargetDomain apply_conditional_shift(const ClusterModel& model, std::size_t n,
                                     double magnitude, std::uint64_t seed) {
  require_magnitude(magnitude);
  LabeledDomain d = sample_clusters(
      model, conditional_means(model, magnitude, seed), n, seed);
  return to_target(std::move(d));
}

TargetDomain make_target(const ClusterModel& model, std::size_t n,
                         const ShiftScenario& scenario) {
  switch (scenario.kind) {
    case ShiftKind::kMarginal:
      return apply_marginal_shift(model, n, scenario.magnitude, scenario.seed);
    case ShiftKind::kConditional:
      return apply_conditional_shift(model, n, scenario.magnitude,
                                     scenario.seed);
    case ShiftKind::kMixed: {
      require_magnitude(scenario.magnitude);
      require_magnitude(scenario.conditional_magnitude);
      LabeledDomain d = sample_clusters(
          model,
          conditional_means(model, scenario.conditional_magnitude,
                            scenario.seed),
          n, scenario.seed);
      std::mt19937_64 rng(mix(scenario.seed, 3));
      std::uniform_real_distribution<double> dir(0.0, 2.0 * std::numbers::pi);
      const double phi = dir(rng);
      const double shift = scenario.magnitude * model.spread;
      rigid_motion(d.x, scenario.magnitude * 15.0 * kDegree,
                   shift * std::cos(phi), shift * std::sin(phi));
      return to_target(std::move(d));
    }
  }
  throw std::logic_error("make_target: unhandled scenario");
}

DomainPair make_task(const ClusterModel& model, std::size_t n_source,
                     std::size_t n_target, const ShiftScenario& scenario) {
  DomainPair pair;
  pair.source =
      sample_clusters(model, model.class_means(), n_source, scenario.seed);
  ShiftScenario shifted = scenario;
  shifted.seed = mix(scenario.seed, 7);
  pair.target = make_target(model, n_target, shifted);
  return pair;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> feature_header(Eigen::Index d) {
  std::vector<std::string> h;
  for (Eigen::Index j = 0; j < d; ++j) h.push_back("x" + std::to_string(j));
  return h;
}

std::string target_features_path(const std::string& stem) {
  return stem + "_x.csv";
}
std::string target_eval_path(const std::string& stem) {
  return stem + "_eval.csv";
}

int parse_label(const std::string& cell, std::size_t row,
                const std::string& path) {
  const double v = csv::parse_number(cell, row, path);
  if (v != std::floor(v) || v < 0 || v > 1e9) {
    throw std::runtime_error(path + ": row " + std::to_string(row) +
                             ": label '" + cell + "' is not a class index");
  }
  return static_cast<int>(v);
}

}  // namespace

void write_source_csv(const std::string& path, const LabeledDomain& domain) {
  auto header = feature_header(domain.x.cols());
  header.push_back("label");
  csv::Writer w(path, header);
  for (Eigen::Index i = 0; i < domain.x.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < domain.x.cols(); ++j) {
      row.push_back(csv::format(domain.x(i, j), 17));
    }
    row.push_back(std::to_string(domain.y[static_cast<std::size_t>(i)]));
    w.row(row);
  }
  w.commit();
}

LabeledDomain read_source_csv(const std::string& path, int num_classes) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 2 || t.header.back() != "label") {
    throw std::runtime_error(path + ": header must end with a label column");
  }
  const auto d = static_cast<Eigen::Index>(t.header.size() - 1);
  if (t.header != [&] {
        auto h = feature_header(d);
        h.push_back("label");
        return h;
      }()) {
    throw std::runtime_error(path + ": header mismatch, expected x0..x" +
                             std::to_string(d - 1) + ",label");
  }
  LabeledDomain out;
  out.x.resize(static_cast<Eigen::Index>(t.rows.size()), d);
  int max_label = -1;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::size_t line = i + 2;
    for (Eigen::Index j = 0; j < d; ++j) {
      out.x(static_cast<Eigen::Index>(i), j) =
          csv::parse_number(t.rows[i][static_cast<std::size_t>(j)], line, path);
    }
    out.y.push_back(parse_label(t.rows[i].back(), line, path));
    max_label = std::max(max_label, out.y.back());
  }
  out.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  out.validate();
  return out;
}

void write_target_csv(const std::string& stem, const TargetDomain& domain) {
  const Matrix& x = domain.features();
  {
    csv::Writer w(target_features_path(stem), feature_header(x.cols()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<std::string> row;
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        row.push_back(csv::format(x(i, j), 17));
      }
      w.row(row);
    }
    w.commit();
  }
  csv::Writer w(target_eval_path(stem), {"label"});
  for (int label : domain.eval_labels()) w.row({std::to_string(label)});
  w.commit();
}

Matrix read_target_features(const std::string& stem) {
  const std::string path = target_features_path(stem);
  const csv::Table t = csv::read(path);
  const auto d = static_cast<Eigen::Index>(t.header.size());
  if (t.header != feature_header(d)) {
    throw std::runtime_error(path + ": header mismatch, expected x0..x" +
                             std::to_string(d - 1));
  }
  Matrix x(static_cast<Eigen::Index>(t.rows.size()), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(i), j) = csv::parse_number(
          t.rows[i][static_cast<std::size_t>(j)], i + 2, path);
    }
  }
  if (x.rows() == 0) throw std::runtime_error(path + ": no data rows");
  return x;
}

std::vector<int> read_target_eval(const std::string& stem) {
  const std::string path = target_eval_path(stem);
  const csv::Table t = csv::read(path);
  if (t.header != std::vector<std::string>{"label"}) {
    throw std::runtime_error(path + ": header mismatch, expected label");
  }
  std::vector<int> y;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    y.push_back(parse_label(t.rows[i][0], i + 2, path));
  }
  return y;
}

TargetDomain read_target_csv(const std::string& stem) {
  Matrix x = read_target_features(stem);
  std::vector<int> y = read_target_eval(stem);
  if (y.size() != static_cast<std::size_t>(x.rows())) {
    throw std::runtime_error(stem + ": eval labels and features differ in "
                                    "length");
  }
  return TargetDomain(std::move(x), std::move(y));
}

}  // namespace daan
