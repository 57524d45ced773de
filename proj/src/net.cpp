#include "daan/net.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace daan {

namespace {

DenseT<Matrix> glorot(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-s, s);
  DenseT<Matrix> layer{Matrix(fan_in, fan_out), Matrix::Zero(1, fan_out)};
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = u(rng);
  }
  return layer;
}

Var dense(const DenseT<Var>& l, const Var& x) {
  return affine(x, l.weight, l.bias);
}

Var discriminator(const std::vector<DenseT<Var>>& d, const Var& x) {
  return softmax(dense(d[1], relu(dense(d[0], x))));
}

void require_cols(const Var& x, Eigen::Index cols, const char* what) {
  if (x.cols() != cols) {
    throw std::invalid_argument(std::string(what) + ": expected " +
                                std::to_string(cols) + " columns, got " +
                                std::to_string(x.cols()));
  }
}

}  // namespace

void NetConfig::validate() const {
  if (input_dim < 1 || feature_dim < 1 || hidden_width < 1 ||
      discriminator_hidden < 1) {
    throw std::invalid_argument("NetConfig: all dimensions must be >= 1");
  }
  if (num_classes < 2) {
    throw std::invalid_argument("NetConfig: num_classes must be >= 2");
  }
}

bool DaanModel::operator==(const DaanModel& other) const {
  if (!(config == other.config)) return false;
  const auto a = flatten(params);
  const auto b = flatten(other.params);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() ||
        *a[i] != *b[i]) {
      return false;
    }
  }
  return true;
}

DaanModel init_model(const NetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.init_seed);
  DaanModel m{cfg, {}};
  auto& p = m.params;
  p.extractor.push_back(glorot(cfg.input_dim, cfg.hidden_width, rng));
  p.extractor.push_back(glorot(cfg.hidden_width, cfg.hidden_width, rng));
  p.extractor.push_back(glorot(cfg.hidden_width, cfg.feature_dim, rng));
  p.classifier = glorot(cfg.feature_dim, cfg.num_classes, rng);
  p.global_disc.push_back(
      glorot(cfg.feature_dim, cfg.discriminator_hidden, rng));
  p.global_disc.push_back(glorot(cfg.discriminator_hidden, 2, rng));
  for (int c = 0; c < cfg.num_classes; ++c) {
    auto& d = p.local_disc.emplace_back();
    d.push_back(glorot(cfg.feature_dim, cfg.discriminator_hidden, rng));
    d.push_back(glorot(cfg.discriminator_hidden, 2, rng));
  }
  return m;
}

ParamSet zeros_like(const ParamSet& params) {
  return params.map<Matrix>([](const Matrix& m) {
    return Matrix::Zero(m.rows(), m.cols()).eval();
  });
}

BoundParams bind(Tape& tape, const ParamSet& params) {
  return params.map<Var>([&tape](const Matrix& m) { return tape.variable(m); });
}

ParamSet gradients(const Tape& tape, const BoundParams& bound) {
  return bound.map<Matrix>([&tape](const Var& v) { return tape.gradient(v); });
}

std::vector<const Matrix*> flatten(const ParamSet& params) {
  std::vector<const Matrix*> out;
  params.visit([&out](ParamGroup, const Matrix& m) { out.push_back(&m); });
  return out;
}

Var extract_features(const BoundParams& p, const Var& x) {
  require_cols(x, p.extractor.front().weight.rows(), "extract_features");
  Var h = relu(dense(p.extractor[0], x));
  h = relu(dense(p.extractor[1], h));
  return dense(p.extractor[2], h);
}

Var classify(const BoundParams& p, const Var& features) {
  require_cols(features, p.classifier.weight.rows(), "classify");
  return softmax(dense(p.classifier, features));
}

Var global_domain_probs(const BoundParams& p, const Var& features,
                        double coeff) {
  require_cols(features, p.global_disc.front().weight.rows(),
               "global_domain_probs");
  return discriminator(p.global_disc, grad_reverse(features, coeff));
}

std::vector<Var> local_domain_probs(const BoundParams& p, const Var& features,
                                    const Var& class_probs, double coeff,
                                    bool class_weight_gradient) {
  const auto classes = static_cast<Eigen::Index>(p.local_disc.size());
  if (class_probs.cols() != classes || class_probs.rows() != features.rows()) {
    throw std::invalid_argument(
        "local_domain_probs: class probabilities must be " +
        std::to_string(features.rows()) + "x" + std::to_string(classes));
  }
  require_cols(features, p.global_disc.front().weight.rows(),
               "local_domain_probs");
  std::vector<Var> out;
  out.reserve(p.local_disc.size());
  for (Eigen::Index c = 0; c < classes; ++c) {
    Var weighted = class_weight_gradient
                       ? scale_rows(features, class_probs, c)
                       : scale_rows(features, Vector(class_probs.value().col(c)));
    out.push_back(discriminator(p.local_disc[static_cast<std::size_t>(c)],
                                grad_reverse(weighted, coeff)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

void write_matrix(std::ostream& out, const Matrix& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  out << std::hexfloat;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out << (j ? " " : "") << m(i, j);
    }
    out << '\n';
  }
  out << std::defaultfloat;
}

Matrix read_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Eigen::Index r = 0, c = 0;
  if (!(in >> r >> c) || r != rows || c != cols) {
    throw std::runtime_error("checkpoint: tensor shape mismatch, expected " +
                             std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix m(r, c);
  std::string token;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!(in >> token)) {
      throw std::runtime_error("checkpoint: truncated tensor data");
    }
    char* end = nullptr;
    m.data()[i] = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
      throw std::runtime_error("checkpoint: bad value '" + token + "'");
    }
  }
  return m;
}

}  // namespace

void write_checkpoint(std::ostream& out, const DaanModel& model) {
  const auto& c = model.config;
  out << kCheckpointTag << '\n';
  out << "input_dim " << c.input_dim << '\n'
      << "feature_dim " << c.feature_dim << '\n'
      << "hidden_width " << c.hidden_width << '\n'
      << "num_classes " << c.num_classes << '\n'
      << "discriminator_hidden " << c.discriminator_hidden << '\n'
      << "init_seed " << c.init_seed << '\n';
  for (const Matrix* m : flatten(model.params)) write_matrix(out, *m);
}

DaanModel read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointTag) {
    throw std::runtime_error("checkpoint: missing or unknown format tag");
  }
  NetConfig cfg;
  auto field = [&in](const char* name, auto& dst) {
    std::string key;
    if (!(in >> key >> dst) || key != name) {
      throw std::runtime_error(std::string("checkpoint: expected field ") +
                               name);
    }
  };
  field("input_dim", cfg.input_dim);
  field("feature_dim", cfg.feature_dim);
  field("hidden_width", cfg.hidden_width);
  field("num_classes", cfg.num_classes);
  field("discriminator_hidden", cfg.discriminator_hidden);
  field("init_seed", cfg.init_seed);
  cfg.validate();
  DaanModel model = init_model(cfg);
  model.params.visit([&in](ParamGroup, Matrix& m) {
    m = read_matrix(in, m.rows(), m.cols());
  });
  return model;
}

void save_checkpoint(const std::string& path, const DaanModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(out, model);
  if (!out) throw std::runtime_error("failed writing " + path);
}

DaanModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace daan
