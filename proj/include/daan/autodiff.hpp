#pragma once

// Define-by-run reverse-mode differentiation over dense row-major Eigen
// matrices. A tape is rebuilt for every minibatch; vectors are stored as
// 1 x n matrices so every node has the same representation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace daan {

template <typename Scalar>
using MatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Lower bound applied to a probability before taking its logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

template <typename Scalar>
class BasicTape;

/// Handle to a node recorded on a tape.
template <typename Scalar>
class BasicVar {
 public:
  BasicVar() = default;

  const MatrixX<Scalar>& value() const { return tape_->value(index_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  /// Value of a 1 x 1 node.
  Scalar scalar() const {
    if (rows() != 1 || cols() != 1) {
      throw std::invalid_argument("scalar(): node is not 1x1");
    }
    return value()(0, 0);
  }

  BasicTape<Scalar>* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class BasicTape<Scalar>;
  BasicVar(BasicTape<Scalar>* tape, std::size_t index)
      : tape_(tape), index_(index) {}

  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t index_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using Matrix = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  /// Called with the tape and the node's own index during backward.
  using BackwardFn = std::function<void(BasicTape&, std::size_t)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value) {
    return push(std::move(value), {}, nullptr, false);
  }

  /// Leaf that receives a gradient (a parameter).
  Var variable(Matrix value) {
    return push(std::move(value), {}, nullptr, true);
  }

  /// Records an interior node. Inputs must already be on this tape.
  Var record(Matrix value, std::vector<std::size_t> inputs,
             BackwardFn backward) {
    bool needs = false;
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) {
        throw std::logic_error("record(): input is not on this tape");
      }
      needs = needs || nodes_[in].requires_grad;
    }
    return push(std::move(value), std::move(inputs), std::move(backward),
                needs);
  }

  const Matrix& value(std::size_t i) const { return nodes_.at(i).value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient arriving at node i during backward.
  const Matrix& upstream(std::size_t i) const { return nodes_[i].grad; }

  /// Gradient slot of node i, zero-initialized on first use.
  Matrix& slot(std::size_t i) {
    Node& n = nodes_[i];
    if (!n.has_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Populates gradients of a 1 x 1 loss with respect to every node.
  void backward(const Var& loss) {
    if (loss.tape() != this) {
      throw std::invalid_argument("backward(): loss belongs to another tape");
    }
    const Matrix& v = value(loss.index());
    if (v.rows() != 1 || v.cols() != 1) {
      std::ostringstream msg;
      msg << "backward(): loss must be 1x1, got " << v.rows() << "x"
          << v.cols();
      throw std::invalid_argument(msg.str());
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
    }
    slot(loss.index()).setOnes();
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward && n.requires_grad) {
        n.backward(*this, i);
      }
    }
  }

  /// Gradient of the last backward pass; exact zero if unreachable.
  Matrix gradient(const Var& v) const {
    const Node& n = nodes_.at(v.index());
    if (!n.has_grad) {
      return Matrix::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward,
           bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(inputs),
                          std::move(backward), requires_grad, false});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Tape = BasicTape<double>;
using Var = BasicVar<double>;

namespace detail {

template <typename Scalar>
BasicTape<Scalar>& same_tape(const BasicVar<Scalar>& a,
                             const BasicVar<Scalar>& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw std::invalid_argument("operands live on different tapes");
  }
  return *a.tape();
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

/// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(
    const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Scalar m = z.row(i).maxCoeff();
    out.row(i) = (z.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// -log(max(p[index], floor)) for one probability row.
template <typename Scalar>
Scalar cross_entropy(std::span<const Scalar> p, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= p.size()) {
    throw std::out_of_range("cross_entropy(): class index " +
                            std::to_string(index) + " outside [0, " +
                            std::to_string(p.size()) + ")");
  }
  return -std::log(std::max(p[static_cast<std::size_t>(index)],
                            static_cast<Scalar>(kProbabilityFloor)));
}

/// out = x W + b, with b a 1 x out row broadcast over the batch.
template <typename Scalar>
BasicVar<Scalar> affine(const BasicVar<Scalar>& x, const BasicVar<Scalar>& W,
                        const BasicVar<Scalar>& b) {
  auto& tape = detail::same_tape(x, W);
  detail::same_tape(x, b);
  if (x.cols() != W.rows() || b.rows() != 1 || b.cols() != W.cols()) {
    throw std::invalid_argument(
        "affine(): shape mismatch x=" + detail::shape_str(x.rows(), x.cols()) +
        " W=" + detail::shape_str(W.rows(), W.cols()) +
        " b=" + detail::shape_str(b.rows(), b.cols()));
  }
  MatrixX<Scalar> out = x.value() * W.value();
  out.rowwise() += b.value().row(0);
  const std::size_t xi = x.index(), wi = W.index(), bi = b.index();
  return tape.record(std::move(out), {xi, wi, bi},
                     [xi, wi, bi](BasicTape<Scalar>& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       if (t.requires_grad(xi)) {
                         t.slot(xi).noalias() += g * t.value(wi).transpose();
                       }
                       if (t.requires_grad(wi)) {
                         t.slot(wi).noalias() += t.value(xi).transpose() * g;
                       }
                       if (t.requires_grad(bi)) {
                         t.slot(bi) += g.colwise().sum();
                       }
                     });
}

/// Element-wise max(0, x); the subgradient at 0 is 0.
template <typename Scalar>
BasicVar<Scalar> relu(const BasicVar<Scalar>& x) {
  auto& tape = *x.tape();
  MatrixX<Scalar> out = x.value().cwiseMax(Scalar(0));
  const std::size_t xi = x.index();
  return tape.record(std::move(out), {xi},
                     [xi](BasicTape<Scalar>& t, std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       const auto& in = t.value(xi);
                       t.slot(xi).array() +=
                           (in.array() > Scalar(0))
                               .select(t.upstream(self).array(), Scalar(0));
                     });
}

template <typename Scalar>
BasicVar<Scalar> softmax(const BasicVar<Scalar>& z) {
  if (z.cols() < 2) {
    throw std::invalid_argument("softmax(): need at least 2 columns");
  }
  auto& tape = *z.tape();
  const std::size_t zi = z.index();
  return tape.record(
      softmax_rows(z.value()), {zi},
      [zi](BasicTape<Scalar>& t, std::size_t self) {
        if (!t.requires_grad(zi)) return;
        const auto& p = t.value(self);
        const auto& g = t.upstream(self);
        VectorX<Scalar> dot = (g.array() * p.array()).rowwise().sum();
        t.slot(zi).array() +=
            p.array() * (g.array().colwise() - dot.array());
      });
}

/// Identity forward; backward passes -coeff times the incoming gradient.
template <typename Scalar>
BasicVar<Scalar> grad_reverse(const BasicVar<Scalar>& x, Scalar coeff = 1) {
  if (!std::isfinite(coeff)) {
    throw std::invalid_argument("grad_reverse(): coefficient must be finite");
  }
  auto& tape = *x.tape();
  const std::size_t xi = x.index();
  return tape.record(x.value(), {xi},
                     [xi, coeff](BasicTape<Scalar>& t, std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       t.slot(xi) += (-coeff) * t.upstream(self);
                     });
}

/// Scales row i of x by the constant w[i].
template <typename Scalar>
BasicVar<Scalar> scale_rows(const BasicVar<Scalar>& x,
                            const VectorX<Scalar>& w) {
  if (w.size() != x.rows()) {
    throw std::invalid_argument("scale_rows(): " + std::to_string(w.size()) +
                                " weights for " + std::to_string(x.rows()) +
                                " rows");
  }
  auto& tape = *x.tape();
  const std::size_t xi = x.index();
  MatrixX<Scalar> out = w.asDiagonal() * x.value();
  return tape.record(std::move(out), {xi},
                     [xi, w](BasicTape<Scalar>& t, std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       t.slot(xi) += w.asDiagonal() * t.upstream(self);
                     });
}

/// Scales row i of x by weights(i, column); gradient flows into both.
template <typename Scalar>
BasicVar<Scalar> scale_rows(const BasicVar<Scalar>& x,
                            const BasicVar<Scalar>& weights,
                            Eigen::Index column) {
  auto& tape = detail::same_tape(x, weights);
  if (weights.rows() != x.rows() || column < 0 || column >= weights.cols()) {
    throw std::invalid_argument("scale_rows(): weight column out of range");
  }
  const std::size_t xi = x.index(), wi = weights.index();
  MatrixX<Scalar> out = weights.value().col(column).asDiagonal() * x.value();
  return tape.record(
      std::move(out), {xi, wi},
      [xi, wi, column](BasicTape<Scalar>& t, std::size_t self) {
        const auto& g = t.upstream(self);
        if (t.requires_grad(xi)) {
          t.slot(xi) += t.value(wi).col(column).asDiagonal() * g;
        }
        if (t.requires_grad(wi)) {
          t.slot(wi).col(column) +=
              (g.array() * t.value(xi).array()).rowwise().sum().matrix();
        }
      });
}

/// Rows [start, start + count) of x.
template <typename Scalar>
BasicVar<Scalar> slice_rows(const BasicVar<Scalar>& x, Eigen::Index start,
                            Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw std::invalid_argument("slice_rows(): range out of bounds");
  }
  auto& tape = *x.tape();
  const std::size_t xi = x.index();
  return tape.record(x.value().middleRows(start, count), {xi},
                     [xi, start, count](BasicTape<Scalar>& t,
                                        std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       t.slot(xi).middleRows(start, count) += t.upstream(self);
                     });
}

/// Mean over rows of -log(max(p[i, labels[i]], floor)); a 1 x 1 node.
template <typename Scalar>
BasicVar<Scalar> mean_cross_entropy(const BasicVar<Scalar>& p,
                                    std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != p.rows()) {
    throw std::invalid_argument("mean_cross_entropy(): " +
                                std::to_string(labels.size()) +
                                " labels for " + std::to_string(p.rows()) +
                                " rows");
  }
  if (p.rows() == 0) {
    throw std::invalid_argument("mean_cross_entropy(): empty batch");
  }
  const auto& pv = p.value();
  Scalar total = 0;
  for (Eigen::Index i = 0; i < pv.rows(); ++i) {
    total += cross_entropy<Scalar>(
        std::span<const Scalar>(pv.row(i).data(),
                                static_cast<std::size_t>(pv.cols())),
        labels[static_cast<std::size_t>(i)]);
  }
  const Scalar n = static_cast<Scalar>(pv.rows());
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = total / n;
  const std::size_t pi = p.index();
  std::vector<int> owned(labels.begin(), labels.end());
  return p.tape()->record(
      std::move(out), {pi},
      [pi, n, owned = std::move(owned)](BasicTape<Scalar>& t,
                                        std::size_t self) {
        if (!t.requires_grad(pi)) return;
        const Scalar g = t.upstream(self)(0, 0);
        const auto& probs = t.value(pi);
        auto& gp = t.slot(pi);
        for (std::size_t i = 0; i < owned.size(); ++i) {
          const auto r = static_cast<Eigen::Index>(i);
          const Scalar q = probs(r, owned[i]);
          if (q >= static_cast<Scalar>(kProbabilityFloor)) {
            gp(r, owned[i]) -= g / (n * q);
          }
        }
      });
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& a,
                           const BasicVar<Scalar>& b) {
  auto& tape = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("operator+: shape mismatch");
  }
  const std::size_t ai = a.index(), bi = b.index();
  return tape.record(a.value() + b.value(), {ai, bi},
                     [ai, bi](BasicTape<Scalar>& t, std::size_t self) {
                       if (t.requires_grad(ai)) t.slot(ai) += t.upstream(self);
                       if (t.requires_grad(bi)) t.slot(bi) += t.upstream(self);
                     });
}

template <typename Scalar>
BasicVar<Scalar> operator*(Scalar s, const BasicVar<Scalar>& a) {
  const std::size_t ai = a.index();
  return a.tape()->record(s * a.value(), {ai},
                          [ai, s](BasicTape<Scalar>& t, std::size_t self) {
                            if (t.requires_grad(ai)) {
                              t.slot(ai) += s * t.upstream(self);
                            }
                          });
}

template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& a,
                           const BasicVar<Scalar>& b) {
  return a + Scalar(-1) * b;
}

/// Sum of all entries as a 1 x 1 node.
template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& x) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  const std::size_t xi = x.index();
  return x.tape()->record(std::move(out), {xi},
                          [xi](BasicTape<Scalar>& t, std::size_t self) {
                            if (t.requires_grad(xi)) {
                              t.slot(xi).array() += t.upstream(self)(0, 0);
                            }
                          });
}

/// Sum of squared entries as a 1 x 1 node.
template <typename Scalar>
BasicVar<Scalar> sum_squares(const BasicVar<Scalar>& x) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = x.value().squaredNorm();
  const std::size_t xi = x.index();
  return x.tape()->record(std::move(out), {xi},
                          [xi](BasicTape<Scalar>& t, std::size_t self) {
                            if (t.requires_grad(xi)) {
                              t.slot(xi) += (Scalar(2) * t.upstream(self)(0, 0)) *
                                            t.value(xi);
                            }
                          });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

template <typename Scalar>
using LossBuilder = std::function<BasicVar<Scalar>(
    BasicTape<Scalar>&, std::span<const BasicVar<Scalar>>)>;

template <typename Scalar>
struct GradientCheckOptions {
  Scalar step = Scalar(1e-5);
  /// Applied to the analytic gradients before comparison; used to verify
  /// that the check detects a broken backward pass.
  std::function<void(std::vector<MatrixX<Scalar>>&)> corrupt;
};

/// |a - n| / max(|a|, |n|, 1e-8)
template <typename Scalar>
Scalar relative_error(Scalar analytic, Scalar numeric) {
  const Scalar denom = std::max({std::abs(analytic), std::abs(numeric),
                                 static_cast<Scalar>(1e-8)});
  return std::abs(analytic - numeric) / denom;
}

template <typename Scalar>
std::vector<MatrixX<Scalar>> analytic_gradients(
    const LossBuilder<Scalar>& build,
    const std::vector<MatrixX<Scalar>>& params) {
  BasicTape<Scalar> tape;
  std::vector<BasicVar<Scalar>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.variable(p));
  const auto loss = build(tape, vars);
  tape.backward(loss);
  std::vector<MatrixX<Scalar>> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) grads.push_back(tape.gradient(v));
  return grads;
}

template <typename Scalar>
Scalar evaluate_loss(const LossBuilder<Scalar>& build,
                     const std::vector<MatrixX<Scalar>>& params) {
  BasicTape<Scalar> tape;
  std::vector<BasicVar<Scalar>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.variable(p));
  return build(tape, vars).scalar();
}

/// Worst relative error between backward() and central differences over
/// every parameter entry.
template <typename Scalar>
Scalar check_gradients(const LossBuilder<Scalar>& build,
                       std::vector<MatrixX<Scalar>> params,
                       const GradientCheckOptions<Scalar>& options = {}) {
  auto grads = analytic_gradients(build, params);
  if (options.corrupt) options.corrupt(grads);
  const Scalar h = options.step;
  Scalar worst = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const Scalar saved = p.data()[i];
      p.data()[i] = saved + h;
      const Scalar up = evaluate_loss(build, params);
      p.data()[i] = saved - h;
      const Scalar down = evaluate_loss(build, params);
      p.data()[i] = saved;
      const Scalar numeric = (up - down) / (2 * h);
      worst = std::max(worst, relative_error(grads[k].data()[i], numeric));
    }
  }
  return worst;
}

}  // namespace daan
