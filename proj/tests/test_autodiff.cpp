#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "daan/autodiff.hpp"

using namespace daan;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Relu, ClampsNegatives) {
  Tape t;
  const Var y = relu(t.constant(row({-1, 0, 2})));
  EXPECT_EQ(y.value(), row({0, 0, 2}));
}

TEST(Relu, AllNegativeGivesZeros) {
  Tape t;
  EXPECT_TRUE(relu(t.constant(row({-3, -0.5, -1e-300}))).value().isZero(0));
}

TEST(Relu, PositiveRegionIsIdentity) {
  Tape t;
  const Matrix x = row({0.1, 5, 1e-300});
  EXPECT_EQ(relu(t.constant(x)).value(), x);
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tape t;
  const Var x = t.variable(row({0.0, 1.0}));
  t.backward(sum(relu(x)));
  EXPECT_EQ(t.gradient(x), row({0.0, 1.0}));
}

TEST(Softmax, UniformLogits) {
  Tape t;
  EXPECT_EQ(softmax(t.constant(row({0, 0}))).value(), row({0.5, 0.5}));
}

TEST(Softmax, ExpNormalize) {
  Tape t;
  const Matrix p = softmax(t.constant(row({std::log(1.0), std::log(3.0)}))).value();
  EXPECT_NEAR(p(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(p(0, 1), 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix z = random_matrix(4, 5, rng);
    const Matrix shifted = (z.array() + 123.456).matrix();
    const Matrix d = softmax_rows(z) - softmax_rows(shifted);
    EXPECT_LT(d.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Softmax, RowsSumToOneAndStayInsideUnitInterval) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix z = 5.0 * random_matrix(6, 4, rng);
    const Matrix p = softmax_rows(z);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    }
    EXPECT_GT(p.minCoeff(), 0.0);
    EXPECT_LT(p.maxCoeff(), 1.0);
  }
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Matrix p = softmax_rows(row({1000, 1000}));
  EXPECT_EQ(p, row({0.5, 0.5}));
}

TEST(Softmax, RejectsSingleColumn) {
  Tape t;
  EXPECT_THROW(softmax(t.constant(row({1}))), std::invalid_argument);
}

TEST(CrossEntropy, UniformBinaryIsLn2) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_NEAR(cross_entropy<double>(p, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(cross_entropy<double>(p, 1), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, OneHotIsZero) {
  const std::vector<double> p{0.0, 1.0, 0.0};
  EXPECT_EQ(cross_entropy<double>(p, 1), 0.0);
}

TEST(CrossEntropy, HandValue) {
  const std::vector<double> p{0.9, 0.1};
  EXPECT_NEAR(cross_entropy<double>(p, 1), 2.30258509299404568, 1e-12);
}

TEST(CrossEntropy, FloorsZeroProbability) {
  const std::vector<double> p{1.0, 0.0};
  EXPECT_NEAR(cross_entropy<double>(p, 1), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, RejectsBadIndex) {
  const std::vector<double> p{0.5, 0.5};
  EXPECT_THROW(cross_entropy<double>(p, 2), std::out_of_range);
  EXPECT_THROW(cross_entropy<double>(p, -1), std::out_of_range);
}

TEST(CrossEntropy, NonNegativeAndZeroOnlyAtCertainty) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix p = softmax_rows(random_matrix(1, 3, rng));
    const std::vector<double> v(p.data(), p.data() + 3);
    for (int k = 0; k < 3; ++k) {
      const double ce = cross_entropy<double>(v, k);
      EXPECT_GE(ce, 0.0);
      EXPECT_EQ(ce == 0.0, v[static_cast<std::size_t>(k)] >= 1.0);
    }
  }
}

TEST(GradReverse, ForwardIsIdentity) {
  Tape t;
  const Matrix x = row({1.2, -3.0});
  EXPECT_EQ(grad_reverse(t.constant(x)).value(), x);
}

namespace {

// sum over rows of y * w, whose gradient with respect to y is w per row.
Var linear_loss(Tape& t, const Var& y, const Matrix& w) {
  return sum(affine(y, t.constant(w), t.constant(Matrix::Zero(1, 1))));
}

}  // namespace

TEST(GradReverse, BackwardNegates) {
  Tape t;
  const Var x = t.variable(row({1.2, -3.0}));
  Matrix w(2, 1);
  w << 0.5, -1.0;
  t.backward(linear_loss(t, grad_reverse(x, 1.0), w));
  EXPECT_EQ(t.gradient(x), row({-0.5, 1.0}));
}

TEST(GradReverse, BitExactForRandomInputs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix w = random_matrix(4, 1, rng);
    const double coeff = std::uniform_real_distribution<double>(-3, 3)(rng);

    Tape plain;
    const Var xp = plain.variable(x);
    plain.backward(linear_loss(plain, xp, w));

    Tape rev;
    const Var xr = rev.variable(x);
    const Var y = grad_reverse(xr, coeff);
    EXPECT_EQ(y.value(), x);
    rev.backward(linear_loss(rev, y, w));
    const Matrix expected = (-coeff * plain.gradient(xp).array()).matrix();
    EXPECT_EQ(rev.gradient(xr), expected);
  }
}

TEST(GradReverse, ZeroCoefficientBlocksGradient) {
  Tape t;
  const Var x = t.variable(row({1, 2}));
  t.backward(sum_squares(grad_reverse(x, 0.0)));
  EXPECT_TRUE(t.gradient(x).isZero(0));
}

TEST(GradReverse, RejectsNonFiniteCoefficient) {
  Tape t;
  EXPECT_THROW(grad_reverse(t.constant(row({1})), std::nan("")), std::invalid_argument);
}

TEST(Backward, SumOfSquares) {
  Tape t;
  const Var x = t.variable(row({1, 2}));
  t.backward(sum_squares(x));
  EXPECT_EQ(t.gradient(x), row({2, 4}));
}

TEST(Backward, UnreachableParameterGetsExactZero) {
  Tape t;
  const Var x = t.variable(row({1, 2}));
  const Var w = t.variable(row({3, 4, 5}));
  t.backward(sum_squares(x));
  EXPECT_EQ(t.gradient(w), Matrix::Zero(1, 3));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  const Var x = t.variable(row({1, 2}));
  EXPECT_THROW(t.backward(x), std::invalid_argument);
}

TEST(Backward, RepeatedPassesAgree) {
  std::mt19937_64 rng(21);
  Tape t;
  const Var x = t.variable(random_matrix(5, 3, rng));
  const Var w = t.variable(random_matrix(3, 2, rng));
  const Var b = t.variable(random_matrix(1, 2, rng));
  const Var loss = sum_squares(relu(affine(x, w, b)));
  t.backward(loss);
  const Matrix g1 = t.gradient(w);
  t.backward(loss);
  EXPECT_EQ(t.gradient(w), g1);
}

TEST(Affine, RejectsShapeMismatch) {
  Tape t;
  EXPECT_THROW(affine(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(4, 2)),
                      t.constant(Matrix::Zero(1, 2))),
               std::invalid_argument);
}

TEST(GradientCheck, LinearSquaredLossIsExact) {
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(6, 3, rng);
  const Matrix y = random_matrix(6, 1, rng);
  LossBuilder<double> build = [&](Tape& t, std::span<const Var> p) {
    return sum_squares(affine(t.constant(x), p[0], p[1]) - t.constant(y));
  };
  EXPECT_LT(check_gradients(build, {random_matrix(3, 1, rng), random_matrix(1, 1, rng)}),
            1e-8);
}

TEST(GradientCheck, TwoLayerNetMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const int d = 2 + static_cast<int>(seed % 7);
    const Matrix x = random_matrix(5, d, rng);
    const std::vector<int> labels{0, 1, 2, 1, 0};
    LossBuilder<double> build = [&](Tape& t, std::span<const Var> p) {
      const Var h = relu(affine(t.constant(x), p[0], p[1]));
      return mean_cross_entropy(softmax(affine(h, p[2], p[3])), labels);
    };
    // Positive first-layer biases keep every hidden unit active on most rows,
    // so no gradient entry falls below what central differences can resolve.
    const Matrix w1 = random_matrix(d, 6, rng);
    const Matrix b1 = random_matrix(1, 6, rng).cwiseAbs().array() + 1.0;
    const std::vector<Matrix> params{w1, b1, random_matrix(6, 3, rng), random_matrix(1, 3, rng)};
    EXPECT_LT(check_gradients(build, params), 1e-4) << "seed " << seed;
  }
}

TEST(GradientCheck, DetectsCorruptedGradient) {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(4, 3, rng);
  LossBuilder<double> build = [&](Tape& t, std::span<const Var> p) {
    return sum_squares(relu(affine(t.constant(x), p[0], p[1])));
  };
  GradientCheckOptions<double> opts;
  opts.corrupt = [](std::vector<Matrix>& g) { g[0](0, 0) += 0.5 + std::abs(g[0](0, 0)); };
  EXPECT_GT(check_gradients(build, {random_matrix(3, 2, rng), random_matrix(1, 2, rng)}, opts),
            1e-2);
}

TEST(ScaleRows, WeightGradientFlowsWhenBound) {
  std::mt19937_64 rng(4);
  const Matrix x = random_matrix(4, 3, rng);
  LossBuilder<double> build = [&](Tape& t, std::span<const Var> p) {
    const Var probs = softmax(p[0]);
    return sum_squares(scale_rows(t.constant(x), probs, 1));
  };
  EXPECT_LT(check_gradients(build, {random_matrix(4, 2, rng)}), 1e-6);
}

TEST(MeanCrossEntropy, RejectsLabelCountMismatch) {
  Tape t;
  const std::vector<int> labels{0};
  EXPECT_THROW(mean_cross_entropy(t.constant(Matrix::Constant(2, 2, 0.5)), labels),
               std::invalid_argument);
}
