#include "sft/transform.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

using namespace sft;
using testing::max_abs_diff;
using testing::random_matrix;

namespace {

// Straight from the definitions: cosines, exp, row sums, then T * X.
Matrix oracle_affinity(const Matrix& x, double sigma) {
  const Eigen::Index n = x.rows();
  Matrix w(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double c = i == j ? 1.0 : x.row(i).dot(x.row(j)) / (x.row(i).norm() * x.row(j).norm());
      w(i, j) = std::exp(c / sigma);
    }
  return w;
}

Matrix oracle_transform(const Matrix& x, double sigma) {
  Matrix w = oracle_affinity(x, sigma);
  for (Eigen::Index i = 0; i < w.rows(); ++i) w.row(i) /= w.row(i).sum();
  return w * x;
}

Matrix permutation(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span(order));
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, order[static_cast<std::size_t>(i)]) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("affinity of parallel and orthogonal pairs") {
  const double e = std::numbers::e;
  const AffinityMatrix same = affinity(FeatureMatrix{{1, 0}, {1, 0}}, 1.0);
  CHECK(max_abs_diff(same.weights(), Matrix::Constant(2, 2, e)) < 1e-15);
  CHECK(same.sigma() == 1.0);

  const AffinityMatrix orth = affinity(FeatureMatrix{{1, 0}, {0, 1}}, 1.0);
  CHECK(orth(0, 0) == e);
  CHECK(orth(1, 1) == e);
  CHECK(orth(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(orth(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("affinity matches per-entry recomputation") {
  Rng rng(5);
  const Matrix x = random_matrix(4, 3, rng);
  const AffinityMatrix w = affinity(FeatureMatrix(x), 0.1);
  const Matrix expect = oracle_affinity(x, 0.1);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(w(i, j) == doctest::Approx(expect(i, j)).epsilon(1e-12));
  CHECK(w.weights() == w.weights().transpose());
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(w(i, i) == std::exp(1.0 / 0.1));
}

TEST_CASE("affinity argument checks") {
  CHECK_THROWS_AS(affinity(FeatureMatrix{{1, 0}}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(affinity(FeatureMatrix{{1, 0}}, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(affinity(FeatureMatrix{{1, 0}}, 1e-4), std::invalid_argument);  // exp(1e4) overflows
  CHECK_THROWS_AS(affinity(FeatureMatrix{{1, 0}, {0, 0}}, 1.0), ZeroNormRowError);
  CHECK_THROWS_AS(AffinityMatrix::from_weights(Matrix{{{1, 2}, {3, 1}}}), std::invalid_argument);
  CHECK_THROWS_AS(AffinityMatrix::from_weights(Matrix{{{1, -2}, {-2, 1}}}), std::invalid_argument);
  CHECK_THROWS_AS(AffinityMatrix::from_weights(Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("transition of small graphs") {
  const double e = std::numbers::e;
  const StochasticMatrix t = transition(AffinityMatrix::from_weights(Matrix::Constant(2, 2, e)));
  CHECK(max_abs_diff(t.values(), Matrix::Constant(2, 2, 0.5)) == 0.0);
  CHECK(transition(AffinityMatrix::from_weights(Matrix::Constant(1, 1, 3.0))).values()(0, 0) == 1.0);
}

TEST_CASE("transition equals row softmax of scaled cosines") {
  Rng rng(9);
  for (double sigma : {0.02, 0.1, 1.0}) {
    const Matrix x = random_matrix(5, 4, rng);
    const Matrix t = transition(affinity(FeatureMatrix(x), sigma)).values();
    Matrix c = cosine_matrix(x, x);
    c.diagonal().setOnes();
    Matrix softmax(5, 5);
    for (Eigen::Index i = 0; i < 5; ++i) {
      double z = 0;
      for (Eigen::Index j = 0; j < 5; ++j) z += std::exp((c(i, j) - 1.0) / sigma);
      for (Eigen::Index j = 0; j < 5; ++j) softmax(i, j) = std::exp((c(i, j) - 1.0) / sigma) / z;
    }
    CHECK(max_abs_diff(t, softmax) < 1e-12);
    CHECK((t.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("transform fixed points") {
  const FeatureMatrix same{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  CHECK(max_abs_diff(sft_transform(same, 0.1).values(), same.values()) < 1e-15);
  const FeatureMatrix single{{0.3, -0.4}};
  CHECK(sft_transform(single, 0.5) == single);
}

TEST_CASE("orthogonal pair mixes with logistic weights") {
  const Matrix y = sft_transform(FeatureMatrix{{1, 0}, {0, 1}}, 1.0).values();
  const double e = std::numbers::e;
  CHECK(y(0, 0) == doctest::Approx(e / (e + 1)).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(1 / (e + 1)).epsilon(1e-15));
  CHECK(y(0, 0) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(y(0, 1) == doctest::Approx(0.268941).epsilon(1e-6));
  CHECK(y(1, 0) == doctest::Approx(1 / (e + 1)).epsilon(1e-15));
  CHECK(y(1, 1) == doctest::Approx(e / (e + 1)).epsilon(1e-15));
}

TEST_CASE("transform matches the direct construction and stays in the convex hull") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.index(10));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.index(6));
    const double sigma = std::array{0.02, 0.1, 1.0}[rng.index(3)];
    const Matrix x = random_matrix(n, d, rng);
    const Matrix y = sft_transform(FeatureMatrix(x), sigma).values();
    CHECK(max_abs_diff(y, oracle_transform(x, sigma)) < 1e-12);
    for (Eigen::Index c = 0; c < d; ++c) {
      CHECK(y.col(c).minCoeff() >= x.col(c).minCoeff() - 1e-12);
      CHECK(y.col(c).maxCoeff() <= x.col(c).maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("transform is permutation and rotation equivariant") {
  Rng rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.index(9));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.index(8));
    const double sigma = std::array{0.02, 0.1, 1.0}[rng.index(3)];
    const Matrix x = random_matrix(n, d, rng);
    const Matrix y = sft_transform(FeatureMatrix(x), sigma).values();
    const Matrix p = permutation(n, rng);
    CHECK(max_abs_diff(sft_transform(FeatureMatrix(p * x), sigma).values(), p * y) < 1e-10);
    const Matrix q = testing::random_orthogonal(d, rng);
    CHECK(max_abs_diff(sft_transform(FeatureMatrix(x * q), sigma).values(), y * q) < 1e-9);
  }
}

TEST_CASE("backward pass matches central differences") {
  Rng rng(44);
  for (Eigen::Index n : {2, 3, 8})
    for (Eigen::Index d : {1, 2, 16})
      for (double sigma : {0.02, 0.1, 1.0}) {
        const Matrix x = random_matrix(n, d, rng);
        const Matrix g = random_matrix(n, d, rng);
        auto f = [&](const Matrix& v) { return (sft_transform(FeatureMatrix(v), sigma).values().array() * g.array()).sum(); };
        const Matrix analytic = sft_backward(FeatureMatrix(x), sigma, FeatureMatrix(g)).values();
        CAPTURE(n);
        CAPTURE(d);
        CAPTURE(sigma);
        CHECK(testing::relative_error(analytic, testing::numeric_gradient(f, x)) < 1e-5);
      }
}

TEST_CASE("backward pass on a 6x4 instance at sigma 0.5") {
  Rng rng(46);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix g = random_matrix(6, 4, rng);
  auto f = [&](const Matrix& v) { return (sft_transform(FeatureMatrix(v), 0.5).values().array() * g.array()).sum(); };
  const Matrix analytic = sft_backward(FeatureMatrix(x), 0.5, FeatureMatrix(g)).values();
  CHECK(testing::relative_error(analytic, testing::numeric_gradient(f, x)) < 1e-6);
}

TEST_CASE("features-only path treats T as a constant") {
  Rng rng(45);
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix g = random_matrix(5, 3, rng);
  const Matrix t = transition(affinity(FeatureMatrix(x), 0.2)).values();
  const Matrix got = sft_backward(FeatureMatrix(x), 0.2, FeatureMatrix(g), GradientPath::features_only).values();
  CHECK(max_abs_diff(got, t.transpose() * g) < 1e-14);
}

TEST_CASE("zero upstream gradient gives zero") {
  Rng rng(47);
  const FeatureMatrix x(random_matrix(4, 3, rng));
  CHECK(sft_backward(x, 0.1, FeatureMatrix(Matrix::Zero(4, 3))).values().isZero(0.0));
}

TEST_CASE("very large sigma approaches the averaging operator") {
  Rng rng(48);
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix g = random_matrix(5, 3, rng);
  // T = 11^T / n has gradient 11^T g / n and no dependence through T
  const Matrix uniform = Matrix::Constant(5, 5, 1.0 / 5.0) * g;
  const Matrix got = sft_backward(FeatureMatrix(x), 1e6, FeatureMatrix(g)).values();
  CHECK(max_abs_diff(got, uniform) < 1e-3);
}

TEST_CASE("cosine backward matches central differences off the diagonal") {
  Rng rng(49);
  const Matrix x = random_matrix(5, 4, rng);
  Matrix gc = random_matrix(5, 5, rng);
  auto f = [&](const Matrix& v) {
    Matrix c = cosine_matrix(v, v);
    c.diagonal().setOnes();
    return (c.array() * gc.array()).sum();
  };
  const auto [unit, norms] = normalize_rows(x);
  CHECK(testing::relative_error(cosine_backward(unit, norms, gc), testing::numeric_gradient(f, x)) < 1e-6);
}
