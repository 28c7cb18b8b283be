#pragma once

#include "sft/core.hpp"
#include "sft/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace sft::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline Matrix random_orthogonal(Eigen::Index d, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(d, d, rng));
  return qr.householderQ();
}

/// Symmetric matrix with entries in [lo, hi).
inline Matrix random_symmetric(Eigen::Index n, Rng& rng, double lo = 0.1, double hi = 2.0) {
  Matrix w(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) w(i, j) = w(j, i) = rng.uniform(lo, hi);
  return w;
}

/// Central differences of a scalar function of a matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double step = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + step;
      const double up = f(x);
      x(i, j) = keep - step;
      const double down = f(x);
      x(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * step);
    }
  return g;
}

inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace sft::testing
