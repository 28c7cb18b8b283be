#include "sft/transform.hpp"

#include <cmath>
#include <limits>
#include <tuple>

namespace sft {
namespace {

Matrix clamped_self_cosine(const Matrix& unit) {
  Matrix c = unit * unit.transpose();
  c = c.cwiseMax(-1.0).cwiseMin(1.0);
  c.diagonal().setOnes();
  return c;
}

}  // namespace

void require_positive_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be positive and finite");
  if (!std::isfinite(std::exp(1.0 / sigma)))
    throw std::invalid_argument("sigma too small: exp(1/sigma) overflows");
}

AffinityMatrix::AffinityMatrix(Matrix weights, std::optional<double> sigma)
    : weights_(std::move(weights)), sigma_(sigma) {}

AffinityMatrix AffinityMatrix::from_weights(Matrix weights) {
  if (weights.rows() < 1 || weights.rows() != weights.cols())
    throw std::invalid_argument("affinity weights must be a non-empty square matrix");
  if (!weights.allFinite() || (weights.array() < 0.0).any())
    throw std::invalid_argument("affinity weights must be finite and non-negative");
  for (Eigen::Index i = 0; i < weights.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      if (std::abs(weights(i, j) - weights(j, i)) > 1e-12 * std::max(1.0, std::abs(weights(i, j))))
        throw std::invalid_argument("affinity weights must be symmetric");
  return AffinityMatrix(std::move(weights), std::nullopt);
}

AffinityMatrix affinity(const FeatureMatrix& x, double sigma) {
  require_positive_sigma(sigma);
  const auto [unit, norms] = normalize_rows(x.values());
  Matrix w = (clamped_self_cosine(unit) / sigma).unaryExpr([](double v) { return std::exp(v); });
  return AffinityMatrix(std::move(w), sigma);
}

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - peak).unaryExpr([](double v) { return std::exp(v); }).matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

StochasticMatrix transition(const AffinityMatrix& w) {
  const Matrix& weights = w.weights();
  Matrix t(weights.rows(), weights.cols());
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    // scaling by the row maximum mirrors max-subtraction in the log domain
    const double peak = weights.row(i).maxCoeff();
    if (!(peak > 0.0)) throw Error("node " + std::to_string(i) + " has zero degree");
    t.row(i) = weights.row(i) / peak;
    t.row(i) /= t.row(i).sum();
  }
  return StochasticMatrix(std::move(t));
}

TransformState forward_transform(const Matrix& x, double sigma) {
  require_positive_sigma(sigma);
  TransformState s;
  std::tie(s.unit, s.norms) = normalize_rows(x);
  s.transition = row_softmax(clamped_self_cosine(s.unit) / sigma);
  s.output = s.transition * x;
  s.sigma = sigma;
  return s;
}

Matrix cosine_backward(const Matrix& unit, const Vector& norms, const Matrix& grad_cos) {
  Matrix g = grad_cos;
  g.diagonal().setZero();
  const Matrix grad_unit = (g + g.transpose()) * unit;
  Matrix grad_x(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double radial = unit.row(i).dot(grad_unit.row(i));
    grad_x.row(i) = (grad_unit.row(i) - radial * unit.row(i)) / norms(i);
  }
  return grad_x;
}

Matrix backward_transform(const Matrix& x, const TransformState& state, const Matrix& grad_out,
                          GradientPath path) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != x.cols())
    throw std::invalid_argument("grad_out shape must match x");
  const Matrix& t = state.transition;
  Matrix grad_x = t.transpose() * grad_out;
  if (path == GradientPath::features_only) return grad_x;

  const Matrix grad_t = grad_out * x.transpose();
  // softmax Jacobian, row by row: dL/dlogit_ij = T_ij (dT_ij - sum_k T_ik dT_ik)
  Matrix grad_logits(t.rows(), t.cols());
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    const double inner = t.row(i).dot(grad_t.row(i));
    grad_logits.row(i) = t.row(i).cwiseProduct((grad_t.row(i).array() - inner).matrix());
  }
  grad_x += cosine_backward(state.unit, state.norms, grad_logits / state.sigma);
  return grad_x;
}

FeatureMatrix sft_transform(const FeatureMatrix& x, double sigma) {
  return FeatureMatrix(forward_transform(x.values(), sigma).output);
}

FeatureMatrix sft_backward(const FeatureMatrix& x, double sigma, const FeatureMatrix& grad_out,
                           GradientPath path) {
  const TransformState state = forward_transform(x.values(), sigma);
  return FeatureMatrix(backward_transform(x.values(), state, grad_out.values(), path));
}

}  // namespace sft
