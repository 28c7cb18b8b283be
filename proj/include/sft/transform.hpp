#pragma once

#include "sft/core.hpp"

#include <optional>

namespace sft {

/// Symmetric non-negative edge weights of a similarity graph.
///
/// Built from features by affinity(), where w_ij = exp(cos(x_i, x_j) / sigma)
/// and the diagonal is exactly exp(1 / sigma). Arbitrary graphs (for the
/// cut/volume diagnostics) can be wrapped with from_weights().
class AffinityMatrix {
 public:
  static AffinityMatrix from_weights(Matrix weights);

  Eigen::Index size() const noexcept { return weights_.rows(); }
  const Matrix& weights() const noexcept { return weights_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return weights_(i, j); }
  /// Temperature the matrix was built with; empty for hand-made graphs.
  std::optional<double> sigma() const noexcept { return sigma_; }

 private:
  AffinityMatrix(Matrix weights, std::optional<double> sigma);
  friend AffinityMatrix affinity(const FeatureMatrix& x, double sigma);

  Matrix weights_;
  std::optional<double> sigma_;
};

/// Row-stochastic random-walk matrix T = D^-1 W.
class StochasticMatrix {
 public:
  explicit StochasticMatrix(Matrix values) : values_(std::move(values)) {}
  Eigen::Index size() const noexcept { return values_.rows(); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

 private:
  Matrix values_;
};

/// Which factors of T*X the backward pass differentiates.
enum class GradientPath {
  full,           ///< through T (cosine -> exp -> row normalisation) and through X
  features_only,  ///< T treated as a constant
};

AffinityMatrix affinity(const FeatureMatrix& x, double sigma);
StochasticMatrix transition(const AffinityMatrix& w);
FeatureMatrix sft_transform(const FeatureMatrix& x, double sigma);
/// dL/dX for any scalar L whose gradient with respect to T*X is grad_out.
FeatureMatrix sft_backward(const FeatureMatrix& x, double sigma, const FeatureMatrix& grad_out,
                           GradientPath path = GradientPath::full);

// Matrix-level kernels shared by the trainer, the Ncut loss and post-processing.

/// Row softmax of cos/sigma with the per-row maximum subtracted.
Matrix row_softmax(const Matrix& logits);

struct TransformState {
  Matrix unit;        // rows of x scaled to unit length
  Vector norms;       // original row norms
  Matrix transition;  // T
  Matrix output;      // T * x
  double sigma = 1.0;
};

TransformState forward_transform(const Matrix& x, double sigma);
Matrix backward_transform(const Matrix& x, const TransformState& state, const Matrix& grad_out,
                          GradientPath path = GradientPath::full);

/// Pulls a gradient on the cosine matrix C = U U^T (U = row-normalised x)
/// back onto x. Diagonal entries of grad_cos are ignored since cos(x_i, x_i) = 1.
Matrix cosine_backward(const Matrix& unit, const Vector& norms, const Matrix& grad_cos);

void require_positive_sigma(double sigma);

}  // namespace sft
