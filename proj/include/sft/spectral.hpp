#pragma once

#include "sft/core.hpp"
#include "sft/transform.hpp"

#include <utility>

namespace sft {

struct RandomWalkStats {
  Vector stationary;  // pi_i = d_i / vol(X)
  double volume = 0.0;
};

/// Sum of w_ij over i in class a, j in class b.
double cut(const AffinityMatrix& w, const Partition& part, std::size_t a, std::size_t b);
/// Total connection from class a to every node.
double volume(const AffinityMatrix& w, const Partition& part, std::size_t a);
/// Normalised cut of class a against its complement.
double ncut(const AffinityMatrix& w, const Partition& part, std::size_t a);
RandomWalkStats stationary(const AffinityMatrix& w);
/// One-step probability of a stationary walk leaving class a, evaluated from
/// pi and T directly.
double escape_probability(const AffinityMatrix& w, const Partition& part, std::size_t a);

struct NcutEscapeCheck {
  double ncut = 0.0;
  double escape_sum = 0.0;  // P(A -> not A) + P(not A -> A)
  double residual() const;
};

NcutEscapeCheck ncut_escape_identity_check(const AffinityMatrix& w, const Partition& part, std::size_t a);

struct NcutLoss {
  double value = 0.0;
  Matrix gradient;  // dLoss/dX
};

/// Multiclass normalised cut of the supervised partition: the sum over classes
/// of the escape probability of each class against the rest, on affinity(x, sigma).
NcutLoss ncut_loss(const FeatureMatrix& x, const Partition& labels, double sigma);
NcutLoss ncut_loss(const Matrix& x, const Partition& labels, double sigma);

}  // namespace sft
