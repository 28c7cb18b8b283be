#include "sft/spectral.hpp"

#include <cmath>

namespace sft {
namespace {

void check_shape(const AffinityMatrix& w, const Partition& part) {
  if (static_cast<Eigen::Index>(part.size()) != w.size())
    throw std::invalid_argument("partition size does not match graph size");
}

void check_class(const Partition& part, std::size_t a) {
  if (a >= part.num_classes()) throw std::invalid_argument("class index out of range");
  if (part.class_size(a) == 0) throw std::invalid_argument("class " + std::to_string(a) + " is empty");
}

void check_complement(const Partition& part, std::size_t a) {
  if (part.class_size(a) == part.size())
    throw std::invalid_argument("complement of class " + std::to_string(a) + " is empty");
}

// cut(A, not A) and vol(A) in one sweep over the rows of A
std::pair<double, double> cut_and_volume(const Matrix& w, const Partition& part, std::size_t a) {
  double cut_value = 0.0;
  double vol = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (part[static_cast<std::size_t>(i)] != a) continue;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      vol += w(i, j);
      if (part[static_cast<std::size_t>(j)] != a) cut_value += w(i, j);
    }
  }
  return {cut_value, vol};
}

}  // namespace

double cut(const AffinityMatrix& w, const Partition& part, std::size_t a, std::size_t b) {
  check_shape(w, part);
  if (a == b) throw std::invalid_argument("cut needs two different classes");
  check_class(part, a);
  check_class(part, b);
  // Summing over the lower-indexed class first keeps cut(a,b) == cut(b,a) bit for bit.
  const std::size_t first = std::min(a, b);
  const std::size_t second = std::max(a, b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (part[static_cast<std::size_t>(i)] != first) continue;
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (part[static_cast<std::size_t>(j)] == second) total += w(i, j);
  }
  return total;
}

double volume(const AffinityMatrix& w, const Partition& part, std::size_t a) {
  check_shape(w, part);
  check_class(part, a);
  return cut_and_volume(w.weights(), part, a).second;
}

double ncut(const AffinityMatrix& w, const Partition& part, std::size_t a) {
  check_shape(w, part);
  check_class(part, a);
  check_complement(part, a);
  const auto [cut_value, vol_a] = cut_and_volume(w.weights(), part, a);
  const double vol_rest = w.weights().sum() - vol_a;
  return cut_value / vol_a + cut_value / vol_rest;
}

RandomWalkStats stationary(const AffinityMatrix& w) {
  const Vector degrees = w.weights().rowwise().sum();
  const double vol = degrees.sum();
  if (!(vol > 0.0)) throw Error("graph has zero total volume");
  return RandomWalkStats{degrees / vol, vol};
}

double escape_probability(const AffinityMatrix& w, const Partition& part, std::size_t a) {
  check_shape(w, part);
  check_class(part, a);
  check_complement(part, a);
  const RandomWalkStats stats = stationary(w);
  const StochasticMatrix t = transition(w);
  double flow = 0.0;
  double mass = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (part[static_cast<std::size_t>(i)] != a) continue;
    mass += stats.stationary(i);
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (part[static_cast<std::size_t>(j)] != a) flow += stats.stationary(i) * t(i, j);
  }
  return flow / mass;
}

double NcutEscapeCheck::residual() const { return std::abs(ncut - escape_sum); }

NcutEscapeCheck ncut_escape_identity_check(const AffinityMatrix& w, const Partition& part, std::size_t a) {
  check_shape(w, part);
  check_class(part, a);
  check_complement(part, a);
  // The complement as its own two-class partition so P(not A -> A) is another escape probability.
  std::vector<std::size_t> two_way(part.size());
  for (std::size_t i = 0; i < part.size(); ++i) two_way[i] = part[i] == a ? 0 : 1;
  const Partition halves(std::move(two_way), 2);
  return NcutEscapeCheck{ncut(w, part, a), escape_probability(w, halves, 0) + escape_probability(w, halves, 1)};
}

NcutLoss ncut_loss(const Matrix& x, const Partition& labels, double sigma) {
  require_positive_sigma(sigma);
  if (static_cast<Eigen::Index>(labels.size()) != x.rows())
    throw std::invalid_argument("label count does not match feature rows");
  if (labels.num_classes() < 2) throw std::invalid_argument("ncut_loss needs at least two classes");
  for (std::size_t c = 0; c < labels.num_classes(); ++c) check_class(labels, c);

  const auto [unit, norms] = normalize_rows(x);
  Matrix cos = (unit * unit.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
  cos.diagonal().setOnes();
  // exp((cos - 1) / sigma): every ratio below is invariant to the common e^{1/sigma} factor
  const Matrix w = ((cos.array() - 1.0) / sigma).unaryExpr([](double v) { return std::exp(v); }).matrix();

  const std::size_t k = labels.num_classes();
  std::vector<double> cuts(k, 0.0), vols(k, 0.0);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const std::size_t ci = labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      vols[ci] += w(i, j);
      if (labels[static_cast<std::size_t>(j)] != ci) cuts[ci] += w(i, j);
    }
  }
  NcutLoss out;
  for (std::size_t c = 0; c < k; ++c) out.value += cuts[c] / vols[c];

  Matrix grad_cos(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const std::size_t ci = labels[static_cast<std::size_t>(i)];
    const double base = cuts[ci] / (vols[ci] * vols[ci]);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double crossing = labels[static_cast<std::size_t>(j)] != ci ? 1.0 / vols[ci] : 0.0;
      grad_cos(i, j) = (crossing - base) * w(i, j) / sigma;
    }
  }
  out.gradient = cosine_backward(unit, norms, grad_cos);
  return out;
}

NcutLoss ncut_loss(const FeatureMatrix& x, const Partition& labels, double sigma) {
  return ncut_loss(x.values(), labels, sigma);
}

}  // namespace sft
