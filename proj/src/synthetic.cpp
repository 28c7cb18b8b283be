#include "sft/synthetic.hpp"

#include "sft/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace sft {

std::string_view to_string(Topology t) {
  return t == Topology::gaussian_blobs ? "gaussian_blobs" : "intertwined_spirals";
}

Topology parse_topology(std::string_view text) {
  if (text == "gaussian_blobs" || text == "blobs") return Topology::gaussian_blobs;
  if (text == "intertwined_spirals" || text == "spirals") return Topology::intertwined_spirals;
  throw std::invalid_argument("unknown topology '" + std::string(text) + "'");
}

void SyntheticSpec::validate() const {
  if (num_identities < 1 || samples_per_identity < 1 || dim < 1 || num_cameras < 1)
    throw std::invalid_argument("synthetic counts must all be >= 1");
  if (!(intra_class_spread > 0.0) || !(inter_class_separation > 0.0))
    throw std::invalid_argument("synthetic spread and separation must be positive");
  if (topology == Topology::intertwined_spirals && dim < 2)
    throw std::invalid_argument("spirals need dim >= 2");
  if (!(spiral_turns > 0.0) || !std::isfinite(spiral_turns))
    throw std::invalid_argument("spiral_turns must be positive");
  if (holdout_identities > num_identities)
    throw std::invalid_argument("holdout_identities exceeds num_identities");
  if (holdout_identities > 0 && (num_cameras < 2 || samples_per_identity < 2))
    throw std::invalid_argument("held-out identities need >= 2 cameras and >= 2 samples per identity");
  if (holdout_samples > 0 && (num_cameras < 2 || holdout_samples < 2))
    throw std::invalid_argument("held-out samples need >= 2 cameras and >= 2 samples per identity");
}

namespace {

Matrix random_orthogonal(std::size_t dim, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix q(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) q(i, j) = rng.normal();
  // modified Gram-Schmidt over columns
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
    q.col(j) /= q.col(j).norm();
  }
  return q;
}

Vector random_direction(std::size_t dim, Rng& rng) {
  Vector v(static_cast<Eigen::Index>(dim));
  do {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  } while (v.norm() == 0.0);
  return v / v.norm();
}

// Arm positions for `train` samples followed by `extra` held-out ones: the
// held-out slots are spread evenly between the train slots.
std::vector<std::size_t> arm_slots(std::size_t train, std::size_t extra) {
  const std::size_t total = train + extra;
  std::vector<bool> held(total, false);
  for (std::size_t i = 0; i < extra; ++i) held[(2 * i + 1) * total / (2 * extra)] = true;
  std::vector<std::size_t> slots;
  for (std::size_t s = 0; s < total; ++s)
    if (!held[s]) slots.push_back(s);
  for (std::size_t s = 0; s < total; ++s)
    if (held[s]) slots.push_back(s);
  return slots;
}

std::string sample_name(std::size_t identity, std::size_t j) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "id%04zu_s%03zu", identity, j);
  return buf;
}

}  // namespace

std::pair<FeatureMatrix, DatasetManifest> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto d = static_cast<Eigen::Index>(spec.dim);
  const std::size_t first_holdout = spec.num_identities - spec.holdout_identities;
  const std::size_t n = spec.num_identities * spec.samples_per_identity + first_holdout * spec.holdout_samples;
  Matrix x(static_cast<Eigen::Index>(n), d);
  std::vector<SampleRecord> records;
  records.reserve(n);

  Matrix rotation;
  double offset = 0.0;
  if (spec.topology == Topology::intertwined_spirals) {
    rotation = random_orthogonal(spec.dim, rng);
    offset = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  Eigen::Index row = 0;
  for (std::size_t k = 0; k < spec.num_identities; ++k) {
    Vector center;
    double phase = 0.0;
    if (spec.topology == Topology::gaussian_blobs)
      center = spec.inter_class_separation * random_direction(spec.dim, rng);
    else
      phase = offset + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.num_identities);

    const bool unseen = k >= first_holdout;
    const std::size_t extra = unseen ? 0 : spec.holdout_samples;
    const std::size_t total = spec.samples_per_identity + extra;
    const std::vector<std::size_t> slots = arm_slots(spec.samples_per_identity, extra);
    int query_camera = -1;
    for (std::size_t j = 0; j < total; ++j, ++row) {
      Vector p(d);
      if (spec.topology == Topology::gaussian_blobs) {
        p = center;
      } else {
        // stratified position along the arm
        const double t = (static_cast<double>(slots[j]) + rng.uniform()) / static_cast<double>(total);
        const double radius = spec.inter_class_separation * (0.5 + t);
        const double angle = phase + 2.0 * std::numbers::pi * spec.spiral_turns * t;
        Vector planar = Vector::Zero(d);
        planar(0) = radius * std::cos(angle);
        planar(1) = radius * std::sin(angle);
        p = rotation * planar;
      }
      for (Eigen::Index c = 0; c < d; ++c) p(c) += spec.intra_class_spread * rng.normal();
      x.row(row) = p.transpose();

      const int camera = static_cast<int>(j % spec.num_cameras);
      Split split = Split::train;
      if (unseen || j >= spec.samples_per_identity) {
        if (query_camera < 0) query_camera = camera;
        split = camera == query_camera ? Split::query : Split::gallery;
      }
      records.push_back(SampleRecord{sample_name(k, j), static_cast<int>(k), camera, split});
    }
  }
  return {FeatureMatrix(std::move(x)), DatasetManifest(std::move(records))};
}

}  // namespace sft
