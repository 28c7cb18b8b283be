#pragma once

#include "sft/core.hpp"

#include <cstdint>
#include <string_view>
#include <utility>

namespace sft {

enum class Topology { gaussian_blobs, intertwined_spirals };

std::string_view to_string(Topology t);
Topology parse_topology(std::string_view text);

/// Parameters of the clustered stand-in dataset.
///
/// gaussian_blobs: each identity is an isotropic Gaussian around a random
/// direction scaled to `inter_class_separation`.
/// intertwined_spirals: each identity is one arm of a planar spiral sweeping
/// `spiral_turns` turns while its radius grows from 0.5 to 1.5 times
/// `inter_class_separation`, rotated into `dim` dimensions. Arm phases are
/// evenly spaced from a random offset; neighbouring arms cover the same
/// angles, so raw cosine similarity (which only sees the angle) mixes them.
///
/// Evaluation samples come from two optional sources: every sample of the
/// last `holdout_identities` identities (unseen identities), and
/// `holdout_samples` extra samples drawn for each remaining identity (unseen
/// samples of known identities, placed between the train samples along a
/// spiral arm). Records of an identity list train samples first, then held-out
/// ones; sample j gets camera j mod num_cameras. Within an identity's held-out
/// samples, those sharing the first one's camera are queries and the rest
/// gallery.
struct SyntheticSpec {
  std::size_t num_identities = 16;
  std::size_t samples_per_identity = 8;
  std::size_t dim = 32;
  double intra_class_spread = 0.1;
  double inter_class_separation = 1.0;
  Topology topology = Topology::gaussian_blobs;
  std::size_t num_cameras = 2;
  std::uint64_t seed = 1;
  std::size_t holdout_identities = 0;
  std::size_t holdout_samples = 0;
  double spiral_turns = 1.0;

  void validate() const;
};

std::pair<FeatureMatrix, DatasetManifest> generate_synthetic(const SyntheticSpec& spec);

}  // namespace sft
