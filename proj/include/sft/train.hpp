#pragma once

#include "sft/core.hpp"
#include "sft/rng.hpp"
#include "sft/transform.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sft {

/// Input -> [affine -> max(0,.)] -> affine -> optional l2 normalisation.
/// With hidden_dim == 0 the model is a single affine map.
struct EmbedModel {
  Matrix w1;  // hidden x input (or embed x input for a single layer)
  Vector b1;
  Matrix w2;  // embed x hidden; empty for a single layer
  Vector b2;
  bool normalize = true;

  static EmbedModel init(std::size_t input_dim, std::size_t hidden_dim, std::size_t embed_dim, Rng& rng);

  bool two_layer() const noexcept { return w2.size() > 0; }
  Eigen::Index input_dim() const noexcept { return w1.cols(); }
  Eigen::Index embed_dim() const noexcept { return two_layer() ? w2.rows() : w1.rows(); }

  Matrix embed(const Matrix& x) const;
};

struct EmbedCache {
  Matrix input;
  Matrix hidden_pre;  // before max(0,.)
  Matrix hidden;
  Matrix raw;         // final affine output
  Matrix unit;        // normalised output (== raw when normalize is off)
  Vector norms;
};

struct ModelGradients {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

EmbedCache embed_forward(const EmbedModel& model, const Matrix& x);
ModelGradients embed_backward(const EmbedModel& model, const EmbedCache& cache, const Matrix& grad_embedding);

/// Cosine classifier with an additive margin on the target logit.
struct AmSoftmaxClassifier {
  Matrix weight;  // num_classes x embed_dim, rows normalised at use
  double margin = 0.3;
  double scale = 15.0;

  static AmSoftmaxClassifier init(std::size_t num_classes, std::size_t embed_dim, double margin, double scale,
                                  Rng& rng);
  Eigen::Index num_classes() const noexcept { return weight.rows(); }
};

struct AmSoftmaxResult {
  double loss = 0.0;
  Matrix grad_features;
  Matrix grad_weight;
};

/// Mean additive-margin softmax cross-entropy. Features and class weights are
/// both l2-normalised internally; gradients are with respect to the raw inputs.
AmSoftmaxResult am_softmax_loss(const Matrix& features, const Partition& labels, const AmSoftmaxClassifier& clf);
AmSoftmaxResult am_softmax_loss(const FeatureMatrix& features, const Partition& labels,
                                const AmSoftmaxClassifier& clf);

enum class DeepSupervision { off, shared, unshared };
enum class Objective {
  sft,       ///< classifier on T*F
  baseline,  ///< transform replaced by the identity
  ncut,      ///< Ncut loss on F plus AM-Softmax on F
};

std::string_view to_string(DeepSupervision mode);
std::string_view to_string(Objective objective);
DeepSupervision parse_deep_supervision(std::string_view text);
Objective parse_objective(std::string_view text);

struct TrainConfig {
  std::size_t identities_per_batch = 16;  // P
  std::size_t samples_per_identity = 8;   // K
  double sigma = 0.1;
  std::size_t epochs = 140;
  std::size_t warmup_epochs = 20;
  double base_lr = 0.1;
  double warmup_start_lr = 0.001;
  std::vector<std::size_t> decay_epochs{80, 100};
  double decay_factor = 0.1;
  double momentum = 0.9;
  DeepSupervision deep_supervision = DeepSupervision::shared;
  bool sft_grad_through_T = true;
  std::uint64_t seed = 1;

  Objective objective = Objective::sft;
  double margin = 0.3;
  double scale = 15.0;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 16;
  double orig_loss_weight = 1.0;  // weight of the original-feature term under deep supervision
  double ncut_weight = 1.0;
  double ncut_ce_weight = 1.0;    // companion AM-Softmax term of the Ncut objective
  std::size_t batches_per_epoch = 0;  // 0: train identities / P, at least 1
  bool diagnostics = false;

  void validate() const;
};

/// Parses `key = value` lines ('#' starts a comment) on top of `base`.
/// Unknown keys are an error.
TrainConfig parse_train_config(std::istream& in, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);
std::string format_train_config(const TrainConfig& cfg);

double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct PKBatch {
  std::vector<std::size_t> rows;  // manifest row indices, identity-major
  std::vector<int> identities;    // identity of each row
};

/// P distinct train identities without replacement, then K samples of each
/// (without replacement when available, with replacement otherwise).
PKBatch sample_pk(const DatasetManifest& manifest, std::size_t identities_per_batch,
                  std::size_t samples_per_identity, Rng& rng);

struct Network {
  EmbedModel model;
  AmSoftmaxClassifier classifier;
  std::optional<AmSoftmaxClassifier> orig_classifier;  // unshared deep supervision only
};

struct NetworkGradients {
  ModelGradients model;
  Matrix classifier;
  Matrix orig_classifier;  // empty unless unshared
};

struct StepResult {
  double loss_orig = 0.0;
  double loss_sft = 0.0;  // Ncut value under the ncut objective
  double total = 0.0;
  NetworkGradients grads;
};

Network init_network(std::size_t input_dim, std::size_t num_classes, const TrainConfig& cfg, Rng& rng);

/// Loss and parameter gradients for one batch. `labels` index classifier rows.
StepResult forward_backward(const Matrix& inputs, const Partition& labels, const Network& net,
                            const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_orig = 0.0;
  double loss_sft = 0.0;
  std::optional<double> mean_intra_affinity;
  std::optional<double> mean_inter_affinity;
  std::optional<double> ncut_value;
};

struct TrainResult {
  Network net;
  std::vector<int> class_identities;  // classifier row -> identity
  std::vector<EpochRecord> log;
};

TrainResult train(const FeatureMatrix& features, const DatasetManifest& manifest, const TrainConfig& cfg);

std::string format_training_log(const std::vector<EpochRecord>& log);

struct AffinityStats {
  double mean_intra = 0.0;
  double mean_inter = 0.0;
};
/// Mean exp(cos/sigma) over same-label off-diagonal pairs and over different-label pairs.
AffinityStats affinity_stats(const Matrix& embeddings, std::span<const int> labels, double sigma);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace sft
