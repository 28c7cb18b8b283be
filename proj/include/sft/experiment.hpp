#pragma once

#include "sft/retrieval.hpp"
#include "sft/synthetic.hpp"
#include "sft/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sft {

enum class ExperimentKind { ablation, sigma_sweep, k_sweep, ncut_comparison };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view text);

/// One training/evaluation recipe, named after the ablation-table columns.
struct Method {
  std::string name;
  bool raw = false;  // evaluate the generator's features, no training
  Objective objective = Objective::baseline;
  DeepSupervision deep_supervision = DeepSupervision::off;
  bool post = false;  // SFT top-n refinement at test time
  bool kr = false;    // k-reciprocal re-ranking at test time
};

/// Rows of the ablation table: raw, baseline, sft, sft+ds(u), sft+ds(s), +post, +kr.
std::vector<Method> ablation_methods();
Method baseline_method();
Method sft_shared_method();
Method ncut_method();

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ablation;
  SyntheticSpec data;  // seed is replaced by each run seed
  TrainConfig train;   // seed is replaced by each run seed
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t top_n = 50;
  KReciprocalParams kr;
  std::vector<double> sigmas{0.02, 0.05, 0.1, 0.2, 0.5};
  std::vector<std::size_t> ks{2, 4, 8};

  /// Toy profile: 16 train identities x 8 samples on intertwined spirals plus
  /// a held-out query/gallery split.
  static ExperimentConfig toy_defaults();
};

struct ExperimentCell {
  Method method;
  std::string param_name;  // "sigma", "K" or empty
  double param = 0.0;
  std::uint64_t seed = 0;
  EvalReport report;
  AffinityStats test_affinity;
};

struct ExperimentSummary {
  Method method;
  std::string param_name;
  double param = 0.0;
  double mAP = 0.0;
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double inter_affinity = 0.0;
  double intra_affinity = 0.0;
};

struct ExperimentResult {
  std::vector<ExperimentCell> cells;
  std::vector<ExperimentSummary> summary;  // medians over seeds

  const ExperimentSummary& find(std::string_view method, double param = 0.0) const;
};

double median(std::vector<double> values);

/// Embeddings of every row of `features` under a trained network.
FeatureMatrix embed_features(const Network& net, const FeatureMatrix& features);

/// Ranks and evaluates one split, applying post-processing as the method asks.
EvalReport evaluate_method(const Method& method, const RetrievalSplit& split, double sigma, std::size_t top_n,
                           const KReciprocalParams& kr);

ExperimentResult run_experiment(const ExperimentConfig& config);

/// Table with one row per (method, param, seed) plus "median" rows.
std::string experiment_tsv(const ExperimentResult& result);
std::string experiment_json(const ExperimentResult& result, const ExperimentConfig& config);

}  // namespace sft
