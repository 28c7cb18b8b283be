#pragma once

#include "sft/core.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sft {

/// Identity/camera metadata for the two sides of a retrieval problem.
struct EvalLabels {
  std::vector<int> query_identity;
  std::vector<int> query_camera;
  std::vector<int> gallery_identity;
  std::vector<int> gallery_camera;

  /// Same identity and same camera as query q.
  bool is_junk(std::size_t q, std::size_t g) const;
  bool is_match(std::size_t q, std::size_t g) const;
};

/// Query/gallery rows of a feature file picked out by the manifest split column.
struct RetrievalSplit {
  FeatureMatrix query;
  FeatureMatrix gallery;
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> gallery_rows;
  EvalLabels labels;
};

RetrievalSplit split_query_gallery(const FeatureMatrix& features, const DatasetManifest& manifest);
EvalLabels eval_labels(const DatasetManifest& manifest, std::span<const std::size_t> query_rows,
                       std::span<const std::size_t> gallery_rows);

struct RankedItem {
  std::size_t gallery = 0;
  double score = 0.0;

  bool operator==(const RankedItem&) const = default;
};

using QueryRanking = std::vector<RankedItem>;

struct RankingList {
  std::vector<QueryRanking> queries;

  bool operator==(const RankingList&) const = default;
};

/// Sorts by score descending, ties by gallery index ascending.
void sort_ranking(QueryRanking& items);

/// Gallery ranked by cosine similarity for every query, junk removed.
RankingList rank(const FeatureMatrix& queries, const FeatureMatrix& gallery, const EvalLabels& labels);

struct EvalReport {
  double mAP = 0.0;
  std::map<int, double> cmc;  // rank -> accuracy, ranks 1, 5, 10
  std::vector<double> per_query_ap;
  std::size_t num_queries = 0;
  std::map<std::string, std::string> config;
};

/// Average precision of one ranked relevance pattern (true = relevant).
double average_precision(const std::vector<bool>& relevant);

EvalReport evaluate(const RankingList& ranking, const EvalLabels& labels);

std::string report_to_json(const EvalReport& report);

/// Re-ranks the first top_n items of a query's list by cosine similarity in
/// the space obtained by transforming {query} + those items together. The
/// suffix beyond top_n is returned untouched. top_n larger than the list is
/// clamped; `clamped` (when given) reports whether that happened.
QueryRanking sft_refine(const Eigen::RowVectorXd& query, const QueryRanking& ranking, const FeatureMatrix& gallery,
                        std::size_t top_n, double sigma, bool* clamped = nullptr);

RankingList sft_refine_all(const FeatureMatrix& queries, const RankingList& ranking, const FeatureMatrix& gallery,
                           std::size_t top_n, double sigma, bool* clamped = nullptr);

struct KReciprocalParams {
  std::size_t k1 = 20;
  std::size_t k2 = 6;
  double lambda = 0.3;

  void validate() const;
};

/// Jaccard distance between k-reciprocal encodings of every pair of rows of
/// `distance` (an N x N dissimilarity matrix), with local query expansion
/// over k2-neighbourhoods.
Matrix k_reciprocal_jaccard(const Matrix& distance, std::size_t k1, std::size_t k2);

/// Row i divided by its maximum; rows with zero maximum are left alone.
Matrix row_max_normalized(const Matrix& distance);

/// Final distance lambda * d_cos + (1 - lambda) * d_jaccard over the joint
/// query+gallery set; lists are sorted ascending by it (scores are its
/// negation), ties broken by the original cosine and then gallery index.
RankingList k_reciprocal_rerank(const FeatureMatrix& queries, const FeatureMatrix& gallery, const EvalLabels& labels,
                                const KReciprocalParams& params);

/// Ranking TSV: header `query  position  gallery  score`, one line per ranked
/// item, sample ids taken from the manifest rows of each side.
void save_ranking(const RankingList& ranking, const DatasetManifest& manifest,
                  std::span<const std::size_t> query_rows, std::span<const std::size_t> gallery_rows,
                  const std::filesystem::path& path);
RankingList load_ranking(const std::filesystem::path& path, const DatasetManifest& manifest,
                         std::span<const std::size_t> query_rows, std::span<const std::size_t> gallery_rows);

}  // namespace sft
