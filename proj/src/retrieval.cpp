#include "sft/retrieval.hpp"

#include "sft/transform.hpp"

#include <json.hpp>

#include <algorithm>

namespace sft {

bool EvalLabels::is_junk(std::size_t q, std::size_t g) const {
  return query_identity[q] == gallery_identity[g] && query_camera[q] == gallery_camera[g];
}

bool EvalLabels::is_match(std::size_t q, std::size_t g) const {
  return query_identity[q] == gallery_identity[g] && query_camera[q] != gallery_camera[g];
}

EvalLabels eval_labels(const DatasetManifest& manifest, std::span<const std::size_t> query_rows,
                       std::span<const std::size_t> gallery_rows) {
  return EvalLabels{manifest.identities(query_rows), manifest.cameras(query_rows), manifest.identities(gallery_rows),
                    manifest.cameras(gallery_rows)};
}

RetrievalSplit split_query_gallery(const FeatureMatrix& features, const DatasetManifest& manifest) {
  manifest.check_pairing(features.rows());
  manifest.check_cross_camera();
  auto query_rows = manifest.indices(Split::query);
  auto gallery_rows = manifest.indices(Split::gallery);
  if (query_rows.empty() || gallery_rows.empty()) throw Error("manifest needs both query and gallery samples");
  EvalLabels labels = eval_labels(manifest, query_rows, gallery_rows);
  return RetrievalSplit{features.select_rows(query_rows), features.select_rows(gallery_rows), std::move(query_rows),
                        std::move(gallery_rows), std::move(labels)};
}

void sort_ranking(QueryRanking& items) {
  std::stable_sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.gallery < b.gallery;
  });
}

namespace {

void check_labels(const EvalLabels& labels, Eigen::Index num_queries, Eigen::Index num_gallery) {
  if (static_cast<Eigen::Index>(labels.query_identity.size()) != num_queries ||
      static_cast<Eigen::Index>(labels.query_camera.size()) != num_queries ||
      static_cast<Eigen::Index>(labels.gallery_identity.size()) != num_gallery ||
      static_cast<Eigen::Index>(labels.gallery_camera.size()) != num_gallery)
    throw std::invalid_argument("labels do not cover the query and gallery sets");
}

}  // namespace

RankingList rank(const FeatureMatrix& queries, const FeatureMatrix& gallery, const EvalLabels& labels) {
  if (queries.cols() != gallery.cols()) throw std::invalid_argument("query/gallery dimension mismatch");
  check_labels(labels, queries.rows(), gallery.rows());
  const Matrix cos = cosine_matrix(queries.values(), gallery.values());
  RankingList out;
  out.queries.resize(static_cast<std::size_t>(queries.rows()));
  for (std::size_t q = 0; q < out.queries.size(); ++q) {
    auto& items = out.queries[q];
    for (std::size_t g = 0; g < static_cast<std::size_t>(gallery.rows()); ++g)
      if (!labels.is_junk(q, g))
        items.push_back({g, cos(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g))});
    if (items.empty()) throw Error("query " + std::to_string(q) + " has no valid gallery");
    sort_ranking(items);
  }
  return out;
}

double average_precision(const std::vector<bool>& relevant) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    if (!relevant[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return hits ? sum / static_cast<double>(hits) : 0.0;
}

EvalReport evaluate(const RankingList& ranking, const EvalLabels& labels) {
  if (ranking.queries.size() != labels.query_identity.size())
    throw std::invalid_argument("ranking and labels disagree on the number of queries");
  constexpr int kRanks[] = {1, 5, 10};
  EvalReport report;
  report.num_queries = ranking.queries.size();
  if (report.num_queries == 0) throw Error("no queries to evaluate");
  for (int r : kRanks) report.cmc[r] = 0.0;

  for (std::size_t q = 0; q < ranking.queries.size(); ++q) {
    std::vector<bool> relevant;
    for (const auto& item : ranking.queries[q]) {
      if (item.gallery >= labels.gallery_identity.size()) throw std::out_of_range("gallery index out of range");
      if (labels.is_junk(q, item.gallery)) continue;
      relevant.push_back(labels.is_match(q, item.gallery));
    }
    const auto first = std::find(relevant.begin(), relevant.end(), true);
    if (first == relevant.end()) throw Error("query " + std::to_string(q) + " has no relevant gallery item");
    const auto first_rank = static_cast<int>(first - relevant.begin()) + 1;
    for (int r : kRanks)
      if (first_rank <= r) report.cmc[r] += 1.0;
    report.per_query_ap.push_back(average_precision(relevant));
  }
  const auto n = static_cast<double>(report.num_queries);
  for (auto& [r, acc] : report.cmc) acc /= n;
  double sum = 0.0;
  for (double ap : report.per_query_ap) sum += ap;
  report.mAP = sum / n;
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["mAP"] = report.mAP;
  nlohmann::ordered_json cmc;
  for (const auto& [r, acc] : report.cmc) cmc[std::to_string(r)] = acc;
  j["cmc"] = cmc;
  j["num_queries"] = report.num_queries;
  j["per_query_ap"] = report.per_query_ap;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.config) config[k] = v;
  j["config"] = config;
  return j.dump(2) + "\n";
}

QueryRanking sft_refine(const Eigen::RowVectorXd& query, const QueryRanking& ranking, const FeatureMatrix& gallery,
                        std::size_t top_n, double sigma, bool* clamped) {
  if (top_n == 0) throw std::invalid_argument("top_n must be >= 1");
  require_positive_sigma(sigma);
  if (query.size() != gallery.cols()) throw std::invalid_argument("query/gallery dimension mismatch");
  const std::size_t n = std::min(top_n, ranking.size());
  if (clamped) *clamped = top_n > ranking.size();
  QueryRanking out = ranking;
  if (n <= 1) return out;

  Matrix nodes(static_cast<Eigen::Index>(n + 1), gallery.cols());
  nodes.row(0) = query;
  for (std::size_t k = 0; k < n; ++k)
    nodes.row(static_cast<Eigen::Index>(k + 1)) = gallery.values().row(static_cast<Eigen::Index>(ranking[k].gallery));
  const Matrix transformed = forward_transform(nodes, sigma).output;
  const Matrix cos = cosine_matrix(transformed.topRows(1), transformed.bottomRows(static_cast<Eigen::Index>(n)));

  for (std::size_t k = 0; k < n; ++k) out[k].score = cos(0, static_cast<Eigen::Index>(k));
  std::stable_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n),
                   [](const RankedItem& a, const RankedItem& b) { return a.score > b.score; });
  return out;
}

RankingList sft_refine_all(const FeatureMatrix& queries, const RankingList& ranking, const FeatureMatrix& gallery,
                           std::size_t top_n, double sigma, bool* clamped) {
  if (static_cast<Eigen::Index>(ranking.queries.size()) != queries.rows())
    throw std::invalid_argument("ranking and query features disagree on the number of queries");
  RankingList out;
  bool any_clamped = false;
  for (std::size_t q = 0; q < ranking.queries.size(); ++q) {
    bool c = false;
    out.queries.push_back(
        sft_refine(queries.values().row(static_cast<Eigen::Index>(q)), ranking.queries[q], gallery, top_n, sigma, &c));
    any_clamped = any_clamped || c;
  }
  if (clamped) *clamped = any_clamped;
  return out;
}

}  // namespace sft
