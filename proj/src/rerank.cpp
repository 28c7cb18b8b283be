// k-reciprocal encoding re-ranking, the comparator for SFT post-processing.

#include "sft/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sft {

void KReciprocalParams::validate() const {
  if (k2 < 1 || k1 <= k2) throw std::invalid_argument("k-reciprocal needs k1 > k2 >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("k-reciprocal lambda must lie in [0, 1]");
}

namespace {

using NeighborLists = std::vector<std::vector<std::size_t>>;

NeighborLists argsort_rows(const Matrix& distance) {
  const auto n = static_cast<std::size_t>(distance.rows());
  NeighborLists order(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = order[i];
    row.resize(n);
    std::iota(row.begin(), row.end(), std::size_t{0});
    std::stable_sort(row.begin(), row.end(), [&](std::size_t a, std::size_t b) {
      return distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) <
             distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
    });
  }
  return order;
}

// First k+1 entries of the sorted list (the point itself is normally first).
std::span<const std::size_t> head(const NeighborLists& order, std::size_t i, std::size_t k) {
  return std::span<const std::size_t>(order[i]).first(std::min(k + 1, order[i].size()));
}

std::vector<std::size_t> reciprocal_neighbors(const NeighborLists& order, std::size_t i, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t j : head(order, i, k)) {
    const auto back = head(order, j, k);
    if (std::find(back.begin(), back.end(), i) != back.end()) out.push_back(j);
  }
  return out;
}

}  // namespace

Matrix row_max_normalized(const Matrix& distance) {
  Matrix out = distance;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double peak = out.row(i).maxCoeff();
    if (peak > 0.0) out.row(i) /= peak;
  }
  return out;
}

Matrix k_reciprocal_jaccard(const Matrix& distance, std::size_t k1, std::size_t k2) {
  if (distance.rows() != distance.cols()) throw std::invalid_argument("distance matrix must be square");
  if (k1 < 1 || k2 < 1) throw std::invalid_argument("k1 and k2 must be >= 1");
  const auto n = static_cast<std::size_t>(distance.rows());
  const NeighborLists order = argsort_rows(distance);
  const auto half_k1 = static_cast<std::size_t>(std::nearbyint(static_cast<double>(k1) / 2.0));

  Matrix encoding = Matrix::Zero(distance.rows(), distance.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<std::size_t> base = reciprocal_neighbors(order, i, k1);
    std::vector<std::size_t> expanded = base;
    for (std::size_t candidate : base) {
      const std::vector<std::size_t> local = reciprocal_neighbors(order, candidate, half_k1);
      const auto shared = std::count_if(local.begin(), local.end(), [&](std::size_t j) {
        return std::find(base.begin(), base.end(), j) != base.end();
      });
      if (static_cast<double>(shared) > 2.0 / 3.0 * static_cast<double>(local.size()))
        expanded.insert(expanded.end(), local.begin(), local.end());
    }
    std::sort(expanded.begin(), expanded.end());
    expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());

    double total = 0.0;
    for (std::size_t j : expanded) total += std::exp(-distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    for (std::size_t j : expanded)
      encoding(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::exp(-distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) / total;
  }

  if (k2 != 1) {
    Matrix expanded_encoding(encoding.rows(), encoding.cols());
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(encoding.cols());
      const auto neigh = std::span<const std::size_t>(order[i]).first(std::min(k2, n));
      for (std::size_t j : neigh) acc += encoding.row(static_cast<Eigen::Index>(j));
      expanded_encoding.row(static_cast<Eigen::Index>(i)) = acc / static_cast<double>(neigh.size());
    }
    encoding = std::move(expanded_encoding);
  }

  Matrix jaccard(distance.rows(), distance.cols());
  for (Eigen::Index i = 0; i < encoding.rows(); ++i) {
    for (Eigen::Index j = 0; j < encoding.rows(); ++j) {
      const double overlap = encoding.row(i).cwiseMin(encoding.row(j)).sum();
      jaccard(i, j) = 1.0 - overlap / (2.0 - overlap);
    }
  }
  return jaccard;
}

RankingList k_reciprocal_rerank(const FeatureMatrix& queries, const FeatureMatrix& gallery, const EvalLabels& labels,
                                const KReciprocalParams& params) {
  params.validate();
  if (queries.cols() != gallery.cols()) throw std::invalid_argument("query/gallery dimension mismatch");
  const Eigen::Index nq = queries.rows();
  const Eigen::Index ng = gallery.rows();
  if (static_cast<Eigen::Index>(labels.query_identity.size()) != nq ||
      static_cast<Eigen::Index>(labels.gallery_identity.size()) != ng)
    throw std::invalid_argument("labels do not cover the query and gallery sets");

  Matrix all(nq + ng, queries.cols());
  all.topRows(nq) = queries.values();
  all.bottomRows(ng) = gallery.values();
  const Matrix distance_raw = (1.0 - cosine_matrix(all, all).array()).matrix();
  const Matrix distance = row_max_normalized(distance_raw);
  // Query-gallery cosines computed exactly as rank() does, so lambda = 1 reproduces its order.
  const Matrix cos = cosine_matrix(queries.values(), gallery.values());
  const Matrix jaccard = params.lambda < 1.0 ? k_reciprocal_jaccard(distance, params.k1, params.k2)
                                             : Matrix::Zero(distance.rows(), distance.cols());

  RankingList out;
  for (Eigen::Index q = 0; q < nq; ++q) {
    struct Entry {
      std::size_t g;
      double dist;
      double cos;
    };
    std::vector<Entry> entries;
    for (Eigen::Index g = 0; g < ng; ++g) {
      if (labels.is_junk(static_cast<std::size_t>(q), static_cast<std::size_t>(g))) continue;
      const double peak = distance_raw.row(q).maxCoeff();
      const double original = peak > 0.0 ? (1.0 - cos(q, g)) / peak : 1.0 - cos(q, g);
      const double d = params.lambda * original + (1.0 - params.lambda) * jaccard(q, nq + g);
      entries.push_back({static_cast<std::size_t>(g), d, cos(q, g)});
    }
    if (entries.empty()) throw Error("query " + std::to_string(q) + " has no valid gallery");
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      if (a.cos != b.cos) return a.cos > b.cos;
      return a.g < b.g;
    });
    QueryRanking items;
    for (const auto& e : entries) items.push_back({e.g, -e.dist});
    out.queries.push_back(std::move(items));
  }
  return out;
}

}  // namespace sft
