#include "sft/core.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

namespace sft {

ZeroNormRowError::ZeroNormRowError(std::size_t row)
    : Error("row " + std::to_string(row) + " has zero l2 norm"), row_(row) {}

FormatError::FormatError(FormatErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}

FeatureMatrix::FeatureMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() < 1 || values_.cols() < 1)
    throw std::invalid_argument("feature matrix must be at least 1x1");
  if (!values_.allFinite()) throw std::invalid_argument("feature matrix has non-finite entries");
}

namespace {

Matrix from_nested(std::initializer_list<std::initializer_list<double>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = n > 0 ? static_cast<Eigen::Index>(rows.begin()->size()) : 0;
  Matrix m(n, d);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Eigen::Index>(row.size()) != d)
      throw std::invalid_argument("ragged row in feature matrix literal");
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : FeatureMatrix(from_nested(rows)) {}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(static_cast<Eigen::Index>(indices.size()), cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= static_cast<std::size_t>(rows()))
      throw std::out_of_range("row index out of range");
    out.row(static_cast<Eigen::Index>(k)) = values_.row(static_cast<Eigen::Index>(indices[k]));
  }
  return FeatureMatrix(std::move(out));
}

bool FeatureMatrix::operator==(const FeatureMatrix& other) const {
  return rows() == other.rows() && cols() == other.cols() && values_ == other.values_;
}

void require_nonzero_rows(const Matrix& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (x.row(i).squaredNorm() == 0.0) throw ZeroNormRowError(static_cast<std::size_t>(i));
}

std::pair<Matrix, Vector> normalize_rows(const Matrix& x) {
  require_nonzero_rows(x);
  Vector norms = x.rowwise().norm();
  Matrix unit = norms.cwiseInverse().asDiagonal() * x;
  return {std::move(unit), std::move(norms)};
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("dimension mismatch in cosine_matrix");
  const auto [ua, na] = normalize_rows(a);
  const auto [ub, nb] = normalize_rows(b);
  return ua * ub.transpose();
}

Partition::Partition(std::vector<std::size_t> labels, std::size_t num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes) {
  for (std::size_t label : labels_)
    if (label >= num_classes_) throw std::invalid_argument("partition label out of range");
}

Partition Partition::from_raw_labels(std::span<const int> raw) {
  std::map<int, std::size_t> dense;
  for (int v : raw) dense.emplace(v, 0);
  std::size_t next = 0;
  for (auto& [label, index] : dense) index = next++;
  std::vector<std::size_t> labels;
  labels.reserve(raw.size());
  for (int v : raw) labels.push_back(dense.at(v));
  return Partition(std::move(labels), dense.size());
}

std::vector<std::size_t> Partition::members(std::size_t cls) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] == cls) out.push_back(i);
  return out;
}

std::size_t Partition::class_size(std::size_t cls) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), cls));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "query") return Split::query;
  if (text == "gallery") return Split::gallery;
  throw Error("unknown split '" + std::string(text) + "'");
}

DatasetManifest::DatasetManifest(std::vector<SampleRecord> records) : records_(std::move(records)) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records_) {
    if (r.identity < 0 || r.camera < 0)
      throw Error("negative identity or camera for sample '" + r.sample_id + "'");
    if (!seen.insert(r.sample_id).second) throw Error("duplicate sample_id '" + r.sample_id + "'");
  }
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (records_[i].split == split) out.push_back(i);
  return out;
}

std::vector<int> DatasetManifest::identities(std::span<const std::size_t> rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(records_.at(r).identity);
  return out;
}

std::vector<int> DatasetManifest::cameras(std::span<const std::size_t> rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(records_.at(r).camera);
  return out;
}

void DatasetManifest::check_pairing(Eigen::Index rows) const {
  if (static_cast<Eigen::Index>(records_.size()) != rows)
    throw Error("manifest has " + std::to_string(records_.size()) + " records but features have " +
                std::to_string(rows) + " rows");
}

void DatasetManifest::check_cross_camera() const {
  std::map<int, std::set<int>> gallery_cams;
  for (const auto& r : records_)
    if (r.split == Split::gallery) gallery_cams[r.identity].insert(r.camera);
  for (const auto& r : records_) {
    if (r.split != Split::query) continue;
    auto it = gallery_cams.find(r.identity);
    bool ok = it != gallery_cams.end() &&
              std::any_of(it->second.begin(), it->second.end(), [&](int c) { return c != r.camera; });
    if (!ok)
      throw Error("query '" + r.sample_id + "' (identity " + std::to_string(r.identity) +
                  ") has no gallery match from a different camera");
  }
}

}  // namespace sft
