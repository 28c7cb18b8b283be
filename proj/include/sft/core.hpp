#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sft {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Data-level failure (bad file, invalid data). Argument misuse raises
/// std::invalid_argument instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ZeroNormRowError : public Error {
 public:
  explicit ZeroNormRowError(std::size_t row);
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

enum class FormatErrorKind { io, bad_magic, malformed_header, truncated_payload, non_finite };

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what);
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

/// n x d embedding matrix, one sample per row. Always at least 1x1 and finite.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(Matrix values);
  FeatureMatrix(std::initializer_list<std::initializer_list<double>> rows);

  Eigen::Index rows() const noexcept { return values_.rows(); }
  Eigen::Index cols() const noexcept { return values_.cols(); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

  bool operator==(const FeatureMatrix& other) const;

 private:
  Matrix values_;
};

/// Throws ZeroNormRowError naming the first row whose l2 norm is zero.
void require_nonzero_rows(const Matrix& x);

/// Row-wise l2 normalisation; the returned vector holds the original norms.
std::pair<Matrix, Vector> normalize_rows(const Matrix& x);

/// Cosine similarity matrix between the rows of a and b.
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

/// Class assignment for every node of a graph. Labels lie in [0, num_classes).
class Partition {
 public:
  Partition(std::vector<std::size_t> labels, std::size_t num_classes);

  /// Maps arbitrary integer labels onto 0..k-1 in ascending label order.
  static Partition from_raw_labels(std::span<const int> raw);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t operator[](std::size_t i) const { return labels_[i]; }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  std::vector<std::size_t> members(std::size_t cls) const;
  std::size_t class_size(std::size_t cls) const;

 private:
  std::vector<std::size_t> labels_;
  std::size_t num_classes_;
};

enum class Split { train, query, gallery };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SampleRecord {
  std::string sample_id;
  int identity = 0;
  int camera = 0;
  Split split = Split::train;

  bool operator==(const SampleRecord&) const = default;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  explicit DatasetManifest(std::vector<SampleRecord> records);

  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<SampleRecord>& records() const noexcept { return records_; }
  const SampleRecord& operator[](std::size_t i) const { return records_[i]; }

  /// Row indices of all records in the given split, in file order.
  std::vector<std::size_t> indices(Split split) const;
  std::vector<int> identities(std::span<const std::size_t> rows) const;
  std::vector<int> cameras(std::span<const std::size_t> rows) const;

  /// Throws Error when the record count differs from the feature row count.
  void check_pairing(Eigen::Index rows) const;
  /// Throws Error for any query identity lacking a gallery sample from another camera.
  void check_cross_camera() const;

  bool operator==(const DatasetManifest&) const = default;

 private:
  std::vector<SampleRecord> records_;
};

FeatureMatrix load_features(const std::filesystem::path& path);
void save_features(const FeatureMatrix& m, const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace sft
