// Embedding file layout (all little-endian):
//   bytes 0..3   magic "SFTE"
//   bytes 4..5   u16 version (= 1)
//   bytes 6..13  u64 n (rows)
//   bytes 14..21 u64 d (cols)
//   then n*d IEEE-754 binary32 values, row-major.

#include "sft/core.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace sft {
namespace {

constexpr std::array<char, 4> kMagic{'S', 'F', 'T', 'E'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 8 + 8;

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

}  // namespace

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < kHeaderBytes)
    throw FormatError(FormatErrorKind::malformed_header, "malformed header: file shorter than header");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw FormatError(FormatErrorKind::bad_magic, "malformed header: bad magic bytes");
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kVersion)
    throw FormatError(FormatErrorKind::malformed_header,
                      "malformed header: unsupported version " + std::to_string(version));
  const auto n = get_le<std::uint64_t>(bytes.data() + 6);
  const auto d = get_le<std::uint64_t>(bytes.data() + 14);
  constexpr auto kMaxDim = static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max());
  if (n == 0 || d == 0 || n > kMaxDim || d > kMaxDim)
    throw FormatError(FormatErrorKind::malformed_header, "malformed header: invalid shape");

  const std::uint64_t payload = bytes.size() - kHeaderBytes;
  if (payload != n * d * 4)
    throw FormatError(FormatErrorKind::truncated_payload,
                      "truncated payload: expected " + std::to_string(n * d * 4) + " bytes, found " +
                          std::to_string(payload));

  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const unsigned char* p = bytes.data() + kHeaderBytes;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j, p += 4) {
      const float f = std::bit_cast<float>(get_le<std::uint32_t>(p));
      if (!std::isfinite(f))
        throw FormatError(FormatErrorKind::non_finite, "non-finite value at row " + std::to_string(i) +
                                                           ", column " + std::to_string(j));
      m(i, j) = static_cast<double>(f);
    }
  }
  return FeatureMatrix(std::move(m));
}

void save_features(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  bytes.reserve(kHeaderBytes + static_cast<std::size_t>(m.rows() * m.cols()) * 4);
  bytes.insert(bytes.end(), kMagic.begin(), kMagic.end());
  put_le<std::uint16_t>(bytes, kVersion);
  put_le<std::uint64_t>(bytes, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(bytes, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const auto f = static_cast<float>(m(i, j));
      if (!std::isfinite(f)) throw Error("value at row " + std::to_string(i) + " overflows binary32");
      put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(f));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::io, "write failed for " + path.string());
}

}  // namespace sft
