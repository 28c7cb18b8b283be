#include "sft/core.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace sft {
namespace {

constexpr std::string_view kHeader = "sample_id\tidentity\tcamera\tsplit";

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

int parse_nonneg(std::string_view text, std::size_t line_no, const char* column) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || v < 0)
    throw Error("manifest line " + std::to_string(line_no) + ": bad " + column + " '" + std::string(text) + "'");
  return v;
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("manifest " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw Error("manifest header must be '" + std::string(kHeader) + "'");

  std::vector<SampleRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 4) throw Error("manifest line " + std::to_string(line_no) + ": expected 4 columns");
    if (cols[0].empty()) throw Error("manifest line " + std::to_string(line_no) + ": empty sample_id");
    records.push_back(SampleRecord{std::string(cols[0]), parse_nonneg(cols[1], line_no, "identity"),
                                   parse_nonneg(cols[2], line_no, "camera"), parse_split(cols[3])});
  }
  return DatasetManifest(std::move(records));
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << kHeader << '\n';
  for (const auto& r : manifest.records())
    out << r.sample_id << '\t' << r.identity << '\t' << r.camera << '\t' << to_string(r.split) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace sft
