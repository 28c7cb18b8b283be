#include "sft/retrieval.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <unordered_map>

namespace sft {
namespace {

constexpr std::string_view kHeader = "query\tposition\tgallery\tscore";

std::unordered_map<std::string, std::size_t> position_of(const DatasetManifest& manifest,
                                                         std::span<const std::size_t> rows) {
  std::unordered_map<std::string, std::size_t> out;
  for (std::size_t k = 0; k < rows.size(); ++k) out.emplace(manifest[rows[k]].sample_id, k);
  return out;
}

}  // namespace

void save_ranking(const RankingList& ranking, const DatasetManifest& manifest,
                  std::span<const std::size_t> query_rows, std::span<const std::size_t> gallery_rows,
                  const std::filesystem::path& path) {
  if (ranking.queries.size() != query_rows.size())
    throw std::invalid_argument("ranking and query rows disagree on the number of queries");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << kHeader << '\n';
  char buf[40];
  for (std::size_t q = 0; q < ranking.queries.size(); ++q) {
    const auto& items = ranking.queries[q];
    for (std::size_t k = 0; k < items.size(); ++k) {
      if (items[k].gallery >= gallery_rows.size()) throw std::out_of_range("gallery index out of range");
      std::snprintf(buf, sizeof buf, "%.17g", items[k].score);
      out << manifest[query_rows[q]].sample_id << '\t' << k + 1 << '\t'
          << manifest[gallery_rows[items[k].gallery]].sample_id << '\t' << buf << '\n';
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

RankingList load_ranking(const std::filesystem::path& path, const DatasetManifest& manifest,
                         std::span<const std::size_t> query_rows, std::span<const std::size_t> gallery_rows) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ranking " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw Error("ranking header must be '" + std::string(kHeader) + "'");
  const auto query_pos = position_of(manifest, query_rows);
  const auto gallery_pos = position_of(manifest, gallery_rows);

  RankingList ranking;
  ranking.queries.resize(query_rows.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      cols.push_back(line.substr(start, tab - start));
    cols.push_back(line.substr(start));
    if (cols.size() != 4) throw Error("ranking line " + std::to_string(line_no) + ": expected 4 columns");
    const auto q = query_pos.find(cols[0]);
    const auto g = gallery_pos.find(cols[2]);
    if (q == query_pos.end()) throw Error("ranking line " + std::to_string(line_no) + ": unknown query " + cols[0]);
    if (g == gallery_pos.end()) throw Error("ranking line " + std::to_string(line_no) + ": unknown gallery " + cols[2]);
    double score = 0.0;
    auto [ptr, ec] = std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), score);
    if (ec != std::errc{}) throw Error("ranking line " + std::to_string(line_no) + ": bad score");
    auto& items = ranking.queries[q->second];
    std::size_t position = 0;
    std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), position);
    if (position != items.size() + 1)
      throw Error("ranking line " + std::to_string(line_no) + ": positions must be consecutive from 1");
    items.push_back({g->second, score});
  }
  return ranking;
}

}  // namespace sft
