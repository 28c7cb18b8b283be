#include "sft/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <tuple>

namespace sft {

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::ablation: return "ablation";
    case ExperimentKind::sigma_sweep: return "sigma-sweep";
    case ExperimentKind::k_sweep: return "k-sweep";
    case ExperimentKind::ncut_comparison: return "ncut";
  }
  return "ablation";
}

ExperimentKind parse_experiment_kind(std::string_view text) {
  if (text == "ablation") return ExperimentKind::ablation;
  if (text == "sigma-sweep") return ExperimentKind::sigma_sweep;
  if (text == "k-sweep") return ExperimentKind::k_sweep;
  if (text == "ncut") return ExperimentKind::ncut_comparison;
  throw std::invalid_argument("unknown experiment kind '" + std::string(text) + "'");
}

Method baseline_method() { return Method{"baseline", false, Objective::baseline, DeepSupervision::off}; }
Method sft_shared_method() { return Method{"sft+ds(s)", false, Objective::sft, DeepSupervision::shared}; }
Method ncut_method() { return Method{"ncut", false, Objective::ncut, DeepSupervision::off}; }

std::vector<Method> ablation_methods() {
  Method post = sft_shared_method();
  post.name = "sft+ds(s)+post";
  post.post = true;
  Method kr = sft_shared_method();
  kr.name = "sft+ds(s)+kr";
  kr.kr = true;
  return {Method{"raw", true},
          baseline_method(),
          Method{"sft", false, Objective::sft, DeepSupervision::off},
          Method{"sft+ds(u)", false, Objective::sft, DeepSupervision::unshared},
          sft_shared_method(),
          post,
          kr};
}

ExperimentConfig ExperimentConfig::toy_defaults() {
  ExperimentConfig c;
  c.data.topology = Topology::intertwined_spirals;
  c.data.num_identities = 16;
  c.data.samples_per_identity = 8;
  c.data.holdout_samples = 8;
  c.data.spiral_turns = 0.5;
  c.data.dim = 16;
  c.data.num_cameras = 2;
  c.data.inter_class_separation = 1.0;
  c.data.intra_class_spread = 0.05;
  c.train.batches_per_epoch = 10;
  return c;
}

const ExperimentSummary& ExperimentResult::find(std::string_view method, double param) const {
  for (const auto& s : summary)
    if (s.method.name == method && s.param == param) return s;
  throw std::out_of_range("no summary row for method '" + std::string(method) + "'");
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

FeatureMatrix embed_features(const Network& net, const FeatureMatrix& features) {
  return FeatureMatrix(net.model.embed(features.values()));
}

EvalReport evaluate_method(const Method& method, const RetrievalSplit& split, double sigma, std::size_t top_n,
                           const KReciprocalParams& kr) {
  RankingList ranking = method.kr ? k_reciprocal_rerank(split.query, split.gallery, split.labels, kr)
                                  : rank(split.query, split.gallery, split.labels);
  if (method.post) ranking = sft_refine_all(split.query, ranking, split.gallery, top_n, sigma);
  EvalReport report = evaluate(ranking, split.labels);
  report.config["method"] = method.name;
  return report;
}

namespace {

struct Run {
  Method method;
  std::string param_name;
  double param = 0.0;
  TrainConfig train;
};

std::vector<Run> plan_runs(const ExperimentConfig& config) {
  std::vector<Run> runs;
  switch (config.kind) {
    case ExperimentKind::ablation:
      for (const auto& m : ablation_methods()) runs.push_back({m, "", 0.0, config.train});
      break;
    case ExperimentKind::ncut_comparison:
      runs.push_back({ncut_method(), "", 0.0, config.train});
      runs.push_back({sft_shared_method(), "", 0.0, config.train});
      break;
    case ExperimentKind::sigma_sweep:
      for (double s : config.sigmas) {
        TrainConfig t = config.train;
        t.sigma = s;
        runs.push_back({sft_shared_method(), "sigma", s, t});
      }
      break;
    case ExperimentKind::k_sweep:
      for (std::size_t k : config.ks) {
        TrainConfig t = config.train;
        t.samples_per_identity = k;
        runs.push_back({baseline_method(), "K", static_cast<double>(k), t});
        runs.push_back({sft_shared_method(), "K", static_cast<double>(k), t});
      }
      break;
  }
  return runs;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  if (config.seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  if (config.top_n == 0) throw std::invalid_argument("top_n must be >= 1");
  config.kr.validate();
  const std::vector<Run> runs = plan_runs(config);
  ExperimentResult result;

  for (std::uint64_t seed : config.seeds) {
    SyntheticSpec data = config.data;
    data.seed = seed;
    const auto [features, manifest] = generate_synthetic(data);
    const RetrievalSplit raw_split = split_query_gallery(features, manifest);
    std::vector<std::size_t> test_rows = raw_split.query_rows;
    test_rows.insert(test_rows.end(), raw_split.gallery_rows.begin(), raw_split.gallery_rows.end());
    const std::vector<int> test_ids = manifest.identities(test_rows);

    // post/kr variants reuse the network trained for the same recipe
    std::map<std::tuple<Objective, DeepSupervision, double, std::size_t>, Network> trained;
    for (const Run& run : runs) {
      TrainConfig cfg = run.train;
      cfg.seed = seed;
      cfg.objective = run.method.objective;
      cfg.deep_supervision = run.method.deep_supervision;

      FeatureMatrix embedded = features;
      if (!run.method.raw) {
        const auto key = std::make_tuple(cfg.objective, cfg.deep_supervision, cfg.sigma, cfg.samples_per_identity);
        auto it = trained.find(key);
        if (it == trained.end()) it = trained.emplace(key, train(features, manifest, cfg).net).first;
        embedded = embed_features(it->second, features);
      }
      const RetrievalSplit split = split_query_gallery(embedded, manifest);
      ExperimentCell cell{run.method, run.param_name, run.param, seed,
                          evaluate_method(run.method, split, cfg.sigma, config.top_n, config.kr), {}};
      cell.test_affinity = affinity_stats(embedded.select_rows(test_rows).values(), test_ids, cfg.sigma);
      cell.report.config["sigma"] = format_param(cfg.sigma);
      cell.report.config["top_n"] = std::to_string(config.top_n);
      cell.report.config["seed"] = std::to_string(seed);
      result.cells.push_back(std::move(cell));
    }
  }

  for (const Run& run : runs) {
    std::vector<double> map, r1, r5, r10, inter, intra;
    for (const auto& c : result.cells) {
      if (c.method.name != run.method.name || c.param != run.param) continue;
      map.push_back(c.report.mAP);
      r1.push_back(c.report.cmc.at(1));
      r5.push_back(c.report.cmc.at(5));
      r10.push_back(c.report.cmc.at(10));
      inter.push_back(c.test_affinity.mean_inter);
      intra.push_back(c.test_affinity.mean_intra);
    }
    result.summary.push_back(ExperimentSummary{run.method, run.param_name, run.param, median(map), median(r1),
                                               median(r5), median(r10), median(inter), median(intra)});
  }
  return result;
}

std::string experiment_tsv(const ExperimentResult& result) {
  std::string out = "method\tsft\tds_u\tds_s\tpost\tkr\tparam\tvalue\tseed\tmAP\trank1\trank5\trank10\tinter_affinity\tintra_affinity\n";
  auto flags = [](const Method& m) {
    const bool sft = !m.raw && m.objective == Objective::sft;
    std::string f;
    f += sft ? "1\t" : "0\t";
    f += sft && m.deep_supervision == DeepSupervision::unshared ? "1\t" : "0\t";
    f += sft && m.deep_supervision == DeepSupervision::shared ? "1\t" : "0\t";
    f += m.post ? "1\t" : "0\t";
    f += m.kr ? "1" : "0";
    return f;
  };
  auto row = [&](const Method& m, const std::string& pname, double p, const std::string& seed, double map, double r1,
                 double r5, double r10, double inter, double intra) {
    out += m.name + '\t' + flags(m) + '\t' + (pname.empty() ? "-" : pname) + '\t' +
           (pname.empty() ? "-" : format_param(p)) + '\t' + seed + '\t' + format_value(map) + '\t' + format_value(r1) +
           '\t' + format_value(r5) + '\t' + format_value(r10) + '\t' + format_value(inter) + '\t' +
           format_value(intra) + '\n';
  };
  for (const auto& c : result.cells)
    row(c.method, c.param_name, c.param, std::to_string(c.seed), c.report.mAP, c.report.cmc.at(1), c.report.cmc.at(5),
        c.report.cmc.at(10), c.test_affinity.mean_inter, c.test_affinity.mean_intra);
  for (const auto& s : result.summary)
    row(s.method, s.param_name, s.param, "median", s.mAP, s.rank1, s.rank5, s.rank10, s.inter_affinity,
        s.intra_affinity);
  return out;
}

std::string experiment_json(const ExperimentResult& result, const ExperimentConfig& config) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(config.kind));
  j["seeds"] = config.seeds;
  j["top_n"] = config.top_n;
  j["train_config"] = format_train_config(config.train);
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& c : result.cells) {
    nlohmann::ordered_json cell;
    cell["method"] = c.method.name;
    if (!c.param_name.empty()) cell[c.param_name] = c.param;
    cell["seed"] = c.seed;
    cell["mAP"] = c.report.mAP;
    cell["cmc"] = {{"1", c.report.cmc.at(1)}, {"5", c.report.cmc.at(5)}, {"10", c.report.cmc.at(10)}};
    cell["mean_inter_affinity"] = c.test_affinity.mean_inter;
    cell["mean_intra_affinity"] = c.test_affinity.mean_intra;
    cells.push_back(std::move(cell));
  }
  j["cells"] = std::move(cells);
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& s : result.summary) {
    nlohmann::ordered_json row;
    row["method"] = s.method.name;
    if (!s.param_name.empty()) row[s.param_name] = s.param;
    row["median_mAP"] = s.mAP;
    row["median_rank1"] = s.rank1;
    row["median_rank5"] = s.rank5;
    row["median_inter_affinity"] = s.inter_affinity;
    summary.push_back(std::move(row));
  }
  j["summary"] = std::move(summary);
  return j.dump(2) + "\n";
}

}  // namespace sft
