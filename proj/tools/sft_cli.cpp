// sft: command-line front end for the spectral feature transformation library.

#include "sft/experiment.hpp"
#include "sft/spectral.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kDataError = 1;
constexpr int kUsageError = 2;

// Usage problems detected after parsing (bad combinations, out-of-range values).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw sft::Error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw sft::Error("write failed for " + path);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad seed list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty seed list");
  return out;
}

struct GenOptions {
  std::string topology = "spirals";
  std::size_t identities = 16;
  std::size_t per_id = 8;
  std::size_t dim = 32;
  std::size_t cameras = 2;
  double spread = 0.05;
  double separation = 1.0;
  std::size_t holdout = 0;
  std::size_t holdout_samples = 0;
  double turns = 1.0;
  std::uint64_t seed = 1;
  std::string out;
  std::string manifest;
};

void add_data_flags(CLI::App* cmd, GenOptions& o) {
  cmd->add_option("--spec", o.topology, "Topology: spirals or blobs")
      ->check(CLI::IsMember({"spirals", "blobs", "intertwined_spirals", "gaussian_blobs"}));
  cmd->add_option("--identities", o.identities, "Number of identities");
  cmd->add_option("--per-id", o.per_id, "Samples per identity");
  cmd->add_option("--dim", o.dim, "Feature dimension");
  cmd->add_option("--cameras", o.cameras, "Number of cameras");
  cmd->add_option("--spread", o.spread, "Within-identity noise scale");
  cmd->add_option("--separation", o.separation, "Between-identity scale");
  cmd->add_option("--holdout", o.holdout, "Trailing identities used as query/gallery");
  cmd->add_option("--holdout-samples", o.holdout_samples, "Extra query/gallery samples per remaining identity");
  cmd->add_option("--turns", o.turns, "Turns swept by each spiral arm");
}

sft::SyntheticSpec to_spec(const GenOptions& o) {
  sft::SyntheticSpec s;
  s.topology = sft::parse_topology(o.topology);
  s.num_identities = o.identities;
  s.samples_per_identity = o.per_id;
  s.dim = o.dim;
  s.num_cameras = o.cameras;
  s.intra_class_spread = o.spread;
  s.inter_class_separation = o.separation;
  s.holdout_identities = o.holdout;
  s.holdout_samples = o.holdout_samples;
  s.spiral_turns = o.turns;
  s.seed = o.seed;
  return s;
}

struct TrainFlags {
  std::string config;
  std::vector<std::string> set;
  std::optional<double> sigma;
  std::optional<std::size_t> p, k, epochs;
  std::optional<std::string> objective, deep_supervision;
  bool diagnostics = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "key = value training config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.set, "Override a config key, as key=value");
  cmd->add_option("--sigma", f.sigma, "SFT temperature");
  cmd->add_option("--P", f.p, "Identities per batch");
  cmd->add_option("--K", f.k, "Samples per identity in a batch");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--objective", f.objective, "sft, baseline or ncut")
      ->check(CLI::IsMember({"sft", "baseline", "ncut"}));
  cmd->add_option("--deep-supervision", f.deep_supervision, "off, shared or unshared")
      ->check(CLI::IsMember({"off", "shared", "unshared"}));
  cmd->add_flag("--diagnostics", f.diagnostics, "Log per-epoch affinity and Ncut diagnostics");
}

sft::TrainConfig build_train_config(const TrainFlags& f, sft::TrainConfig base, std::uint64_t seed) {
  try {
    if (!f.config.empty()) base = sft::load_train_config(f.config, base);
    for (const auto& kv : f.set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      sft::set_config_value(base, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.sigma) base.sigma = *f.sigma;
    if (f.p) base.identities_per_batch = *f.p;
    if (f.k) base.samples_per_identity = *f.k;
    if (f.epochs) base.epochs = *f.epochs;
    if (f.objective) base.objective = sft::parse_objective(*f.objective);
    if (f.deep_supervision) base.deep_supervision = sft::parse_deep_supervision(*f.deep_supervision);
    if (f.diagnostics) base.diagnostics = true;
    base.seed = seed;
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return base;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int run_diagnose(const std::string& features_path, const std::string& manifest_path, double sigma,
                 const std::string& split_name) {
  const sft::FeatureMatrix features = sft::load_features(features_path);
  const sft::DatasetManifest manifest = sft::load_manifest(manifest_path);
  manifest.check_pairing(features.rows());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (split_name == "all" || sft::to_string(manifest[i].split) == split_name) rows.push_back(i);
  if (rows.empty()) throw sft::Error("no samples in split '" + split_name + "'");
  const std::vector<int> ids = manifest.identities(rows);
  const sft::Partition part = sft::Partition::from_raw_labels(ids);
  if (part.num_classes() < 2) throw sft::Error("diagnose needs at least two identities");

  const sft::AffinityMatrix w = sft::affinity(features.select_rows(rows), sigma);
  std::vector<int> class_identity(part.num_classes());
  for (std::size_t i = 0; i < rows.size(); ++i) class_identity[part[i]] = ids[i];

  std::cout << "identity\tsize\tescape_probability\tncut\tescape_sum\tresidual\n";
  double worst = 0.0;
  double total_escape = 0.0;
  for (std::size_t c = 0; c < part.num_classes(); ++c) {
    const double escape = sft::escape_probability(w, part, c);
    const sft::NcutEscapeCheck check = sft::ncut_escape_identity_check(w, part, c);
    worst = std::max(worst, check.residual());
    total_escape += escape;
    std::cout << class_identity[c] << '\t' << part.class_size(c) << '\t' << format_g(escape) << '\t'
              << format_g(check.ncut) << '\t' << format_g(check.escape_sum) << '\t' << format_g(check.residual())
              << '\n';
  }
  std::cout << "# sigma\t" << format_g(sigma) << '\n'
            << "# multiclass_ncut\t" << format_g(total_escape) << '\n'
            << "# max_identity_residual\t" << format_g(worst) << '\n';
  return worst < 1e-12 ? 0 : kDataError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral feature transformation: data generation, training, retrieval and evaluation"};
  app.require_subcommand(1);
  app.allow_extras(false);

  std::uint64_t seed = 1;
  auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", seed, "Seed for every random draw"); };

  // gen
  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic clustered dataset");
  add_data_flags(gen_cmd, gen);
  add_seed(gen_cmd);
  gen_cmd->add_option("--out", gen.out, "Embedding file to write")->required();
  gen_cmd->add_option("--manifest", gen.manifest, "Manifest TSV to write")->required();

  // train
  TrainFlags train_flags;
  std::string train_features, train_manifest, train_out, train_log;
  auto* train_cmd = app.add_subcommand("train", "Train an embedding model with SFT");
  train_cmd->add_option("--features", train_features, "Input embedding file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--manifest", train_manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Model file to write (JSON)")->required();
  train_cmd->add_option("--log", train_log, "Training log path (default: stdout)");
  add_train_flags(train_cmd, train_flags);
  add_seed(train_cmd);

  // transform
  std::string tf_features, tf_model, tf_out;
  std::optional<double> tf_sigma;
  auto* tf_cmd = app.add_subcommand("transform", "Embed features with a model, or apply SFT to a matrix");
  tf_cmd->add_option("--features", tf_features, "Input embedding file")->required()->check(CLI::ExistingFile);
  auto* tf_model_opt = tf_cmd->add_option("--model", tf_model, "Model file from `train`")->check(CLI::ExistingFile);
  auto* tf_sigma_opt = tf_cmd->add_option("--sigma", tf_sigma, "Apply SFT over all rows with this temperature");
  tf_model_opt->excludes(tf_sigma_opt);
  tf_cmd->add_option("--out", tf_out, "Embedding file to write")->required();

  // rank
  std::string rank_features, rank_manifest, rank_out, rank_method = "cosine";
  sft::KReciprocalParams kr;
  auto* rank_cmd = app.add_subcommand("rank", "Rank the gallery for every query");
  rank_cmd->add_option("--features", rank_features, "Embedding file")->required()->check(CLI::ExistingFile);
  rank_cmd->add_option("--manifest", rank_manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  rank_cmd->add_option("--out", rank_out, "Ranking TSV to write")->required();
  rank_cmd->add_option("--method", rank_method, "cosine or kr")->check(CLI::IsMember({"cosine", "kr"}));
  rank_cmd->add_option("--k1", kr.k1, "k-reciprocal k1");
  rank_cmd->add_option("--k2", kr.k2, "k-reciprocal k2");
  rank_cmd->add_option("--lambda", kr.lambda, "Weight of the original distance");

  // eval
  std::string eval_ranking, eval_manifest, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Compute CMC and mAP for a ranking");
  eval_cmd->add_option("--ranking", eval_ranking, "Ranking TSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", eval_manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval_out, "Report JSON (default: stdout)");

  // refine
  std::string ref_ranking, ref_features, ref_manifest, ref_out;
  std::size_t ref_top_n = 50;
  double ref_sigma = 0.1;
  auto* ref_cmd = app.add_subcommand("refine", "SFT post-processing of the top-n of each ranking");
  ref_cmd->add_option("--ranking", ref_ranking, "Ranking TSV")->required()->check(CLI::ExistingFile);
  ref_cmd->add_option("--features", ref_features, "Embedding file")->required()->check(CLI::ExistingFile);
  ref_cmd->add_option("--manifest", ref_manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  ref_cmd->add_option("--top-n", ref_top_n, "Prefix length to refine")->check(CLI::PositiveNumber);
  ref_cmd->add_option("--sigma", ref_sigma, "SFT temperature");
  ref_cmd->add_option("--out", ref_out, "Refined ranking TSV")->required();

  // diagnose
  std::string diag_features, diag_manifest, diag_split = "all";
  double diag_sigma = 0.1;
  auto* diag_cmd = app.add_subcommand("diagnose", "Per-identity escape probabilities and the Ncut identity");
  diag_cmd->add_option("--features", diag_features, "Embedding file")->required()->check(CLI::ExistingFile);
  diag_cmd->add_option("--manifest", diag_manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  diag_cmd->add_option("--sigma", diag_sigma, "Affinity temperature");
  diag_cmd->add_option("--split", diag_split, "all, train, query or gallery")
      ->check(CLI::IsMember({"all", "train", "query", "gallery"}));

  // experiment
  GenOptions exp_data;
  {
    const auto toy = sft::ExperimentConfig::toy_defaults();
    exp_data.identities = toy.data.num_identities;
    exp_data.holdout = toy.data.holdout_identities;
    exp_data.holdout_samples = toy.data.holdout_samples;
    exp_data.turns = toy.data.spiral_turns;
    exp_data.per_id = toy.data.samples_per_identity;
    exp_data.dim = toy.data.dim;
    exp_data.spread = toy.data.intra_class_spread;
    exp_data.separation = toy.data.inter_class_separation;
  }
  TrainFlags exp_train;
  std::string exp_kind = "ablation", exp_seeds = "1,2,3,4,5", exp_out, exp_json;
  std::size_t exp_top_n = 50;
  std::vector<double> exp_sigmas;
  std::vector<std::size_t> exp_ks;
  sft::KReciprocalParams exp_kr;
  auto* exp_cmd = app.add_subcommand("experiment", "Toy ablation, sweeps and the Ncut comparison");
  exp_cmd->add_option("--kind", exp_kind, "ablation, sigma-sweep, k-sweep or ncut")
      ->check(CLI::IsMember({"ablation", "sigma-sweep", "k-sweep", "ncut"}));
  exp_cmd->add_option("--seeds", exp_seeds, "Comma-separated run seeds");
  exp_cmd->add_option("--top-n", exp_top_n, "Post-processing prefix length")->check(CLI::PositiveNumber);
  exp_cmd->add_option("--sigmas", exp_sigmas, "Temperatures for the sigma sweep");
  exp_cmd->add_option("--ks", exp_ks, "K values for the K sweep");
  exp_cmd->add_option("--k1", exp_kr.k1, "k-reciprocal k1");
  exp_cmd->add_option("--k2", exp_kr.k2, "k-reciprocal k2");
  exp_cmd->add_option("--lambda", exp_kr.lambda, "k-reciprocal lambda");
  exp_cmd->add_option("--out", exp_out, "TSV table (default: stdout)");
  exp_cmd->add_option("--json", exp_json, "JSON report");
  add_data_flags(exp_cmd, exp_data);
  add_train_flags(exp_cmd, exp_train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*gen_cmd) {
      gen.seed = seed;
      sft::SyntheticSpec spec;
      try {
        spec = to_spec(gen);
        spec.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto [features, manifest] = sft::generate_synthetic(spec);
      sft::save_features(features, gen.out);
      sft::save_manifest(manifest, gen.manifest);
      std::cerr << "wrote " << features.rows() << "x" << features.cols() << " features to " << gen.out << '\n';
    } else if (*train_cmd) {
      const sft::TrainConfig cfg = build_train_config(train_flags, {}, seed);
      const auto features = sft::load_features(train_features);
      const auto manifest = sft::load_manifest(train_manifest);
      const sft::TrainResult result = sft::train(features, manifest, cfg);
      sft::save_network(result.net, train_out);
      write_text(sft::format_training_log(result.log), train_log);
    } else if (*tf_cmd) {
      const auto features = sft::load_features(tf_features);
      if (!tf_model.empty()) {
        sft::save_features(sft::embed_features(sft::load_network(tf_model), features), tf_out);
      } else if (tf_sigma) {
        if (!(*tf_sigma > 0.0)) throw UsageError("--sigma must be positive");
        sft::save_features(sft::sft_transform(features, *tf_sigma), tf_out);
      } else {
        throw UsageError("transform needs --model or --sigma");
      }
    } else if (*rank_cmd) {
      const auto features = sft::load_features(rank_features);
      const auto manifest = sft::load_manifest(rank_manifest);
      const sft::RetrievalSplit split = sft::split_query_gallery(features, manifest);
      sft::RankingList ranking;
      if (rank_method == "kr") {
        try {
          kr.validate();
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        ranking = sft::k_reciprocal_rerank(split.query, split.gallery, split.labels, kr);
      } else {
        ranking = sft::rank(split.query, split.gallery, split.labels);
      }
      sft::save_ranking(ranking, manifest, split.query_rows, split.gallery_rows, rank_out);
    } else if (*eval_cmd) {
      const auto manifest = sft::load_manifest(eval_manifest);
      manifest.check_cross_camera();
      const auto query_rows = manifest.indices(sft::Split::query);
      const auto gallery_rows = manifest.indices(sft::Split::gallery);
      const auto ranking = sft::load_ranking(eval_ranking, manifest, query_rows, gallery_rows);
      sft::EvalReport report = sft::evaluate(ranking, sft::eval_labels(manifest, query_rows, gallery_rows));
      report.config["ranking"] = std::filesystem::path(eval_ranking).filename().string();
      write_text(sft::report_to_json(report), eval_out);
    } else if (*ref_cmd) {
      const auto features = sft::load_features(ref_features);
      const auto manifest = sft::load_manifest(ref_manifest);
      const sft::RetrievalSplit split = sft::split_query_gallery(features, manifest);
      const auto ranking = sft::load_ranking(ref_ranking, manifest, split.query_rows, split.gallery_rows);
      if (!(ref_sigma > 0.0)) throw UsageError("--sigma must be positive");
      bool clamped = false;
      const auto refined = sft::sft_refine_all(split.query, ranking, split.gallery, ref_top_n, ref_sigma, &clamped);
      if (clamped) std::cerr << "warning: --top-n " << ref_top_n << " exceeds some ranking lengths; clamped\n";
      sft::save_ranking(refined, manifest, split.query_rows, split.gallery_rows, ref_out);
    } else if (*diag_cmd) {
      if (!(diag_sigma > 0.0)) throw UsageError("--sigma must be positive");
      return run_diagnose(diag_features, diag_manifest, diag_sigma, diag_split);
    } else if (*exp_cmd) {
      sft::ExperimentConfig cfg = sft::ExperimentConfig::toy_defaults();
      cfg.kind = sft::parse_experiment_kind(exp_kind);
      cfg.seeds = parse_seed_list(exp_seeds);
      cfg.top_n = exp_top_n;
      cfg.kr = exp_kr;
      if (!exp_sigmas.empty()) cfg.sigmas = exp_sigmas;
      if (!exp_ks.empty()) cfg.ks = exp_ks;
      try {
        cfg.data = to_spec(exp_data);
        cfg.data.validate();
        cfg.kr.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      cfg.train = build_train_config(exp_train, cfg.train, 0);
      const sft::ExperimentResult result = sft::run_experiment(cfg);
      write_text(sft::experiment_tsv(result), exp_out);
      if (!exp_json.empty()) write_text(sft::experiment_json(result, cfg), exp_json);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return 0;
}
