// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "sft/experiment.hpp"
#include "sft/spectral.hpp"
#include "sft/transform.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <sys/wait.h>

using namespace sft;
using testing::max_abs_diff;
using testing::numeric_gradient;
using testing::random_matrix;
using testing::relative_error;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const Verdict& v) {
  std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  if (!v.pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

constexpr std::array kSigmas{0.02, 0.1, 1.0};

std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < k ? i : rng.index(k);
  rng.shuffle(std::span(labels));
  return labels;
}

Verdict algebraic_identities() {
  Rng rng(101);
  double row_sum = 0, softmax = 0, escape = 0, identity = 0, stationary_err = 0;
  const int graphs = 120;
  for (int g = 0; g < graphs; ++g) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(11));
    const auto d = static_cast<Eigen::Index>(1 + rng.index(8));
    const double sigma = kSigmas[static_cast<std::size_t>(g) % 3];
    const Matrix x = random_matrix(n, d, rng);
    const AffinityMatrix w = affinity(FeatureMatrix(x), sigma);
    const Matrix t = transition(w).values();
    row_sum = std::max(row_sum, (t.rowwise().sum().array() - 1.0).abs().maxCoeff());

    Matrix c = cosine_matrix(x, x);
    c.diagonal().setOnes();
    Matrix sm(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::ArrayXd e = ((c.row(i).array() - c.row(i).maxCoeff()) / sigma).exp().transpose();
      sm.row(i) = (e / e.sum()).matrix().transpose();
    }
    softmax = std::max(softmax, max_abs_diff(t, sm));

    const std::size_t k = 2 + rng.index(std::min<std::size_t>(3, static_cast<std::size_t>(n) - 1));
    const Partition part(random_labels(static_cast<std::size_t>(n), std::min<std::size_t>(k, static_cast<std::size_t>(n)), rng),
                         std::min<std::size_t>(k, static_cast<std::size_t>(n)));
    for (std::size_t a = 0; a < part.num_classes(); ++a) {
      double rest = 0;
      for (std::size_t b = 0; b < part.num_classes(); ++b)
        if (b != a) rest += cut(w, part, a, b);
      escape = std::max(escape, std::abs(escape_probability(w, part, a) - rest / volume(w, part, a)));
      identity = std::max(identity, ncut_escape_identity_check(w, part, a).residual());
    }
    const Vector pi = stationary(w).stationary;
    stationary_err = std::max(stationary_err, (pi.transpose() * t - pi.transpose()).cwiseAbs().maxCoeff());
  }
  Verdict v;
  v.pass = row_sum <= 1e-9 && softmax <= 1e-12 && escape <= 1e-12 && identity < 1e-12 && stationary_err <= 1e-10;
  v.detail = std::to_string(graphs) + " graphs; rowsum " + fmt("%.2e", row_sum) + ", softmax " + fmt("%.2e", softmax) +
             ", escape " + fmt("%.2e", escape) + ", identity " + fmt("%.2e", identity) + ", stationary " +
             fmt("%.2e", stationary_err);
  return v;
}

// Every trainable entry of a network, in the order NetworkGradients is flattened.
std::vector<double*> parameters(Network& net) {
  std::vector<double*> out;
  auto add = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  add(net.model.w1);
  add(net.model.b1);
  add(net.model.w2);
  add(net.model.b2);
  add(net.classifier.weight);
  if (net.orig_classifier) add(net.orig_classifier->weight);
  return out;
}

std::vector<double> flatten(const NetworkGradients& g) {
  std::vector<double> out;
  auto add = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  add(g.model.w1);
  add(g.model.b1);
  add(g.model.w2);
  add(g.model.b2);
  add(g.classifier);
  add(g.orig_classifier);
  return out;
}

double vector_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

Verdict gradients() {
  Rng rng(202);
  const int instances = 20;
  double sft_err = 0, am_err = 0, ncut_err = 0;
  for (int k = 0; k < instances; ++k) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(7));
    const auto d = static_cast<Eigen::Index>(1 + rng.index(8));
    const double sigma = kSigmas[static_cast<std::size_t>(k) % 3];
    const Matrix x = random_matrix(n, d, rng);
    const Matrix g = random_matrix(n, d, rng);
    auto f = [&](const Matrix& v) { return (sft_transform(FeatureMatrix(v), sigma).values().array() * g.array()).sum(); };
    sft_err = std::max(sft_err, relative_error(sft_backward(FeatureMatrix(x), sigma, FeatureMatrix(g)).values(),
                                               numeric_gradient(f, x)));
  }
  for (int k = 0; k < instances; ++k) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(6));
    const auto d = static_cast<Eigen::Index>(2 + rng.index(6));
    const auto c = static_cast<Eigen::Index>(2 + rng.index(4));
    const Matrix f = random_matrix(n, d, rng);
    const Matrix w = random_matrix(c, d, rng);
    std::vector<std::size_t> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = rng.index(static_cast<std::size_t>(c));
    const Partition part(labels, static_cast<std::size_t>(c));
    const AmSoftmaxClassifier clf{w, 0.3, 15.0};
    const AmSoftmaxResult r = am_softmax_loss(f, part, clf);
    auto by_f = [&](const Matrix& v) { return am_softmax_loss(v, part, clf).loss; };
    auto by_w = [&](const Matrix& v) { return am_softmax_loss(f, part, AmSoftmaxClassifier{v, 0.3, 15.0}).loss; };
    am_err = std::max({am_err, relative_error(r.grad_features, numeric_gradient(by_f, f)),
                       relative_error(r.grad_weight, numeric_gradient(by_w, w))});
  }
  for (int k = 0; k < instances; ++k) {
    const std::size_t n = 3 + rng.index(8);
    const auto d = static_cast<Eigen::Index>(2 + rng.index(6));
    const double sigma = std::array{0.1, 0.5, 1.0}[static_cast<std::size_t>(k) % 3];
    const Matrix x = random_matrix(static_cast<Eigen::Index>(n), d, rng);
    const std::size_t classes = 2 + rng.index(std::min<std::size_t>(3, n - 2));
    const Partition part(random_labels(n, classes, rng), classes);
    auto f = [&](const Matrix& v) { return ncut_loss(v, part, sigma).value; };
    ncut_err = std::max(ncut_err, relative_error(ncut_loss(x, part, sigma).gradient, numeric_gradient(f, x)));
  }

  std::map<DeepSupervision, double> step_err;
  std::map<DeepSupervision, int> step_count;
  for (DeepSupervision ds : {DeepSupervision::off, DeepSupervision::shared, DeepSupervision::unshared})
    for (int k = 0; k < 21; ++k) {
      TrainConfig cfg;
      cfg.objective = std::array{Objective::sft, Objective::baseline, Objective::ncut}[static_cast<std::size_t>(k) % 3];
      cfg.deep_supervision = ds;
      cfg.hidden_dim = 16;
      cfg.embed_dim = 5;
      cfg.sigma = std::array{0.1, 0.5, 1.0}[static_cast<std::size_t>(k / 3) % 3];
      Network net = init_network(8, 4, cfg, rng);
      net.model.b1 = 0.1 * random_matrix(16, 1, rng);
      net.model.b2 = 0.1 * random_matrix(5, 1, rng);
      const Matrix inputs = random_matrix(8, 8, rng);
      const Partition labels({0, 0, 1, 1, 2, 2, 3, 3}, 4);
      const StepResult analytic = forward_backward(inputs, labels, net, cfg);
      std::vector<double> numeric;
      for (double* p : parameters(net)) {
        const double keep = *p;
        *p = keep + 1e-5;
        const double up = forward_backward(inputs, labels, net, cfg).total;
        *p = keep - 1e-5;
        const double down = forward_backward(inputs, labels, net, cfg).total;
        *p = keep;
        numeric.push_back((up - down) / 2e-5);
      }
      step_err[ds] = std::max(step_err[ds], vector_relative_error(flatten(analytic.grads), numeric));
      ++step_count[ds];
    }

  double step_worst = 0;
  for (const auto& [ds, e] : step_err) step_worst = std::max(step_worst, e);
  Verdict v;
  v.pass = sft_err < 1e-5 && am_err < 1e-5 && ncut_err < 1e-5 && step_worst < 1e-4;
  v.detail = "max rel err sft " + fmt("%.2e", sft_err) + ", am-softmax " + fmt("%.2e", am_err) + ", ncut " +
             fmt("%.2e", ncut_err) + " (" + std::to_string(instances) + " each); forward_backward off/shared/unshared " +
             fmt("%.2e", step_err[DeepSupervision::off]) + "/" + fmt("%.2e", step_err[DeepSupervision::shared]) + "/" +
             fmt("%.2e", step_err[DeepSupervision::unshared]) + " (" +
             std::to_string(step_count[DeepSupervision::off]) + " each)";
  return v;
}

// AP as the mean over hits of (hits so far / position).
double oracle_ap(const std::vector<bool>& rel) {
  const auto total = std::count(rel.begin(), rel.end(), true);
  double sum = 0.0;
  for (std::size_t k = 0; k < rel.size(); ++k)
    if (rel[k]) sum += static_cast<double>(std::count(rel.begin(), rel.begin() + static_cast<long>(k) + 1, true)) /
                       static_cast<double>(k + 1);
  return total ? sum / static_cast<double>(total) : 0.0;
}

Verdict metric_oracle() {
  double worst = 0;
  std::size_t patterns = 0;
  for (std::size_t len = 1; len <= 10; ++len)
    for (std::uint32_t bits = 1; bits < (1u << len); ++bits) {
      EvalLabels labels{{0}, {0}, {}, {}};
      QueryRanking items;
      std::vector<bool> rel;
      for (std::size_t k = 0; k < len; ++k) {
        const bool hit = (bits >> k) & 1u;
        rel.push_back(hit);
        labels.gallery_identity.push_back(hit ? 0 : 1);
        labels.gallery_camera.push_back(1);
        items.push_back({k, -static_cast<double>(k)});
      }
      worst = std::max(worst, std::abs(evaluate(RankingList{{items}}, labels).mAP - oracle_ap(rel)));
      ++patterns;
    }
  const double hand = evaluate(RankingList{{{{0, 3}, {1, 2}, {2, 1}}}}, EvalLabels{{0}, {0}, {0, 1, 0}, {1, 1, 1}}).mAP;
  Verdict v;
  v.pass = worst < 1e-12 && hand == (1.0 + 2.0 / 3.0) / 2.0;
  v.detail = std::to_string(patterns) + " patterns, max diff " + fmt("%.2e", worst) + "; hand AP " + fmt("%.17g", hand);
  return v;
}

Verdict equivariance() {
  Rng rng(404);
  double perm = 0, rot = 0;
  const int trials = 60;
  for (int k = 0; k < trials; ++k) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(11));
    const auto d = static_cast<Eigen::Index>(1 + rng.index(10));
    const double sigma = kSigmas[static_cast<std::size_t>(k) % 3];
    const Matrix x = random_matrix(n, d, rng);
    const Matrix y = sft_transform(FeatureMatrix(x), sigma).values();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    Matrix p = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) p(i, order[static_cast<std::size_t>(i)]) = 1.0;
    perm = std::max(perm, max_abs_diff(sft_transform(FeatureMatrix(p * x), sigma).values(), p * y));
    const Matrix q = testing::random_orthogonal(d, rng);
    rot = std::max(rot, max_abs_diff(sft_transform(FeatureMatrix(x * q), sigma).values(), y * q));
  }
  Verdict v;
  v.pass = perm <= 1e-9 && rot <= 1e-9;
  v.detail = std::to_string(trials) + " instances; permutation " + fmt("%.2e", perm) + ", rotation " + fmt("%.2e", rot);
  return v;
}

Verdict ablation(const ExperimentResult& r) {
  const double baseline = r.find("baseline").mAP;
  const double sft_only = r.find("sft").mAP;
  const double unshared = r.find("sft+ds(u)").mAP;
  const double shared = r.find("sft+ds(s)").mAP;
  const bool row2 = sft_only >= baseline;
  const bool row4 = shared >= sft_only;
  const bool row3 = std::abs(unshared - baseline) <= 0.05;
  Verdict v;
  v.pass = row2 && row4 && row3;
  v.detail = "median mAP baseline " + fmt("%.4f", baseline) + ", sft " + fmt("%.4f", sft_only) + ", sft+ds(u) " +
             fmt("%.4f", unshared) + ", sft+ds(s) " + fmt("%.4f", shared) + "; row2>=row1 " + (row2 ? "ok" : "no") +
             ", row4>=row2 " + (row4 ? "ok" : "no") + ", |row3-row1|<=0.05 " + (row3 ? "ok" : "no");
  return v;
}

Verdict versus_ncut(const ExperimentResult& r) {
  const double sft = r.find("sft+ds(s)").mAP;
  const double ncut = r.find("ncut").mAP;
  Verdict v;
  v.pass = sft >= ncut;
  v.detail = "median mAP sft+ds(s) " + fmt("%.4f", sft) + ", ncut " + fmt("%.4f", ncut);
  return v;
}

Verdict affinity_suppression(const ExperimentResult& r) {
  const double sft = r.find("sft+ds(s)").inter_affinity;
  const double sft_only = r.find("sft").inter_affinity;
  const double baseline = r.find("baseline").inter_affinity;
  Verdict v;
  v.pass = sft < baseline;
  v.detail = "median inter-identity affinity sft+ds(s) " + fmt("%.3f", sft) + ", baseline " + fmt("%.3f", baseline) +
             " (sft without ds " + fmt("%.3f", sft_only) + ")";
  return v;
}

Verdict post_processing() {
  Rng rng(808);
  bool suffix_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const auto ng = static_cast<Eigen::Index>(2 + rng.index(20));
    const Matrix q = random_matrix(1, 5, rng);
    const Matrix g = random_matrix(ng, 5, rng);
    EvalLabels labels{{0}, {0}, std::vector<int>(static_cast<std::size_t>(ng), 1), std::vector<int>(static_cast<std::size_t>(ng), 1)};
    const QueryRanking base = rank(FeatureMatrix(q), FeatureMatrix(g), labels).queries[0];
    const std::size_t top_n = 1 + rng.index(static_cast<std::size_t>(ng));
    const QueryRanking out = sft_refine(q.row(0), base, FeatureMatrix(g), top_n, kSigmas[rng.index(3)]);
    for (std::size_t k = top_n; k < base.size(); ++k) suffix_ok = suffix_ok && out[k] == base[k];
  }

  // Two candidates lean away from the query in opposite directions; the third
  // is less similar but on the query's side of both.
  const Eigen::RowVector3d query(1, 0, 0);
  const Matrix cand{{1, 0, 1.1}, {1, 0, -1.2}, {1, 1.4, 0}};
  const double sigma = 0.5;
  const QueryRanking base = rank(FeatureMatrix(Matrix(query)), FeatureMatrix(cand), EvalLabels{{0}, {0}, {1, 2, 3}, {1, 1, 1}}).queries[0];
  const QueryRanking refined = sft_refine(query, base, FeatureMatrix(cand), 3, sigma);
  // independent construction of the refined order
  Matrix nodes(4, 3);
  nodes.row(0) = query;
  nodes.bottomRows(3) = cand;
  Matrix t(4, 4);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      t(i, j) = std::exp((i == j ? 1.0 : nodes.row(i).normalized().dot(nodes.row(j).normalized())) / sigma);
  for (Eigen::Index i = 0; i < 4; ++i) t.row(i) /= t.row(i).sum();
  const Matrix y = t * nodes;
  std::size_t oracle_top = 0;
  double best = -2;
  for (Eigen::Index k = 1; k < 4; ++k) {
    const double c = y.row(0).normalized().dot(y.row(k).normalized());
    if (c > best) {
      best = c;
      oracle_top = static_cast<std::size_t>(k - 1);
    }
  }
  const bool adversarial_ok = base[2].gallery == 2 && refined[0].gallery == 2 && oracle_top == 2;

  bool kr_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix q = random_matrix(4, 6, rng);
    const Matrix g = random_matrix(16, 6, rng);
    EvalLabels labels{{0, 1, 2, 3}, {0, 0, 1, 1}, {}, {}};
    for (int k = 0; k < 16; ++k) {
      labels.gallery_identity.push_back(k % 4);
      labels.gallery_camera.push_back(k % 3 == 0 ? 0 : 1);
    }
    const RankingList plain = rank(FeatureMatrix(q), FeatureMatrix(g), labels);
    const RankingList kr = k_reciprocal_rerank(FeatureMatrix(q), FeatureMatrix(g), labels, {6, 3, 1.0});
    for (std::size_t i = 0; i < 4; ++i) {
      kr_ok = kr_ok && kr.queries[i].size() == plain.queries[i].size();
      for (std::size_t k = 0; kr_ok && k < plain.queries[i].size(); ++k)
        kr_ok = kr.queries[i][k].gallery == plain.queries[i][k].gallery;
    }
  }
  Verdict v;
  v.pass = suffix_ok && adversarial_ok && kr_ok;
  v.detail = std::string("suffix ") + (suffix_ok ? "unchanged" : "MODIFIED") + " over 200 lists; adversarial top-1 " +
             std::to_string(refined[0].gallery) + " (oracle " + std::to_string(oracle_top) + ", raw rank 3); kr lambda=1 " +
             (kr_ok ? "identical" : "DIFFERS");
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const auto dir = std::filesystem::temp_directory_path() / "sft_acceptance";
  std::filesystem::create_directories(dir);
  auto run = [&](const std::string& tag) {
    const std::string cmd = std::string("\"") + SFT_CLI_PATH + "\" experiment --kind ncut --out " +
                            (dir / (tag + ".tsv")).string() + " --json " + (dir / (tag + ".json")).string() +
                            " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  Verdict v;
  if (!run("a") || !run("b")) {
    v.pass = false;
    v.detail = "experiment command failed";
    return v;
  }
  const std::string tsv = slurp(dir / "a.tsv");
  const bool same = !tsv.empty() && tsv == slurp(dir / "b.tsv") && slurp(dir / "a.json") == slurp(dir / "b.json");
  v.pass = same;
  v.detail = std::string("two `experiment --kind ncut` runs: TSV and JSON ") + (same ? "byte-identical" : "DIFFER") +
             " (" + std::to_string(tsv.size()) + " bytes TSV)";
  return v;
}

}  // namespace

int main() {
  report(1, algebraic_identities());
  report(2, gradients());
  report(3, metric_oracle());
  report(4, equivariance());

  ExperimentConfig cfg = ExperimentConfig::toy_defaults();
  cfg.kind = ExperimentKind::ablation;
  const ExperimentResult table = run_experiment(cfg);
  cfg.kind = ExperimentKind::ncut_comparison;
  const ExperimentResult versus = run_experiment(cfg);
  report(5, ablation(table));
  report(6, versus_ncut(versus));
  report(7, affinity_suppression(table));
  report(8, post_processing());
  report(9, determinism());

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
