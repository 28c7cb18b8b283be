#include "sft/spectral.hpp"
#include "sft/train.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace sft {

PKBatch sample_pk(const DatasetManifest& manifest, std::size_t identities_per_batch,
                  std::size_t samples_per_identity, Rng& rng) {
  if (identities_per_batch == 0 || samples_per_identity == 0)
    throw std::invalid_argument("P and K must be positive");
  std::map<int, std::vector<std::size_t>> by_identity;
  for (std::size_t row : manifest.indices(Split::train)) by_identity[manifest[row].identity].push_back(row);
  if (by_identity.size() < identities_per_batch)
    throw Error("train split has " + std::to_string(by_identity.size()) + " identities, fewer than P = " +
                std::to_string(identities_per_batch));

  std::vector<int> ids;
  ids.reserve(by_identity.size());
  for (const auto& [id, rows] : by_identity) ids.push_back(id);
  rng.shuffle(std::span<int>(ids));

  PKBatch batch;
  batch.rows.reserve(identities_per_batch * samples_per_identity);
  for (std::size_t p = 0; p < identities_per_batch; ++p) {
    std::vector<std::size_t> rows = by_identity.at(ids[p]);
    if (rows.size() >= samples_per_identity) {
      rng.shuffle(std::span<std::size_t>(rows));
      rows.resize(samples_per_identity);
    } else {
      std::vector<std::size_t> drawn;
      for (std::size_t k = 0; k < samples_per_identity; ++k) drawn.push_back(rows[rng.index(rows.size())]);
      rows = std::move(drawn);
    }
    for (std::size_t row : rows) {
      batch.rows.push_back(row);
      batch.identities.push_back(ids[p]);
    }
  }
  return batch;
}

Network init_network(std::size_t input_dim, std::size_t num_classes, const TrainConfig& cfg, Rng& rng) {
  Network net{EmbedModel::init(input_dim, cfg.hidden_dim, cfg.embed_dim, rng),
              AmSoftmaxClassifier::init(num_classes, cfg.embed_dim, cfg.margin, cfg.scale, rng), std::nullopt};
  if (cfg.deep_supervision == DeepSupervision::unshared && cfg.objective != Objective::ncut)
    net.orig_classifier = AmSoftmaxClassifier::init(num_classes, cfg.embed_dim, cfg.margin, cfg.scale, rng);
  return net;
}

StepResult forward_backward(const Matrix& inputs, const Partition& labels, const Network& net,
                            const TrainConfig& cfg) {
  const EmbedCache cache = embed_forward(net.model, inputs);
  const Matrix& features = cache.unit;
  StepResult out;
  Matrix grad_features;

  if (cfg.objective == Objective::ncut) {
    std::vector<int> raw(labels.labels().begin(), labels.labels().end());
    const NcutLoss cut_term = ncut_loss(features, Partition::from_raw_labels(raw), cfg.sigma);
    const AmSoftmaxResult ce = am_softmax_loss(features, labels, net.classifier);
    out.loss_sft = cut_term.value;
    out.loss_orig = ce.loss;
    out.total = cfg.ncut_weight * cut_term.value + cfg.ncut_ce_weight * ce.loss;
    grad_features = cfg.ncut_weight * cut_term.gradient + cfg.ncut_ce_weight * ce.grad_features;
    out.grads.classifier = cfg.ncut_ce_weight * ce.grad_weight;
    out.grads.model = embed_backward(net.model, cache, grad_features);
    return out;
  }

  const bool use_sft = cfg.objective == Objective::sft;
  TransformState state;
  if (use_sft) state = forward_transform(features, cfg.sigma);
  const Matrix& transformed = use_sft ? state.output : features;

  const AmSoftmaxResult sft_term = am_softmax_loss(transformed, labels, net.classifier);
  out.loss_sft = sft_term.loss;
  out.grads.classifier = sft_term.grad_weight;
  grad_features = use_sft ? backward_transform(features, state, sft_term.grad_features,
                                               cfg.sft_grad_through_T ? GradientPath::full
                                                                      : GradientPath::features_only)
                          : sft_term.grad_features;

  const bool unshared = cfg.deep_supervision == DeepSupervision::unshared;
  if (unshared && !net.orig_classifier) throw std::invalid_argument("unshared supervision needs a second classifier");
  const AmSoftmaxClassifier& orig_clf = unshared ? *net.orig_classifier : net.classifier;
  const AmSoftmaxResult orig_term = am_softmax_loss(features, labels, orig_clf);
  out.loss_orig = orig_term.loss;
  out.total = out.loss_sft;

  if (cfg.deep_supervision != DeepSupervision::off) {
    const double w = cfg.orig_loss_weight;
    out.total += w * orig_term.loss;
    grad_features += w * orig_term.grad_features;
    if (unshared)
      out.grads.orig_classifier = w * orig_term.grad_weight;
    else
      out.grads.classifier += w * orig_term.grad_weight;
  }
  out.grads.model = embed_backward(net.model, cache, grad_features);
  return out;
}

namespace {

struct Momentum {
  double lr;
  double mu;

  template <typename Param>
  void step(Param& param, Param& velocity, const Param& grad) const {
    if (grad.size() == 0) return;
    if (velocity.size() == 0) velocity = Param::Zero(grad.rows(), grad.cols());
    velocity = mu * velocity - lr * grad;
    param += velocity;
  }
};

struct Velocity {
  Matrix w1, w2, clf, orig_clf;
  Vector b1, b2;
};

void apply_update(Network& net, Velocity& v, const NetworkGradients& g, const Momentum& opt) {
  opt.step(net.model.w1, v.w1, g.model.w1);
  opt.step(net.model.b1, v.b1, g.model.b1);
  opt.step(net.model.w2, v.w2, g.model.w2);
  opt.step(net.model.b2, v.b2, g.model.b2);
  opt.step(net.classifier.weight, v.clf, g.classifier);
  if (net.orig_classifier) opt.step(net.orig_classifier->weight, v.orig_clf, g.orig_classifier);
}

}  // namespace

TrainResult train(const FeatureMatrix& features, const DatasetManifest& manifest, const TrainConfig& cfg) {
  cfg.validate();
  manifest.check_pairing(features.rows());
  const std::vector<std::size_t> train_rows = manifest.indices(Split::train);
  if (train_rows.empty()) throw Error("manifest has no train samples");

  TrainResult result;
  std::map<int, std::size_t> class_of;
  for (std::size_t row : train_rows) class_of.emplace(manifest[row].identity, 0);
  for (auto& [id, cls] : class_of) {
    cls = result.class_identities.size();
    result.class_identities.push_back(id);
  }
  const std::size_t num_classes = class_of.size();

  Rng rng(cfg.seed);
  result.net = init_network(static_cast<std::size_t>(features.cols()), num_classes, cfg, rng);
  if (cfg.epochs == 0) return result;
  if (num_classes < cfg.identities_per_batch)
    throw Error("train split has " + std::to_string(num_classes) + " identities, fewer than P = " +
                std::to_string(cfg.identities_per_batch));

  const std::size_t batches =
      cfg.batches_per_epoch ? cfg.batches_per_epoch : std::max<std::size_t>(1, num_classes / cfg.identities_per_batch);
  const Matrix all_train = features.select_rows(train_rows).values();
  const std::vector<int> train_ids = manifest.identities(train_rows);

  Velocity velocity;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Momentum opt{lr_at(epoch, cfg), cfg.momentum};
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr;
    for (std::size_t b = 0; b < batches; ++b) {
      const PKBatch batch = sample_pk(manifest, cfg.identities_per_batch, cfg.samples_per_identity, rng);
      std::vector<std::size_t> classes;
      classes.reserve(batch.identities.size());
      for (int id : batch.identities) classes.push_back(class_of.at(id));
      const Matrix inputs = features.select_rows(batch.rows).values();
      const StepResult step = forward_backward(inputs, Partition(std::move(classes), num_classes), result.net, cfg);
      rec.loss_orig += step.loss_orig / static_cast<double>(batches);
      rec.loss_sft += step.loss_sft / static_cast<double>(batches);
      apply_update(result.net, velocity, step.grads, opt);
    }
    if (cfg.diagnostics) {
      const Matrix emb = result.net.model.embed(all_train);
      const AffinityStats stats = affinity_stats(emb, train_ids, cfg.sigma);
      rec.mean_intra_affinity = stats.mean_intra;
      rec.mean_inter_affinity = stats.mean_inter;
      if (num_classes >= 2) rec.ncut_value = ncut_loss(emb, Partition::from_raw_labels(train_ids), cfg.sigma).value;
    }
    result.log.push_back(rec);
  }
  return result;
}

std::string format_training_log(const std::vector<EpochRecord>& log) {
  std::string out = "# epoch\tlr\tloss_orig\tloss_sft";
  const bool diag = !log.empty() && log.front().mean_intra_affinity.has_value();
  if (diag) out += "\tmean_intra_affinity\tmean_inter_affinity\tncut";
  out += '\n';
  char buf[64];
  for (const auto& r : log) {
    out += std::to_string(r.epoch);
    for (double v : {r.lr, r.loss_orig, r.loss_sft}) {
      std::snprintf(buf, sizeof buf, "\t%.10g", v);
      out += buf;
    }
    if (diag) {
      for (const auto& v : {r.mean_intra_affinity, r.mean_inter_affinity, r.ncut_value}) {
        if (v)
          std::snprintf(buf, sizeof buf, "\t%.10g", *v);
        else
          std::snprintf(buf, sizeof buf, "\tnan");
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace sft
