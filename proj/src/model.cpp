#include "sft/train.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace sft {
namespace {

Matrix scaled_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Matrix normalize_backward(const Matrix& unit, const Vector& norms, const Matrix& grad_unit) {
  Matrix out(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i)
    out.row(i) = (grad_unit.row(i) - unit.row(i).dot(grad_unit.row(i)) * unit.row(i)) / norms(i);
  return out;
}

}  // namespace

EmbedModel EmbedModel::init(std::size_t input_dim, std::size_t hidden_dim, std::size_t embed_dim, Rng& rng) {
  if (input_dim == 0 || embed_dim == 0) throw std::invalid_argument("model dimensions must be positive");
  EmbedModel m;
  const auto in = static_cast<Eigen::Index>(input_dim);
  const auto out = static_cast<Eigen::Index>(embed_dim);
  if (hidden_dim == 0) {
    m.w1 = scaled_normal(out, in, rng);
    m.b1 = Vector::Zero(out);
  } else {
    const auto hid = static_cast<Eigen::Index>(hidden_dim);
    m.w1 = scaled_normal(hid, in, rng);
    m.b1 = Vector::Zero(hid);
    m.w2 = scaled_normal(out, hid, rng);
    m.b2 = Vector::Zero(out);
  }
  return m;
}

Matrix EmbedModel::embed(const Matrix& x) const { return embed_forward(*this, x).unit; }

EmbedCache embed_forward(const EmbedModel& model, const Matrix& x) {
  if (x.cols() != model.input_dim()) throw std::invalid_argument("input dimension does not match model");
  EmbedCache c;
  c.input = x;
  if (model.two_layer()) {
    c.hidden_pre = (x * model.w1.transpose()).rowwise() + model.b1.transpose();
    c.hidden = c.hidden_pre.cwiseMax(0.0);
    c.raw = (c.hidden * model.w2.transpose()).rowwise() + model.b2.transpose();
  } else {
    c.raw = (x * model.w1.transpose()).rowwise() + model.b1.transpose();
  }
  if (model.normalize) {
    std::tie(c.unit, c.norms) = normalize_rows(c.raw);
  } else {
    c.unit = c.raw;
    c.norms = Vector::Ones(c.raw.rows());
  }
  return c;
}

ModelGradients embed_backward(const EmbedModel& model, const EmbedCache& cache, const Matrix& grad_embedding) {
  const Matrix grad_raw = model.normalize ? normalize_backward(cache.unit, cache.norms, grad_embedding)
                                          : grad_embedding;
  ModelGradients g;
  if (!model.two_layer()) {
    g.w1 = grad_raw.transpose() * cache.input;
    g.b1 = grad_raw.colwise().sum().transpose();
    return g;
  }
  g.w2 = grad_raw.transpose() * cache.hidden;
  g.b2 = grad_raw.colwise().sum().transpose();
  const Matrix grad_hidden = grad_raw * model.w2;
  const Matrix grad_pre = (cache.hidden_pre.array() > 0.0).select(grad_hidden, 0.0);
  g.w1 = grad_pre.transpose() * cache.input;
  g.b1 = grad_pre.colwise().sum().transpose();
  return g;
}

AmSoftmaxClassifier AmSoftmaxClassifier::init(std::size_t num_classes, std::size_t embed_dim, double margin,
                                              double scale, Rng& rng) {
  if (num_classes == 0 || embed_dim == 0) throw std::invalid_argument("classifier dimensions must be positive");
  if (margin < 0.0 || !(scale > 0.0)) throw std::invalid_argument("AM-Softmax needs margin >= 0 and scale > 0");
  return AmSoftmaxClassifier{
      scaled_normal(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(embed_dim), rng), margin,
      scale};
}

AmSoftmaxResult am_softmax_loss(const Matrix& features, const Partition& labels, const AmSoftmaxClassifier& clf) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw std::invalid_argument("label count does not match feature rows");
  if (features.cols() != clf.weight.cols()) throw std::invalid_argument("feature/classifier dimension mismatch");
  if (clf.margin < 0.0 || !(clf.scale > 0.0)) throw std::invalid_argument("AM-Softmax needs margin >= 0, scale > 0");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= static_cast<std::size_t>(clf.num_classes()))
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of classifier range");

  const auto [f_unit, f_norms] = normalize_rows(features);
  const auto [w_unit, w_norms] = normalize_rows(clf.weight);
  const Matrix cos = f_unit * w_unit.transpose();
  Matrix logits = clf.scale * cos;
  for (std::size_t i = 0; i < labels.size(); ++i)
    logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) -= clf.scale * clf.margin;

  const auto n = static_cast<double>(features.rows());
  Matrix prob = row_softmax(logits);
  AmSoftmaxResult out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    const double peak = logits.row(i).maxCoeff();
    const double log_sum = peak + std::log((logits.row(i).array() - peak).unaryExpr([](double v) { return std::exp(v); }).sum());
    out.loss += (log_sum - logits(i, y)) / n;
    prob(i, y) -= 1.0;
  }
  const Matrix grad_cos = prob * (clf.scale / n);
  out.grad_features = normalize_backward(f_unit, f_norms, grad_cos * w_unit);
  out.grad_weight = normalize_backward(w_unit, w_norms, grad_cos.transpose() * f_unit);
  return out;
}

AmSoftmaxResult am_softmax_loss(const FeatureMatrix& features, const Partition& labels,
                                const AmSoftmaxClassifier& clf) {
  return am_softmax_loss(features.values(), labels, clf);
}

AffinityStats affinity_stats(const Matrix& embeddings, std::span<const int> labels, double sigma) {
  require_positive_sigma(sigma);
  if (static_cast<Eigen::Index>(labels.size()) != embeddings.rows())
    throw std::invalid_argument("label count does not match embedding rows");
  const Matrix cos = cosine_matrix(embeddings, embeddings);
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (Eigen::Index i = 0; i < cos.rows(); ++i) {
    for (Eigen::Index j = 0; j < cos.cols(); ++j) {
      if (i == j) continue;
      const double w = std::exp(std::min(cos(i, j), 1.0) / sigma);
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        intra += w;
        ++n_intra;
      } else {
        inter += w;
        ++n_inter;
      }
    }
  }
  return AffinityStats{n_intra ? intra / static_cast<double>(n_intra) : 0.0,
                       n_inter ? inter / static_cast<double>(n_inter) : 0.0};
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("model file: expected a matrix");
  if (j.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != m.cols()) throw Error("model file: ragged matrix");
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

nlohmann::json classifier_to_json(const AmSoftmaxClassifier& c) {
  return {{"weight", matrix_to_json(c.weight)}, {"margin", c.margin}, {"scale", c.scale}};
}

AmSoftmaxClassifier classifier_from_json(const nlohmann::json& j) {
  return AmSoftmaxClassifier{matrix_from_json(j.at("weight")), j.at("margin").get<double>(),
                             j.at("scale").get<double>()};
}

}  // namespace

void save_network(const Network& net, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "sft-network";
  j["version"] = 1;
  j["model"] = {{"w1", matrix_to_json(net.model.w1)},
                {"b1", vector_to_json(net.model.b1)},
                {"w2", matrix_to_json(net.model.w2)},
                {"b2", vector_to_json(net.model.b2)},
                {"normalize", net.model.normalize}};
  j["classifier"] = classifier_to_json(net.classifier);
  if (net.orig_classifier) j["orig_classifier"] = classifier_to_json(*net.orig_classifier);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "sft-network") throw Error("not a network file: " + path.string());
    const auto& m = j.at("model");
    Network net{EmbedModel{matrix_from_json(m.at("w1")), vector_from_json(m.at("b1")),
                           matrix_from_json(m.at("w2")), vector_from_json(m.at("b2")),
                           m.at("normalize").get<bool>()},
                classifier_from_json(j.at("classifier")), std::nullopt};
    if (j.contains("orig_classifier")) net.orig_classifier = classifier_from_json(j.at("orig_classifier"));
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed model file " + path.string() + ": " + e.what());
  }
}

}  // namespace sft
