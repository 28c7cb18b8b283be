#include "sft/train.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sft {

std::string_view to_string(DeepSupervision mode) {
  switch (mode) {
    case DeepSupervision::off: return "off";
    case DeepSupervision::shared: return "shared";
    case DeepSupervision::unshared: return "unshared";
  }
  return "off";
}

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::sft: return "sft";
    case Objective::baseline: return "baseline";
    case Objective::ncut: return "ncut";
  }
  return "sft";
}

DeepSupervision parse_deep_supervision(std::string_view text) {
  if (text == "off") return DeepSupervision::off;
  if (text == "shared") return DeepSupervision::shared;
  if (text == "unshared") return DeepSupervision::unshared;
  throw std::invalid_argument("unknown deep_supervision '" + std::string(text) + "'");
}

Objective parse_objective(std::string_view text) {
  if (text == "sft") return Objective::sft;
  if (text == "baseline") return Objective::baseline;
  if (text == "ncut") return Objective::ncut;
  throw std::invalid_argument("unknown objective '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (identities_per_batch < 2 || samples_per_identity < 2)
    throw std::invalid_argument("P and K must both be >= 2");
  require_positive_sigma(sigma);
  if (!(base_lr > 0.0) || !(warmup_start_lr > 0.0) || !(decay_factor > 0.0))
    throw std::invalid_argument("learning rates and decay factor must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (margin < 0.0 || !(scale > 0.0)) throw std::invalid_argument("AM-Softmax needs margin >= 0 and scale > 0");
  if (embed_dim == 0) throw std::invalid_argument("embed_dim must be positive");
  if (orig_loss_weight < 0.0 || ncut_weight < 0.0 || ncut_ce_weight < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs)
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  if (epoch < cfg.warmup_epochs) {
    const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * frac;
  }
  double lr = cfg.base_lr;
  for (std::size_t boundary : cfg.decay_epochs)
    if (epoch >= boundary) lr *= cfg.decay_factor;
  return lr;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw std::invalid_argument("config key '" + std::string(key) + "': bad value '" + std::string(text) + "'");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument("config key '" + std::string(key) + "': expected true/false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(parse_number<std::size_t>(key, trim(text.substr(start, comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "identities_per_batch" || key == "P") cfg.identities_per_batch = parse_number<std::size_t>(key, value);
  else if (key == "samples_per_identity" || key == "K") cfg.samples_per_identity = parse_number<std::size_t>(key, value);
  else if (key == "sigma") cfg.sigma = parse_number<double>(key, value);
  else if (key == "epochs") cfg.epochs = parse_number<std::size_t>(key, value);
  else if (key == "warmup_epochs") cfg.warmup_epochs = parse_number<std::size_t>(key, value);
  else if (key == "base_lr") cfg.base_lr = parse_number<double>(key, value);
  else if (key == "warmup_start_lr") cfg.warmup_start_lr = parse_number<double>(key, value);
  else if (key == "decay_epochs") cfg.decay_epochs = parse_list(key, value);
  else if (key == "decay_factor") cfg.decay_factor = parse_number<double>(key, value);
  else if (key == "momentum") cfg.momentum = parse_number<double>(key, value);
  else if (key == "deep_supervision") cfg.deep_supervision = parse_deep_supervision(value);
  else if (key == "sft_grad_through_T") cfg.sft_grad_through_T = parse_bool(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "objective") cfg.objective = parse_objective(value);
  else if (key == "margin") cfg.margin = parse_number<double>(key, value);
  else if (key == "scale") cfg.scale = parse_number<double>(key, value);
  else if (key == "hidden_dim") cfg.hidden_dim = parse_number<std::size_t>(key, value);
  else if (key == "embed_dim") cfg.embed_dim = parse_number<std::size_t>(key, value);
  else if (key == "orig_loss_weight") cfg.orig_loss_weight = parse_number<double>(key, value);
  else if (key == "ncut_weight") cfg.ncut_weight = parse_number<double>(key, value);
  else if (key == "ncut_ce_weight") cfg.ncut_ce_weight = parse_number<double>(key, value);
  else if (key == "batches_per_epoch") cfg.batches_per_epoch = parse_number<std::size_t>(key, value);
  else if (key == "diagnostics") cfg.diagnostics = parse_bool(key, value);
  else throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

TrainConfig parse_train_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    set_config_value(base, trim(view.substr(0, eq)), trim(view.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_train_config(in, std::move(base));
}

std::string format_train_config(const TrainConfig& cfg) {
  std::ostringstream out;
  std::string decays;
  for (std::size_t i = 0; i < cfg.decay_epochs.size(); ++i)
    decays += (i ? "," : "") + std::to_string(cfg.decay_epochs[i]);
  out << "identities_per_batch = " << cfg.identities_per_batch << '\n'
      << "samples_per_identity = " << cfg.samples_per_identity << '\n'
      << "sigma = " << format_double(cfg.sigma) << '\n'
      << "epochs = " << cfg.epochs << '\n'
      << "warmup_epochs = " << cfg.warmup_epochs << '\n'
      << "base_lr = " << format_double(cfg.base_lr) << '\n'
      << "warmup_start_lr = " << format_double(cfg.warmup_start_lr) << '\n'
      << "decay_epochs = " << decays << '\n'
      << "decay_factor = " << format_double(cfg.decay_factor) << '\n'
      << "momentum = " << format_double(cfg.momentum) << '\n'
      << "deep_supervision = " << to_string(cfg.deep_supervision) << '\n'
      << "sft_grad_through_T = " << (cfg.sft_grad_through_T ? "true" : "false") << '\n'
      << "seed = " << cfg.seed << '\n'
      << "objective = " << to_string(cfg.objective) << '\n'
      << "margin = " << format_double(cfg.margin) << '\n'
      << "scale = " << format_double(cfg.scale) << '\n'
      << "hidden_dim = " << cfg.hidden_dim << '\n'
      << "embed_dim = " << cfg.embed_dim << '\n'
      << "orig_loss_weight = " << format_double(cfg.orig_loss_weight) << '\n'
      << "ncut_weight = " << format_double(cfg.ncut_weight) << '\n'
      << "ncut_ce_weight = " << format_double(cfg.ncut_ce_weight) << '\n'
      << "batches_per_epoch = " << cfg.batches_per_epoch << '\n'
      << "diagnostics = " << (cfg.diagnostics ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace sft
