#include "xvt/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace xvt {

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> defaults = {
      {"model.variant", "late-join"},
      {"model.width_mult", "0.125"},
      {"model.input_channels", "1"},
      {"model.head", "binary"},
      {"model.tasks", "1"},
      {"model.share_branches", "false"},
      {"model.placement", "3"},
      {"model.view_index", "0"},
      {"attention.heads", "4"},
      {"attention.embed_dim", "32"},
      {"attention.tokens", "16"},
      {"attention.dropout", "0.1"},
      {"train.epochs", "40"},
      {"train.warmup_epochs", "4"},
      {"train.lr_max", "0.0001"},
      {"train.lr_min", "0.000001"},
      {"train.batch_size", "32"},
      {"train.weight_decay", "0"},
      {"train.grad_clip", "0"},
      {"train.selection", "final"},
      {"train.checkpoint_every", "0"},
      {"train.augment", "false"},
      {"train.run_until", "-1"},
      {"data.path", ""},
      {"data.image_size", "32"},
      {"data.marker_size", "12"},
      {"data.alphabet", "4"},
      {"data.noise", "0.05"},
      {"data.marker_base", "1.0"},
      {"data.marker_amp", "1.0"},
      {"data.cycles", "2.0"},
      {"data.train_samples", "2000"},
      {"data.val_samples", "0"},
      {"data.test_samples", "0"},
      {"augment.flip_prob", "0.5"},
      {"augment.max_rotate_deg", "15"},
      {"augment.scale_lo", "0.9"},
      {"augment.scale_hi", "1.1"},
      {"augment.max_shift_frac", "0.1"},
      {"augment.elastic_alpha", "8"},
      {"augment.elastic_sigma", "4"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must be key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  try {
    std::size_t used = 0;
    const int v = std::stoi(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: '" + get(key) + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    std::size_t used = 0;
    const double v = std::stod(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: '" + get(key) + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec spec;
  const std::string& variant = get("model.variant");
  if (variant == "single-view") {
    spec.variant = Variant::kSingleView;
  } else if (variant == "late-join") {
    spec.variant = Variant::kLateJoin;
  } else if (variant == "cross-view-pixel") {
    spec.variant = Variant::kCrossViewPixel;
  } else if (variant == "cross-view-token") {
    spec.variant = Variant::kCrossViewToken;
  } else {
    throw ConfigError("unknown model.variant '" + variant + "'");
  }
  spec.width_mult = get_double("model.width_mult");
  spec.input_channels = get_int("model.input_channels");
  const std::string& head = get("model.head");
  if (head == "binary") {
    spec.head = HeadType::kBinarySigmoid;
  } else if (head == "multitask3") {
    spec.head = HeadType::kMultitask3;
  } else {
    throw ConfigError("unknown model.head '" + head + "'");
  }
  spec.tasks = get_int("model.tasks");
  spec.share_branches = get_bool("model.share_branches");
  spec.placement = get_int("model.placement");
  spec.attention.heads = get_int("attention.heads");
  spec.attention.embed_dim = get_int("attention.embed_dim");
  spec.attention.tokens = get_int("attention.tokens");
  spec.attention.dropout_rate = get_double("attention.dropout");
  return spec;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.schedule.lr_max = get_double("train.lr_max");
  t.schedule.lr_min = get_double("train.lr_min");
  t.schedule.total_epochs = get_double("train.epochs");
  t.schedule.warmup_epochs = get_double("train.warmup_epochs");
  t.batch_size = get_int("train.batch_size");
  t.weight_decay = get_double("train.weight_decay");
  t.grad_clip = get_double("train.grad_clip");
  const std::string& sel = get("train.selection");
  if (sel == "final") {
    t.selection = SelectionRule::kFinalEpoch;
  } else if (sel == "per-task-best") {
    t.selection = SelectionRule::kPerTaskBest;
  } else {
    throw ConfigError("unknown train.selection '" + sel + "'");
  }
  t.checkpoint_every = get_int("train.checkpoint_every");
  t.augment = get_bool("train.augment");
  t.view_index = get_int("model.view_index");
  t.run_until = get_int("train.run_until");
  t.augment_params.flip_prob = get_double("augment.flip_prob");
  t.augment_params.max_rotate_deg = get_double("augment.max_rotate_deg");
  t.augment_params.scale_lo = get_double("augment.scale_lo");
  t.augment_params.scale_hi = get_double("augment.scale_hi");
  t.augment_params.max_shift_frac = get_double("augment.max_shift_frac");
  t.augment_params.elastic_alpha = get_double("augment.elastic_alpha");
  t.augment_params.elastic_sigma = get_double("augment.elastic_sigma");
  return t;
}

SynthTaskSpec RunConfig::synth_spec() const {
  SynthTaskSpec s;
  s.image_size = get_int("data.image_size");
  s.marker_size = get_int("data.marker_size");
  s.alphabet = get_int("data.alphabet");
  s.noise = get_double("data.noise");
  s.marker_base = get_double("data.marker_base");
  s.marker_amp = get_double("data.marker_amp");
  s.cycles = get_double("data.cycles");
  return s;
}

std::array<int, 3> RunConfig::fold_counts() const {
  return {get_int("data.train_samples"), get_int("data.val_samples"),
          get_int("data.test_samples")};
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << " = " << value << '\n';
  return os.str();
}

}  // namespace xvt
