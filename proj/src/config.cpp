#include "sgad/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sgad {

int TrainConfig::resolved_grad_log_start() const {
  if (grad_log_start_epoch >= 0) return grad_log_start_epoch;
  return int(std::lround(double(epochs) * 160.0 / 220.0));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (base_lr <= 0) throw ConfigError("train: base_lr must be positive");
  if (decay_factor <= 0 || decay_factor > 1) throw ConfigError("train: decay_factor in (0, 1]");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be nonnegative");
  for (size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] < 0 || decay_epochs[i] >= epochs) {
      throw ConfigError("train: decay epoch " + std::to_string(decay_epochs[i]) +
                        " outside [0, " + std::to_string(epochs) + ")");
    }
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) {
      throw ConfigError("train: decay_epochs must be strictly increasing");
    }
  }
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw DomainError("lr_schedule: epoch out of range");
  double lr = cfg.base_lr;
  for (int d : cfg.decay_epochs) {
    if (epoch >= d) lr *= cfg.decay_factor;
  }
  return lr;
}

MappingConfig ExperimentConfig::mapping() const {
  MappingConfig m;
  m.s_max = s_max;
  m.num_blocks = backbone.num_blocks();
  m.num_classes = backbone.num_classes;
  m.mode = mapping_mode;
  return m;
}

NoiseSchedule ExperimentConfig::noise_resolved() const {
  NoiseSchedule s = noise;
  if (s.ramp_epochs <= 0) s.ramp_epochs = std::max(1, (2 * train.epochs) / 3);
  return s;
}

void ExperimentConfig::validate() const {
  backbone.validate();
  train.validate();
  data.validate();
  mapping().validate();
  noise_resolved().validate();
  if (backbone.num_classes != data.num_classes()) {
    throw ConfigError("backbone.num_classes " + std::to_string(backbone.num_classes) +
                      " != dataset classes " + std::to_string(data.num_classes()));
  }
  if (loss.alpha < 0 || loss.alpha_m < 0 || loss.alpha_g < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  }
}

int64_t parse_i64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_int(item, key));
  }
  return out;
}

MappingMode parse_mode(const std::string& v) {
  if (v == "consistent") return MappingMode::kConsistent;
  if (v == "paper-literal") return MappingMode::kPaperLiteral;
  throw ConfigError("mapping.mode: expected consistent|paper-literal, got '" + v + "'");
}

std::string mode_name(MappingMode m) {
  return m == MappingMode::kConsistent ? "consistent" : "paper-literal";
}

DatasetSpec::Source parse_source(const std::string& v) {
  if (v == "synthetic") return DatasetSpec::Source::kSynthetic;
  if (v == "cifar10-binary") return DatasetSpec::Source::kCifar10;
  if (v == "cifar100-binary") return DatasetSpec::Source::kCifar100;
  throw ConfigError("data.source: expected synthetic|cifar10-binary|cifar100-binary, got '" + v + "'");
}

std::string source_name(DatasetSpec::Source s) {
  switch (s) {
    case DatasetSpec::Source::kSynthetic: return "synthetic";
    case DatasetSpec::Source::kCifar10: return "cifar10-binary";
    case DatasetSpec::Source::kCifar100: return "cifar100-binary";
  }
  return "synthetic";
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "backbone.depth") {
    const int depth = parse_int(value, key);
    const int classes = backbone.num_classes;
    const int ic = backbone.input_channels, ih = backbone.input_h, iw = backbone.input_w;
    const int gg = backbone.gn_groups;
    backbone = BackboneConfig::from_depth(depth);
    backbone.num_classes = classes;
    backbone.input_channels = ic;
    backbone.input_h = ih;
    backbone.input_w = iw;
    backbone.gn_groups = gg;
  } else if (key == "backbone.input_channels") backbone.input_channels = parse_int(value, key);
  else if (key == "backbone.input_h") backbone.input_h = parse_int(value, key);
  else if (key == "backbone.input_w") backbone.input_w = parse_int(value, key);
  else if (key == "backbone.num_classes") backbone.num_classes = parse_int(value, key);
  else if (key == "backbone.blocks_per_stage") backbone.blocks_per_stage = parse_int(value, key);
  else if (key == "backbone.stage_widths") backbone.stage_widths = parse_int_list(value, key);
  else if (key == "backbone.kernel") backbone.kernel = parse_int(value, key);
  else if (key == "backbone.gn_groups") backbone.gn_groups = parse_int(value, key);
  else if (key == "bmnet.channels") bmnet.channels = parse_int(value, key);
  else if (key == "bmnet.pool") bmnet.pool = parse_int(value, key);
  else if (key == "bmnet.kernel") bmnet.kernel = parse_int(value, key);
  else if (key == "bmnet.stride") bmnet.stride = parse_int(value, key);
  else if (key == "sgnet.widths") sgnet.widths = parse_int_list(value, key);
  else if (key == "sgnet.gn_groups") sgnet.gn_groups = parse_int(value, key);
  else if (key == "mapping.s_max") s_max = parse_double(value, key);
  else if (key == "mapping.mode") mapping_mode = parse_mode(value);
  else if (key == "noise.sigma_start") noise.sigma_start = parse_double(value, key);
  else if (key == "noise.sigma_end") noise.sigma_end = parse_double(value, key);
  else if (key == "noise.ramp_epochs") noise.ramp_epochs = parse_int(value, key);
  else if (key == "train.epochs") train.epochs = parse_int(value, key);
  else if (key == "train.batch_size") train.batch_size = parse_int(value, key);
  else if (key == "train.base_lr") train.base_lr = parse_double(value, key);
  else if (key == "train.decay_epochs") train.decay_epochs = parse_int_list(value, key);
  else if (key == "train.decay_factor") train.decay_factor = parse_double(value, key);
  else if (key == "train.momentum") train.momentum = parse_double(value, key);
  else if (key == "train.weight_decay") train.weight_decay = parse_double(value, key);
  else if (key == "train.augment") train.augment = parse_bool(value, key);
  else if (key == "train.seed") train.seed = uint64_t(parse_i64(value, key));
  else if (key == "train.grad_log_start_epoch") train.grad_log_start_epoch = parse_int(value, key);
  else if (key == "loss.alpha") loss.alpha = parse_double(value, key);
  else if (key == "loss.alpha_m") loss.alpha_m = parse_double(value, key);
  else if (key == "loss.alpha_g") loss.alpha_g = parse_double(value, key);
  else if (key == "data.source") data.source = parse_source(value);
  else if (key == "data.path") data.path = value;
  else if (key == "data.seed") data.seed = uint64_t(parse_i64(value, key));
  else if (key == "data.n_train") data.n_train = parse_i64(value, key);
  else if (key == "data.n_test") data.n_test = parse_i64(value, key);
  else if (key == "data.n_classes") data.n_classes = parse_int(value, key);
  else if (key == "data.height") data.height = parse_int(value, key);
  else if (key == "data.width") data.width = parse_int(value, key);
  else if (key == "data.hard_fraction") data.hard_fraction = parse_double(value, key);
  else if (key == "data.easy_sigma") data.easy_sigma = parse_double(value, key);
  else if (key == "data.hard_sigma") data.hard_sigma = parse_double(value, key);
  else if (key == "data.hard_mix") data.hard_mix = parse_double(value, key);
  else if (key == "out_dir") out_dir = value;
  else if (key == "include_bmnet_flops") include_bmnet_flops = parse_bool(value, key);
  else if (key == "baseline") baseline = parse_bool(value, key);
  else throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

std::string ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["backbone"] = {{"input_channels", backbone.input_channels},
                   {"input_h", backbone.input_h},
                   {"input_w", backbone.input_w},
                   {"num_classes", backbone.num_classes},
                   {"stage_widths", backbone.stage_widths},
                   {"blocks_per_stage", backbone.blocks_per_stage},
                   {"kernel", backbone.kernel},
                   {"gn_groups", backbone.gn_groups}};
  j["bmnet"] = {{"channels", bmnet.channels},
                {"pool", bmnet.pool},
                {"kernel", bmnet.kernel},
                {"stride", bmnet.stride}};
  j["sgnet"] = {{"widths", sgnet.widths}, {"gn_groups", sgnet.gn_groups}};
  j["mapping"] = {{"s_max", s_max}, {"mode", mode_name(mapping_mode)}};
  j["noise"] = {{"sigma_start", noise.sigma_start},
                {"sigma_end", noise.sigma_end},
                {"ramp_epochs", noise.ramp_epochs}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"base_lr", train.base_lr},
                {"decay_epochs", train.decay_epochs},
                {"decay_factor", train.decay_factor},
                {"momentum", train.momentum},
                {"weight_decay", train.weight_decay},
                {"augment", train.augment},
                {"seed", train.seed},
                {"grad_log_start_epoch", train.grad_log_start_epoch}};
  j["loss"] = {{"alpha", loss.alpha}, {"alpha_m", loss.alpha_m}, {"alpha_g", loss.alpha_g}};
  j["data"] = {{"source", source_name(data.source)},
               {"path", data.path},
               {"seed", data.seed},
               {"n_train", data.n_train},
               {"n_test", data.n_test},
               {"n_classes", data.n_classes},
               {"height", data.height},
               {"width", data.width},
               {"hard_fraction", data.hard_fraction},
               {"easy_sigma", data.easy_sigma},
               {"hard_sigma", data.hard_sigma},
               {"hard_mix", data.hard_mix}};
  j["out_dir"] = out_dir;
  j["include_bmnet_flops"] = include_bmnet_flops;
  j["baseline"] = baseline;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad config json: ") + e.what());
  }
  ExperimentConfig c;
  const auto& b = j.at("backbone");
  c.backbone.input_channels = b.at("input_channels");
  c.backbone.input_h = b.at("input_h");
  c.backbone.input_w = b.at("input_w");
  c.backbone.num_classes = b.at("num_classes");
  c.backbone.stage_widths = b.at("stage_widths").get<std::vector<int>>();
  c.backbone.blocks_per_stage = b.at("blocks_per_stage");
  c.backbone.kernel = b.at("kernel");
  c.backbone.gn_groups = b.at("gn_groups");
  const auto& m = j.at("bmnet");
  c.bmnet.channels = m.at("channels");
  c.bmnet.pool = m.at("pool");
  c.bmnet.kernel = m.at("kernel");
  c.bmnet.stride = m.at("stride");
  const auto& g = j.at("sgnet");
  c.sgnet.widths = g.at("widths").get<std::vector<int>>();
  c.sgnet.gn_groups = g.at("gn_groups");
  c.s_max = j.at("mapping").at("s_max");
  c.mapping_mode = parse_mode(j.at("mapping").at("mode"));
  const auto& ns = j.at("noise");
  c.noise.sigma_start = ns.at("sigma_start");
  c.noise.sigma_end = ns.at("sigma_end");
  c.noise.ramp_epochs = ns.at("ramp_epochs");
  const auto& t = j.at("train");
  c.train.epochs = t.at("epochs");
  c.train.batch_size = t.at("batch_size");
  c.train.base_lr = t.at("base_lr");
  c.train.decay_epochs = t.at("decay_epochs").get<std::vector<int>>();
  c.train.decay_factor = t.at("decay_factor");
  c.train.momentum = t.at("momentum");
  c.train.weight_decay = t.at("weight_decay");
  c.train.augment = t.at("augment");
  c.train.seed = t.at("seed");
  c.train.grad_log_start_epoch = t.at("grad_log_start_epoch");
  const auto& lo = j.at("loss");
  c.loss.alpha = lo.at("alpha");
  c.loss.alpha_m = lo.at("alpha_m");
  c.loss.alpha_g = lo.at("alpha_g");
  const auto& d = j.at("data");
  c.data.source = parse_source(d.at("source"));
  c.data.path = d.at("path");
  c.data.seed = d.at("seed");
  c.data.n_train = d.at("n_train");
  c.data.n_test = d.at("n_test");
  c.data.n_classes = d.at("n_classes");
  c.data.height = d.at("height");
  c.data.width = d.at("width");
  c.data.hard_fraction = d.at("hard_fraction");
  c.data.easy_sigma = d.at("easy_sigma");
  c.data.hard_sigma = d.at("hard_sigma");
  c.data.hard_mix = d.value("hard_mix", 0.0);
  c.out_dir = j.at("out_dir");
  c.include_bmnet_flops = j.at("include_bmnet_flops");
  c.baseline = j.at("baseline");
  return c;
}

}  // namespace sgad
