#include "scd/config.hpp"

#include <fstream>
#include <sstream>

namespace scd {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

double to_real(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  bool channels_given = false;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
      section = t.substr(1, t.size() - 2);
      if (section != "data" && section != "model" && section != "train" && section != "infer" &&
          section != "eval")
        throw ConfigError("unknown section [" + section + "]");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' outside any section");

    if (section == "data") {
      if (key == "n_aoi")
        cfg.data.n_aoi = static_cast<int>(to_int(key, value));
      else if (key == "height")
        cfg.data.H = to_int(key, value);
      else if (key == "width")
        cfg.data.W = to_int(key, value);
      else if (key == "months")
        cfg.data.T = to_int(key, value);
      else if (key == "classes")
        cfg.data.K = static_cast<int>(to_int(key, value));
      else if (key == "channels")
        cfg.data.channels = static_cast<int>(to_int(key, value));
      else if (key == "seed")
        cfg.data.seed = static_cast<uint64_t>(to_int(key, value));
      else if (key == "change_rate")
        cfg.data.change_rate = to_real(key, value);
      else if (key == "season_amp")
        cfg.data.season_amp = to_real(key, value);
      else if (key == "geo_drift")
        cfg.data.geo_drift = to_real(key, value);
      else if (key == "noise_sigma")
        cfg.data.noise_sigma = to_real(key, value);
      else
        throw ConfigError("unknown key '" + key + "' in [data]");
    } else if (section == "model") {
      if (key == "levels")
        cfg.model.levels = static_cast<int>(to_int(key, value));
      else if (key == "feature_dim")
        cfg.model.feature_dim = static_cast<int>(to_int(key, value));
      else if (key == "qk_dim")
        cfg.model.qk_dim = static_cast<int>(to_int(key, value));
      else if (key == "heads")
        cfg.model.heads = static_cast<int>(to_int(key, value));
      else if (key == "t_max")
        cfg.model.t_max = static_cast<int>(to_int(key, value));
      else if (key == "variant")
        cfg.model.variant = variant_from_string(value);
      else if (key == "channels_per_level") {
        cfg.model.channels_per_level = to_int_list(key, value);
        channels_given = true;
      } else if (key == "norm_groups")
        cfg.model.norm_groups = static_cast<int>(to_int(key, value));
      else if (key == "pe_max_wavelength")
        cfg.model.pe_max_wavelength = to_real(key, value);
      else
        throw ConfigError("unknown key '" + key + "' in [model]");
    } else if (section == "train") {
      if (key == "max_iters")
        cfg.train.max_iters = to_int(key, value);
      else if (key == "warmup_iters")
        cfg.train.warmup_iters = to_int(key, value);
      else if (key == "peak_lr")
        cfg.train.peak_lr = to_real(key, value);
      else if (key == "weight_decay")
        cfg.train.weight_decay = to_real(key, value);
      else if (key == "focal_gamma")
        cfg.train.focal_gamma = to_real(key, value);
      else if (key == "batch_size")
        cfg.train.batch_size = static_cast<int>(to_int(key, value));
      else if (key == "seed")
        cfg.train.seed = static_cast<uint64_t>(to_int(key, value));
      else if (key == "months_per_sample")
        cfg.train.months_per_sample = to_int(key, value);
      else if (key == "val_every")
        cfg.train.val_every = to_int(key, value);
      else if (key == "crop")
        cfg.train.crop = to_int(key, value);
      else if (key == "cosine_decay")
        cfg.train.cosine_decay = to_bool(key, value);
      else
        throw ConfigError("unknown key '" + key + "' in [train]");
    } else if (section == "infer") {
      if (key == "scheme")
        cfg.infer.scheme = value;
      else if (key == "group_len")
        cfg.infer.group_len = to_int(key, value);
      else if (key == "assignment")
        cfg.infer.assignment = value;
      else if (key == "max_tile")
        cfg.infer.max_tile = to_int(key, value);
      else
        throw ConfigError("unknown key '" + key + "' in [infer]");
    } else {  // eval
      if (key == "bc_aggregation") {
        if (value != "global" && value != "per_tile")
          throw ConfigError("bc_aggregation must be global or per_tile");
        cfg.eval.bc_aggregation = value;
      } else if (key == "split") {
        if (value != "test" && value != "val")
          throw ConfigError("split must be test or val");
        cfg.eval.split = value;
      } else {
        throw ConfigError("unknown key '" + key + "' in [eval]");
      }
    }
  }
  // The model ladder depends on two keys; resolve it after parsing.
  if (!channels_given && cfg.model.channels_per_level.empty())
    cfg.model.channels_per_level =
        ModelConfig::default_channels(cfg.model.levels, cfg.model.feature_dim);
  // keep classes/channels in sync between the data and model sections
  cfg.model.num_classes = cfg.data.K;
  cfg.model.in_channels = cfg.data.channels;
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse(text);
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os << "[data]\n";
  os << "n_aoi = " << data.n_aoi << "\n";
  os << "height = " << data.H << "\n";
  os << "width = " << data.W << "\n";
  os << "months = " << data.T << "\n";
  os << "classes = " << data.K << "\n";
  os << "channels = " << data.channels << "\n";
  os << "seed = " << data.seed << "\n";
  os << "change_rate = " << data.change_rate << "\n";
  os << "season_amp = " << data.season_amp << "\n";
  os << "geo_drift = " << data.geo_drift << "\n";
  os << "noise_sigma = " << data.noise_sigma << "\n";
  os << "\n[model]\n";
  os << "levels = " << model.levels << "\n";
  os << "feature_dim = " << model.feature_dim << "\n";
  os << "qk_dim = " << model.qk_dim << "\n";
  os << "heads = " << model.heads << "\n";
  os << "t_max = " << model.t_max << "\n";
  os << "variant = " << variant_to_string(model.variant) << "\n";
  os << "channels_per_level = " << join(model.channels_per_level) << "\n";
  os << "norm_groups = " << model.norm_groups << "\n";
  os << "pe_max_wavelength = " << model.pe_max_wavelength << "\n";
  os << "\n[train]\n";
  os << "max_iters = " << train.max_iters << "\n";
  os << "warmup_iters = " << train.warmup_iters << "\n";
  os << "peak_lr = " << train.peak_lr << "\n";
  os << "weight_decay = " << train.weight_decay << "\n";
  os << "focal_gamma = " << train.focal_gamma << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "seed = " << train.seed << "\n";
  os << "months_per_sample = " << train.months_per_sample << "\n";
  os << "val_every = " << train.val_every << "\n";
  os << "crop = " << train.crop << "\n";
  os << "cosine_decay = " << (train.cosine_decay ? "true" : "false") << "\n";
  os << "\n[infer]\n";
  os << "scheme = " << infer.scheme << "\n";
  os << "group_len = " << infer.group_len << "\n";
  if (!infer.assignment.empty()) os << "assignment = " << infer.assignment << "\n";
  os << "max_tile = " << infer.max_tile << "\n";
  os << "\n[eval]\n";
  os << "bc_aggregation = " << eval.bc_aggregation << "\n";
  os << "split = " << eval.split << "\n";
  return os.str();
}

}  // namespace scd
