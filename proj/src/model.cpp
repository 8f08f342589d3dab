#include "scd/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace scd {

Variant variant_from_string(const std::string& name) {
  if (name == "ours") return Variant::kOurs;
  if (name == "tae") return Variant::kTae;
  if (name == "ltae") return Variant::kLtae;
  throw ConfigError("unknown attention variant '" + name + "' (expected ours, tae or ltae)");
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::kOurs: return "ours";
    case Variant::kTae: return "tae";
    case Variant::kLtae: return "ltae";
  }
  throw ConfigError("bad variant value");
}

std::vector<int> ModelConfig::default_channels(int levels, int feature_dim) {
  std::vector<int> ch(static_cast<size_t>(levels), std::max(1, feature_dim / 8));
  ch.back() = feature_dim;
  return ch;
}

void ModelConfig::validate() const {
  if (levels < 2) throw ConfigError("levels must be >= 2");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (qk_dim < 1) throw ConfigError("qk_dim must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (in_channels < 1 || t_max < 1) throw ConfigError("in_channels and t_max must be positive");
  if (feature_dim < 2 || feature_dim % 2 != 0)
    throw ConfigError("feature_dim must be a positive even number");
  if (feature_dim % heads != 0) throw ConfigError("feature_dim must be divisible by heads");
  if (static_cast<int>(channels_per_level.size()) != levels)
    throw ConfigError("channels_per_level must list one width per level");
  if (channels_per_level.back() != feature_dim)
    throw ConfigError("the deepest level width must equal feature_dim");
  for (size_t i = 0; i < channels_per_level.size(); ++i) {
    int c = channels_per_level[i];
    if (c < 1) throw ConfigError("level widths must be positive");
    if (i > 0 && c < channels_per_level[i - 1])
      throw ConfigError("channels_per_level must be monotone nondecreasing");
    if (c % heads != 0)
      throw ConfigError("level width " + std::to_string(c) + " not divisible by " +
                        std::to_string(heads) + " heads");
    if (c % norm_groups != 0)
      throw ConfigError("level width " + std::to_string(c) + " not divisible by " +
                        std::to_string(norm_groups) + " norm groups");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["levels"] = levels;
  j["feature_dim"] = feature_dim;
  j["qk_dim"] = qk_dim;
  j["heads"] = heads;
  j["num_classes"] = num_classes;
  j["in_channels"] = in_channels;
  j["t_max"] = t_max;
  j["variant"] = variant_to_string(variant);
  j["channels_per_level"] = channels_per_level;
  j["norm_groups"] = norm_groups;
  j["pe_max_wavelength"] = pe_max_wavelength;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config json: ") + e.what());
  }
  ModelConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "levels")
      cfg.levels = value.get<int>();
    else if (key == "feature_dim")
      cfg.feature_dim = value.get<int>();
    else if (key == "qk_dim")
      cfg.qk_dim = value.get<int>();
    else if (key == "heads")
      cfg.heads = value.get<int>();
    else if (key == "num_classes")
      cfg.num_classes = value.get<int>();
    else if (key == "in_channels")
      cfg.in_channels = value.get<int>();
    else if (key == "t_max")
      cfg.t_max = value.get<int>();
    else if (key == "variant")
      cfg.variant = variant_from_string(value.get<std::string>());
    else if (key == "channels_per_level")
      cfg.channels_per_level = value.get<std::vector<int>>();
    else if (key == "norm_groups")
      cfg.norm_groups = value.get<int>();
    else if (key == "pe_max_wavelength")
      cfg.pe_max_wavelength = value.get<double>();
    else
      throw ConfigError("unknown model config key '" + key + "'");
  }
  if (cfg.channels_per_level.empty())
    cfg.channels_per_level = default_channels(cfg.levels, cfg.feature_dim);
  cfg.validate();
  return cfg;
}

namespace {

// Channel width entering the deconv that produces level l.
int deconv_in_channels(const ModelConfig& cfg, int l) {
  if (l == cfg.levels - 2) return cfg.channels_per_level.back();
  return 2 * cfg.channels_per_level[static_cast<size_t>(l + 1)];
}

}  // namespace

int64_t param_count(const ModelConfig& cfg) {
  int64_t n = 0;
  int prev = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    int c = cfg.channels_per_level[static_cast<size_t>(l)];
    n += static_cast<int64_t>(c) * prev * 9 + c;  // conv
    n += 2 * c;                                   // norm affine
    prev = c;
  }
  int64_t dh = cfg.feature_dim / cfg.heads;
  n += static_cast<int64_t>(cfg.heads) * cfg.qk_dim * dh + cfg.heads * cfg.qk_dim;  // keys
  if (cfg.variant == Variant::kLtae)
    n += static_cast<int64_t>(cfg.heads) * cfg.qk_dim;  // free queries
  else
    n += static_cast<int64_t>(cfg.heads) * cfg.qk_dim * dh + cfg.heads * cfg.qk_dim;
  for (int l = cfg.levels - 2; l >= 0; --l) {
    int c = cfg.channels_per_level[static_cast<size_t>(l)];
    n += static_cast<int64_t>(deconv_in_channels(cfg, l)) * c * 4;  // deconv, no bias
    n += 2 * c;
  }
  n += static_cast<int64_t>(cfg.num_classes) * 2 * cfg.channels_per_level[0] + cfg.num_classes;
  return n;
}

ParamSet<float> init_model_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet<float> p;
  auto normal_tensor = [&](Shape shape, double stddev) {
    std::vector<float> d(static_cast<size_t>(numel(shape)));
    for (auto& v : d) v = static_cast<float>(rng.normal() * stddev);
    return Tensor<float>(std::move(shape), std::move(d));
  };
  auto add_conv = [&](const std::string& name, int64_t co, int64_t ci, int64_t k,
                      bool transposed) {
    double fan_in = static_cast<double>(ci * k * k);
    Shape shape = transposed ? Shape{ci, co, k, k} : Shape{co, ci, k, k};
    p.add(name + ".w", normal_tensor(shape, std::sqrt(2.0 / fan_in)));
    if (!transposed) p.add(name + ".b", Tensor<float>::zeros({co}));
  };
  auto add_norm = [&](const std::string& name, int64_t c) {
    p.add(name + ".gamma", Tensor<float>::full({c}, 1.0f));
    p.add(name + ".beta", Tensor<float>::zeros({c}));
  };

  int prev = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    int c = cfg.channels_per_level[static_cast<size_t>(l)];
    auto name = "enc" + std::to_string(l);
    add_conv(name, c, prev, 3, false);
    add_norm(name, c);
    prev = c;
  }

  int64_t dh = cfg.feature_dim / cfg.heads;
  double fc_std = 1.0 / std::sqrt(static_cast<double>(dh));
  p.add("attn.k_w", normal_tensor({cfg.heads, cfg.qk_dim, dh}, fc_std));
  p.add("attn.k_b", Tensor<float>::zeros({cfg.heads, cfg.qk_dim}));
  if (cfg.variant == Variant::kLtae) {
    p.add("attn.q", normal_tensor({cfg.heads, cfg.qk_dim}, 1.0));
  } else {
    p.add("attn.q_w", normal_tensor({cfg.heads, cfg.qk_dim, dh}, fc_std));
    p.add("attn.q_b", Tensor<float>::zeros({cfg.heads, cfg.qk_dim}));
  }

  for (int l = cfg.levels - 2; l >= 0; --l) {
    int c = cfg.channels_per_level[static_cast<size_t>(l)];
    auto name = "dec" + std::to_string(l);
    add_conv(name, c, deconv_in_channels(cfg, l), 2, true);
    add_norm(name, c);
  }
  int64_t head_in = 2 * cfg.channels_per_level[0];
  p.add("head.w", normal_tensor({cfg.num_classes, head_in, 1, 1},
                                std::sqrt(2.0 / static_cast<double>(head_in))));
  p.add("head.b", Tensor<float>::zeros({cfg.num_classes}));
  return p;
}

// --------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[4] = {'S', 'C', 'D', 'W'};
constexpr uint8_t kCkptVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& f, const std::string& where) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw FormatError("checkpoint truncated while reading " + where);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ParamSet<float>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(kCkptMagic, 4);
  f.put(static_cast<char>(kCkptVersion));
  std::string cfg_json = cfg.to_json();
  write_u32(f, static_cast<uint32_t>(cfg_json.size()));
  f.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  for (const auto& [name, t] : params.items) {
    write_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(f, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_u32(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.data()), t.size() * 4);
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::pair<ModelConfig, ParamSet<float>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError(path.string() + ": not a checkpoint file (bad magic)");
  int version = f.get();
  if (version != kCkptVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version));
  uint32_t cfg_len = read_u32(f, "config length");
  std::string cfg_json(cfg_len, '\0');
  f.read(cfg_json.data(), cfg_len);
  if (f.gcount() != static_cast<std::streamsize>(cfg_len))
    throw FormatError(path.string() + ": truncated config block");
  ModelConfig cfg = ModelConfig::from_json(cfg_json);

  ParamSet<float> params;
  while (true) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() == 0) break;  // clean end of file
    if (f.gcount() != 4) throw FormatError(path.string() + ": truncated tensor header");
    uint32_t name_len = static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
                        static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (f.gcount() != static_cast<std::streamsize>(name_len))
      throw FormatError(path.string() + ": truncated tensor name");
    uint32_t ndim = read_u32(f, "tensor rank");
    if (ndim > 8) throw FormatError(path.string() + ": implausible tensor rank");
    Shape shape;
    for (uint32_t i = 0; i < ndim; ++i) shape.push_back(read_u32(f, "tensor dims"));
    std::vector<float> data(static_cast<size_t>(numel(shape)));
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
    if (f.gcount() != static_cast<std::streamsize>(data.size() * 4))
      throw FormatError(path.string() + ": truncated tensor payload for " + name);
    params.add(name, Tensor<float>(std::move(shape), std::move(data)));
  }
  return {cfg, std::move(params)};
}

}  // namespace scd
