#pragma once

// The segmentation model: a shared-weight convolutional encoder over all
// dates, a pixelwise temporal attention block at the deepest level (three
// variants), attention maps propagated to every level by bilinear
// upsampling, and a parallel decoder producing one segmentation map per
// input date (or a single map for the collapsing variants).

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "scd/common.hpp"
#include "scd/tensor.hpp"

namespace scd {

enum class Variant { kOurs, kTae, kLtae };

Variant variant_from_string(const std::string& name);
std::string variant_to_string(Variant v);

struct ModelConfig {
  int levels = 4;          // L
  int feature_dim = 512;   // D, channel count at the deepest level
  int qk_dim = 4;          // d, key/query width per head
  int heads = 16;          // h
  int num_classes = 6;     // K
  int in_channels = 4;     // C
  int t_max = 24;
  Variant variant = Variant::kOurs;
  std::vector<int> channels_per_level;  // length L, monotone nondecreasing, last == feature_dim
  int norm_groups = 4;
  double pe_max_wavelength = 10000.0;  // days

  void validate() const;
  // [64,64,64,512]-style ladder scaled proportionally with feature_dim.
  static std::vector<int> default_channels(int levels, int feature_dim);
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Closed-form learnable parameter count for a config.
int64_t param_count(const ModelConfig& cfg);

// --------------------------------------------------------------------------
// Parameters

template <typename S>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  void add(const std::string& name, Tensor<S> t) {
    if (contains(name)) throw ConfigError("duplicate parameter " + name);
    items.emplace_back(name, std::move(t));
  }
  bool contains(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return true;
    return false;
  }
  const Tensor<S>& at(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw ConfigError("unknown parameter " + name);
  }
  Tensor<S>& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw ConfigError("unknown parameter " + name);
  }
  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
  }
  // Leaves on a tape, sharing storage; gradients land per leaf.
  ParamSet bind(Tape<S>& tape) const {
    ParamSet out;
    for (const auto& [name, t] : items) out.items.emplace_back(name, Tensor<S>::leaf(t, tape));
    return out;
  }
  template <typename T2>
  ParamSet<T2> cast() const {
    ParamSet<T2> out;
    for (const auto& [name, t] : items) {
      std::vector<T2> d(t.vec().begin(), t.vec().end());
      out.items.emplace_back(name, Tensor<T2>(t.shape(), std::move(d)));
    }
    return out;
  }
};

ParamSet<float> init_model_params(const ModelConfig& cfg, Rng& rng);

// Checkpoint file: magic "SCDW", version byte, length-prefixed config JSON,
// then each tensor as (u32 name length, name, u32 ndim, u32 dims, f32 data),
// all little-endian.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ParamSet<float>& params);
std::pair<ModelConfig, ParamSet<float>> load_checkpoint(const std::filesystem::path& path);

// --------------------------------------------------------------------------
// Positional encoding of acquisition days (offsets from the dataset epoch):
// geometric angular frequencies from 1 down to 1/max_wavelength per day.

template <typename S>
Tensor<S> positional_encode(const std::vector<int>& days, int64_t dim,
                            double max_wavelength = 10000.0) {
  if (dim % 2 != 0) throw ConfigError("positional encoding dim must be even");
  for (size_t i = 0; i < days.size(); ++i) {
    if (days[i] < 0) throw InputError("days must be nonnegative");
    if (i > 0 && days[i] <= days[i - 1])
      throw InputError("days must be strictly increasing");
  }
  int64_t T = static_cast<int64_t>(days.size());
  int64_t half = dim / 2;
  std::vector<S> out(static_cast<size_t>(T * dim));
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t i = 0; i < half; ++i) {
      double expo = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
      double omega = std::pow(max_wavelength, -expo);
      double angle = static_cast<double>(days[static_cast<size_t>(t)]) * omega;
      out[static_cast<size_t>(t * dim + 2 * i)] = static_cast<S>(std::sin(angle));
      out[static_cast<size_t>(t * dim + 2 * i + 1)] = static_cast<S>(std::cos(angle));
    }
  }
  return Tensor<S>({T, dim}, std::move(out));
}

// --------------------------------------------------------------------------
// Forward pieces. Parameters are passed as a (possibly tape-bound) ParamSet.

template <typename S>
struct ForwardResult {
  Tensor<S> logits;                       // [Tq, K, H, W]
  std::vector<Tensor<S>> attention;       // per level: [h, Tq, T, H_l, W_l]
  std::vector<Tensor<S>> pre_attention;   // f^l before positional encoding
  std::vector<Tensor<S>> attended;        // combined maps per level
};

// Eq-style combination: out[tq,c] = sum_tk A[head(c),tq,tk] * f[tk,c], where
// head(c) owns the channel slice [head*C/h, (head+1)*C/h).
template <typename S>
Tensor<S> apply_attention(const Tensor<S>& attn, const Tensor<S>& features, int heads) {
  if (attn.ndim() != 5 || features.ndim() != 4)
    throw DimensionError("apply_attention: expected A[h,Tq,Tk,H,W] and f[Tk,C,H,W]");
  int64_t h = attn.dim(0), tq = attn.dim(1), tk = attn.dim(2), H = attn.dim(3), W = attn.dim(4);
  int64_t T = features.dim(0), C = features.dim(1);
  if (h != heads) throw DimensionError("apply_attention: head extent mismatch");
  if (tk != T || features.dim(2) != H || features.dim(3) != W)
    throw DimensionError("apply_attention: extent mismatch between " + shape_str(attn.shape()) +
                         " and " + shape_str(features.shape()));
  if (C % h != 0) throw DimensionError("apply_attention: channels not divisible by heads");
  int64_t cg = C / h;
  int64_t plane = H * W;

  std::vector<S> out(static_cast<size_t>(tq * C * plane), S(0));
  const S* A = attn.data();
  const S* F = features.data();
  for (int64_t hd = 0; hd < h; ++hd)
    for (int64_t q = 0; q < tq; ++q)
      for (int64_t k = 0; k < tk; ++k) {
        const S* a = A + ((hd * tq + q) * tk + k) * plane;
        for (int64_t c = hd * cg; c < (hd + 1) * cg; ++c) {
          const S* f = F + (k * C + c) * plane;
          S* o = out.data() + (q * C + c) * plane;
          for (int64_t p = 0; p < plane; ++p) o[p] += a[p] * f[p];
        }
      }
  auto dA = attn.storage();
  auto dF = features.storage();
  return detail::make_op<S>(
      "apply_attention", {tq, C, H, W}, std::move(out), {&attn, &features},
      [h, tq, tk, C, cg, plane, dA, dF](std::span<const S> g,
                                        const std::vector<std::span<S>>& pg) {
        for (int64_t hd = 0; hd < h; ++hd)
          for (int64_t q = 0; q < tq; ++q)
            for (int64_t k = 0; k < tk; ++k) {
              const S* a = dA->data() + ((hd * tq + q) * tk + k) * plane;
              S* ga = pg[0].empty() ? nullptr : pg[0].data() + ((hd * tq + q) * tk + k) * plane;
              for (int64_t c = hd * cg; c < (hd + 1) * cg; ++c) {
                const S* f = dF->data() + (k * C + c) * plane;
                const S* go = g.data() + (q * C + c) * plane;
                if (!pg[1].empty()) {
                  S* gf = pg[1].data() + (k * C + c) * plane;
                  for (int64_t p = 0; p < plane; ++p) gf[p] += a[p] * go[p];
                }
                if (ga)
                  for (int64_t p = 0; p < plane; ++p) ga[p] += go[p] * f[p];
              }
            }
      });
}

namespace detail_model {

template <typename S>
Tensor<S> conv_block(const Tensor<S>& x, const ParamSet<S>& p, const std::string& prefix,
                     int64_t stride, int64_t pad, int groups) {
  auto y = conv2d(x, p.at(prefix + ".w"), p.at(prefix + ".b"), stride, pad);
  y = group_norm(y, groups, p.at(prefix + ".gamma"), p.at(prefix + ".beta"), S(1e-5));
  return relu(y);
}

}  // namespace detail_model

// Encoder: per-date shared weights; stride-2 3x3 convolutions after the first
// level. Returns per-level features with positional encoding already added at
// the deepest level (pre-encoding activations go to *pre_pe when requested).
template <typename S>
std::vector<Tensor<S>> encode(const ModelConfig& cfg, const ParamSet<S>& params,
                              const Tensor<S>& x, const std::vector<int>& days,
                              std::vector<Tensor<S>>* pre_pe = nullptr) {
  if (x.ndim() != 4) throw DimensionError("encode: input must be [T,C,H,W]");
  int64_t T = x.dim(0), H = x.dim(2), W = x.dim(3);
  if (x.dim(1) != cfg.in_channels)
    throw DimensionError("encode: expected " + std::to_string(cfg.in_channels) + " channels, got " +
                         std::to_string(x.dim(1)));
  int64_t div = int64_t(1) << (cfg.levels - 1);
  if (H % div != 0 || W % div != 0)
    throw InputError("encode: spatial extents " + std::to_string(H) + "x" + std::to_string(W) +
                     " must be divisible by " + std::to_string(div));
  if (static_cast<int64_t>(days.size()) != T)
    throw DimensionError("encode: days list does not match T");

  std::vector<Tensor<S>> feats;
  Tensor<S> cur = x;
  for (int l = 0; l < cfg.levels; ++l) {
    int64_t stride = (l == 0) ? 1 : 2;
    cur = detail_model::conv_block(cur, params, "enc" + std::to_string(l), stride, 1,
                                   cfg.norm_groups);
    feats.push_back(cur);
  }
  if (pre_pe) *pre_pe = feats;
  // positional encoding at the deepest level only, broadcast over space
  auto pe = positional_encode<S>(days, cfg.feature_dim, cfg.pe_max_wavelength);
  auto pe4 = reshape(pe, {T, static_cast<int64_t>(cfg.feature_dim), 1, 1});
  feats.back() = add(feats.back(), pe4);
  return feats;
}

// Attention at the deepest level. Returns [h, Tq, T, H', W'] with rows
// normalized over the key axis; Tq == T for the multi-temporal variant and 1
// for the collapsing ones.
template <typename S>
Tensor<S> attend(const ModelConfig& cfg, const ParamSet<S>& params, const Tensor<S>& f_deep) {
  if (f_deep.ndim() != 4) throw DimensionError("attend: expected [T,D,H,W]");
  int64_t T = f_deep.dim(0), D = f_deep.dim(1), H = f_deep.dim(2), W = f_deep.dim(3);
  if (D != cfg.feature_dim) throw DimensionError("attend: feature dim mismatch");
  int64_t h = cfg.heads, dh = D / h, d = cfg.qk_dim;
  int64_t hw = H * W;
  S temp = static_cast<S>(std::sqrt(static_cast<double>(d)));

  auto fperm = permute(f_deep, {0, 2, 3, 1});  // [T,H,W,D]
  std::vector<Tensor<S>> head_maps;
  for (int64_t i = 0; i < h; ++i) {
    auto sl = slice(fperm, 3, i * dh, dh);  // [T,H,W,dh]
    auto kw = reshape(slice(params.at("attn.k_w"), 0, i, 1), {d, dh});
    auto kb = reshape(slice(params.at("attn.k_b"), 0, i, 1), {d});
    auto keys = fully_connected(sl, kw, kb);                       // [T,H,W,d]
    auto kp = reshape(permute(keys, {1, 2, 0, 3}), {hw, T, d});    // [HW,T,d]
    auto kt = permute(kp, {0, 2, 1});                              // [HW,d,T]

    Tensor<S> queries;  // [HW,Tq,d]
    if (cfg.variant == Variant::kOurs) {
      auto qw = reshape(slice(params.at("attn.q_w"), 0, i, 1), {d, dh});
      auto qb = reshape(slice(params.at("attn.q_b"), 0, i, 1), {d});
      auto q = fully_connected(sl, qw, qb);
      queries = reshape(permute(q, {1, 2, 0, 3}), {hw, T, d});
    } else if (cfg.variant == Variant::kTae) {
      // a single query predicted from the temporal mean of the features
      auto sp = reshape(permute(sl, {1, 2, 0, 3}), {hw, T, dh});
      auto ones = Tensor<S>::full({hw, 1, T}, S(1) / static_cast<S>(T));
      auto pooled = batched_matmul(ones, sp);  // [HW,1,dh]
      auto qw = reshape(slice(params.at("attn.q_w"), 0, i, 1), {d, dh});
      auto qb = reshape(slice(params.at("attn.q_b"), 0, i, 1), {d});
      queries = fully_connected(pooled, qw, qb);  // [HW,1,d]
    } else {  // kLtae: a learned date-independent query
      auto q = reshape(slice(params.at("attn.q"), 0, i, 1), {1, 1, d});
      queries = add(q, Tensor<S>::zeros({hw, 1, d}));
    }
    auto scores = batched_matmul(queries, kt);       // [HW,Tq,T]
    auto attn = softmax_axis(scores, 2, temp);       // rows sum to 1 over keys
    int64_t tq = attn.dim(1);
    head_maps.push_back(reshape(attn, {1, H, W, tq, T}));
  }
  auto stacked = concat(head_maps, 0);            // [h,H,W,Tq,T]
  return permute(stacked, {0, 3, 4, 1, 2});       // [h,Tq,T,H,W]
}

// Bilinearly upsample the deepest attention maps to every level; index l of
// the result matches the encoder level l.
template <typename S>
std::vector<Tensor<S>> propagate_attention(const ModelConfig& cfg, const Tensor<S>& attn_deep) {
  std::vector<Tensor<S>> out(static_cast<size_t>(cfg.levels));
  out[static_cast<size_t>(cfg.levels - 1)] = attn_deep;
  for (int l = cfg.levels - 2; l >= 0; --l) {
    int64_t factor = int64_t(1) << (cfg.levels - 1 - l);
    out[static_cast<size_t>(l)] = upsample_bilinear(attn_deep, factor);
  }
  return out;
}

// Decoder: strided transposed convolutions upward; at each level the combined
// map is concatenated to the upsampled features before the next deconv.
template <typename S>
Tensor<S> decode(const ModelConfig& cfg, const ParamSet<S>& params,
                 const std::vector<Tensor<S>>& attended) {
  if (static_cast<int>(attended.size()) != cfg.levels)
    throw DimensionError("decode: need one combined map per level");
  Tensor<S> up = attended.back();
  for (int l = cfg.levels - 2; l >= 0; --l) {
    auto prefix = "dec" + std::to_string(l);
    auto y = conv_transpose2d(up, params.at(prefix + ".w"), 2);
    y = group_norm(y, cfg.norm_groups, params.at(prefix + ".gamma"), params.at(prefix + ".beta"),
                   S(1e-5));
    y = relu(y);
    up = concat<S>({attended[static_cast<size_t>(l)], y}, 1);
  }
  return conv2d(up, params.at("head.w"), params.at("head.b"), 1, 0);
}

template <typename S>
ForwardResult<S> forward(const ModelConfig& cfg, const ParamSet<S>& params, const Tensor<S>& x,
                         const std::vector<int>& days, bool keep_internals = false) {
  if (x.dim(0) > cfg.t_max)
    throw InputError("forward: sequence length " + std::to_string(x.dim(0)) + " exceeds t_max " +
                     std::to_string(cfg.t_max));
  ForwardResult<S> res;
  std::vector<Tensor<S>> pre_pe;
  auto feats = encode(cfg, params, x, days, keep_internals ? &pre_pe : nullptr);
  auto attn_deep = attend(cfg, params, feats.back());
  auto attn = propagate_attention(cfg, attn_deep);
  std::vector<Tensor<S>> attended;
  for (int l = 0; l < cfg.levels; ++l)
    attended.push_back(apply_attention(attn[static_cast<size_t>(l)],
                                       feats[static_cast<size_t>(l)], cfg.heads));
  res.logits = decode(cfg, params, attended);
  if (keep_internals) {
    res.attention = std::move(attn);
    res.pre_attention = std::move(pre_pe);
    res.attended = std::move(attended);
  }
  return res;
}

}  // namespace scd
