#include "scd/infer.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

using nlohmann::json;

namespace scd {

int SplitScheme::num_groups() const {
  int g = 0;
  for (int a : assignment) g = std::max(g, a + 1);
  return g;
}

void SplitScheme::check_partition() const {
  if (assignment.empty()) throw InputError("scheme: empty assignment");
  int groups = num_groups();
  std::vector<int64_t> counts(static_cast<size_t>(groups), 0);
  for (int a : assignment) {
    if (a < 0) throw InputError("scheme: negative group id");
    ++counts[static_cast<size_t>(a)];
  }
  for (int g = 0; g < groups; ++g)
    if (counts[static_cast<size_t>(g)] == 0)
      throw InputError("scheme: group " + std::to_string(g) + " is empty");
}

SplitScheme make_scheme(int64_t T, int64_t group_len, const std::string& kind) {
  if (group_len < 1 || group_len > T)
    throw ConfigError("scheme: group length must lie in [1, T]");
  SplitScheme s;
  s.kind = kind;
  s.group_len = group_len;
  s.assignment.resize(static_cast<size_t>(T));
  if (kind == "contiguous") {
    if (T % group_len != 0)
      throw ConfigError("scheme: group length " + std::to_string(group_len) +
                        " does not divide T=" + std::to_string(T));
    for (int64_t t = 0; t < T; ++t) s.assignment[static_cast<size_t>(t)] = static_cast<int>(t / group_len);
  } else if (kind == "strided") {
    if (T % group_len != 0)
      throw ConfigError("scheme: group length " + std::to_string(group_len) +
                        " does not divide T=" + std::to_string(T));
    int64_t groups = T / group_len;
    for (int64_t t = 0; t < T; ++t) s.assignment[static_cast<size_t>(t)] = static_cast<int>(t % groups);
  } else {
    throw ConfigError("scheme: unknown kind '" + kind + "' (expected contiguous or strided)");
  }
  s.check_partition();
  return s;
}

SplitScheme custom_scheme(std::vector<int> assignment) {
  SplitScheme s;
  s.kind = "custom";
  s.assignment = std::move(assignment);
  s.group_len = 0;
  s.check_partition();
  return s;
}

std::string scheme_to_json(const SplitScheme& s) {
  json j;
  j["kind"] = s.kind;
  j["group_len"] = s.group_len;
  j["assignment"] = s.assignment;
  return j.dump();
}

SplitScheme scheme_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("scheme json: ") + e.what());
  }
  SplitScheme s;
  s.kind = j.at("kind").get<std::string>();
  s.group_len = j.value("group_len", 0);
  s.assignment = j.at("assignment").get<std::vector<int>>();
  s.check_partition();
  return s;
}

SplitScheme default_scheme(const ModelConfig& cfg, int64_t T) {
  if (cfg.variant == Variant::kOurs) return make_scheme(T, T, "contiguous");
  return make_scheme(T, 1, "contiguous");
}

namespace {

// Reflectively padded window copy: rows [y0, y0+wh) x cols [x0, x0+ww) of a
// [T,C,H,W] volume, mirroring indices that fall outside.
int64_t mirror(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

std::vector<float> window(const SitsSample& s, int64_t y0, int64_t x0, int64_t wh, int64_t ww) {
  std::vector<float> out(static_cast<size_t>(s.T * s.C * wh * ww));
  for (int64_t t = 0; t < s.T; ++t)
    for (int64_t c = 0; c < s.C; ++c)
      for (int64_t y = 0; y < wh; ++y) {
        int64_t sy = mirror(y0 + y, s.H);
        for (int64_t x = 0; x < ww; ++x) {
          int64_t sx = mirror(x0 + x, s.W);
          out[static_cast<size_t>(((t * s.C + c) * wh + y) * ww + x)] =
              s.images[static_cast<size_t>(((t * s.C + c) * s.H + sy) * s.W + sx)];
        }
      }
  return out;
}

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

}  // namespace

std::vector<float> infer_logits(const ModelConfig& cfg, const ParamSet<float>& params,
                                const SitsSample& sample, const SplitScheme& scheme,
                                const InferOptions& opts) {
  if (scheme.dates() != sample.T)
    throw InputError("scheme covers " + std::to_string(scheme.dates()) + " dates, sample has " +
                     std::to_string(sample.T));
  scheme.check_partition();
  int K = cfg.num_classes;
  int64_t plane = sample.H * sample.W;
  std::vector<float> logits(static_cast<size_t>(sample.T * K * plane));
  std::vector<uint8_t> written(static_cast<size_t>(sample.T), 0);

  // spatial windows
  int64_t div = int64_t(1) << (cfg.levels - 1);
  int64_t cap = std::max(div, opts.max_tile / div * div);
  int64_t wh = std::min(round_up(sample.H, div), cap);
  int64_t ww = std::min(round_up(sample.W, div), cap);

  int groups = scheme.num_groups();
  for (int g = 0; g < groups; ++g) {
    std::vector<int64_t> dates;
    for (int64_t t = 0; t < sample.T; ++t)
      if (scheme.assignment[static_cast<size_t>(t)] == g) dates.push_back(t);
    if (static_cast<int64_t>(dates.size()) > cfg.t_max)
      throw InputError("scheme group exceeds the model's t_max");

    std::vector<int> days;
    for (int64_t t : dates) days.push_back(sample.days[static_cast<size_t>(t)]);
    int64_t tg = static_cast<int64_t>(dates.size());

    for (int64_t y0 = 0; y0 < sample.H; y0 += wh) {
      for (int64_t x0 = 0; x0 < sample.W; x0 += ww) {
        // gather the group's dates for this window
        std::vector<float> full = window(sample, y0, x0, wh, ww);
        std::vector<float> xg(static_cast<size_t>(tg * sample.C * wh * ww));
        for (int64_t i = 0; i < tg; ++i)
          std::copy_n(full.begin() + dates[static_cast<size_t>(i)] * sample.C * wh * ww,
                      sample.C * wh * ww, xg.begin() + i * sample.C * wh * ww);
        Tensor<float> x({tg, sample.C, wh, ww}, std::move(xg));
        auto res = forward(cfg, params, x, days);
        int64_t tq = res.logits.dim(0);
        int64_t vh = std::min(wh, sample.H - y0);
        int64_t vw = std::min(ww, sample.W - x0);
        for (size_t i = 0; i < dates.size(); ++i) {
          // collapsing variants broadcast their single map to the whole group
          int64_t src_t = (tq == tg) ? static_cast<int64_t>(i) : 0;
          int64_t t = dates[i];
          for (int c = 0; c < K; ++c)
            for (int64_t y = 0; y < vh; ++y)
              std::copy_n(res.logits.data() + ((src_t * K + c) * wh + y) * ww, vw,
                          logits.begin() + ((t * K + c) * sample.H + (y0 + y)) * sample.W + x0);
        }
      }
    }
    for (int64_t t : dates) {
      if (written[static_cast<size_t>(t)])
        throw InputError("scheme writes date " + std::to_string(t) + " twice");
      written[static_cast<size_t>(t)] = 1;
    }
  }
  for (int64_t t = 0; t < sample.T; ++t)
    if (!written[static_cast<size_t>(t)])
      throw InputError("scheme leaves date " + std::to_string(t) + " unassigned");
  return logits;
}

LabelSeries predict_labels(const ModelConfig& cfg, const ParamSet<float>& params,
                           const SitsSample& sample, const SplitScheme& scheme,
                           const InferOptions& opts) {
  auto logits = infer_logits(cfg, params, sample, scheme, opts);
  return logits_to_labels(logits.data(), sample.T, cfg.num_classes, sample.H, sample.W,
                          sample.labels.ignore);
}

ChangeSeries predict_change(const std::vector<float>& logits, int64_t T, int K, int64_t H,
                            int64_t W, const std::vector<uint8_t>& ignore) {
  LabelSeries pred = logits_to_labels(logits.data(), T, K, H, W, ignore);
  return derive_change(pred);
}

const SitsSample& find_sample(const std::vector<SitsSample>& dataset, const std::string& aoi_id) {
  for (const auto& s : dataset)
    if (s.aoi_id == aoi_id) return s;
  throw InputError("AoI " + aoi_id + " not present in the dataset");
}

MetricsAccumulator evaluate_units(const ModelConfig& cfg, const ParamSet<float>& params,
                                  const std::vector<SitsSample>& dataset,
                                  const std::vector<FoldUnit>& units, const SplitScheme* scheme,
                                  const InferOptions& opts, BcAggregation bc) {
  MetricsAccumulator acc(cfg.num_classes, bc);
  for (const auto& unit : units) {
    SitsSample view = extract_unit(find_sample(dataset, unit.aoi_id), unit);
    SplitScheme s = scheme ? *scheme : default_scheme(cfg, view.T);
    if (s.dates() != view.T)
      throw InputError("scheme does not match the unit's date count");
    LabelSeries pred = predict_labels(cfg, params, view, s, opts);
    acc.add(pred, view.labels);
  }
  return acc;
}

}  // namespace scd
