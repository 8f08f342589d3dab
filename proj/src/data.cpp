#include "scd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace scd {

void SitsSample::validate() const {
  if (static_cast<int64_t>(images.size()) != T * C * H * W)
    throw DimensionError("sample " + aoi_id + ": image buffer does not match extents");
  if (labels.T != T || labels.H != H || labels.W != W)
    throw DimensionError("sample " + aoi_id + ": label extents do not match images");
  if (static_cast<int64_t>(days.size()) != T)
    throw DimensionError("sample " + aoi_id + ": days list does not match T");
  for (size_t i = 1; i < days.size(); ++i)
    if (days[i] <= days[i - 1])
      throw InputError("sample " + aoi_id + ": days must be strictly increasing");
  labels.validate();
}

// --------------------------------------------------------------------------
// Raster io

namespace {

constexpr char kMagic[4] = {'S', 'I', 'T', 'S'};
constexpr uint8_t kVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& f, const fs::path& path, int64_t& offset) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4)
    throw FormatError(path.string() + ": truncated at byte offset " + std::to_string(offset));
  offset += 4;
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

void save_raster(const fs::path& path, const Raster& r) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(kMagic, 4);
  f.put(static_cast<char>(kVersion));
  f.put(static_cast<char>(r.dtype));
  write_u32(f, static_cast<uint32_t>(r.dims.size()));
  for (int64_t d : r.dims) write_u32(f, static_cast<uint32_t>(d));
  int64_t n = numel(r.dims);
  if (r.dtype == 0) {
    if (static_cast<int64_t>(r.f32.size()) != n)
      throw DimensionError("raster payload does not match dims");
    static_assert(sizeof(float) == 4);
    // stored little-endian; this code targets little-endian hosts
    f.write(reinterpret_cast<const char*>(r.f32.data()), n * 4);
  } else if (r.dtype == 1) {
    if (static_cast<int64_t>(r.u8.size()) != n)
      throw DimensionError("raster payload does not match dims");
    f.write(reinterpret_cast<const char*>(r.u8.data()), n);
  } else {
    throw FormatError("unknown raster dtype " + std::to_string(r.dtype));
  }
  if (!f) throw IoError("write failed for " + path.string());
}

Raster load_raster(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  int64_t offset = 0;
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path.string() + ": bad magic at byte offset 0");
  offset = 4;
  int version = f.get();
  int dtype = f.get();
  if (version == EOF || dtype == EOF)
    throw FormatError(path.string() + ": truncated at byte offset " + std::to_string(offset));
  offset += 2;
  if (version != kVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  if (dtype != 0 && dtype != 1)
    throw FormatError(path.string() + ": unknown dtype " + std::to_string(dtype));
  uint32_t ndim = read_u32(f, path, offset);
  if (ndim > 8) throw FormatError(path.string() + ": implausible ndim " + std::to_string(ndim));
  Raster r;
  r.dtype = static_cast<uint8_t>(dtype);
  for (uint32_t i = 0; i < ndim; ++i) r.dims.push_back(read_u32(f, path, offset));
  int64_t n = numel(r.dims);
  if (dtype == 0) {
    r.f32.resize(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(r.f32.data()), n * 4);
    if (f.gcount() != n * 4)
      throw FormatError(path.string() + ": truncated payload at byte offset " +
                        std::to_string(offset + f.gcount()));
  } else {
    r.u8.resize(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(r.u8.data()), n);
    if (f.gcount() != n)
      throw FormatError(path.string() + ": truncated payload at byte offset " +
                        std::to_string(offset + f.gcount()));
  }
  return r;
}

// --------------------------------------------------------------------------
// Polygon rasterization

std::vector<uint8_t> rasterize_polygons(const std::vector<Polygon>& polys, int64_t H, int64_t W) {
  std::vector<uint8_t> mask(static_cast<size_t>(H * W), 0);
  for (const auto& poly : polys) {
    for (const auto& ring : poly.rings) {
      if (ring.size() < 3) throw InputError("polygon ring needs at least 3 vertices");
      for (const auto& v : ring)
        if (!std::isfinite(v[0]) || !std::isfinite(v[1]))
          throw InputError("polygon vertex is not finite");
    }
  }
  std::vector<double> xs;
  for (const auto& poly : polys) {
    for (int64_t row = 0; row < H; ++row) {
      double yc = static_cast<double>(row) + 0.5;
      xs.clear();
      // Even-odd parity over all rings of this polygon.
      for (const auto& ring : poly.rings) {
        size_t n = ring.size();
        for (size_t i = 0; i < n; ++i) {
          const auto& a = ring[i];
          const auto& b = ring[(i + 1) % n];
          double y1 = a[1], y2 = b[1];
          if (y1 == y2) continue;  // horizontal edges contribute no crossings
          // half-open rule so shared vertices count once
          if ((y1 <= yc && yc < y2) || (y2 <= yc && yc < y1)) {
            double t = (yc - y1) / (y2 - y1);
            xs.push_back(a[0] + t * (b[0] - a[0]));
          }
        }
      }
      std::sort(xs.begin(), xs.end());
      for (size_t i = 0; i + 1 < xs.size(); i += 2) {
        // fill pixels whose center x+0.5 lies in [xs[i], xs[i+1])
        int64_t c0 = static_cast<int64_t>(std::ceil(xs[i] - 0.5));
        int64_t c1 = static_cast<int64_t>(std::ceil(xs[i + 1] - 0.5)) - 1;
        c0 = std::max<int64_t>(c0, 0);
        c1 = std::min<int64_t>(c1, W - 1);
        for (int64_t c = c0; c <= c1; ++c) mask[static_cast<size_t>(row * W + c)] = 1;
      }
    }
  }
  return mask;
}

std::vector<Polygon> polygons_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("polygon json: ") + e.what());
  }
  std::vector<Polygon> out;
  for (const auto& jp : j) {
    Polygon p;
    for (const auto& jr : jp) {
      std::vector<std::array<double, 2>> ring;
      for (const auto& jv : jr) ring.push_back({jv.at(0).get<double>(), jv.at(1).get<double>()});
      p.rings.push_back(std::move(ring));
    }
    out.push_back(std::move(p));
  }
  return out;
}

// --------------------------------------------------------------------------
// Fold planning

namespace {

json unit_to_json(const FoldUnit& u) {
  json j;
  j["aoi"] = u.aoi_id;
  if (u.quarter) j["quarter"] = *u.quarter;
  if (u.date_range) j["date_range"] = {u.date_range->first, u.date_range->second};
  return j;
}

FoldUnit unit_from_json(const json& j) {
  FoldUnit u;
  u.aoi_id = j.at("aoi").get<std::string>();
  if (j.contains("quarter")) u.quarter = j["quarter"].get<int>();
  if (j.contains("date_range"))
    u.date_range = std::make_pair(j["date_range"][0].get<int>(), j["date_range"][1].get<int>());
  return u;
}

std::string unit_key(const FoldUnit& u) {
  std::string k = u.aoi_id;
  if (u.quarter) k += "#q" + std::to_string(*u.quarter);
  if (u.date_range)
    k += "#d" + std::to_string(u.date_range->first) + "-" + std::to_string(u.date_range->second);
  return k;
}

}  // namespace

std::string FoldPlan::to_json() const {
  json j;
  j["setting"] = setting;
  json jf = json::array();
  for (const auto& f : folds) {
    json e;
    for (const char* part : {"train", "val", "test"}) {
      const auto& units = std::string(part) == "train" ? f.train
                          : std::string(part) == "val" ? f.val
                                                       : f.test;
      json ju = json::array();
      for (const auto& u : units) ju.push_back(unit_to_json(u));
      e[part] = ju;
    }
    jf.push_back(e);
  }
  j["folds"] = jf;
  return j.dump(2);
}

FoldPlan FoldPlan::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("fold plan json: ") + e.what());
  }
  FoldPlan plan;
  plan.setting = j.at("setting").get<std::string>();
  for (const auto& jf : j.at("folds")) {
    Fold f;
    for (const auto& ju : jf.at("train")) f.train.push_back(unit_from_json(ju));
    for (const auto& ju : jf.at("val")) f.val.push_back(unit_from_json(ju));
    for (const auto& ju : jf.at("test")) f.test.push_back(unit_from_json(ju));
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

void FoldPlan::check_invariants() const {
  for (size_t fi = 0; fi < folds.size(); ++fi) {
    std::set<std::string> seen;
    auto visit = [&](const std::vector<FoldUnit>& units, const char* part) {
      for (const auto& u : units) {
        auto key = unit_key(u);
        if (!seen.insert(key).second)
          throw PlanningError("fold " + std::to_string(fi) + ": unit " + key +
                              " appears twice (last in " + part + ")");
      }
    };
    visit(folds[fi].train, "train");
    visit(folds[fi].val, "val");
    visit(folds[fi].test, "test");
  }
}

FoldPlan plan_no_shift(const std::vector<std::string>& aoi_ids) {
  if (aoi_ids.empty()) throw PlanningError("plan_no_shift: no AoIs");
  FoldPlan plan;
  plan.setting = "no_shift";
  // Quarter roles rotate: fold i trains on quarters i+1, i+2 (wrapping),
  // validates on i+3 and tests on i+4.
  for (int f = 0; f < 4; ++f) {
    Fold fold;
    auto q = [f](int offset) { return (f + offset) % 4 + 1; };
    for (const auto& id : aoi_ids) {
      fold.train.push_back({id, q(0), std::nullopt});
      fold.train.push_back({id, q(1), std::nullopt});
      fold.val.push_back({id, q(2), std::nullopt});
      fold.test.push_back({id, q(3), std::nullopt});
    }
    plan.folds.push_back(std::move(fold));
  }
  plan.check_invariants();
  return plan;
}

FoldPlan plan_temporal(const std::vector<std::string>& aoi_ids, int day_min, int day_max,
                       int split_day) {
  if (aoi_ids.empty()) throw PlanningError("plan_temporal: no AoIs");
  if (split_day <= day_min || split_day > day_max)
    throw PlanningError("plan_temporal: split day " + std::to_string(split_day) +
                        " leaves an empty side of [" + std::to_string(day_min) + "," +
                        std::to_string(day_max) + "]");
  std::vector<std::string> ids = aoi_ids;
  std::sort(ids.begin(), ids.end());
  Fold fold;
  auto train_range = std::make_pair(day_min, split_day);
  auto eval_range = std::make_pair(split_day, day_max + 1);
  size_t half = ids.size() / 2;
  for (size_t i = 0; i < ids.size(); ++i) {
    fold.train.push_back({ids[i], std::nullopt, train_range});
    if (i < half)
      fold.val.push_back({ids[i], std::nullopt, eval_range});
    else
      fold.test.push_back({ids[i], std::nullopt, eval_range});
  }
  if (fold.val.empty() || fold.test.empty())
    throw PlanningError("plan_temporal: need at least two AoIs for the val/test halves");
  FoldPlan plan;
  plan.setting = "temporal";
  plan.folds.push_back(std::move(fold));
  plan.check_invariants();
  return plan;
}

FoldPlan plan_spatial(const std::vector<std::string>& aoi_ids,
                      const std::vector<std::vector<std::string>>* subsets,
                      const std::map<std::string, std::vector<double>>* balance_by) {
  if (aoi_ids.size() < 5)
    throw PlanningError("plan_spatial: need at least 5 AoIs for 5 subsets");
  std::vector<std::vector<std::string>> groups;
  if (subsets) {
    if (subsets->size() != 5) throw PlanningError("plan_spatial: expected exactly 5 subsets");
    std::set<std::string> all(aoi_ids.begin(), aoi_ids.end());
    std::set<std::string> seen;
    for (const auto& s : *subsets)
      for (const auto& id : s) {
        if (!all.count(id)) throw PlanningError("plan_spatial: unknown AoI " + id);
        if (!seen.insert(id).second) throw PlanningError("plan_spatial: AoI " + id + " repeated");
      }
    if (seen.size() != all.size())
      throw PlanningError("plan_spatial: subsets do not cover every AoI");
    groups = *subsets;
  } else if (balance_by) {
    // Greedy: assign AoIs (hardest first) to the subset whose resulting class
    // distribution stays closest to the global one, respecting a size cap.
    std::vector<std::string> ids = aoi_ids;
    for (const auto& id : ids)
      if (!balance_by->count(id))
        throw PlanningError("plan_spatial: missing class histogram for " + id);
    size_t nclasses = balance_by->begin()->second.size();
    std::vector<double> global(nclasses, 0.0);
    for (const auto& id : ids)
      for (size_t c = 0; c < nclasses; ++c) global[c] += balance_by->at(id)[c];
    double gsum = 0;
    for (double v : global) gsum += v;
    for (double& v : global) v /= gsum;
    std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
      double ma = *std::max_element(balance_by->at(a).begin(), balance_by->at(a).end());
      double mb = *std::max_element(balance_by->at(b).begin(), balance_by->at(b).end());
      if (ma != mb) return ma > mb;
      return a < b;
    });
    groups.assign(5, {});
    std::vector<std::vector<double>> acc(5, std::vector<double>(nclasses, 0.0));
    size_t cap = (ids.size() + 4) / 5;
    for (const auto& id : ids) {
      int best = -1;
      double best_d = 0;
      for (int s = 0; s < 5; ++s) {
        if (groups[static_cast<size_t>(s)].size() >= cap) continue;
        double tot = 0, d = 0;
        std::vector<double> trial = acc[static_cast<size_t>(s)];
        for (size_t c = 0; c < nclasses; ++c) {
          trial[c] += balance_by->at(id)[c];
          tot += trial[c];
        }
        for (size_t c = 0; c < nclasses; ++c) d += std::abs(trial[c] / tot - global[c]);
        if (best < 0 || d < best_d) {
          best = s;
          best_d = d;
        }
      }
      groups[static_cast<size_t>(best)].push_back(id);
      for (size_t c = 0; c < nclasses; ++c)
        acc[static_cast<size_t>(best)][c] += balance_by->at(id)[c];
    }
  } else {
    std::vector<std::string> ids = aoi_ids;
    std::sort(ids.begin(), ids.end());
    groups.assign(5, {});
    for (size_t i = 0; i < ids.size(); ++i) groups[i * 5 / ids.size()].push_back(ids[i]);
  }

  FoldPlan plan;
  plan.setting = "spatial";
  // fold i: train on subsets i+1..i+3 (wrapping), val on i+4, test on i+5
  for (int f = 0; f < 5; ++f) {
    Fold fold;
    auto sub = [&](int offset) -> const std::vector<std::string>& {
      return groups[static_cast<size_t>((f + offset) % 5)];
    };
    for (int o = 0; o < 3; ++o)
      for (const auto& id : sub(o)) fold.train.push_back({id, std::nullopt, std::nullopt});
    for (const auto& id : sub(3)) fold.val.push_back({id, std::nullopt, std::nullopt});
    for (const auto& id : sub(4)) fold.test.push_back({id, std::nullopt, std::nullopt});
    plan.folds.push_back(std::move(fold));
  }
  plan.check_invariants();
  return plan;
}

// --------------------------------------------------------------------------
// Calendar helper

int month_start_day(int month_index) {
  static const int kMonthLengths[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (month_index < 0) throw InputError("month index must be nonnegative");
  int day = 0;
  for (int m = 0; m < month_index; ++m) {
    int year = 2018 + m / 12;
    int month = m % 12;
    bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    day += (month == 1 && leap) ? 29 : kMonthLengths[month];
  }
  return day;
}

// --------------------------------------------------------------------------
// Synthetic world generator

void SyntheticWorldConfig::validate() const {
  if (n_aoi <= 0 || H <= 0 || W <= 0 || T <= 0 || K < 2 || channels <= 0)
    throw ConfigError("synth: all extents must be positive and K >= 2");
  if (change_rate < 0.0 || change_rate > 0.2)
    throw ConfigError("synth: change_rate must lie in [0, 0.2]");
  if (noise_sigma < 0.0 || season_amp < 0.0 || geo_drift < 0.0)
    throw ConfigError("synth: amplitudes must be nonnegative");
}

namespace {

// Multi-octave value noise with smoothstep interpolation.
std::vector<double> value_noise(int64_t H, int64_t W, Rng& rng) {
  const int octaves = 4;
  const double persistence = 0.5;
  int64_t base_cell = std::max<int64_t>(4, std::min(H, W) / 2);
  std::vector<double> out(static_cast<size_t>(H * W), 0.0);
  double amp = 1.0, amp_total = 0.0;
  for (int o = 0; o < octaves; ++o) {
    int64_t cell = std::max<int64_t>(2, base_cell >> o);
    int64_t gh = H / cell + 2, gw = W / cell + 2;
    std::vector<double> grid(static_cast<size_t>(gh * gw));
    for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
    for (int64_t y = 0; y < H; ++y) {
      double fy = static_cast<double>(y) / static_cast<double>(cell);
      int64_t y0 = static_cast<int64_t>(fy);
      double ty = fy - static_cast<double>(y0);
      double sy = ty * ty * (3 - 2 * ty);
      for (int64_t x = 0; x < W; ++x) {
        double fx = static_cast<double>(x) / static_cast<double>(cell);
        int64_t x0 = static_cast<int64_t>(fx);
        double tx = fx - static_cast<double>(x0);
        double sx = tx * tx * (3 - 2 * tx);
        double v00 = grid[static_cast<size_t>(y0 * gw + x0)];
        double v01 = grid[static_cast<size_t>(y0 * gw + x0 + 1)];
        double v10 = grid[static_cast<size_t>((y0 + 1) * gw + x0)];
        double v11 = grid[static_cast<size_t>((y0 + 1) * gw + x0 + 1)];
        double v = (v00 * (1 - sx) + v01 * sx) * (1 - sy) + (v10 * (1 - sx) + v11 * sx) * sy;
        out[static_cast<size_t>(y * W + x)] += amp * v;
      }
    }
    amp_total += amp;
    amp *= persistence;
  }
  for (auto& v : out) v /= amp_total;
  return out;
}

// Quantize a field into K classes at its own quantiles (roughly balanced).
std::vector<uint8_t> quantize_labels(const std::vector<double>& field, int K) {
  std::vector<double> sorted(field);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> thresholds;
  for (int c = 1; c < K; ++c)
    thresholds.push_back(sorted[static_cast<size_t>(sorted.size() * c / K)]);
  std::vector<uint8_t> labels(field.size());
  for (size_t i = 0; i < field.size(); ++i) {
    int c = 0;
    while (c < K - 1 && field[i] >= thresholds[static_cast<size_t>(c)]) ++c;
    labels[i] = static_cast<uint8_t>(c);
  }
  return labels;
}

int64_t count_flips(const std::vector<uint8_t>& labels, int64_t T, int64_t plane) {
  int64_t flips = 0;
  for (int64_t t = 0; t + 1 < T; ++t)
    for (int64_t p = 0; p < plane; ++p)
      if (labels[static_cast<size_t>(t * plane + p)] !=
          labels[static_cast<size_t>((t + 1) * plane + p)])
        ++flips;
  return flips;
}

}  // namespace

std::vector<SitsSample> synth_generate(const SyntheticWorldConfig& cfg) {
  cfg.validate();
  const int64_t plane = cfg.H * cfg.W;
  const int n_pairs = (cfg.K + 1) / 2;

  // Global palette: classes in the same pair share a base appearance and are
  // told apart by their opposite seasonal phase only.
  Rng palette_rng(mix_seed(cfg.seed, 0x9a1e77e));
  std::vector<std::vector<double>> palette(static_cast<size_t>(cfg.K),
                                           std::vector<double>(static_cast<size_t>(cfg.channels)));
  for (int pair = 0; pair < n_pairs; ++pair) {
    double base = 0.30 + 0.40 * (static_cast<double>(pair) + 0.5) / n_pairs;
    std::vector<double> jitter(static_cast<size_t>(cfg.channels));
    for (auto& v : jitter) v = palette_rng.uniform(-0.05, 0.05);
    for (int within = 0; within < 2; ++within) {
      int c = pair * 2 + within;
      if (c >= cfg.K) break;
      for (int ch = 0; ch < cfg.channels; ++ch)
        palette[static_cast<size_t>(c)][static_cast<size_t>(ch)] =
            base + jitter[static_cast<size_t>(ch)];
    }
  }
  auto phase = [](int c) { return (c % 2 == 0) ? 0.0 : 3.14159265358979323846; };

  std::vector<SitsSample> samples;
  for (int a = 0; a < cfg.n_aoi; ++a) {
    uint64_t aoi_seed = mix_seed(cfg.seed, static_cast<uint64_t>(a) + 1);
    Rng label_rng(mix_seed(aoi_seed, 1));
    Rng drift_rng(mix_seed(aoi_seed, 2));
    Rng event_rng(mix_seed(aoi_seed, 3));
    Rng noise_rng(mix_seed(aoi_seed, 4));

    // Base land-cover map, constant over time before change events.
    auto field = value_noise(cfg.H, cfg.W, label_rng);
    auto base_labels = quantize_labels(field, cfg.K);
    std::vector<uint8_t> labels(static_cast<size_t>(cfg.T * plane));
    for (int64_t t = 0; t < cfg.T; ++t)
      std::copy(base_labels.begin(), base_labels.end(), labels.begin() + t * plane);

    // Change events: disks flipping to a new class from a random month on.
    int64_t target = static_cast<int64_t>(
        std::llround(cfg.change_rate * static_cast<double>(cfg.T - 1) * static_cast<double>(plane)));
    if (cfg.change_rate > 0.0 && cfg.T >= 2) {
      int64_t hi = target + target / 5;
      if (target > 0 && hi < 1)
        throw InputError("synth: change_rate target below one pixel; unreachable");
      int64_t flips = 0;
      int attempts = 0;
      while (flips < target) {
        if (++attempts > 5000)
          throw InputError("synth: could not reach change_rate " +
                           std::to_string(cfg.change_rate) + " within tolerance");
        int64_t deficit = target - flips;
        int64_t rmax = std::max<int64_t>(
            0, std::min(std::min(cfg.H, cfg.W) / 8,
                        static_cast<int64_t>(std::sqrt(static_cast<double>(deficit) / 3.0))));
        int64_t r = event_rng.uniform_int(0, rmax);
        int64_t cy = event_rng.uniform_int(0, cfg.H - 1);
        int64_t cx = event_rng.uniform_int(0, cfg.W - 1);
        int64_t m = event_rng.uniform_int(1, cfg.T - 1);
        uint8_t cur = labels[static_cast<size_t>((m - 1) * plane + cy * cfg.W + cx)];
        uint8_t next = static_cast<uint8_t>(
            (cur + 1 + event_rng.uniform_int(0, cfg.K - 2)) % cfg.K);
        std::vector<uint8_t> snapshot;
        if (flips + 4 * r * r + 4 >= hi) snapshot = labels;  // may overshoot; keep an undo
        for (int64_t dy = -r; dy <= r; ++dy)
          for (int64_t dx = -r; dx <= r; ++dx) {
            if (dy * dy + dx * dx > r * r) continue;
            int64_t y = cy + dy, x = cx + dx;
            if (y < 0 || y >= cfg.H || x < 0 || x >= cfg.W) continue;
            for (int64_t t = m; t < cfg.T; ++t)
              labels[static_cast<size_t>(t * plane + y * cfg.W + x)] = next;
          }
        int64_t now = count_flips(labels, cfg.T, plane);
        if (now > hi && !snapshot.empty()) {
          labels = std::move(snapshot);  // undo and retry with another event
          continue;
        }
        flips = now;
      }
    }

    // Per-AoI palette drift.
    auto aoi_palette = palette;
    for (auto& row : aoi_palette)
      for (auto& v : row) v += cfg.geo_drift * drift_rng.normal();

    // Spectral rendering.
    SitsSample s;
    s.aoi_id = "aoi_" + std::string(a < 10 ? "0" : "") + std::to_string(a);
    s.T = cfg.T;
    s.C = cfg.channels;
    s.H = cfg.H;
    s.W = cfg.W;
    s.images.resize(static_cast<size_t>(cfg.T * cfg.channels * plane));
    for (int64_t t = 0; t < cfg.T; ++t) {
      double season_angle = 2.0 * 3.14159265358979323846 * static_cast<double>(t % 12) / 12.0;
      for (int64_t p = 0; p < plane; ++p) {
        uint8_t lab = labels[static_cast<size_t>(t * plane + p)];
        double season = cfg.season_amp * std::sin(season_angle + phase(lab));
        for (int64_t ch = 0; ch < cfg.channels; ++ch) {
          double v = aoi_palette[lab][static_cast<size_t>(ch)] + season +
                     cfg.noise_sigma * noise_rng.normal();
          s.images[static_cast<size_t>((t * cfg.channels + ch) * plane + p)] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
      s.days.push_back(month_start_day(static_cast<int>(t)));
    }
    s.labels.T = cfg.T;
    s.labels.H = cfg.H;
    s.labels.W = cfg.W;
    s.labels.K = cfg.K;
    s.labels.labels = std::move(labels);
    s.labels.ignore.assign(static_cast<size_t>(cfg.T * plane), 0);
    samples.push_back(std::move(s));
  }
  return samples;
}

double measured_change_fraction(const std::vector<SitsSample>& samples) {
  int64_t flips = 0, pairs = 0;
  for (const auto& s : samples) {
    auto c = derive_change(s.labels);
    for (int64_t i = 0; i < c.pairs(); ++i) {
      if (!c.valid[static_cast<size_t>(i)]) continue;
      ++pairs;
      flips += c.change[static_cast<size_t>(i)];
    }
  }
  if (pairs == 0) throw InputError("no valid pairs in dataset");
  return static_cast<double>(flips) / static_cast<double>(pairs);
}

// --------------------------------------------------------------------------
// Dataset directory io

namespace {

json config_to_json(const SyntheticWorldConfig& c) {
  json j;
  j["n_aoi"] = c.n_aoi;
  j["H"] = c.H;
  j["W"] = c.W;
  j["T"] = c.T;
  j["K"] = c.K;
  j["channels"] = c.channels;
  j["seed"] = c.seed;
  j["change_rate"] = c.change_rate;
  j["season_amp"] = c.season_amp;
  j["geo_drift"] = c.geo_drift;
  j["noise_sigma"] = c.noise_sigma;
  return j;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open " + p.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<SitsSample>& samples,
                   const SyntheticWorldConfig* config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  uint64_t hash = 0xcbf29ce484222325ULL;
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    s.validate();
    ids.push_back(s.aoi_id);
    fs::path sub = dir / s.aoi_id;
    fs::create_directories(sub, ec);
    Raster img;
    img.dtype = 0;
    img.dims = {s.T, s.C, s.H, s.W};
    img.f32 = s.images;
    save_raster(sub / "images.sits", img);
    Raster lab;
    lab.dtype = 1;
    lab.dims = {s.T, s.H, s.W};
    lab.u8 = s.labels.labels;
    save_raster(sub / "labels.sits", lab);
    Raster ign;
    ign.dtype = 1;
    ign.dims = {s.T, s.H, s.W};
    ign.u8 = s.labels.ignore;
    save_raster(sub / "ignore.sits", ign);
    write_text(sub / "days.json", json(s.days).dump());
    json meta;
    meta["aoi_id"] = s.aoi_id;
    meta["T"] = s.T;
    meta["C"] = s.C;
    meta["H"] = s.H;
    meta["W"] = s.W;
    meta["K"] = s.labels.K;
    write_text(sub / "meta.json", meta.dump(2));
    hash = fnv1a(s.images.data(), s.images.size() * sizeof(float), hash);
    hash = fnv1a(s.labels.labels.data(), s.labels.labels.size(), hash);
    hash = fnv1a(s.labels.ignore.data(), s.labels.ignore.size(), hash);
    hash = fnv1a(s.days.data(), s.days.size() * sizeof(int), hash);
  }
  json manifest;
  manifest["aoi_ids"] = ids;
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  manifest["content_hash"] = hex;
  if (config) {
    manifest["config"] = config_to_json(*config);
    manifest["seed"] = config->seed;
  }
  write_text(dir / "manifest.json", manifest.dump(2));
}

std::vector<std::string> dataset_aoi_ids(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return manifest.at("aoi_ids").get<std::vector<std::string>>();
}

SitsSample load_sample(const fs::path& dir, const std::string& aoi_id) {
  fs::path sub = dir / aoi_id;
  Raster img = load_raster(sub / "images.sits");
  Raster lab = load_raster(sub / "labels.sits");
  Raster ign = load_raster(sub / "ignore.sits");
  if (img.dtype != 0 || img.dims.size() != 4)
    throw FormatError(aoi_id + ": images.sits must be a 4-d f32 raster");
  if (lab.dtype != 1 || ign.dtype != 1)
    throw FormatError(aoi_id + ": labels.sits and ignore.sits must be u8 rasters");
  json meta, days;
  try {
    meta = json::parse(read_text(sub / "meta.json"));
    days = json::parse(read_text(sub / "days.json"));
  } catch (const json::exception& e) {
    throw FormatError(aoi_id + ": " + e.what());
  }
  SitsSample s;
  s.aoi_id = aoi_id;
  s.T = img.dims[0];
  s.C = img.dims[1];
  s.H = img.dims[2];
  s.W = img.dims[3];
  s.images = std::move(img.f32);
  s.labels.T = s.T;
  s.labels.H = s.H;
  s.labels.W = s.W;
  s.labels.K = meta.at("K").get<int>();
  s.labels.labels = std::move(lab.u8);
  s.labels.ignore = std::move(ign.u8);
  s.days = days.get<std::vector<int>>();
  s.validate();
  return s;
}

std::vector<SitsSample> load_dataset(const fs::path& dir) {
  std::vector<SitsSample> out;
  for (const auto& id : dataset_aoi_ids(dir)) out.push_back(load_sample(dir, id));
  return out;
}

uint64_t dataset_content_hash(const fs::path& dir) {
  json manifest = json::parse(read_text(dir / "manifest.json"));
  return std::stoull(manifest.at("content_hash").get<std::string>(), nullptr, 16);
}

// --------------------------------------------------------------------------
// Views, augmentation, subsampling

SitsSample extract_quarter(const SitsSample& s, int quarter) {
  if (quarter < 1 || quarter > 4) throw InputError("quarter must be 1..4");
  int64_t h2 = s.H / 2, w2 = s.W / 2;
  int64_t y0 = (quarter - 1) / 2 * h2;
  int64_t x0 = (quarter - 1) % 2 * w2;
  SitsSample out;
  out.aoi_id = s.aoi_id;
  out.T = s.T;
  out.C = s.C;
  out.H = h2;
  out.W = w2;
  out.days = s.days;
  out.quarter = quarter;
  out.images.resize(static_cast<size_t>(s.T * s.C * h2 * w2));
  for (int64_t t = 0; t < s.T; ++t)
    for (int64_t c = 0; c < s.C; ++c)
      for (int64_t y = 0; y < h2; ++y)
        std::copy_n(s.images.begin() + ((t * s.C + c) * s.H + y0 + y) * s.W + x0, w2,
                    out.images.begin() + ((t * out.C + c) * h2 + y) * w2);
  out.labels.T = s.T;
  out.labels.H = h2;
  out.labels.W = w2;
  out.labels.K = s.labels.K;
  out.labels.labels.resize(static_cast<size_t>(s.T * h2 * w2));
  out.labels.ignore.resize(static_cast<size_t>(s.T * h2 * w2));
  for (int64_t t = 0; t < s.T; ++t)
    for (int64_t y = 0; y < h2; ++y) {
      std::copy_n(s.labels.labels.begin() + (t * s.H + y0 + y) * s.W + x0, w2,
                  out.labels.labels.begin() + (t * h2 + y) * w2);
      std::copy_n(s.labels.ignore.begin() + (t * s.H + y0 + y) * s.W + x0, w2,
                  out.labels.ignore.begin() + (t * h2 + y) * w2);
    }
  return out;
}

SitsSample extract_date_range(const SitsSample& s, int day_lo, int day_hi) {
  std::vector<int64_t> keep;
  for (int64_t t = 0; t < s.T; ++t)
    if (s.days[static_cast<size_t>(t)] >= day_lo && s.days[static_cast<size_t>(t)] < day_hi)
      keep.push_back(t);
  if (keep.empty())
    throw InputError("date range [" + std::to_string(day_lo) + "," + std::to_string(day_hi) +
                     ") selects no dates for " + s.aoi_id);
  SitsSample out;
  out.aoi_id = s.aoi_id;
  out.T = static_cast<int64_t>(keep.size());
  out.C = s.C;
  out.H = s.H;
  out.W = s.W;
  out.quarter = s.quarter;
  int64_t plane = s.H * s.W;
  out.images.resize(static_cast<size_t>(out.T * s.C * plane));
  out.labels.T = out.T;
  out.labels.H = s.H;
  out.labels.W = s.W;
  out.labels.K = s.labels.K;
  out.labels.labels.resize(static_cast<size_t>(out.T * plane));
  out.labels.ignore.resize(static_cast<size_t>(out.T * plane));
  for (size_t i = 0; i < keep.size(); ++i) {
    int64_t t = keep[i];
    out.days.push_back(s.days[static_cast<size_t>(t)]);
    std::copy_n(s.images.begin() + t * s.C * plane, s.C * plane,
                out.images.begin() + static_cast<int64_t>(i) * s.C * plane);
    std::copy_n(s.labels.labels.begin() + t * plane, plane,
                out.labels.labels.begin() + static_cast<int64_t>(i) * plane);
    std::copy_n(s.labels.ignore.begin() + t * plane, plane,
                out.labels.ignore.begin() + static_cast<int64_t>(i) * plane);
  }
  return out;
}

SitsSample extract_unit(const SitsSample& s, const FoldUnit& unit) {
  if (unit.aoi_id != s.aoi_id) throw InputError("unit does not belong to sample " + s.aoi_id);
  SitsSample out = s;
  if (unit.quarter) out = extract_quarter(out, *unit.quarter);
  if (unit.date_range) out = extract_date_range(out, unit.date_range->first, unit.date_range->second);
  return out;
}

SitsSample apply_augment(const SitsSample& s, int64_t crop, const AugmentParams& params) {
  if (crop > s.H || crop > s.W)
    throw InputError("crop " + std::to_string(crop) + " exceeds tile " + std::to_string(s.H) +
                     "x" + std::to_string(s.W));
  if (params.y0 < 0 || params.y0 + crop > s.H || params.x0 < 0 || params.x0 + crop > s.W)
    throw InputError("crop window out of bounds");

  // Destination (y,x) -> source (sy,sx) inside the crop window.
  auto src_of = [&](int64_t y, int64_t x) {
    int64_t sy = y, sx = x;
    for (int r = 0; r < params.rot; ++r) {  // inverse of a 90-degree CCW rotation
      int64_t ny = sx;
      int64_t nx = crop - 1 - sy;
      sy = ny;
      sx = nx;
    }
    if (params.flip_v) sy = crop - 1 - sy;
    if (params.flip_h) sx = crop - 1 - sx;
    return std::pair<int64_t, int64_t>(params.y0 + sy, params.x0 + sx);
  };

  SitsSample out;
  out.aoi_id = s.aoi_id;
  out.T = s.T;
  out.C = s.C;
  out.H = crop;
  out.W = crop;
  out.days = s.days;
  out.quarter = s.quarter;
  out.images.resize(static_cast<size_t>(s.T * s.C * crop * crop));
  out.labels.T = s.T;
  out.labels.H = crop;
  out.labels.W = crop;
  out.labels.K = s.labels.K;
  out.labels.labels.resize(static_cast<size_t>(s.T * crop * crop));
  out.labels.ignore.resize(static_cast<size_t>(s.T * crop * crop));
  for (int64_t y = 0; y < crop; ++y)
    for (int64_t x = 0; x < crop; ++x) {
      auto [sy, sx] = src_of(y, x);
      for (int64_t t = 0; t < s.T; ++t) {
        for (int64_t c = 0; c < s.C; ++c)
          out.images[static_cast<size_t>(((t * s.C + c) * crop + y) * crop + x)] =
              s.images[static_cast<size_t>(((t * s.C + c) * s.H + sy) * s.W + sx)];
        out.labels.labels[static_cast<size_t>((t * crop + y) * crop + x)] =
            s.labels.labels[static_cast<size_t>((t * s.H + sy) * s.W + sx)];
        out.labels.ignore[static_cast<size_t>((t * crop + y) * crop + x)] =
            s.labels.ignore[static_cast<size_t>((t * s.H + sy) * s.W + sx)];
      }
    }
  return out;
}

SitsSample augment(const SitsSample& s, int64_t crop, Rng& rng) {
  if (crop > s.H || crop > s.W)
    throw InputError("crop " + std::to_string(crop) + " exceeds tile " + std::to_string(s.H) +
                     "x" + std::to_string(s.W));
  AugmentParams p;
  p.y0 = rng.uniform_int(0, s.H - crop);
  p.x0 = rng.uniform_int(0, s.W - crop);
  p.flip_h = rng.uniform() < 0.5;
  p.flip_v = rng.uniform() < 0.5;
  p.rot = static_cast<int>(rng.uniform_int(0, 3));
  return apply_augment(s, crop, p);
}

SitsSample subsample_months(const SitsSample& s, int64_t n, Rng& rng) {
  if (n > s.T) throw InputError("subsample_months: n exceeds available dates");
  if (n == s.T) return s;
  auto keep = rng.sample_without_replacement(s.T, n);
  SitsSample out;
  out.aoi_id = s.aoi_id;
  out.T = n;
  out.C = s.C;
  out.H = s.H;
  out.W = s.W;
  out.quarter = s.quarter;
  int64_t plane = s.H * s.W;
  out.images.resize(static_cast<size_t>(n * s.C * plane));
  out.labels.T = n;
  out.labels.H = s.H;
  out.labels.W = s.W;
  out.labels.K = s.labels.K;
  out.labels.labels.resize(static_cast<size_t>(n * plane));
  out.labels.ignore.resize(static_cast<size_t>(n * plane));
  for (size_t i = 0; i < keep.size(); ++i) {
    int64_t t = keep[i];
    out.days.push_back(s.days[static_cast<size_t>(t)]);
    std::copy_n(s.images.begin() + t * s.C * plane, s.C * plane,
                out.images.begin() + static_cast<int64_t>(i) * s.C * plane);
    std::copy_n(s.labels.labels.begin() + t * plane, plane,
                out.labels.labels.begin() + static_cast<int64_t>(i) * plane);
    std::copy_n(s.labels.ignore.begin() + t * plane, plane,
                out.labels.ignore.begin() + static_cast<int64_t>(i) * plane);
  }
  return out;
}

std::vector<double> class_distribution(const std::vector<const LabelSeries*>& series, int K) {
  std::vector<int64_t> counts(static_cast<size_t>(K), 0);
  int64_t total = 0;
  for (const auto* s : series) {
    for (int64_t i = 0; i < s->pixels(); ++i) {
      if (s->ignore[static_cast<size_t>(i)]) continue;
      ++counts[s->labels[static_cast<size_t>(i)]];
      ++total;
    }
  }
  if (total == 0) throw InputError("class_distribution: no valid pixels");
  std::vector<double> out(static_cast<size_t>(K));
  for (int c = 0; c < K; ++c)
    out[static_cast<size_t>(c)] =
        static_cast<double>(counts[static_cast<size_t>(c)]) / static_cast<double>(total);
  return out;
}

}  // namespace scd
