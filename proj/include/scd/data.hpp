#pragma once

// Data plumbing: the "SITS" raster container, polygon rasterization for
// building footprints, the three domain-shift fold planners, augmentation and
// temporal subsampling, and a deterministic synthetic world generator used by
// the desk-scale experiments.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scd/common.hpp"
#include "scd/metrics.hpp"

namespace scd {

struct SitsSample {
  std::string aoi_id;
  int64_t T = 0, C = 0, H = 0, W = 0;
  std::vector<float> images;  // T*C*H*W, reflectance-like values in [0,1]
  LabelSeries labels;         // carries the ignore mask
  std::vector<int> days;      // offsets from the dataset epoch, strictly increasing
  std::optional<int> quarter; // 1..4 when this is a quarter view

  float pixel(int64_t t, int64_t c, int64_t y, int64_t x) const {
    return images[static_cast<size_t>(((t * C + c) * H + y) * W + x)];
  }
  void validate() const;
};

// --------------------------------------------------------------------------
// Raster file format: magic "SITS", version u8, dtype u8 (0=f32, 1=u8),
// ndim u32, dims u32 each, payload little-endian row-major.

struct Raster {
  uint8_t dtype = 0;  // 0 = f32, 1 = u8
  Shape dims;
  std::vector<float> f32;
  std::vector<uint8_t> u8;
};

void save_raster(const std::filesystem::path& path, const Raster& r);
Raster load_raster(const std::filesystem::path& path);

// --------------------------------------------------------------------------
// Polygon rasterization (even-odd scanline fill, pixel-center rule)

struct Polygon {
  // closed vertex loops in pixel coordinates; a vertex is (x, y)
  std::vector<std::vector<std::array<double, 2>>> rings;
};

std::vector<uint8_t> rasterize_polygons(const std::vector<Polygon>& polys, int64_t H, int64_t W);
// JSON: a list of polygons, each a list of rings, each a list of [x, y]
std::vector<Polygon> polygons_from_json(const std::string& text);

// --------------------------------------------------------------------------
// Fold planning

struct FoldUnit {
  std::string aoi_id;
  std::optional<int> quarter;                       // 1..4
  std::optional<std::pair<int, int>> date_range;    // [lo, hi) in day offsets
  bool operator==(const FoldUnit&) const = default;
};

struct Fold {
  std::vector<FoldUnit> train, val, test;
};

struct FoldPlan {
  std::string setting;  // no_shift | temporal | spatial
  std::vector<Fold> folds;

  std::string to_json() const;
  static FoldPlan from_json(const std::string& text);
  // Throws PlanningError if any fold violates disjointness or coverage.
  void check_invariants() const;
};

// Quarters 1..4 of every AoI rotate through train/train/val/test across 4 folds.
FoldPlan plan_no_shift(const std::vector<std::string>& aoi_ids);

// Single fold: all AoIs train on days < split_day and are evaluated on days
// >= split_day, with val/test split over AoI halves.
FoldPlan plan_temporal(const std::vector<std::string>& aoi_ids, int day_min, int day_max,
                       int split_day);

// Five AoI subsets rotating 3/1/1 through train/val/test. Explicit subsets are
// used verbatim; otherwise, when class histograms are given, a greedy balance
// keeps per-subset class distributions close; otherwise sorted ids are chunked.
FoldPlan plan_spatial(const std::vector<std::string>& aoi_ids,
                      const std::vector<std::vector<std::string>>* subsets = nullptr,
                      const std::map<std::string, std::vector<double>>* balance_by = nullptr);

// --------------------------------------------------------------------------
// Synthetic world generator

struct SyntheticWorldConfig {
  int n_aoi = 16;
  int64_t H = 64, W = 64;
  int64_t T = 12;
  int K = 4;
  int channels = 4;
  uint64_t seed = 0;
  double change_rate = 0.013;  // target monthly changed-pixel fraction
  double season_amp = 0.15;    // seasonal appearance amplitude
  double geo_drift = 0.08;     // cross-AoI palette shift magnitude
  double noise_sigma = 0.10;

  void validate() const;
};

std::vector<SitsSample> synth_generate(const SyntheticWorldConfig& config);

// Fraction of valid consecutive-pair pixels whose label changes.
double measured_change_fraction(const std::vector<SitsSample>& samples);

// --------------------------------------------------------------------------
// Dataset directory layout: one subdirectory per AoI with images.sits,
// labels.sits, ignore.sits, days.json, meta.json; manifest.json at the root.

void write_dataset(const std::filesystem::path& dir, const std::vector<SitsSample>& samples,
                   const SyntheticWorldConfig* config);
std::vector<std::string> dataset_aoi_ids(const std::filesystem::path& dir);
SitsSample load_sample(const std::filesystem::path& dir, const std::string& aoi_id);
std::vector<SitsSample> load_dataset(const std::filesystem::path& dir);
uint64_t dataset_content_hash(const std::filesystem::path& dir);

// --------------------------------------------------------------------------
// Views, augmentation, subsampling

SitsSample extract_quarter(const SitsSample& s, int quarter);
SitsSample extract_date_range(const SitsSample& s, int day_lo, int day_hi);
SitsSample extract_unit(const SitsSample& s, const FoldUnit& unit);

// One square crop shared by all dates, then a dihedral transform
// (flips + k*90 degree rotation) applied jointly to images, labels and the
// ignore mask.
struct AugmentParams {
  int64_t y0 = 0, x0 = 0;
  bool flip_h = false, flip_v = false;
  int rot = 0;  // number of 90-degree rotations
};
SitsSample apply_augment(const SitsSample& s, int64_t crop, const AugmentParams& params);
SitsSample augment(const SitsSample& s, int64_t crop, Rng& rng);

SitsSample subsample_months(const SitsSample& s, int64_t n, Rng& rng);

// Per-class pixel fractions over non-ignored pixels; sums to 1.
std::vector<double> class_distribution(const std::vector<const LabelSeries*>& series, int K);

// Day offset of the first day of calendar month `month_index`, counted from
// the dataset epoch (January 2018).
int month_start_day(int month_index);

}  // namespace scd
