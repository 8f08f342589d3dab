#pragma once

// Semantic change detection scores: mIoU over semantic labels, BC (IoU of the
// binary change class between consecutive dates), SC (class IoU restricted to
// pixels where ground truth changes) and SCS = (SC + BC) / 2. All scores are
// computed from confusion counts so that tile-level partials can be merged.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scd/common.hpp"

namespace scd {

struct LabelSeries {
  int64_t T = 0, H = 0, W = 0;
  int K = 0;
  std::vector<uint8_t> labels;  // T*H*W class indices
  std::vector<uint8_t> ignore;  // T*H*W, nonzero = excluded everywhere

  int64_t pixels() const { return T * H * W; }
  uint8_t label(int64_t t, int64_t y, int64_t x) const {
    return labels[static_cast<size_t>((t * H + y) * W + x)];
  }
  bool ignored(int64_t t, int64_t y, int64_t x) const {
    return ignore[static_cast<size_t>((t * H + y) * W + x)] != 0;
  }
  void validate() const;
};

struct ChangeSeries {
  int64_t T1 = 0, H = 0, W = 0;  // T-1 consecutive pairs
  std::vector<uint8_t> change;   // nonzero where labels differ
  std::vector<uint8_t> valid;    // both dates unignored

  int64_t pairs() const { return T1 * H * W; }
};

// change[t] = labels[t] != labels[t+1] on pixels valid at both dates.
ChangeSeries derive_change(const LabelSeries& series);

// How BC aggregates across tiles: one global confusion (default) or a mean of
// per-tile scores with the vacuous-truth convention applied per tile.
enum class BcAggregation { kGlobal, kPerTile };

struct MetricsReport {
  double miou = 0.0;
  double bc = 0.0;
  std::optional<double> sc;  // absent when the ground truth has no change
  std::optional<double> scs;
  std::vector<double> per_class_iou;       // NaN where a class is unsupported
  std::vector<int64_t> confusion;          // K*K, row = gt, col = pred
  std::vector<int64_t> change_confusion;   // 2*2, row = gt, col = pred
  int64_t valid_pixels = 0;
  int64_t valid_pairs = 0;

  std::string to_json() const;
  // SCS,SC,BC,mIoU as percentages with one decimal
  std::string csv_row() const;
  static std::string csv_header();
};

class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(int num_classes, BcAggregation bc = BcAggregation::kGlobal);

  // Accumulate one tile's predicted labels against ground truth. The ground
  // truth ignore mask is shared by both sides.
  void add(const LabelSeries& pred, const LabelSeries& gt);

  // Merging partial accumulations is the only synchronization point when
  // tiles are scored in parallel.
  void merge(const MetricsAccumulator& other);

  // Throws InputError when no valid pixels were ever seen. sc is absent when
  // the ground truth contained no change at all.
  MetricsReport finalize() const;

  int num_classes() const { return k_; }

 private:
  int k_;
  BcAggregation bc_mode_;
  std::vector<int64_t> confusion_;         // k_*k_
  std::vector<int64_t> sc_confusion_;      // k_*k_, restricted to gt-change pixels
  std::vector<int64_t> change_confusion_;  // 2x2
  std::vector<double> per_tile_bc_;
};

// Single-pair conveniences used by tests and the CLI.
struct SemanticScore {
  double miou;
  std::vector<double> per_class;    // NaN where unsupported
  std::vector<int64_t> confusion;
};
SemanticScore miou_score(const LabelSeries& pred, const LabelSeries& gt);
double bc_score(const ChangeSeries& pred, const ChangeSeries& gt);
// Throws InputError("no change support") when gt has no change.
double sc_score(const LabelSeries& pred, const LabelSeries& gt);
double scs(double sc, double bc);

// argmax over the class axis of [T,K,H,W] logits; ties go to the lowest class.
LabelSeries logits_to_labels(const float* logits, int64_t T, int K, int64_t H, int64_t W,
                             const std::vector<uint8_t>& ignore);

MetricsReport evaluate(const float* logits, int64_t T, int K, int64_t H, int64_t W,
                       const LabelSeries& gt);

}  // namespace scd
