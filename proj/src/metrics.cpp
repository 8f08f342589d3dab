#include "scd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace scd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Per-class IoU from a gt-major confusion matrix; unsupported classes get NaN.
std::vector<double> per_class_iou(const std::vector<int64_t>& conf, int k) {
  std::vector<double> iou(static_cast<size_t>(k), kNaN);
  for (int c = 0; c < k; ++c) {
    int64_t tp = conf[static_cast<size_t>(c * k + c)];
    int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += conf[static_cast<size_t>(c * k + j)];
      col += conf[static_cast<size_t>(j * k + c)];
    }
    int64_t uni = row + col - tp;
    if (uni > 0) iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double mean_supported(const std::vector<double>& iou) {
  double sum = 0.0;
  int n = 0;
  for (double v : iou) {
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) throw InputError("no valid pixels: every class is unsupported");
  return sum / n;
}

double bc_from_counts(int64_t tp, int64_t fp, int64_t fn) {
  int64_t uni = tp + fp + fn;
  // Vacuous truth: nothing to detect and nothing detected counts as perfect.
  if (uni == 0) return 1.0;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

void check_same_extent(const LabelSeries& a, const LabelSeries& b) {
  if (a.T != b.T || a.H != b.H || a.W != b.W)
    throw DimensionError("label series extents differ: " +
                         shape_str({a.T, a.H, a.W}) + " vs " + shape_str({b.T, b.H, b.W}));
}

}  // namespace

void LabelSeries::validate() const {
  if (static_cast<int64_t>(labels.size()) != pixels() ||
      static_cast<int64_t>(ignore.size()) != pixels())
    throw DimensionError("label series buffers do not match extents");
  for (int64_t i = 0; i < pixels(); ++i)
    if (!ignore[static_cast<size_t>(i)] && labels[static_cast<size_t>(i)] >= K)
      throw InputError("label " + std::to_string(labels[static_cast<size_t>(i)]) +
                       " out of range for K=" + std::to_string(K));
}

ChangeSeries derive_change(const LabelSeries& series) {
  if (series.T < 2) throw InputError("derive_change: need at least two dates");
  ChangeSeries out;
  out.T1 = series.T - 1;
  out.H = series.H;
  out.W = series.W;
  out.change.assign(static_cast<size_t>(out.pairs()), 0);
  out.valid.assign(static_cast<size_t>(out.pairs()), 0);
  int64_t plane = series.H * series.W;
  for (int64_t t = 0; t < out.T1; ++t) {
    const uint8_t* l0 = series.labels.data() + t * plane;
    const uint8_t* l1 = series.labels.data() + (t + 1) * plane;
    const uint8_t* i0 = series.ignore.data() + t * plane;
    const uint8_t* i1 = series.ignore.data() + (t + 1) * plane;
    uint8_t* ch = out.change.data() + t * plane;
    uint8_t* va = out.valid.data() + t * plane;
    for (int64_t p = 0; p < plane; ++p) {
      bool v = !i0[p] && !i1[p];
      va[p] = v ? 1 : 0;
      ch[p] = (v && l0[p] != l1[p]) ? 1 : 0;
    }
  }
  return out;
}

MetricsAccumulator::MetricsAccumulator(int num_classes, BcAggregation bc)
    : k_(num_classes),
      bc_mode_(bc),
      confusion_(static_cast<size_t>(num_classes) * num_classes, 0),
      sc_confusion_(static_cast<size_t>(num_classes) * num_classes, 0),
      change_confusion_(4, 0) {
  if (num_classes < 2) throw ConfigError("metrics need at least two classes");
}

void MetricsAccumulator::add(const LabelSeries& pred, const LabelSeries& gt) {
  check_same_extent(pred, gt);
  int64_t plane = gt.H * gt.W;
  // Semantic confusion over all valid (date, pixel) cells; the gt ignore mask
  // is authoritative for both series.
  for (int64_t t = 0; t < gt.T; ++t) {
    const uint8_t* lp = pred.labels.data() + t * plane;
    const uint8_t* lg = gt.labels.data() + t * plane;
    const uint8_t* ig = gt.ignore.data() + t * plane;
    for (int64_t p = 0; p < plane; ++p) {
      if (ig[p]) continue;
      ++confusion_[static_cast<size_t>(lg[p] * k_ + lp[p])];
    }
  }
  if (gt.T >= 2) {
    LabelSeries pred_shared = pred;
    pred_shared.ignore = gt.ignore;
    ChangeSeries cp = derive_change(pred_shared);
    ChangeSeries cg = derive_change(gt);
    int64_t tile_change[4] = {0, 0, 0, 0};
    for (int64_t i = 0; i < cg.pairs(); ++i) {
      if (!cg.valid[static_cast<size_t>(i)]) continue;
      int g = cg.change[static_cast<size_t>(i)] ? 1 : 0;
      int q = cp.change[static_cast<size_t>(i)] ? 1 : 0;
      ++tile_change[g * 2 + q];
    }
    for (int i = 0; i < 4; ++i) change_confusion_[static_cast<size_t>(i)] += tile_change[i];
    if (bc_mode_ == BcAggregation::kPerTile)
      per_tile_bc_.push_back(bc_from_counts(tile_change[3], tile_change[1], tile_change[2]));
    // SC: semantic confusion at the later date of every gt-changed pair.
    for (int64_t t = 0; t < cg.T1; ++t) {
      const uint8_t* ch = cg.change.data() + t * plane;
      const uint8_t* lp = pred.labels.data() + (t + 1) * plane;
      const uint8_t* lg = gt.labels.data() + (t + 1) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        if (!ch[p]) continue;
        ++sc_confusion_[static_cast<size_t>(lg[p] * k_ + lp[p])];
      }
    }
  }
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  if (other.k_ != k_) throw DimensionError("cannot merge accumulators with different K");
  for (size_t i = 0; i < confusion_.size(); ++i) confusion_[i] += other.confusion_[i];
  for (size_t i = 0; i < sc_confusion_.size(); ++i) sc_confusion_[i] += other.sc_confusion_[i];
  for (size_t i = 0; i < 4; ++i) change_confusion_[i] += other.change_confusion_[i];
  per_tile_bc_.insert(per_tile_bc_.end(), other.per_tile_bc_.begin(), other.per_tile_bc_.end());
}

MetricsReport MetricsAccumulator::finalize() const {
  MetricsReport rep;
  rep.per_class_iou = per_class_iou(confusion_, k_);
  rep.miou = mean_supported(rep.per_class_iou);
  rep.confusion = confusion_;
  rep.change_confusion = change_confusion_;
  for (int64_t c : confusion_) rep.valid_pixels += c;
  for (int64_t c : change_confusion_) rep.valid_pairs += c;

  if (bc_mode_ == BcAggregation::kPerTile && !per_tile_bc_.empty()) {
    double s = 0.0;
    for (double v : per_tile_bc_) s += v;
    rep.bc = s / static_cast<double>(per_tile_bc_.size());
  } else {
    rep.bc = bc_from_counts(change_confusion_[3], change_confusion_[1], change_confusion_[2]);
  }

  int64_t sc_total = 0;
  for (int64_t c : sc_confusion_) sc_total += c;
  if (sc_total > 0) {
    rep.sc = mean_supported(per_class_iou(sc_confusion_, k_));
    rep.scs = (*rep.sc + rep.bc) / 2.0;
  }
  return rep;
}

SemanticScore miou_score(const LabelSeries& pred, const LabelSeries& gt) {
  check_same_extent(pred, gt);
  std::vector<int64_t> conf(static_cast<size_t>(gt.K) * gt.K, 0);
  int64_t plane = gt.H * gt.W;
  for (int64_t t = 0; t < gt.T; ++t)
    for (int64_t p = 0; p < plane; ++p) {
      size_t i = static_cast<size_t>(t * plane + p);
      if (gt.ignore[i]) continue;
      ++conf[static_cast<size_t>(gt.labels[i] * gt.K + pred.labels[i])];
    }
  SemanticScore s;
  s.per_class = per_class_iou(conf, gt.K);
  s.miou = mean_supported(s.per_class);
  s.confusion = std::move(conf);
  return s;
}

double bc_score(const ChangeSeries& pred, const ChangeSeries& gt) {
  if (pred.T1 != gt.T1 || pred.H != gt.H || pred.W != gt.W)
    throw DimensionError("change series extents differ");
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t i = 0; i < gt.pairs(); ++i) {
    if (!gt.valid[static_cast<size_t>(i)]) continue;
    bool g = gt.change[static_cast<size_t>(i)] != 0;
    bool p = pred.change[static_cast<size_t>(i)] != 0;
    if (g && p)
      ++tp;
    else if (!g && p)
      ++fp;
    else if (g && !p)
      ++fn;
  }
  return bc_from_counts(tp, fp, fn);
}

double sc_score(const LabelSeries& pred, const LabelSeries& gt) {
  if (gt.T < 2) throw InputError("sc_score: need at least two dates");
  check_same_extent(pred, gt);
  ChangeSeries cg = derive_change(gt);
  std::vector<int64_t> conf(static_cast<size_t>(gt.K) * gt.K, 0);
  int64_t plane = gt.H * gt.W;
  int64_t total = 0;
  for (int64_t t = 0; t < cg.T1; ++t)
    for (int64_t p = 0; p < plane; ++p) {
      if (!cg.change[static_cast<size_t>(t * plane + p)]) continue;
      size_t i = static_cast<size_t>((t + 1) * plane + p);
      ++conf[static_cast<size_t>(gt.labels[i] * gt.K + pred.labels[i])];
      ++total;
    }
  if (total == 0) throw InputError("no change support");
  return mean_supported(per_class_iou(conf, gt.K));
}

double scs(double sc, double bc) { return (sc + bc) / 2.0; }

LabelSeries logits_to_labels(const float* logits, int64_t T, int K, int64_t H, int64_t W,
                             const std::vector<uint8_t>& ignore) {
  LabelSeries out;
  out.T = T;
  out.H = H;
  out.W = W;
  out.K = K;
  out.labels.assign(static_cast<size_t>(T * H * W), 0);
  out.ignore = ignore;
  int64_t plane = H * W;
  for (int64_t t = 0; t < T; ++t) {
    const float* base = logits + t * K * plane;
    for (int64_t p = 0; p < plane; ++p) {
      int best = 0;
      float bv = base[p];
      for (int c = 1; c < K; ++c) {
        float v = base[c * plane + p];
        if (v > bv) {  // strict: ties stay on the lowest class index
          bv = v;
          best = c;
        }
      }
      out.labels[static_cast<size_t>(t * plane + p)] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

MetricsReport evaluate(const float* logits, int64_t T, int K, int64_t H, int64_t W,
                       const LabelSeries& gt) {
  if (gt.T != T || gt.H != H || gt.W != W || gt.K != K)
    throw DimensionError("evaluate: logits and ground truth extents differ");
  LabelSeries pred = logits_to_labels(logits, T, K, H, W, gt.ignore);
  MetricsAccumulator acc(K);
  acc.add(pred, gt);
  return acc.finalize();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["miou"] = miou;
  j["bc"] = bc;
  if (sc) j["sc"] = *sc;
  if (scs) j["scs"] = *scs;
  nlohmann::json per = nlohmann::json::array();
  for (double v : per_class_iou) {
    if (std::isnan(v))
      per.push_back(nullptr);
    else
      per.push_back(v);
  }
  j["per_class_iou"] = per;
  j["pixel_counts"] = {{"valid_pixels", valid_pixels}, {"valid_pairs", valid_pairs}};
  j["confusion"] = confusion;
  j["change_confusion"] = change_confusion;
  return j.dump();
}

std::string MetricsReport::csv_header() { return "SCS,SC,BC,mIoU"; }

namespace {
std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}
}  // namespace

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os << (scs ? pct(*scs) : "") << ',' << (sc ? pct(*sc) : "") << ',' << pct(bc) << ','
     << pct(miou);
  return os.str();
}

}  // namespace scd
