#pragma once

// Inference: sub-sequence splitting schemes, spatial tiling with reflective
// borders, scatter-back assembly of full-series logits, and change-map
// derivation from predictions.

#include <string>
#include <vector>

#include "scd/data.hpp"
#include "scd/metrics.hpp"
#include "scd/model.hpp"

namespace scd {

struct SplitScheme {
  std::vector<int> assignment;  // group id per date index
  std::string kind;             // contiguous | strided | custom
  int64_t group_len = 0;

  int64_t dates() const { return static_cast<int64_t>(assignment.size()); }
  int num_groups() const;
  // Every date carries a valid group id and every group is nonempty.
  void check_partition() const;
};

// contiguous: consecutive blocks of group_len dates. strided: round-robin
// over T/group_len groups so each group spans the whole period.
SplitScheme make_scheme(int64_t T, int64_t group_len, const std::string& kind);
SplitScheme custom_scheme(std::vector<int> assignment);

std::string scheme_to_json(const SplitScheme& s);
SplitScheme scheme_from_json(const std::string& text);

struct InferOptions {
  int64_t max_tile = 512;  // spatial window; larger tiles are split
};

// Full-series logits [T,K,H,W] for one sample. Groups are forwarded
// independently and scattered back to their date slots; collapsing variants
// broadcast their single map to every date of the group.
std::vector<float> infer_logits(const ModelConfig& cfg, const ParamSet<float>& params,
                                const SitsSample& sample, const SplitScheme& scheme,
                                const InferOptions& opts = {});

// Full-series argmax label maps for one sample.
LabelSeries predict_labels(const ModelConfig& cfg, const ParamSet<float>& params,
                           const SitsSample& sample, const SplitScheme& scheme,
                           const InferOptions& opts = {});

// argmax labels then consecutive-date change derivation.
ChangeSeries predict_change(const std::vector<float>& logits, int64_t T, int K, int64_t H,
                            int64_t W, const std::vector<uint8_t>& ignore);

const SitsSample& find_sample(const std::vector<SitsSample>& dataset, const std::string& aoi_id);

// The scheme every date gets under this model variant by default: the full
// series for the multi-temporal model, singleton groups (mono-temporal
// evaluation) for the collapsing variants.
SplitScheme default_scheme(const ModelConfig& cfg, int64_t T);

// Score a list of fold units against their ground truth.
MetricsAccumulator evaluate_units(const ModelConfig& cfg, const ParamSet<float>& params,
                                  const std::vector<SitsSample>& dataset,
                                  const std::vector<FoldUnit>& units,
                                  const SplitScheme* scheme = nullptr,
                                  const InferOptions& opts = {},
                                  BcAggregation bc = BcAggregation::kGlobal);

}  // namespace scd
