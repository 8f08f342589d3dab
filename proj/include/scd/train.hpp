#pragma once

// Training: focal loss on the tape, AdamW with decoupled weight decay, the
// linear-warmup learning-rate schedule, the training loop with temporal
// subsampling and augmentation, best-checkpoint selection on validation SCS,
// and the random pixel-label baseline.

#include <optional>
#include <span>
#include <vector>

#include "scd/data.hpp"
#include "scd/infer.hpp"
#include "scd/metrics.hpp"
#include "scd/model.hpp"
#include "scd/tensor.hpp"

namespace scd {

struct TrainConfig {
  int64_t max_iters = 5000;       // paper scale: 500000
  int64_t warmup_iters = 200;     // paper scale: 5000
  double peak_lr = 1e-4;
  double weight_decay = 0.01;
  double focal_gamma = 2.0;
  int batch_size = 4;
  uint64_t seed = 0;
  int64_t months_per_sample = 12;  // 6 in the temporal-shift setting
  int64_t val_every = 200;
  int64_t crop = 128;
  bool cosine_decay = false;

  void validate() const {
    if (warmup_iters > max_iters) throw ConfigError("warmup_iters must not exceed max_iters");
    if (peak_lr <= 0) throw ConfigError("peak_lr must be positive");
    if (batch_size < 1 || crop < 1 || months_per_sample < 1)
      throw ConfigError("batch_size, crop and months_per_sample must be positive");
    if (focal_gamma < 0) throw ConfigError("focal_gamma must be nonnegative");
  }
};

double lr_schedule(int64_t iter, const TrainConfig& cfg);

// Mean over valid pixels of -(1-p_t)^gamma * log(p_t); ignored pixels are
// excluded from the mean and receive no gradient.
template <typename S>
Tensor<S> focal_loss(const Tensor<S>& logits, const LabelSeries& gt, S gamma) {
  if (logits.ndim() != 4) throw DimensionError("focal_loss: logits must be [T,K,H,W]");
  int64_t T = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (gt.T != T || gt.H != H || gt.W != W || gt.K != static_cast<int>(K))
    throw DimensionError("focal_loss: ground truth extents do not match logits");
  if (gamma < S(0)) throw InputError("focal_loss: gamma must be nonnegative");
  int64_t plane = H * W;

  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(logits.size()));
  int64_t valid = 0;
  double total = 0.0;
  const S* z = logits.data();
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t p = 0; p < plane; ++p) {
      if (gt.ignore[static_cast<size_t>(t * plane + p)]) continue;
      ++valid;
      S mx = z[(t * K) * plane + p];
      for (int64_t c = 1; c < K; ++c) mx = std::max(mx, z[((t * K + c)) * plane + p]);
      S zsum = 0;
      for (int64_t c = 0; c < K; ++c) {
        S e = std::exp(z[(t * K + c) * plane + p] - mx);
        (*probs)[static_cast<size_t>((t * K + c) * plane + p)] = e;
        zsum += e;
      }
      for (int64_t c = 0; c < K; ++c)
        (*probs)[static_cast<size_t>((t * K + c) * plane + p)] /= zsum;
      uint8_t label = gt.labels[static_cast<size_t>(t * plane + p)];
      S u = (*probs)[static_cast<size_t>((t * K + label) * plane + p)];
      u = std::clamp(u, S(1e-12), S(1) - S(1e-12));
      total += -std::pow(1.0 - static_cast<double>(u), static_cast<double>(gamma)) *
               std::log(static_cast<double>(u));
    }
  }
  if (valid == 0) throw InputError("focal_loss: all pixels ignored");
  S loss = static_cast<S>(total / static_cast<double>(valid));

  auto labels = gt.labels;
  auto ignore = gt.ignore;
  return detail::make_op<S>(
      "focal_loss", {1}, {loss}, {&logits},
      [T, K, plane, gamma, valid, probs, labels, ignore](std::span<const S> g,
                                                         const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        S scale = g[0] / static_cast<S>(valid);
        for (int64_t t = 0; t < T; ++t) {
          for (int64_t p = 0; p < plane; ++p) {
            if (ignore[static_cast<size_t>(t * plane + p)]) continue;
            uint8_t label = labels[static_cast<size_t>(t * plane + p)];
            S u = (*probs)[static_cast<size_t>((t * K + label) * plane + p)];
            u = std::clamp(u, S(1e-12), S(1) - S(1e-12));
            S om = S(1) - u;
            // d/du of -(1-u)^gamma log(u)
            S c1 = -std::pow(om, gamma) / u;
            if (gamma > S(0)) c1 += gamma * std::pow(om, gamma - S(1)) * std::log(u);
            for (int64_t c = 0; c < K; ++c) {
              S pc = (*probs)[static_cast<size_t>((t * K + c) * plane + p)];
              S dudz = u * ((c == label ? S(1) : S(0)) - pc);
              pg[0][static_cast<size_t>((t * K + c) * plane + p)] += scale * c1 * dudz;
            }
          }
        }
      });
}

// One AdamW update on a flat parameter buffer (decoupled weight decay,
// bias-corrected moments); step_count is the 1-based step index.
void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                  std::span<float> v, int64_t step_count, double lr, double weight_decay,
                  double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

class AdamW {
 public:
  AdamW(const ParamSet<float>& params, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  // Applies gradients recorded on `tape` for the bound mirror of `params`.
  void step(ParamSet<float>& params, const ParamSet<float>& bound, const Tape<float>& tape,
            double lr);

  int64_t step_count() const { return t_; }

 private:
  std::vector<std::vector<float>> m_, v_;
  double wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct TrainLogEntry {
  int64_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_scs;
  std::optional<double> val_miou;
};

struct TrainResult {
  ParamSet<float> best_params;
  double best_val_metric = -1.0;
  int64_t best_iter = -1;
  std::vector<TrainLogEntry> log;
  bool aborted_nan = false;
};

// The full recipe: per iteration sample units, crop/augment, subsample
// months, forward, focal loss, backward, AdamW under the warmup schedule;
// validation SCS every val_every iterations decides the kept checkpoint.
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<SitsSample>& dataset, const Fold& fold);

// Uniform random label per pixel per date.
LabelSeries random_baseline(int64_t T, int64_t H, int64_t W, int K, Rng& rng);

}  // namespace scd
