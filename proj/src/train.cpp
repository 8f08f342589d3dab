#include "scd/train.hpp"

#include <algorithm>
#include <cmath>

namespace scd {

double lr_schedule(int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw InputError("lr_schedule: negative iteration");
  double warm = cfg.warmup_iters > 0
                    ? std::min(1.0, static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters))
                    : 1.0;
  double lr = cfg.peak_lr * warm;
  if (cfg.cosine_decay && iter > cfg.warmup_iters && cfg.max_iters > cfg.warmup_iters) {
    double progress = static_cast<double>(iter - cfg.warmup_iters) /
                      static_cast<double>(cfg.max_iters - cfg.warmup_iters);
    lr = cfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
  }
  return lr;
}

void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m,
                  std::span<float> v, int64_t step_count, double lr, double weight_decay,
                  double beta1, double beta2, double eps) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
    throw DimensionError("adamw_update: buffer extents differ");
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (size_t i = 0; i < param.size(); ++i) {
    double g = grad[i];
    double mi = beta1 * m[i] + (1.0 - beta1) * g;
    double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    double mhat = mi / bc1;
    double vhat = vi / bc2;
    param[i] = static_cast<float>(param[i] -
                                  lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * param[i]));
  }
}

AdamW::AdamW(const ParamSet<float>& params, double weight_decay, double beta1, double beta2,
             double eps)
    : wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params.items) {
    m_.emplace_back(static_cast<size_t>(t.size()), 0.0f);
    v_.emplace_back(static_cast<size_t>(t.size()), 0.0f);
  }
}

void AdamW::step(ParamSet<float>& params, const ParamSet<float>& bound, const Tape<float>& tape,
                 double lr) {
  if (bound.items.size() != params.items.size() || m_.size() != params.items.size())
    throw DimensionError("adamw: parameter sets out of sync");
  ++t_;
  for (size_t i = 0; i < params.items.size(); ++i) {
    const auto* grad = tape.gradient(bound.items[i].second);
    if (!grad) continue;  // parameter untouched by this loss
    auto& tensor = params.items[i].second;
    std::vector<float> data(tensor.vec());
    adamw_update(std::span<float>(data), std::span<const float>(*grad),
                 std::span<float>(m_[i]), std::span<float>(v_[i]), t_, lr, wd_, beta1_, beta2_,
                 eps_);
    tensor = Tensor<float>(tensor.shape(), std::move(data));
  }
}

LabelSeries random_baseline(int64_t T, int64_t H, int64_t W, int K, Rng& rng) {
  if (K < 2) throw InputError("random_baseline: need at least two classes");
  LabelSeries s;
  s.T = T;
  s.H = H;
  s.W = W;
  s.K = K;
  s.labels.resize(static_cast<size_t>(T * H * W));
  s.ignore.assign(static_cast<size_t>(T * H * W), 0);
  for (auto& v : s.labels) v = static_cast<uint8_t>(rng.uniform_int(0, K - 1));
  return s;
}

namespace {

// Ground truth aligned with the model output: the collapsing variants emit a
// single map which is trained against the last sampled date.
LabelSeries loss_target(const Tensor<float>& logits, const SitsSample& sample) {
  if (logits.dim(0) == sample.T) return sample.labels;
  LabelSeries out;
  out.T = 1;
  out.H = sample.H;
  out.W = sample.W;
  out.K = sample.labels.K;
  int64_t plane = sample.H * sample.W;
  int64_t last = sample.T - 1;
  out.labels.assign(sample.labels.labels.begin() + last * plane,
                    sample.labels.labels.begin() + (last + 1) * plane);
  out.ignore.assign(sample.labels.ignore.begin() + last * plane,
                    sample.labels.ignore.begin() + (last + 1) * plane);
  return out;
}

}  // namespace

TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::vector<SitsSample>& dataset, const Fold& fold) {
  mcfg.validate();
  tcfg.validate();
  if (fold.train.empty()) throw PlanningError("train: fold has no training units");

  Rng rng(tcfg.seed);
  Rng init_rng(mix_seed(tcfg.seed, 0x1917));
  ParamSet<float> params = init_model_params(mcfg, init_rng);
  AdamW opt(params, tcfg.weight_decay);

  TrainResult result;
  result.best_params = params;

  auto validate_now = [&](int64_t iter, double loss_value, double lr) {
    TrainLogEntry entry;
    entry.iter = iter;
    entry.loss = loss_value;
    entry.lr = lr;
    if (!fold.val.empty()) {
      auto rep = evaluate_units(mcfg, params, dataset, fold.val).finalize();
      entry.val_miou = rep.miou;
      if (rep.scs) entry.val_scs = *rep.scs;
      double metric = rep.scs ? *rep.scs : rep.miou;
      if (metric > result.best_val_metric) {
        result.best_val_metric = metric;
        result.best_iter = iter;
        result.best_params = params;
      }
    }
    result.log.push_back(entry);
  };

  double last_loss = 0.0;
  for (int64_t iter = 0; iter < tcfg.max_iters; ++iter) {
    double lr = lr_schedule(iter, tcfg);

    Tape<float> tape;
    ParamSet<float> bound = params.bind(tape);
    Tensor<float> batch_loss;
    for (int b = 0; b < tcfg.batch_size; ++b) {
      const FoldUnit& unit =
          fold.train[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(fold.train.size()) - 1))];
      SitsSample view = extract_unit(find_sample(dataset, unit.aoi_id), unit);
      int64_t months = std::min<int64_t>(tcfg.months_per_sample, view.T);
      if (months < view.T) view = subsample_months(view, months, rng);
      int64_t crop = std::min<int64_t>({tcfg.crop, view.H, view.W});
      int64_t div = int64_t(1) << (mcfg.levels - 1);
      crop = crop / div * div;
      if (crop < div)
        throw ConfigError("train: crop too small for " + std::to_string(mcfg.levels) + " levels");
      view = augment(view, crop, rng);

      Tensor<float> x({view.T, view.C, view.H, view.W}, view.images);
      auto res = forward(mcfg, bound, x, view.days);
      auto target = loss_target(res.logits, view);
      auto loss = focal_loss(res.logits, target, static_cast<float>(tcfg.focal_gamma));
      batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
    }
    batch_loss = scale(batch_loss, 1.0f / static_cast<float>(tcfg.batch_size));
    last_loss = batch_loss.item();
    if (!std::isfinite(last_loss)) {
      result.aborted_nan = true;
      TrainLogEntry entry;
      entry.iter = iter;
      entry.loss = last_loss;
      entry.lr = lr;
      result.log.push_back(entry);
      break;
    }
    tape.backward(batch_loss);
    opt.step(params, bound, tape, lr);

    bool last_iter = iter + 1 == tcfg.max_iters;
    if ((tcfg.val_every > 0 && (iter + 1) % tcfg.val_every == 0) || last_iter)
      validate_now(iter + 1, last_loss, lr);
  }
  if (result.log.empty()) validate_now(tcfg.max_iters, last_loss, lr_schedule(tcfg.max_iters, tcfg));
  if (result.best_iter < 0) {
    result.best_params = params;
    result.best_iter = tcfg.max_iters;
  }
  return result;
}

}  // namespace scd
