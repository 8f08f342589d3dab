#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "scd/infer.hpp"

using namespace scd;

namespace {

ModelConfig small_config(Variant variant = Variant::kOurs) {
  ModelConfig cfg;
  cfg.levels = 3;
  cfg.feature_dim = 16;
  cfg.qk_dim = 2;
  cfg.heads = 2;
  cfg.num_classes = 4;
  cfg.in_channels = 4;
  cfg.t_max = 24;
  cfg.variant = variant;
  cfg.channels_per_level = {4, 8, 16};
  cfg.norm_groups = 2;
  cfg.validate();
  return cfg;
}

std::vector<SitsSample> tiny_dataset(int64_t hw = 16, int64_t T = 4, uint64_t seed = 3) {
  SyntheticWorldConfig dcfg;
  dcfg.n_aoi = 2;
  dcfg.H = dcfg.W = hw;
  dcfg.T = T;
  dcfg.K = 4;
  dcfg.channels = 4;
  dcfg.seed = seed;
  dcfg.change_rate = 0.02;
  return synth_generate(dcfg);
}

}  // namespace

TEST_CASE("make_scheme") {
  SUBCASE("full sequence is a single group") {
    auto s = make_scheme(24, 24, "contiguous");
    CHECK(s.num_groups() == 1);
    for (int a : s.assignment) CHECK(a == 0);
  }
  SUBCASE("contiguous length 6 gives four consecutive blocks") {
    auto s = make_scheme(24, 6, "contiguous");
    CHECK(s.num_groups() == 4);
    for (int64_t t = 0; t < 24; ++t) CHECK(s.assignment[static_cast<size_t>(t)] == t / 6);
  }
  SUBCASE("strided length 6 assigns t mod 4") {
    auto s = make_scheme(24, 6, "strided");
    CHECK(s.num_groups() == 4);
    for (int64_t t = 0; t < 24; ++t) CHECK(s.assignment[static_cast<size_t>(t)] == t % 4);
  }
  SUBCASE("partition invariant for every generated scheme") {
    for (auto kind : {"contiguous", "strided"})
      for (int64_t len : {1, 2, 3, 4, 6, 12, 24}) {
        auto s = make_scheme(24, len, kind);
        CHECK_NOTHROW(s.check_partition());
        std::vector<int64_t> counts(static_cast<size_t>(s.num_groups()), 0);
        for (int a : s.assignment) ++counts[static_cast<size_t>(a)];
        for (auto c : counts) CHECK(c == len);
      }
  }
  SUBCASE("non-divisible structured schemes rejected") {
    CHECK_THROWS_AS(make_scheme(24, 5, "contiguous"), ConfigError);
    CHECK_THROWS_AS(make_scheme(24, 7, "strided"), ConfigError);
    CHECK_THROWS_AS(make_scheme(24, 6, "diagonal"), ConfigError);
  }
  SUBCASE("custom assignment validated") {
    CHECK_NOTHROW(custom_scheme({0, 1, 0, 1}));
    CHECK_THROWS_AS(custom_scheme({0, 2, 0, 2}), InputError);  // group 1 empty
    CHECK_THROWS_AS(custom_scheme({0, -1}), InputError);
  }
  SUBCASE("json round trip") {
    auto s = make_scheme(12, 4, "strided");
    auto back = scheme_from_json(scheme_to_json(s));
    CHECK(back.assignment == s.assignment);
    CHECK(back.kind == s.kind);
  }
}

TEST_CASE("infer_logits") {
  auto cfg = small_config();
  Rng rng(5);
  auto params = init_model_params(cfg, rng);
  auto dataset = tiny_dataset();
  const auto& sample = dataset[0];

  SUBCASE("single-group scheme reproduces the direct forward bit-exactly") {
    auto scheme = make_scheme(sample.T, sample.T, "contiguous");
    auto logits = infer_logits(cfg, params, sample, scheme);
    Tensor<float> x({sample.T, sample.C, sample.H, sample.W}, sample.images);
    auto direct = forward(cfg, params, x, sample.days);
    REQUIRE(static_cast<int64_t>(logits.size()) == direct.logits.size());
    for (size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == direct.logits.data()[i]);
  }
  SUBCASE("the partition alone determines the output, not group ids") {
    auto s1 = custom_scheme({0, 1, 0, 1});
    auto s2 = custom_scheme({1, 0, 1, 0});
    auto a = infer_logits(cfg, params, sample, s1);
    auto b = infer_logits(cfg, params, sample, s2);
    CHECK(a == b);
  }
  SUBCASE("every date slot is written exactly once") {
    // a group scheme whose outputs are distinguishable per group
    auto scheme = make_scheme(sample.T, 2, "contiguous");
    auto logits = infer_logits(cfg, params, sample, scheme);
    for (float v : logits) CHECK(std::isfinite(v));
    // mismatch between scheme length and sample dates is an error
    auto bad = make_scheme(sample.T - 1, 1, "contiguous");
    CHECK_THROWS_AS(infer_logits(cfg, params, sample, bad), InputError);
  }
  SUBCASE("collapsing variants broadcast the group map to the whole group") {
    auto lcfg = small_config(Variant::kLtae);
    Rng r(7);
    auto lparams = init_model_params(lcfg, r);
    auto scheme = make_scheme(sample.T, 2, "contiguous");
    auto logits = infer_logits(lcfg, lparams, sample, scheme);
    int64_t plane = sample.H * sample.W;
    int64_t date_sz = lcfg.num_classes * plane;
    for (int64_t i = 0; i < date_sz; ++i) {
      CHECK(logits[static_cast<size_t>(i)] == logits[static_cast<size_t>(date_sz + i)]);
      CHECK(logits[static_cast<size_t>(2 * date_sz + i)] ==
            logits[static_cast<size_t>(3 * date_sz + i)]);
    }
  }
}

TEST_CASE("spatial tiling") {
  auto cfg = small_config();
  Rng rng(9);
  auto params = init_model_params(cfg, rng);
  SUBCASE("tile covering the full image equals the untiled path") {
    auto dataset = tiny_dataset(16);
    auto scheme = make_scheme(dataset[0].T, dataset[0].T, "contiguous");
    InferOptions big;
    big.max_tile = 512;
    InferOptions exact;
    exact.max_tile = 16;
    auto a = infer_logits(cfg, params, dataset[0], scheme, big);
    auto b = infer_logits(cfg, params, dataset[0], scheme, exact);
    CHECK(a == b);
  }
  SUBCASE("small windows and reflective borders still cover everything") {
    auto dataset = tiny_dataset(24);  // not a multiple of the 8-px window grid
    auto scheme = make_scheme(dataset[0].T, dataset[0].T, "contiguous");
    InferOptions opts;
    opts.max_tile = 16;
    auto logits = infer_logits(cfg, params, dataset[0], scheme, opts);
    CHECK(static_cast<int64_t>(logits.size()) ==
          dataset[0].T * cfg.num_classes * dataset[0].H * dataset[0].W);
    for (float v : logits) CHECK(std::isfinite(v));
  }
}

TEST_CASE("predict_change") {
  SUBCASE("constant logits over time mean no change") {
    int64_t T = 3, H = 2, W = 2;
    int K = 3;
    std::vector<float> logits(static_cast<size_t>(T * K * H * W), 0.0f);
    for (int64_t t = 0; t < T; ++t)
      for (int64_t p = 0; p < H * W; ++p)
        logits[static_cast<size_t>((t * K + 1) * H * W + p)] = 5.0f;
    std::vector<uint8_t> ignore(static_cast<size_t>(T * H * W), 0);
    auto c = predict_change(logits, T, K, H, W, ignore);
    for (auto v : c.change) CHECK(v == 0);
  }
  SUBCASE("one flipped argmax produces one change pixel") {
    int64_t T = 2, H = 2, W = 2;
    int K = 2;
    std::vector<float> logits(static_cast<size_t>(T * K * H * W), 0.0f);
    logits[static_cast<size_t>((1 * K + 1) * H * W + 3)] = 5.0f;  // date 1, class 1, pixel 3
    std::vector<uint8_t> ignore(static_cast<size_t>(T * H * W), 0);
    auto c = predict_change(logits, T, K, H, W, ignore);
    int64_t n = 0;
    for (auto v : c.change) n += v;
    CHECK(n == 1);
    CHECK(c.change[3] == 1);
  }
  SUBCASE("equals derive_change of the argmax labels") {
    Rng rng(13);
    int64_t T = 3, H = 3, W = 3;
    int K = 4;
    std::vector<float> logits(static_cast<size_t>(T * K * H * W));
    for (auto& v : logits) v = static_cast<float>(rng.uniform(-1, 1));
    std::vector<uint8_t> ignore(static_cast<size_t>(T * H * W), 0);
    for (auto& v : ignore) v = rng.uniform() < 0.2 ? 1 : 0;
    auto a = predict_change(logits, T, K, H, W, ignore);
    auto labels = logits_to_labels(logits.data(), T, K, H, W, ignore);
    auto b = derive_change(labels);
    CHECK(a.change == b.change);
    CHECK(a.valid == b.valid);
  }
}

TEST_CASE("evaluate_units matches manual accumulation") {
  auto cfg = small_config();
  Rng rng(15);
  auto params = init_model_params(cfg, rng);
  auto dataset = tiny_dataset();
  std::vector<FoldUnit> units = {{dataset[0].aoi_id, 1, std::nullopt},
                                 {dataset[1].aoi_id, 3, std::nullopt}};
  auto rep = evaluate_units(cfg, params, dataset, units).finalize();

  MetricsAccumulator manual(cfg.num_classes);
  for (const auto& u : units) {
    auto view = extract_unit(find_sample(dataset, u.aoi_id), u);
    auto scheme = default_scheme(cfg, view.T);
    auto logits = infer_logits(cfg, params, view, scheme);
    auto pred = logits_to_labels(logits.data(), view.T, cfg.num_classes, view.H, view.W,
                                 view.labels.ignore);
    manual.add(pred, view.labels);
  }
  auto ref = manual.finalize();
  CHECK(rep.miou == ref.miou);
  CHECK(rep.bc == ref.bc);
  CHECK(rep.sc.has_value() == ref.sc.has_value());
}
