#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "reference_metrics.hpp"
#include "scd/common.hpp"
#include "scd/metrics.hpp"

using namespace scd;

namespace {

LabelSeries make_series(int64_t T, int64_t H, int64_t W, int K, std::vector<uint8_t> labels,
                        std::vector<uint8_t> ignore = {}) {
  LabelSeries s;
  s.T = T;
  s.H = H;
  s.W = W;
  s.K = K;
  s.labels = std::move(labels);
  if (ignore.empty()) ignore.assign(static_cast<size_t>(T * H * W), 0);
  s.ignore = std::move(ignore);
  return s;
}

LabelSeries random_series(Rng& rng, int64_t T, int64_t H, int64_t W, int K,
                          double ignore_prob) {
  std::vector<uint8_t> labels(static_cast<size_t>(T * H * W));
  std::vector<uint8_t> ignore(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<uint8_t>(rng.uniform_int(0, K - 1));
    ignore[i] = rng.uniform() < ignore_prob ? 1 : 0;
  }
  return make_series(T, H, W, K, std::move(labels), std::move(ignore));
}

// Scores the engine and the reference and requires exact agreement, including
// on which scores are defined.
void check_against_reference(const LabelSeries& pred, const LabelSeries& gt) {
  auto ref = reference::score(pred, gt);
  MetricsAccumulator acc(gt.K);
  acc.add(pred, gt);
  if (!ref.miou.has_value()) {
    CHECK_THROWS_AS(acc.finalize(), InputError);
    return;
  }
  MetricsReport rep = acc.finalize();
  CHECK(rep.miou == *ref.miou);
  CHECK(rep.bc == ref.bc);
  CHECK(rep.sc.has_value() == ref.sc.has_value());
  if (rep.sc) {
    CHECK(*rep.sc == *ref.sc);
    CHECK(*rep.scs == *ref.scs);
    CHECK(*rep.scs == (*rep.sc + rep.bc) / 2.0);
  }
}

}  // namespace

TEST_CASE("derive_change") {
  SUBCASE("constant series has no change") {
    auto s = make_series(3, 2, 2, 2, std::vector<uint8_t>(12, 1));
    auto c = derive_change(s);
    for (auto v : c.change) CHECK(v == 0);
    for (auto v : c.valid) CHECK(v == 1);
  }
  SUBCASE("single flip produces exactly one change") {
    std::vector<uint8_t> labels(12, 0);  // T=12, 1x1
    for (int t = 5; t < 12; ++t) labels[static_cast<size_t>(t)] = 1;
    auto s = make_series(12, 1, 1, 2, labels);
    auto c = derive_change(s);
    int n = 0;
    for (int t = 0; t < 11; ++t) n += c.change[static_cast<size_t>(t)];
    CHECK(n == 1);
    CHECK(c.change[4] == 1);  // pair (4,5)
  }
  SUBCASE("ignore at date t masks both adjacent pairs") {
    std::vector<uint8_t> labels = {0, 1, 0};  // T=3, 1x1: changes at both pairs
    std::vector<uint8_t> ignore = {0, 1, 0};  // middle date ignored
    auto s = make_series(3, 1, 1, 2, labels, ignore);
    auto c = derive_change(s);
    CHECK(c.valid[0] == 0);
    CHECK(c.valid[1] == 0);
    CHECK(c.change[0] == 0);
    CHECK(c.change[1] == 0);
  }
  SUBCASE("one date is rejected") {
    auto s = make_series(1, 2, 2, 2, std::vector<uint8_t>(4, 0));
    CHECK_THROWS_AS(derive_change(s), InputError);
  }
}

TEST_CASE("miou") {
  SUBCASE("perfect prediction") {
    Rng rng(5);
    auto gt = random_series(rng, 2, 4, 4, 3, 0.0);
    auto s = miou_score(gt, gt);
    CHECK(s.miou == doctest::Approx(1.0));
  }
  SUBCASE("hand confusion 2x2 grid") {
    auto gt = make_series(1, 2, 2, 2, {0, 0, 1, 1});
    auto pred = make_series(1, 2, 2, 2, {0, 1, 1, 1});
    auto s = miou_score(pred, gt);
    CHECK(s.per_class[0] == doctest::Approx(0.5));
    CHECK(s.per_class[1] == doctest::Approx(2.0 / 3.0));
    CHECK(s.miou == doctest::Approx(7.0 / 12.0));
  }
  SUBCASE("all pixels ignored is an error") {
    auto gt = make_series(1, 2, 2, 2, {0, 0, 1, 1}, {1, 1, 1, 1});
    auto pred = make_series(1, 2, 2, 2, {0, 1, 1, 1}, {1, 1, 1, 1});
    CHECK_THROWS_WITH_AS(miou_score(pred, gt), doctest::Contains("no valid pixels"), InputError);
  }
  SUBCASE("shape mismatch") {
    auto gt = make_series(1, 2, 2, 2, {0, 0, 1, 1});
    auto pred = make_series(1, 2, 1, 2, {0, 1});
    CHECK_THROWS_AS(miou_score(pred, gt), DimensionError);
  }
}

TEST_CASE("bc_score") {
  SUBCASE("perfect with at least one change") {
    auto gt = make_series(2, 2, 2, 2, {0, 0, 0, 0, 1, 0, 0, 0});
    auto c = derive_change(gt);
    CHECK(bc_score(c, c) == doctest::Approx(1.0));
  }
  SUBCASE("TP=1 FP=1 FN=1 gives one third") {
    // gt changes at pixels 0 and 1; pred detects pixel 0 plus a false alarm at 2
    auto gt = make_series(2, 1, 4, 3, {0, 0, 0, 0, 1, 1, 0, 0});
    auto pred = make_series(2, 1, 4, 3, {0, 0, 0, 0, 1, 0, 2, 0});
    CHECK(bc_score(derive_change(pred), derive_change(gt)) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("vacuous case is 1.0") {
    auto a = make_series(2, 2, 2, 2, std::vector<uint8_t>(8, 0));
    CHECK(bc_score(derive_change(a), derive_change(a)) == 1.0);
  }
}

TEST_CASE("sc_score") {
  SUBCASE("perfect prediction") {
    Rng rng(7);
    LabelSeries gt = random_series(rng, 3, 4, 4, 3, 0.0);
    CHECK(sc_score(gt, gt) == doctest::Approx(1.0));
  }
  SUBCASE("flip detected but wrong class scores zero") {
    // K=3; gt flips one pixel 0->1, pred flips it 0->2.
    auto gt = make_series(2, 1, 1, 3, {0, 1});
    auto pred = make_series(2, 1, 1, 3, {0, 2});
    CHECK(sc_score(pred, gt) == doctest::Approx(0.0));
  }
  SUBCASE("errors outside the change set do not matter") {
    Rng rng(9);
    int64_t H = 16, W = 16;
    // gt: ~5% of pixels flip class at t=1.
    std::vector<uint8_t> l0(static_cast<size_t>(H * W)), l1;
    for (auto& v : l0) v = static_cast<uint8_t>(rng.uniform_int(0, 2));
    l1 = l0;
    for (int64_t p = 0; p < H * W; ++p)
      if (rng.uniform() < 0.05)
        l1[static_cast<size_t>(p)] = static_cast<uint8_t>((l1[static_cast<size_t>(p)] + 1) % 3);
    std::vector<uint8_t> gt_labels = l0;
    gt_labels.insert(gt_labels.end(), l1.begin(), l1.end());
    auto gt = make_series(2, H, W, 3, gt_labels);
    // pred equals gt on the change set but is corrupted elsewhere at t=1.
    std::vector<uint8_t> p1 = l1;
    for (int64_t p = 0; p < H * W; ++p) {
      size_t i = static_cast<size_t>(p);
      if (l0[i] == l1[i] && rng.uniform() < 0.3)
        p1[i] = static_cast<uint8_t>((p1[i] + 1) % 3);
    }
    std::vector<uint8_t> pred_labels = l0;
    pred_labels.insert(pred_labels.end(), p1.begin(), p1.end());
    auto pred = make_series(2, H, W, 3, pred_labels);
    CHECK(sc_score(pred, gt) == doctest::Approx(1.0));
  }
  SUBCASE("no change support is an error") {
    auto gt = make_series(2, 2, 2, 2, std::vector<uint8_t>(8, 0));
    CHECK_THROWS_WITH_AS(sc_score(gt, gt), doctest::Contains("no change support"), InputError);
  }
}

TEST_CASE("scs arithmetic on published pairs") {
  CHECK(scs(0.410, 0.224) == doctest::Approx(0.317).epsilon(1e-12));
  CHECK(scs(0.257, 0.017) == doctest::Approx(0.137).epsilon(1e-12));
  CHECK(scs(0.42, 0.42) == doctest::Approx(0.42));
}

TEST_CASE("evaluate") {
  SUBCASE("perfect logits give all ones") {
    Rng rng(13);
    auto gt = random_series(rng, 3, 6, 6, 3, 0.0);
    std::vector<float> logits(static_cast<size_t>(3 * 3 * 36), 0.0f);
    int64_t plane = 36;
    for (int64_t t = 0; t < 3; ++t)
      for (int64_t p = 0; p < plane; ++p)
        logits[static_cast<size_t>(
            (t * 3 + gt.labels[static_cast<size_t>(t * plane + p)]) * plane + p)] = 10.0f;
    auto rep = evaluate(logits.data(), 3, 3, 6, 6, gt);
    CHECK(rep.miou == doctest::Approx(1.0));
    CHECK(rep.bc == doctest::Approx(1.0));
    REQUIRE(rep.sc.has_value());
    CHECK(*rep.sc == doctest::Approx(1.0));
    CHECK(*rep.scs == (*rep.sc + rep.bc) / 2.0);  // bit-exact by construction
  }
  SUBCASE("argmax ties break toward the lowest class") {
    auto gt = make_series(1, 1, 1, 3, {2});
    std::vector<float> logits = {1.0f, 1.0f, 1.0f};
    auto pred = logits_to_labels(logits.data(), 1, 3, 1, 1, gt.ignore);
    CHECK(pred.labels[0] == 0);
  }
  SUBCASE("random labels near Monte-Carlo expectation on balanced 6-class data") {
    // measured mIoU of uniform random predictions vs an independent
    // Monte-Carlo estimate of the same quantity
    int K = 6;
    int64_t T = 4, H = 48, W = 48;
    Rng rng(17);
    std::vector<uint8_t> gt_labels(static_cast<size_t>(T * H * W));
    for (size_t i = 0; i < gt_labels.size(); ++i)
      gt_labels[i] = static_cast<uint8_t>(i % static_cast<size_t>(K));  // balanced
    auto gt = make_series(T, H, W, K, gt_labels);
    auto pred = random_series(rng, T, H, W, K, 0.0);
    double measured = miou_score(pred, gt).miou;

    // Monte-Carlo oracle with a different stream
    Rng mc(9999);
    double sum = 0.0;
    int reps = 20;
    for (int r = 0; r < reps; ++r) {
      auto sim = random_series(mc, T, H, W, K, 0.0);
      sum += miou_score(sim, gt).miou;
    }
    double expect = sum / reps;
    CHECK(std::abs(measured - expect) < 0.005);  // within 0.5 points
    // sanity: balanced uniform random lands near 1/(2K-1)
    CHECK(std::abs(expect - 1.0 / (2.0 * K - 1.0)) < 0.01);
  }
}

TEST_CASE("invariance properties") {
  Rng rng(21);
  SUBCASE("consistent class permutation leaves all scores unchanged") {
    for (int trial = 0; trial < 20; ++trial) {
      int K = 3;
      auto gt = random_series(rng, 3, 4, 4, K, 0.1);
      auto pred = random_series(rng, 3, 4, 4, K, 0.0);
      pred.ignore = gt.ignore;
      std::vector<uint8_t> perm = {2, 0, 1};
      auto apply = [&](LabelSeries s) {
        for (auto& v : s.labels) v = perm[v];
        return s;
      };
      MetricsAccumulator a(K), b(K);
      a.add(pred, gt);
      b.add(apply(pred), apply(gt));
      auto ra = a.finalize(), rb = b.finalize();
      CHECK(ra.miou == doctest::Approx(rb.miou).epsilon(1e-12));
      CHECK(ra.bc == doctest::Approx(rb.bc).epsilon(1e-12));
      CHECK(ra.sc.has_value() == rb.sc.has_value());
      if (ra.sc) CHECK(*ra.sc == doctest::Approx(*rb.sc).epsilon(1e-12));
    }
  }
  SUBCASE("BC invariant to relabelings preserving equality structure") {
    for (int trial = 0; trial < 20; ++trial) {
      auto gt = random_series(rng, 3, 3, 3, 2, 0.0);
      auto pred = random_series(rng, 3, 3, 3, 2, 0.0);
      // date-independent permutation preserves equality between dates
      auto flip = [](LabelSeries s) {
        for (auto& v : s.labels) v = static_cast<uint8_t>(1 - v);
        return s;
      };
      double b1 = bc_score(derive_change(pred), derive_change(gt));
      double b2 = bc_score(derive_change(flip(pred)), derive_change(flip(gt)));
      CHECK(b1 == doctest::Approx(b2).epsilon(1e-12));
    }
  }
  SUBCASE("BC monotonicity: fixing a miss never hurts, adding a false alarm never helps") {
    // gt: two changed pixels; pred starts detecting none.
    auto gt = make_series(2, 1, 4, 2, {0, 0, 0, 0, 1, 1, 0, 0});
    auto base = make_series(2, 1, 4, 2, {0, 0, 0, 0, 0, 0, 0, 0});
    auto gtc = derive_change(gt);
    double b0 = bc_score(derive_change(base), gtc);
    auto fixed = base;
    fixed.labels[4] = 1;  // turn one FN into TP
    double b1 = bc_score(derive_change(fixed), gtc);
    CHECK(b1 >= b0);
    auto noisy = fixed;
    noisy.labels[7] = 1;  // add one FP
    double b2 = bc_score(derive_change(noisy), gtc);
    CHECK(b2 <= b1);
  }
  SUBCASE("flipping values at ignored pixels never changes any score") {
    for (int trial = 0; trial < 20; ++trial) {
      auto gt = random_series(rng, 3, 4, 4, 3, 0.25);
      auto pred = random_series(rng, 3, 4, 4, 3, 0.0);
      pred.ignore = gt.ignore;
      MetricsAccumulator a(3);
      a.add(pred, gt);
      auto corrupt = [&](LabelSeries s) {
        for (size_t i = 0; i < s.labels.size(); ++i)
          if (gt.ignore[i]) s.labels[i] = static_cast<uint8_t>((s.labels[i] + 1) % 3);
        return s;
      };
      MetricsAccumulator b(3);
      b.add(corrupt(pred), corrupt(gt));
      bool a_ok = true, b_ok = true;
      MetricsReport ra, rb;
      try {
        ra = a.finalize();
      } catch (const InputError&) {
        a_ok = false;
      }
      try {
        rb = b.finalize();
      } catch (const InputError&) {
        b_ok = false;
      }
      CHECK(a_ok == b_ok);
      if (a_ok && b_ok) {
        CHECK(ra.miou == rb.miou);
        CHECK(ra.bc == rb.bc);
        CHECK(ra.sc.has_value() == rb.sc.has_value());
        if (ra.sc) CHECK(*ra.sc == *rb.sc);
      }
    }
  }
}

TEST_CASE("exhaustive small enumeration matches brute-force reference") {
  struct Case {
    int64_t T, H, W;
    int K;
  };
  // Shapes small enough to enumerate every (gt, pred, ignore) assignment.
  std::vector<Case> cases = {{2, 1, 1, 2}, {2, 1, 1, 3}, {3, 1, 1, 2}, {3, 1, 1, 3}, {2, 2, 1, 2}};
  for (const auto& c : cases) {
    int64_t cells = c.T * c.H * c.W;
    int64_t combos = 1;
    for (int64_t i = 0; i < cells; ++i) combos *= c.K;
    for (int64_t gi = 0; gi < combos; ++gi) {
      std::vector<uint8_t> gl(static_cast<size_t>(cells));
      int64_t g = gi;
      for (int64_t i = 0; i < cells; ++i) {
        gl[static_cast<size_t>(i)] = static_cast<uint8_t>(g % c.K);
        g /= c.K;
      }
      for (int64_t pi = 0; pi < combos; ++pi) {
        std::vector<uint8_t> pl(static_cast<size_t>(cells));
        int64_t p = pi;
        for (int64_t i = 0; i < cells; ++i) {
          pl[static_cast<size_t>(i)] = static_cast<uint8_t>(p % c.K);
          p /= c.K;
        }
        for (int64_t mask = 0; mask < (1 << cells); ++mask) {
          std::vector<uint8_t> ig(static_cast<size_t>(cells));
          for (int64_t i = 0; i < cells; ++i) ig[static_cast<size_t>(i)] = (mask >> i) & 1;
          auto gt = make_series(c.T, c.H, c.W, c.K, gl, ig);
          auto pred = make_series(c.T, c.H, c.W, c.K, pl, ig);
          check_against_reference(pred, gt);
        }
      }
    }
  }
}

TEST_CASE("1000 random instances match brute-force reference exactly") {
  Rng rng(33);
  for (int trial = 0; trial < 1000; ++trial) {
    int64_t T = rng.uniform_int(2, 5);
    int64_t H = rng.uniform_int(1, 6);
    int64_t W = rng.uniform_int(1, 6);
    int K = static_cast<int>(rng.uniform_int(2, 4));
    auto gt = random_series(rng, T, H, W, K, 0.15);
    auto pred = random_series(rng, T, H, W, K, 0.0);
    pred.ignore = gt.ignore;
    check_against_reference(pred, gt);
  }
}

TEST_CASE("accumulator merge equals single accumulation") {
  Rng rng(41);
  auto gt1 = random_series(rng, 3, 5, 5, 3, 0.1);
  auto pr1 = random_series(rng, 3, 5, 5, 3, 0.0);
  pr1.ignore = gt1.ignore;
  auto gt2 = random_series(rng, 3, 5, 5, 3, 0.1);
  auto pr2 = random_series(rng, 3, 5, 5, 3, 0.0);
  pr2.ignore = gt2.ignore;
  MetricsAccumulator whole(3), part1(3), part2(3);
  whole.add(pr1, gt1);
  whole.add(pr2, gt2);
  part1.add(pr1, gt1);
  part2.add(pr2, gt2);
  part1.merge(part2);
  auto ra = whole.finalize(), rb = part1.finalize();
  CHECK(ra.miou == rb.miou);
  CHECK(ra.bc == rb.bc);
  CHECK(ra.sc.has_value() == rb.sc.has_value());
  if (ra.sc) CHECK(*ra.sc == *rb.sc);
}

TEST_CASE("per-tile BC aggregation") {
  // tile 1 has no change anywhere (vacuous 1.0), tile 2 is scored normally
  auto gt1 = make_series(2, 1, 2, 2, {0, 0, 0, 0});
  auto pr1 = gt1;
  auto gt2 = make_series(2, 1, 2, 2, {0, 0, 1, 0});
  auto pr2 = make_series(2, 1, 2, 2, {0, 0, 0, 0});  // misses the change
  MetricsAccumulator per_tile(2, BcAggregation::kPerTile);
  per_tile.add(pr1, gt1);
  per_tile.add(pr2, gt2);
  CHECK(per_tile.finalize().bc == doctest::Approx(0.5));  // (1.0 + 0.0) / 2
  MetricsAccumulator global(2, BcAggregation::kGlobal);
  global.add(pr1, gt1);
  global.add(pr2, gt2);
  CHECK(global.finalize().bc == doctest::Approx(0.0));
}

TEST_CASE("report serialization") {
  auto gt = make_series(2, 1, 2, 2, {0, 0, 1, 0});
  auto pred = gt;
  MetricsAccumulator acc(2);
  acc.add(pred, gt);
  auto rep = acc.finalize();
  auto js = rep.to_json();
  CHECK(js.find("\"miou\"") != std::string::npos);
  CHECK(js.find("\"per_class_iou\"") != std::string::npos);
  CHECK(js.find("\"pixel_counts\"") != std::string::npos);
  CHECK(MetricsReport::csv_header() == "SCS,SC,BC,mIoU");
  CHECK(rep.csv_row() == "100.0,100.0,100.0,100.0");
}
