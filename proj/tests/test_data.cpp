#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "scd/data.hpp"

using namespace scd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("scd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Independent scanline check for a single convex axis-aligned rectangle.
bool center_inside_rect(double x, double y, double x0, double y0, double x1, double y1) {
  return x >= x0 && x < x1 && y >= y0 && y < y1;
}

}  // namespace

TEST_CASE("raster round trip") {
  auto dir = temp_dir("raster");
  SUBCASE("f32 bit-exact") {
    Rng rng(3);
    Raster r;
    r.dtype = 0;
    r.dims = {2, 3, 4};
    for (int i = 0; i < 24; ++i) r.f32.push_back(static_cast<float>(rng.uniform(-5, 5)));
    save_raster(dir / "a.sits", r);
    Raster b = load_raster(dir / "a.sits");
    CHECK(b.dtype == 0);
    CHECK(b.dims == r.dims);
    for (int i = 0; i < 24; ++i) CHECK(b.f32[static_cast<size_t>(i)] == r.f32[static_cast<size_t>(i)]);
  }
  SUBCASE("u8 labels keep class indices") {
    Raster r;
    r.dtype = 1;
    r.dims = {2, 2};
    r.u8 = {0, 1, 5, 255};
    save_raster(dir / "b.sits", r);
    Raster b = load_raster(dir / "b.sits");
    CHECK(b.u8 == r.u8);
  }
  SUBCASE("truncated payload reports byte offset") {
    Raster r;
    r.dtype = 0;
    r.dims = {4};
    r.f32 = {1, 2, 3, 4};
    save_raster(dir / "c.sits", r);
    auto size = fs::file_size(dir / "c.sits");
    fs::resize_file(dir / "c.sits", size - 6);
    CHECK_THROWS_WITH_AS(load_raster(dir / "c.sits"), doctest::Contains("byte offset"),
                         FormatError);
  }
  SUBCASE("bad magic") {
    std::ofstream f(dir / "d.sits", std::ios::binary);
    f << "NOPEnope";
    f.close();
    CHECK_THROWS_AS(load_raster(dir / "d.sits"), FormatError);
  }
}

TEST_CASE("rasterize_polygons") {
  SUBCASE("axis-aligned square covering centers (0.5..3.5)^2") {
    Polygon p;
    p.rings = {{{0.5, 0.5}, {3.5, 0.5}, {3.5, 3.5}, {0.5, 3.5}}};
    auto mask = rasterize_polygons({p}, 8, 8);
    // independent pixel-center oracle
    int64_t count = 0;
    for (int64_t y = 0; y < 8; ++y)
      for (int64_t x = 0; x < 8; ++x) {
        bool expect = center_inside_rect(x + 0.5, y + 0.5, 0.5, 0.5, 3.5, 3.5);
        CHECK(static_cast<bool>(mask[static_cast<size_t>(y * 8 + x)]) == expect);
        count += mask[static_cast<size_t>(y * 8 + x)];
      }
    CHECK(count == 9);  // 3x3 block
  }
  SUBCASE("empty polygon list") {
    auto mask = rasterize_polygons({}, 4, 4);
    for (auto v : mask) CHECK(v == 0);
  }
  SUBCASE("nested rings produce an annulus") {
    Polygon p;
    p.rings = {{{0.0, 0.0}, {10.0, 0.0}, {10.0, 10.0}, {0.0, 10.0}},
               {{3.0, 3.0}, {7.0, 3.0}, {7.0, 7.0}, {3.0, 7.0}}};
    auto mask = rasterize_polygons({p}, 10, 10);
    CHECK(mask[static_cast<size_t>(1 * 10 + 1)] == 1);   // outer band
    CHECK(mask[static_cast<size_t>(5 * 10 + 5)] == 0);   // hole
    CHECK(mask[static_cast<size_t>(2 * 10 + 5)] == 1);   // band above the hole
    // even-odd parity oracle over every pixel center
    for (int64_t y = 0; y < 10; ++y)
      for (int64_t x = 0; x < 10; ++x) {
        double cx = x + 0.5, cy = y + 0.5;
        bool outer = center_inside_rect(cx, cy, 0, 0, 10, 10);
        bool inner = center_inside_rect(cx, cy, 3, 3, 7, 7);
        CHECK(static_cast<bool>(mask[static_cast<size_t>(y * 10 + x)]) == (outer != inner));
      }
  }
  SUBCASE("geometry outside the canvas is clipped") {
    Polygon p;
    p.rings = {{{-5.0, -5.0}, {2.5, -5.0}, {2.5, 2.5}, {-5.0, 2.5}}};
    auto mask = rasterize_polygons({p}, 4, 4);
    CHECK(mask[0] == 1);
    CHECK(mask[static_cast<size_t>(3 * 4 + 3)] == 0);
  }
  SUBCASE("degenerate ring rejected") {
    Polygon p;
    p.rings = {{{0.0, 0.0}, {1.0, 1.0}}};
    CHECK_THROWS_AS(rasterize_polygons({p}, 4, 4), InputError);
  }
  SUBCASE("json parsing") {
    auto polys = polygons_from_json("[[[[0.5,0.5],[3.5,0.5],[3.5,3.5],[0.5,3.5]]]]");
    REQUIRE(polys.size() == 1);
    REQUIRE(polys[0].rings.size() == 1);
    CHECK(polys[0].rings[0].size() == 4);
  }
}

TEST_CASE("plan_no_shift") {
  auto plan = plan_no_shift({"a", "b"});
  REQUIRE(plan.folds.size() == 4);
  SUBCASE("fold I: train 1-2, val 3, test 4") {
    std::set<int> train_q, val_q, test_q;
    for (const auto& u : plan.folds[0].train) train_q.insert(*u.quarter);
    for (const auto& u : plan.folds[0].val) val_q.insert(*u.quarter);
    for (const auto& u : plan.folds[0].test) test_q.insert(*u.quarter);
    CHECK(train_q == std::set<int>{1, 2});
    CHECK(val_q == std::set<int>{3});
    CHECK(test_q == std::set<int>{4});
  }
  SUBCASE("every quarter is tested exactly once across folds") {
    std::multiset<int> tested;
    for (const auto& f : plan.folds)
      for (const auto& u : f.test)
        if (u.aoi_id == "a") tested.insert(*u.quarter);
    CHECK(tested == std::multiset<int>{1, 2, 3, 4});
  }
  SUBCASE("all folds share all AoIs") {
    for (const auto& f : plan.folds) {
      std::set<std::string> ids;
      for (const auto& u : f.train) ids.insert(u.aoi_id);
      for (const auto& u : f.val) ids.insert(u.aoi_id);
      for (const auto& u : f.test) ids.insert(u.aoi_id);
      CHECK(ids == std::set<std::string>{"a", "b"});
    }
  }
  SUBCASE("invariants hold") { CHECK_NOTHROW(plan.check_invariants()); }
}

TEST_CASE("plan_temporal") {
  int last_day = month_start_day(23);
  auto plan = plan_temporal({"a", "b", "c", "d"}, 0, last_day, 365);
  REQUIRE(plan.folds.size() == 1);
  const auto& f = plan.folds[0];
  CHECK(f.train.size() == 4);
  CHECK(f.val.size() == 2);
  CHECK(f.test.size() == 2);
  SUBCASE("train and eval date ranges are disjoint") {
    for (const auto& u : f.train) CHECK(u.date_range->second <= 365);
    for (const auto& u : f.val) CHECK(u.date_range->first >= 365);
    for (const auto& u : f.test) CHECK(u.date_range->first >= 365);
  }
  SUBCASE("24 monthly dates split 12/12 at day 365") {
    // month 12 is January 2019, offset 365 (2018 is not a leap year)
    CHECK(month_start_day(12) == 365);
    int train_dates = 0, eval_dates = 0;
    for (int m = 0; m < 24; ++m)
      (month_start_day(m) < 365 ? train_dates : eval_dates)++;
    CHECK(train_dates == 12);
    CHECK(eval_dates == 12);
  }
  SUBCASE("split outside the covered range is rejected") {
    CHECK_THROWS_AS(plan_temporal({"a", "b"}, 0, 300, 365), PlanningError);
    CHECK_THROWS_AS(plan_temporal({"a", "b"}, 0, 300, 0), PlanningError);
  }
}

TEST_CASE("plan_spatial") {
  std::vector<std::string> ids;
  for (int i = 0; i < 55; ++i) ids.push_back("id" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  auto plan = plan_spatial(ids);
  REQUIRE(plan.folds.size() == 5);
  SUBCASE("fold I: train 1-3, val 4, test 5 with 11 ids each") {
    CHECK(plan.folds[0].train.size() == 33);
    CHECK(plan.folds[0].val.size() == 11);
    CHECK(plan.folds[0].test.size() == 11);
  }
  SUBCASE("every subset is tested exactly once across folds") {
    std::set<std::string> tested;
    for (const auto& f : plan.folds)
      for (const auto& u : f.test) CHECK(tested.insert(u.aoi_id).second);
    CHECK(tested.size() == 55);
  }
  SUBCASE("explicit subsets are used verbatim") {
    std::vector<std::vector<std::string>> subsets(5);
    for (int i = 0; i < 55; ++i) subsets[static_cast<size_t>(i % 5)].push_back(ids[static_cast<size_t>(i)]);
    auto p2 = plan_spatial(ids, &subsets);
    // fold 0 tests subset 5 (index 4)
    std::set<std::string> test_ids;
    for (const auto& u : p2.folds[0].test) test_ids.insert(u.aoi_id);
    CHECK(test_ids == std::set<std::string>(subsets[4].begin(), subsets[4].end()));
    // fold rotation: fold 1 tests subset 1 (index 0)
    std::set<std::string> test1;
    for (const auto& u : p2.folds[1].test) test1.insert(u.aoi_id);
    CHECK(test1 == std::set<std::string>(subsets[0].begin(), subsets[0].end()));
  }
  SUBCASE("malformed subsets rejected") {
    std::vector<std::vector<std::string>> bad(5);
    bad[0] = {"id00", "id00"};
    CHECK_THROWS_AS(plan_spatial(ids, &bad), PlanningError);
  }
  SUBCASE("plans are pure functions of inputs") {
    CHECK(plan_spatial(ids).to_json() == plan_spatial(ids).to_json());
  }
}

TEST_CASE("fold plan json round trip") {
  auto plan = plan_no_shift({"x", "y"});
  auto text = plan.to_json();
  auto back = FoldPlan::from_json(text);
  CHECK(back.setting == plan.setting);
  REQUIRE(back.folds.size() == plan.folds.size());
  CHECK(back.folds[2].train == plan.folds[2].train);
  CHECK(back.folds[2].test == plan.folds[2].test);
  CHECK(back.to_json() == text);
}

TEST_CASE("synth_generate") {
  SUBCASE("change_rate 0 keeps labels constant") {
    SyntheticWorldConfig cfg;
    cfg.n_aoi = 2;
    cfg.H = cfg.W = 32;
    cfg.T = 6;
    cfg.change_rate = 0.0;
    cfg.seed = 5;
    auto samples = synth_generate(cfg);
    REQUIRE(samples.size() == 2);
    for (const auto& s : samples) {
      auto c = derive_change(s.labels);
      for (auto v : c.change) CHECK(v == 0);
    }
  }
  SUBCASE("measured change fraction within 20 percent of target") {
    SyntheticWorldConfig cfg;
    cfg.n_aoi = 4;
    cfg.H = cfg.W = 64;
    cfg.T = 12;
    cfg.change_rate = 0.0128;
    cfg.seed = 7;
    auto samples = synth_generate(cfg);
    double f = measured_change_fraction(samples);
    CHECK(f > 0.0128 * 0.8);
    CHECK(f < 0.0128 * 1.2);
  }
  SUBCASE("same seed gives a bit-identical dataset") {
    SyntheticWorldConfig cfg;
    cfg.n_aoi = 2;
    cfg.H = cfg.W = 16;
    cfg.T = 4;
    cfg.seed = 11;
    auto a = synth_generate(cfg);
    auto b = synth_generate(cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].images == b[i].images);
      CHECK(a[i].labels.labels == b[i].labels.labels);
      CHECK(a[i].days == b[i].days);
    }
  }
  SUBCASE("labels are roughly balanced by quantile construction") {
    SyntheticWorldConfig cfg;
    cfg.n_aoi = 1;
    cfg.H = cfg.W = 64;
    cfg.T = 2;
    cfg.K = 6;
    cfg.change_rate = 0.0;
    cfg.seed = 13;
    auto samples = synth_generate(cfg);
    auto dist = class_distribution({&samples[0].labels}, 6);
    for (double d : dist) {
      CHECK(d > 0.5 / 6.0);
      CHECK(d < 2.0 / 6.0);
    }
  }
}

TEST_CASE("dataset directory round trip") {
  SyntheticWorldConfig cfg;
  cfg.n_aoi = 2;
  cfg.H = cfg.W = 16;
  cfg.T = 3;
  cfg.seed = 17;
  auto samples = synth_generate(cfg);
  auto dir = temp_dir("dataset");
  write_dataset(dir, samples, &cfg);
  SUBCASE("ids and content round trip") {
    auto ids = dataset_aoi_ids(dir);
    REQUIRE(ids.size() == 2);
    auto s = load_sample(dir, ids[0]);
    CHECK(s.images == samples[0].images);
    CHECK(s.labels.labels == samples[0].labels.labels);
    CHECK(s.days == samples[0].days);
    CHECK(s.labels.K == samples[0].labels.K);
  }
  SUBCASE("manifest hash is reproducible") {
    auto h1 = dataset_content_hash(dir);
    auto dir2 = temp_dir("dataset2");
    write_dataset(dir2, synth_generate(cfg), &cfg);
    CHECK(h1 == dataset_content_hash(dir2));
  }
}

TEST_CASE("extract_quarter and extract_date_range") {
  SyntheticWorldConfig cfg;
  cfg.n_aoi = 1;
  cfg.H = cfg.W = 16;
  cfg.T = 6;
  cfg.seed = 19;
  auto s = synth_generate(cfg)[0];
  SUBCASE("quarters tile the image") {
    auto q1 = extract_quarter(s, 1);
    auto q4 = extract_quarter(s, 4);
    CHECK(q1.H == 8);
    CHECK(q1.W == 8);
    CHECK(q1.pixel(0, 0, 0, 0) == s.pixel(0, 0, 0, 0));
    CHECK(q4.pixel(0, 0, 0, 0) == s.pixel(0, 0, 8, 8));
    CHECK(q1.quarter == 1);
  }
  SUBCASE("date range keeps matching days") {
    int lo = s.days[2], hi = s.days[4] + 1;
    auto r = extract_date_range(s, lo, hi);
    CHECK(r.T == 3);
    CHECK(r.days.front() == s.days[2]);
    CHECK(r.days.back() == s.days[4]);
    CHECK(r.pixel(0, 0, 3, 3) == s.pixel(2, 0, 3, 3));
  }
  SUBCASE("empty range is an input error") {
    CHECK_THROWS_AS(extract_date_range(s, 100000, 100001), InputError);
  }
}

TEST_CASE("augment") {
  SyntheticWorldConfig cfg;
  cfg.n_aoi = 1;
  cfg.H = cfg.W = 12;
  cfg.T = 3;
  cfg.seed = 23;
  auto s = synth_generate(cfg)[0];
  SUBCASE("identity draw equals the source sub-block") {
    AugmentParams p;  // all defaults: corner crop, no flips, no rotation
    auto a = apply_augment(s, 8, p);
    for (int64_t t = 0; t < 3; ++t)
      for (int64_t y = 0; y < 8; ++y)
        for (int64_t x = 0; x < 8; ++x) {
          CHECK(a.pixel(t, 0, y, x) == s.pixel(t, 0, y, x));
          CHECK(a.labels.label(t, y, x) == s.labels.label(t, y, x));
        }
  }
  SUBCASE("labels stay aligned with images under all dihedral transforms") {
    // encode the source coordinates in a fresh sample: image value and label
    // both identify the pixel, so alignment survives iff they move together
    SitsSample coded = s;
    coded.C = 1;
    coded.images.assign(static_cast<size_t>(coded.T * coded.H * coded.W), 0.0f);
    coded.labels.K = 255;
    for (int64_t t = 0; t < coded.T; ++t)
      for (int64_t y = 0; y < coded.H; ++y)
        for (int64_t x = 0; x < coded.W; ++x) {
          auto id = static_cast<float>((y * coded.W + x) % 251);
          coded.images[static_cast<size_t>((t * coded.H + y) * coded.W + x)] = id;
          coded.labels.labels[static_cast<size_t>((t * coded.H + y) * coded.W + x)] =
              static_cast<uint8_t>(static_cast<int>(id));
        }
    for (int rot = 0; rot < 4; ++rot)
      for (int fh = 0; fh < 2; ++fh)
        for (int fv = 0; fv < 2; ++fv) {
          AugmentParams p;
          p.y0 = 2;
          p.x0 = 1;
          p.flip_h = fh;
          p.flip_v = fv;
          p.rot = rot;
          auto a = apply_augment(coded, 8, p);
          for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x)
              CHECK(static_cast<int>(a.pixel(1, 0, y, x)) ==
                    static_cast<int>(a.labels.label(1, y, x)));
        }
  }
  SUBCASE("the crop offset is shared by all dates") {
    Rng rng(5);
    auto a = augment(s, 8, rng);
    // find the offset from date 0, then verify it on the other dates
    bool found = false;
    for (int64_t y0 = 0; y0 <= 4 && !found; ++y0)
      for (int64_t x0 = 0; x0 <= 4 && !found; ++x0) {
        AugmentParams p;
        p.y0 = y0;
        p.x0 = x0;
        for (int rot = 0; rot < 4 && !found; ++rot)
          for (int fh = 0; fh < 2 && !found; ++fh)
            for (int fv = 0; fv < 2 && !found; ++fv) {
              p.rot = rot;
              p.flip_h = fh;
              p.flip_v = fv;
              auto b = apply_augment(s, 8, p);
              if (b.images == a.images) {
                found = true;
                CHECK(b.labels.labels == a.labels.labels);
              }
            }
      }
    CHECK(found);
  }
  SUBCASE("oversized crop rejected") {
    Rng rng(5);
    CHECK_THROWS_AS(augment(s, 13, rng), InputError);
  }
}

TEST_CASE("subsample_months") {
  SyntheticWorldConfig cfg;
  cfg.n_aoi = 1;
  cfg.H = cfg.W = 8;
  cfg.T = 24;
  cfg.seed = 29;
  auto s = synth_generate(cfg)[0];
  SUBCASE("n = T is the identity") {
    Rng rng(1);
    auto r = subsample_months(s, 24, rng);
    CHECK(r.images == s.images);
    CHECK(r.days == s.days);
  }
  SUBCASE("12 of 24 keeps days strictly increasing") {
    Rng rng(2);
    auto r = subsample_months(s, 12, rng);
    CHECK(r.T == 12);
    for (size_t i = 1; i < r.days.size(); ++i) CHECK(r.days[i] > r.days[i - 1]);
  }
  SUBCASE("deterministic under a fixed rng state") {
    Rng r1(3), r2(3);
    auto a = subsample_months(s, 6, r1);
    auto b = subsample_months(s, 6, r2);
    CHECK(a.days == b.days);
    CHECK(a.images == b.images);
  }
  SUBCASE("n > T rejected") {
    Rng rng(4);
    CHECK_THROWS_AS(subsample_months(s, 25, rng), InputError);
  }
}

TEST_CASE("class_distribution") {
  SUBCASE("single-class tile") {
    LabelSeries s;
    s.T = 1;
    s.H = s.W = 4;
    s.K = 3;
    s.labels.assign(16, 2);
    s.ignore.assign(16, 0);
    auto d = class_distribution({&s}, 3);
    CHECK(d[2] == doctest::Approx(1.0));
    CHECK(d[0] == 0.0);
  }
  SUBCASE("fractions sum to one") {
    SyntheticWorldConfig cfg;
    cfg.n_aoi = 2;
    cfg.H = cfg.W = 16;
    cfg.T = 2;
    cfg.seed = 31;
    auto samples = synth_generate(cfg);
    auto d = class_distribution({&samples[0].labels, &samples[1].labels}, cfg.K);
    double sum = 0;
    for (double v : d) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("greedy balanced spatial plan keeps subset distributions close") {
    SyntheticWorldConfig cfg;
    cfg.n_aoi = 10;
    cfg.H = cfg.W = 32;
    cfg.T = 2;
    cfg.seed = 37;
    auto samples = synth_generate(cfg);
    std::vector<std::string> ids;
    std::map<std::string, std::vector<double>> hist;
    for (const auto& s : samples) {
      ids.push_back(s.aoi_id);
      hist[s.aoi_id] = class_distribution({&s.labels}, cfg.K);
    }
    auto plan = plan_spatial(ids, nullptr, &hist);
    // L1 distance between the test-subset distributions of two folds
    auto dist_of = [&](const std::vector<FoldUnit>& units) {
      std::vector<const LabelSeries*> ls;
      for (const auto& u : units)
        for (const auto& s : samples)
          if (s.aoi_id == u.aoi_id) ls.push_back(&s.labels);
      return class_distribution(ls, cfg.K);
    };
    auto d0 = dist_of(plan.folds[0].test);
    auto d1 = dist_of(plan.folds[1].test);
    double l1 = 0;
    for (size_t c = 0; c < d0.size(); ++c) l1 += std::abs(d0[c] - d1[c]);
    CHECK(l1 < 0.1);
  }
}
