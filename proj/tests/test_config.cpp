#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scd/config.hpp"

using namespace scd;

TEST_CASE("experiment config round trip") {
  ExperimentConfig cfg;
  cfg.data.n_aoi = 8;
  cfg.data.H = cfg.data.W = 48;
  cfg.data.seed = 123;
  cfg.model.levels = 3;
  cfg.model.feature_dim = 32;
  cfg.model.channels_per_level = {8, 16, 32};
  cfg.model.heads = 4;
  cfg.model.variant = Variant::kLtae;
  cfg.train.max_iters = 777;
  cfg.train.peak_lr = 5e-4;
  cfg.train.cosine_decay = true;
  cfg.infer.scheme = "strided";
  cfg.infer.group_len = 6;
  cfg.eval.bc_aggregation = "per_tile";

  auto text = cfg.serialize();
  auto back = ExperimentConfig::parse(text);
  CHECK(back.serialize() == text);  // parse -> serialize -> parse fixed point
  CHECK(back.data.n_aoi == 8);
  CHECK(back.model.channels_per_level == std::vector<int>{8, 16, 32});
  CHECK(back.model.variant == Variant::kLtae);
  CHECK(back.train.max_iters == 777);
  CHECK(back.train.cosine_decay == true);
  CHECK(back.infer.group_len == 6);
  CHECK(back.eval.bc_aggregation == "per_tile");
}

TEST_CASE("unknown keys and sections rejected") {
  CHECK_THROWS_AS(ExperimentConfig::parse("[data]\nwidth = 4\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[nope]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("x = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[train]\nmax_iters = soon\n"), ConfigError);
}

TEST_CASE("defaults are filled and model follows data") {
  auto cfg = ExperimentConfig::parse("[data]\nclasses = 5\nchannels = 3\n");
  CHECK(cfg.model.num_classes == 5);
  CHECK(cfg.model.in_channels == 3);
  // default ladder derived from levels and feature_dim
  CHECK(static_cast<int>(cfg.model.channels_per_level.size()) == cfg.model.levels);
  CHECK(cfg.model.channels_per_level.back() == cfg.model.feature_dim);
}

TEST_CASE("comments and blank lines are tolerated") {
  auto cfg = ExperimentConfig::parse(
      "# a comment\n\n[train]\n; another\nmax_iters = 42\n\n[data]\nseed = 7\n");
  CHECK(cfg.train.max_iters == 42);
  CHECK(cfg.data.seed == 7);
}
