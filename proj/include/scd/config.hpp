#pragma once

// Experiment configuration: an INI-style file with [data], [model], [train],
// [infer] and [eval] sections whose keys mirror the module config fields.
// Unknown keys are rejected; parse -> serialize -> parse is the identity on
// the key-value content.

#include <string>

#include "scd/data.hpp"
#include "scd/model.hpp"
#include "scd/train.hpp"

namespace scd {

struct InferConfig {
  std::string scheme = "full";  // full | contiguous | strided | custom
  int64_t group_len = 0;        // for contiguous/strided
  std::string assignment;       // comma-separated group ids for custom
  int64_t max_tile = 512;
};

struct EvalConfig {
  std::string bc_aggregation = "global";  // global | per_tile
  std::string split = "test";             // test | val
};

struct ExperimentConfig {
  SyntheticWorldConfig data;
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;
  EvalConfig eval;

  static ExperimentConfig parse_file(const std::string& path);
  static ExperimentConfig parse(const std::string& text);
  std::string serialize() const;
};

}  // namespace scd
