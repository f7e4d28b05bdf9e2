// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "shufflepoint/dataset.hpp"
#include "shufflepoint/model.hpp"
#include "shufflepoint/train.hpp"

namespace shufflepoint {

struct EvalConfig {
  std::size_t points = 0;  // 0 keeps every point
  std::uint64_t seed = 0;
};

struct BenchConfig {
  /// (n_in, n_out) pairs, written `n_in:n_out` and comma separated.
  std::vector<std::pair<std::size_t, std::size_t>> sweep{{1024, 512}, {4096, 1024}, {16384, 2048}};
  std::size_t repeats = 5;
  std::size_t clusters = 16;
  std::uint64_t seed = 0;
};

/// Named training variants compared by `ablate`.
enum class AblationArm {
  kNoShuffle,  // shuffles off, no regularizer
  kShuffle,    // shuffles on, no regularizer
  kShuffleDim,
  kShuffleLmir,
};

const char* arm_name(AblationArm arm);
AblationArm parse_arm(const std::string& name);

struct AblationConfig {
  std::vector<AblationArm> arms{AblationArm::kNoShuffle, AblationArm::kShuffle,
                                AblationArm::kShuffleDim, AblationArm::kShuffleLmir};
  std::size_t seeds = 5;  // runs use seed, seed + 1, ...
  std::size_t epochs = 0;  // 0 uses train.epochs
};

/// Every setting of a run. `seed` drives model initialization and training;
/// the synthetic data has its own seed so runs with different seeds share a
/// dataset. The class count and input feature width come from the data.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::filesystem::path manifest;  // empty selects the synthetic dataset
  SyntheticOptions synthetic;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  BenchConfig bench;
  AblationConfig ablate;
};

/// Flat `key = value` lines, `#` comments. Keys absent from the text keep
/// their defaults. Unknown keys, repeated keys and unparsable values throw
/// ConfigError naming the source and line.
RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key in a fixed order; parsing the result gives back an equal config.
std::string format_run_config(const RunConfig& config);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

/// Names of every recognized key, in output order.
std::vector<std::string> run_config_keys();

/// The training settings with `seed` applied.
TrainConfig resolved_train_config(const RunConfig& config);

/// Seed for the model's initial weights, derived from `seed`.
std::uint64_t model_init_seed(const RunConfig& config);

/// Loads the manifest dataset, or generates the synthetic one.
Dataset load_run_dataset(const RunConfig& config);

/// The model settings with class count and feature width taken from `data`.
ModelConfig resolved_model_config(const RunConfig& config, const Dataset& data);

/// Applies an ablation arm to model and training settings.
void apply_arm(AblationArm arm, ModelConfig& model, TrainConfig& train);

}  // namespace shufflepoint
