// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "shufflepoint/tape.hpp"

namespace shufflepoint {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One bias-corrected Adam update using each parameter's accumulated `grad`.
///
/// Moments are created lazily on the first call and matched to the parameter
/// list by position from then on.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

/// min_lr + (base_lr - min_lr) * (1 + cos(pi * (step mod t_max) / t_max)) / 2
double cosine_anneal_lr(std::uint64_t step, double base_lr, std::uint64_t t_max,
                        double min_lr = 0.0);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) entries.
Matrix uniform_fan_in(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace shufflepoint
