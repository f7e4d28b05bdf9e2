// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "shufflepoint/tape.hpp"

namespace shufflepoint {

/// Group counts for the two parameter-free shuffles. 1 disables a shuffle.
struct ShuffleSpec {
  std::size_t sample_groups = 4;
  std::size_t channel_groups = 4;
};

/// Row order of the modulo sample shuffle: output row i is input row perm[i],
/// rows sorted by the key (i mod g, i div g). For g dividing n this is the
/// reshape(n/g, g) -> transpose -> flatten read order.
std::vector<std::size_t> sample_shuffle_order(std::size_t n, std::size_t groups);

/// Same order applied independently inside each run of `segment` rows.
std::vector<std::size_t> segmented_shuffle_order(std::size_t rows, std::size_t segment,
                                                 std::size_t groups);

/// Column order of the channel shuffle: input column j lands at position
/// (j mod (d/g)) * g + j div (d/g); returned as out-column -> in-column.
/// Throws DimensionError when g does not divide d.
std::vector<std::size_t> channel_shuffle_order(std::size_t d, std::size_t groups);

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm);

Var sample_shuffle(const Var& f, std::size_t groups);
/// Sample shuffle applied inside each run of `segment` rows (0 = all rows).
Var sample_shuffle(const Var& f, std::size_t groups, std::size_t segment);
Var channel_shuffle(const Var& f, std::size_t groups);

using FeatureMap = std::function<Var(const Var&)>;

struct HerOutput {
  Var sigma;     // mlp(p (+) f)
  Var shuffled;  // channel_shuffle(mlp(p (+) sample_shuffle(f)))
};

/// Composed shuffle transform over features `f` (N x D) and coordinates `p`
/// (N x 3). `mlp` must accept D + 3 columns. Coordinates are never shuffled.
HerOutput her_transform(const Var& f, const Var& p, const FeatureMap& mlp,
                        const ShuffleSpec& spec);

/// Only the shuffled branch of her_transform, with the sample shuffle applied
/// per run of `segment` rows (0 = all rows).
Var her_shuffled_branch(const Var& f, const Var& p, const FeatureMap& mlp,
                        const ShuffleSpec& spec, std::size_t segment = 0);

}  // namespace shufflepoint
