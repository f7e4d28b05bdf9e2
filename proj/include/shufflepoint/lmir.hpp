// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "shufflepoint/tape.hpp"

namespace shufflepoint {

/// Two-layer per-point scorer T(x, z) = relu([x z] W1 + b1) W2 + b2.
///
/// One weight set is shared by every point row. Discriminators exist only
/// while training; the constructed_count() probe lets tests check that
/// inference never creates one.
class Discriminator {
 public:
  Discriminator(std::size_t x_dim, std::size_t z_dim, std::size_t hidden, std::mt19937_64& rng,
                std::string name = "disc");
  /// All weights and biases zero.
  static Discriminator zeros(std::size_t x_dim, std::size_t z_dim, std::size_t hidden);

  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;

  std::size_t x_dim() const { return x_dim_; }
  std::size_t z_dim() const { return z_dim_; }
  std::size_t hidden() const { return hidden_; }

  Parameter& w1() { return w1_; }
  Parameter& b1() { return b1_; }
  Parameter& w2() { return w2_; }
  Parameter& b2() { return b2_; }
  std::vector<Parameter*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

  static std::uint64_t constructed_count();

 private:
  Discriminator(std::size_t x_dim, std::size_t z_dim, std::size_t hidden, std::string name);

  std::size_t x_dim_;
  std::size_t z_dim_;
  std::size_t hidden_;
  Parameter w1_;
  Parameter b1_;
  Parameter w2_;
  Parameter b2_;
};

/// Features sampled from one shuffle layer: its input `x`, the un-shuffled
/// branch output `sigma` and the shuffled branch output `shuffled`. Rows are
/// the same points in all three.
struct MiPair {
  Var x;
  Var sigma;
  Var shuffled;
  std::size_t block_id = 0;

  MiPair(Var x_in, Var sigma_in, Var shuffled_in, std::size_t block);
  MiPair(const MiPair&) = default;
  MiPair(MiPair&&) noexcept = default;
  MiPair& operator=(const MiPair&) = default;
  MiPair& operator=(MiPair&&) noexcept = default;

  static std::uint64_t constructed_count();
};

/// N x 1 scores T(x_i, z_i). When `tape` is null the discriminator weights are
/// traced on the inputs' tape (if any), otherwise on `tape`.
Var pair_scores(Discriminator& t, const Var& x, const Var& z, Tape* tape = nullptr);

/// Jensen-Shannon estimate with (x, sigma) as the positive pair and
/// (x, shuffled) as the negative pair:
///   mean(-softplus(-T(x, sigma))) - mean(softplus(T(x, shuffled)))
Var dim_estimator(Discriminator& t, const MiPair& pair, Tape* tape = nullptr);

/// The same estimate with the pair roles exchanged:
///   mean(-softplus(-T(x, shuffled))) - mean(softplus(T(x, sigma)))
Var lmir_estimator(Discriminator& t, const MiPair& pair, Tape* tape = nullptr);

/// Mean of per-block estimates. Throws ContractError on an empty list.
Var lmir_loss(std::span<const Var> estimates);

enum class EstimatorKind { kLmir, kDim };

const char* estimator_name(EstimatorKind kind);
EstimatorKind parse_estimator(const std::string& name);

}  // namespace shufflepoint
