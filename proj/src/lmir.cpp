// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/lmir.hpp"

#include <atomic>

#include "shufflepoint/errors.hpp"
#include "shufflepoint/optim.hpp"

namespace shufflepoint {

namespace {

std::atomic<std::uint64_t> g_discriminators{0};
std::atomic<std::uint64_t> g_pairs{0};

Tape* pick_tape(Tape* explicit_tape, std::initializer_list<const Var*> inputs) {
  if (explicit_tape != nullptr) return explicit_tape;
  for (const Var* v : inputs)
    if (v->traced()) return v->tape();
  return nullptr;
}

struct Weights {
  Var w1x;  // W1[:dx]
  Var w1z;  // W1[dx:]
  Var b1;
  Var w2;
  Var b2;
};

Weights bind_weights(Discriminator& t, Tape* tape) {
  Var w1 = bind(t.w1(), tape);
  return {slice_rows(w1, 0, t.x_dim()), slice_rows(w1, t.x_dim(), t.z_dim()), bind(t.b1(), tape),
          bind(t.w2(), tape), bind(t.b2(), tape)};
}

// [x z] W1 == x W1[:dx] + z W1[dx:]
Var scores(Discriminator& t, const Weights& w, const Var& x, const Var& z) {
  if (x.cols() != t.x_dim()) {
    throw DimensionError("discriminator expects x with " + std::to_string(t.x_dim()) +
                         " columns, got " + x.value().shape_string());
  }
  if (z.cols() != t.z_dim() || z.rows() != x.rows()) {
    throw DimensionError("discriminator expects z of shape " + std::to_string(x.rows()) + "x" +
                         std::to_string(t.z_dim()) + ", got " + z.value().shape_string());
  }
  return pair_mlp(x, z, w.w1x, w.w1z, w.b1, w.w2, w.b2);
}

Var js_estimate(Discriminator& t, const Var& x, const Var& positive, const Var& negative,
                Tape* tape) {
  tape = pick_tape(tape, {&x, &positive, &negative});
  const Weights w = bind_weights(t, tape);
  Var pos = scores(t, w, x, positive);
  Var neg = scores(t, w, x, negative);
  // -mean(softplus(-pos)) - mean(softplus(neg))
  return scale(add(mean(softplus(scale(pos, -1.0))), mean(softplus(neg))), -1.0);
}

void check_pair(const MiPair& pair) {
  if (pair.sigma.rows() != pair.x.rows() || pair.shuffled.rows() != pair.x.rows()) {
    throw DimensionError("MiPair members disagree on the number of points");
  }
}

}  // namespace

Discriminator::Discriminator(std::size_t x_dim, std::size_t z_dim, std::size_t hidden,
                             std::string name)
    : x_dim_(x_dim),
      z_dim_(z_dim),
      hidden_(hidden),
      w1_(name + ".w1", Matrix(x_dim + z_dim, hidden)),
      b1_(name + ".b1", Matrix(1, hidden)),
      w2_(name + ".w2", Matrix(hidden, 1)),
      b2_(name + ".b2", Matrix(1, 1)) {
  g_discriminators.fetch_add(1, std::memory_order_relaxed);
}

Discriminator::Discriminator(std::size_t x_dim, std::size_t z_dim, std::size_t hidden,
                             std::mt19937_64& rng, std::string name)
    : Discriminator(x_dim, z_dim, hidden, std::move(name)) {
  w1_.value = uniform_fan_in(x_dim + z_dim, hidden, rng);
  w2_.value = uniform_fan_in(hidden, 1, rng);
}

Discriminator Discriminator::zeros(std::size_t x_dim, std::size_t z_dim, std::size_t hidden) {
  return Discriminator(x_dim, z_dim, hidden, std::string("disc"));
}

std::uint64_t Discriminator::constructed_count() {
  return g_discriminators.load(std::memory_order_relaxed);
}

MiPair::MiPair(Var x_in, Var sigma_in, Var shuffled_in, std::size_t block)
    : x(std::move(x_in)), sigma(std::move(sigma_in)), shuffled(std::move(shuffled_in)),
      block_id(block) {
  g_pairs.fetch_add(1, std::memory_order_relaxed);
}

std::uint64_t MiPair::constructed_count() { return g_pairs.load(std::memory_order_relaxed); }

Var pair_scores(Discriminator& t, const Var& x, const Var& z, Tape* tape) {
  tape = pick_tape(tape, {&x, &z});
  return scores(t, bind_weights(t, tape), x, z);
}

Var dim_estimator(Discriminator& t, const MiPair& pair, Tape* tape) {
  check_pair(pair);
  return js_estimate(t, pair.x, pair.sigma, pair.shuffled, tape);
}

Var lmir_estimator(Discriminator& t, const MiPair& pair, Tape* tape) {
  check_pair(pair);
  return js_estimate(t, pair.x, pair.shuffled, pair.sigma, tape);
}

Var lmir_loss(std::span<const Var> estimates) {
  if (estimates.empty()) throw ContractError("lmir_loss needs at least one block estimate");
  Var total = estimates[0];
  for (std::size_t i = 1; i < estimates.size(); ++i) total = add(total, estimates[i]);
  return scale(total, 1.0 / static_cast<double>(estimates.size()));
}

const char* estimator_name(EstimatorKind kind) {
  return kind == EstimatorKind::kLmir ? "lmir" : "dim";
}

EstimatorKind parse_estimator(const std::string& name) {
  if (name == "lmir") return EstimatorKind::kLmir;
  if (name == "dim") return EstimatorKind::kDim;
  throw ConfigError("unknown estimator '" + name + "' (expected lmir or dim)");
}

}  // namespace shufflepoint
