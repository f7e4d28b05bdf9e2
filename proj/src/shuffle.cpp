// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/shuffle.hpp"

#include "shufflepoint/errors.hpp"

namespace shufflepoint {

std::vector<std::size_t> sample_shuffle_order(std::size_t n, std::size_t groups) {
  if (groups == 0) throw ContractError("sample shuffle needs at least one group");
  std::vector<std::size_t> order;
  order.reserve(n);
  // Walking residues in order and stepping by g enumerates the (i mod g, i div g) sort.
  for (std::size_t residue = 0; residue < groups && residue < n; ++residue)
    for (std::size_t i = residue; i < n; i += groups) order.push_back(i);
  return order;
}

std::vector<std::size_t> segmented_shuffle_order(std::size_t rows, std::size_t segment,
                                                 std::size_t groups) {
  if (segment == 0 || rows % segment != 0) {
    throw DimensionError("segment " + std::to_string(segment) + " does not divide " +
                         std::to_string(rows) + " rows");
  }
  const std::vector<std::size_t> local = sample_shuffle_order(segment, groups);
  std::vector<std::size_t> order(rows);
  for (std::size_t base = 0; base < rows; base += segment)
    for (std::size_t i = 0; i < segment; ++i) order[base + i] = base + local[i];
  return order;
}

std::vector<std::size_t> channel_shuffle_order(std::size_t d, std::size_t groups) {
  if (groups == 0 || d % groups != 0) {
    throw DimensionError("channel shuffle: " + std::to_string(groups) +
                         " groups do not divide " + std::to_string(d) + " channels");
  }
  const std::size_t per_group = d / groups;
  std::vector<std::size_t> order(d);
  for (std::size_t j = 0; j < d; ++j) order[(j % per_group) * groups + j / per_group] = j;
  return order;
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv.at(perm[i]) = i;
  return inv;
}

Var sample_shuffle(const Var& f, std::size_t groups) {
  if (groups == 1) return f;
  const auto order = sample_shuffle_order(f.rows(), groups);
  return gather_rows(f, order);
}

Var sample_shuffle(const Var& f, std::size_t groups, std::size_t segment) {
  if (segment == 0 || segment == f.rows()) return sample_shuffle(f, groups);
  if (groups == 1) return f;
  const auto order = segmented_shuffle_order(f.rows(), segment, groups);
  return gather_rows(f, order);
}

Var channel_shuffle(const Var& f, std::size_t groups) {
  const auto order = channel_shuffle_order(f.cols(), groups);
  if (groups == 1) return f;
  return permute_cols(f, order);
}

namespace {

void check_coords(const Var& f, const Var& p) {
  if (p.rows() != f.rows() || p.cols() != 3) {
    throw DimensionError("her_transform: coordinates " + p.value().shape_string() +
                         " do not pair with features " + f.value().shape_string());
  }
}

}  // namespace

Var her_shuffled_branch(const Var& f, const Var& p, const FeatureMap& mlp,
                        const ShuffleSpec& spec, std::size_t segment) {
  check_coords(f, p);
  Var mixed = mlp(concat_cols(p, sample_shuffle(f, spec.sample_groups, segment)));
  return channel_shuffle(mixed, spec.channel_groups);
}

HerOutput her_transform(const Var& f, const Var& p, const FeatureMap& mlp,
                        const ShuffleSpec& spec) {
  check_coords(f, p);
  HerOutput out;
  out.sigma = mlp(concat_cols(p, f));
  out.shuffled = her_shuffled_branch(f, p, mlp, spec);
  return out;
}

}  // namespace shufflepoint
