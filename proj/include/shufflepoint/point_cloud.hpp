// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "shufflepoint/matrix.hpp"

namespace shufflepoint {

/// N x 3 coordinates, optional N x D features (D == 0 means none), optional label.
struct PointCloud {
  Matrix coords;
  Matrix features;
  std::optional<std::size_t> label;

  PointCloud() = default;
  explicit PointCloud(Matrix xyz, Matrix feats = {}, std::optional<std::size_t> lbl = {});

  std::size_t size() const { return coords.rows(); }
  std::size_t feature_dim() const { return features.cols(); }

  /// Throws DataError unless N >= 1, coords are N x 3 and finite, and features
  /// (when present) have N rows.
  void validate() const;

  /// Points and features at `indices`, label kept.
  PointCloud subset(std::span<const std::size_t> indices) const;
};

/// Row-major table of point indices (knn results, ball-query groups).
struct IndexTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> data;

  IndexTable() = default;
  IndexTable(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::span<std::size_t> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const std::size_t> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::size_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline double squared_distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace shufflepoint
