// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/point_cloud.hpp"

#include <algorithm>

#include "shufflepoint/errors.hpp"

namespace shufflepoint {

PointCloud::PointCloud(Matrix xyz, Matrix feats, std::optional<std::size_t> lbl)
    : coords(std::move(xyz)), features(std::move(feats)), label(lbl) {
  if (features.cols() == 0) features = Matrix(coords.rows(), 0);
}

void PointCloud::validate() const {
  if (coords.rows() == 0) throw DataError("point cloud has no points");
  if (coords.cols() != 3) throw DataError("coordinates must be N x 3, got " + coords.shape_string());
  if (!coords.all_finite()) throw DataError("point cloud has non-finite coordinates");
  if (features.cols() > 0 && features.rows() != coords.rows()) {
    throw DataError("features have " + std::to_string(features.rows()) + " rows for " +
                    std::to_string(coords.rows()) + " points");
  }
}

PointCloud PointCloud::subset(std::span<const std::size_t> indices) const {
  const std::size_t d = feature_dim();
  Matrix xyz(indices.size(), 3);
  Matrix feats(indices.size(), d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw CardinalityError("subset index out of range");
    std::copy_n(coords.data() + src * 3, 3, xyz.data() + i * 3);
    if (d > 0) std::copy_n(features.data() + src * d, d, feats.data() + i * d);
  }
  return PointCloud(std::move(xyz), std::move(feats), label);
}

}  // namespace shufflepoint
