// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "shufflepoint/matrix.hpp"

namespace shufflepoint::detail {

/// Bucket grid over a point subset, ~2 points per cell. Used only above the
/// brute-force size limit; results match exhaustive search exactly.
class UniformGrid {
 public:
  /// `members` empty means every row of `coords`.
  UniformGrid(const Matrix& coords, std::span<const std::size_t> members);

  /// Calls f(index, d2) for every member with squared distance <= r^2.
  template <typename F>
  void for_each_within(const double* q, double radius, F&& f) const {
    const double r2 = radius * radius;
    std::array<long, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = clamp_cell(a, std::floor((q[a] - radius - origin_[a]) / cell_));
      hi[a] = clamp_cell(a, std::floor((q[a] + radius - origin_[a]) / cell_));
    }
    for (long x = lo[0]; x <= hi[0]; ++x)
      for (long y = lo[1]; y <= hi[1]; ++y)
        for (long z = lo[2]; z <= hi[2]; ++z) {
          const std::size_t c = flat(x, y, z);
          for (std::size_t k = start_[c]; k < start_[c + 1]; ++k) {
            const std::size_t i = items_[k];
            const double d2 = dist2(q, i);
            if (d2 <= r2) f(i, d2);
          }
        }
  }

  /// k nearest members ordered by (d2, index).
  std::vector<std::pair<double, std::size_t>> nearest(const double* q, std::size_t k) const;

  std::size_t member_count() const { return items_.size(); }

 private:
  long clamp_cell(int axis, double v) const {
    const double hi = static_cast<double>(dims_[axis] - 1);
    return static_cast<long>(std::clamp(v, 0.0, hi));
  }
  std::size_t flat(long x, long y, long z) const {
    return (static_cast<std::size_t>(x) * dims_[1] + static_cast<std::size_t>(y)) * dims_[2] +
           static_cast<std::size_t>(z);
  }
  double dist2(const double* q, std::size_t i) const {
    const double* p = coords_->data() + i * 3;
    const double dx = q[0] - p[0];
    const double dy = q[1] - p[1];
    const double dz = q[2] - p[2];
    return dx * dx + dy * dy + dz * dz;
  }

  const Matrix* coords_;
  std::array<double, 3> origin_{};
  double cell_ = 1.0;
  std::array<std::size_t, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> items_;
};

}  // namespace shufflepoint::detail
