// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <random>
#include <thread>

#include "shufflepoint/errors.hpp"
#include "spatial_grid.hpp"

namespace shufflepoint {

namespace detail {

UniformGrid::UniformGrid(const Matrix& coords, std::span<const std::size_t> members)
    : coords_(&coords) {
  std::vector<std::size_t> all;
  if (members.empty()) {
    all.resize(coords.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    members = all;
  }
  std::array<double, 3> lo{}, hi{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (std::size_t i : members)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], coords(i, a));
      hi[a] = std::max(hi[a], coords(i, a));
    }
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo[a]);
  const double per_axis =
      std::max(1.0, std::ceil(std::cbrt(static_cast<double>(members.size()) / 2.0)));
  cell_ = extent > 0.0 ? extent / per_axis : 1.0;
  origin_ = lo;
  for (int a = 0; a < 3; ++a)
    dims_[a] = static_cast<std::size_t>(std::floor((hi[a] - lo[a]) / cell_)) + 1;

  const std::size_t cells = dims_[0] * dims_[1] * dims_[2];
  std::vector<std::size_t> cell_of(members.size());
  start_.assign(cells + 1, 0);
  for (std::size_t k = 0; k < members.size(); ++k) {
    const double* p = coords.data() + members[k] * 3;
    const long x = clamp_cell(0, std::floor((p[0] - origin_[0]) / cell_));
    const long y = clamp_cell(1, std::floor((p[1] - origin_[1]) / cell_));
    const long z = clamp_cell(2, std::floor((p[2] - origin_[2]) / cell_));
    cell_of[k] = flat(x, y, z);
    ++start_[cell_of[k] + 1];
  }
  for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
  items_.resize(members.size());
  std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
  // members in ascending order keep every bucket sorted by point index
  std::vector<std::size_t> order(members.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return members[a] < members[b]; });
  for (std::size_t k : order) items_[fill[cell_of[k]]++] = members[k];
}

std::vector<std::pair<double, std::size_t>> UniformGrid::nearest(const double* q,
                                                                 std::size_t k) const {
  std::vector<std::pair<double, std::size_t>> found;
  k = std::min(k, items_.size());
  if (k == 0) return found;
  std::array<long, 3> c{};
  for (int a = 0; a < 3; ++a) c[a] = clamp_cell(a, std::floor((q[a] - origin_[a]) / cell_));
  const long max_ring = static_cast<long>(std::max({dims_[0], dims_[1], dims_[2]}));
  for (long ring = 0; ring <= max_ring; ++ring) {
    for (long x = c[0] - ring; x <= c[0] + ring; ++x) {
      if (x < 0 || x >= static_cast<long>(dims_[0])) continue;
      for (long y = c[1] - ring; y <= c[1] + ring; ++y) {
        if (y < 0 || y >= static_cast<long>(dims_[1])) continue;
        const bool xy_shell = std::abs(x - c[0]) == ring || std::abs(y - c[1]) == ring;
        for (long z = c[2] - ring; z <= c[2] + ring; ++z) {
          if (z < 0 || z >= static_cast<long>(dims_[2])) continue;
          if (!xy_shell && std::abs(z - c[2]) != ring) {
            // interior of the cube was covered by earlier rings; jump to the far face
            z = c[2] + ring - 1;
            continue;
          }
          const std::size_t cell = flat(x, y, z);
          for (std::size_t s = start_[cell]; s < start_[cell + 1]; ++s)
            found.emplace_back(dist2(q, items_[s]), items_[s]);
        }
      }
    }
    if (found.size() >= k) {
      std::nth_element(found.begin(), found.begin() + static_cast<long>(k - 1), found.end());
      const double kth = found[k - 1].first;
      const double bound = static_cast<double>(ring) * cell_;
      // anything in ring + 1 or beyond is at least `bound` away
      if (kth < bound * bound) break;
    }
  }
  std::sort(found.begin(), found.end());
  found.resize(k);
  return found;
}

}  // namespace detail

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

/// Resumable greedy sweep over a sorted subset of points.
class FpsSweep {
 public:
  FpsSweep(const Matrix& coords, std::vector<std::size_t> subset) : subset_(std::move(subset)) {
    const std::size_t n = subset_.size();
    x_.resize(n);
    y_.resize(n);
    z_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = coords.data() + subset_[i] * 3;
      x_[i] = p[0];
      y_[i] = p[1];
      z_[i] = p[2];
    }
    min_d2_.assign(n, std::numeric_limits<double>::infinity());
  }

  std::size_t size() const { return subset_.size(); }
  std::size_t remaining() const { return subset_.size() - taken_; }
  std::size_t global(std::size_t local) const { return subset_[local]; }

  /// Marks `local` as picked and returns the next farthest unpicked local
  /// index (kNone when exhausted).
  std::size_t take(std::size_t local) {
    const double px = x_[local], py = y_[local], pz = z_[local];
    min_d2_[local] = -1.0;
    ++taken_;
    double best = -1.0;
    std::size_t best_i = kNone;
    const std::size_t n = subset_.size();
    double* md = min_d2_.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = x_[i] - px;
      const double dy = y_[i] - py;
      const double dz = z_[i] - pz;
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < md[i]) md[i] = d;
      if (md[i] > best) {
        best = md[i];
        best_i = i;
      }
    }
    return best_i;
  }

 private:
  std::vector<std::size_t> subset_;
  std::vector<double> x_, y_, z_;
  std::vector<double> min_d2_;
  std::size_t taken_ = 0;
};

std::vector<std::size_t> iota_vector(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::size_t nearest_centroid(const Matrix& coords, std::size_t i, const Matrix& centroids,
                             double* out_d2) {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d2 = squared_distance(coords, i, centroids, c);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = c;
    }
  }
  if (out_d2 != nullptr) *out_d2 = best_d2;
  return best;
}

double assign_all(const Matrix& coords, const Matrix& centroids,
                  std::vector<std::size_t>& assignment, std::vector<double>& d2s) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    assignment[i] = nearest_centroid(coords, i, centroids, &d2s[i]);
    inertia += d2s[i];
  }
  return inertia;
}

void check_cloud(const PointCloud& cloud) {
  if (cloud.size() == 0) throw CardinalityError("empty point cloud");
  if (cloud.coords.cols() != 3) {
    throw DimensionError("coordinates must be N x 3, got " + cloud.coords.shape_string());
  }
}

}  // namespace

const char* sampler_name(SamplerKind kind) {
  return kind == SamplerKind::kFps ? "fps" : "cluster_fps";
}

SamplerKind parse_sampler(const std::string& name) {
  if (name == "fps") return SamplerKind::kFps;
  if (name == "cluster_fps") return SamplerKind::kClusterFps;
  throw ConfigError("unknown sampler '" + name + "' (expected fps or cluster_fps)");
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SHUFFLEPOINT_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end != nullptr && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SampleResult fps(const PointCloud& cloud, std::size_t k, std::size_t start) {
  check_cloud(cloud);
  const std::size_t n = cloud.size();
  if (k == 0 || k > n) {
    throw CardinalityError("fps: cannot pick " + std::to_string(k) + " of " +
                           std::to_string(n) + " points");
  }
  if (start >= n) {
    throw CardinalityError("fps: start index " + std::to_string(start) + " out of range");
  }
  SampleResult result;
  result.method = SamplerKind::kFps;
  result.params.k = k;
  result.params.start = start;
  result.indices.reserve(k);

  FpsSweep sweep(cloud.coords, iota_vector(n));
  std::size_t next = start;
  for (std::size_t picked = 0; picked < k; ++picked) {
    result.indices.push_back(next);
    next = sweep.take(next);
  }
  return result;
}

ClusterAssignment kmeans(const PointCloud& cloud, std::size_t n, std::size_t max_iter,
                         double tol, std::uint64_t seed) {
  check_cloud(cloud);
  const Matrix& xyz = cloud.coords;
  const std::size_t count = cloud.size();
  if (n == 0 || n > count) {
    throw CardinalityError("kmeans: cannot form " + std::to_string(n) + " clusters from " +
                           std::to_string(count) + " points");
  }

  std::mt19937_64 rng(seed);
  ClusterAssignment out;
  out.centroids = Matrix(n, 3);

  // k-means++ seeding
  std::vector<double> d2(count, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(count, 0);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < count; ++i) total += chosen[i] ? 0.0 : d2[i];
      if (total > 0.0) {
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = kNone;
        for (std::size_t i = 0; i < count; ++i) {
          if (chosen[i] || d2[i] <= 0.0) continue;
          pick = i;
          u -= d2[i];
          if (u < 0.0) break;
        }
      } else {
        pick = kNone;
      }
      if (pick == kNone) {
        // all remaining mass is zero: duplicates only
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
      }
    }
    chosen[pick] = 1;
    std::copy_n(xyz.data() + pick * 3, 3, out.centroids.data() + c * 3);
    for (std::size_t i = 0; i < count; ++i)
      d2[i] = std::min(d2[i], squared_distance(xyz, i, out.centroids, c));
  }

  out.assignment.assign(count, 0);
  std::vector<double> own_d2(count, 0.0);
  out.inertia_history.push_back(assign_all(xyz, out.centroids, out.assignment, own_d2));

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    Matrix next(n, 3);
    std::vector<std::size_t> members(n, 0);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t c = out.assignment[i];
      ++members[c];
      for (int a = 0; a < 3; ++a) next(c, a) += xyz(i, a);
    }
    std::vector<char> taken(count, 0);
    for (std::size_t c = 0; c < n; ++c) {
      if (members[c] > 0) {
        for (int a = 0; a < 3; ++a) next(c, a) /= static_cast<double>(members[c]);
        continue;
      }
      // empty cluster: move it onto the worst-served point
      std::size_t far = kNone;
      double far_d2 = -1.0;
      for (std::size_t i = 0; i < count; ++i) {
        if (!taken[i] && own_d2[i] > far_d2) {
          far_d2 = own_d2[i];
          far = i;
        }
      }
      taken[far] = 1;
      own_d2[far] = 0.0;
      std::copy_n(xyz.data() + far * 3, 3, next.data() + c * 3);
    }
    double shift2 = 0.0;
    for (std::size_t c = 0; c < n; ++c)
      shift2 = std::max(shift2, squared_distance(next, c, out.centroids, c));
    out.centroids = std::move(next);
    ++out.iterations;
    out.inertia_history.push_back(assign_all(xyz, out.centroids, out.assignment, own_d2));
    if (std::sqrt(shift2) < tol) break;
  }
  return out;
}

IndexTable knn(const Matrix& queries, const PointCloud& base, std::size_t k) {
  check_cloud(base);
  if (queries.cols() != 3) {
    throw DimensionError("knn queries must be M x 3, got " + queries.shape_string());
  }
  const std::size_t n = base.size();
  if (k == 0 || k > n) {
    throw CardinalityError("knn: k = " + std::to_string(k) + " for " + std::to_string(n) +
                           " base points");
  }
  IndexTable out(queries.rows(), k);
  if (n > kBruteForceLimit) {
    detail::UniformGrid grid(base.coords, {});
    for (std::size_t q = 0; q < queries.rows(); ++q) {
      const auto found = grid.nearest(queries.data() + q * 3, k);
      for (std::size_t j = 0; j < k; ++j) out.row(q)[j] = found[j].second;
    }
    return out;
  }
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    for (std::size_t i = 0; i < n; ++i) dist[i] = {squared_distance(queries, q, base.coords, i), i};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
    for (std::size_t j = 0; j < k; ++j) out.row(q)[j] = dist[j].second;
  }
  return out;
}

IndexTable ball_query(const PointCloud& cloud, const SampleResult& centers, double radius,
                      std::size_t max_samples) {
  check_cloud(cloud);
  if (!(radius > 0.0)) throw ContractError("ball_query radius must be positive");
  if (max_samples == 0) throw ContractError("ball_query needs max_samples >= 1");
  const std::size_t n = cloud.size();
  const double r2 = radius * radius;
  IndexTable out(centers.indices.size(), max_samples);

  std::unique_ptr<detail::UniformGrid> grid;
  if (n > kBruteForceLimit) grid = std::make_unique<detail::UniformGrid>(cloud.coords, std::span<const std::size_t>{});

  std::vector<std::size_t> hits;
  for (std::size_t s = 0; s < centers.indices.size(); ++s) {
    const std::size_t c = centers.indices[s];
    if (c >= n) throw CardinalityError("ball_query center index out of range");
    hits.clear();
    if (grid) {
      grid->for_each_within(cloud.coords.data() + c * 3, radius,
                            [&](std::size_t i, double) { hits.push_back(i); });
      std::sort(hits.begin(), hits.end());
      if (hits.size() > max_samples) hits.resize(max_samples);
    } else {
      for (std::size_t i = 0; i < n && hits.size() < max_samples; ++i)
        if (squared_distance(cloud.coords, c, cloud.coords, i) <= r2) hits.push_back(i);
    }
    auto row = out.row(s);
    if (hits.empty()) hits.push_back(c);
    for (std::size_t j = 0; j < max_samples; ++j) row[j] = j < hits.size() ? hits[j] : hits[0];
  }
  return out;
}

SampleResult cluster_fps(const PointCloud& cloud, const ClusterFpsOptions& options) {
  check_cloud(cloud);
  const std::size_t n_points = cloud.size();
  const std::size_t n = options.n_clusters;
  const std::size_t k_total = options.k_total;
  if (n == 0 || k_total == 0 || k_total % n != 0) {
    throw CardinalityError("cluster_fps: n_clusters (" + std::to_string(n) +
                           ") must divide k_total (" + std::to_string(k_total) + ")");
  }
  if (k_total > n_points) {
    throw CardinalityError("cluster_fps: cannot pick " + std::to_string(k_total) +
                           " unique points from " + std::to_string(n_points));
  }
  if (n > n_points) {
    throw CardinalityError("cluster_fps: more clusters than points");
  }
  const std::size_t quota = k_total / n;
  std::size_t m = options.m_neighbors;
  if (m == 0) m = std::clamp<std::size_t>(2 * n_points / n, quota, n_points);
  if (m < quota || m > n_points) {
    throw CardinalityError("cluster_fps: m_neighbors = " + std::to_string(m) +
                           " must lie in [" + std::to_string(quota) + ", " +
                           std::to_string(n_points) + "]");
  }

  const ClusterAssignment clusters =
      kmeans(cloud, n, options.kmeans_max_iter, options.kmeans_tol, options.seed);
  const IndexTable neighbors = knn(clusters.centroids, cloud, m);

  std::vector<FpsSweep> sweeps;
  std::vector<std::size_t> next_local(n, kNone);
  sweeps.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<std::size_t> subset(neighbors.row(c).begin(), neighbors.row(c).end());
    const std::size_t anchor = subset.front();  // nearest to the centroid
    std::sort(subset.begin(), subset.end());
    next_local[c] = static_cast<std::size_t>(
        std::lower_bound(subset.begin(), subset.end(), anchor) - subset.begin());
    sweeps.emplace_back(cloud.coords, std::move(subset));
  }

  // Independent per-cluster sweeps: the parallel part.
  std::vector<std::vector<std::size_t>> picks(n);
  auto run_cluster = [&](std::size_t c) {
    picks[c].reserve(quota);
    for (std::size_t j = 0; j < quota && next_local[c] != kNone; ++j) {
      const std::size_t local = next_local[c];
      picks[c].push_back(sweeps[c].global(local));
      next_local[c] = sweeps[c].take(local);
    }
  };
  const std::size_t workers = std::min(resolve_threads(options.threads), n);
  if (workers <= 1) {
    for (std::size_t c = 0; c < n; ++c) run_cluster(c);
  } else {
    std::atomic<std::size_t> cursor{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = cursor.fetch_add(1); c < n; c = cursor.fetch_add(1)) run_cluster(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  // Deterministic merge: dedupe in cluster order, refill from the same sweep.
  SampleResult result;
  result.method = SamplerKind::kClusterFps;
  result.params = SamplerParams{k_total, 0, n, m, options.seed};
  result.indices.reserve(k_total);
  std::vector<char> selected(n_points, 0);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t fresh = 0;
    for (std::size_t p : picks[c]) {
      if (selected[p]) continue;
      selected[p] = 1;
      result.indices.push_back(p);
      ++fresh;
    }
    while (fresh < quota && next_local[c] != kNone) {
      const std::size_t local = next_local[c];
      const std::size_t p = sweeps[c].global(local);
      next_local[c] = sweeps[c].take(local);
      if (selected[p]) continue;
      selected[p] = 1;
      result.indices.push_back(p);
      ++fresh;
    }
  }

  if (result.indices.size() < k_total) {
    // neighborhoods did not cover enough distinct points; continue globally
    FpsSweep global(cloud.coords, iota_vector(n_points));
    std::size_t next = kNone;
    for (std::size_t p : result.indices) next = global.take(p);
    while (result.indices.size() < k_total && next != kNone) {
      result.indices.push_back(next);
      selected[next] = 1;
      next = global.take(next);
    }
  }
  return result;
}

double covering_radius(const PointCloud& cloud, const SampleResult& sample) {
  check_cloud(cloud);
  if (sample.indices.empty()) throw CardinalityError("covering_radius of an empty sample");
  for (std::size_t s : sample.indices)
    if (s >= cloud.size()) throw CardinalityError("sample index out of range");
  double worst = 0.0;
  if (cloud.size() > kBruteForceLimit) {
    detail::UniformGrid grid(cloud.coords, sample.indices);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto nn = grid.nearest(cloud.coords.data() + i * 3, 1);
      worst = std::max(worst, nn.front().first);
    }
  } else {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t s : sample.indices)
        best = std::min(best, squared_distance(cloud.coords, i, cloud.coords, s));
      worst = std::max(worst, best);
    }
  }
  return std::sqrt(worst);
}

}  // namespace shufflepoint
