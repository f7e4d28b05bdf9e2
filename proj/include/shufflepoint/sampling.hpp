// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "shufflepoint/point_cloud.hpp"

namespace shufflepoint {

enum class SamplerKind { kFps, kClusterFps };

const char* sampler_name(SamplerKind kind);
SamplerKind parse_sampler(const std::string& name);

struct SamplerParams {
  std::size_t k = 0;
  std::size_t start = 0;        // fps only
  std::size_t n_clusters = 0;   // cluster_fps only
  std::size_t m_neighbors = 0;  // cluster_fps only; resolved value
  std::uint64_t seed = 0;       // cluster_fps only
};

struct SampleResult {
  std::vector<std::size_t> indices;
  SamplerKind method = SamplerKind::kFps;
  SamplerParams params;
};

struct ClusterAssignment {
  Matrix centroids;                     // n x 3
  std::vector<std::size_t> assignment;  // cluster id per point
  std::size_t iterations = 0;
  /// Inertia after every assignment step, last entry is the final state.
  std::vector<double> inertia_history;

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

/// Clouds above this size get a uniform-grid index for neighbor queries.
inline constexpr std::size_t kBruteForceLimit = 4096;

/// Worker count: `requested` if non-zero, else SHUFFLEPOINT_THREADS, else the
/// hardware concurrency (0 in the variable also means hardware default).
std::size_t resolve_threads(std::size_t requested = 0);

/// Greedy farthest-point sampling.
///
/// Each pick maximizes the distance to the closest already-picked point; ties
/// go to the lowest point index.
SampleResult fps(const PointCloud& cloud, std::size_t k, std::size_t start = 0);

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops when no centroid moves more than `tol` or after `max_iter` updates. A
/// cluster that empties is re-seeded at the point farthest from its assigned
/// centroid. The returned assignment is nearest-centroid (ties to the lowest
/// centroid index) for the returned centroids.
ClusterAssignment kmeans(const PointCloud& cloud, std::size_t n, std::size_t max_iter,
                         double tol, std::uint64_t seed);

/// Per query row, the k nearest base points ordered by distance then index.
IndexTable knn(const Matrix& queries, const PointCloud& base, std::size_t k);

/// Fixed-width neighborhoods around each sampled center.
///
/// Row i lists, in index order, up to `max_samples` points within `radius` of
/// center i; short rows repeat their first entry, and an empty ball falls back
/// to the center itself.
IndexTable ball_query(const PointCloud& cloud, const SampleResult& centers, double radius,
                      std::size_t max_samples);

struct ClusterFpsOptions {
  std::size_t n_clusters = 16;
  std::size_t m_neighbors = 0;  // 0 picks 2 * N / n_clusters (clamped to [k/n, N])
  std::size_t k_total = 0;
  std::uint64_t seed = 0;
  std::size_t kmeans_max_iter = 10;
  double kmeans_tol = 1e-6;
  std::size_t threads = 0;  // 0 resolves via resolve_threads()
};

/// Cluster-parallel farthest-point sampling.
///
/// k-means partitions the cloud; each centroid's m nearest points are sampled
/// by an independent FPS sweep (r = k_total / n_clusters picks, starting from
/// the point nearest the centroid); the sweeps run on worker threads and their
/// picks are concatenated in cluster order. Points claimed by an earlier
/// cluster are skipped and that cluster's sweep continues until it has made r
/// new picks. If a neighborhood runs dry, a global FPS sweep fills the rest.
/// The result is independent of the worker count.
SampleResult cluster_fps(const PointCloud& cloud, const ClusterFpsOptions& options);

/// Max over all points of the distance to the nearest sampled point.
double covering_radius(const PointCloud& cloud, const SampleResult& sample);

}  // namespace shufflepoint
