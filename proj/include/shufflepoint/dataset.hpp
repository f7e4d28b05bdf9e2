// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "shufflepoint/point_cloud.hpp"

namespace shufflepoint {

enum class ShapeClass { kSphere, kCube, kTorus, kCylinder };

const char* shape_name(ShapeClass shape);
/// Throws ConfigError for an unknown name.
ShapeClass parse_shape(const std::string& name);

/// Uniform samples on the analytic surface, no noise, no normalization.
/// Sphere: radius 1. Cube: half-extent 1. Torus: radii 1 and 0.4 around z.
/// Cylinder: radius 1, height 2 around z, caps included.
Matrix sample_surface(ShapeClass shape, std::size_t n_points, std::mt19937_64& rng);

/// Surface samples plus Gaussian jitter of standard deviation `noise`, then
/// scaled so the farthest point from the origin sits at distance 1.
PointCloud generate_synthetic(ShapeClass shape, std::size_t n_points, double noise,
                              std::uint64_t seed);

/// Translates the centroid to the origin and scales into the unit sphere.
void normalize_unit_sphere(Matrix& coords);

struct AugmentOptions {
  bool rotate = true;
  double jitter = 0.02;
};

/// Rotation about z by a uniform angle, then per-coordinate Gaussian jitter.
PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentOptions& options = {});

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<PointCloud> train;
  std::vector<PointCloud> test;
};

struct SyntheticOptions {
  std::vector<ShapeClass> classes{ShapeClass::kSphere, ShapeClass::kCube, ShapeClass::kTorus,
                                  ShapeClass::kCylinder};
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t points = 256;
  double noise = 0.02;
  std::uint64_t seed = 0;
};

/// Class-balanced dataset; every cloud has its own derived seed.
Dataset make_synthetic_dataset(const SyntheticOptions& options);

/// Order-sensitive FNV-1a digest of every coordinate, feature and label.
std::uint64_t dataset_checksum(const Dataset& dataset);

/// Text manifest describing an on-disk dataset:
///   classes = chair,table
///   points = 256
///   seed = 0
///   train chair chairs/0001.xyz
///   test table tables/0042.bin
/// Paths are relative to the manifest's directory; `#` starts a comment.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  struct Entry {
    std::string split;
    std::size_t label = 0;
    std::filesystem::path path;
  };
  std::vector<Entry> entries;
  std::size_t points = 256;
  std::uint64_t seed = 0;
};

/// Throws DataError for unreadable files, unknown labels or malformed lines.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Loads every entry, subsamples each cloud to `points` (seeded) and
/// normalizes it. Clouds with fewer points are a DataError.
Dataset load_dataset(const DatasetManifest& manifest);

// Text format: one point per line, `x y z [f1 ... fD]`; `#` comments and blank
// lines are ignored. Values are written with 17 significant digits.
PointCloud load_xyz(const std::filesystem::path& path);
void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);

// Binary format: "SPC1", uint32 N, uint32 D, then N x (3 + D) float32 values,
// all little-endian.
PointCloud load_bin(const std::filesystem::path& path);
void save_bin(const PointCloud& cloud, const std::filesystem::path& path);

/// Dispatches on the extension (.bin, anything else is text).
PointCloud load_cloud(const std::filesystem::path& path);

}  // namespace shufflepoint
