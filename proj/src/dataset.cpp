// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "io_util.hpp"
#include "shufflepoint/errors.hpp"
#include "shufflepoint/seed.hpp"

namespace shufflepoint {

namespace {

using detail::format_double;
using detail::get_le;
using detail::parse_double;
using detail::put_le;
using detail::trim;

constexpr double kTorusMajor = 1.0;
constexpr double kTorusMinor = 0.4;

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

void scale_to_unit(Matrix& coords) {
  double max_norm = 0.0;
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    const double n2 = coords(i, 0) * coords(i, 0) + coords(i, 1) * coords(i, 1) +
                      coords(i, 2) * coords(i, 2);
    max_norm = std::max(max_norm, std::sqrt(n2));
  }
  if (max_norm > 0.0)
    for (double& v : coords.values()) v /= max_norm;
}

}  // namespace

const char* shape_name(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::kSphere: return "sphere";
    case ShapeClass::kCube: return "cube";
    case ShapeClass::kTorus: return "torus";
    case ShapeClass::kCylinder: return "cylinder";
  }
  return "unknown";
}

ShapeClass parse_shape(const std::string& name) {
  for (ShapeClass s : {ShapeClass::kSphere, ShapeClass::kCube, ShapeClass::kTorus,
                       ShapeClass::kCylinder})
    if (name == shape_name(s)) return s;
  throw ConfigError("unknown shape class '" + name + "' (expected sphere, cube, torus or cylinder)");
}

Matrix sample_surface(ShapeClass shape, std::size_t n_points, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  Matrix xyz(n_points, 3);
  for (std::size_t i = 0; i < n_points; ++i) {
    double* p = xyz.data() + i * 3;
    switch (shape) {
      case ShapeClass::kSphere: {
        double n = 0.0;
        do {
          for (int a = 0; a < 3; ++a) p[a] = gauss(rng);
          n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        } while (n < 1e-12);
        for (int a = 0; a < 3; ++a) p[a] /= n;
        break;
      }
      case ShapeClass::kCube: {
        const auto face = std::uniform_int_distribution<int>(0, 5)(rng);
        const int axis = face / 2;
        p[axis] = face % 2 == 0 ? -1.0 : 1.0;
        p[(axis + 1) % 3] = sym(rng);
        p[(axis + 2) % 3] = sym(rng);
        break;
      }
      case ShapeClass::kTorus: {
        // Area element is proportional to R + r cos(theta); rejection keeps it uniform.
        double theta = 0.0;
        do {
          theta = two_pi * unit(rng);
        } while (unit(rng) * (kTorusMajor + kTorusMinor) > kTorusMajor + kTorusMinor * std::cos(theta));
        const double phi = two_pi * unit(rng);
        const double ring = kTorusMajor + kTorusMinor * std::cos(theta);
        p[0] = ring * std::cos(phi);
        p[1] = ring * std::sin(phi);
        p[2] = kTorusMinor * std::sin(theta);
        break;
      }
      case ShapeClass::kCylinder: {
        // Side area 4 pi, caps 2 pi together.
        const double phi = two_pi * unit(rng);
        if (unit(rng) < 2.0 / 3.0) {
          p[0] = std::cos(phi);
          p[1] = std::sin(phi);
          p[2] = sym(rng);
        } else {
          const double r = std::sqrt(unit(rng));
          p[0] = r * std::cos(phi);
          p[1] = r * std::sin(phi);
          p[2] = unit(rng) < 0.5 ? -1.0 : 1.0;
        }
        break;
      }
    }
  }
  return xyz;
}

PointCloud generate_synthetic(ShapeClass shape, std::size_t n_points, double noise,
                              std::uint64_t seed) {
  if (n_points == 0) throw ConfigError("synthetic clouds need at least one point");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  std::mt19937_64 rng(seed);
  Matrix xyz = sample_surface(shape, n_points, rng);
  if (noise > 0.0) {
    std::normal_distribution<double> jitter(0.0, noise);
    for (double& v : xyz.values()) v += jitter(rng);
  }
  scale_to_unit(xyz);
  return PointCloud(std::move(xyz), Matrix(n_points, 0), static_cast<std::size_t>(shape));
}

void normalize_unit_sphere(Matrix& coords) {
  if (coords.rows() == 0) return;
  double c[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < coords.rows(); ++i)
    for (int a = 0; a < 3; ++a) c[a] += coords(i, a);
  for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(coords.rows());
  for (std::size_t i = 0; i < coords.rows(); ++i)
    for (int a = 0; a < 3; ++a) coords(i, a) -= c[a];
  scale_to_unit(coords);
}

PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentOptions& options) {
  std::mt19937_64 rng(seed);
  PointCloud out = cloud;
  if (options.rotate) {
    const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x = cloud.coords(i, 0);
      const double y = cloud.coords(i, 1);
      out.coords(i, 0) = c * x - s * y;
      out.coords(i, 1) = s * x + c * y;
    }
  }
  if (options.jitter > 0.0) {
    std::normal_distribution<double> jitter(0.0, options.jitter);
    for (double& v : out.coords.values()) v += jitter(rng);
  }
  return out;
}

Dataset make_synthetic_dataset(const SyntheticOptions& options) {
  if (options.classes.size() < 2) throw ConfigError("the synthetic task needs at least two classes");
  if (options.points == 0) throw ConfigError("points must be positive");
  Dataset ds;
  for (ShapeClass s : options.classes) ds.class_names.emplace_back(shape_name(s));
  std::uint64_t stream = 0;
  auto fill = [&](std::vector<PointCloud>& split, std::size_t per_class) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < options.classes.size(); ++c) {
        PointCloud cloud = generate_synthetic(options.classes[c], options.points, options.noise,
                                              derive_seed(options.seed, stream++));
        cloud.label = c;
        split.push_back(std::move(cloud));
      }
    }
  };
  fill(ds.train, options.train_per_class);
  fill(ds.test, options.test_per_class);
  return ds;
}

std::uint64_t dataset_checksum(const Dataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const std::string& name : dataset.class_names) mix(name.data(), name.size());
  for (const auto* split : {&dataset.train, &dataset.test}) {
    for (const PointCloud& c : *split) {
      mix(c.coords.data(), c.coords.size() * sizeof(double));
      mix(c.features.data(), c.features.size() * sizeof(double));
      const std::uint64_t label = c.label.value_or(~std::uint64_t{0});
      mix(&label, sizeof(label));
    }
  }
  return h;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::vector<std::pair<std::size_t, std::vector<std::string>>> pending;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      const std::string key = trim(std::string_view(line).substr(0, eq));
      const std::string value = trim(std::string_view(line).substr(eq + 1));
      if (key == "classes") {
        std::stringstream ss(value);
        for (std::string name; std::getline(ss, name, ',');)
          if (!trim(name).empty()) m.class_names.push_back(trim(name));
      } else if (key == "points" || key == "seed") {
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (ec != std::errc() || ptr != value.data() + value.size()) {
          throw DataError(path.string() + ":" + std::to_string(lineno) + ": '" + key +
                          "' needs a non-negative integer, got '" + value + "'");
        }
        if (key == "points") {
          m.points = static_cast<std::size_t>(v);
        } else {
          m.seed = v;
        }
      } else {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
      continue;
    }
    auto fields = split_ws(line);
    if (fields.size() != 3 || (fields[0] != "train" && fields[0] != "test")) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected '<train|test> <class> <path>'");
    }
    pending.emplace_back(lineno, std::move(fields));
  }
  if (m.class_names.empty()) throw DataError(path.string() + ": missing 'classes = ...'");
  for (auto& [lineno, fields] : pending) {
    const auto it = std::find(m.class_names.begin(), m.class_names.end(), fields[1]);
    if (it == m.class_names.end()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown class '" +
                      fields[1] + "'");
    }
    DatasetManifest::Entry e;
    e.split = fields[0];
    e.label = static_cast<std::size_t>(it - m.class_names.begin());
    e.path = m.root / fields[2];
    if (!std::filesystem::exists(e.path)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing file " +
                      e.path.string());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Dataset load_dataset(const DatasetManifest& manifest) {
  Dataset ds;
  ds.class_names = manifest.class_names;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    PointCloud cloud = load_cloud(e.path);
    if (cloud.size() < manifest.points) {
      throw DataError(e.path.string() + " has " + std::to_string(cloud.size()) +
                      " points; the manifest asks for " + std::to_string(manifest.points));
    }
    if (cloud.size() > manifest.points) {
      std::vector<std::size_t> idx(cloud.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(manifest.seed, i));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(manifest.points);
      std::sort(idx.begin(), idx.end());
      cloud = cloud.subset(idx);
    }
    normalize_unit_sphere(cloud.coords);
    cloud.label = e.label;
    (e.split == "train" ? ds.train : ds.test).push_back(std::move(cloud));
  }
  return ds;
}

PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() < 3) {
      throw DataError(where + ": expected at least 3 values, found " + std::to_string(fields.size()));
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw DataError(where + ": expected " + std::to_string(width) + " values, found " +
                      std::to_string(fields.size()));
    }
    for (const std::string& f : fields) {
      double v = 0.0;
      if (!parse_double(f, v) || !std::isfinite(v)) throw DataError(where + ": bad number '" + f + "'");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(path.string() + ": no points");
  Matrix all(rows, width, std::move(values));
  Matrix xyz(rows, 3);
  Matrix feats(rows, width - 3);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < 3; ++j) xyz(i, j) = all(i, j);
    for (std::size_t j = 3; j < width; ++j) feats(i, j - 3) = all(i, j);
  }
  return PointCloud(std::move(xyz), std::move(feats));
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::string line;
    for (std::size_t j = 0; j < 3; ++j) {
      if (j > 0) line += ' ';
      line += format_double(cloud.coords(i, j));
    }
    for (std::size_t j = 0; j < cloud.feature_dim(); ++j) {
      line += ' ';
      line += format_double(cloud.features(i, j));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw DataError("failed writing " + path.string());
}

PointCloud load_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SPC1", 4) != 0) {
    throw DataError(path.string() + ": not an SPC1 file");
  }
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  if (!get_le(in, n) || !get_le(in, d)) throw DataError(path.string() + ": truncated header");
  if (n == 0) throw DataError(path.string() + ": no points");
  const std::uintmax_t expected = 12 + std::uintmax_t{n} * (3 + d) * 4;
  if (std::filesystem::file_size(path) != expected) {
    throw DataError(path.string() + ": size " + std::to_string(std::filesystem::file_size(path)) +
                    " does not match header (expected " + std::to_string(expected) + ")");
  }
  Matrix xyz(n, 3);
  Matrix feats(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < 3 + d; ++j) {
      float v = 0.0f;
      if (!get_le(in, v)) throw DataError(path.string() + ": truncated data");
      (j < 3 ? xyz(i, j) : feats(i, j - 3)) = static_cast<double>(v);
    }
  }
  PointCloud cloud(std::move(xyz), std::move(feats));
  cloud.validate();
  return cloud;
}

void save_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("SPC1", 4);
  put_le(out, static_cast<std::uint32_t>(cloud.size()));
  put_le(out, static_cast<std::uint32_t>(cloud.feature_dim()));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) put_le(out, static_cast<float>(cloud.coords(i, j)));
    for (std::size_t j = 0; j < cloud.feature_dim(); ++j)
      put_le(out, static_cast<float>(cloud.features(i, j)));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

PointCloud load_cloud(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? load_bin(path) : load_xyz(path);
}

}  // namespace shufflepoint
