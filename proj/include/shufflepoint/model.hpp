// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "shufflepoint/lmir.hpp"
#include "shufflepoint/point_cloud.hpp"
#include "shufflepoint/sampling.hpp"
#include "shufflepoint/shuffle.hpp"
#include "shufflepoint/tape.hpp"

namespace shufflepoint {

/// Where the first fps pick lands inside the model's sampling layers.
enum class FpsStart {
  kFirst,     // index 0
  kCentroid,  // point nearest the cloud centroid (permutation-equivariant)
};

/// Coordinate concatenated to the channel-attention descriptor.
enum class AttentionCoords {
  kPoint,     // each point's own coordinate
  kCentroid,  // the centroid of the cloud's points, same for every row
};

struct ModelConfig {
  std::size_t input_features = 0;
  std::size_t num_classes = 4;
  /// Centers kept by the two sampling blocks; the third block pools everything left.
  std::array<std::size_t, 2> block_points{64, 32};
  std::array<std::size_t, 3> widths{32, 64, 128};
  std::array<double, 2> radii{0.35, 0.7};
  std::size_t group_size = 8;
  std::size_t psn_layers = 3;
  std::vector<std::size_t> head_widths{128, 64};
  double dropout = 0.4;
  ShuffleSpec shuffle{4, 4};
  SamplerKind sampler = SamplerKind::kClusterFps;
  std::size_t sampler_clusters = 4;
  std::size_t sampler_neighbors = 0;
  std::uint64_t sampler_seed = 0;
  FpsStart fps_start = FpsStart::kFirst;
  AttentionCoords attention_coords = AttentionCoords::kPoint;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  /// Throws ConfigError when the configuration cannot build a model.
  void validate() const;
  /// Fewest input points a cloud may have.
  std::size_t min_points() const { return block_points[0]; }
};

struct ForwardContext {
  Mode mode = Mode::kEval;
  /// Null for untraced inference.
  Tape* tape = nullptr;
  /// Required when mode is kTrain and dropout > 0.
  std::mt19937_64* dropout_rng = nullptr;
  /// Compute the un-shuffled branch and emit one MiPair per shuffle layer.
  bool collect_pairs = false;
};

struct ForwardResult {
  Var logits;  // batch x classes
  std::vector<MiPair> pairs;
};

class PointClassifier;

namespace detail {

struct LinearLayer {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
  Var operator()(const Var& x, Tape* tape) const;
};

struct BatchNormLayer {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  BatchNormStats* stats = nullptr;
  Var operator()(const Var& x, const ForwardContext& ctx, bool update_running = true) const;
};

struct DenseBnRelu {
  LinearLayer linear;
  BatchNormLayer bn;
  Var operator()(const Var& x, const ForwardContext& ctx, bool update_running = true) const;
};

struct PsnLayer {
  std::size_t width = 0;
  std::size_t id = 0;  // global index, used as the MiPair block id
  std::array<DenseBnRelu, 3> branch;
};

struct AttentionLayer {
  LinearLayer reduce;  // (D + 3) -> D/4, stored as one weight
  LinearLayer expand;  // D/4 -> D
};

struct Block {
  DenseBnRelu stem;
  std::vector<PsnLayer> layers;
  bool has_attention = false;
  AttentionLayer attention;
};

}  // namespace detail

struct PsnLayerOutput {
  Var out;
  std::optional<MiPair> pair;
};

/// One shuffle layer: split channels in half, keep the first half as a
/// residual, run the second through the coordinate-conditioned branch with
/// both shuffles, and concatenate. `segment` is the number of rows per group;
/// the sample shuffle never crosses a group.
PsnLayerOutput psn_layer_forward(const detail::PsnLayer& layer, const Var& coords,
                                 const Var& features, std::size_t segment,
                                 const ShuffleSpec& spec, const ForwardContext& ctx);

/// Gates each row of `features` by sigmoid(MLP(descriptor (+) coordinate)),
/// where the descriptor is the column-wise max over each run of `segment`
/// rows (one cloud).
Var channel_attention(const detail::AttentionLayer& layer, const Var& features,
                      const Matrix& coords, std::size_t segment, const ForwardContext& ctx);

/// Hierarchical point-cloud classifier: two sample-and-group blocks, one
/// global block and a fully connected head.
class PointClassifier {
 public:
  PointClassifier(const ModelConfig& config, std::uint64_t init_seed);

  PointClassifier(PointClassifier&&) = default;
  PointClassifier& operator=(PointClassifier&&) = default;
  PointClassifier(const PointClassifier&) = delete;
  PointClassifier& operator=(const PointClassifier&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Logits for a batch of clouds; clouds may differ in size.
  ForwardResult forward(std::span<const PointCloud* const> batch, ForwardContext& ctx) const;
  ForwardResult forward(const PointCloud& cloud, ForwardContext& ctx) const;

  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  /// Running statistics of every batch-norm layer, in construction order.
  std::vector<std::pair<std::string, BatchNormStats*>> batch_norm_stats();

  /// Width of every shuffle layer in order; its pairs have width / 2 columns.
  std::vector<std::size_t> psn_widths() const;

  const std::vector<detail::Block>& blocks() const { return blocks_; }

 private:
  Parameter* add_param(std::string name, Matrix value);
  detail::LinearLayer make_linear(const std::string& name, std::size_t in, std::size_t out,
                                  std::mt19937_64& rng);
  detail::BatchNormLayer make_bn(const std::string& name, std::size_t channels);
  detail::DenseBnRelu make_dense(const std::string& name, std::size_t in, std::size_t out,
                                 std::mt19937_64& rng);

  ModelConfig config_;
  std::deque<Parameter> params_;
  std::deque<BatchNormStats> stats_;
  std::vector<std::string> stats_names_;
  std::vector<detail::Block> blocks_;
  std::vector<detail::DenseBnRelu> head_;
  detail::LinearLayer classifier_;
};

/// Indices of the centers a sampling block keeps; shared by the model and tests.
std::vector<std::size_t> sample_centers(const PointCloud& cloud, std::size_t count,
                                        const ModelConfig& config);

}  // namespace shufflepoint
