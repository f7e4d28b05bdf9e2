// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/model.hpp"

#include <algorithm>
#include <limits>

#include "shufflepoint/errors.hpp"
#include "shufflepoint/optim.hpp"

namespace shufflepoint {

namespace {

Matrix stack_rows(std::span<const Matrix> parts, std::size_t cols) {
  std::size_t rows = 0;
  for (const Matrix& m : parts) rows += m.rows();
  Matrix out(rows, cols);
  std::size_t at = 0;
  for (const Matrix& m : parts) {
    std::copy(m.values().begin(), m.values().end(), out.data() + at * cols);
    at += m.rows();
  }
  return out;
}

Matrix centroid_rows(const Matrix& coords, std::size_t segment) {
  Matrix out(coords.rows(), 3);
  for (std::size_t base = 0; base < coords.rows(); base += segment) {
    double c[3] = {0.0, 0.0, 0.0};
    for (std::size_t i = base; i < base + segment; ++i)
      for (int a = 0; a < 3; ++a) c[a] += coords(i, a);
    for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(segment);
    for (std::size_t i = base; i < base + segment; ++i)
      for (int a = 0; a < 3; ++a) out(i, a) = c[a];
  }
  return out;
}

std::size_t nearest_to_centroid(const Matrix& coords) {
  double c[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < coords.rows(); ++i)
    for (int a = 0; a < 3; ++a) c[a] += coords(i, a);
  for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(coords.rows());
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) d2 += (coords(i, a) - c[a]) * (coords(i, a) - c[a]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (block_points[0] == 0 || block_points[1] == 0 || block_points[1] > block_points[0]) {
    throw ConfigError("block_points must satisfy 0 < second <= first");
  }
  for (std::size_t w : widths) {
    if (w < 2 || w % 2 != 0) throw ConfigError("block widths must be even and positive");
    if ((w / 2) % shuffle.channel_groups != 0) {
      throw ConfigError("channel_groups must divide half of every block width");
    }
    if (w < 4) throw ConfigError("block widths must be at least 4 for channel attention");
  }
  for (double r : radii)
    if (!(r > 0.0)) throw ConfigError("radii must be positive");
  if (group_size == 0) throw ConfigError("group_size must be positive");
  if (psn_layers == 0) throw ConfigError("psn_layers must be positive");
  for (std::size_t w : head_widths)
    if (w == 0) throw ConfigError("head widths must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (shuffle.sample_groups == 0 || shuffle.channel_groups == 0) {
    throw ConfigError("shuffle group counts must be at least 1");
  }
  if (sampler == SamplerKind::kClusterFps) {
    if (sampler_clusters == 0 || block_points[0] % sampler_clusters != 0 ||
        block_points[1] % sampler_clusters != 0) {
      throw ConfigError("sampler_clusters must divide both block point counts");
    }
  }
  if (!(bn_eps > 0.0) || bn_momentum < 0.0 || bn_momentum >= 1.0) {
    throw ConfigError("bn_eps must be positive and bn_momentum in [0, 1)");
  }
}

std::vector<std::size_t> sample_centers(const PointCloud& cloud, std::size_t count,
                                        const ModelConfig& config) {
  if (config.sampler == SamplerKind::kFps) {
    const std::size_t start =
        config.fps_start == FpsStart::kFirst ? 0 : nearest_to_centroid(cloud.coords);
    return fps(cloud, count, start).indices;
  }
  ClusterFpsOptions opt;
  opt.n_clusters = config.sampler_clusters;
  opt.m_neighbors = config.sampler_neighbors;
  opt.k_total = count;
  opt.seed = config.sampler_seed;
  opt.threads = 1;
  return cluster_fps(cloud, opt).indices;
}

namespace detail {

Var LinearLayer::operator()(const Var& x, Tape* tape) const {
  return linear(x, bind(*w, tape), bind(*b, tape));
}

Var BatchNormLayer::operator()(const Var& x, const ForwardContext& ctx, bool update_running) const {
  return batch_norm(x, bind(*gamma, ctx.tape), bind(*beta, ctx.tape), *stats, ctx.mode,
                    update_running && ctx.mode == Mode::kTrain);
}

Var DenseBnRelu::operator()(const Var& x, const ForwardContext& ctx, bool update_running) const {
  return relu(bn(linear(x, ctx.tape), ctx, update_running));
}

}  // namespace detail

PsnLayerOutput psn_layer_forward(const detail::PsnLayer& layer, const Var& coords,
                                 const Var& features, std::size_t segment,
                                 const ShuffleSpec& spec, const ForwardContext& ctx) {
  if (features.cols() != layer.width || layer.width % 2 != 0) {
    throw DimensionError("shuffle layer of width " + std::to_string(layer.width) +
                         " got features " + features.value().shape_string());
  }
  const std::size_t half = layer.width / 2;
  Var residual = slice_cols(features, 0, half);
  Var active = slice_cols(features, half, half);

  auto branch = [&layer, &ctx](bool update_running) {
    return FeatureMap([&layer, &ctx, update_running](const Var& in) {
      Var h = in;
      for (const detail::DenseBnRelu& stage : layer.branch) h = stage(h, ctx, update_running);
      return h;
    });
  };

  PsnLayerOutput out;
  Var shuffled = her_shuffled_branch(active, coords, branch(true), spec, segment);
  out.out = concat_cols(residual, shuffled);
  if (ctx.collect_pairs && ctx.mode == Mode::kTrain) {
    // Running statistics follow the shuffled branch only.
    Var sigma = branch(false)(concat_cols(coords, active));
    out.pair.emplace(active, sigma, shuffled, layer.id);
  }
  return out;
}

Var channel_attention(const detail::AttentionLayer& layer, const Var& features,
                      const Matrix& coords, std::size_t segment, const ForwardContext& ctx) {
  const std::size_t d = features.cols();
  if (coords.rows() != features.rows() || coords.cols() != 3) {
    throw DimensionError("channel attention: coordinates " + coords.shape_string() +
                         " do not pair with features " + features.value().shape_string());
  }
  Var w1 = bind(*layer.reduce.w, ctx.tape);
  // [descriptor, coord] W1 == descriptor W1[:d] + coord W1[d:]; the descriptor
  // part is shared by every row of a cloud.
  Var descriptor = segment_max_rows(features, segment);
  Var from_descriptor = linear(descriptor, slice_rows(w1, 0, d), bind(*layer.reduce.b, ctx.tape));
  Var from_coords = matmul(Var::constant(coords), slice_rows(w1, d, 3));
  Var hidden = relu(add(repeat_rows(from_descriptor, segment), from_coords));
  Var gate = sigmoid(layer.expand(hidden, ctx.tape));
  return mul(features, gate);
}

PointClassifier::PointClassifier(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  std::size_t in = config_.input_features + 3;
  std::size_t psn_id = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    const std::size_t w = config_.widths[b];
    detail::Block block;
    block.stem = make_dense(prefix + ".stem", in, w, rng);
    for (std::size_t l = 0; l < config_.psn_layers; ++l) {
      detail::PsnLayer layer;
      layer.width = w;
      layer.id = psn_id++;
      const std::string lp = prefix + ".psn" + std::to_string(l);
      const std::size_t half = w / 2;
      for (std::size_t s = 0; s < 3; ++s) {
        layer.branch[s] = make_dense(lp + ".branch" + std::to_string(s), s == 0 ? half + 3 : half,
                                     half, rng);
      }
      block.layers.push_back(layer);
    }
    if (b < 2) {
      block.has_attention = true;
      block.attention.reduce = make_linear(prefix + ".attention.reduce", w + 3, w / 4, rng);
      block.attention.expand = make_linear(prefix + ".attention.expand", w / 4, w, rng);
    }
    blocks_.push_back(std::move(block));
    in = w + 3;
  }
  std::size_t width = config_.widths[2];
  for (std::size_t h = 0; h < config_.head_widths.size(); ++h) {
    head_.push_back(make_dense("head" + std::to_string(h), width, config_.head_widths[h], rng));
    width = config_.head_widths[h];
  }
  classifier_ = make_linear("classifier", width, config_.num_classes, rng);
}

Parameter* PointClassifier::add_param(std::string name, Matrix value) {
  params_.emplace_back(std::move(name), std::move(value));
  return &params_.back();
}

detail::LinearLayer PointClassifier::make_linear(const std::string& name, std::size_t in,
                                                 std::size_t out, std::mt19937_64& rng) {
  detail::LinearLayer layer;
  layer.w = add_param(name + ".w", uniform_fan_in(in, out, rng));
  layer.b = add_param(name + ".b", Matrix(1, out));
  return layer;
}

detail::BatchNormLayer PointClassifier::make_bn(const std::string& name, std::size_t channels) {
  detail::BatchNormLayer layer;
  layer.gamma = add_param(name + ".gamma", Matrix(1, channels, 1.0));
  layer.beta = add_param(name + ".beta", Matrix(1, channels, 0.0));
  BatchNormStats& stats = stats_.emplace_back(channels);
  stats.momentum = config_.bn_momentum;
  stats.eps = config_.bn_eps;
  layer.stats = &stats;
  stats_names_.push_back(name);
  return layer;
}

detail::DenseBnRelu PointClassifier::make_dense(const std::string& name, std::size_t in,
                                                std::size_t out, std::mt19937_64& rng) {
  detail::DenseBnRelu layer;
  layer.linear = make_linear(name, in, out, rng);
  layer.bn = make_bn(name + ".bn", out);
  return layer;
}

std::vector<Parameter*> PointClassifier::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::size_t PointClassifier::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

std::vector<std::pair<std::string, BatchNormStats*>> PointClassifier::batch_norm_stats() {
  std::vector<std::pair<std::string, BatchNormStats*>> out;
  for (std::size_t i = 0; i < stats_.size(); ++i) out.emplace_back(stats_names_[i], &stats_[i]);
  return out;
}

std::vector<std::size_t> PointClassifier::psn_widths() const {
  std::vector<std::size_t> out;
  for (const detail::Block& b : blocks_)
    for (const detail::PsnLayer& l : b.layers) out.push_back(l.width);
  return out;
}

ForwardResult PointClassifier::forward(const PointCloud& cloud, ForwardContext& ctx) const {
  const PointCloud* one[] = {&cloud};
  return forward(std::span<const PointCloud* const>(one), ctx);
}

ForwardResult PointClassifier::forward(std::span<const PointCloud* const> batch,
                                       ForwardContext& ctx) const {
  if (batch.empty()) throw EmptyInputError("forward needs at least one cloud");
  if (ctx.mode == Mode::kTrain && config_.dropout > 0.0 && ctx.dropout_rng == nullptr) {
    throw ContractError("train-mode forward needs a dropout generator");
  }
  for (const PointCloud* c : batch) {
    if (c->coords.cols() != 3) {
      throw DimensionError("coordinates must be N x 3, got " + c->coords.shape_string());
    }
    if (c->size() < config_.min_points()) {
      throw CardinalityError("cloud has " + std::to_string(c->size()) +
                             " points; the model samples " + std::to_string(config_.min_points()));
    }
    if (c->feature_dim() != config_.input_features) {
      throw DimensionError("model expects " + std::to_string(config_.input_features) +
                           " input features, cloud has " + std::to_string(c->feature_dim()));
    }
  }
  const std::size_t n_clouds = batch.size();
  ForwardResult result;

  auto run_layers = [&](const detail::Block& block, Var h, const Var& coords, std::size_t segment) {
    for (const detail::PsnLayer& layer : block.layers) {
      PsnLayerOutput o = psn_layer_forward(layer, coords, h, segment, config_.shuffle, ctx);
      h = o.out;
      if (o.pair) result.pairs.push_back(std::move(*o.pair));
    }
    return h;
  };

  // Current level: per-cloud coordinates and stacked features (row offsets per cloud).
  std::vector<Matrix> level_coords;
  std::vector<std::size_t> offsets;
  Var features;
  {
    std::vector<Matrix> feats;
    std::size_t at = 0;
    for (const PointCloud* c : batch) {
      level_coords.push_back(c->coords);
      offsets.push_back(at);
      at += c->size();
      if (config_.input_features > 0) feats.push_back(c->features);
    }
    if (config_.input_features > 0) features = Var::constant(stack_rows(feats, config_.input_features));
  }

  const std::size_t k = config_.group_size;
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t s = config_.block_points[b];
    std::vector<std::size_t> members;
    members.reserve(n_clouds * s * k);
    Matrix relative(n_clouds * s * k, 3);
    std::vector<Matrix> next_coords;
    std::size_t row = 0;
    for (std::size_t c = 0; c < n_clouds; ++c) {
      const PointCloud level(level_coords[c]);
      SampleResult centers;
      centers.indices = sample_centers(level, s, config_);
      const IndexTable groups = ball_query(level, centers, config_.radii[b], k);
      Matrix kept(s, 3);
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t center = centers.indices[i];
        for (int a = 0; a < 3; ++a) kept(i, a) = level.coords(center, a);
        for (std::size_t j = 0; j < k; ++j, ++row) {
          const std::size_t m = groups(i, j);
          members.push_back(offsets[c] + m);
          for (int a = 0; a < 3; ++a) relative(row, a) = level.coords(m, a) - kept(i, a);
        }
      }
      next_coords.push_back(std::move(kept));
    }
    const Var rel = Var::constant(std::move(relative));
    Var in = features.valid() ? concat_cols(gather_rows(features, members), rel) : rel;
    const detail::Block& block = blocks_[b];
    Var h = block.stem(in, ctx);
    h = run_layers(block, h, rel, k);
    h = segment_max_rows(h, k);

    Matrix centers_xyz = stack_rows(next_coords, 3);
    if (config_.attention_coords == AttentionCoords::kCentroid) centers_xyz = centroid_rows(centers_xyz, s);
    h = channel_attention(block.attention, h, centers_xyz, s, ctx);

    features = h;
    level_coords = std::move(next_coords);
    for (std::size_t c = 0; c < n_clouds; ++c) offsets[c] = c * s;
  }

  // Global block: one group per cloud holding every remaining point.
  const std::size_t s = config_.block_points[1];
  const Var xyz = Var::constant(stack_rows(level_coords, 3));
  const detail::Block& last = blocks_[2];
  Var h = last.stem(concat_cols(features, xyz), ctx);
  h = run_layers(last, h, xyz, s);
  h = segment_max_rows(h, s);

  for (const detail::DenseBnRelu& dense : head_) {
    h = dense(h, ctx);
    if (ctx.mode == Mode::kTrain && config_.dropout > 0.0) h = dropout(h, config_.dropout, *ctx.dropout_rng);
  }
  result.logits = classifier_(h, ctx.tape);
  return result;
}

}  // namespace shufflepoint
