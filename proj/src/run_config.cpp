// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/run_config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

#include "io_util.hpp"
#include "shufflepoint/errors.hpp"
#include "shufflepoint/seed.hpp"

namespace shufflepoint {

namespace {

using detail::format_shortest;
using detail::trim;

constexpr std::uint64_t kModelInitStream = 0x6d6f64656c;

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  // Throws std::invalid_argument with a description of the expected value.
  std::function<void(RunConfig&, const std::string&)> set;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t comma = s.find(',', begin);
    out.push_back(trim(std::string_view(s).substr(begin, comma - begin)));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) {
    throw std::invalid_argument("a non-negative integer");
  }
  return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

double to_double(const std::string& s) {
  double v = 0.0;
  if (!detail::parse_double(s, v) || !std::isfinite(v)) throw std::invalid_argument("a finite number");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("true or false");
}

template <typename T, typename F>
std::string join(const T& items, F&& fmt) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ",";
    out += fmt(item);
  }
  return out;
}

template <std::size_t N, typename T, typename F>
std::array<T, N> to_array(const std::string& s, F&& parse) {
  const auto parts = split_list(s);
  if (parts.size() != N) throw std::invalid_argument(std::to_string(N) + " comma-separated values");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse(parts[i]);
  return out;
}

std::string fmt_size(std::size_t v) { return std::to_string(v); }

// Builders for the common field kinds. `ref` maps a config to the field.
template <typename Ref>
Key u64_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = to_u64(v); }};
}

template <typename Ref>
Key size_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = to_size(v); }};
}

template <typename Ref>
Key double_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](const RunConfig& c) { return format_shortest(ref(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = to_double(v); }};
}

template <typename Ref>
Key bool_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = to_bool(v); }};
}

// Enum keys reuse the library's name/parse pairs, which throw ConfigError.
template <typename Ref, typename Name, typename Parse>
Key enum_key(std::string name, Ref ref, Name to_name, Parse parse) {
  return {std::move(name),
          [ref, to_name](const RunConfig& c) { return std::string(to_name(ref(c))); },
          [ref, parse](RunConfig& c, const std::string& v) { ref(c) = parse(v); }};
}

const char* fps_start_name(FpsStart s) { return s == FpsStart::kFirst ? "first" : "centroid"; }
FpsStart parse_fps_start(const std::string& s) {
  if (s == "first") return FpsStart::kFirst;
  if (s == "centroid") return FpsStart::kCentroid;
  throw std::invalid_argument("first or centroid");
}

const char* attention_name(AttentionCoords a) { return a == AttentionCoords::kPoint ? "point" : "centroid"; }
AttentionCoords parse_attention(const std::string& s) {
  if (s == "point") return AttentionCoords::kPoint;
  if (s == "centroid") return AttentionCoords::kCentroid;
  throw std::invalid_argument("point or centroid");
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(u64_key("seed", FIELD(seed)));
    k.push_back(size_key("threads", FIELD(threads)));
    k.push_back({"data.manifest", [](const RunConfig& c) { return c.manifest.string(); },
                 [](RunConfig& c, const std::string& v) { c.manifest = v; }});

    k.push_back({"synthetic.classes",
                 [](const RunConfig& c) { return join(c.synthetic.classes, shape_name); },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<ShapeClass> out;
                   for (const std::string& s : split_list(v)) out.push_back(parse_shape(s));
                   c.synthetic.classes = out;
                 }});
    k.push_back(size_key("synthetic.train_per_class", FIELD(synthetic.train_per_class)));
    k.push_back(size_key("synthetic.test_per_class", FIELD(synthetic.test_per_class)));
    k.push_back(size_key("synthetic.points", FIELD(synthetic.points)));
    k.push_back(double_key("synthetic.noise", FIELD(synthetic.noise)));
    k.push_back(u64_key("synthetic.seed", FIELD(synthetic.seed)));

    k.push_back({"model.block_points",
                 [](const RunConfig& c) { return join(c.model.block_points, fmt_size); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.block_points = to_array<2, std::size_t>(v, to_size);
                 }});
    k.push_back({"model.widths", [](const RunConfig& c) { return join(c.model.widths, fmt_size); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.widths = to_array<3, std::size_t>(v, to_size);
                 }});
    k.push_back({"model.radii",
                 [](const RunConfig& c) { return join(c.model.radii, format_shortest); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.radii = to_array<2, double>(v, to_double);
                 }});
    k.push_back(size_key("model.group_size", FIELD(model.group_size)));
    k.push_back(size_key("model.psn_layers", FIELD(model.psn_layers)));
    k.push_back({"model.head_widths",
                 [](const RunConfig& c) { return join(c.model.head_widths, fmt_size); },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::size_t> out;
                   for (const std::string& s : split_list(v)) out.push_back(to_size(s));
                   c.model.head_widths = out;
                 }});
    k.push_back(double_key("model.dropout", FIELD(model.dropout)));
    k.push_back(size_key("model.sample_groups", FIELD(model.shuffle.sample_groups)));
    k.push_back(size_key("model.channel_groups", FIELD(model.shuffle.channel_groups)));
    k.push_back(enum_key("model.sampler", FIELD(model.sampler), sampler_name, parse_sampler));
    k.push_back(size_key("model.sampler_clusters", FIELD(model.sampler_clusters)));
    k.push_back(size_key("model.sampler_neighbors", FIELD(model.sampler_neighbors)));
    k.push_back(u64_key("model.sampler_seed", FIELD(model.sampler_seed)));
    k.push_back(enum_key("model.fps_start", FIELD(model.fps_start), fps_start_name, parse_fps_start));
    k.push_back(enum_key("model.attention_coords", FIELD(model.attention_coords), attention_name,
                         parse_attention));
    k.push_back(double_key("model.bn_momentum", FIELD(model.bn_momentum)));
    k.push_back(double_key("model.bn_eps", FIELD(model.bn_eps)));

    k.push_back(size_key("train.epochs", FIELD(train.epochs)));
    k.push_back(size_key("train.batch_size", FIELD(train.batch_size)));
    k.push_back(double_key("train.lr", FIELD(train.lr)));
    k.push_back(double_key("train.beta1", FIELD(train.beta1)));
    k.push_back(double_key("train.beta2", FIELD(train.beta2)));
    k.push_back(double_key("train.adam_eps", FIELD(train.adam_eps)));
    k.push_back(u64_key("train.t_max", FIELD(train.t_max)));
    k.push_back(double_key("train.min_lr", FIELD(train.min_lr)));
    k.push_back(double_key("train.lambda", FIELD(train.lambda)));
    k.push_back(enum_key("train.estimator", FIELD(train.estimator), estimator_name, parse_estimator));
    k.push_back(size_key("train.disc_hidden", FIELD(train.disc_hidden)));
    k.push_back(bool_key("train.augment", FIELD(train.augment)));
    k.push_back(double_key("train.jitter", FIELD(train.jitter)));
    k.push_back(double_key("train.target_accuracy", FIELD(train.target_accuracy)));
    k.push_back(size_key("train.eval_batch", FIELD(train.eval_batch)));

    k.push_back(size_key("eval.points", FIELD(eval.points)));
    k.push_back(u64_key("eval.seed", FIELD(eval.seed)));

    k.push_back({"bench.sweep",
                 [](const RunConfig& c) {
                   return join(c.bench.sweep, [](const auto& p) {
                     return std::to_string(p.first) + ":" + std::to_string(p.second);
                   });
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::pair<std::size_t, std::size_t>> out;
                   for (const std::string& s : split_list(v)) {
                     const auto colon = s.find(':');
                     if (colon == std::string::npos) throw std::invalid_argument("n_in:n_out pairs");
                     out.emplace_back(to_size(trim(s.substr(0, colon))), to_size(trim(s.substr(colon + 1))));
                   }
                   c.bench.sweep = out;
                 }});
    k.push_back(size_key("bench.repeats", FIELD(bench.repeats)));
    k.push_back(size_key("bench.clusters", FIELD(bench.clusters)));
    k.push_back(u64_key("bench.seed", FIELD(bench.seed)));

    k.push_back({"ablate.arms", [](const RunConfig& c) { return join(c.ablate.arms, arm_name); },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<AblationArm> out;
                   for (const std::string& s : split_list(v)) out.push_back(parse_arm(s));
                   c.ablate.arms = out;
                 }});
    k.push_back(size_key("ablate.seeds", FIELD(ablate.seeds)));
    k.push_back(size_key("ablate.epochs", FIELD(ablate.epochs)));
    return k;
  }();
  return table;
}

#undef FIELD

}  // namespace

const char* arm_name(AblationArm arm) {
  switch (arm) {
    case AblationArm::kNoShuffle: return "baseline";
    case AblationArm::kShuffle: return "shuffle";
    case AblationArm::kShuffleDim: return "shuffle_dim";
    case AblationArm::kShuffleLmir: return "shuffle_lmir";
  }
  return "?";
}

AblationArm parse_arm(const std::string& name) {
  for (AblationArm a : {AblationArm::kNoShuffle, AblationArm::kShuffle, AblationArm::kShuffleDim,
                        AblationArm::kShuffleLmir}) {
    if (name == arm_name(a)) return a;
  }
  throw ConfigError("unknown ablation arm '" + name +
                    "' (expected baseline, shuffle, shuffle_dim or shuffle_lmir)");
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  std::map<std::string, const Key*> by_name;
  for (const Key& k : keys()) by_name[k.name] = &k;

  RunConfig config;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      it->second->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + "'" + key + "' needs " + e.what() + ", got '" + value + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const Key& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << format_run_config(config);
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

TrainConfig resolved_train_config(const RunConfig& config) {
  TrainConfig t = config.train;
  t.seed = config.seed;
  return t;
}

std::uint64_t model_init_seed(const RunConfig& config) {
  return derive_seed(config.seed, kModelInitStream);
}

Dataset load_run_dataset(const RunConfig& config) {
  if (config.manifest.empty()) return make_synthetic_dataset(config.synthetic);
  return load_dataset(load_manifest(config.manifest));
}

ModelConfig resolved_model_config(const RunConfig& config, const Dataset& data) {
  ModelConfig m = config.model;
  m.num_classes = data.class_names.size();
  const std::vector<PointCloud>& any = data.train.empty() ? data.test : data.train;
  m.input_features = any.empty() ? 0 : any.front().feature_dim();
  return m;
}

void apply_arm(AblationArm arm, ModelConfig& model, TrainConfig& train) {
  switch (arm) {
    case AblationArm::kNoShuffle:
      model.shuffle = {1, 1};
      train.lambda = 0.0;
      break;
    case AblationArm::kShuffle:
      train.lambda = 0.0;
      break;
    case AblationArm::kShuffleDim:
      train.estimator = EstimatorKind::kDim;
      break;
    case AblationArm::kShuffleLmir:
      train.estimator = EstimatorKind::kLmir;
      break;
  }
}

}  // namespace shufflepoint
