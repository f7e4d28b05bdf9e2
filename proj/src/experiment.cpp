// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <ostream>
#include <random>

#include "io_util.hpp"
#include "shufflepoint/errors.hpp"
#include "shufflepoint/seed.hpp"

namespace shufflepoint {

namespace {

using detail::format_double;

constexpr std::size_t kMinRepeats = 5;

std::uint64_t fnv1a(const std::vector<std::size_t>& indices) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t v : indices) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename Run>
BenchRow time_method(BenchRow row, std::size_t repeats, const PointCloud& cloud, Run&& run) {
  std::vector<double> ms;
  SampleResult result;
  try {
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      result = run();
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  } catch (const Error& e) {
    row.skipped = e.what();
    return row;
  }
  row.median_ms = median(ms);
  row.covering_radius = covering_radius(cloud, result);
  row.index_checksum = fnv1a(result.indices);
  return row;
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

// Commas and newlines would break a CSV field.
std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

PointCloud uniform_cube_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m = Matrix::uninitialized(n, 3);
  for (double& v : m.values()) v = u(rng);
  return PointCloud(std::move(m));
}

std::vector<BenchRow> run_sampling_bench(const BenchConfig& config, std::size_t threads,
                                         const std::function<void(const BenchRow&)>& on_row) {
  const std::size_t repeats = std::max(config.repeats, kMinRepeats);
  const std::size_t workers = resolve_threads(threads);
  std::vector<BenchRow> rows;
  auto emit = [&](BenchRow row) {
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  };
  for (const auto& [n_in, n_out] : config.sweep) {
    BenchRow base;
    base.n_in = n_in;
    base.n_out = n_out;
    base.threads = workers;
    if (n_in == 0) {
      for (const char* method : {"fps", "cluster_fps"}) {
        BenchRow row = base;
        row.method = method;
        row.skipped = "empty input cloud";
        emit(row);
      }
      continue;
    }
    const PointCloud cloud = uniform_cube_cloud(n_in, derive_seed(config.seed, n_in));

    BenchRow f = base;
    f.method = "fps";
    emit(time_method(f, repeats, cloud, [&] { return fps(cloud, n_out); }));

    BenchRow c = base;
    c.method = "cluster_fps";
    c.clusters = config.clusters;
    ClusterFpsOptions opt;
    opt.n_clusters = config.clusters;
    opt.k_total = n_out;
    opt.seed = derive_seed(config.seed, n_in + 1);
    opt.threads = workers;
    emit(time_method(c, repeats, cloud, [&] { return cluster_fps(cloud, opt); }));
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "method,n_in,n_out,clusters,threads,median_ms,covering_radius\n";
  for (const BenchRow& r : rows) {
    out << r.method << ',' << r.n_in << ',' << r.n_out << ',' << r.clusters << ',' << r.threads << ',';
    if (r.skipped.empty()) {
      out << detail::format_shortest(r.median_ms) << ',' << format_double(r.covering_radius) << '\n';
    } else {
      out << "skipped: " << csv_safe(r.skipped) << ",\n";
    }
  }
}

void write_bench_metrics_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "method,n_in,n_out,clusters,threads,covering_radius,index_checksum\n";
  for (const BenchRow& r : rows) {
    out << r.method << ',' << r.n_in << ',' << r.n_out << ',' << r.clusters << ',' << r.threads << ',';
    if (r.skipped.empty()) {
      out << format_double(r.covering_radius) << ',' << hex(r.index_checksum) << '\n';
    } else {
      out << "skipped: " << csv_safe(r.skipped) << ",\n";
    }
  }
}

std::string csv_number(double v) { return format_double(v); }

std::string metrics_csv_header() {
  return "epoch,train_loss,cross_entropy,lmir,lr,overall_accuracy,mean_class_accuracy";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + ',' + format_double(r.train_loss) + ',' +
         format_double(r.cross_entropy) + ',' + format_double(r.lmir) + ',' + format_double(r.lr) +
         ',' + format_double(r.overall_accuracy) + ',' + format_double(r.mean_class_accuracy);
}

void write_confusion_csv(std::ostream& out, const MetricsRecord& record,
                         const std::vector<std::string>& class_names) {
  out << "true\\predicted";
  for (const std::string& name : class_names) out << ',' << csv_safe(name);
  out << '\n';
  for (std::size_t t = 0; t < record.confusion.size(); ++t) {
    out << (t < class_names.size() ? csv_safe(class_names[t]) : std::to_string(t));
    for (std::size_t v : record.confusion[t]) out << ',' << v;
    out << '\n';
  }
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const Dataset& data,
                                      const AblationCallback& on_run) {
  if (config.ablate.seeds == 0) throw ConfigError("ablate.seeds must be positive");
  std::vector<AblationRow> rows;
  for (AblationArm arm : config.ablate.arms) {
    for (std::size_t s = 0; s < config.ablate.seeds; ++s) {
      RunConfig run = config;
      run.seed = config.seed + s;
      ModelConfig model_cfg = resolved_model_config(run, data);
      TrainConfig train_cfg = resolved_train_config(run);
      if (config.ablate.epochs > 0) train_cfg.epochs = config.ablate.epochs;
      apply_arm(arm, model_cfg, train_cfg);

      PointClassifier model(model_cfg, model_init_seed(run));
      TrainingState state(model, train_cfg);
      const std::vector<MetricsRecord> history = train(model, state, data, train_cfg);

      AblationRow row;
      row.arm = arm;
      row.seed = run.seed;
      row.epochs = history.size();
      if (!history.empty()) {
        row.overall_accuracy = history.back().overall_accuracy;
        row.mean_class_accuracy = history.back().mean_class_accuracy;
      }
      rows.push_back(row);
      if (on_run) on_run(row, model);
    }
  }
  return rows;
}

std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  for (const AblationRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.arm == r.arm; });
    if (it == out.end()) {
      out.push_back({r.arm, 0, 0.0, 0.0});
      it = std::prev(out.end());
    }
    ++it->runs;
    it->mean_overall += r.overall_accuracy;
    it->mean_class += r.mean_class_accuracy;
  }
  for (AblationSummary& s : out) {
    s.mean_overall /= static_cast<double>(s.runs);
    s.mean_class /= static_cast<double>(s.runs);
  }
  return out;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "arm,seed,epochs,overall_accuracy,mean_class_accuracy\n";
  for (const AblationRow& r : rows) {
    out << arm_name(r.arm) << ',' << r.seed << ',' << r.epochs << ',' << format_double(r.overall_accuracy)
        << ',' << format_double(r.mean_class_accuracy) << '\n';
  }
}

std::optional<AblationArm> reference_arm(AblationArm arm) {
  switch (arm) {
    case AblationArm::kNoShuffle: return std::nullopt;
    case AblationArm::kShuffle: return AblationArm::kNoShuffle;
    case AblationArm::kShuffleDim:
    case AblationArm::kShuffleLmir: return AblationArm::kShuffle;
  }
  return std::nullopt;
}

void write_ablation_summary_csv(std::ostream& out, const std::vector<AblationSummary>& summary) {
  out << "arm,runs,mean_overall_accuracy,mean_class_accuracy,reference,delta_overall\n";
  for (const AblationSummary& s : summary) {
    out << arm_name(s.arm) << ',' << s.runs << ',' << format_double(s.mean_overall) << ','
        << format_double(s.mean_class) << ',';
    const auto ref = reference_arm(s.arm);
    const auto it = std::find_if(summary.begin(), summary.end(),
                                 [&](const AblationSummary& o) { return ref && o.arm == *ref; });
    if (it != summary.end()) out << arm_name(*ref) << ',' << format_double(s.mean_overall - it->mean_overall);
    else out << ',';
    out << '\n';
  }
}

}  // namespace shufflepoint
