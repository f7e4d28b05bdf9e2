// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

// Command-line front end: train, eval, sample, bench-sampling, ablate.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "shufflepoint/checkpoint.hpp"
#include "shufflepoint/errors.hpp"
#include "shufflepoint/experiment.hpp"
#include "shufflepoint/run_config.hpp"

namespace fs = std::filesystem;
using namespace shufflepoint;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::size_t> threads;
};

RunConfig resolve(const GlobalOptions& g, const std::string& fallback_config = {}) {
  RunConfig c;
  if (!g.config.empty()) {
    c = load_run_config(g.config);
  } else if (!fallback_config.empty() && fs::exists(fallback_config)) {
    c = load_run_config(fallback_config);
  }
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  return c;
}

fs::path prepare_out(const GlobalOptions& g, const RunConfig& c) {
  const fs::path out(g.out);
  fs::create_directories(out);
  save_run_config(c, out / "config.txt");
  return out;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream f(path, mode);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

int run_train(const GlobalOptions& g, bool synthetic, std::optional<std::size_t> epochs,
              const std::string& resume) {
  RunConfig c = resolve(g);
  if (synthetic) c.manifest.clear();
  if (epochs) c.train.epochs = *epochs;
  const fs::path out = prepare_out(g, c);

  const Dataset data = load_run_dataset(c);
  const TrainConfig train_cfg = resolved_train_config(c);
  PointClassifier model(resolved_model_config(c, data), model_init_seed(c));
  TrainingState state(model, train_cfg);
  if (!resume.empty()) load_checkpoint(resume, model, &state);

  std::cerr << "training on " << data.train.size() << " clouds, testing on " << data.test.size()
            << ", " << model.parameter_count() << " parameters\n";
  const bool append = state.epochs_done() > 0;
  std::ofstream metrics = open_out(out / "metrics.csv", append ? std::ios::app : std::ios::trunc);
  if (!append) metrics << metrics_csv_header() << '\n';

  MetricsRecord last;
  train(model, state, data, train_cfg, [&](const MetricsRecord& rec) {
    metrics << metrics_csv_row(rec) << '\n' << std::flush;
    save_checkpoint(out / "checkpoint.psn", model, &state);
    std::cerr << "epoch " << rec.epoch << "  loss " << rec.train_loss << "  test "
              << percent(rec.overall_accuracy) << " (mean class " << percent(rec.mean_class_accuracy)
              << ")\n";
    last = rec;
  });
  if (state.epochs_done() == 0) save_checkpoint(out / "checkpoint.psn", model, &state);
  if (!last.confusion.empty()) {
    std::ofstream conf = open_out(out / "confusion.csv");
    write_confusion_csv(conf, last, data.class_names);
  }
  std::cerr << "wrote " << (out / "checkpoint.psn").string() << "\n";
  return 0;
}

int run_eval(const GlobalOptions& g, const std::string& checkpoint, bool synthetic,
             std::optional<std::size_t> points) {
  RunConfig c = resolve(g, (fs::path(checkpoint).parent_path() / "config.txt").string());
  if (synthetic) c.manifest.clear();
  if (points) c.eval.points = *points;
  const fs::path out = prepare_out(g, c);

  const Dataset data = load_run_dataset(c);
  PointClassifier model(resolved_model_config(c, data), model_init_seed(c));
  load_checkpoint(checkpoint, model);

  EvalOptions opt;
  opt.points = c.eval.points;
  opt.seed = c.eval.seed;
  opt.batch = c.train.eval_batch;
  const MetricsRecord rec = evaluate(model, data.test, data.class_names.size(), opt);

  std::ofstream metrics = open_out(out / "eval_metrics.csv");
  metrics << "points,clouds,overall_accuracy,mean_class_accuracy\n"
          << c.eval.points << ',' << data.test.size() << ',' << csv_number(rec.overall_accuracy) << ','
          << csv_number(rec.mean_class_accuracy) << '\n';
  std::ofstream conf = open_out(out / "confusion.csv");
  write_confusion_csv(conf, rec, data.class_names);
  std::cout << "overall " << percent(rec.overall_accuracy) << ", mean class "
            << percent(rec.mean_class_accuracy) << " on " << data.test.size() << " clouds\n";
  return 0;
}

int run_sample(const GlobalOptions& g, const std::string& input, std::size_t count,
               const std::string& method, std::size_t clusters, std::size_t start) {
  const RunConfig c = resolve(g);
  const fs::path out = prepare_out(g, c);
  const PointCloud cloud = load_cloud(input);
  cloud.validate();

  SampleResult result;
  if (parse_sampler(method) == SamplerKind::kFps) {
    result = fps(cloud, count, start);
  } else {
    ClusterFpsOptions opt;
    opt.n_clusters = clusters;
    opt.k_total = count;
    opt.seed = c.seed;
    opt.threads = c.threads;
    result = cluster_fps(cloud, opt);
  }
  std::ofstream idx = open_out(out / "sampled_indices.txt");
  for (std::size_t i : result.indices) idx << i << '\n';
  save_xyz(cloud.subset(result.indices), out / "sampled.xyz");
  std::cout << method << ": " << result.indices.size() << " of " << cloud.size()
            << " points, covering radius " << covering_radius(cloud, result) << '\n';
  return 0;
}

int run_bench(const GlobalOptions& g) {
  const RunConfig c = resolve(g);
  const fs::path out = prepare_out(g, c);
  const std::vector<BenchRow> rows = run_sampling_bench(c.bench, c.threads, [](const BenchRow& r) {
    if (!r.skipped.empty()) {
      std::cerr << "warning: " << r.method << " " << r.n_in << " -> " << r.n_out
                << " skipped: " << r.skipped << '\n';
      return;
    }
    std::cout << r.method << "  " << r.n_in << " -> " << r.n_out << "  threads " << r.threads
              << "  median " << r.median_ms << " ms  covering radius " << r.covering_radius << '\n';
  });
  std::ofstream bench = open_out(out / "bench.csv");
  write_bench_csv(bench, rows);
  std::ofstream metrics = open_out(out / "bench_metrics.csv");
  write_bench_metrics_csv(metrics, rows);
  return 0;
}

int run_ablate(const GlobalOptions& g, bool synthetic, std::optional<std::size_t> epochs) {
  RunConfig c = resolve(g);
  if (synthetic) c.manifest.clear();
  if (epochs) c.ablate.epochs = *epochs;
  const fs::path out = prepare_out(g, c);

  const Dataset data = load_run_dataset(c);
  const std::vector<AblationRow> rows =
      run_ablation(c, data, [](const AblationRow& r, const PointClassifier&) {
        std::cerr << arm_name(r.arm) << " seed " << r.seed << ": " << percent(r.overall_accuracy)
                  << " after " << r.epochs << " epochs\n";
      });
  std::ofstream table = open_out(out / "ablation.csv");
  write_ablation_csv(table, rows);
  std::ofstream summary = open_out(out / "ablation_summary.csv");
  const auto means = summarize_ablation(rows);
  write_ablation_summary_csv(summary, means);
  for (const AblationSummary& s : means) {
    std::cout << arm_name(s.arm) << ": overall " << percent(s.mean_overall) << ", mean class "
              << percent(s.mean_class) << " over " << s.runs << " runs\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Every batch frees and reallocates large tape buffers. Keeping them on the
  // heap instead of fresh mmaps saves most of the page-fault time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif

  CLI::App app{"Point-cloud classification with shuffle layers and a mutual-information regularizer"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Run configuration (key = value file)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Sampler worker threads (overrides SHUFFLEPOINT_THREADS)")
      ->check(CLI::PositiveNumber);

  bool synthetic = false;
  std::optional<std::size_t> epochs;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes metrics.csv and checkpoint.psn");
  train_cmd->add_flag("--synthetic", synthetic, "Use the synthetic shape dataset");
  train_cmd->add_option("--epochs", epochs, "Number of epochs");
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  std::string checkpoint;
  std::optional<std::size_t> points;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--points", points, "Subsample every test cloud to this many points");
  eval_cmd->add_flag("--synthetic", synthetic, "Use the synthetic shape dataset");

  std::string input;
  std::size_t count = 0;
  std::string method = "cluster_fps";
  std::size_t clusters = 16;
  std::size_t start = 0;
  auto* sample_cmd = app.add_subcommand("sample", "Downsample a point cloud file");
  sample_cmd->add_option("--input", input, "Cloud file (.xyz or .bin)")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--count", count, "Points to keep")->required();
  sample_cmd->add_option("--method", method, "fps or cluster_fps")->capture_default_str();
  sample_cmd->add_option("--clusters", clusters, "Clusters for cluster_fps")->capture_default_str();
  sample_cmd->add_option("--start", start, "First pick for fps")->capture_default_str();

  auto* bench_cmd = app.add_subcommand("bench-sampling", "Time fps against cluster_fps over bench.sweep");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train every ablation arm for each seed");
  ablate_cmd->add_flag("--synthetic", synthetic, "Use the synthetic shape dataset");
  ablate_cmd->add_option("--epochs", epochs, "Epochs per run (overrides ablate.epochs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return run_train(g, synthetic, epochs, resume);
    if (*eval_cmd) return run_eval(g, checkpoint, synthetic, points);
    if (*sample_cmd) return run_sample(g, input, count, method, clusters, start);
    if (*bench_cmd) return run_bench(g);
    if (*ablate_cmd) return run_ablate(g, synthetic, epochs);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const LabelError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
