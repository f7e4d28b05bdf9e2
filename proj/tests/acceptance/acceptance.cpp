// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

// Acceptance runner. Checks the eleven release criteria at their stated
// tolerances and prints one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance 2 5 6      run a subset

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "oracles.hpp"
#include "shufflepoint/experiment.hpp"
#include "shufflepoint/lmir.hpp"
#include "shufflepoint/run_config.hpp"
#include "shufflepoint/shuffle.hpp"
#include "test_support.hpp"

using namespace shufflepoint;
using namespace shufflepoint::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, a);
  return buf;
}

std::string pct(double v) { return fmt("%.2f%%", 100.0 * v); }

// Ablation epochs, the training default. The arms are compared on their final
// test accuracy after a full cosine cycle of this length.
constexpr std::size_t kAblationEpochs = 30;
constexpr std::size_t kAblationSeeds = 5;

// ---------------------------------------------------------------------------

Outcome sampling_speed() {
  const auto t0 = Clock::now();
  BenchConfig bench;
  bench.sweep = {{100000, 10000}};
  bench.clusters = 16;
  bench.repeats = 5;
  bench.seed = 1;
  const std::size_t threads = std::max<std::size_t>(4, resolve_threads());
  const auto rows = run_sampling_bench(bench, threads);
  const double elapsed = seconds_since(t0);
  if (rows.size() != 2 || !rows[0].skipped.empty() || !rows[1].skipped.empty()) {
    return {false, "benchmark rows missing or skipped"};
  }
  const double ratio = rows[1].median_ms / rows[0].median_ms;
  const bool pass = ratio <= 1.0 / 3.0 && elapsed < 120.0;
  return {pass, "fps " + fmt("%.0f ms", rows[0].median_ms) + ", cluster_fps " +
                    fmt("%.0f ms", rows[1].median_ms) + " on " + std::to_string(threads) +
                    " threads, ratio " + fmt("%.3f", ratio) + " (<= 0.333), benchmark " +
                    fmt("%.1f s", elapsed) + " (< 120 s)"};
}

Outcome fps_oracle() {
  const auto t0 = Clock::now();
  std::size_t sequences = 0;
  std::size_t mismatches = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 1 + seed % 8;
    const PointCloud cloud(uniform_cloud(n, rng));
    const std::size_t start = rng() % n;
    for (std::size_t k = 1; k <= n; ++k) {
      ++sequences;
      if (fps(cloud, k, start).indices != greedy_fps_oracle(cloud.coords, k, start)) ++mismatches;
    }
  }
  const double elapsed = seconds_since(t0);
  return {mismatches == 0 && elapsed < 5.0,
          std::to_string(sequences - mismatches) + "/" + std::to_string(sequences) +
              " index sequences equal the oracle over 100 clouds, " + fmt("%.3f s", elapsed) +
              " (< 5 s)"};
}

Outcome coverage() {
  double worst_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const PointCloud cloud(uniform_cloud(4096, rng));
    ClusterFpsOptions opt;
    opt.n_clusters = 16;
    opt.k_total = 512;
    opt.seed = seed;
    const double r_cluster = covering_radius(cloud, cluster_fps(cloud, opt));
    const double r_fps = covering_radius(cloud, fps(cloud, 512));
    worst_ratio = std::max(worst_ratio, r_cluster / r_fps);
  }
  double worst_exact = 0.0;
  std::size_t instances = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(900 + seed);
    for (std::size_t n = 5; n <= 12; ++n) {
      const PointCloud cloud(uniform_cloud(n, rng));
      for (std::size_t k = 1; k <= 4; ++k) {
        const double got = covering_radius(cloud, fps(cloud, k));
        const double best = optimal_covering_radius(cloud.coords, k);
        worst_exact = std::max(worst_exact, best > 0.0 ? got / best : 1.0);
        ++instances;
      }
    }
  }
  return {worst_ratio <= 2.5 && worst_exact <= 2.0,
          "worst cluster_fps/fps radius " + fmt("%.3f", worst_ratio) +
              " over 20 clouds (<= 2.5); worst fps/optimal " + fmt("%.3f", worst_exact) + " over " +
              std::to_string(instances) + " exhaustive instances (<= 2)"};
}

std::vector<double> sorted_entries(const Matrix& m) {
  std::vector<double> v(m.values().begin(), m.values().end());
  std::sort(v.begin(), v.end());
  return v;
}

Outcome shuffles() {
  std::mt19937_64 rng(4);
  std::size_t failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 64;
    const std::size_t g = 1 + rng() % 12;
    const Matrix x = random_matrix(n, 1 + rng() % 8, rng);
    const Matrix s = sample_shuffle(Var::constant(x), g).value();
    const auto inv = inverse_permutation(sample_shuffle_order(n, g));
    if (!(gather_rows(Var::constant(s), inv).value() == x)) ++failures;
    if (sorted_entries(s) != sorted_entries(x)) ++failures;
    if (!(sample_shuffle(Var::constant(x), 1).value() == x)) ++failures;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t g = 1 + rng() % 8;
    const std::size_t d = g * (1 + rng() % 8);
    const Matrix x = random_matrix(1 + rng() % 16, d, rng);
    const Matrix c = channel_shuffle(Var::constant(x), g).value();
    const auto inv = inverse_permutation(channel_shuffle_order(d, g));
    if (!(permute_cols(Var::constant(c), inv).value() == x)) ++failures;
    if (sorted_entries(c) != sorted_entries(x)) ++failures;
    if (!(channel_shuffle(Var::constant(x), 1).value() == x)) ++failures;
    if (!(channel_shuffle(Var::constant(c), d / g).value() == x)) ++failures;
  }
  return {failures == 0, std::to_string(failures) +
                             " failed checks over 1000 sample-shuffle and 1000 channel-shuffle "
                             "matrices (bijection, multiset, g = 1, double shuffle)"};
}

Outcome gradients() {
  constexpr double kTol = 1e-4;
  constexpr int kTrials = 20;
  double worst_op = 0.0;
  std::string worst_name;
  const std::vector<OpCase> cases = differentiable_op_cases();
  for (std::size_t index = 0; index < cases.size(); ++index) {
    std::mt19937_64 rng(5000 + index);
    for (int trial = 0; trial < kTrials; ++trial) {
      const std::vector<Matrix> inputs = cases[index].inputs(rng);
      std::vector<Var> probe;
      for (const Matrix& m : inputs) probe.push_back(Var::constant(m));
      const Matrix out = cases[index].fn(probe).value();
      const Matrix weights = random_matrix(out.rows(), out.cols(), rng);
      for (std::size_t which = 0; which < inputs.size(); ++which) {
        const double e = check_gradient(cases[index].fn, inputs, which, weights).error();
        if (e > worst_op) {
          worst_op = e;
          worst_name = cases[index].name;
        }
      }
    }
  }

  double worst_estimator = 0.0;
  std::mt19937_64 rng(55);
  const Matrix one(1, 1, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng() % 6;
    const std::vector<Matrix> inputs{random_matrix(n, 3, rng), random_matrix(n, 2, rng),
                                     random_matrix(n, 2, rng)};
    Discriminator t(3, 2, 6, rng);
    const bool use_lmir = trial % 2 == 0;
    auto estimate = [&](const MiPair& pair, Tape* tape) {
      return use_lmir ? lmir_estimator(t, pair, tape) : dim_estimator(t, pair, tape);
    };
    auto fn = [&](const std::vector<Var>& v) { return estimate(MiPair(v[0], v[1], v[2], 0), nullptr); };
    for (std::size_t which = 0; which < 3; ++which)
      worst_estimator = std::max(worst_estimator, check_gradient(fn, inputs, which, one).error());

    const MiPair fixed(Var::constant(inputs[0]), Var::constant(inputs[1]), Var::constant(inputs[2]), 0);
    for (Parameter* p : t.parameters()) p->zero_grad();
    {
      Tape tape;
      tape.backward(estimate(fixed, &tape));
    }
    for (Parameter* p : t.parameters()) {
      auto f = [&](const Matrix& m) {
        const Matrix saved = p->value;
        p->value = m;
        const double v = estimate(fixed, nullptr).value()(0, 0);
        p->value = saved;
        return v;
      };
      worst_estimator = std::max(worst_estimator, relative_error(p->grad, numeric_gradient(f, p->value)));
    }
  }

  double worst_model = 0.0;
  double min_norm = INFINITY;
  for (EstimatorKind kind : {EstimatorKind::kLmir, EstimatorKind::kDim}) {
    const EndToEndCheck c = end_to_end_gradient_check(kind);
    worst_model = std::max(worst_model, c.relative_error);
    min_norm = std::min(min_norm, c.gradient_norm);
  }
  const bool pass = worst_op < kTol && worst_estimator < kTol && worst_model < kTol && min_norm > 1e-3;
  return {pass, std::to_string(cases.size()) + " operations worst " + fmt("%.2e", worst_op) + " (" +
                    worst_name + "), estimators worst " + fmt("%.2e", worst_estimator) +
                    ", micro-model total loss worst " + fmt("%.2e", worst_model) + " (< 1e-4)"};
}

Outcome lmir_values() {
  const double target = -2.0 * std::numbers::ln2;
  double worst_zero = 0.0;
  std::size_t exchange_failures = 0;
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 20, dx = 1 + rng() % 6, dz = 1 + rng() % 6;
    const MiPair pair(Var::constant(random_matrix(n, dx, rng)), Var::constant(random_matrix(n, dz, rng)),
                      Var::constant(random_matrix(n, dz, rng)), 0);
    Discriminator zero = Discriminator::zeros(dx, dz, 1 + rng() % 16);
    worst_zero = std::max(worst_zero, std::abs(dim_estimator(zero, pair).value()(0, 0) - target));
    worst_zero = std::max(worst_zero, std::abs(lmir_estimator(zero, pair).value()(0, 0) - target));

    Discriminator t(dx, dz, 1 + rng() % 16, rng);
    const MiPair swapped(pair.x, pair.shuffled, pair.sigma, 0);
    if (lmir_estimator(t, pair).value()(0, 0) != dim_estimator(t, swapped).value()(0, 0)) ++exchange_failures;
    if (dim_estimator(t, pair).value()(0, 0) != lmir_estimator(t, swapped).value()(0, 0)) ++exchange_failures;
  }
  return {worst_zero <= 1e-12 && exchange_failures == 0,
          "zero scorer max |I + 2 ln 2| = " + fmt("%.1e", worst_zero) + " (<= 1e-12); " +
              std::to_string(exchange_failures) + " exchange mismatches over 200 random pairs"};
}

Outcome toy_learning() {
  const auto t0 = Clock::now();
  RunConfig run;  // the shipped defaults: 800/200 split, 256 points, seed 0
  run.train.target_accuracy = 0.9;
  const Dataset data = load_run_dataset(run);
  const TrainConfig tc = resolved_train_config(run);
  PointClassifier model(resolved_model_config(run, data), model_init_seed(run));
  TrainingState state(model, tc);
  double best = 0.0;
  std::size_t reached = 0;
  const auto history = train(model, state, data, tc, [&](const MetricsRecord& r) {
    std::cerr << "  [7] epoch " << r.epoch << " test " << pct(r.overall_accuracy) << " at "
              << fmt("%.0f s", seconds_since(t0)) << '\n';
    if (r.overall_accuracy > best) best = r.overall_accuracy;
    if (reached == 0 && r.overall_accuracy >= 0.9) reached = r.epoch + 1;
  });
  const double elapsed = seconds_since(t0);
  const bool pass = reached > 0 && reached <= 30 && elapsed < 600.0;
  return {pass, (reached > 0 ? "reached " + pct(history.back().overall_accuracy) + " test accuracy at epoch " +
                                   std::to_string(reached)
                             : "best " + pct(best) + " in " + std::to_string(history.size()) + " epochs") +
                    " (>= 90% within 30), " + fmt("%.0f s", elapsed) + " (< 600 s), " +
                    std::to_string(data.train.size()) + "/" + std::to_string(data.test.size()) + " split"};
}

// Ablation runs, shared by the ablation and sparse-input criteria.
struct AblationResults {
  std::vector<AblationRow> rows;
  // Per seed of the full arm: accuracy at 256, 128 and 64 points.
  std::vector<std::array<double, 3>> density;
};

AblationResults run_ablation_study(const std::vector<AblationArm>& arms) {
  RunConfig run;
  run.ablate.arms = arms;
  run.ablate.seeds = kAblationSeeds;
  run.ablate.epochs = kAblationEpochs;
  run.train.t_max = kAblationEpochs;
  const Dataset data = load_run_dataset(run);
  AblationResults out;
  const auto t0 = Clock::now();
  out.rows = run_ablation(run, data, [&](const AblationRow& r, const PointClassifier& model) {
    std::cerr << "  [8] " << arm_name(r.arm) << " seed " << r.seed << ": " << pct(r.overall_accuracy)
              << " at " << fmt("%.0f s", seconds_since(t0)) << '\n';
    if (r.arm != AblationArm::kShuffleLmir) return;
    std::array<double, 3> acc{};
    const std::array<std::size_t, 3> budgets{256, 128, 64};
    for (std::size_t b = 0; b < 3; ++b) {
      EvalOptions opt;
      opt.points = budgets[b];
      opt.seed = r.seed;
      acc[b] = evaluate(model, data.test, data.class_names.size(), opt).overall_accuracy;
    }
    out.density.push_back(acc);
  });
  return out;
}

std::optional<AblationResults> g_ablation;

const AblationResults& ablation_study(bool need_all_arms) {
  if (!g_ablation || (need_all_arms && g_ablation->rows.size() < 4 * kAblationSeeds)) {
    g_ablation = need_all_arms
                     ? run_ablation_study({AblationArm::kNoShuffle, AblationArm::kShuffle,
                                           AblationArm::kShuffleDim, AblationArm::kShuffleLmir})
                     : run_ablation_study({AblationArm::kShuffleLmir});
  }
  return *g_ablation;
}

Outcome ablation_direction() {
  const auto summary = summarize_ablation(ablation_study(true).rows);
  std::map<AblationArm, double> mean;
  for (const AblationSummary& s : summary) mean[s.arm] = s.mean_overall;
  const double base = mean[AblationArm::kNoShuffle];
  const double shuffle = mean[AblationArm::kShuffle];
  const double dim = mean[AblationArm::kShuffleDim];
  const double lmir = mean[AblationArm::kShuffleLmir];
  const double d_shuffle = 100.0 * (shuffle - base);
  const double d_lmir = 100.0 * (lmir - shuffle);
  const bool pass = d_shuffle >= -0.5 && d_lmir >= -0.5;
  return {pass, "mean over " + std::to_string(kAblationSeeds) + " seeds: baseline " + pct(base) +
                    ", shuffle " + pct(shuffle) + " (" + fmt("%+.2f", d_shuffle) + " pts, >= -0.5), "
                    "shuffle_lmir " + pct(lmir) + " (" + fmt("%+.2f", d_lmir) + " pts vs shuffle, >= -0.5), "
                    "shuffle_dim " + pct(dim) + " (" + fmt("%+.2f", 100.0 * (dim - shuffle)) +
                    " pts, reported only); " + std::to_string(kAblationEpochs) + " epochs per run"};
}

Outcome sparse_input() {
  const auto& density = ablation_study(false).density;
  if (density.empty()) return {false, "no trained models"};
  std::array<double, 3> mean{};
  for (const auto& d : density)
    for (std::size_t b = 0; b < 3; ++b) mean[b] += d[b] / static_cast<double>(density.size());
  const double drop128 = 100.0 * (mean[0] - mean[1]);
  const double drop64 = 100.0 * (mean[0] - mean[2]);
  return {drop128 <= 15.0 && drop64 <= 30.0,
          "mean of " + std::to_string(density.size()) + " seeds: " + pct(mean[0]) + " at 256, " +
              pct(mean[1]) + " at 128 (drop " + fmt("%.2f", drop128) + " <= 15), " + pct(mean[2]) +
              " at 64 (drop " + fmt("%.2f", drop64) + " <= 30)"};
}

Outcome inference_contract() {
  RunConfig run;
  run.synthetic.train_per_class = 2;
  run.synthetic.test_per_class = 10;
  const Dataset data = load_run_dataset(run);
  const ModelConfig mc = resolved_model_config(run, data);

  PointClassifier with(mc, 1);
  PointClassifier without(mc, 1);
  TrainConfig on = resolved_train_config(run);
  TrainConfig off = on;
  off.lambda = 0.0;
  const std::size_t disc_before = Discriminator::constructed_count();
  TrainingState state_on(with, on);
  TrainingState state_off(without, off);
  const std::size_t built = Discriminator::constructed_count() - disc_before;
  const bool same_count = with.parameter_count() == without.parameter_count();

  const auto d0 = Discriminator::constructed_count();
  const auto p0 = MiPair::constructed_count();
  const auto t0 = Tape::constructed_count();
  const MetricsRecord rec = evaluate(with, data.test, mc.num_classes);
  predict(with, data.test);
  ForwardContext ctx;
  with.forward(data.test.front(), ctx);
  const auto d = Discriminator::constructed_count() - d0;
  const auto p = MiPair::constructed_count() - p0;
  const auto t = Tape::constructed_count() - t0;
  const bool pass = same_count && d == 0 && p == 0 && t == 0 && built == state_on.discriminators().size() &&
                    state_off.discriminators().empty();
  return {pass, std::to_string(d) + " discriminators, " + std::to_string(p) + " pairs, " +
                    std::to_string(t) + " tapes built during eval of " +
                    std::to_string(data.test.size()) + " clouds; " +
                    std::to_string(with.parameter_count()) + " model parameters with the regularizer, " +
                    std::to_string(without.parameter_count()) + " without"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SHUFFLEPOINT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / ("shufflepoint_accept_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "bench.cfg");
    cfg << "bench.sweep = 4096:512,16384:1024\nbench.seed = 5\n";
  }
  const std::string a = (dir / "a").string();
  const std::string b = (dir / "b").string();
  const bool ran = run_cli("--seed 11 --out " + a + " train --synthetic --epochs 2") == 0 &&
                   run_cli("--config " + a + "/config.txt --out " + b + " train") == 0;
  const std::string m1 = read_file(dir / "a" / "metrics.csv");
  const std::string m2 = read_file(dir / "b" / "metrics.csv");
  const bool bench_ran =
      run_cli("--config " + (dir / "bench.cfg").string() + " --out " + a + " bench-sampling") == 0 &&
      run_cli("--config " + a + "/config.txt --out " + b + " bench-sampling") == 0;
  const std::string b1 = read_file(dir / "a" / "bench_metrics.csv");
  const std::string b2 = read_file(dir / "b" / "bench_metrics.csv");
  fs::remove_all(dir);
  const bool train_same = ran && !m1.empty() && m1 == m2;
  const bool bench_same = bench_ran && !b1.empty() && b1 == b2;
  const auto lines = [](const std::string& s) { return std::to_string(std::count(s.begin(), s.end(), '\n')); };
  return {train_same && bench_same,
          std::string("train metrics.csv ") + (train_same ? "identical" : "differs") + " (" + lines(m1) +
              " lines, " + std::to_string(m1.size()) + " bytes); bench_metrics.csv " +
              (bench_same ? "identical" : "differs") + " (" + lines(b1) + " lines)"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  const std::vector<Criterion> criteria{
      {1, "sampling speed", sampling_speed},
      {2, "fps oracle equivalence", fps_oracle},
      {3, "coverage quality", coverage},
      {4, "shuffle correctness", shuffles},
      {5, "gradient fidelity", gradients},
      {6, "estimator analytic values", lmir_values},
      {7, "toy-task learning", toy_learning},
      {8, "ablation direction", ablation_direction},
      {9, "sparse-input robustness", sparse_input},
      {10, "inference-phase contract", inference_contract},
      {11, "reproducibility", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << "  ("
              << fmt("%.1f s", seconds_since(t0)) << ")" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
