// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "shufflepoint/run_config.hpp"

namespace shufflepoint {

/// N points uniform in [-1, 1]^3.
PointCloud uniform_cube_cloud(std::size_t n, std::uint64_t seed);

struct BenchRow {
  std::string method;  // fps or cluster_fps
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t clusters = 0;  // 0 for fps
  std::size_t threads = 0;
  double median_ms = 0.0;
  double covering_radius = 0.0;
  std::uint64_t index_checksum = 0;
  /// Set when the entry could not run; the numeric fields are then unused.
  std::string skipped;
};

/// Times fps and cluster_fps on one seeded cloud per sweep entry.
///
/// Each method runs `repeats` times (at least 5) and reports the median. Entries
/// a method cannot handle produce a row with `skipped` set instead of an error.
std::vector<BenchRow> run_sampling_bench(const BenchConfig& config, std::size_t threads,
                                         const std::function<void(const BenchRow&)>& on_row = {});

/// method,n_in,n_out,clusters,threads,median_ms,covering_radius
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);
/// The timing-free columns, identical across reruns:
/// method,n_in,n_out,clusters,threads,covering_radius,index_checksum
void write_bench_metrics_csv(std::ostream& out, const std::vector<BenchRow>& rows);

/// 17 significant digits, independent of the locale.
std::string csv_number(double v);

/// epoch,train_loss,cross_entropy,lmir,lr,overall_accuracy,mean_class_accuracy
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& record);

/// One row per true class, one column per predicted class.
void write_confusion_csv(std::ostream& out, const MetricsRecord& record,
                         const std::vector<std::string>& class_names);

struct AblationRow {
  AblationArm arm = AblationArm::kShuffleLmir;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
};

using AblationCallback = std::function<void(const AblationRow&, const PointClassifier&)>;

/// Trains every configured arm once per seed and reports final test accuracy.
/// The callback sees each finished model before it is discarded.
std::vector<AblationRow> run_ablation(const RunConfig& config, const Dataset& data,
                                      const AblationCallback& on_run = {});

struct AblationSummary {
  AblationArm arm = AblationArm::kShuffleLmir;
  std::size_t runs = 0;
  double mean_overall = 0.0;
  double mean_class = 0.0;
};

/// Per-arm means in the order arms first appear.
std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow>& rows);

/// arm,seed,epochs,overall_accuracy,mean_class_accuracy
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);
/// The arm each arm is compared against: baseline for shuffle, shuffle for
/// the two regularized arms, none for baseline.
std::optional<AblationArm> reference_arm(AblationArm arm);

/// arm,runs,mean_overall_accuracy,mean_class_accuracy,reference,delta_overall
/// The reference columns stay empty when the reference arm was not run.
void write_ablation_summary_csv(std::ostream& out, const std::vector<AblationSummary>& summary);

}  // namespace shufflepoint
