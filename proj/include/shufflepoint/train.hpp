// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "shufflepoint/dataset.hpp"
#include "shufflepoint/lmir.hpp"
#include "shufflepoint/model.hpp"
#include "shufflepoint/optim.hpp"

namespace shufflepoint {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 24;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t t_max = 32;
  double min_lr = 0.0;
  double lambda = 0.1;
  EstimatorKind estimator = EstimatorKind::kLmir;
  std::size_t disc_hidden = 64;
  bool augment = true;
  double jitter = 0.02;
  /// Stop after the first epoch whose test accuracy reaches this (0 = never).
  double target_accuracy = 0.0;
  std::size_t eval_batch = 50;
  std::uint64_t seed = 0;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double cross_entropy = 0.0;
  double lmir = 0.0;
  double lr = 0.0;
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

/// Accuracy figures from a confusion matrix. Classes without test samples are
/// left out of the mean-class average.
void fill_accuracies(MetricsRecord& record);

struct LossTerms {
  Var total;
  double cross_entropy = 0.0;
  double lmir = 0.0;  // mean estimate, 0 when lambda == 0
};

/// cross_entropy - lambda * mean over blocks of the block's estimate.
/// `discriminators[i]` scores pairs with block_id i. Throws ConfigError when a
/// pair has no discriminator.
LossTerms total_loss(const Var& logits, std::span<const std::size_t> labels,
                     std::span<const MiPair> pairs, std::vector<Discriminator>& discriminators,
                     double lambda, EstimatorKind estimator, Tape* tape);

/// Everything that exists only while training: discriminators and Adam state.
class TrainingState {
 public:
  TrainingState(PointClassifier& model, const TrainConfig& config);

  std::vector<Discriminator>& discriminators() { return discriminators_; }
  AdamState& adam() { return adam_; }
  std::size_t epochs_done() const { return epochs_done_; }
  void set_epochs_done(std::size_t e) { epochs_done_ = e; }

  /// Model parameters followed by discriminator parameters.
  std::vector<Parameter*> parameters();

 private:
  PointClassifier* model_;
  std::vector<Discriminator> discriminators_;
  AdamState adam_;
  std::size_t epochs_done_ = 0;
};

/// One pass over `train` in a seeded order. Returns loss means; accuracy
/// fields are left empty.
MetricsRecord train_epoch(PointClassifier& model, TrainingState& state,
                          std::span<const PointCloud> train, const TrainConfig& config,
                          std::size_t epoch);

struct EvalOptions {
  /// Subsample every cloud to this many points first (0 = keep all).
  std::size_t points = 0;
  std::uint64_t seed = 0;
  std::size_t batch = 50;
};

/// Eval-mode accuracy and confusion matrix. Throws CardinalityError when the
/// budget is below what the model samples.
MetricsRecord evaluate(const PointClassifier& model, std::span<const PointCloud> test,
                       std::size_t num_classes, const EvalOptions& options = {});

/// Predicted class per cloud, eval mode, no tape.
std::vector<std::size_t> predict(const PointClassifier& model, std::span<const PointCloud> clouds,
                                 std::size_t batch = 50);

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Epoch loop with cosine annealing stepped per epoch; one record per epoch.
std::vector<MetricsRecord> train(PointClassifier& model, TrainingState& state, const Dataset& data,
                                 const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace shufflepoint
