// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/train.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "shufflepoint/errors.hpp"
#include "shufflepoint/seed.hpp"

namespace shufflepoint {

namespace {

// Seed streams derived from the master seed.
enum Stream : std::uint64_t {
  kDiscriminatorInit = 1,
  kEpochOrder = 2,
  kAugment = 3,
  kDropout = 4,
};

std::size_t argmax_row(const Matrix& m, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return best;
}

PointCloud subsample(const PointCloud& cloud, std::size_t points, std::uint64_t seed) {
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(points);
  std::sort(idx.begin(), idx.end());
  return cloud.subset(idx);
}

}  // namespace

void fill_accuracies(MetricsRecord& record) {
  std::size_t correct = 0;
  std::size_t total = 0;
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t t = 0; t < record.confusion.size(); ++t) {
    const auto& row = record.confusion[t];
    const std::size_t n = std::accumulate(row.begin(), row.end(), std::size_t{0});
    correct += row[t];
    total += n;
    if (n > 0) {
      recall_sum += static_cast<double>(row[t]) / static_cast<double>(n);
      ++present;
    }
  }
  record.overall_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  record.mean_class_accuracy = present > 0 ? recall_sum / static_cast<double>(present) : 0.0;
}

LossTerms total_loss(const Var& logits, std::span<const std::size_t> labels,
                     std::span<const MiPair> pairs, std::vector<Discriminator>& discriminators,
                     double lambda, EstimatorKind estimator, Tape* tape) {
  LossTerms out;
  Var ce = softmax_cross_entropy(logits, labels);
  out.cross_entropy = ce.value()(0, 0);
  if (lambda == 0.0 || pairs.empty()) {
    out.total = ce;
    return out;
  }
  std::map<std::size_t, std::vector<Var>> by_block;
  for (const MiPair& pair : pairs) {
    if (pair.block_id >= discriminators.size()) {
      throw ConfigError("no discriminator for block " + std::to_string(pair.block_id));
    }
    Discriminator& t = discriminators[pair.block_id];
    by_block[pair.block_id].push_back(estimator == EstimatorKind::kLmir
                                          ? lmir_estimator(t, pair, tape)
                                          : dim_estimator(t, pair, tape));
  }
  std::vector<Var> per_block;
  for (auto& [block, estimates] : by_block) per_block.push_back(lmir_loss(estimates));
  Var mi = lmir_loss(per_block);
  out.lmir = mi.value()(0, 0);
  out.total = sub(ce, scale(mi, lambda));
  return out;
}

TrainingState::TrainingState(PointClassifier& model, const TrainConfig& config) : model_(&model) {
  adam_.beta1 = config.beta1;
  adam_.beta2 = config.beta2;
  adam_.epsilon = config.adam_eps;
  if (config.lambda != 0.0) {
    std::mt19937_64 rng(derive_seed(config.seed, kDiscriminatorInit));
    const auto widths = model.psn_widths();
    discriminators_.reserve(widths.size());
    for (std::size_t i = 0; i < widths.size(); ++i) {
      discriminators_.emplace_back(widths[i] / 2, widths[i] / 2, config.disc_hidden, rng,
                                   "disc" + std::to_string(i));
    }
  }
}

std::vector<Parameter*> TrainingState::parameters() {
  std::vector<Parameter*> out = model_->parameters();
  for (Discriminator& d : discriminators_)
    for (Parameter* p : d.parameters()) out.push_back(p);
  return out;
}

MetricsRecord train_epoch(PointClassifier& model, TrainingState& state,
                          std::span<const PointCloud> train, const TrainConfig& config,
                          std::size_t epoch) {
  if (train.empty()) throw ConfigError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t n_classes = model.config().num_classes;
  for (const PointCloud& c : train) {
    if (!c.label || *c.label >= n_classes) {
      throw LabelError("training cloud without a label in [0, " + std::to_string(n_classes) + ")");
    }
  }

  MetricsRecord rec;
  rec.epoch = epoch;
  rec.lr = cosine_anneal_lr(epoch, config.lr, config.t_max, config.min_lr);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 order_rng(derive_seed(config.seed, kEpochOrder * 1000003 + epoch));
  std::shuffle(order.begin(), order.end(), order_rng);

  std::vector<Parameter*> params = state.parameters();
  const AugmentOptions aug{true, config.jitter};
  double loss_sum = 0.0;
  double ce_sum = 0.0;
  double mi_sum = 0.0;
  for (std::size_t start = 0, step = 0; start < order.size(); start += config.batch_size, ++step) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    std::vector<PointCloud> clouds;
    std::vector<std::size_t> labels;
    for (std::size_t i = start; i < end; ++i) {
      const PointCloud& src = train[order[i]];
      clouds.push_back(config.augment
                           ? augment(src, derive_seed(config.seed, (kAugment << 40) + epoch * train.size() + i), aug)
                           : src);
      labels.push_back(*src.label);
    }
    std::vector<const PointCloud*> batch;
    for (const PointCloud& c : clouds) batch.push_back(&c);

    std::mt19937_64 dropout_rng(derive_seed(config.seed, (kDropout << 40) + epoch * 100003 + step));
    Tape tape;
    ForwardContext ctx;
    ctx.mode = Mode::kTrain;
    ctx.tape = &tape;
    ctx.dropout_rng = &dropout_rng;
    ctx.collect_pairs = config.lambda != 0.0;
    ForwardResult fwd = model.forward(batch, ctx);
    LossTerms loss = total_loss(fwd.logits, labels, fwd.pairs, state.discriminators(),
                                config.lambda, config.estimator, &tape);
    for (Parameter* p : params) p->zero_grad();
    tape.backward(loss.total, Retain::kLeavesOnly);
    adam_step(params, state.adam(), rec.lr);

    const double w = static_cast<double>(end - start);
    loss_sum += loss.total.value()(0, 0) * w;
    ce_sum += loss.cross_entropy * w;
    mi_sum += loss.lmir * w;
  }
  const double n = static_cast<double>(train.size());
  rec.train_loss = loss_sum / n;
  rec.cross_entropy = ce_sum / n;
  rec.lmir = mi_sum / n;
  return rec;
}

std::vector<std::size_t> predict(const PointClassifier& model, std::span<const PointCloud> clouds,
                                 std::size_t batch) {
  if (batch == 0) batch = 1;
  std::vector<std::size_t> out;
  out.reserve(clouds.size());
  ForwardContext ctx;  // eval mode, no tape
  for (std::size_t start = 0; start < clouds.size(); start += batch) {
    const std::size_t end = std::min(clouds.size(), start + batch);
    std::vector<const PointCloud*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&clouds[i]);
    const ForwardResult fwd = model.forward(ptrs, ctx);
    for (std::size_t r = 0; r < ptrs.size(); ++r) out.push_back(argmax_row(fwd.logits.value(), r));
  }
  return out;
}

MetricsRecord evaluate(const PointClassifier& model, std::span<const PointCloud> test,
                       std::size_t num_classes, const EvalOptions& options) {
  if (test.empty()) throw ConfigError("evaluation set is empty");
  if (options.points > 0 && options.points < model.config().min_points()) {
    throw CardinalityError("evaluation budget of " + std::to_string(options.points) +
                           " points is below the " + std::to_string(model.config().min_points()) +
                           " the model samples");
  }
  std::vector<PointCloud> reduced;
  std::span<const PointCloud> clouds = test;
  if (options.points > 0) {
    reduced.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      reduced.push_back(test[i].size() > options.points
                            ? subsample(test[i], options.points, derive_seed(options.seed, i))
                            : test[i]);
    }
    clouds = reduced;
  }
  const std::vector<std::size_t> pred = predict(model, clouds, options.batch);
  MetricsRecord rec;
  rec.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (!clouds[i].label || *clouds[i].label >= num_classes) {
      throw LabelError("test cloud without a label in [0, " + std::to_string(num_classes) + ")");
    }
    ++rec.confusion[*clouds[i].label][pred[i]];
  }
  fill_accuracies(rec);
  return rec;
}

std::vector<MetricsRecord> train(PointClassifier& model, TrainingState& state, const Dataset& data,
                                 const TrainConfig& config, const EpochCallback& on_epoch) {
  if (data.train.empty()) throw ConfigError("training set is empty");
  std::vector<MetricsRecord> history;
  for (std::size_t epoch = state.epochs_done(); epoch < config.epochs; ++epoch) {
    MetricsRecord rec = train_epoch(model, state, data.train, config, epoch);
    if (!data.test.empty()) {
      EvalOptions eval;
      eval.batch = config.eval_batch;
      const MetricsRecord test = evaluate(model, data.test, model.config().num_classes, eval);
      rec.overall_accuracy = test.overall_accuracy;
      rec.mean_class_accuracy = test.mean_class_accuracy;
      rec.confusion = test.confusion;
    }
    state.set_epochs_done(epoch + 1);
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (config.target_accuracy > 0.0 && rec.overall_accuracy >= config.target_accuracy) break;
  }
  return history;
}

}  // namespace shufflepoint
