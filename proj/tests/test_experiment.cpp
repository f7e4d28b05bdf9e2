// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "shufflepoint/checkpoint.hpp"
#include "shufflepoint/errors.hpp"
#include "shufflepoint/experiment.hpp"
#include "shufflepoint/run_config.hpp"
#include "test_support.hpp"

using namespace shufflepoint;
using namespace shufflepoint::testing;
namespace fs = std::filesystem;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in, "test.cfg");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.num_classes = 4;
  c.block_points = {16, 8};
  c.widths = {8, 8, 16};
  c.group_size = 4;
  c.psn_layers = 2;
  c.head_widths = {8};
  c.shuffle = {2, 2};
  return c;
}

RunConfig tiny_run() {
  RunConfig c;
  c.synthetic.train_per_class = 3;
  c.synthetic.test_per_class = 2;
  c.synthetic.points = 48;
  c.model = tiny_model();
  c.train.batch_size = 6;
  c.train.epochs = 1;
  c.train.disc_hidden = 8;
  return c;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(n));
}

std::vector<Matrix> snapshot(PointClassifier& model) {
  std::vector<Matrix> out;
  for (Parameter* p : model.parameters()) out.push_back(p->value);
  for (auto& [name, s] : model.batch_norm_stats()) {
    out.push_back(s->running_mean);
    out.push_back(s->running_var);
  }
  return out;
}

bool same(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i].same_shape(b[i]) || max_abs_diff(a[i], b[i]) != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("run config text round-trips every key") {
  RunConfig c;
  c.seed = 123;
  c.threads = 3;
  c.manifest = "data/shapes.txt";
  c.synthetic.classes = {ShapeClass::kTorus, ShapeClass::kCube};
  c.synthetic.noise = 0.1;
  c.model.widths = {16, 32, 48};
  c.model.radii = {1.0 / 3.0, 0.7};
  c.model.head_widths = {};
  c.model.sampler = SamplerKind::kFps;
  c.model.fps_start = FpsStart::kCentroid;
  c.model.attention_coords = AttentionCoords::kCentroid;
  c.train.lr = 3e-4;
  c.train.estimator = EstimatorKind::kDim;
  c.train.augment = false;
  c.bench.sweep = {{100000, 10000}};
  c.ablate.arms = {AblationArm::kShuffleLmir};

  const std::string text = format_run_config(c);
  const RunConfig back = parse(text);
  CHECK(format_run_config(back) == text);
  CHECK(back.model.radii[0] == 1.0 / 3.0);
  CHECK(back.train.lr == 3e-4);
  CHECK(back.model.head_widths.empty());
  CHECK(back.synthetic.classes == c.synthetic.classes);
  CHECK(back.bench.sweep == c.bench.sweep);

  // One line per key, in the published order.
  std::istringstream lines(text);
  std::vector<std::string> names;
  for (std::string line; std::getline(lines, line);) names.push_back(line.substr(0, line.find(" = ")));
  CHECK(names == run_config_keys());
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
}

TEST_CASE("run config parsing") {
  const RunConfig c = parse("# comment\n\n  train.lambda = 0.25   # trailing\nseed=9\n");
  CHECK(c.train.lambda == 0.25);
  CHECK(c.seed == 9);
  CHECK(c.train.epochs == TrainConfig{}.epochs);

  CHECK(error_of("seed = 1\nbogus.key = 3\n").find("test.cfg:2") != std::string::npos);
  CHECK(error_of("bogus.key = 3\n").find("unknown key 'bogus.key'") != std::string::npos);
  CHECK(error_of("seed = 1\nseed = 2\n").find("twice") != std::string::npos);
  CHECK(error_of("seed = -1\n").find("non-negative integer") != std::string::npos);
  CHECK(error_of("train.lr = fast\n").find("finite number") != std::string::npos);
  CHECK(error_of("train.lr = inf\n").find("finite number") != std::string::npos);
  CHECK(error_of("model.widths = 8,8\n").find("3 comma-separated") != std::string::npos);
  CHECK(error_of("train.augment = yes\n").find("true or false") != std::string::npos);
  CHECK(error_of("model.sampler = random\n").find("unknown sampler") != std::string::npos);
  CHECK(error_of("synthetic.classes = sphere,cone\n").find("test.cfg:1") != std::string::npos);
  CHECK(error_of("ablate.arms = everything\n").find("unknown ablation arm") != std::string::npos);
  CHECK(error_of("bench.sweep = 100\n").find("n_in:n_out") != std::string::npos);
  CHECK(error_of("just words\n").find("key = value") != std::string::npos);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("ablation arms differ only in shuffles and the regularizer") {
  for (AblationArm arm : {AblationArm::kNoShuffle, AblationArm::kShuffle, AblationArm::kShuffleDim,
                          AblationArm::kShuffleLmir}) {
    CHECK(parse_arm(arm_name(arm)) == arm);
  }
  ModelConfig m = tiny_model();
  TrainConfig t;
  apply_arm(AblationArm::kNoShuffle, m, t);
  CHECK(m.shuffle.sample_groups == 1);
  CHECK(m.shuffle.channel_groups == 1);
  CHECK(t.lambda == 0.0);

  m = tiny_model();
  t = TrainConfig{};
  apply_arm(AblationArm::kShuffleDim, m, t);
  CHECK(m.shuffle.sample_groups == 2);
  CHECK(t.estimator == EstimatorKind::kDim);
  CHECK(t.lambda == TrainConfig{}.lambda);

  CHECK(!reference_arm(AblationArm::kNoShuffle));
  CHECK(reference_arm(AblationArm::kShuffleLmir) == AblationArm::kShuffle);
}

TEST_CASE("checkpoint round trip restores parameters, statistics and optimizer state") {
  TempDir dir("ckpt");
  const RunConfig run = tiny_run();
  const Dataset data = load_run_dataset(run);
  const ModelConfig mc = resolved_model_config(run, data);
  const TrainConfig tc = resolved_train_config(run);

  PointClassifier model(mc, 1);
  TrainingState state(model, tc);
  train(model, state, data, tc);
  save_checkpoint(dir.path / "a.psn", model, &state);

  PointClassifier other(mc, 2);
  TrainingState other_state(other, tc);
  CHECK_FALSE(same(snapshot(model), snapshot(other)));
  load_checkpoint(dir.path / "a.psn", other, &other_state);
  CHECK(same(snapshot(model), snapshot(other)));
  CHECK(other_state.epochs_done() == 1);
  CHECK(other_state.adam().step == state.adam().step);
  CHECK(same(other_state.adam().first_moment, state.adam().first_moment));
  CHECK(same(other_state.adam().second_moment, state.adam().second_moment));
  for (std::size_t d = 0; d < state.discriminators().size(); ++d) {
    CHECK(max_abs_diff(other_state.discriminators()[d].w1().value,
                       state.discriminators()[d].w1().value) == 0.0);
  }
  CHECK(predict(other, data.test) == predict(model, data.test));

  // Saving again reproduces the file byte for byte.
  save_checkpoint(dir.path / "b.psn", other, &other_state);
  CHECK(read_bytes(dir.path / "a.psn") == read_bytes(dir.path / "b.psn"));

  // A model-only load skips the discriminators and optimizer block.
  PointClassifier bare(mc, 3);
  load_checkpoint(dir.path / "a.psn", bare);
  CHECK(same(snapshot(model), snapshot(bare)));

  // Files without a training block still load into a training state.
  save_checkpoint(dir.path / "c.psn", model);
  PointClassifier fresh(mc, 4);
  TrainingState fresh_state(fresh, tc);
  load_checkpoint(dir.path / "c.psn", fresh, &fresh_state);
  CHECK(same(snapshot(model), snapshot(fresh)));
  CHECK(fresh_state.epochs_done() == 0);
}

TEST_CASE("corrupt or mismatched checkpoints are rejected without side effects") {
  TempDir dir("ckpt_bad");
  const ModelConfig mc = tiny_model();
  PointClassifier model(mc, 1);
  TrainConfig tc;
  tc.disc_hidden = 8;
  TrainingState state(model, tc);
  save_checkpoint(dir.path / "good.psn", model, &state);
  const auto bytes = read_bytes(dir.path / "good.psn");
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PSN1");

  PointClassifier target(mc, 9);
  const auto before = snapshot(target);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{7}, std::size_t{20},
                          bytes.size() / 2, bytes.size() - 1}) {
    write_bytes(dir.path / "cut.psn", bytes, cut);
    CAPTURE(cut);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "cut.psn", target), DataError);
    CHECK(same(snapshot(target), before));
  }

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write_bytes(dir.path / "magic.psn", bad_magic, bad_magic.size());
  CHECK_THROWS_AS(load_checkpoint(dir.path / "magic.psn", target), DataError);

  auto trailing = bytes;
  trailing.push_back(0);
  write_bytes(dir.path / "trailing.psn", trailing, trailing.size());
  CHECK_THROWS_AS(load_checkpoint(dir.path / "trailing.psn", target), DataError);

  ModelConfig wider = mc;
  wider.widths = {8, 8, 24};
  PointClassifier mismatched(wider, 1);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir.path / "good.psn", mismatched),
                       doctest::Contains("the model expects"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.psn", target), DataError);
  CHECK(same(snapshot(target), before));
}

TEST_CASE("sampling benchmark rows") {
  BenchConfig b;
  b.sweep = {{1024, 512}, {64, 128}};
  b.clusters = 8;
  b.repeats = 1;  // raised to the minimum of five
  std::size_t reported = 0;
  const auto rows = run_sampling_bench(b, 2, [&](const BenchRow&) { ++reported; });
  REQUIRE(rows.size() == 4);
  CHECK(reported == 4);
  CHECK(rows[0].method == "fps");
  CHECK(rows[1].method == "cluster_fps");
  CHECK(rows[1].clusters == 8);
  CHECK(rows[1].threads == 2);
  CHECK(rows[0].skipped.empty());
  CHECK(rows[0].covering_radius > 0.0);
  CHECK_FALSE(rows[2].skipped.empty());
  CHECK_FALSE(rows[3].skipped.empty());

  // The sampled indices do not depend on the worker count.
  const auto single = run_sampling_bench(b, 1);
  CHECK(single[1].index_checksum == rows[1].index_checksum);
  CHECK(single[1].covering_radius == rows[1].covering_radius);

  std::ostringstream csv;
  write_bench_csv(csv, rows);
  std::istringstream lines(csv.str());
  std::string header;
  std::getline(lines, header);
  CHECK(header == "method,n_in,n_out,clusters,threads,median_ms,covering_radius");
  for (std::string line; std::getline(lines, line);)
    CHECK(std::count(line.begin(), line.end(), ',') == 6);
}

TEST_CASE("metrics and confusion CSV layout") {
  MetricsRecord r;
  r.epoch = 3;
  r.train_loss = 0.5;
  r.lr = 1e-3;
  r.overall_accuracy = 0.1;
  r.confusion = {{2, 1}, {0, 3}};
  CHECK(metrics_csv_header() == "epoch,train_loss,cross_entropy,lmir,lr,overall_accuracy,mean_class_accuracy");
  CHECK(metrics_csv_row(r) == "3,0.5,0,0,0.001,0.10000000000000001,0");
  std::ostringstream conf;
  write_confusion_csv(conf, r, {"a", "b"});
  CHECK(conf.str() == "true\\predicted,a,b\na,2,1\nb,0,3\n");
}

TEST_CASE("ablation produces one row per arm and seed") {
  RunConfig run = tiny_run();
  run.ablate.seeds = 2;
  run.seed = 40;
  const Dataset data = load_run_dataset(run);
  std::set<std::size_t> param_counts;
  const auto rows = run_ablation(run, data, [&](const AblationRow&, const PointClassifier& m) {
    param_counts.insert(m.parameter_count());
  });
  REQUIRE(rows.size() == 8);
  CHECK(param_counts.size() == 1);
  CHECK(rows[0].arm == AblationArm::kNoShuffle);
  CHECK(rows[0].seed == 40);
  CHECK(rows[1].seed == 41);
  CHECK(rows[7].arm == AblationArm::kShuffleLmir);
  for (const AblationRow& r : rows) CHECK(r.epochs == 1);

  const auto summary = summarize_ablation(rows);
  REQUIRE(summary.size() == 4);
  CHECK(summary[0].runs == 2);
  CHECK(summary[0].mean_overall ==
        doctest::Approx((rows[0].overall_accuracy + rows[1].overall_accuracy) / 2.0));

  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  CHECK(csv.str().rfind("arm,seed,epochs,overall_accuracy,mean_class_accuracy\nbaseline,40,1,", 0) == 0);

  run.ablate.seeds = 0;
  CHECK_THROWS_AS(run_ablation(run, data), ConfigError);
}
