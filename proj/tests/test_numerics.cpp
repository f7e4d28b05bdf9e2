// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "doctest.h"
#include "shufflepoint/errors.hpp"
#include "shufflepoint/optim.hpp"
#include "shufflepoint/tape.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace shufflepoint;
using namespace shufflepoint::testing;

namespace {

constexpr double kFdTolerance = 1e-4;
constexpr int kTrials = 100;

Matrix value_of(const Var& v) { return v.value(); }

}  // namespace

TEST_CASE("matmul: identity, hand example and shape errors") {
  std::mt19937_64 rng(1);
  const Matrix m = random_matrix(3, 5, rng);
  CHECK(matmul(Var::constant(Matrix::identity(3)), Var::constant(m)).value() == m);

  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{1}, {1}};
  CHECK(matmul(Var::constant(a), Var::constant(b)).value() == Matrix{{3}, {7}});

  try {
    matmul(Var::constant(Matrix(2, 3)), Var::constant(Matrix(2, 3)));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("2x3") != std::string::npos);
  }
}

TEST_CASE("matmul: gradient of sum(AB) w.r.t. A is ones * B^T") {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(3, 5, rng);
  Tape tape;
  Var va = tape.leaf(a);
  tape.backward(sum(matmul(va, Var::constant(b))));
  const Matrix expected = matmul_values(Matrix(4, 5, 1.0), transpose(b));
  CHECK(max_abs_diff(tape.adjoint(va), expected) < 1e-12);

  auto f = [&](const Matrix& x) { return sum(matmul(Var::constant(x), Var::constant(b))).value()(0, 0); };
  CHECK(relative_error(numeric_gradient(f, a), expected) < kFdTolerance);
}

TEST_CASE("activations: values at known points") {
  const Matrix x{{-5.0, 0.0, 5.0, 50.0}};
  const Matrix r = relu(Var::constant(x)).value();
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 2) == 5.0);

  const Matrix s = softplus(Var::constant(x)).value();
  CHECK(s(0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(std::abs(s(0, 3) - 50.0) < 1e-12);

  const Matrix g = sigmoid(Var::constant(Matrix{{0.0, -1000.0, 1000.0}})).value();
  CHECK(g(0, 0) == 0.5);
  CHECK(g(0, 1) >= 0.0);
  CHECK(g(0, 2) == 1.0);
}

TEST_CASE("activations: finite for |x| <= 1e3") {
  Matrix x(1, 2001);
  for (std::size_t i = 0; i < x.cols(); ++i) x(0, i) = -1000.0 + static_cast<double>(i);
  Var v = Var::constant(x);
  CHECK(softplus(v).value().all_finite());
  CHECK(sigmoid(v).value().all_finite());
  CHECK(relu(v).value().all_finite());
  CHECK(softplus(scale(v, -1.0)).value().all_finite());
  CHECK(softmax_cross_entropy(Var::constant(Matrix{{1000.0, -1000.0}}), std::vector<std::size_t>{1})
            .value()
            .all_finite());
}

TEST_CASE("concat_cols: examples and errors") {
  std::mt19937_64 rng(3);
  const Matrix coords = random_matrix(6, 3, rng);
  CHECK(concat_cols(Var::constant(coords), Var::constant(Matrix(6, 0))).value() == coords);

  const Matrix out =
      concat_cols(Var::constant(Matrix{{1}, {2}}), Var::constant(Matrix{{3}, {4}})).value();
  CHECK(out == Matrix{{1, 3}, {2, 4}});

  CHECK_THROWS_AS(concat_cols(Var::constant(Matrix(2, 1)), Var::constant(Matrix(3, 1))),
                  DimensionError);
}

TEST_CASE("pooling: examples, one-hot max gradient, empty input") {
  const Matrix x{{1, 4}, {3, 2}};
  CHECK(max_pool_rows(Var::constant(x)).value() == Matrix{{3, 4}});
  CHECK(mean_pool_rows(Var::constant(x)).value() == Matrix{{2, 3}});

  const Matrix single{{7, -1, 2}};
  CHECK(max_pool_rows(Var::constant(single)).value() == single);
  CHECK(mean_pool_rows(Var::constant(single)).value() == single);

  Tape tape;
  Var v = tape.leaf(x);
  tape.backward(sum(max_pool_rows(v)));
  CHECK(tape.adjoint(v) == Matrix{{0, 1}, {1, 0}});

  Tape ties;
  Var t = ties.leaf(Matrix{{2, 2}, {2, 2}, {2, 2}});
  ties.backward(sum(max_pool_rows(t)));
  CHECK(ties.adjoint(t) == Matrix{{1, 1}, {0, 0}, {0, 0}});

  CHECK_THROWS_AS(max_pool_rows(Var::constant(Matrix(0, 3))), EmptyInputError);
  CHECK_THROWS_AS(mean_pool_rows(Var::constant(Matrix(0, 3))), EmptyInputError);
}

TEST_CASE("batch_norm: constant column, two-row column, eval independence") {
  const Var gamma = Var::constant(Matrix(1, 2, 1.0));
  const Var beta = Var::constant(Matrix(1, 2, 0.0));

  BatchNormStats stats(2);
  const Matrix out =
      batch_norm(Var::constant(Matrix{{5, 0}, {5, 2}}), gamma, beta, stats, Mode::kTrain).value();
  CHECK(out(0, 0) == 0.0);
  CHECK(out(1, 0) == 0.0);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(out(0, 1) == doctest::Approx(-expected).epsilon(1e-14));
  CHECK(out(1, 1) == doctest::Approx(expected).epsilon(1e-14));

  // Running update with momentum 0.9: mean 0.1 * 1 for column 1, unbiased var 2.
  CHECK(stats.running_mean(0, 1) == doctest::Approx(0.1));
  CHECK(stats.running_var(0, 1) == doctest::Approx(0.9 + 0.1 * 2.0));

  std::mt19937_64 rng(4);
  const Matrix a = random_matrix(5, 2, rng);
  Matrix b = random_matrix(9, 2, rng);
  for (std::size_t c = 0; c < 2; ++c) b(0, c) = a(0, c);
  const BatchNormStats frozen = stats;
  const Matrix ea = batch_norm(Var::constant(a), gamma, beta, stats, Mode::kEval).value();
  const Matrix eb = batch_norm(Var::constant(b), gamma, beta, stats, Mode::kEval).value();
  for (std::size_t c = 0; c < 2; ++c) CHECK(ea(0, c) == eb(0, c));
  CHECK(stats.running_mean == frozen.running_mean);
  CHECK(stats.running_var == frozen.running_var);

  auto two_rows = [](const std::vector<Var>& v) {
    BatchNormStats s(v[0].cols());
    return batch_norm(v[0], v[1], v[2], s, Mode::kTrain);
  };
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<Matrix> in{random_matrix(2, 3, rng), random_matrix(1, 3, rng),
                                 random_matrix(1, 3, rng)};
    const GradientPair g = check_gradient(two_rows, in, 0, random_matrix(2, 3, rng));
    CHECK(max_abs_diff(g.analytic, g.numeric) < 1e-8);
  }

  BatchNormStats untouched(2);
  batch_norm(Var::constant(a), gamma, beta, untouched, Mode::kTrain, false);
  CHECK(untouched.running_mean == Matrix(1, 2, 0.0));
}

TEST_CASE("softmax_cross_entropy: analytic values, gradient, label errors") {
  const Matrix uniform(3, 5, 0.25);
  const std::vector<std::size_t> labels{0, 3, 4};
  CHECK(softmax_cross_entropy(Var::constant(uniform), labels).value()(0, 0) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-14));

  const double tiny =
      softmax_cross_entropy(Var::constant(Matrix{{10, -10}}), std::vector<std::size_t>{0})
          .value()(0, 0);
  CHECK(tiny == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
  CHECK(tiny == doctest::Approx(2.06e-9).epsilon(0.01));

  std::mt19937_64 rng(5);
  const Matrix logits = random_matrix(4, 3, rng);
  const std::vector<std::size_t> y{2, 0, 1, 1};
  Tape tape;
  Var v = tape.leaf(logits);
  tape.backward(softmax_cross_entropy(v, y));
  Matrix expected(4, 3);
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits(r, c));
    for (std::size_t c = 0; c < 3; ++c)
      expected(r, c) = (std::exp(logits(r, c)) / z - (c == y[r] ? 1.0 : 0.0)) / 4.0;
  }
  CHECK(max_abs_diff(tape.adjoint(v), expected) < 1e-12);

  CHECK_THROWS_AS(softmax_cross_entropy(Var::constant(logits), std::vector<std::size_t>{0, 1, 3, 0}),
                  LabelError);
  CHECK_THROWS_AS(softmax_cross_entropy(Var::constant(logits), std::vector<std::size_t>{0}),
                  DimensionError);
}

TEST_CASE("backward: linear case, composite oracle, disconnected, contracts") {
  std::mt19937_64 rng(6);
  Parameter p("p", random_matrix(3, 4, rng));
  Parameter unused("unused", random_matrix(2, 2, rng));
  {
    Tape tape;
    tape.watch(unused);
    tape.backward(sum(tape.watch(p)));
    CHECK(p.grad == Matrix(3, 4, 1.0));
    CHECK(unused.grad == Matrix(2, 2, 0.0));
  }

  const Matrix x = random_matrix(5, 3, rng);
  Parameter w("w", random_matrix(3, 4, rng));
  auto loss_of = [&](Tape* tape) {
    return sum(softplus(matmul(relu(matmul(Var::constant(x), bind(w, tape))), Var::constant(transpose(p.value)))));
  };
  w.zero_grad();
  {
    Tape tape;
    tape.backward(loss_of(&tape));
  }
  auto f = [&](const Matrix& m) {
    const Matrix saved = w.value;
    w.value = m;
    const double v = loss_of(nullptr).value()(0, 0);
    w.value = saved;
    return v;
  };
  CHECK(relative_error(w.grad, numeric_gradient(f, w.value)) < kFdTolerance);

  Tape twice;
  Var v = twice.leaf(Matrix(2, 2, 1.0));
  twice.backward(sum(v));
  CHECK_THROWS_AS(twice.backward(sum(v)), ContractError);

  Tape not_scalar;
  Var m = not_scalar.leaf(Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(not_scalar.backward(m), ContractError);

  Tape a;
  Tape b;
  CHECK_THROWS_AS(add(a.leaf(Matrix(1, 1)), b.leaf(Matrix(1, 1))), ContractError);
}

TEST_CASE("backward: reset allows a second sweep") {
  Tape tape;
  Var v = tape.leaf(Matrix(1, 1, 2.0));
  tape.backward(sum(v));
  tape.reset();
  Var w = tape.leaf(Matrix(1, 1, 2.0));
  tape.backward(sum(scale(w, 3.0)));
  CHECK(tape.adjoint(w)(0, 0) == 3.0);
}

TEST_CASE("backward: bitwise reproducible for a fixed seed") {
  auto run = [] {
    std::mt19937_64 rng(7);
    Parameter w("w", random_matrix(6, 8, rng));
    Parameter gamma("g", Matrix(1, 8, 1.0));
    Parameter beta("b", Matrix(1, 8, 0.0));
    BatchNormStats stats(8);
    const Matrix x = random_matrix(32, 6, rng);
    std::mt19937_64 drop_rng(11);
    Tape tape;
    Var h = relu(batch_norm(matmul(Var::constant(x), tape.watch(w)), tape.watch(gamma),
                            tape.watch(beta), stats, Mode::kTrain));
    h = dropout(h, 0.3, drop_rng);
    std::vector<std::size_t> labels(32);
    for (std::size_t i = 0; i < 32; ++i) labels[i] = i % 8;
    tape.backward(softmax_cross_entropy(h, labels));
    return std::vector<Matrix>{w.grad, gamma.grad, beta.grad};
  };
  CHECK(run() == run());
}

TEST_CASE("untraced operations build no tape") {
  const auto before = Tape::constructed_count();
  Var x = Var::constant(Matrix(3, 3, 1.0));
  Var y = relu(matmul(x, x));
  CHECK_FALSE(y.traced());
  CHECK(Tape::constructed_count() == before);
}

TEST_CASE("adam: fixed point, first step, monotone drive, shape errors") {
  Parameter p("p", Matrix{{1.0, -2.0, 3.0}});
  std::vector<Parameter*> params{&p};
  AdamState state;

  p.zero_grad();
  adam_step(params, state, 0.01);
  CHECK(p.value == Matrix{{1.0, -2.0, 3.0}});
  CHECK(state.step == 1);

  AdamState fresh;
  Parameter q("q", Matrix{{1.0, -2.0, 3.0}});
  q.grad = Matrix{{0.5, -3.0, 1e-3}};
  std::vector<Parameter*> qs{&q};
  adam_step(qs, fresh, 0.01);
  CHECK(q.value(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(q.value(0, 1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(q.value(0, 2) == doctest::Approx(3.0 - 0.01).epsilon(1e-4));

  Parameter r("r", Matrix{{0.0}});
  std::vector<Parameter*> rs{&r};
  AdamState drive;
  double prev = r.value(0, 0);
  for (int i = 0; i < 50; ++i) {
    r.grad = Matrix{{2.0}};
    adam_step(rs, drive, 0.001);
    CHECK(r.value(0, 0) < prev);
    prev = r.value(0, 0);
  }
  CHECK(drive.step == 50);

  r.grad = Matrix(2, 1);
  CHECK_THROWS_AS(adam_step(rs, drive, 0.001), DimensionError);
}

TEST_CASE("cosine_anneal_lr: start, midpoint, restart") {
  CHECK(cosine_anneal_lr(0, 0.001, 32) == 0.001);
  CHECK(cosine_anneal_lr(16, 0.001, 32) == doctest::Approx(0.0005).epsilon(1e-12));
  CHECK(cosine_anneal_lr(16, 0.001, 32, 0.0001) == doctest::Approx(0.00055).epsilon(1e-12));
  CHECK(cosine_anneal_lr(32, 0.001, 32) == 0.001);
  for (std::uint64_t s = 1; s < 32; ++s)
    CHECK(cosine_anneal_lr(s, 0.001, 32) < cosine_anneal_lr(s - 1, 0.001, 32));
}

TEST_CASE("every differentiable operation matches central differences") {
  const std::vector<OpCase> cases = differentiable_op_cases();
  for (std::size_t index = 0; index < cases.size(); ++index) {
    const OpCase& op = cases[index];
    CAPTURE(op.name);
    std::mt19937_64 rng(1000 + index);
    double worst = 0.0;
    for (int trial = 0; trial < kTrials; ++trial) {
      const std::vector<Matrix> inputs = op.inputs(rng);
      std::vector<Var> probe;
      for (const Matrix& m : inputs) probe.push_back(Var::constant(m));
      const Matrix out = value_of(op.fn(probe));
      CHECK(out.all_finite());
      const Matrix weights = random_matrix(out.rows(), out.cols(), rng);
      for (std::size_t which = 0; which < inputs.size(); ++which) {
        const GradientPair g = check_gradient(op.fn, inputs, which, weights);
        worst = std::max(worst, g.error());
      }
    }
    CHECK(worst < kFdTolerance);
  }
}

TEST_CASE("pair_mlp matches the unfused graph across row blocks") {
  std::mt19937_64 rng(77);
  const std::size_t n = 600;
  const Matrix x = random_matrix(n, 3, rng);
  const Matrix z = random_matrix(n, 2, rng);
  const Matrix w1x = random_matrix(3, 5, rng);
  const Matrix w1z = random_matrix(2, 5, rng);
  const Matrix b1 = random_matrix(1, 5, rng);
  const Matrix w2 = random_matrix(5, 1, rng);
  const Matrix b2 = random_matrix(1, 1, rng);
  const Matrix weights = random_matrix(n, 1, rng);

  Tape fused_tape;
  std::vector<Var> a;
  for (const Matrix* m : {&x, &z, &w1x, &w1z, &b1, &w2, &b2}) a.push_back(fused_tape.leaf(*m));
  const Var fused = pair_mlp(a[0], a[1], a[2], a[3], a[4], a[5], a[6]);
  fused_tape.backward(weighted_sum(fused, weights));

  Tape plain_tape;
  std::vector<Var> b;
  for (const Matrix* m : {&x, &z, &w1x, &w1z, &b1, &w2, &b2}) b.push_back(plain_tape.leaf(*m));
  const Var hidden = relu(add(linear(b[0], b[2], b[4]), matmul(b[1], b[3])));
  const Var plain = linear(hidden, b[5], b[6]);
  plain_tape.backward(weighted_sum(plain, weights));

  CHECK(max_abs_diff(fused.value(), plain.value()) < 1e-12);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(relative_error(fused_tape.adjoint(a[i]), plain_tape.adjoint(b[i])) < 1e-12);
  CHECK_THROWS_AS(pair_mlp(a[0], a[1], a[3], a[2], a[4], a[5], a[6]), DimensionError);
}
