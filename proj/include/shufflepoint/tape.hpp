// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "shufflepoint/matrix.hpp"

namespace shufflepoint {

class Tape;

/// A learnable tensor: its value and the gradient accumulated by backward().
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    grad.fill(0.0);
  }
};

/// Handle to a matrix value, optionally recorded on a Tape.
///
/// Untraced handles carry only a value; operations on untraced inputs never
/// touch a tape, which is how inference runs without building a graph.
class Var {
 public:
  Var() = default;

  static Var constant(Matrix m);
  /// Non-owning view; `m` must outlive every Var derived from it.
  static Var borrow(const Matrix& m);

  const Matrix& value() const { return *value_; }
  std::size_t rows() const { return value_->rows(); }
  std::size_t cols() const { return value_->cols(); }
  bool valid() const { return static_cast<bool>(value_); }
  bool traced() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  std::shared_ptr<const Matrix> value_;
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kParameter,
  kMatmul,
  kLinear,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRow,
  kRelu,
  kSigmoid,
  kSoftplus,
  kConcatCols,
  kSliceCols,
  kSliceRows,
  kGatherRows,
  kPermuteCols,
  kSegmentMax,
  kSegmentMean,
  kRepeatRows,
  kBatchNorm,
  kDropout,
  kSoftmaxCrossEntropy,
  kSum,
  kMean,
  kPairMlp,
};

const char* op_name(OpKind kind);

enum class Retain { kAll, kLeavesOnly };

/// Reverse-mode recording of matrix operations.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and the reverse sweep is a plain backwards loop. One tape serves
/// one loss evaluation; backward() may run once per tape.
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const Matrix& out_value, const Matrix& out_adjoint)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to a parameter. Repeated calls return the same node.
  Var watch(Parameter& p);
  /// Traced input that is not a parameter.
  Var leaf(Matrix m);

  /// Reverse sweep from a 1x1 loss. Parameter gradients are added to
  /// Parameter::grad.
  void backward(const Var& loss, Retain retain = Retain::kAll);

  /// d(loss)/d(v) after backward(); zeros when `v` is unreachable from the loss.
  Matrix adjoint(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool backward_done() const { return backward_done_; }

  /// Drops every node so the tape can record a fresh graph.
  void reset();

  // Used by operation implementations.
  Var record(OpKind kind, std::initializer_list<const Var*> inputs, Matrix value,
             BackwardFn backward);
  void accumulate(const Var& v, const Matrix& grad);
  void accumulate(const Var& v, Matrix&& grad);
  bool needs_grad(const Var& v) const { return v.tape_ == this; }

  /// Number of Tape objects constructed so far in this process.
  static std::uint64_t constructed_count();

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    std::shared_ptr<const Matrix> value;
    Matrix adjoint;
    bool has_adjoint = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var make_var(std::size_t id);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> watched_;
  bool backward_done_ = false;
};

/// Parameter as an operand: watched on `tape`, or a plain borrowed value when
/// `tape` is null.
inline Var bind(Parameter& p, Tape* tape) {
  return tape != nullptr ? tape->watch(p) : Var::borrow(p.value);
}

// Every operation below records itself when any input is traced. All inputs of
// one call must belong to the same tape (or be untraced).

Var matmul(const Var& a, const Var& b);
/// x * w + b, with b a 1 x out row broadcast over rows.
Var linear(const Var& x, const Var& w, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1 x cols row to every row of `a`.
Var add_row(const Var& a, const Var& row);

Var relu(const Var& x);
Var sigmoid(const Var& x);
/// log(1 + e^x) evaluated as max(x, 0) + log1p(e^-|x|).
Var softplus(const Var& x);

Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
/// out.row(i) = a.row(index[i]); indices may repeat (gradients add up).
Var gather_rows(const Var& a, std::span<const std::size_t> index);
/// out column j = a column perm[j]; `perm` must be a permutation.
Var permute_cols(const Var& a, std::span<const std::size_t> perm);

/// Max over each run of `segment` consecutive rows. Ties go to the lowest row.
Var segment_max_rows(const Var& x, std::size_t segment);
Var segment_mean_rows(const Var& x, std::size_t segment);
/// 1 x cols result; max/mean over every row.
Var max_pool_rows(const Var& x);
Var mean_pool_rows(const Var& x);
/// Each row repeated `times` times consecutively.
Var repeat_rows(const Var& x, std::size_t times);

Var sum(const Var& x);
Var mean(const Var& x);

/// Inverted dropout; identity when rate == 0.
Var dropout(const Var& x, double rate, std::mt19937_64& rng);

/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels);

enum class Mode { kTrain, kEval };

struct BatchNormStats {
  Matrix running_mean;  // 1 x C
  Matrix running_var;   // 1 x C
  double momentum = 0.9;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(1, channels, 0.0), running_var(1, channels, 1.0) {}
};

/// Per-row scores relu(x w1x + z w1z + b1) w2 + b2, an N x 1 column. The
/// hidden layer is evaluated in row blocks and recomputed during backward,
/// so no N x hidden matrix is ever stored.
Var pair_mlp(const Var& x, const Var& z, const Var& w1x, const Var& w1z, const Var& b1,
             const Var& w2, const Var& b2);

/// Per-column normalization followed by gamma * x_hat + beta.
///
/// Train mode uses batch statistics and, when `update_running` is set, folds
/// them into `stats` as running = momentum * running + (1 - momentum) * batch.
/// Eval mode uses the running statistics only.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats,
               Mode mode, bool update_running = true);

}  // namespace shufflepoint
