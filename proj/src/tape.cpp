// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "shufflepoint/errors.hpp"

namespace shufflepoint {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

std::atomic<std::uint64_t> g_tapes_constructed{0};

ConstMap view(const Matrix& m) { return ConstMap(m.data(), m.rows(), m.cols()); }
MutMap view(Matrix& m) { return MutMap(m.data(), m.rows(), m.cols()); }

// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() == 0) return Matrix(a.rows(), b.rows());
  Matrix out = Matrix::uninitialized(a.rows(), b.rows());
  if (!out.empty()) view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0) return Matrix(a.cols(), b.cols());
  Matrix out = Matrix::uninitialized(a.cols(), b.cols());
  if (!out.empty()) view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.data() + r * m.cols();
    for (std::size_t c = 0; c < m.cols(); ++c) out.data()[c] += row[c];
  }
  return out;
}

Tape* common_tape(std::initializer_list<const Var*> inputs) {
  Tape* tape = nullptr;
  for (const Var* v : inputs) {
    if (!v->traced()) continue;
    if (tape != nullptr && tape != v->tape()) {
      throw ContractError("operation inputs are recorded on different tapes");
    }
    tape = v->tape();
  }
  return tape;
}

Var finish(OpKind kind, std::initializer_list<const Var*> inputs, Matrix value,
           Tape::BackwardFn backward) {
  Tape* tape = common_tape(inputs);
  if (tape == nullptr) return Var::constant(std::move(value));
  return tape->record(kind, inputs, std::move(value), std::move(backward));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + " shape mismatch: " + a.value().shape_string() +
                         " vs " + b.value().shape_string());
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Rows per block in pair_mlp; the hidden block stays cache-sized.
constexpr std::size_t kPairBlock = 256;

// Rows [begin, begin + rows) of x w1x + z w1z + b1.
void pair_pre_activation(const Matrix& x, const Matrix& z, const Matrix& w1x, const Matrix& w1z,
                         const Matrix& b1, std::size_t begin, std::size_t rows, RowMajor& out) {
  const ConstMap xb(x.data() + begin * x.cols(), rows, x.cols());
  const ConstMap zb(z.data() + begin * z.cols(), rows, z.cols());
  out.noalias() = xb * view(w1x);
  out.noalias() += zb * view(w1z);
  out.rowwise() += Eigen::Map<const Eigen::Matrix<double, 1, Eigen::Dynamic>>(b1.data(), b1.cols());
}

template <typename F>
Matrix map_values(const Matrix& in, F f) {
  Matrix out = Matrix::uninitialized(in.rows(), in.cols());
  const double* src = in.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kLinear: return "linear";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kPermuteCols: return "permute_cols";
    case OpKind::kSegmentMax: return "segment_max";
    case OpKind::kSegmentMean: return "segment_mean";
    case OpKind::kRepeatRows: return "repeat_rows";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kDropout: return "dropout";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kPairMlp: return "pair_mlp";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Var / Tape

Var Var::constant(Matrix m) {
  Var v;
  v.value_ = std::make_shared<const Matrix>(std::move(m));
  return v;
}

Var Var::borrow(const Matrix& m) {
  Var v;
  v.value_ = std::shared_ptr<const Matrix>(std::shared_ptr<const Matrix>{}, &m);
  return v;
}

Tape::Tape() { g_tapes_constructed.fetch_add(1, std::memory_order_relaxed); }

std::uint64_t Tape::constructed_count() {
  return g_tapes_constructed.load(std::memory_order_relaxed);
}

Var Tape::make_var(std::size_t id) {
  Var v;
  v.value_ = nodes_[id].value;
  v.tape_ = this;
  v.id_ = id;
  return v;
}

Var Tape::watch(Parameter& p) {
  if (auto it = watched_.find(&p); it != watched_.end()) return make_var(it->second);
  Node node;
  node.kind = OpKind::kParameter;
  node.value = std::shared_ptr<const Matrix>(std::shared_ptr<const Matrix>{}, &p.value);
  node.param = &p;
  nodes_.push_back(std::move(node));
  watched_.emplace(&p, nodes_.size() - 1);
  return make_var(nodes_.size() - 1);
}

Var Tape::leaf(Matrix m) {
  Node node;
  node.kind = OpKind::kLeaf;
  node.value = std::make_shared<const Matrix>(std::move(m));
  nodes_.push_back(std::move(node));
  return make_var(nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::initializer_list<const Var*> inputs, Matrix value,
                 BackwardFn backward) {
  Node node;
  node.kind = kind;
  for (const Var* v : inputs) {
    if (v->tape_ == this) node.inputs.push_back(v->id_);
  }
  node.value = std::make_shared<const Matrix>(std::move(value));
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return make_var(nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Matrix& grad) {
  if (v.tape_ != this) return;
  Node& node = nodes_[v.id_];
  if (!node.value->same_shape(grad)) {
    throw DimensionError(std::string("adjoint shape ") + grad.shape_string() +
                         " does not match value " + node.value->shape_string());
  }
  if (!node.has_adjoint) {
    node.adjoint = grad;
    node.has_adjoint = true;
  } else {
    add_in_place(node.adjoint, grad);
  }
}

void Tape::accumulate(const Var& v, Matrix&& grad) {
  if (v.tape_ != this) return;
  Node& node = nodes_[v.id_];
  if (!node.value->same_shape(grad)) {
    throw DimensionError(std::string("adjoint shape ") + grad.shape_string() +
                         " does not match value " + node.value->shape_string());
  }
  if (!node.has_adjoint) {
    node.adjoint = std::move(grad);
    node.has_adjoint = true;
  } else {
    add_in_place(node.adjoint, grad);
  }
}

void Tape::backward(const Var& loss, Retain retain) {
  if (loss.tape_ != this) throw ContractError("loss is not recorded on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward needs a 1x1 loss, got " + loss.value().shape_string());
  }
  if (backward_done_) throw ContractError("backward already ran on this tape; reset first");
  backward_done_ = true;

  accumulate(loss, Matrix(1, 1, 1.0));
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.has_adjoint && node.backward) {
      // The callback may append into other nodes' adjoints but never into its own.
      node.backward(*this, *node.value, node.adjoint);
    }
    const bool is_leaf = node.kind == OpKind::kLeaf || node.kind == OpKind::kParameter;
    if (retain == Retain::kLeavesOnly && !is_leaf) {
      node.adjoint = Matrix();
      node.has_adjoint = false;
      node.backward = nullptr;
    }
  }
  for (Node& node : nodes_) {
    if (node.param == nullptr || !node.has_adjoint) continue;
    Parameter& p = *node.param;
    if (!p.grad.same_shape(p.value)) p.zero_grad();
    add_in_place(p.grad, node.adjoint);
  }
}

Matrix Tape::adjoint(const Var& v) const {
  if (v.tape_ != this) throw ContractError("variable is not recorded on this tape");
  const Node& node = nodes_.at(v.id_);
  if (node.has_adjoint) return node.adjoint;
  return Matrix(node.value->rows(), node.value->cols());
}

void Tape::reset() {
  nodes_.clear();
  watched_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  Matrix value = matmul_values(a.value(), b.value());
  return finish(OpKind::kMatmul, {&a, &b}, std::move(value),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.needs_grad(a)) t.accumulate(a, matmul_nt(g, b.value()));
                  if (t.needs_grad(b)) t.accumulate(b, matmul_tn(a.value(), g));
                });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear bias shape " + b.value().shape_string() +
                         " does not match weight " + w.value().shape_string());
  }
  Matrix value = matmul_values(x.value(), w.value());
  const double* bias = b.value().data();
  for (std::size_t r = 0; r < value.rows(); ++r) {
    double* row = value.data() + r * value.cols();
    for (std::size_t c = 0; c < value.cols(); ++c) row[c] += bias[c];
  }
  return finish(OpKind::kLinear, {&x, &w, &b}, std::move(value),
                [x, w, b](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.needs_grad(x)) t.accumulate(x, matmul_nt(g, w.value()));
                  if (t.needs_grad(w)) t.accumulate(w, matmul_tn(x.value(), g));
                  if (t.needs_grad(b)) t.accumulate(b, column_sums(g));
                });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Matrix value = a.value();
  add_in_place(value, b.value());
  return finish(OpKind::kAdd, {&a, &b}, std::move(value),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Matrix value = a.value();
  for (std::size_t i = 0; i < value.size(); ++i) value.data()[i] -= b.value().data()[i];
  return finish(OpKind::kSub, {&a, &b}, std::move(value),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  t.accumulate(a, g);
                  if (t.needs_grad(b)) t.accumulate(b, map_values(g, [](double v) { return -v; }));
                });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Matrix value = a.value();
  for (std::size_t i = 0; i < value.size(); ++i) value.data()[i] *= b.value().data()[i];
  return finish(OpKind::kMul, {&a, &b}, std::move(value),
                [a, b](Tape& t, const Matrix&, const Matrix& g) {
                  if (t.needs_grad(a)) {
                    Matrix ga = g;
                    for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] *= b.value().data()[i];
                    t.accumulate(a, std::move(ga));
                  }
                  if (t.needs_grad(b)) {
                    Matrix gb = g;
                    for (std::size_t i = 0; i < gb.size(); ++i) gb.data()[i] *= a.value().data()[i];
                    t.accumulate(b, std::move(gb));
                  }
                });
}

Var scale(const Var& a, double s) {
  Matrix value = map_values(a.value(), [s](double v) { return v * s; });
  return finish(OpKind::kScale, {&a}, std::move(value),
                [a, s](Tape& t, const Matrix&, const Matrix& g) {
                  t.accumulate(a, map_values(g, [s](double v) { return v * s; }));
                });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row shape mismatch: " + a.value().shape_string() + " + " +
                         row.value().shape_string());
  }
  Matrix value = a.value();
  const double* r = row.value().data();
  for (std::size_t i = 0; i < value.rows(); ++i) {
    double* dst = value.data() + i * value.cols();
    for (std::size_t c = 0; c < value.cols(); ++c) dst[c] += r[c];
  }
  return finish(OpKind::kAddRow, {&a, &row}, std::move(value),
                [a, row](Tape& t, const Matrix&, const Matrix& g) {
                  t.accumulate(a, g);
                  if (t.needs_grad(row)) t.accumulate(row, column_sums(g));
                });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

Var relu(const Var& x) {
  Matrix value = map_values(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return finish(OpKind::kRelu, {&x}, std::move(value),
                [x](Tape& t, const Matrix& y, const Matrix& g) {
                  Matrix gx = Matrix::uninitialized(g.rows(), g.cols());
                  const double* out = y.data();
                  for (std::size_t i = 0; i < gx.size(); ++i)
                    gx.data()[i] = out[i] > 0.0 ? g.data()[i] : 0.0;
                  t.accumulate(x, std::move(gx));
                });
}

Var sigmoid(const Var& x) {
  Matrix value = map_values(x.value(), stable_sigmoid);
  return finish(OpKind::kSigmoid, {&x}, std::move(value),
                [x](Tape& t, const Matrix& y, const Matrix& g) {
                  Matrix gx = g;
                  for (std::size_t i = 0; i < gx.size(); ++i) {
                    const double s = y.data()[i];
                    gx.data()[i] *= s * (1.0 - s);
                  }
                  t.accumulate(x, std::move(gx));
                });
}

Var softplus(const Var& x) {
  Matrix value = map_values(x.value(), [](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  });
  return finish(OpKind::kSoftplus, {&x}, std::move(value),
                [x](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix gx = g;
                  const double* in = x.value().data();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= stable_sigmoid(in[i]);
                  t.accumulate(x, std::move(gx));
                });
}

// ---------------------------------------------------------------------------
// Reshaping and indexing

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols row mismatch: " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
  const std::size_t ca = a.cols();
  const std::size_t cb = b.cols();
  Matrix value = Matrix::uninitialized(a.rows(), ca + cb);
  for (std::size_t r = 0; r < value.rows(); ++r) {
    double* dst = value.data() + r * (ca + cb);
    std::copy_n(a.value().data() + r * ca, ca, dst);
    std::copy_n(b.value().data() + r * cb, cb, dst + ca);
  }
  return finish(OpKind::kConcatCols, {&a, &b}, std::move(value),
                [a, b, ca, cb](Tape& t, const Matrix&, const Matrix& g) {
                  const std::size_t rows = g.rows();
                  if (t.needs_grad(a)) {
                    Matrix ga = Matrix::uninitialized(rows, ca);
                    for (std::size_t r = 0; r < rows; ++r)
                      std::copy_n(g.data() + r * (ca + cb), ca, ga.data() + r * ca);
                    t.accumulate(a, std::move(ga));
                  }
                  if (t.needs_grad(b)) {
                    Matrix gb = Matrix::uninitialized(rows, cb);
                    for (std::size_t r = 0; r < rows; ++r)
                      std::copy_n(g.data() + r * (ca + cb) + ca, cb, gb.data() + r * cb);
                    t.accumulate(b, std::move(gb));
                  }
                });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const std::size_t cols = a.cols();
  if (begin + count > cols) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         a.value().shape_string());
  }
  Matrix value = Matrix::uninitialized(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r)
    std::copy_n(a.value().data() + r * cols + begin, count, value.data() + r * count);
  return finish(OpKind::kSliceCols, {&a}, std::move(value),
                [a, begin, count, cols](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix ga(g.rows(), cols);
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    std::copy_n(g.data() + r * count, count, ga.data() + r * cols + begin);
                  t.accumulate(a, std::move(ga));
                });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         a.value().shape_string());
  }
  const std::size_t cols = a.cols();
  Matrix value = Matrix::uninitialized(count, cols);
  std::copy_n(a.value().data() + begin * cols, count * cols, value.data());
  return finish(OpKind::kSliceRows, {&a}, std::move(value),
                [a, begin, count, cols](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix ga(a.rows(), cols);
                  std::copy_n(g.data(), count * cols, ga.data() + begin * cols);
                  t.accumulate(a, std::move(ga));
                });
}

Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  const std::size_t cols = a.cols();
  const std::size_t src_rows = a.rows();
  Matrix value = Matrix::uninitialized(index.size(), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= src_rows) {
      throw DimensionError("gather_rows index " + std::to_string(index[i]) +
                           " out of range for " + a.value().shape_string());
    }
    std::copy_n(a.value().data() + index[i] * cols, cols, value.data() + i * cols);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return finish(OpKind::kGatherRows, {&a}, std::move(value),
                [a, idx = std::move(idx), cols, src_rows](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix ga(src_rows, cols);
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    double* dst = ga.data() + idx[i] * cols;
                    const double* src = g.data() + i * cols;
                    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                  }
                  t.accumulate(a, std::move(ga));
                });
}

Var permute_cols(const Var& a, std::span<const std::size_t> perm) {
  const std::size_t cols = a.cols();
  if (perm.size() != cols) {
    throw DimensionError("permute_cols: permutation of length " + std::to_string(perm.size()) +
                         " for " + a.value().shape_string());
  }
  std::vector<char> seen(cols, 0);
  for (std::size_t p : perm) {
    if (p >= cols || seen[p]) throw DimensionError("permute_cols: not a permutation");
    seen[p] = 1;
  }
  Matrix value = Matrix::uninitialized(a.rows(), cols);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* src = a.value().data() + r * cols;
    double* dst = value.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] = src[perm[j]];
  }
  std::vector<std::size_t> p(perm.begin(), perm.end());
  return finish(OpKind::kPermuteCols, {&a}, std::move(value),
                [a, p = std::move(p), cols](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix ga = Matrix::uninitialized(g.rows(), cols);
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    const double* src = g.data() + r * cols;
                    double* dst = ga.data() + r * cols;
                    for (std::size_t j = 0; j < cols; ++j) dst[p[j]] = src[j];
                  }
                  t.accumulate(a, std::move(ga));
                });
}

// ---------------------------------------------------------------------------
// Pooling

Var segment_max_rows(const Var& x, std::size_t segment) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (rows == 0) throw EmptyInputError("max pooling over an empty matrix");
  if (segment == 0 || rows % segment != 0) {
    throw DimensionError("segment size " + std::to_string(segment) + " does not divide " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t groups = rows / segment;
  Matrix value = Matrix::uninitialized(groups, cols);
  std::vector<std::size_t> argmax(groups * cols);
  const double* in = x.value().data();
  for (std::size_t s = 0; s < groups; ++s) {
    const std::size_t first = s * segment;
    double* out = value.data() + s * cols;
    std::size_t* arg = argmax.data() + s * cols;
    std::copy_n(in + first * cols, cols, out);
    std::fill_n(arg, cols, first);
    for (std::size_t r = first + 1; r < first + segment; ++r) {
      const double* row = in + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        if (row[c] > out[c]) {
          out[c] = row[c];
          arg[c] = r;
        }
      }
    }
  }
  return finish(OpKind::kSegmentMax, {&x}, std::move(value),
                [x, argmax = std::move(argmax), rows, cols](Tape& t, const Matrix&,
                                                            const Matrix& g) {
                  Matrix gx(rows, cols);
                  for (std::size_t i = 0; i < argmax.size(); ++i) {
                    const std::size_t c = i % cols;
                    gx(argmax[i], c) += g.data()[i];
                  }
                  t.accumulate(x, std::move(gx));
                });
}

Var segment_mean_rows(const Var& x, std::size_t segment) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (rows == 0) throw EmptyInputError("mean pooling over an empty matrix");
  if (segment == 0 || rows % segment != 0) {
    throw DimensionError("segment size " + std::to_string(segment) + " does not divide " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t groups = rows / segment;
  const double inv = 1.0 / static_cast<double>(segment);
  Matrix value(groups, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.value().data() + r * cols;
    double* out = value.data() + (r / segment) * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c];
  }
  for (double& v : value.values()) v *= inv;
  return finish(OpKind::kSegmentMean, {&x}, std::move(value),
                [x, rows, cols, segment, inv](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix gx = Matrix::uninitialized(rows, cols);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* src = g.data() + (r / segment) * cols;
                    double* dst = gx.data() + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] * inv;
                  }
                  t.accumulate(x, std::move(gx));
                });
}

Var max_pool_rows(const Var& x) {
  if (x.rows() == 0) throw EmptyInputError("max pooling over an empty matrix");
  return segment_max_rows(x, x.rows());
}

Var mean_pool_rows(const Var& x) {
  if (x.rows() == 0) throw EmptyInputError("mean pooling over an empty matrix");
  return segment_mean_rows(x, x.rows());
}

Var repeat_rows(const Var& x, std::size_t times) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Matrix value = Matrix::uninitialized(rows * times, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < times; ++k)
      std::copy_n(x.value().data() + r * cols, cols, value.data() + (r * times + k) * cols);
  return finish(OpKind::kRepeatRows, {&x}, std::move(value),
                [x, rows, cols, times](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix gx(rows, cols);
                  for (std::size_t r = 0; r < rows * times; ++r) {
                    const double* src = g.data() + r * cols;
                    double* dst = gx.data() + (r / times) * cols;
                    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                  }
                  t.accumulate(x, std::move(gx));
                });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return finish(OpKind::kSum, {&x}, Matrix(1, 1, s),
                [x](Tape& t, const Matrix&, const Matrix& g) {
                  t.accumulate(x, Matrix(x.rows(), x.cols(), g(0, 0)));
                });
}

Var mean(const Var& x) {
  if (x.value().empty()) throw EmptyInputError("mean of an empty matrix");
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const double n = static_cast<double>(x.value().size());
  return finish(OpKind::kMean, {&x}, Matrix(1, 1, s / n),
                [x, n](Tape& t, const Matrix&, const Matrix& g) {
                  t.accumulate(x, Matrix(x.rows(), x.cols(), g(0, 0) / n));
                });
}

// ---------------------------------------------------------------------------
// Training-specific layers

Var dropout(const Var& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (double& m : mask.values()) m = keep(rng) ? keep_scale : 0.0;
  Matrix value = x.value();
  for (std::size_t i = 0; i < value.size(); ++i) value.data()[i] *= mask.data()[i];
  return finish(OpKind::kDropout, {&x}, std::move(value),
                [x, mask = std::move(mask)](Tape& t, const Matrix&, const Matrix& g) {
                  Matrix gx = g;
                  for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= mask.data()[i];
                  t.accumulate(x, std::move(gx));
                });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const std::size_t rows = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
  }
  if (rows == 0) throw EmptyInputError("softmax_cross_entropy over zero rows");
  Matrix probs(rows, classes);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) {
      throw LabelError("label " + std::to_string(labels[r]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    const double* z = logits.value().data() + r * classes;
    const double zmax = *std::max_element(z, z + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs(r, c) = std::exp(z[c] - zmax);
      denom += probs(r, c);
    }
    for (std::size_t c = 0; c < classes; ++c) probs(r, c) /= denom;
    total += (zmax + std::log(denom)) - z[labels[r]];
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const double n = static_cast<double>(rows);
  return finish(OpKind::kSoftmaxCrossEntropy, {&logits}, Matrix(1, 1, total / n),
                [logits, probs = std::move(probs), lab = std::move(lab), n](
                    Tape& t, const Matrix&, const Matrix& g) {
                  Matrix gl = probs;
                  for (std::size_t r = 0; r < lab.size(); ++r) gl(r, lab[r]) -= 1.0;
                  const double s = g(0, 0) / n;
                  for (double& v : gl.values()) v *= s;
                  t.accumulate(logits, std::move(gl));
                });
}

Var pair_mlp(const Var& x, const Var& z, const Var& w1x, const Var& w1z, const Var& b1,
             const Var& w2, const Var& b2) {
  const std::size_t n = x.rows();
  const std::size_t hidden = b1.cols();
  if (z.rows() != n || w1x.rows() != x.cols() || w1z.rows() != z.cols() ||
      w1x.cols() != hidden || w1z.cols() != hidden || b1.rows() != 1 || w2.rows() != hidden ||
      w2.cols() != 1 || b2.rows() != 1 || b2.cols() != 1) {
    throw DimensionError("pair_mlp shapes do not line up: x " + x.value().shape_string() + ", z " +
                         z.value().shape_string() + ", w1x " + w1x.value().shape_string() +
                         ", w1z " + w1z.value().shape_string() + ", b1 " +
                         b1.value().shape_string() + ", w2 " + w2.value().shape_string());
  }
  Matrix value = Matrix::uninitialized(n, 1);
  RowMajor h;
  for (std::size_t begin = 0; begin < n; begin += kPairBlock) {
    const std::size_t rows = std::min(kPairBlock, n - begin);
    h.resize(rows, hidden);
    pair_pre_activation(x.value(), z.value(), w1x.value(), w1z.value(), b1.value(), begin, rows, h);
    MutMap out(value.data() + begin, rows, 1);
    out.noalias() = h.cwiseMax(0.0) * view(w2.value());
    out.array() += b2.value()(0, 0);
  }

  return finish(
      OpKind::kPairMlp, {&x, &z, &w1x, &w1z, &b1, &w2, &b2}, std::move(value),
      [x, z, w1x, w1z, b1, w2, b2, n, hidden](Tape& t, const Matrix&, const Matrix& g) {
        using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;
        Matrix dx = Matrix::uninitialized(n, x.cols());
        Matrix dz = Matrix::uninitialized(n, z.cols());
        Matrix dw1x(w1x.rows(), hidden);
        Matrix dw1z(w1z.rows(), hidden);
        Matrix db1(1, hidden);
        Matrix dw2(hidden, 1);
        double db2 = 0.0;
        const Eigen::Map<const Row> w2_row(w2.value().data(), hidden);
        RowMajor h;
        RowMajor dh;
        for (std::size_t begin = 0; begin < n; begin += kPairBlock) {
          const std::size_t rows = std::min(kPairBlock, n - begin);
          h.resize(rows, hidden);
          pair_pre_activation(x.value(), z.value(), w1x.value(), w1z.value(), b1.value(), begin,
                              rows, h);
          const ConstMap gb(g.data() + begin, rows, 1);
          // dh = g w2^T masked by the active units.
          dh.noalias() = gb * w2_row;
          dh = (h.array() > 0.0).select(dh, 0.0);
          const RowMajor act = h.cwiseMax(0.0);
          view(dw2).noalias() += act.transpose() * gb;
          db2 += gb.sum();
          view(db1) += dh.colwise().sum();
          const ConstMap xb(x.value().data() + begin * x.cols(), rows, x.cols());
          const ConstMap zb(z.value().data() + begin * z.cols(), rows, z.cols());
          view(dw1x).noalias() += xb.transpose() * dh;
          view(dw1z).noalias() += zb.transpose() * dh;
          MutMap(dx.data() + begin * x.cols(), rows, x.cols()).noalias() =
              dh * view(w1x.value()).transpose();
          MutMap(dz.data() + begin * z.cols(), rows, z.cols()).noalias() =
              dh * view(w1z.value()).transpose();
        }
        if (t.needs_grad(x)) t.accumulate(x, std::move(dx));
        if (t.needs_grad(z)) t.accumulate(z, std::move(dz));
        if (t.needs_grad(w1x)) t.accumulate(w1x, std::move(dw1x));
        if (t.needs_grad(w1z)) t.accumulate(w1z, std::move(dw1z));
        if (t.needs_grad(b1)) t.accumulate(b1, std::move(db1));
        if (t.needs_grad(w2)) t.accumulate(w2, std::move(dw2));
        if (t.needs_grad(b2)) t.accumulate(b2, Matrix(1, 1, db2));
      });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats,
               Mode mode, bool update_running) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (stats.running_mean.cols() != cols || gamma.cols() != cols || beta.cols() != cols ||
      gamma.rows() != 1 || beta.rows() != 1) {
    throw DimensionError("batch_norm: input " + x.value().shape_string() +
                         " does not match state of width " +
                         std::to_string(stats.running_mean.cols()));
  }
  if (rows == 0) throw EmptyInputError("batch_norm over zero rows");

  Matrix mean_row(1, cols);
  Matrix inv_std(1, cols);
  if (mode == Mode::kTrain) {
    Matrix var_row(1, cols);
    const double* in = x.value().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean_row.data()[c] += in[r * cols + c];
    for (double& m : mean_row.values()) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = in[r * cols + c] - mean_row.data()[c];
        var_row.data()[c] += d * d;
      }
    for (double& v : var_row.values()) v /= static_cast<double>(rows);
    for (std::size_t c = 0; c < cols; ++c)
      inv_std.data()[c] = 1.0 / std::sqrt(var_row.data()[c] + stats.eps);
    if (update_running) {
      const double unbias = rows > 1 ? static_cast<double>(rows) / (rows - 1) : 1.0;
      for (std::size_t c = 0; c < cols; ++c) {
        stats.running_mean.data()[c] = stats.momentum * stats.running_mean.data()[c] +
                                       (1.0 - stats.momentum) * mean_row.data()[c];
        stats.running_var.data()[c] = stats.momentum * stats.running_var.data()[c] +
                                      (1.0 - stats.momentum) * var_row.data()[c] * unbias;
      }
    }
  } else {
    mean_row = stats.running_mean;
    for (std::size_t c = 0; c < cols; ++c)
      inv_std.data()[c] = 1.0 / std::sqrt(stats.running_var.data()[c] + stats.eps);
  }

  auto x_hat = std::make_shared<Matrix>(Matrix::uninitialized(rows, cols));
  Matrix value = Matrix::uninitialized(rows, cols);
  const double* in = x.value().data();
  const double* gm = gamma.value().data();
  const double* bt = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const double h = (in[i] - mean_row.data()[c]) * inv_std.data()[c];
      x_hat->data()[i] = h;
      value.data()[i] = gm[c] * h + bt[c];
    }
  }

  const bool batch_stats = mode == Mode::kTrain;
  return finish(
      OpKind::kBatchNorm, {&x, &gamma, &beta}, std::move(value),
      [x, gamma, beta, x_hat, inv_std, batch_stats, rows, cols](Tape& t, const Matrix&,
                                                                const Matrix& g) {
        const Matrix& h = *x_hat;
        Matrix dgamma(1, cols);
        Matrix dbeta(1, cols);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            dgamma.data()[c] += g.data()[i] * h.data()[i];
            dbeta.data()[c] += g.data()[i];
          }
        if (t.needs_grad(x)) {
          Matrix dx = Matrix::uninitialized(rows, cols);
          const double* gm = gamma.value().data();
          if (batch_stats) {
            // dx = inv_std / n * (n * dh - sum(dh) - h * sum(dh * h)), dh = g * gamma
            const double n = static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                const double sum_dh = dbeta.data()[c] * gm[c];
                const double sum_dh_h = dgamma.data()[c] * gm[c];
                dx.data()[i] = inv_std.data()[c] / n *
                               (n * g.data()[i] * gm[c] - sum_dh - h.data()[i] * sum_dh_h);
              }
          } else {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                dx.data()[i] = g.data()[i] * gm[c] * inv_std.data()[c];
              }
          }
          t.accumulate(x, std::move(dx));
        }
        if (t.needs_grad(gamma)) t.accumulate(gamma, std::move(dgamma));
        if (t.needs_grad(beta)) t.accumulate(beta, std::move(dbeta));
      });
}

}  // namespace shufflepoint
