// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#include "shufflepoint/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "io_util.hpp"
#include "shufflepoint/errors.hpp"

namespace shufflepoint {

namespace {

using detail::get_le;
using detail::put_le;

constexpr char kMagic[4] = {'P', 'S', 'N', '1'};
constexpr std::uint32_t kMaxName = 4096;

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TrainingBlock {
  std::uint64_t epochs_done = 0;
  std::uint64_t step = 0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double epsilon = 0.0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
};

// Where each loadable tensor lives. Discriminator entries are kept apart so a
// model-only load can skip them.
struct Targets {
  std::map<std::string, Matrix*> model;
  std::map<std::string, Matrix*> disc;
};

Targets collect_targets(PointClassifier& model, TrainingState* state) {
  Targets t;
  for (Parameter* p : model.parameters()) t.model[p->name] = &p->value;
  for (auto& [name, stats] : model.batch_norm_stats()) {
    t.model[name + ".running_mean"] = &stats->running_mean;
    t.model[name + ".running_var"] = &stats->running_var;
  }
  if (state) {
    for (Discriminator& d : state->discriminators())
      for (Parameter* p : d.parameters()) t.disc[p->name] = &p->value;
  }
  return t;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  put_le(out, static_cast<std::uint32_t>(m.rows()));
  put_le(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) put_le(out, v);
}

void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  put_le(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_matrix(out, m);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T read(const char* what) {
    T v{};
    if (!get_le(in_, v)) fail(std::string("truncated ") + what);
    return v;
  }

  Matrix matrix(const std::string& what) {
    const auto rows = read<std::uint32_t>("tensor shape");
    const auto cols = read<std::uint32_t>("tensor shape");
    const std::uint64_t count = std::uint64_t{rows} * cols;
    if (count > remaining() / sizeof(double)) fail("truncated tensor data in " + what);
    Matrix m = Matrix::uninitialized(rows, cols);
    for (double& v : m.values()) v = read<double>("tensor data");
    return m;
  }

  std::string name() {
    const auto len = read<std::uint32_t>("tensor name");
    if (len == 0 || len > kMaxName) fail("tensor name length " + std::to_string(len));
    std::string s(len, '\0');
    if (!in_.read(s.data(), len)) fail("truncated tensor name");
    return s;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void fail(const std::string& msg) const { throw DataError(path_ + ": " + msg); }

 private:
  std::uint64_t remaining() {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    return static_cast<std::uint64_t>(end - here);
  }

  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, PointClassifier& model,
                     TrainingState* state) {
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  for (Parameter* p : model.parameters()) tensors.emplace_back(p->name, &p->value);
  for (auto& [name, stats] : model.batch_norm_stats()) {
    tensors.emplace_back(name + ".running_mean", &stats->running_mean);
    tensors.emplace_back(name + ".running_var", &stats->running_var);
  }
  if (state) {
    for (Discriminator& d : state->discriminators())
      for (Parameter* p : d.parameters()) tensors.emplace_back(p->name, &p->value);
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put_le(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) write_tensor(out, name, *m);
    put_le(out, static_cast<std::uint8_t>(state ? 1 : 0));
    if (state) {
      const AdamState& adam = state->adam();
      put_le(out, static_cast<std::uint64_t>(state->epochs_done()));
      put_le(out, adam.step);
      put_le(out, adam.beta1);
      put_le(out, adam.beta2);
      put_le(out, adam.epsilon);
      put_le(out, static_cast<std::uint32_t>(adam.first_moment.size()));
      for (std::size_t i = 0; i < adam.first_moment.size(); ++i) {
        write_matrix(out, adam.first_moment[i]);
        write_matrix(out, adam.second_moment[i]);
      }
    }
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void load_checkpoint(const std::filesystem::path& path, PointClassifier& model,
                     TrainingState* state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Reader r(in, path.string());

  char magic[4];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 4, kMagic)) {
    r.fail("not a checkpoint (bad magic)");
  }
  const auto count = r.read<std::uint32_t>("tensor count");
  std::vector<NamedTensor> tensors;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.name();
    if (!seen.insert(t.name).second) r.fail("duplicate tensor '" + t.name + "'");
    t.value = r.matrix(t.name);
    tensors.push_back(std::move(t));
  }
  const auto has_training = r.read<std::uint8_t>("training flag");
  if (has_training > 1) r.fail("bad training flag");
  std::optional<TrainingBlock> block;
  if (has_training) {
    TrainingBlock b;
    b.epochs_done = r.read<std::uint64_t>("training block");
    b.step = r.read<std::uint64_t>("training block");
    b.beta1 = r.read<double>("training block");
    b.beta2 = r.read<double>("training block");
    b.epsilon = r.read<double>("training block");
    const auto moments = r.read<std::uint32_t>("moment count");
    for (std::uint32_t i = 0; i < moments; ++i) {
      b.first.push_back(r.matrix("first moment " + std::to_string(i)));
      b.second.push_back(r.matrix("second moment " + std::to_string(i)));
    }
    block = std::move(b);
  }
  if (!r.at_end()) r.fail("trailing bytes after the checkpoint");

  // Validate everything before touching the model.
  Targets targets = collect_targets(model, state);
  const bool want_disc = state && block;
  std::vector<std::pair<Matrix*, const Matrix*>> assignments;
  std::set<std::string> found;
  for (const NamedTensor& t : tensors) {
    Matrix* dst = nullptr;
    if (auto it = targets.model.find(t.name); it != targets.model.end()) {
      dst = it->second;
    } else if (auto jt = targets.disc.find(t.name); jt != targets.disc.end()) {
      if (!want_disc) continue;
      dst = jt->second;
    } else if (t.name.rfind("disc", 0) == 0 && !want_disc) {
      continue;
    } else {
      r.fail("unknown tensor '" + t.name + "'");
    }
    if (!dst->same_shape(t.value)) {
      r.fail("tensor '" + t.name + "' is " + std::to_string(t.value.rows()) + "x" +
             std::to_string(t.value.cols()) + ", the model expects " + std::to_string(dst->rows()) +
             "x" + std::to_string(dst->cols()));
    }
    found.insert(t.name);
    assignments.emplace_back(dst, &t.value);
  }
  for (const auto& [name, m] : targets.model)
    if (!found.count(name)) r.fail("missing tensor '" + name + "'");
  if (want_disc) {
    for (const auto& [name, m] : targets.disc)
      if (!found.count(name)) r.fail("missing tensor '" + name + "'");
  }
  std::vector<Parameter*> params;
  if (want_disc) {
    params = state->parameters();
    if (!block->first.empty() && block->first.size() != params.size()) {
      r.fail("checkpoint has " + std::to_string(block->first.size()) +
             " optimizer moments for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < block->first.size(); ++i) {
      if (!block->first[i].same_shape(params[i]->value) ||
          !block->second[i].same_shape(params[i]->value)) {
        r.fail("optimizer moment " + std::to_string(i) + " does not match '" + params[i]->name + "'");
      }
    }
  }

  for (auto& [dst, src] : assignments) *dst = *src;
  if (want_disc) {
    AdamState& adam = state->adam();
    adam.step = block->step;
    adam.beta1 = block->beta1;
    adam.beta2 = block->beta2;
    adam.epsilon = block->epsilon;
    adam.first_moment = std::move(block->first);
    adam.second_moment = std::move(block->second);
    state->set_epochs_done(block->epochs_done);
  }
}

}  // namespace shufflepoint
