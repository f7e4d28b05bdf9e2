// Copyright (c) 2026 The ShufflePoint Authors
// SPDX-License-Identifier: MIT

#pragma once

#include <filesystem>

#include "shufflepoint/model.hpp"
#include "shufflepoint/train.hpp"

namespace shufflepoint {

/// Writes the model parameters and batch-norm running statistics as named
/// tensors. With a `state`, also writes its discriminators, the epoch counter
/// and the Adam moments so training can resume. The layout is described in
/// docs/checkpoint_format.md.
void save_checkpoint(const std::filesystem::path& path, PointClassifier& model,
                     TrainingState* state = nullptr);

/// Restores tensors by name into a model built with the same configuration.
///
/// Throws DataError for a bad magic, truncation, an unknown or missing tensor,
/// or a shape mismatch; nothing is modified unless the whole file is valid.
/// Discriminator tensors and the training block are ignored without a `state`.
void load_checkpoint(const std::filesystem::path& path, PointClassifier& model,
                     TrainingState* state = nullptr);

}  // namespace shufflepoint
