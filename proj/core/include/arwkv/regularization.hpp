// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "arwkv/autodiff.hpp"
#include "arwkv/rng.hpp"
#include "arwkv/tensor.hpp"

namespace arwkv {

/// Spectrogram inputs [B, 1, n_mels, n_frames] with probability-vector targets [B, K].
template <typename T>
struct SoftLabelBatch {
  Tensor<T> inputs;
  Tensor<T> targets;
};

/// Throws ContractError unless every target row is non-negative and sums to 1 within `tol`.
template <typename T>
void check_soft_targets(const Tensor<T>& targets, double tol = 1e-6);

/// One-hot rows to (1 - eps + eps/K) on the true class and eps/K elsewhere.
/// Works on any non-negative rows that sum to 1: q <- (1 - eps) q + eps / K.
template <typename T>
Tensor<T> smooth_labels(const Tensor<T>& targets, double eps);

template <typename T>
struct MixResult {
  SoftLabelBatch<T> batch;
  double lambda = 1.0;  // weight on batch_a in the targets
};

/// lambda * a + (1 - lambda) * b for both inputs and targets.
template <typename T>
SoftLabelBatch<T> mixup_with_lambda(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, double lambda);

/// lambda ~ Beta(alpha, alpha).
template <typename T>
MixResult<T> mixup(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, double alpha, Rng& rng);

/// Half-open rectangle on the (mel, frame) plane.
struct CutBox {
  Index row0 = 0, row1 = 0, col0 = 0, col1 = 0;
  Index area() const { return (row1 - row0) * (col1 - col0); }
};

/// Pastes `b` into `box` of `a`; target weight on `a` is 1 - box area / plane area.
template <typename T>
MixResult<T> cutmix_with_box(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, const CutBox& box);

/// lambda ~ Beta(alpha, alpha) sets the nominal cut area (1 - lambda); the box
/// centre is uniform and the box is clipped to the plane. The returned lambda
/// is recomputed from the clipped area.
template <typename T>
MixResult<T> cutmix(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, double alpha, Rng& rng);

/// Drop probability for block `layer_index` (0-based): rate * layer_index / (depth - 1).
double drop_path_rate_at(double rate, Index layer_index, Index depth);

/// Stochastic depth on a residual branch [B, ...]: each sample's branch is
/// zeroed with the layer's drop probability and survivors are scaled by
/// 1 / keep. Identity in eval mode or at rate 0.
template <typename T>
Var<T> drop_path(const Var<T>& branch, double rate, Index layer_index, Index depth, bool train, Rng* rng);

}  // namespace arwkv
