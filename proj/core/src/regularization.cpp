// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/regularization.hpp"

#include <algorithm>
#include <cmath>

#include "arwkv/ops.hpp"

namespace arwkv {

template <typename T>
void check_soft_targets(const Tensor<T>& targets, double tol) {
  if (targets.rank() != 2) throw DimensionError("soft targets must be [B,K], got " + shape_str(targets.shape()));
  const Index batch = targets.dim(0), k = targets.dim(1);
  for (Index b = 0; b < batch; ++b) {
    double total = 0;
    for (Index c = 0; c < k; ++c) {
      const double q = targets[b * k + c];
      if (q < 0) throw ContractError("soft target row " + std::to_string(b) + " has a negative entry");
      total += q;
    }
    if (std::abs(total - 1.0) > tol)
      throw ContractError("soft target row " + std::to_string(b) + " sums to " + std::to_string(total));
  }
}

template <typename T>
Tensor<T> smooth_labels(const Tensor<T>& targets, double eps) {
  if (eps < 0 || eps >= 1) throw ContractError("label smoothing eps must be in [0, 1)");
  if (targets.rank() != 2) throw DimensionError("smooth_labels expects [B,K]");
  const double k = static_cast<double>(targets.dim(1));
  Tensor<T> out(targets.shape());
  for (Index i = 0; i < out.numel(); ++i) out[i] = static_cast<T>((1.0 - eps) * targets[i] + eps / k);
  return out;
}

namespace {

template <typename T>
void check_pair(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b) {
  if (a.inputs.shape() != b.inputs.shape() || a.targets.shape() != b.targets.shape())
    throw DimensionError("mixing batches of different shapes: " + shape_str(a.inputs.shape()) + " vs " +
                         shape_str(b.inputs.shape()));
}

template <typename T>
Tensor<T> blend(const Tensor<T>& x, const Tensor<T>& y, double lambda) {
  Tensor<T> out(x.shape());
  for (Index i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(lambda * x[i] + (1.0 - lambda) * y[i]);
  return out;
}

}  // namespace

template <typename T>
SoftLabelBatch<T> mixup_with_lambda(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, double lambda) {
  check_pair(a, b);
  if (lambda == 1.0) return a;
  return SoftLabelBatch<T>{blend(a.inputs, b.inputs, lambda), blend(a.targets, b.targets, lambda)};
}

template <typename T>
MixResult<T> mixup(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, double alpha, Rng& rng) {
  if (!(alpha > 0)) throw ContractError("mixup alpha must be > 0");
  const double lambda = rng.beta(alpha, alpha);
  return MixResult<T>{mixup_with_lambda(a, b, lambda), lambda};
}

template <typename T>
MixResult<T> cutmix_with_box(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, const CutBox& box) {
  check_pair(a, b);
  const Shape& s = a.inputs.shape();
  if (s.size() != 4) throw DimensionError("cutmix expects inputs [B,C,H,W]");
  const Index batch = s[0], ch = s[1], h = s[2], w = s[3];
  if (box.row0 < 0 || box.col0 < 0 || box.row1 > h || box.col1 > w || box.row0 > box.row1 || box.col0 > box.col1)
    throw ContractError("cutmix box outside the plane");
  MixResult<T> res;
  res.batch.inputs = a.inputs;
  for (Index n = 0; n < batch * ch; ++n)
    for (Index r = box.row0; r < box.row1; ++r)
      for (Index c = box.col0; c < box.col1; ++c) {
        const Index i = (n * h + r) * w + c;
        res.batch.inputs[i] = b.inputs[i];
      }
  res.lambda = 1.0 - static_cast<double>(box.area()) / static_cast<double>(h * w);
  res.batch.targets = res.lambda == 1.0 ? a.targets : blend(a.targets, b.targets, res.lambda);
  return res;
}

template <typename T>
MixResult<T> cutmix(const SoftLabelBatch<T>& a, const SoftLabelBatch<T>& b, double alpha, Rng& rng) {
  if (!(alpha > 0)) throw ContractError("cutmix alpha must be > 0");
  const Index h = a.inputs.dim(2), w = a.inputs.dim(3);
  const double lambda = rng.beta(alpha, alpha);
  const double cut = std::sqrt(1.0 - lambda);
  const Index cut_h = static_cast<Index>(static_cast<double>(h) * cut);
  const Index cut_w = static_cast<Index>(static_cast<double>(w) * cut);
  const Index cy = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(h)));
  const Index cx = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(w)));
  CutBox box;
  box.row0 = std::clamp<Index>(cy - cut_h / 2, 0, h);
  box.row1 = std::clamp<Index>(cy + cut_h / 2, 0, h);
  box.col0 = std::clamp<Index>(cx - cut_w / 2, 0, w);
  box.col1 = std::clamp<Index>(cx + cut_w / 2, 0, w);
  return cutmix_with_box(a, b, box);
}

double drop_path_rate_at(double rate, Index layer_index, Index depth) {
  if (depth <= 1) return rate;
  return rate * static_cast<double>(layer_index) / static_cast<double>(depth - 1);
}

template <typename T>
Var<T> drop_path(const Var<T>& branch, double rate, Index layer_index, Index depth, bool train, Rng* rng) {
  if (rate < 0 || rate >= 1) throw ContractError("drop_path rate must be in [0, 1)");
  const double p = drop_path_rate_at(rate, layer_index, depth);
  if (!train || p <= 0.0) return branch;
  if (!rng) throw ContractError("drop_path in train mode needs an rng");
  const Shape& s = branch.shape();
  if (s.empty()) throw DimensionError("drop_path needs a batch dimension");
  Shape mask_shape(s.size(), 1);
  mask_shape[0] = s[0];
  Tensor<T> mask(mask_shape);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (Index b = 0; b < s[0]; ++b) mask[b] = rng->bernoulli(p) ? T(0) : scale;
  return ops::mul(branch, ops::constant(std::move(mask)));
}

#define ARWKV_INSTANTIATE_REG(T)                                                                          \
  template void check_soft_targets<T>(const Tensor<T>&, double);                                          \
  template Tensor<T> smooth_labels<T>(const Tensor<T>&, double);                                          \
  template SoftLabelBatch<T> mixup_with_lambda<T>(const SoftLabelBatch<T>&, const SoftLabelBatch<T>&, double); \
  template MixResult<T> mixup<T>(const SoftLabelBatch<T>&, const SoftLabelBatch<T>&, double, Rng&);       \
  template MixResult<T> cutmix_with_box<T>(const SoftLabelBatch<T>&, const SoftLabelBatch<T>&, const CutBox&); \
  template MixResult<T> cutmix<T>(const SoftLabelBatch<T>&, const SoftLabelBatch<T>&, double, Rng&);      \
  template Var<T> drop_path<T>(const Var<T>&, double, Index, Index, bool, Rng*);

ARWKV_INSTANTIATE_REG(float)
ARWKV_INSTANTIATE_REG(double)

#undef ARWKV_INSTANTIATE_REG

}  // namespace arwkv
