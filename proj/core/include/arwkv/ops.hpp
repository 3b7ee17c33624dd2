// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "arwkv/autodiff.hpp"
#include "arwkv/tensor.hpp"

/// Differentiable tensor primitives. Every op records onto the thread's active
/// tape when one is installed and at least one input requires a gradient.
/// Forward results are checked for NaN/Inf; a non-finite output throws
/// NumericError naming the op.
namespace arwkv::ops {

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

// Broadcasting binary ops (trailing-dimension alignment).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);

/// x + t * (y - x), all three broadcast together.
template <typename T> Var<T> lerp(const Var<T>& x, const Var<T>& y, const Var<T>& t);

/// scale * x + shift.
template <typename T> Var<T> affine(const Var<T>& x, T scale, T shift);

// Pointwise unary ops.
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);
/// exp(-exp(x)) in (0, 1); floored at 1e-38 so it never underflows to zero.
template <typename T> Var<T> neg_exp_exp(const Var<T>& x);

/// [.., M, K] x [.., K, N] with broadcast batch dimensions.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Cross-correlation with zero padding. x: [B,Cin,H,W], weight: [Cout,Cin,kh,kw],
/// bias: [Cout] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Index stride, Index padding);
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Index stride_h, Index stride_w, Index pad_h,
              Index pad_w);

/// Depthwise, stride 1, "same" zero padding. x: [B,C,H,W], weight: [C,1,kh,kw] with odd kh, kw.
template <typename T> Var<T> dwconv2d(const Var<T>& x, const Var<T>& weight);

/// Normalizes over the last dimension, then applies gamma/beta of shape [D].
template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// x / sqrt(mean(x^2) + eps) over the last dimension (no affine).
template <typename T> Var<T> rms_norm(const Var<T>& x, T eps = T(1e-5));

/// x / max(||x||_2, eps) over the last dimension.
template <typename T> Var<T> l2_normalize(const Var<T>& x, T eps = T(1e-12));

template <typename T> Var<T> flip(const Var<T>& x, Index axis);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> permute(const Var<T>& x, const std::vector<Index>& perm);

/// Sum of all elements, rank-0 result.
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> sum_axis(const Var<T>& x, Index axis, bool keepdim = false);
template <typename T> Var<T> mean_axis(const Var<T>& x, Index axis, bool keepdim = false);

/// Sequence shift on [B,L,D]: out[:,t] = x[:,t-1], out[:,0] = 0.
template <typename T> Var<T> shift_sequence(const Var<T>& x);

/// Quarter-channel grid shift on [B,L,D] viewed as [B,rows,cols,D] (row-major tokens).
/// Channel quarters read their left, right, upper and lower neighbour respectively;
/// cells outside the grid read zero. D must be divisible by 4.
template <typename T> Var<T> quarter_shift(const Var<T>& x, Index rows, Index cols);

/// Mean over the batch of -sum_c q_c log softmax(logits)_c. targets rows must sum to 1.
template <typename T> Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& targets);

// Plain-tensor helpers shared by kernels and oracles.
template <typename T> Tensor<T> flip_tensor(const Tensor<T>& x, Index axis);
template <typename T> Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<Index>& perm);

/// C = op(A) * op(B) (+ C when accumulate). Row-major, A is MxK after op, B is KxN.
template <typename T>
void gemm(const T* a, const T* b, T* c, Index m, Index k, Index n, bool trans_a, bool trans_b, bool accumulate);

}  // namespace arwkv::ops
