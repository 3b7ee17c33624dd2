// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "arwkv/autodiff.hpp"
#include "arwkv/tensor.hpp"

/// WKV7 generalized delta-rule recurrence.
///
/// Per head with d-dimensional vectors and a d x d state S (rows index value
/// channels, columns key channels):
///
///   D_t = diag(w_t) - kappa_t (a_t * kappa_t)^T
///   S_t = S_{t-1} D_t + v_t k~_t^T
///   p_t = S_t r_t
///
/// The scan is sequential in t, O(L d^2) per head. A backward-direction scan
/// visits tokens L..1 and emits outputs in visiting (reversed) order.
namespace arwkv::wkv {

enum class Direction { Forward, Backward };

/// All fields are [B, L, H, d].
template <typename T>
struct WkvStepInputs {
  Tensor<T> r;          // receptance
  Tensor<T> w;          // decay, in (0, 1)
  Tensor<T> kappa_hat;  // unit-norm removal key
  Tensor<T> a;          // in-context learning rate, in (0, 1)
  Tensor<T> k_tilde;    // replacement key
  Tensor<T> v;          // value
};

/// [B, H, d, d], S[b, h, i, j] with i = value channel, j = key channel.
template <typename T>
using WkvState = Tensor<T>;

struct ScanDims {
  Index batch = 0, len = 0, heads = 0, head_dim = 0;
};

/// Validates that all six fields share one [B,L,H,d] shape.
template <typename T>
ScanDims check_inputs(const WkvStepInputs<T>& in);

template <typename T>
struct ScanResult {
  Tensor<T> out;          // [B, L, H, d], in visiting order
  WkvState<T> state;      // final state
  Tensor<T> state_cache;  // [B, H, L+1, d, d] when requested, else empty
};

template <typename T>
ScanResult<T> scan_forward(const WkvStepInputs<T>& in, Direction dir, const WkvState<T>* s0 = nullptr,
                           bool cache_states = false);

template <typename T>
struct ScanGradients {
  WkvStepInputs<T> inputs;
  WkvState<T> s0;
};

/// Reverse-time adjoint recurrence over the cached states of scan_forward.
template <typename T>
ScanGradients<T> scan_backward(const WkvStepInputs<T>& in, Direction dir, const Tensor<T>& state_cache,
                               const Tensor<T>& grad_out);

/// D = diag(w) - kappa (a * kappa)^T as a dense d x d matrix.
/// Throws ContractError when |kappa| deviates from 1 by more than 1e-3.
template <typename T>
Tensor<T> transition_matrix(std::span<const T> w, std::span<const T> kappa_hat, std::span<const T> a);

/// Largest singular value by power iteration on D^T D.
template <typename T>
T spectral_norm(const Tensor<T>& matrix, int iters = 500);

// Differentiable wrappers ---------------------------------------------------

template <typename T>
struct WkvVars {
  Var<T> r, w, kappa_hat, a, k_tilde, v;
};

template <typename T>
struct ScanOutput {
  Var<T> out;    // differentiable
  Var<T> state;  // final state; value only, no gradient path
};

/// Records one tape entry whose adjoint is scan_backward. `s0` may be undefined (zero state).
template <typename T>
ScanOutput<T> wkv7_scan(const WkvVars<T>& in, Direction dir, const Var<T>& s0 = Var<T>());

/// p = G * p_fwd + (1 - G) * flip(p_bwd) along the sequence axis. G: [B,L,H,d] in [0, 1].
template <typename T>
Var<T> bi_wkv(const WkvVars<T>& in, const Var<T>& gate);

}  // namespace arwkv::wkv
