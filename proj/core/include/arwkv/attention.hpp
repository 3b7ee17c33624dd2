// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "arwkv/tensor.hpp"
#include "arwkv/wkv.hpp"

namespace arwkv {

/// Dense softmax attention weights softmax(q k^T / sqrt(d)), [B, H, L, L].
/// Future positions are zero when `causal`.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, bool causal);

/// Quadratic softmax attention over [B, L, H, d] inputs. Materializes the full
/// L x L score matrix per (batch, head); forward only. This is the reference
/// the linear-time scan is benchmarked against.
template <typename T>
Tensor<T> naive_attention_reference(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal);

/// Bytes held at peak by naive_attention_reference for the given shape
/// (inputs, output and one L x L score buffer).
Index naive_attention_peak_bytes(Index batch, Index len, Index heads, Index head_dim, Index elem_size);

namespace wkv {

/// Forward-scan outputs computed the slow way: builds each D_t as a dense
/// matrix and applies S <- S D_t + v k~^T with explicit matrix products.
/// Guarded to tiny problems (L * d <= 4096).
template <typename T>
Tensor<T> wkv_oracle(const WkvStepInputs<T>& in);

/// Bytes held at peak by a forward scan without state caching.
Index scan_peak_bytes(Index batch, Index len, Index heads, Index head_dim, Index elem_size);

}  // namespace wkv

}  // namespace arwkv
