// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace arwkv {

namespace {

void check_qkv(const Shape& q, const Shape& k, const Shape* v) {
  if (q.size() != 4) throw DimensionError("attention expects [B,L,H,d], got " + shape_str(q));
  if (k != q || (v && *v != q))
    throw DimensionError("attention q/k/v shapes differ: " + shape_str(q) + " vs " + shape_str(k));
}

// Fills one L x L row-major block of softmax weights for (b, h).
template <typename T>
void score_block(const Tensor<T>& q, const Tensor<T>& k, Index b, Index h, bool causal, std::vector<T>& scores) {
  const Index len = q.dim(1), heads = q.dim(2), d = q.dim(3);
  const T scale = T(1) / std::sqrt(T(d));
  for (Index i = 0; i < len; ++i) {
    const T* qi = q.ptr() + ((b * len + i) * heads + h) * d;
    T* row = scores.data() + i * len;
    const Index jmax = causal ? i + 1 : len;
    T mx = -std::numeric_limits<T>::infinity();
    for (Index j = 0; j < jmax; ++j) {
      const T* kj = k.ptr() + ((b * len + j) * heads + h) * d;
      T acc = 0;
      for (Index c = 0; c < d; ++c) acc += qi[c] * kj[c];
      row[j] = acc * scale;
      mx = std::max(mx, row[j]);
    }
    T z = 0;
    for (Index j = 0; j < jmax; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    const T inv = T(1) / z;
    for (Index j = 0; j < jmax; ++j) row[j] *= inv;
    for (Index j = jmax; j < len; ++j) row[j] = T(0);
  }
}

}  // namespace

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, bool causal) {
  check_qkv(q.shape(), k.shape(), nullptr);
  const Index batch = q.dim(0), len = q.dim(1), heads = q.dim(2);
  Tensor<T> out(Shape{batch, heads, len, len});
  std::vector<T> scores(static_cast<std::size_t>(len * len));
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads; ++h) {
      score_block(q, k, b, h, causal, scores);
      std::copy(scores.begin(), scores.end(), out.ptr() + (b * heads + h) * len * len);
    }
  return out;
}

template <typename T>
Tensor<T> naive_attention_reference(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal) {
  check_qkv(q.shape(), k.shape(), &v.shape());
  const Index batch = q.dim(0), len = q.dim(1), heads = q.dim(2), d = q.dim(3);
  Tensor<T> out(q.shape());
  std::vector<T> scores(static_cast<std::size_t>(len * len));
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads; ++h) {
      score_block(q, k, b, h, causal, scores);
      for (Index i = 0; i < len; ++i) {
        T* oi = out.ptr() + ((b * len + i) * heads + h) * d;
        const T* row = scores.data() + i * len;
        const Index jmax = causal ? i + 1 : len;
        for (Index j = 0; j < jmax; ++j) {
          const T p = row[j];
          const T* vj = v.ptr() + ((b * len + j) * heads + h) * d;
          for (Index c = 0; c < d; ++c) oi[c] += p * vj[c];
        }
      }
    }
  return out;
}

Index naive_attention_peak_bytes(Index batch, Index len, Index heads, Index head_dim, Index elem_size) {
  return (4 * batch * len * heads * head_dim + len * len) * elem_size;
}

namespace wkv {

template <typename T>
Tensor<T> wkv_oracle(const WkvStepInputs<T>& in) {
  const ScanDims dm = check_inputs(in);
  const Index d = dm.head_dim;
  if (dm.len * d > 4096) throw ContractError("wkv_oracle is limited to L*d <= 4096");
  Tensor<T> out(in.r.shape());
  for (Index b = 0; b < dm.batch; ++b)
    for (Index h = 0; h < dm.heads; ++h) {
      Tensor<T> S(Shape{d, d});
      for (Index t = 0; t < dm.len; ++t) {
        const Index off = ((b * dm.len + t) * dm.heads + h) * d;
        auto slice = [&](const Tensor<T>& x) { return std::span<const T>(x.ptr() + off, static_cast<std::size_t>(d)); };
        const Tensor<T> D = transition_matrix<T>(slice(in.w), slice(in.kappa_hat), slice(in.a));
        Tensor<T> next(Shape{d, d});
        for (Index i = 0; i < d; ++i)
          for (Index j = 0; j < d; ++j) {
            T acc = 0;
            for (Index m = 0; m < d; ++m) acc += S[i * d + m] * D[m * d + j];
            next[i * d + j] = acc + in.v[off + i] * in.k_tilde[off + j];
          }
        S = std::move(next);
        for (Index i = 0; i < d; ++i) {
          T acc = 0;
          for (Index j = 0; j < d; ++j) acc += S[i * d + j] * in.r[off + j];
          out[off + i] = acc;
        }
      }
    }
  return out;
}

Index scan_peak_bytes(Index batch, Index len, Index heads, Index head_dim, Index elem_size) {
  return (7 * batch * len * heads * head_dim + batch * heads * head_dim * head_dim) * elem_size;
}

template Tensor<float> wkv_oracle<float>(const WkvStepInputs<float>&);
template Tensor<double> wkv_oracle<double>(const WkvStepInputs<double>&);

}  // namespace wkv

template Tensor<float> attention_weights<float>(const Tensor<float>&, const Tensor<float>&, bool);
template Tensor<double> attention_weights<double>(const Tensor<double>&, const Tensor<double>&, bool);
template Tensor<float> naive_attention_reference<float>(const Tensor<float>&, const Tensor<float>&,
                                                        const Tensor<float>&, bool);
template Tensor<double> naive_attention_reference<double>(const Tensor<double>&, const Tensor<double>&,
                                                          const Tensor<double>&, bool);

}  // namespace arwkv
