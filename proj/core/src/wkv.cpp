// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/wkv.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "arwkv/ops.hpp"

namespace arwkv::wkv {

template <typename T>
ScanDims check_inputs(const WkvStepInputs<T>& in) {
  const Shape& s = in.r.shape();
  if (s.size() != 4) throw DimensionError("wkv inputs must be [B,L,H,d], got r " + shape_str(s));
  const std::pair<const char*, const Tensor<T>*> fields[] = {
      {"w", &in.w}, {"kappa_hat", &in.kappa_hat}, {"a", &in.a}, {"k_tilde", &in.k_tilde}, {"v", &in.v}};
  for (const auto& [name, t] : fields)
    if (t->shape() != s)
      throw DimensionError(std::string("wkv field ") + name + " has shape " + shape_str(t->shape()) +
                           ", expected " + shape_str(s));
  return ScanDims{s[0], s[1], s[2], s[3]};
}

namespace {

inline Index token_offset(const ScanDims& dm, Index b, Index t, Index h) {
  return ((b * dm.len + t) * dm.heads + h) * dm.head_dim;
}

inline Index source_index(Direction dir, Index step, Index len) {
  return dir == Direction::Forward ? step : len - 1 - step;
}

}  // namespace

template <typename T>
ScanResult<T> scan_forward(const WkvStepInputs<T>& in, Direction dir, const WkvState<T>* s0, bool cache_states) {
  const ScanDims dm = check_inputs(in);
  const Index d = dm.head_dim, len = dm.len;
  if (len < 1) throw DimensionError("wkv scan needs L >= 1");
  const Shape state_shape{dm.batch, dm.heads, d, d};
  if (s0 && !s0->empty() && s0->shape() != state_shape)
    throw DimensionError("wkv initial state must be " + shape_str(state_shape) + ", got " + shape_str(s0->shape()));

  ScanResult<T> res;
  res.out = Tensor<T>(in.r.shape());
  res.state = (s0 && !s0->empty()) ? *s0 : Tensor<T>(state_shape);
  if (cache_states) res.state_cache = Tensor<T>(Shape{dm.batch, dm.heads, len + 1, d, d});

  std::vector<T> sk(static_cast<std::size_t>(d)), bvec(static_cast<std::size_t>(d));
  for (Index b = 0; b < dm.batch; ++b)
    for (Index h = 0; h < dm.heads; ++h) {
      T* S = res.state.ptr() + (b * dm.heads + h) * d * d;
      T* cache = cache_states ? res.state_cache.ptr() + (b * dm.heads + h) * (len + 1) * d * d : nullptr;
      if (cache) std::copy_n(S, d * d, cache);
      for (Index step = 0; step < len; ++step) {
        const Index t = source_index(dir, step, len);
        const Index off = token_offset(dm, b, t, h);
        const T* r = in.r.ptr() + off;
        const T* w = in.w.ptr() + off;
        const T* kap = in.kappa_hat.ptr() + off;
        const T* a = in.a.ptr() + off;
        const T* kt = in.k_tilde.ptr() + off;
        const T* v = in.v.ptr() + off;
        T* p = res.out.ptr() + token_offset(dm, b, step, h);
        for (Index j = 0; j < d; ++j) bvec[j] = a[j] * kap[j];
        bool finite = true;
        for (Index i = 0; i < d; ++i) {
          T* row = S + i * d;
          T acc = 0;
          for (Index j = 0; j < d; ++j) acc += row[j] * kap[j];
          sk[i] = acc;
          const T vi = v[i];
          T out = 0;
          for (Index j = 0; j < d; ++j) {
            row[j] = row[j] * w[j] - acc * bvec[j] + vi * kt[j];
            out += row[j] * r[j];
          }
          p[i] = out;
          finite = finite && std::isfinite(out) && std::isfinite(acc);
        }
        if (!finite)
          throw NumericError("wkv scan: non-finite state at step " + std::to_string(step) + " (token " +
                             std::to_string(t) + ", batch " + std::to_string(b) + ", head " + std::to_string(h) + ")");
        if (cache) std::copy_n(S, d * d, cache + (step + 1) * d * d);
      }
    }
  return res;
}

template <typename T>
ScanGradients<T> scan_backward(const WkvStepInputs<T>& in, Direction dir, const Tensor<T>& state_cache,
                               const Tensor<T>& grad_out) {
  const ScanDims dm = check_inputs(in);
  const Index d = dm.head_dim, len = dm.len;
  if (grad_out.shape() != in.r.shape())
    throw DimensionError("wkv grad_out shape " + shape_str(grad_out.shape()) + " != " + shape_str(in.r.shape()));
  if (state_cache.shape() != Shape{dm.batch, dm.heads, len + 1, d, d})
    throw DimensionError("wkv state cache has shape " + shape_str(state_cache.shape()));

  ScanGradients<T> gr;
  const Shape& s = in.r.shape();
  gr.inputs = WkvStepInputs<T>{Tensor<T>(s), Tensor<T>(s), Tensor<T>(s), Tensor<T>(s), Tensor<T>(s), Tensor<T>(s)};
  gr.s0 = Tensor<T>(Shape{dm.batch, dm.heads, d, d});

  std::vector<T> dS(static_cast<std::size_t>(d * d)), sk(static_cast<std::size_t>(d)),
      dsk(static_cast<std::size_t>(d)), bvec(static_cast<std::size_t>(d)), db(static_cast<std::size_t>(d));
  for (Index b = 0; b < dm.batch; ++b)
    for (Index h = 0; h < dm.heads; ++h) {
      std::fill(dS.begin(), dS.end(), T(0));
      const T* cache = state_cache.ptr() + (b * dm.heads + h) * (len + 1) * d * d;
      for (Index step = len - 1; step >= 0; --step) {
        const Index t = source_index(dir, step, len);
        const Index off = token_offset(dm, b, t, h);
        const T* S_t = cache + (step + 1) * d * d;
        const T* S_prev = cache + step * d * d;
        const T* r = in.r.ptr() + off;
        const T* w = in.w.ptr() + off;
        const T* kap = in.kappa_hat.ptr() + off;
        const T* a = in.a.ptr() + off;
        const T* kt = in.k_tilde.ptr() + off;
        const T* v = in.v.ptr() + off;
        const T* g = grad_out.ptr() + token_offset(dm, b, step, h);
        T* dr = gr.inputs.r.ptr() + off;
        T* dw = gr.inputs.w.ptr() + off;
        T* dkap = gr.inputs.kappa_hat.ptr() + off;
        T* da = gr.inputs.a.ptr() + off;
        T* dkt = gr.inputs.k_tilde.ptr() + off;
        T* dv = gr.inputs.v.ptr() + off;

        // p = S_t r
        for (Index i = 0; i < d; ++i) {
          const T gi = g[i];
          const T* row = S_t + i * d;
          T* drow = dS.data() + i * d;
          for (Index j = 0; j < d; ++j) {
            dr[j] += row[j] * gi;
            drow[j] += gi * r[j];
          }
        }
        // S_t = S_prev diag(w) - (S_prev kappa)(a * kappa)^T + v k~^T
        for (Index j = 0; j < d; ++j) {
          bvec[j] = a[j] * kap[j];
          db[j] = 0;
        }
        for (Index i = 0; i < d; ++i) {
          const T* prow = S_prev + i * d;
          const T* drow = dS.data() + i * d;
          T acc_sk = 0, acc_dsk = 0, acc_dv = 0;
          for (Index j = 0; j < d; ++j) {
            acc_sk += prow[j] * kap[j];
            acc_dsk -= drow[j] * bvec[j];
            acc_dv += drow[j] * kt[j];
          }
          sk[i] = acc_sk;
          dsk[i] = acc_dsk;
          dv[i] += acc_dv;
        }
        for (Index i = 0; i < d; ++i) {
          const T* prow = S_prev + i * d;
          const T* drow = dS.data() + i * d;
          const T vi = v[i], ski = sk[i], dski = dsk[i];
          for (Index j = 0; j < d; ++j) {
            dkt[j] += drow[j] * vi;
            dw[j] += drow[j] * prow[j];
            db[j] -= drow[j] * ski;
            dkap[j] += prow[j] * dski;
          }
        }
        for (Index j = 0; j < d; ++j) {
          dkap[j] += db[j] * a[j];
          da[j] += db[j] * kap[j];
        }
        // dS_prev = dS diag(w) + dsk kappa^T
        for (Index i = 0; i < d; ++i) {
          T* drow = dS.data() + i * d;
          for (Index j = 0; j < d; ++j) drow[j] = drow[j] * w[j] + dsk[i] * kap[j];
        }
      }
      std::copy(dS.begin(), dS.end(), gr.s0.ptr() + (b * dm.heads + h) * d * d);
    }
  return gr;
}

template <typename T>
Tensor<T> transition_matrix(std::span<const T> w, std::span<const T> kappa_hat, std::span<const T> a) {
  const std::size_t d = w.size();
  if (kappa_hat.size() != d || a.size() != d)
    throw DimensionError("transition_matrix: w, kappa_hat, a must share length");
  T nrm2 = 0;
  for (T k : kappa_hat) nrm2 += k * k;
  if (std::abs(std::sqrt(nrm2) - T(1)) > T(1e-3))
    throw ContractError("transition_matrix: kappa_hat norm " + std::to_string(std::sqrt(nrm2)) + " is not 1");
  const Index n = static_cast<Index>(d);
  Tensor<T> m(Shape{n, n});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) m[i * n + j] = (i == j ? w[j] : T(0)) - kappa_hat[i] * a[j] * kappa_hat[j];
  return m;
}

template <typename T>
T spectral_norm(const Tensor<T>& matrix, int iters) {
  if (matrix.rank() != 2) throw DimensionError("spectral_norm expects a matrix");
  const Index rows = matrix.dim(0), cols = matrix.dim(1);
  std::vector<T> x(static_cast<std::size_t>(cols)), y(static_cast<std::size_t>(rows));
  // Deterministic, non-degenerate start vector.
  for (Index j = 0; j < cols; ++j) x[j] = T(1) + T(0.1) * T(j % 7) - T(0.03) * T(j % 3);
  T sigma = 0;
  for (int it = 0; it < iters; ++it) {
    T xn = 0;
    for (T v : x) xn += v * v;
    xn = std::sqrt(xn);
    if (xn == T(0)) return T(0);
    for (T& v : x) v /= xn;
    for (Index i = 0; i < rows; ++i) {
      T acc = 0;
      for (Index j = 0; j < cols; ++j) acc += matrix[i * cols + j] * x[j];
      y[i] = acc;
    }
    T yn = 0;
    for (T v : y) yn += v * v;
    sigma = std::sqrt(yn);
    for (Index j = 0; j < cols; ++j) {
      T acc = 0;
      for (Index i = 0; i < rows; ++i) acc += matrix[i * cols + j] * y[i];
      x[j] = acc;
    }
  }
  return sigma;
}

template <typename T>
ScanOutput<T> wkv7_scan(const WkvVars<T>& in, Direction dir, const Var<T>& s0) {
  WkvStepInputs<T> raw{in.r.value(), in.w.value(), in.kappa_hat.value(), in.a.value(), in.k_tilde.value(),
                       in.v.value()};
  const bool rec = active_tape<T>() != nullptr &&
                   (in.r.requires_grad() || in.w.requires_grad() || in.kappa_hat.requires_grad() ||
                    in.a.requires_grad() || in.k_tilde.requires_grad() || in.v.requires_grad() ||
                    (s0.defined() && s0.requires_grad()));
  ScanResult<T> res = scan_forward(raw, dir, s0.defined() ? &s0.value() : nullptr, rec);
  ScanOutput<T> out{Var<T>(std::move(res.out)), Var<T>(std::move(res.state))};
  if (rec) {
    active_tape<T>()->record(
        "wkv7_scan", out.out.node(),
        [in, s0, dir, raw = std::move(raw), cache = std::move(res.state_cache)](const Tensor<T>& g, const Tensor<T>&) {
          ScanGradients<T> gr = scan_backward(raw, dir, cache, g);
          in.r.accumulate_grad(std::move(gr.inputs.r));
          in.w.accumulate_grad(std::move(gr.inputs.w));
          in.kappa_hat.accumulate_grad(std::move(gr.inputs.kappa_hat));
          in.a.accumulate_grad(std::move(gr.inputs.a));
          in.k_tilde.accumulate_grad(std::move(gr.inputs.k_tilde));
          in.v.accumulate_grad(std::move(gr.inputs.v));
          if (s0.defined()) s0.accumulate_grad(std::move(gr.s0));
        });
  }
  return out;
}

template <typename T>
Var<T> bi_wkv(const WkvVars<T>& in, const Var<T>& gate) {
  if (gate.shape() != in.r.shape())
    throw DimensionError("bi_wkv gate shape " + shape_str(gate.shape()) + " != " + shape_str(in.r.shape()));
  for (Index i = 0; i < gate.numel(); ++i) {
    const T g = gate.value()[i];
    if (!(g >= T(0) && g <= T(1))) throw ContractError("bi_wkv gate value out of [0,1] at flat index " + std::to_string(i));
  }
  Var<T> fwd = wkv7_scan(in, Direction::Forward).out;
  Var<T> bwd = ops::flip(wkv7_scan(in, Direction::Backward).out, 1);
  return ops::add(ops::mul(gate, fwd), ops::mul(ops::affine(gate, T(-1), T(1)), bwd));
}

#define ARWKV_INSTANTIATE_WKV(T)                                                                               \
  template ScanDims check_inputs<T>(const WkvStepInputs<T>&);                                                  \
  template ScanResult<T> scan_forward<T>(const WkvStepInputs<T>&, Direction, const WkvState<T>*, bool);        \
  template ScanGradients<T> scan_backward<T>(const WkvStepInputs<T>&, Direction, const Tensor<T>&,             \
                                             const Tensor<T>&);                                                \
  template Tensor<T> transition_matrix<T>(std::span<const T>, std::span<const T>, std::span<const T>);         \
  template T spectral_norm<T>(const Tensor<T>&, int);                                                          \
  template ScanOutput<T> wkv7_scan<T>(const WkvVars<T>&, Direction, const Var<T>&);                            \
  template Var<T> bi_wkv<T>(const WkvVars<T>&, const Var<T>&);

ARWKV_INSTANTIATE_WKV(float)
ARWKV_INSTANTIATE_WKV(double)

#undef ARWKV_INSTANTIATE_WKV

}  // namespace arwkv::wkv
