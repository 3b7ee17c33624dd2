// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace arwkv::ops {

namespace {

template <typename T>
bool recording(std::initializer_list<const Var<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  for (const Var<T>* v : inputs)
    if (v && v->defined() && v->requires_grad()) return true;
  return false;
}

template <typename T>
Var<T> finish(const char* op, Tensor<T> value, bool record, typename Tape<T>::BackwardFn fn) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite value in forward output");
  Var<T> out(std::move(value));
  if (record) active_tape<T>()->record(op, out.node(), std::move(fn));
  return out;
}

Index normalize_axis(Index axis, Index rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw DimensionError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return axis;
}

// Strips leading unit dims; returns true if what remains is a trailing suffix of `out`.
bool is_trailing_suffix(const Shape& s, const Shape& out) {
  std::size_t first = 0;
  while (first < s.size() && s[first] == 1) ++first;
  const std::size_t len = s.size() - first;
  if (len > out.size()) return false;
  return std::equal(s.begin() + static_cast<std::ptrdiff_t>(first), s.end(),
                    out.end() - static_cast<std::ptrdiff_t>(len));
}

// Calls fn(i, ia, ib) for every flat output index i with the broadcast source offsets.
template <typename Fn>
void broadcast_visit(const Shape& sa, const Shape& sb, const Shape& out, Fn&& fn) {
  const Index n = shape_numel(out);
  if (n == 0) return;
  const Index na = shape_numel(sa);
  const Index nb = shape_numel(sb);
  if (sa == out && sb == out) {
    for (Index i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  if (na == n && is_trailing_suffix(sb, out)) {
    for (Index i = 0; i < n; ++i) fn(i, i, i % nb);
    return;
  }
  if (nb == n && is_trailing_suffix(sa, out)) {
    for (Index i = 0; i < n; ++i) fn(i, i % na, i);
    return;
  }
  const std::size_t rank = out.size();
  auto aligned_strides = [&](const Shape& s) {
    Shape st(rank, 0);
    const Shape cs = contiguous_strides(s);
    const std::size_t off = rank - s.size();
    for (std::size_t d = 0; d < s.size(); ++d) st[d + off] = s[d] == 1 ? 0 : cs[d];
    return st;
  };
  const Shape st_a = aligned_strides(sa);
  const Shape st_b = aligned_strides(sb);
  std::vector<Index> idx(rank, 0);
  Index ia = 0, ib = 0;
  for (Index i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += st_a[d];
      ib += st_b[d];
      if (idx[d] < out[d]) break;
      ia -= st_a[d] * out[d];
      ib -= st_b[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* src = x.ptr();
  T* dst = out.ptr();
  for (Index i = 0; i < x.numel(); ++i) dst[i] = f(src[i]);
  return out;
}

// DF(x, y) returns dy/dx.
template <typename T, typename F, typename DF>
Var<T> unary(const char* op, const Var<T>& x, F f, DF df) {
  const bool rec = recording<T>({&x});
  Tensor<T> y = map_unary(x.value(), f);
  return finish<T>(op, std::move(y), rec, [x, df](const Tensor<T>& g, const Tensor<T>& out) {
    Tensor<T> dx(x.shape());
    const T* xv = x.value().ptr();
    for (Index i = 0; i < dx.numel(); ++i) dx[i] = g[i] * df(xv[i], out[i]);
    x.accumulate_grad(std::move(dx));
  });
}

}  // namespace

template <typename T>
void gemm(const T* a, const T* b, T* c, Index m, Index k, Index n, bool trans_a, bool trans_b, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> cm(c, m, n);
  CMap am(a, trans_a ? k : m, trans_a ? m : k);
  CMap bm(b, trans_b ? n : k, trans_b ? k : n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate)
      cm.noalias() += lhs * rhs;
    else
      cm.noalias() = lhs * rhs;
  };
  if (!trans_a && !trans_b) run(am, bm);
  else if (trans_a && !trans_b) run(am.transpose(), bm);
  else if (!trans_a && trans_b) run(am, bm.transpose());
  else run(am.transpose(), bm.transpose());
}

// ---------------------------------------------------------------------------
// Binary

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const bool rec = recording<T>({&a, &b});
  Tensor<T> out(out_shape);
  const T* av = a.value().ptr();
  const T* bv = b.value().ptr();
  broadcast_visit(a.shape(), b.shape(), out_shape, [&](Index i, Index ia, Index ib) { out[i] = av[ia] + bv[ib]; });
  return finish<T>("add", std::move(out), rec, [a, b, out_shape](const Tensor<T>& g, const Tensor<T>&) {
    if (a.requires_grad()) {
      if (a.shape() == out_shape) {
        a.accumulate_grad(g);
      } else {
        Tensor<T> da(a.shape());
        broadcast_visit(a.shape(), b.shape(), out_shape, [&](Index i, Index ia, Index) { da[ia] += g[i]; });
        a.accumulate_grad(std::move(da));
      }
    }
    if (b.requires_grad()) {
      if (b.shape() == out_shape) {
        b.accumulate_grad(g);
      } else {
        Tensor<T> db(b.shape());
        broadcast_visit(a.shape(), b.shape(), out_shape, [&](Index i, Index, Index ib) { db[ib] += g[i]; });
        b.accumulate_grad(std::move(db));
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const bool rec = recording<T>({&a, &b});
  Tensor<T> out(out_shape);
  const T* av = a.value().ptr();
  const T* bv = b.value().ptr();
  broadcast_visit(a.shape(), b.shape(), out_shape, [&](Index i, Index ia, Index ib) { out[i] = av[ia] - bv[ib]; });
  return finish<T>("sub", std::move(out), rec, [a, b, out_shape](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> da, db;
    if (a.requires_grad()) da = Tensor<T>(a.shape());
    if (b.requires_grad()) db = Tensor<T>(b.shape());
    broadcast_visit(a.shape(), b.shape(), out_shape, [&](Index i, Index ia, Index ib) {
      if (!da.empty()) da[ia] += g[i];
      if (!db.empty()) db[ib] -= g[i];
    });
    if (!da.empty()) a.accumulate_grad(std::move(da));
    if (!db.empty()) b.accumulate_grad(std::move(db));
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const bool rec = recording<T>({&a, &b});
  Tensor<T> out(out_shape);
  const T* av = a.value().ptr();
  const T* bv = b.value().ptr();
  broadcast_visit(a.shape(), b.shape(), out_shape, [&](Index i, Index ia, Index ib) { out[i] = av[ia] * bv[ib]; });
  return finish<T>("mul", std::move(out), rec, [a, b, out_shape](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> da, db;
    if (a.requires_grad()) da = Tensor<T>(a.shape());
    if (b.requires_grad()) db = Tensor<T>(b.shape());
    const T* av = a.value().ptr();
    const T* bv = b.value().ptr();
    broadcast_visit(a.shape(), b.shape(), out_shape, [&](Index i, Index ia, Index ib) {
      if (!da.empty()) da[ia] += g[i] * bv[ib];
      if (!db.empty()) db[ib] += g[i] * av[ia];
    });
    if (!da.empty()) a.accumulate_grad(std::move(da));
    if (!db.empty()) b.accumulate_grad(std::move(db));
  });
}

template <typename T>
Var<T> lerp(const Var<T>& x, const Var<T>& y, const Var<T>& t) {
  return add(x, mul(sub(y, x), t));
}

template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  return unary<T>(
      "affine", x, [scale, shift](T v) { return scale * v + shift; }, [scale](T, T) { return scale; });
}

// ---------------------------------------------------------------------------
// Unary

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> neg_exp_exp(const Var<T>& x) {
  static constexpr T kFloor = T(1e-38);
  return unary<T>(
      "neg_exp_exp", x, [](T v) { return std::max(std::exp(-std::exp(v)), kFloor); },
      [](T v, T y) { return y <= kFloor ? T(0) : -std::exp(v) * y; });
}

// ---------------------------------------------------------------------------
// Matmul

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(sa) + " x " + shape_str(sb));
  const Index m = sa[sa.size() - 2], k = sa.back(), k2 = sb[sb.size() - 2], n = sb.back();
  if (k != k2) throw DimensionError("matmul inner dimension mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  const bool rec = recording<T>({&a, &b});

  if (sb.size() == 2) {
    // Fold all leading dims of a into rows.
    const Index rows = a.numel() / std::max<Index>(k, 1);
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);
    if (rows && n && k) gemm(a.value().ptr(), b.value().ptr(), out.ptr(), rows, k, n, false, false, false);
    return finish<T>("matmul", std::move(out), rec, [a, b, rows, k, n](const Tensor<T>& g, const Tensor<T>&) {
      if (a.requires_grad()) {
        Tensor<T> da(a.shape());
        if (rows && n && k) gemm(g.ptr(), b.value().ptr(), da.ptr(), rows, n, k, false, true, false);
        a.accumulate_grad(std::move(da));
      }
      if (b.requires_grad()) {
        Tensor<T> db(b.shape());
        if (rows && n && k) gemm(a.value().ptr(), g.ptr(), db.ptr(), k, rows, n, true, false, false);
        b.accumulate_grad(std::move(db));
      }
    });
  }

  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  const Shape batch = broadcast_shapes(batch_a, batch_b);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  const Index sza = m * k, szb = k * n, szc = m * n;
  broadcast_visit(batch_a, batch_b, batch, [&](Index i, Index ia, Index ib) {
    gemm(a.value().ptr() + ia * sza, b.value().ptr() + ib * szb, out.ptr() + i * szc, m, k, n, false, false, false);
  });
  return finish<T>("matmul", std::move(out), rec,
                   [a, b, batch_a, batch_b, batch, m, k, n](const Tensor<T>& g, const Tensor<T>&) {
                     Tensor<T> da, db;
                     if (a.requires_grad()) da = Tensor<T>(a.shape());
                     if (b.requires_grad()) db = Tensor<T>(b.shape());
                     const Index sza = m * k, szb = k * n, szc = m * n;
                     broadcast_visit(batch_a, batch_b, batch, [&](Index i, Index ia, Index ib) {
                       if (!da.empty())
                         gemm(g.ptr() + i * szc, b.value().ptr() + ib * szb, da.ptr() + ia * sza, m, n, k, false,
                              true, true);
                       if (!db.empty())
                         gemm(a.value().ptr() + ia * sza, g.ptr() + i * szc, db.ptr() + ib * szb, k, m, n, true,
                              false, true);
                     });
                     if (!da.empty()) a.accumulate_grad(std::move(da));
                     if (!db.empty()) b.accumulate_grad(std::move(db));
                   });
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Index stride_h, Index stride_w, Index pad_h,
              Index pad_w) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4)
    throw DimensionError("conv2d expects x [B,Cin,H,W] and weight [Cout,Cin,kh,kw], got " + shape_str(sx) + " and " +
                         shape_str(sw));
  if (stride_h < 1 || stride_w < 1) throw ConfigError("conv2d stride must be >= 1");
  if (pad_h < 0 || pad_w < 0) throw ConfigError("conv2d padding must be >= 0");
  const Index batch = sx[0], cin = sx[1], h = sx[2], w = sx[3];
  const Index cout = sw[0], kh = sw[2], kw = sw[3];
  if (sw[1] != cin)
    throw DimensionError("conv2d channel mismatch: x " + shape_str(sx) + " vs weight " + shape_str(sw));
  if (h + 2 * pad_h < kh || w + 2 * pad_w < kw)
    throw DimensionError("conv2d kernel " + shape_str(sw) + " larger than padded input " + shape_str(sx));
  if (bias.defined() && bias.shape() != Shape{cout})
    throw DimensionError("conv2d bias must be [" + std::to_string(cout) + "], got " + shape_str(bias.shape()));
  const Index ho = (h + 2 * pad_h - kh) / stride_h + 1;
  const Index wo = (w + 2 * pad_w - kw) / stride_w + 1;
  const Index ck = cin * kh * kw;
  const Index rows = batch * ho * wo;

  // im2col: [rows, ck]
  Tensor<T> cols(Shape{rows, ck});
  const T* xv = x.value().ptr();
  for (Index b = 0; b < batch; ++b)
    for (Index oh = 0; oh < ho; ++oh)
      for (Index ow = 0; ow < wo; ++ow) {
        T* row = cols.ptr() + ((b * ho + oh) * wo + ow) * ck;
        for (Index c = 0; c < cin; ++c)
          for (Index i = 0; i < kh; ++i) {
            const Index ih = oh * stride_h + i - pad_h;
            for (Index j = 0; j < kw; ++j) {
              const Index iw = ow * stride_w + j - pad_w;
              const bool inside = ih >= 0 && ih < h && iw >= 0 && iw < w;
              row[(c * kh + i) * kw + j] = inside ? xv[((b * cin + c) * h + ih) * w + iw] : T(0);
            }
          }
      }

  Tensor<T> prod(Shape{rows, cout});
  gemm(cols.ptr(), weight.value().ptr(), prod.ptr(), rows, ck, cout, false, true, false);
  Tensor<T> out(Shape{batch, cout, ho, wo});
  const T* bv = bias.defined() ? bias.value().ptr() : nullptr;
  for (Index b = 0; b < batch; ++b)
    for (Index p = 0; p < ho * wo; ++p)
      for (Index c = 0; c < cout; ++c)
        out[(b * cout + c) * ho * wo + p] = prod[(b * ho * wo + p) * cout + c] + (bv ? bv[c] : T(0));

  const bool rec = recording<T>({&x, &weight, &bias});
  return finish<T>(
      "conv2d", std::move(out), rec,
      [x, weight, bias, cols = std::move(cols), batch, cin, h, w, cout, kh, kw, ho, wo, ck, rows, stride_h, stride_w, pad_h, pad_w](
          const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T> gt(Shape{rows, cout});
        for (Index b = 0; b < batch; ++b)
          for (Index p = 0; p < ho * wo; ++p)
            for (Index c = 0; c < cout; ++c) gt[(b * ho * wo + p) * cout + c] = g[(b * cout + c) * ho * wo + p];
        if (weight.requires_grad()) {
          Tensor<T> dw(weight.shape());
          gemm(gt.ptr(), cols.ptr(), dw.ptr(), cout, rows, ck, true, false, false);
          weight.accumulate_grad(std::move(dw));
        }
        if (bias.defined() && bias.requires_grad()) {
          Tensor<T> db(bias.shape());
          for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < cout; ++c) db[c] += gt[r * cout + c];
          bias.accumulate_grad(std::move(db));
        }
        if (x.requires_grad()) {
          Tensor<T> dcols(Shape{rows, ck});
          gemm(gt.ptr(), weight.value().ptr(), dcols.ptr(), rows, cout, ck, false, false, false);
          Tensor<T> dx(x.shape());
          for (Index b = 0; b < batch; ++b)
            for (Index oh = 0; oh < ho; ++oh)
              for (Index ow = 0; ow < wo; ++ow) {
                const T* row = dcols.ptr() + ((b * ho + oh) * wo + ow) * ck;
                for (Index c = 0; c < cin; ++c)
                  for (Index i = 0; i < kh; ++i) {
                    const Index ih = oh * stride_h + i - pad_h;
                    if (ih < 0 || ih >= h) continue;
                    for (Index j = 0; j < kw; ++j) {
                      const Index iw = ow * stride_w + j - pad_w;
                      if (iw < 0 || iw >= w) continue;
                      dx[((b * cin + c) * h + ih) * w + iw] += row[(c * kh + i) * kw + j];
                    }
                  }
              }
          x.accumulate_grad(std::move(dx));
        }
      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Index stride, Index padding) {
  return conv2d(x, weight, bias, stride, stride, padding, padding);
}

template <typename T>
Var<T> dwconv2d(const Var<T>& x, const Var<T>& weight) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != 1)
    throw DimensionError("dwconv2d expects x [B,C,H,W] and weight [C,1,kh,kw], got " + shape_str(sx) + " and " +
                         shape_str(sw));
  const Index batch = sx[0], ch = sx[1], h = sx[2], w = sx[3];
  const Index kh = sw[2], kw = sw[3];
  if (sw[0] != ch) throw DimensionError("dwconv2d channel mismatch: x " + shape_str(sx) + " vs weight " + shape_str(sw));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ConfigError("dwconv2d kernel must have odd size, got " + std::to_string(kh) + "x" + std::to_string(kw));
  const Index ph = (kh - 1) / 2, pw = (kw - 1) / 2;

  // Visits each valid (output, input, kernel) triple as contiguous row segments.
  auto for_each_tap = [=](auto&& fn) {
    for (Index b = 0; b < batch; ++b)
      for (Index c = 0; c < ch; ++c) {
        const Index plane = (b * ch + c) * h * w;
        for (Index i = 0; i < kh; ++i) {
          const Index di = i - ph;
          const Index oh_lo = std::max<Index>(0, -di), oh_hi = std::min<Index>(h, h - di);
          for (Index j = 0; j < kw; ++j) {
            const Index dj = j - pw;
            const Index ow_lo = std::max<Index>(0, -dj), ow_hi = std::min<Index>(w, w - dj);
            if (ow_lo >= ow_hi) continue;
            const Index kidx = (c * kh + i) * kw + j;
            for (Index oh = oh_lo; oh < oh_hi; ++oh)
              fn(kidx, plane + oh * w + ow_lo, plane + (oh + di) * w + ow_lo + dj, ow_hi - ow_lo);
          }
        }
      }
  };

  Tensor<T> out(sx);
  {
    const T* xv = x.value().ptr();
    const T* kv = weight.value().ptr();
    T* ov = out.ptr();
    for_each_tap([&](Index kidx, Index o, Index in, Index len) {
      const T k = kv[kidx];
      for (Index q = 0; q < len; ++q) ov[o + q] += k * xv[in + q];
    });
  }
  const bool rec = recording<T>({&x, &weight});
  return finish<T>("dwconv2d", std::move(out), rec, [x, weight, for_each_tap](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx, dk;
    if (x.requires_grad()) dx = Tensor<T>(x.shape());
    if (weight.requires_grad()) dk = Tensor<T>(weight.shape());
    const T* xv = x.value().ptr();
    const T* kv = weight.value().ptr();
    for_each_tap([&](Index kidx, Index o, Index in, Index len) {
      if (!dx.empty()) {
        const T k = kv[kidx];
        for (Index q = 0; q < len; ++q) dx[in + q] += k * g[o + q];
      }
      if (!dk.empty()) {
        T acc = 0;
        for (Index q = 0; q < len; ++q) acc += g[o + q] * xv[in + q];
        dk[kidx] += acc;
      }
    });
    if (!dx.empty()) x.accumulate_grad(std::move(dx));
    if (!dk.empty()) weight.accumulate_grad(std::move(dk));
  });
}

// ---------------------------------------------------------------------------
// Normalizations

template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  if (x.shape().empty()) throw DimensionError("layernorm on rank-0 tensor");
  if (!(eps > T(0))) throw ContractError("layernorm eps must be > 0");
  const Index d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw DimensionError("layernorm gamma/beta must be [" + std::to_string(d) + "]");
  const Index rows = d ? x.numel() / d : 0;
  Tensor<T> xhat(x.shape());
  Tensor<T> rstd(Shape{rows});
  Tensor<T> out(x.shape());
  const T* xv = x.value().ptr();
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();
  for (Index r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    T mean = 0;
    for (Index j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = 0;
    for (Index j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (Index j = 0; j < d; ++j) {
      const T xh = (row[j] - mean) * rs;
      xhat[r * d + j] = xh;
      out[r * d + j] = xh * gv[j] + bv[j];
    }
  }
  const bool rec = recording<T>({&x, &gamma, &beta});
  return finish<T>("layernorm", std::move(out), rec,
                   [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](const Tensor<T>& g,
                                                                                            const Tensor<T>&) {
                     const T* gv = gamma.value().ptr();
                     if (gamma.requires_grad() || beta.requires_grad()) {
                       Tensor<T> dg(gamma.shape()), db(beta.shape());
                       for (Index r = 0; r < rows; ++r)
                         for (Index j = 0; j < d; ++j) {
                           dg[j] += g[r * d + j] * xhat[r * d + j];
                           db[j] += g[r * d + j];
                         }
                       gamma.accumulate_grad(std::move(dg));
                       beta.accumulate_grad(std::move(db));
                     }
                     if (x.requires_grad()) {
                       Tensor<T> dx(x.shape());
                       for (Index r = 0; r < rows; ++r) {
                         T m1 = 0, m2 = 0;
                         for (Index j = 0; j < d; ++j) {
                           const T dxh = g[r * d + j] * gv[j];
                           m1 += dxh;
                           m2 += dxh * xhat[r * d + j];
                         }
                         m1 /= T(d);
                         m2 /= T(d);
                         for (Index j = 0; j < d; ++j) {
                           const T dxh = g[r * d + j] * gv[j];
                           dx[r * d + j] = rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
                         }
                       }
                       x.accumulate_grad(std::move(dx));
                     }
                   });
}

template <typename T>
Var<T> rms_norm(const Var<T>& x, T eps) {
  if (x.shape().empty()) throw DimensionError("rms_norm on rank-0 tensor");
  const Index d = x.shape().back();
  const Index rows = d ? x.numel() / d : 0;
  Tensor<T> rstd(Shape{rows});
  Tensor<T> out(x.shape());
  const T* xv = x.value().ptr();
  for (Index r = 0; r < rows; ++r) {
    T ms = 0;
    for (Index j = 0; j < d; ++j) ms += xv[r * d + j] * xv[r * d + j];
    const T rs = T(1) / std::sqrt(ms / T(d) + eps);
    rstd[r] = rs;
    for (Index j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] * rs;
  }
  const bool rec = recording<T>({&x});
  return finish<T>("rms_norm", std::move(out), rec,
                   [x, rstd = std::move(rstd), rows, d](const Tensor<T>& g, const Tensor<T>& y) {
                     Tensor<T> dx(x.shape());
                     for (Index r = 0; r < rows; ++r) {
                       T dot = 0;
                       for (Index j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                       dot /= T(d);
                       for (Index j = 0; j < d; ++j) dx[r * d + j] = rstd[r] * (g[r * d + j] - y[r * d + j] * dot);
                     }
                     x.accumulate_grad(std::move(dx));
                   });
}

template <typename T>
Var<T> l2_normalize(const Var<T>& x, T eps) {
  if (x.shape().empty()) throw DimensionError("l2_normalize on rank-0 tensor");
  if (!(eps > T(0))) throw ContractError("l2_normalize eps must be > 0");
  const Index d = x.shape().back();
  const Index rows = d ? x.numel() / d : 0;
  Tensor<T> denom(Shape{rows});
  Tensor<T> out(x.shape());
  const T* xv = x.value().ptr();
  for (Index r = 0; r < rows; ++r) {
    T ss = 0;
    for (Index j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    const T nrm = std::sqrt(ss);
    denom[r] = nrm > eps ? nrm : eps;
    for (Index j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / denom[r];
  }
  const bool rec = recording<T>({&x});
  return finish<T>("l2_normalize", std::move(out), rec,
                   [x, denom = std::move(denom), rows, d, eps](const Tensor<T>& g, const Tensor<T>& y) {
                     Tensor<T> dx(x.shape());
                     for (Index r = 0; r < rows; ++r) {
                       if (denom[r] > eps) {
                         T dot = 0;
                         for (Index j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                         for (Index j = 0; j < d; ++j) dx[r * d + j] = (g[r * d + j] - y[r * d + j] * dot) / denom[r];
                       } else {
                         for (Index j = 0; j < d; ++j) dx[r * d + j] = g[r * d + j] / eps;
                       }
                     }
                     x.accumulate_grad(std::move(dx));
                   });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> flip_tensor(const Tensor<T>& x, Index axis) {
  axis = normalize_axis(axis, x.rank(), "flip");
  const Shape& s = x.shape();
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[i];
  for (Index i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const Index n = s[axis];
  Tensor<T> out(s);
  for (Index o = 0; o < outer; ++o)
    for (Index j = 0; j < n; ++j)
      std::copy_n(x.ptr() + (o * n + j) * inner, inner, out.ptr() + (o * n + (n - 1 - j)) * inner);
  return out;
}

template <typename T>
Var<T> flip(const Var<T>& x, Index axis) {
  axis = normalize_axis(axis, x.value().rank(), "flip");
  const bool rec = recording<T>({&x});
  return finish<T>("flip", flip_tensor(x.value(), axis), rec,
                   [x, axis](const Tensor<T>& g, const Tensor<T>&) { x.accumulate_grad(flip_tensor(g, axis)); });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  const bool rec = recording<T>({&x});
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return finish<T>("reshape", std::move(out), rec,
                   [x](const Tensor<T>& g, const Tensor<T>&) { x.accumulate_grad(g.reshaped(x.shape())); });
}

template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<Index>& perm) {
  const Index r = x.rank();
  if (static_cast<Index>(perm.size()) != r) throw DimensionError("permute: perm length != rank");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (Index p : perm) {
    if (p < 0 || p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  const Shape& s = x.shape();
  Shape out_shape(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  const Shape in_strides = contiguous_strides(s);
  Shape src_strides(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) src_strides[i] = in_strides[perm[i]];
  Tensor<T> out(out_shape);
  const Index n = out.numel();
  if (n == 0) return out;
  std::vector<Index> idx(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (Index i = 0; i < n; ++i) {
    out[i] = x[src];
    for (Index d = r - 1; d >= 0; --d) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<Index>& perm) {
  const bool rec = recording<T>({&x});
  Tensor<T> out = permute_tensor(x.value(), perm);
  std::vector<Index> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = static_cast<Index>(i);
  return finish<T>("permute", std::move(out), rec, [x, inverse](const Tensor<T>& g, const Tensor<T>&) {
    x.accumulate_grad(permute_tensor(g, inverse));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  const bool rec = recording<T>({&x});
  T acc = 0;
  for (Index i = 0; i < x.numel(); ++i) acc += x.value()[i];
  return finish<T>("sum", Tensor<T>::scalar(acc), rec, [x](const Tensor<T>& g, const Tensor<T>&) {
    x.accumulate_grad(Tensor<T>::full(x.shape(), g[0]));
  });
}

namespace {

template <typename T>
Var<T> reduce_axis(const char* op, const Var<T>& x, Index axis, bool keepdim, T scale) {
  axis = normalize_axis(axis, x.value().rank(), op);
  const Shape& s = x.shape();
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[i];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) inner *= s[i];
  const Index n = s[axis];
  Shape out_shape = s;
  if (keepdim) out_shape[axis] = 1;
  else out_shape.erase(out_shape.begin() + axis);
  Tensor<T> out(out_shape);
  const T* xv = x.value().ptr();
  for (Index o = 0; o < outer; ++o)
    for (Index j = 0; j < n; ++j)
      for (Index q = 0; q < inner; ++q) out[o * inner + q] += xv[(o * n + j) * inner + q];
  if (scale != T(1))
    for (Index i = 0; i < out.numel(); ++i) out[i] *= scale;
  const bool rec = recording<T>({&x});
  return finish<T>(op, std::move(out), rec, [x, outer, inner, n, scale](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx(x.shape());
    for (Index o = 0; o < outer; ++o)
      for (Index j = 0; j < n; ++j)
        for (Index q = 0; q < inner; ++q) dx[(o * n + j) * inner + q] = g[o * inner + q] * scale;
    x.accumulate_grad(std::move(dx));
  });
}

}  // namespace

template <typename T>
Var<T> sum_axis(const Var<T>& x, Index axis, bool keepdim) {
  return reduce_axis<T>("sum_axis", x, axis, keepdim, T(1));
}

template <typename T>
Var<T> mean_axis(const Var<T>& x, Index axis, bool keepdim) {
  const Index ax = normalize_axis(axis, x.value().rank(), "mean_axis");
  const Index n = x.shape()[ax];
  if (n == 0) throw DimensionError("mean_axis over empty axis");
  return reduce_axis<T>("mean_axis", x, ax, keepdim, T(1) / T(n));
}

// ---------------------------------------------------------------------------
// Token shifts

template <typename T>
Var<T> shift_sequence(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("shift_sequence expects [B,L,D], got " + shape_str(s));
  const Index batch = s[0], len = s[1], d = s[2];
  Tensor<T> out(s);
  for (Index b = 0; b < batch; ++b)
    for (Index t = 1; t < len; ++t)
      std::copy_n(x.value().ptr() + (b * len + t - 1) * d, d, out.ptr() + (b * len + t) * d);
  const bool rec = recording<T>({&x});
  return finish<T>("shift_sequence", std::move(out), rec, [x, batch, len, d](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx(x.shape());
    for (Index b = 0; b < batch; ++b)
      for (Index t = 1; t < len; ++t)
        std::copy_n(g.ptr() + (b * len + t) * d, d, dx.ptr() + (b * len + t - 1) * d);
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> quarter_shift(const Var<T>& x, Index rows, Index cols) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("quarter_shift expects [B,L,D], got " + shape_str(s));
  const Index batch = s[0], len = s[1], d = s[2];
  if (d % 4 != 0) throw ConfigError("quarter_shift needs channels divisible by 4, got " + std::to_string(d));
  if (rows * cols != len)
    throw DimensionError("quarter_shift grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " does not match sequence length " + std::to_string(len));
  const Index q = d / 4;
  // Source cell offsets per quarter: left, right, up, down neighbour.
  static constexpr Index kDr[4] = {0, 0, -1, 1};
  static constexpr Index kDc[4] = {-1, 1, 0, 0};
  auto visit = [=](auto&& fn) {
    for (Index b = 0; b < batch; ++b)
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
          for (Index part = 0; part < 4; ++part) {
            const Index sr = r + kDr[part], sc = c + kDc[part];
            if (sr < 0 || sr >= rows || sc < 0 || sc >= cols) continue;
            fn((b * len + r * cols + c) * d + part * q, (b * len + sr * cols + sc) * d + part * q, q);
          }
  };
  Tensor<T> out(s);
  const T* xv = x.value().ptr();
  visit([&](Index dst, Index src, Index n) { std::copy_n(xv + src, n, out.ptr() + dst); });
  const bool rec = recording<T>({&x});
  return finish<T>("quarter_shift", std::move(out), rec, [x, visit](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx(x.shape());
    visit([&](Index dst, Index src, Index n) {
      for (Index i = 0; i < n; ++i) dx[src + i] += g[dst + i];
    });
    x.accumulate_grad(std::move(dx));
  });
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& targets) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || targets.shape() != s)
    throw DimensionError("soft_cross_entropy expects logits and targets [B,K], got " + shape_str(s) + " and " +
                         shape_str(targets.shape()));
  const Index batch = s[0], k = s[1];
  if (batch == 0 || k == 0) throw DimensionError("soft_cross_entropy on empty batch");
  const T tol = std::is_same_v<T, float> ? T(1e-5) : T(1e-6);
  for (Index b = 0; b < batch; ++b) {
    T total = 0;
    for (Index c = 0; c < k; ++c) {
      const T q = targets[b * k + c];
      if (q < T(0)) throw ContractError("soft target row " + std::to_string(b) + " has a negative entry");
      total += q;
    }
    if (std::abs(total - T(1)) > tol)
      throw ContractError("soft target row " + std::to_string(b) + " sums to " + std::to_string(total) + ", not 1");
  }
  Tensor<T> probs(s);
  T loss = 0;
  const T* lv = logits.value().ptr();
  for (Index b = 0; b < batch; ++b) {
    const T* row = lv + b * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (Index c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    for (Index c = 0; c < k; ++c) {
      probs[b * k + c] = std::exp(row[c] - lse);
      loss -= targets[b * k + c] * (row[c] - lse);
    }
  }
  loss /= T(batch);
  const bool rec = recording<T>({&logits});
  return finish<T>("soft_cross_entropy", Tensor<T>::scalar(loss), rec,
                   [logits, targets, probs = std::move(probs), batch](const Tensor<T>& g, const Tensor<T>&) {
                     Tensor<T> dl(logits.shape());
                     const T scale = g[0] / T(batch);
                     for (Index i = 0; i < dl.numel(); ++i) dl[i] = (probs[i] - targets[i]) * scale;
                     logits.accumulate_grad(std::move(dl));
                   });
}

#define ARWKV_INSTANTIATE_OPS(T)                                                                 \
  template void gemm<T>(const T*, const T*, T*, Index, Index, Index, bool, bool, bool);          \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> lerp<T>(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> affine<T>(const Var<T>&, T, T);                                                \
  template Var<T> sigmoid<T>(const Var<T>&);                                                     \
  template Var<T> tanh<T>(const Var<T>&);                                                        \
  template Var<T> relu<T>(const Var<T>&);                                                        \
  template Var<T> exp<T>(const Var<T>&);                                                         \
  template Var<T> square<T>(const Var<T>&);                                                      \
  template Var<T> neg_exp_exp<T>(const Var<T>&);                                                 \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, Index, Index);          \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, Index, Index, Index, Index); \
  template Var<T> dwconv2d<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> layernorm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                  \
  template Var<T> rms_norm<T>(const Var<T>&, T);                                                 \
  template Var<T> l2_normalize<T>(const Var<T>&, T);                                             \
  template Var<T> flip<T>(const Var<T>&, Index);                                                 \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                              \
  template Var<T> permute<T>(const Var<T>&, const std::vector<Index>&);                          \
  template Var<T> sum<T>(const Var<T>&);                                                         \
  template Var<T> sum_axis<T>(const Var<T>&, Index, bool);                                       \
  template Var<T> mean_axis<T>(const Var<T>&, Index, bool);                                      \
  template Var<T> shift_sequence<T>(const Var<T>&);                                              \
  template Var<T> quarter_shift<T>(const Var<T>&, Index, Index);                                 \
  template Var<T> soft_cross_entropy<T>(const Var<T>&, const Tensor<T>&);                        \
  template Tensor<T> flip_tensor<T>(const Tensor<T>&, Index);                                    \
  template Tensor<T> permute_tensor<T>(const Tensor<T>&, const std::vector<Index>&);

ARWKV_INSTANTIATE_OPS(float)
ARWKV_INSTANTIATE_OPS(double)

#undef ARWKV_INSTANTIATE_OPS

}  // namespace arwkv::ops
