// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "arwkv/errors.hpp"
#include "arwkv/gradcheck.hpp"
#include "arwkv/model.hpp"
#include "arwkv/ops.hpp"
#include "arwkv/rng.hpp"
#include "arwkv/wkv.hpp"
#include "commands.hpp"

namespace arwkv::cli {

namespace {

using V = Var<double>;
using Vs = std::vector<V>;
using Fn = std::function<V(const Vs&)>;

Tensor<double> uniform(const Shape& s, Rng& rng, double lo = -2, double hi = 2) {
  Tensor<double> t(s);
  for (Index i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

// Values in [-2,-0.2] U [0.2,2], away from the ReLU kink.
Tensor<double> off_zero(const Shape& s, Rng& rng) {
  Tensor<double> t = uniform(s, rng, 0.2, 2);
  for (Index i = 0; i < t.numel(); ++i)
    if (rng.bernoulli(0.5)) t[i] = -t[i];
  return t;
}

Tensor<double> softmax_rows(const Tensor<double>& x) {
  Tensor<double> out(x.shape());
  const Index k = x.shape().back(), rows = x.numel() / k;
  for (Index r = 0; r < rows; ++r) {
    double z = 0;
    for (Index c = 0; c < k; ++c) z += std::exp(x[r * k + c]);
    for (Index c = 0; c < k; ++c) out[r * k + c] = std::exp(x[r * k + c]) / z;
  }
  return out;
}

class Suite {
 public:
  Suite(std::string scope, std::uint64_t seed) : scope_(std::move(scope)), rng_(seed, "gradcheck/" + scope_) {}

  Rng& rng() { return rng_; }

  /// Checks sum(f(inputs) * c) for a fixed random c, so every output
  /// coordinate carries a distinct weight.
  void check(const std::string& name, const Fn& f, const std::vector<Tensor<double>>& inputs, double tol,
             GradcheckOptions opts = {}) {
    Tensor<double> probe;
    {
      NoGradScope<double> ng;
      Vs tmp;
      for (const auto& t : inputs) tmp.emplace_back(t);
      probe = f(tmp).value();
    }
    const Tensor<double> c = uniform(probe.shape(), rng_, -1, 1);
    auto loss = [f, c](const Vs& in) { return ops::sum(ops::mul(f(in), ops::constant(c))); };
    opts.tol = tol;
    record(name, tol, [&] { return gradcheck(loss, inputs, opts); });
  }

  void check_leaves(const std::string& name, const std::function<V()>& f, const Vs& leaves, double tol,
                    GradcheckOptions opts = {}) {
    opts.tol = tol;
    record(name, tol, [&] { return gradcheck_leaves(f, leaves, opts); });
  }

  std::vector<GradcheckRow> rows;

 private:
  template <typename Run>
  void record(const std::string& name, double tol, Run run) {
    GradcheckRow row{scope_, name, 0, tol, false, {}};
    try {
      const GradcheckReport rep = run();
      row.max_rel_err = rep.max_rel_err;
      row.pass = rep.pass;
      row.failure = rep.failure;
    } catch (const std::exception& e) {
      row.failure = std::string("threw: ") + e.what();
    }
    rows.push_back(std::move(row));
  }

  std::string scope_;
  Rng rng_;
};

void ops_suite(Suite& s) {
  using namespace ops;
  Rng& g = s.rng();
  const double tol = 1e-6;
  s.check("add_broadcast", [](const Vs& x) { return add(x[0], x[1]); }, {uniform({2, 3}, g), uniform({3}, g)}, tol);
  s.check("sub_broadcast", [](const Vs& x) { return sub(x[0], x[1]); }, {uniform({2, 3}, g), uniform({2, 1}, g)}, tol);
  s.check("mul_broadcast", [](const Vs& x) { return mul(x[0], x[1]); }, {uniform({2, 3, 4}, g), uniform({3, 1}, g)}, tol);
  s.check("lerp", [](const Vs& x) { return lerp(x[0], x[1], x[2]); },
          {uniform({2, 3}, g), uniform({2, 3}, g), uniform({3}, g)}, tol);
  s.check("affine", [](const Vs& x) { return affine(x[0], 1.7, -0.3); }, {uniform({4}, g)}, tol);
  s.check("sigmoid", [](const Vs& x) { return sigmoid(x[0]); }, {uniform({3, 4}, g)}, tol);
  s.check("tanh", [](const Vs& x) { return ops::tanh(x[0]); }, {uniform({3, 4}, g)}, tol);
  s.check("relu", [](const Vs& x) { return relu(x[0]); }, {off_zero({3, 4}, g)}, tol);
  s.check("exp", [](const Vs& x) { return ops::exp(x[0]); }, {uniform({3, 4}, g)}, tol);
  s.check("square", [](const Vs& x) { return square(x[0]); }, {uniform({3, 4}, g)}, tol);
  s.check("neg_exp_exp", [](const Vs& x) { return neg_exp_exp(x[0]); }, {uniform({3, 4}, g)}, tol);
  s.check("matmul", [](const Vs& x) { return matmul(x[0], x[1]); }, {uniform({3, 4}, g), uniform({4, 5}, g)}, tol);
  s.check("matmul_batched", [](const Vs& x) { return matmul(x[0], x[1]); },
          {uniform({2, 3, 4}, g), uniform({1, 4, 2}, g)}, tol);
  s.check("conv2d", [](const Vs& x) { return conv2d(x[0], x[1], x[2], 1, 1); },
          {uniform({2, 2, 5, 6}, g), uniform({3, 2, 3, 3}, g), uniform({3}, g)}, tol);
  s.check("conv2d_strided", [](const Vs& x) { return conv2d(x[0], x[1], x[2], 2, 3, 0, 1); },
          {uniform({1, 1, 6, 7}, g), uniform({2, 1, 2, 3}, g), uniform({2}, g)}, tol);
  s.check("dwconv2d", [](const Vs& x) { return dwconv2d(x[0], x[1]); },
          {uniform({1, 3, 5, 7}, g), uniform({3, 1, 3, 3}, g)}, tol);
  s.check("layernorm", [](const Vs& x) { return layernorm(x[0], x[1], x[2]); },
          {uniform({3, 5}, g), uniform({5}, g), uniform({5}, g)}, tol);
  s.check("rms_norm", [](const Vs& x) { return rms_norm(x[0]); }, {uniform({3, 5}, g)}, tol);
  s.check("l2_normalize", [](const Vs& x) { return l2_normalize(x[0]); }, {uniform({3, 4}, g)}, tol);
  s.check("flip", [](const Vs& x) { return flip(x[0], 1); }, {uniform({2, 3, 4}, g)}, tol);
  s.check("reshape", [](const Vs& x) { return reshape(x[0], Shape{4, 6}); }, {uniform({2, 3, 4}, g)}, tol);
  s.check("permute", [](const Vs& x) { return permute(x[0], {2, 0, 1}); }, {uniform({2, 3, 4}, g)}, tol);
  s.check("sum", [](const Vs& x) { return sum(x[0]); }, {uniform({2, 3}, g)}, tol);
  s.check("sum_axis", [](const Vs& x) { return sum_axis(x[0], 1); }, {uniform({2, 3, 4}, g)}, tol);
  s.check("mean_axis", [](const Vs& x) { return mean_axis(x[0], 0, true); }, {uniform({2, 3, 4}, g)}, tol);
  s.check("shift_sequence", [](const Vs& x) { return shift_sequence(x[0]); }, {uniform({2, 4, 3}, g)}, tol);
  s.check("quarter_shift", [](const Vs& x) { return quarter_shift(x[0], 2, 3); }, {uniform({1, 6, 8}, g)}, tol);
  const Tensor<double> targets = softmax_rows(uniform({3, 4}, g));
  s.check("soft_cross_entropy", [targets](const Vs& x) { return soft_cross_entropy(x[0], targets); },
          {uniform({3, 4}, g)}, tol);
}

wkv::WkvStepInputs<double> precursor_inputs(const Shape& shape, Rng& g) {
  wkv::WkvStepInputs<double> in;
  in.r = uniform(shape, g);
  in.w = uniform(shape, g);
  for (Index i = 0; i < in.w.numel(); ++i) in.w[i] = std::exp(-std::exp(in.w[i]));
  in.kappa_hat = uniform(shape, g);
  const Index d = shape.back();
  for (Index b = 0; b < in.kappa_hat.numel(); b += d) {
    double n = 0;
    for (Index j = 0; j < d; ++j) n += in.kappa_hat[b + j] * in.kappa_hat[b + j];
    for (Index j = 0; j < d; ++j) in.kappa_hat[b + j] /= std::sqrt(n);
  }
  in.a = uniform(shape, g);
  for (Index i = 0; i < in.a.numel(); ++i) in.a[i] = 1.0 / (1.0 + std::exp(-in.a[i]));
  in.k_tilde = uniform(shape, g);
  in.v = uniform(shape, g);
  return in;
}

void kernel_suite(Suite& s) {
  Rng& g = s.rng();
  const double tol = 1e-4;
  const Shape shape{1, 6, 1, 4};
  for (auto dir : {wkv::Direction::Forward, wkv::Direction::Backward}) {
    const auto in = precursor_inputs(shape, g);
    s.check(dir == wkv::Direction::Forward ? "wkv7_scan_forward" : "wkv7_scan_backward",
            [dir](const Vs& x) {
              return wkv::wkv7_scan(wkv::WkvVars<double>{x[0], x[1], x[2], x[3], x[4], x[5]}, dir).out;
            },
            {in.r, in.w, in.kappa_hat, in.a, in.k_tilde, in.v}, tol);
  }
  {
    const auto in = precursor_inputs(Shape{2, 5, 2, 3}, g);
    s.check("wkv7_scan_initial_state",
            [](const Vs& x) {
              return wkv::wkv7_scan(wkv::WkvVars<double>{x[0], x[1], x[2], x[3], x[4], x[5]}, wkv::Direction::Forward,
                                    x[6])
                  .out;
            },
            {in.r, in.w, in.kappa_hat, in.a, in.k_tilde, in.v, uniform({2, 2, 3, 3}, g, -0.5, 0.5)}, tol);
  }
  {
    const auto in = precursor_inputs(shape, g);
    s.check("bi_wkv",
            [](const Vs& x) { return wkv::bi_wkv(wkv::WkvVars<double>{x[0], x[1], x[2], x[3], x[4], x[5]}, x[6]); },
            {in.r, in.w, in.kappa_hat, in.a, in.k_tilde, in.v, uniform(shape, g, 0.1, 0.9)}, tol);
  }
}

// Randomizes every parameter a little so no gradient is structurally zero.
void jitter(const Model<double>& m, Rng& g, double scale) {
  for (const auto& [name, v] : m.parameters()) {
    Var<double> p = v;
    for (Index i = 0; i < p.numel(); ++i) p.mutable_value()[i] += scale * (2 * g.uniform() - 1);
  }
}

Vs leaves_of(const Model<double>& m) {
  Vs out;
  for (const auto& [name, v] : m.parameters()) out.push_back(v);
  return out;
}

void model_suite(Suite& s) {
  Rng& g = s.rng();
  {
    // One spatial-mix module: D=8, d=4, L=6 on a 2x3 grid.
    ModelConfig c = ModelConfig::preset("nano");
    c.embed_dim = 8;
    c.head_dim = 4;
    c.depth = 1;
    c.patch_h = c.patch_w = 2;
    c.n_mels = 4;
    c.n_frames = 6;
    c.lora_rank_w = c.lora_rank_a = c.lora_rank_g = 2;
    for (TokenShift ts : {TokenShift::Original1D, TokenShift::ConvShift}) {
      c.token_shift = ts;
      const Model<double> m(c, 7);
      jitter(m, g, 0.1);
      const V x(uniform({2, 6, 8}, g), true, "x");
      const PatchGrid grid = c.grid();
      const Tensor<double> w = uniform({2, 6, 8}, g, -1, 1);
      Vs leaves = leaves_of(m);
      leaves.push_back(x);
      // Only block parameters and x feed spatial_mix; the rest get zero gradients.
      s.check_leaves(std::string("spatial_mix_") + std::string(to_string(ts)),
                     [&] { return ops::sum(ops::mul(spatial_mix(x, m.block(0), c, grid), ops::constant(w))); }, leaves,
                     1e-4);
    }
  }
  {
    const ModelConfig c = ModelConfig::preset("nano");
    const Model<double> m(c, 11);
    jitter(m, g, 0.05);
    const Tensor<double> spec = uniform({2, 1, c.n_mels, c.n_frames}, g);
    const Tensor<double> targets = softmax_rows(uniform({2, c.num_classes}, g));
    s.check_leaves("model_end_to_end",
                   [&] { return ops::soft_cross_entropy(m.forward(ops::constant(spec)), targets); }, leaves_of(m),
                   1e-3);
  }
}

}  // namespace

std::vector<GradcheckRow> gradcheck_suite(const std::string& scope, std::uint64_t seed) {
  Suite s(scope, seed);
  if (scope == "ops") {
    ops_suite(s);
  } else if (scope == "kernel") {
    kernel_suite(s);
  } else if (scope == "model") {
    model_suite(s);
  } else {
    throw ConfigError("unknown gradcheck scope '" + scope + "'");
  }
  return std::move(s.rows);
}

}  // namespace arwkv::cli
