// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "arwkv/attention.hpp"
#include "arwkv/autodiff.hpp"
#include "arwkv/errors.hpp"
#include "arwkv/kv_file.hpp"
#include "arwkv/ops.hpp"
#include "arwkv/rng.hpp"
#include "arwkv/wkv.hpp"

namespace arwkv {

std::string_view to_string(BenchOperator op) {
  switch (op) {
    case BenchOperator::Wkv7:
      return "wkv7";
    case BenchOperator::Wkv7Bi:
      return "wkv7_bi";
    case BenchOperator::Attention:
      return "attention";
    case BenchOperator::AttentionCausal:
      return "attention_causal";
  }
  return "?";
}

BenchOperator parse_bench_operator(std::string_view s) {
  if (s == "wkv7") return BenchOperator::Wkv7;
  if (s == "wkv7_bi") return BenchOperator::Wkv7Bi;
  if (s == "attention") return BenchOperator::Attention;
  if (s == "attention_causal") return BenchOperator::AttentionCausal;
  throw ConfigError("unknown operator '" + std::string(s) + "' (expected wkv7|wkv7_bi|attention|attention_causal)");
}

std::vector<Index> BenchOptions::default_lengths() {
  std::vector<Index> out;
  for (int e = 4; e <= 13; ++e) out.push_back(Index{1} << e);
  return out;
}

void BenchOptions::validate() const {
  if (lengths.empty()) throw ConfigError("bench needs at least one length");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1) throw ConfigError("bench lengths must be positive");
    if (i && lengths[i] <= lengths[i - 1]) throw ConfigError("bench lengths must be strictly ascending");
  }
  if (reps < 3) throw ConfigError("bench reps must be >= 3");
  if (batch < 1) throw ConfigError("bench batch must be >= 1");
  if (head_dim < 1 || channels < head_dim || channels % head_dim != 0)
    throw ConfigError("bench channels must be a positive multiple of head_dim " + std::to_string(head_dim));
  if (operators.empty()) throw ConfigError("bench needs at least one operator");
  if (mem_budget_bytes < 0) throw ConfigError("mem budget must be >= 0");
}

Index bench_peak_bytes(BenchOperator op, Index batch, Index len, Index channels, Index head_dim) {
  const Index heads = channels / head_dim;
  constexpr Index f32 = 4;
  switch (op) {
    case BenchOperator::Wkv7:
      return wkv::scan_peak_bytes(batch, len, heads, head_dim, f32);
    case BenchOperator::Wkv7Bi:
      // Two scans, the gate and the fused output alongside the shared inputs.
      return wkv::scan_peak_bytes(batch, len, heads, head_dim, f32) + 3 * batch * len * channels * f32;
    case BenchOperator::Attention:
    case BenchOperator::AttentionCausal:
      return naive_attention_peak_bytes(batch, len, heads, head_dim, f32);
  }
  return 0;
}

namespace {

Tensor<float> random_tensor(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor<float> t(s);
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return t;
}

// Scan inputs drawn from the model's precursor parameterization.
wkv::WkvStepInputs<float> random_scan_inputs(const Shape& s, Rng& rng) {
  wkv::WkvStepInputs<float> in;
  in.r = random_tensor(s, rng, -1, 1);
  in.w = random_tensor(s, rng, -2, 2);
  for (Index i = 0; i < in.w.numel(); ++i) in.w[i] = std::exp(-std::exp(in.w[i]));
  in.kappa_hat = random_tensor(s, rng, -1, 1);
  const Index d = s.back();
  for (Index base = 0; base < in.kappa_hat.numel(); base += d) {
    double n = 0;
    for (Index j = 0; j < d; ++j) n += double(in.kappa_hat[base + j]) * in.kappa_hat[base + j];
    n = std::sqrt(n);
    for (Index j = 0; j < d; ++j) in.kappa_hat[base + j] = static_cast<float>(in.kappa_hat[base + j] / n);
  }
  in.a = random_tensor(s, rng, 0.05, 0.95);
  in.k_tilde = random_tensor(s, rng, -1, 1);
  in.v = random_tensor(s, rng, -1, 1);
  return in;
}

}  // namespace

std::vector<BenchPoint> run_bench(const BenchOptions& opts, const std::function<void(const BenchPoint&)>& on_point) {
  opts.validate();
  using Clock = std::chrono::steady_clock;
  const Index heads = opts.channels / opts.head_dim;
  std::vector<BenchPoint> points;
  for (BenchOperator op : opts.operators) {
    for (Index len : opts.lengths) {
      BenchPoint p;
      p.op = op;
      p.seq_len = len;
      p.channels = opts.channels;
      p.batch = opts.batch;
      p.peak_bytes = bench_peak_bytes(op, opts.batch, len, opts.channels, opts.head_dim);
      if (opts.mem_budget_bytes > 0 && p.peak_bytes > opts.mem_budget_bytes) {
        p.status = "OOM";
        p.wall_ms = 0;
        p.tokens_per_sec = 0;
      } else {
        Rng rng(opts.seed, "bench", static_cast<std::uint64_t>(len));
        const Shape shape{opts.batch, len, heads, opts.head_dim};
        const auto in = random_scan_inputs(shape, rng);
        const Tensor<float> gate = random_tensor(shape, rng, 0, 1);
        NoGradScope<float> no_grad;
        auto run_once = [&]() -> float {
          switch (op) {
            case BenchOperator::Wkv7:
              return wkv::scan_forward(in, wkv::Direction::Forward).out[0];
            case BenchOperator::Wkv7Bi: {
              const wkv::WkvVars<float> vars{Var<float>(in.r), Var<float>(in.w), Var<float>(in.kappa_hat),
                                             Var<float>(in.a), Var<float>(in.k_tilde), Var<float>(in.v)};
              return wkv::bi_wkv(vars, Var<float>(gate)).value()[0];
            }
            case BenchOperator::Attention:
              return naive_attention_reference(in.r, in.k_tilde, in.v, false)[0];
            case BenchOperator::AttentionCausal:
              return naive_attention_reference(in.r, in.k_tilde, in.v, true)[0];
          }
          return 0.f;
        };
        volatile float sink = run_once();  // warmup
        std::vector<double> times;
        for (int r = 0; r < opts.reps; ++r) {
          const auto t0 = Clock::now();
          sink = run_once();
          times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
        }
        (void)sink;
        std::sort(times.begin(), times.end());
        const std::size_t n = times.size();
        p.wall_ms = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
        p.wall_ms = std::max(p.wall_ms, 1e-6);
        p.tokens_per_sec = static_cast<double>(p.batch * p.seq_len) / (p.wall_ms / 1000.0);
      }
      points.push_back(p);
      if (on_point) on_point(p);
    }
  }
  return points;
}

std::vector<std::string> bench_schema() {
  return {"operator", "seq_len", "channels", "batch", "wall_ms", "tokens_per_sec", "peak_bytes", "status"};
}

std::vector<std::string> bench_fields(const BenchPoint& p) {
  return {std::string(to_string(p.op)), std::to_string(p.seq_len), std::to_string(p.channels),
          std::to_string(p.batch),      format_double(p.wall_ms), format_double(p.tokens_per_sec),
          std::to_string(p.peak_bytes), p.status};
}

double loglog_slope(const std::vector<BenchPoint>& points, BenchOperator op, std::size_t top) {
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : points)
    if (p.op == op && p.status == "ok") xy.emplace_back(std::log(double(p.seq_len)), std::log(p.wall_ms));
  std::sort(xy.begin(), xy.end());
  if (top > 0 && xy.size() > top) xy.erase(xy.begin(), xy.end() - static_cast<std::ptrdiff_t>(top));
  if (xy.size() < 2) throw ContractError("loglog_slope needs at least two successful points");
  double mx = 0, my = 0;
  for (auto [x, y] : xy) {
    mx += x;
    my += y;
  }
  mx /= double(xy.size());
  my /= double(xy.size());
  double sxy = 0, sxx = 0;
  for (auto [x, y] : xy) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  return sxy / sxx;
}

}  // namespace arwkv
