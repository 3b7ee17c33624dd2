// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <cmath>

#include "arwkv/attention.hpp"
#include "arwkv/autodiff.hpp"
#include "arwkv/model.hpp"
#include "arwkv/ops.hpp"
#include "arwkv/rng.hpp"
#include "arwkv/wkv.hpp"

namespace {

using namespace arwkv;

constexpr Index kChannels = 192;
constexpr Index kHeadDim = 64;

Tensor<float> fill(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor<float> t(s);
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return t;
}

wkv::WkvStepInputs<float> inputs(Index L) {
  Rng rng(0, "bench");
  const Shape s{1, L, kChannels / kHeadDim, kHeadDim};
  wkv::WkvStepInputs<float> in{fill(s, rng, -1, 1),  fill(s, rng, 0.85, 0.99), fill(s, rng, -1, 1),
                               fill(s, rng, 0.1, 0.9), fill(s, rng, -1, 1),   fill(s, rng, -1, 1)};
  for (Index row = 0; row < in.kappa_hat.numel() / kHeadDim; ++row) {
    float* k = in.kappa_hat.ptr() + row * kHeadDim;
    double n = 0;
    for (Index j = 0; j < kHeadDim; ++j) n += double(k[j]) * k[j];
    for (Index j = 0; j < kHeadDim; ++j) k[j] = static_cast<float>(k[j] / std::sqrt(n));
  }
  return in;
}

void set_tokens(benchmark::State& state) {
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Wkv7Forward(benchmark::State& state) {
  const auto in = inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(wkv::scan_forward(in, wkv::Direction::Forward).out.ptr());
  set_tokens(state);
}
BENCHMARK(BM_Wkv7Forward)->RangeMultiplier(2)->Range(256, 8192)->Unit(benchmark::kMillisecond);

void BM_Wkv7Bidirectional(benchmark::State& state) {
  const auto in = inputs(state.range(0));
  const wkv::WkvVars<float> vars{Var<float>(in.r), Var<float>(in.w),       Var<float>(in.kappa_hat),
                                 Var<float>(in.a), Var<float>(in.k_tilde), Var<float>(in.v)};
  const Var<float> gate(Tensor<float>(in.r.shape(), 0.5f));
  NoGradScope<float> ng;
  for (auto _ : state) benchmark::DoNotOptimize(wkv::bi_wkv(vars, gate).value().ptr());
  set_tokens(state);
}
BENCHMARK(BM_Wkv7Bidirectional)->RangeMultiplier(2)->Range(256, 8192)->Unit(benchmark::kMillisecond);

// Forward with cached states plus the adjoint scan.
void BM_Wkv7ForwardBackward(benchmark::State& state) {
  const auto in = inputs(state.range(0));
  const Tensor<float> g(in.r.shape(), 1.0f);
  for (auto _ : state) {
    const auto fwd = wkv::scan_forward<float>(in, wkv::Direction::Forward, nullptr, true);
    benchmark::DoNotOptimize(wkv::scan_backward(in, wkv::Direction::Forward, fwd.state_cache, g).inputs.r.ptr());
  }
  set_tokens(state);
}
BENCHMARK(BM_Wkv7ForwardBackward)->RangeMultiplier(2)->Range(256, 2048)->Unit(benchmark::kMillisecond);

void BM_NaiveAttention(benchmark::State& state) {
  const auto in = inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(naive_attention_reference(in.r, in.k_tilde, in.v, false).ptr());
  set_tokens(state);
}
BENCHMARK(BM_NaiveAttention)->RangeMultiplier(2)->Range(256, 4096)->Unit(benchmark::kMillisecond);

void BM_MicroModelForward(benchmark::State& state) {
  const ModelConfig cfg = ModelConfig::preset("micro");
  const Model<float> model(cfg, 0);
  Rng rng(1, "bench");
  const Var<float> x(fill({state.range(0), 1, cfg.n_mels, cfg.n_frames}, rng, -1, 1));
  NoGradScope<float> ng;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x).value().ptr());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MicroModelForward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
