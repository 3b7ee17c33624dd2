// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "arwkv/tensor.hpp"

namespace arwkv {

enum class BenchOperator { Wkv7, Wkv7Bi, Attention, AttentionCausal };
std::string_view to_string(BenchOperator op);
BenchOperator parse_bench_operator(std::string_view s);

struct BenchPoint {
  BenchOperator op = BenchOperator::Wkv7;
  Index seq_len = 0;
  Index channels = 0;
  Index batch = 0;
  double wall_ms = 0;         // median over reps
  double tokens_per_sec = 0;  // batch * seq_len / (wall_ms / 1000)
  Index peak_bytes = 0;       // estimated high-water mark of the operator's buffers
  std::string status = "ok";  // "ok" or "OOM"
};

struct BenchOptions {
  std::vector<Index> lengths;  // ascending
  Index channels = 192;
  Index head_dim = 64;
  Index batch = 1;
  int reps = 5;
  std::vector<BenchOperator> operators{BenchOperator::Wkv7, BenchOperator::Wkv7Bi, BenchOperator::Attention,
                                       BenchOperator::AttentionCausal};
  /// Points whose estimated peak exceeds the budget are recorded as OOM
  /// without running. 0 = unlimited.
  std::int64_t mem_budget_bytes = 0;
  std::uint64_t seed = 0;

  /// 2^4 .. 2^13.
  static std::vector<Index> default_lengths();
  /// Throws ConfigError on unsorted lengths, reps < 3, or channels not a
  /// multiple of head_dim.
  void validate() const;
};

/// Estimated bytes an operator holds at peak (f32).
Index bench_peak_bytes(BenchOperator op, Index batch, Index len, Index channels, Index head_dim);

/// One warmup run, then `reps` timed runs per (operator, length), all
/// single-threaded, forward only. The median is recorded. An OOM at one point
/// does not stop the others.
std::vector<BenchPoint> run_bench(const BenchOptions& opts,
                                  const std::function<void(const BenchPoint&)>& on_point = {});

std::vector<std::string> bench_schema();
std::vector<std::string> bench_fields(const BenchPoint& p);

/// Least-squares slope of log(wall_ms) against log(seq_len) for the given
/// operator's successful points, restricted to the `top` longest lengths
/// (0 = all).
double loglog_slope(const std::vector<BenchPoint>& points, BenchOperator op, std::size_t top = 0);

}  // namespace arwkv
