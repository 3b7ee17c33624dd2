// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace arwkv {

/// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
/// numbers: as easy as 1, 2, 3", SC'11).
///
/// A stream is identified by (seed, purpose name, sub-index). The key is
/// derived from seed and name, the sub-index fills the upper counter words, so
/// independent purposes (init, augmentation, drop-path, shuffling, ...) never
/// share draws and reordering one consumer does not perturb another.
///
/// Satisfies UniformRandomBitGenerator, so it can drive <random> distributions.
class Rng {
 public:
  using result_type = std::uint32_t;

  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t sub = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return 0xFFFFFFFFu; }
  result_type operator()();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached spare; two uniforms per call).
  double normal();
  double gamma(double shape);
  /// Beta(a, b) from two gamma draws.
  double beta(double a, double b);
  bool bernoulli(double p) { return uniform() < p; }

  /// Raw Philox block for a given key and counter (exposed for known-answer tests).
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
};

/// 64-bit FNV-1a, used to derive stream keys from purpose names.
std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace arwkv
