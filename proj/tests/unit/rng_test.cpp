// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "arwkv/rng.hpp"

namespace arwkv {
namespace {

// Known-answer vectors published with the Random123 reference implementation.
TEST(Philox, KnownAnswers) {
  using A4 = std::array<std::uint32_t, 4>;
  EXPECT_EQ(Rng::block({0, 0, 0, 0}, {0, 0}), (A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(Rng::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
            (A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(Rng::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
            (A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  Rng a(7, "init"), b(7, "init"), c(7, "augment"), d(7, "init", 1), e(8, "init");
  std::set<std::uint32_t> firsts;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    if (i == 0) {
      firsts.insert(x);
      firsts.insert(c());
      firsts.insert(d());
      firsts.insert(e());
    }
  }
  EXPECT_EQ(firsts.size(), 4u);
}

TEST(Rng, UniformMomentsAndRange) {
  Rng rng(1, "test/uniform");
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - 0.25, 1.0 / 12, 0.003);
}

TEST(Rng, UniformIntCoversRange) {
  Rng rng(2, "test/int");
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) ++hist[rng.uniform_int(7)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 400);
}

TEST(Rng, NormalMoments) {
  Rng rng(3, "test/normal");
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.015);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, BetaMean) {
  Rng rng(4, "test/beta");
  for (double a : {0.8, 1.0, 2.5}) {
    double s = 0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
      const double x = rng.beta(a, a);
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, 1.0);
      s += x;
    }
    EXPECT_NEAR(s / n, 0.5, 0.01) << "alpha " << a;
  }
}

TEST(Fnv, KnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

}  // namespace
}  // namespace arwkv
