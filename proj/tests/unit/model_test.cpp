// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "arwkv/errors.hpp"
#include "arwkv/model.hpp"
#include "arwkv/ops.hpp"
#include "test_util.hpp"

namespace arwkv {
namespace {

using testing::uniform;
using V = Var<double>;

ModelConfig nano(TokenShift shift = TokenShift::ConvShift, ScanKind scan = ScanKind::Bidirectional,
                 FusionKind fusion = FusionKind::WeightedGate) {
  ModelConfig c = ModelConfig::preset("nano");
  c.token_shift = shift;
  c.scan = scan;
  c.fusion = fusion;
  return c;
}

Tensor<double> spec_batch(const ModelConfig& c, Index B, Rng& rng) { return uniform({B, 1, c.n_mels, c.n_frames}, rng); }

TEST(ModelConfig, PresetBudgetsWithinTwentyPercent) {
  const std::pair<const char*, double> budgets[] = {{"T", 6e6}, {"S", 23e6}, {"B", 91e6}};
  for (const auto& [name, target] : budgets) {
    const Index n = param_count(ModelConfig::preset(name));
    EXPECT_GE(n, 0.8 * target) << name;
    EXPECT_LE(n, 1.2 * target) << name;
  }
  EXPECT_EQ(ModelConfig::preset("T").embed_dim, 192);
  EXPECT_EQ(ModelConfig::preset("S").embed_dim, 384);
  EXPECT_EQ(ModelConfig::preset("B").embed_dim, 768);
  EXPECT_EQ(ModelConfig::preset("B").depth, 12);
}

TEST(ModelConfig, NanoCountByHand) {
  // Per block: attention 2032 (with gate 272 and conv kernel 144), channel mix
  // 1216. Plus patch 272, positions 192, two LayerNorms 64, head 51.
  EXPECT_EQ(param_count(nano()), 2 * (2032 + 1216) + 272 + 192 + 64 + 51);
}

TEST(ModelConfig, AllocatedParametersMatchFormula) {
  for (auto shift : {TokenShift::Original1D, TokenShift::QShift, TokenShift::ConvShift})
    for (auto scan : {ScanKind::Causal, ScanKind::Bidirectional})
      for (auto fusion : {FusionKind::Average, FusionKind::WeightedGate}) {
        ModelConfig c = nano(shift, scan, fusion);
        for (bool bonus : {false, true}) {
          c.bonus_enabled = bonus;
          const Model<float> m(c, 1);
          EXPECT_EQ(m.num_parameters(), param_count(c)) << serialize_config(c);
        }
      }
  const Model<float> micro(ModelConfig::preset("micro"), 0);
  EXPECT_EQ(micro.num_parameters(), param_count(ModelConfig::preset("micro")));
}

TEST(ModelConfig, SerializeRoundTrip) {
  ModelConfig c = nano(TokenShift::QShift, ScanKind::Causal, FusionKind::Average);
  c.drop_path_rate = 0.125;
  EXPECT_EQ(parse_config_text(serialize_config(c)), c);
}

TEST(ModelConfig, ValidationNamesField) {
  ModelConfig c = nano();
  c.head_dim = 5;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("head_dim"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text("preset = nano\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("embed_dim = 16\n"), ConfigError);
}

TEST(Model, InitIsFiniteAndPrecisionIndependent) {
  const Model<float> f(nano(), 3);
  const Model<double> d(nano(), 3);
  ASSERT_EQ(f.parameters().size(), d.parameters().size());
  for (std::size_t i = 0; i < f.parameters().size(); ++i) {
    const auto& [name, pf] = f.parameters()[i];
    const auto& pd = d.parameters()[i].second;
    EXPECT_TRUE(pf.value().all_finite()) << name;
    for (Index j = 0; j < pf.numel(); ++j) ASSERT_EQ(pf.value()[j], static_cast<float>(pd.value()[j])) << name;
  }
}

TEST(Model, SeedChangesInit) {
  const Model<double> a(nano(), 1), b(nano(), 2);
  EXPECT_FALSE(bit_equal(a.param("blocks.0.att.W_r").value(), b.param("blocks.0.att.W_r").value()));
}

TEST(Model, PatchFlattenOrderIsRowMajor) {
  // A spike in patch (row, col) changes exactly token row * cols + col.
  const ModelConfig c = nano();
  const Model<double> m(c, 0);
  const PatchGrid g = c.grid();
  Tensor<double> base({1, 1, c.n_mels, c.n_frames});
  auto embed = [&](const Tensor<double>& s) {
    return patch_embed(V(s), m.param("patch.weight"), m.param("patch.bias"), m.param("pos_embed"),
                       m.param("ln0.weight"), m.param("ln0.bias"), c.patch_h, c.patch_w)
        .value();
  };
  const auto y0 = embed(base);
  for (Index r = 0; r < g.rows; ++r)
    for (Index col = 0; col < g.cols; ++col) {
      Tensor<double> s = base;
      s.at({0, 0, r * c.patch_h + 1, col * c.patch_w + 2}) = 5.0;
      const auto y = embed(s);
      for (Index t = 0; t < g.len(); ++t) {
        bool changed = false;
        for (Index k = 0; k < c.embed_dim; ++k) changed |= y.at({0, t, k}) != y0.at({0, t, k});
        EXPECT_EQ(changed, t == r * g.cols + col) << "spike " << r << "," << col << " token " << t;
      }
    }
}

TEST(Model, IndivisibleInputIsConfigError) {
  const Model<double> m(nano(), 0);
  EXPECT_THROW(m.forward(V(Tensor<double>({1, 1, 13, 16}))), ConfigError);
}

TEST(Model, OtherGridNeedsInterpolation) {
  ModelConfig c = nano();
  Rng rng(1, "test/grid");
  const Tensor<double> wide = uniform({2, 1, c.n_mels, c.n_frames * 2}, rng);
  EXPECT_THROW(Model<double>(c, 0).forward(V(wide)), ConfigError);
  c.pos_interpolation = true;
  const Model<double> m(c, 0);
  const auto y = m.forward(V(wide)).value();
  EXPECT_EQ(y.shape(), (Shape{2, c.num_classes}));
  EXPECT_TRUE(y.all_finite());
}

TEST(Model, BilinearMatrixIdentityAndRows) {
  const PatchGrid g{3, 4};
  const auto I = bilinear_matrix<double>(g, g);
  for (Index i = 0; i < 12; ++i)
    for (Index j = 0; j < 12; ++j) EXPECT_NEAR(I.at({i, j}), i == j ? 1.0 : 0.0, 1e-15);
  const auto M = bilinear_matrix<double>(g, PatchGrid{5, 7});
  for (Index i = 0; i < 35; ++i) {
    double s = 0;
    for (Index j = 0; j < 12; ++j) s += M.at({i, j});
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Model, ConvShiftWithDeltaKernelIsZero) {
  Rng rng(2, "test/convshift");
  const PatchGrid g{3, 4};
  Tensor<double> k({5, 1, 3, 3});
  for (Index c = 0; c < 5; ++c) k.at({c, 0, 1, 1}) = 1.0;
  const auto res = conv_shift_residual(V(uniform({2, 12, 5}, rng)), g, V(k)).value();
  for (Index i = 0; i < res.numel(); ++i) EXPECT_EQ(res[i], 0.0);
}

TEST(Model, ConvShiftMatchesLoopOracle) {
  Rng rng(3, "test/convshift");
  const PatchGrid g{3, 5};
  const Index D = 4;
  const auto x = uniform({2, g.len(), D}, rng);
  const auto k = uniform({D, 1, 3, 3}, rng);
  const auto res = conv_shift_residual(V(x), g, V(k)).value();
  for (Index b = 0; b < 2; ++b)
    for (Index r = 0; r < g.rows; ++r)
      for (Index c = 0; c < g.cols; ++c)
        for (Index ch = 0; ch < D; ++ch) {
          double s = 0;
          for (Index u = 0; u < 3; ++u)
            for (Index v = 0; v < 3; ++v) {
              const Index rr = r + u - 1, cc = c + v - 1;
              if (rr < 0 || rr >= g.rows || cc < 0 || cc >= g.cols) continue;
              s += k.at({ch, 0, u, v}) * x.at({b, rr * g.cols + cc, ch});
            }
          EXPECT_NEAR(res.at({b, r * g.cols + c, ch}), s - x.at({b, r * g.cols + c, ch}), 1e-12);
        }
}

TEST(Model, QShiftDisplacementTable) {
  // 2x2 grid, D=4, one channel per quarter. Token t carries value 10 * (t + 1)
  // on every channel; entry [t][q] is what quarter q of token t reads.
  const PatchGrid g{2, 2};
  Tensor<double> x({1, 4, 4});
  for (Index t = 0; t < 4; ++t)
    for (Index q = 0; q < 4; ++q) x.at({0, t, q}) = 10.0 * (t + 1);
  const double table[4][4] = {
      // left, right, up, down
      {0, 20, 0, 30},
      {10, 0, 0, 40},
      {0, 40, 10, 0},
      {30, 0, 20, 0},
  };
  const auto shifted = ops::quarter_shift(V(x), 2, 2).value();
  const auto res = qshift_residual(V(x), g).value();
  for (Index t = 0; t < 4; ++t)
    for (Index q = 0; q < 4; ++q) {
      EXPECT_EQ(shifted.at({0, t, q}), table[t][q]) << t << "," << q;
      EXPECT_EQ(res.at({0, t, q}), table[t][q] - x.at({0, t, q}));
    }
}

TEST(Model, QShiftConservesMassMinusBorderOutflow) {
  Rng rng(4, "test/qshift");
  const PatchGrid g{3, 5};
  const Index D = 8, q = 2;
  const auto x = uniform({1, g.len(), D}, rng);
  const auto y = ops::quarter_shift(V(x), g.rows, g.cols).value();
  // Quarter p reads from (dr, dc), so cells on the opposite border lose their value.
  const Index dr[4] = {0, 0, -1, 1}, dc[4] = {-1, 1, 0, 0};
  for (Index part = 0; part < 4; ++part) {
    double sx = 0, sy = 0, out = 0;
    for (Index r = 0; r < g.rows; ++r)
      for (Index c = 0; c < g.cols; ++c)
        for (Index ch = part * q; ch < (part + 1) * q; ++ch) {
          const double v = x.at({0, r * g.cols + c, ch});
          sx += v;
          sy += y.at({0, r * g.cols + c, ch});
          const Index tr = r - dr[part], tc = c - dc[part];
          if (tr < 0 || tr >= g.rows || tc < 0 || tc >= g.cols) out += v;
        }
    EXPECT_NEAR(sy, sx - out, 1e-12) << "quarter " << part;
  }
}

TEST(Model, QShiftNeedsChannelsDivisibleByFour) {
  EXPECT_THROW(qshift_residual(V(Tensor<double>({1, 4, 6})), PatchGrid{2, 2}), ConfigError);
}

TEST(Model, TokenShift1dMatchesIndexOracle) {
  Rng rng(5, "test/shift1d");
  const auto x = uniform({2, 5, 3}, rng);
  const auto y = token_shift_1d(V(x)).value();
  for (Index b = 0; b < 2; ++b)
    for (Index t = 0; t < 5; ++t)
      for (Index c = 0; c < 3; ++c)
        EXPECT_EQ(y.at({b, t, c}), (t ? x.at({b, t - 1, c}) : 0.0) - x.at({b, t, c}));
}

TEST(Model, LerpParamsPointwise) {
  Rng rng(6, "test/lerp");
  const auto x = uniform({2, 3, 4}, rng), r = uniform({2, 3, 4}, rng), mu = uniform({4}, rng);
  const auto y = lerp_params(V(x), V(r), V(mu)).value();
  for (Index i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], x[i] + r[i] * mu[i % 4], 1e-15);
}

TEST(Model, AverageFusionEqualsZeroGate) {
  Rng rng(7, "test/gate");
  const auto x = spec_batch(nano(), 2, rng);
  Model<double> gated(nano(TokenShift::ConvShift, ScanKind::Bidirectional, FusionKind::WeightedGate), 5);
  const Model<double> avg(nano(TokenShift::ConvShift, ScanKind::Bidirectional, FusionKind::Average), 5);
  for (Index i = 0; i < 2; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".att.";
    gated.set_param(b + "W_G", Tensor<double>({16, 16}));
    gated.set_param(b + "b_G", Tensor<double>({16}));
  }
  EXPECT_TRUE(bit_equal(gated.forward(V(x)).value(), avg.forward(V(x)).value()));
}

TEST(Model, BatchInvariance) {
  Rng rng(8, "test/batch");
  const ModelConfig c = nano();
  const Model<double> m(c, 1);
  const auto a = spec_batch(c, 2, rng), b = spec_batch(c, 3, rng);
  Tensor<double> ab({5, 1, c.n_mels, c.n_frames});
  std::copy(a.ptr(), a.ptr() + a.numel(), ab.ptr());
  std::copy(b.ptr(), b.ptr() + b.numel(), ab.ptr() + a.numel());
  const auto y = m.forward(V(ab)).value();
  const auto ya = m.forward(V(a)).value(), yb = m.forward(V(b)).value();
  for (Index i = 0; i < ya.numel(); ++i) EXPECT_NEAR(y[i], ya[i], 1e-6);
  for (Index i = 0; i < yb.numel(); ++i) EXPECT_NEAR(y[ya.numel() + i], yb[i], 1e-6);
}

TEST(Model, CausalOriginalShiftIgnoresLaterTokens) {
  ModelConfig c = nano(TokenShift::Original1D, ScanKind::Causal, FusionKind::Average);
  const Model<float> m(c, 2);
  Rng rng(9, "test/causal");
  const PatchGrid g = c.grid();
  const auto x = uniform<float>({1, 1, c.n_mels, c.n_frames}, rng);
  const auto f0 = m.features(Var<float>(x)).value();
  for (Index t = 0; t + 1 < g.len(); ++t) {
    Tensor<float> edited = x;
    // Rewrite every patch after token t.
    for (Index s = t + 1; s < g.len(); ++s) {
      const Index r = s / g.cols, col = s % g.cols;
      for (Index u = 0; u < c.patch_h; ++u)
        for (Index v = 0; v < c.patch_w; ++v)
          edited.at({0, 0, r * c.patch_h + u, col * c.patch_w + v}) = static_cast<float>(rng.normal());
    }
    const auto f1 = m.features(Var<float>(edited)).value();
    for (Index i = 0; i < (t + 1) * c.embed_dim; ++i) ASSERT_EQ(f0[i], f1[i]) << "token " << t;
    bool later_changed = false;
    for (Index i = (t + 1) * c.embed_dim; i < f1.numel(); ++i) later_changed |= f0[i] != f1[i];
    EXPECT_TRUE(later_changed);
  }
}

TEST(Model, ShufflingPatchesChangesLogits) {
  const ModelConfig c = nano();
  const Model<double> m(c, 3);
  Rng rng(10, "test/perm");
  const auto x = spec_batch(c, 1, rng);
  Tensor<double> swapped = x;
  // Swap patch (0,0) with patch (1,2).
  for (Index u = 0; u < c.patch_h; ++u)
    for (Index v = 0; v < c.patch_w; ++v)
      std::swap(swapped.at({0, 0, u, v}), swapped.at({0, 0, c.patch_h + u, 2 * c.patch_w + v}));
  EXPECT_GT(max_abs_diff(m.forward(V(x)).value(), m.forward(V(swapped)).value()), 1e-9);
}

TEST(Model, DropPathIsIdentityInEval) {
  ModelConfig c = nano();
  c.drop_path_rate = 0.5;
  const Model<double> m(c, 4);
  Rng rng(11, "test/dp");
  const auto x = spec_batch(c, 2, rng);
  EXPECT_TRUE(bit_equal(m.forward(V(x)).value(), m.forward(V(x), false, nullptr).value()));
  EXPECT_THROW(m.forward(V(x), true, nullptr), ContractError);
}

TEST(Model, SetParamChecksShape) {
  Model<double> m(nano(), 0);
  EXPECT_THROW(m.set_param("head.weight", Tensor<double>({2, 2})), DimensionError);
  EXPECT_THROW(m.param("no.such"), ContractError);
}

}  // namespace
}  // namespace arwkv
