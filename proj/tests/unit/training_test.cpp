// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "arwkv/errors.hpp"
#include "arwkv/ops.hpp"
#include "arwkv/regularization.hpp"
#include "arwkv/training.hpp"
#include "test_util.hpp"

namespace arwkv {
namespace {

using testing::uniform;

SoftLabelBatch<double> one_hot_batch(Index B, Index K, Index H, Index W, Rng& rng) {
  SoftLabelBatch<double> b{uniform({B, 1, H, W}, rng), Tensor<double>({B, K})};
  for (Index i = 0; i < B; ++i) b.targets.at({i, static_cast<Index>(rng.uniform_int(K))}) = 1.0;
  return b;
}

TEST(AdamW, FirstStepClosedForm) {
  // Bias correction cancels at step 1: delta = -lr g / (|g| + eps).
  const AdamWHyper h{0.9, 0.999, 1e-8, 0.0};
  for (double g : {0.3, -2.0, 1e-3}) {
    Tensor<double> p({1}, 1.5), grad({1}, g), m({1}), v({1});
    adamw_update(p, grad, m, v, 1, 0.01, h, false);
    EXPECT_NEAR(p[0], 1.5 - 0.01 * g / (std::abs(g) + 1e-8), 1e-15);
  }
}

TEST(AdamW, DecoupledDecayShrinksBeforeAdamStep) {
  const AdamWHyper h{0.9, 0.999, 1e-8, 0.1};
  Tensor<double> p({1}, 2.0), grad({1}, 0.5), m({1}), v({1});
  adamw_update(p, grad, m, v, 1, 0.01, h, true);
  EXPECT_NEAR(p[0], 2.0 - 0.01 * 0.1 * 2.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(AdamW, ZeroDecayIsAdam) {
  Rng rng(1, "test/adam");
  const AdamWHyper h{0.9, 0.99, 1e-8, 0.0};
  Tensor<double> p = uniform({6}, rng), m({6}), v({6});
  std::vector<double> ref(p.storage()), rm(6, 0), rv(6, 0);
  for (Index step = 1; step <= 10; ++step) {
    const auto g = uniform({6}, rng);
    adamw_update(p, g, m, v, step, 1e-2, h, true);
    for (Index i = 0; i < 6; ++i) {
      rm[i] = 0.9 * rm[i] + 0.1 * g[i];
      rv[i] = 0.99 * rv[i] + 0.01 * g[i] * g[i];
      const double mh = rm[i] / (1 - std::pow(0.9, double(step))), vh = rv[i] / (1 - std::pow(0.99, double(step)));
      ref[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(p[i], ref[i], 1e-14);
}

TEST(AdamW, DecayAppliesToMatricesOnly) {
  EXPECT_TRUE(decays("blocks.0.att.W_r", {8, 8}));
  EXPECT_TRUE(decays("head.weight", {10, 8}));
  EXPECT_FALSE(decays("blocks.0.att.mu_r", {8}));
  EXPECT_FALSE(decays("blocks.0.ln1.bias", {8}));
  EXPECT_FALSE(decays("pos_embed", {1, 12, 8}));
  EXPECT_FALSE(decays("blocks.0.att.shift_kernel", {8, 1, 3, 3}));
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  Var<double> a(Tensor<double>({2}, 1.0), true), b(Tensor<double>({2}, 1.0), true);
  AdamW<double> opt({{"a", a}, {"b", b}}, AdamWHyper{});
  a.accumulate_grad(Tensor<double>({2}, 0.5));
  b.accumulate_grad(Tensor<double>({2}, std::vector<double>{0.1, std::nan("")}));
  EXPECT_THROW(opt.step(0.1), NumericError);
  EXPECT_EQ(a.value()[0], 1.0);
  EXPECT_EQ(opt.steps_taken(), 0);
}

TEST(Schedule, WarmupThenCosine) {
  TrainRecipe r;
  r.base_lr = 1e-3;
  r.min_lr = 1e-5;
  r.total_steps = 1000;
  r.warmup_steps = 100;
  EXPECT_EQ(lr_at(0, r), 0.0);
  EXPECT_NEAR(lr_at(50, r), 5e-4, 1e-15);
  EXPECT_NEAR(lr_at(100, r), 1e-3, 1e-15);
  EXPECT_NEAR(lr_at(550, r), (1e-3 + 1e-5) / 2, 1e-12);
  EXPECT_NEAR(lr_at(1000, r), 1e-5, 1e-15);
  EXPECT_NEAR(lr_at(5000, r), 1e-5, 1e-15);
  for (Index s = 100; s < 1000; ++s) EXPECT_LE(lr_at(s + 1, r), lr_at(s, r));
}

TEST(Recipe, DerivedDefaultsAndRoundTrip) {
  TrainRecipe r;
  r.total_steps = 400;
  const auto res = r.resolved();
  EXPECT_EQ(res.warmup_steps, 20);
  EXPECT_DOUBLE_EQ(res.min_lr, r.base_lr / 100);
  r.mixup = false;
  r.cutmix_alpha = 0.25;
  r.seed = 77;
  const auto back = parse_recipe_text(serialize_recipe(r));
  EXPECT_EQ(serialize_recipe(back), serialize_recipe(r.resolved()));
}

TEST(Recipe, RejectsBadFields) {
  EXPECT_THROW(parse_recipe_text("no_such_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_recipe_text("total_steps = 10\nwarmup_steps = 20\n").resolved(), ConfigError);
  EXPECT_THROW(parse_recipe_text("label_smoothing = 1.5\n").resolved(), ConfigError);
  EXPECT_THROW(parse_recipe_text("batch_size = 0\n").resolved(), ConfigError);
}

TEST(Regularization, SmoothedRowsSumToOne) {
  Rng rng(2, "test/smooth");
  for (Index K : {2, 5, 527})
    for (double eps : {0.0, 0.1, 0.5, 0.9}) {
      auto b = one_hot_batch(4, K, 2, 2, rng);
      const auto q = smooth_labels(b.targets, eps);
      check_soft_targets(q);
      for (Index i = 0; i < 4; ++i)
        for (Index c = 0; c < K; ++c)
          EXPECT_NEAR(q.at({i, c}), b.targets.at({i, c}) == 1.0 ? 1 - eps + eps / K : eps / K, 1e-15);
    }
}

TEST(Regularization, MixupLambdaUniformAtAlphaOne) {
  // Kolmogorov-Smirnov against U(0,1); 1.628 / sqrt(n) is the p = 0.01 critical value.
  Rng rng(3, "test/mixup");
  auto a = one_hot_batch(1, 3, 1, 1, rng), b = one_hot_batch(1, 3, 1, 1, rng);
  const int n = 10000;
  std::vector<double> lam;
  for (int i = 0; i < n; ++i) lam.push_back(mixup(a, b, 1.0, rng).lambda);
  std::sort(lam.begin(), lam.end());
  double D = 0;
  for (int i = 0; i < n; ++i) D = std::max({D, std::abs((i + 1.0) / n - lam[i]), std::abs(lam[i] - double(i) / n)});
  EXPECT_LT(D, 1.628 / std::sqrt(double(n)));
}

TEST(Regularization, MixupIsConvexCombination) {
  Rng rng(4, "test/mixup");
  auto a = one_hot_batch(2, 4, 3, 5, rng), b = one_hot_batch(2, 4, 3, 5, rng);
  const auto m = mixup_with_lambda(a, b, 0.3);
  for (Index i = 0; i < a.inputs.numel(); ++i) EXPECT_NEAR(m.inputs[i], 0.3 * a.inputs[i] + 0.7 * b.inputs[i], 1e-15);
  check_soft_targets(m.targets);
}

TEST(Regularization, CutmixLambdaIsPixelFraction) {
  Rng rng(5, "test/cutmix");
  const Index H = 16, W = 24;
  for (int trial = 0; trial < 50; ++trial) {
    SoftLabelBatch<double> a{Tensor<double>({2, 1, H, W}, 1.0), Tensor<double>({2, 2})};
    SoftLabelBatch<double> b{Tensor<double>({2, 1, H, W}, 0.0), Tensor<double>({2, 2})};
    for (Index i = 0; i < 2; ++i) {
      a.targets.at({i, 0}) = 1;
      b.targets.at({i, 1}) = 1;
    }
    MixResult<double> m;
    if (trial % 2) {
      m = cutmix(a, b, 0.8, rng);
    } else {
      CutBox box;
      box.row0 = rng.uniform_int(H);
      box.row1 = box.row0 + rng.uniform_int(H - box.row0 + 1);
      box.col0 = rng.uniform_int(W);
      box.col1 = box.col0 + rng.uniform_int(W - box.col0 + 1);
      m = cutmix_with_box(a, b, box);
    }
    for (Index s = 0; s < 2; ++s) {
      double from_a = 0;
      for (Index i = 0; i < H * W; ++i) from_a += m.batch.inputs[s * H * W + i];
      EXPECT_NEAR(m.lambda, from_a / (H * W), 1e-12);
      EXPECT_NEAR(m.batch.targets.at({s, 0}), m.lambda, 1e-12);
    }
  }
}

TEST(Regularization, DropPathMonteCarlo) {
  Rng rng(6, "test/droppath");
  const Index n = 10000, depth = 12;
  EXPECT_DOUBLE_EQ(drop_path_rate_at(0.5, depth - 1, depth), 0.5);
  EXPECT_DOUBLE_EQ(drop_path_rate_at(0.5, 0, depth), 0.0);
  const Var<double> branch(Tensor<double>({n, 2, 3}, 1.0));
  const auto y = drop_path(branch, 0.5, depth - 1, depth, true, &rng).value();
  Index dropped = 0;
  for (Index s = 0; s < n; ++s) {
    const double v = y[s * 6];
    for (Index i = 1; i < 6; ++i) ASSERT_EQ(y[s * 6 + i], v);
    ASSERT_TRUE(v == 0.0 || v == 2.0);
    dropped += v == 0.0;
  }
  EXPECT_NEAR(double(dropped) / n, 0.5, 0.03);
  EXPECT_TRUE(bit_equal(drop_path(branch, 0.5, depth - 1, depth, false, nullptr).value(), branch.value()));
}

TEST(Augment, TargetsStayDistributions) {
  Rng rng(7, "test/augment");
  TrainRecipe r;
  for (int mode = 0; mode < 4; ++mode) {
    r.mixup = mode & 1;
    r.cutmix = mode & 2;
    for (int i = 0; i < 10; ++i) {
      const auto out = augment_batch(one_hot_batch(4, 5, 8, 8, rng), r, rng);
      check_soft_targets(out.targets, 1e-12);
      EXPECT_EQ(out.inputs.shape(), (Shape{4, 1, 8, 8}));
    }
  }
}

Dataset tiny_dataset(const ModelConfig& c, Index n, std::uint64_t seed) {
  SyntheticTaskSpec task;
  task.num_classes = c.num_classes;
  task.n_mels = c.n_mels;
  task.n_frames = c.n_frames;
  task.seed = seed;
  return gen_synthetic(task, n);
}

TEST(Training, AccumulationMatchesFullBatch) {
  const ModelConfig c = ModelConfig::preset("nano");
  Model<double> full(c, 1), split(c, 1);
  const Dataset ds = tiny_dataset(c, 4, 0);
  const auto whole = make_batch<double>(ds, {0, 1, 2, 3});
  const double l1 = accumulate_gradients(full, {whole}, false, nullptr);
  const double l2 =
      accumulate_gradients(split, {make_batch<double>(ds, {0, 1}), make_batch<double>(ds, {2, 3})}, false, nullptr);
  EXPECT_NEAR(l1, l2, 1e-12);
  for (std::size_t i = 0; i < full.parameters().size(); ++i)
    EXPECT_LT(max_abs_diff(full.parameters()[i].second.grad(), split.parameters()[i].second.grad()), 1e-12)
        << full.parameters()[i].first;
}

TEST(Training, SingleSampleOverfit) {
  const ModelConfig c = ModelConfig::preset("micro");
  Model<float> m(c, 0);
  const Dataset ds = tiny_dataset(c, 1, 3);
  TrainRecipe r;
  r.base_lr = 2e-3;
  r.batch_size = 1;
  r.total_steps = 500;
  r.warmup_steps = 10;
  r.mixup = r.cutmix = false;
  r.label_smoothing = 0;
  r.weight_decay = 0;
  r.eval_every = 0;
  const auto hist = train_loop(m, ds, nullptr, r);
  ASSERT_EQ(hist.status, TrainStatus::Completed) << hist.failure;
  double best = 1e9;
  for (const auto& row : hist.rows) best = std::min(best, row.loss);
  EXPECT_LT(best, 0.01);
}

TEST(Training, RerunIsBitIdentical) {
  const ModelConfig c = ModelConfig::preset("nano");
  const Dataset train = tiny_dataset(c, 12, 1), val = tiny_dataset(c, 6, 2);
  TrainRecipe r;
  r.base_lr = 1e-3;
  r.batch_size = 4;
  r.total_steps = 8;
  r.eval_every = 4;
  r.drop_path_rate = 0.3;
  auto run = [&] {
    Model<double> m(c, 9);
    return train_loop(m, train, &val, r);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.rows.size(), b.rows.size());
  EXPECT_EQ(a.data_hash, b.data_hash);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    auto fa = metrics_fields(a.rows[i]), fb = metrics_fields(b.rows[i]);
    fa[5] = fb[5] = "";  // wall_ms
    EXPECT_EQ(fa, fb) << "row " << i;
  }
}

TEST(Training, DivergenceStopsWithFiniteParameters) {
  const ModelConfig c = ModelConfig::preset("nano");
  Model<float> m(c, 0);
  const Dataset ds = tiny_dataset(c, 8, 0);
  TrainRecipe r;
  r.base_lr = 1e36;
  r.warmup_steps = 0;
  r.batch_size = 4;
  r.total_steps = 50;
  r.eval_every = 0;
  r.mixup = r.cutmix = false;
  const auto hist = train_loop(m, ds, nullptr, r);
  EXPECT_EQ(hist.status, TrainStatus::NonFinite);
  EXPECT_FALSE(hist.failure.empty());
  for (const auto& [name, p] : m.parameters()) EXPECT_TRUE(p.value().all_finite()) << name;
}

TEST(Training, EarlyStopOnTarget) {
  const ModelConfig c = ModelConfig::preset("nano");
  Model<double> m(c, 0);
  const Dataset ds = tiny_dataset(c, 6, 0);
  TrainRecipe r;
  r.total_steps = 20;
  r.batch_size = 3;
  r.eval_every = 2;
  r.early_stop_accuracy = 1e-9;  // any accuracy above zero
  r.mixup = r.cutmix = false;
  const auto hist = train_loop(m, ds, &ds, r);
  if (hist.best_accuracy > 0) {
    EXPECT_EQ(hist.status, TrainStatus::EarlyStopped);
    EXPECT_EQ(hist.steps_run, 2);
  }
}

TEST(Metrics, SchemaAndEmptyFields) {
  EXPECT_EQ(metrics_schema(), (std::vector<std::string>{"step", "kind", "lr", "loss", "grad_norm", "wall_ms", "split",
                                                         "accuracy"}));
  MetricsRow row{3, "eval", std::nan(""), 0.5, std::nan(""), 1.0, "val", 0.75};
  const auto f = metrics_fields(row);
  EXPECT_EQ(f[0], "3");
  EXPECT_EQ(f[2], "");
  EXPECT_EQ(f[4], "");
  EXPECT_EQ(f[7], "0.75");
}

}  // namespace
}  // namespace arwkv
