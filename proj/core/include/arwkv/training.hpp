// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "arwkv/data.hpp"
#include "arwkv/kv_file.hpp"
#include "arwkv/model.hpp"
#include "arwkv/regularization.hpp"
#include "arwkv/rng.hpp"

namespace arwkv {

/// Optimizer, schedule and augmentation settings. Every key is optional in
/// the recipe file; warmup_steps defaults to 5% of total_steps and min_lr to
/// base_lr / 100. A negative drop_path_rate keeps the model config's rate.
struct TrainRecipe {
  static constexpr int kVersion = 1;

  double base_lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;  // matrices only
  Index batch_size = 32;
  Index accum_steps = 1;
  Index total_steps = 1000;
  Index warmup_steps = -1;
  double min_lr = -1;
  bool mixup = true;
  double mixup_alpha = 1.0;
  bool cutmix = true;
  double cutmix_alpha = 0.8;
  double label_smoothing = 0.1;
  double drop_path_rate = -1;
  std::uint64_t seed = 0;
  Index eval_every = 100;
  Index eval_batch_size = 64;
  /// Stop once validation accuracy reaches this value (0 disables).
  double early_stop_accuracy = 0.0;
  bool use_f64 = false;

  /// Fills the derived defaults and validates. Throws ConfigError naming the field.
  TrainRecipe resolved() const;
};

std::string serialize_recipe(const TrainRecipe& r);
TrainRecipe parse_recipe(const KeyValueFile& kv);
TrainRecipe parse_recipe_text(std::string_view text);
TrainRecipe load_recipe(const std::filesystem::path& path);

/// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay to
/// min_lr at total_steps. Steps past the end clamp to min_lr.
double lr_at(Index step, const TrainRecipe& r);

struct AdamWHyper {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
};

/// One decoupled-decay Adam update of a single tensor, step >= 1:
///   theta -= lr * wd * theta  (when decay)
///   m, v  <- moment updates;  theta -= lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
void adamw_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, Index step, double lr,
                  const AdamWHyper& h, bool decay);

/// Weight decay applies to matrix-shaped weights: rank >= 2 and not the
/// positional table or a depthwise shift kernel.
bool decays(const std::string& name, const Shape& shape);

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Var<T>>> params, AdamWHyper hyper);

  /// Checks every gradient first; a non-finite gradient throws NumericError
  /// naming the parameter and leaves all state untouched.
  void step(double lr);
  Index steps_taken() const { return step_; }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<bool> decay_;
  std::vector<Tensor<T>> m_, v_;
  AdamWHyper hyper_;
  Index step_ = 0;
};

/// Label smoothing, then one of mixup / cutmix against the batch in reverse
/// order. With both enabled a fair coin picks one per batch.
template <typename T>
SoftLabelBatch<T> augment_batch(const SoftLabelBatch<T>& batch, const TrainRecipe& r, Rng& rng);

/// Runs forward/backward over the micro-batches, each loss scaled by
/// 1 / micro.size(), accumulating into the parameter gradients (which are
/// zeroed first). Returns the mean loss.
template <typename T>
double accumulate_gradients(Model<T>& model, const std::vector<SoftLabelBatch<T>>& micro, bool train, Rng* drop_rng);

template <typename T>
double grad_norm(const Model<T>& model);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& ds, Index batch_size = 64);

/// One CSV metrics row. Fields that do not apply to a row kind are NaN and
/// written empty.
struct MetricsRow {
  Index step = 0;
  std::string kind;  // "train" or "eval"
  double lr = 0, loss = 0, grad_norm = 0, wall_ms = 0;
  std::string split;
  double accuracy = 0;
};

std::vector<std::string> metrics_schema();
std::vector<std::string> metrics_fields(const MetricsRow& row);

enum class TrainStatus { Completed, EarlyStopped, NonFinite };

struct TrainHistory {
  std::vector<MetricsRow> rows;
  TrainStatus status = TrainStatus::Completed;
  std::string failure;
  Index steps_run = 0;
  double best_accuracy = -1;
  Index best_step = 0;
  double final_accuracy = -1;
  /// FNV-1a over the sequence of sample indices fed to training.
  std::uint64_t data_hash = 0;
};

template <typename T>
struct TrainHooks {
  std::function<void(const MetricsRow&)> on_row;
  /// Called after an evaluation that improved the best accuracy.
  std::function<void(const Model<T>&, Index step, double accuracy)> on_best;
};

/// Deterministic given the recipe seed. Stops early on early_stop_accuracy.
/// A non-finite loss or gradient halts with status NonFinite, leaving the
/// parameters at their last finite values.
template <typename T>
TrainHistory train_loop(Model<T>& model, const Dataset& train, const Dataset* val, const TrainRecipe& recipe,
                        const TrainHooks<T>& hooks = {});

}  // namespace arwkv
