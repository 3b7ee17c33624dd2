// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "arwkv/errors.hpp"
#include "arwkv/ops.hpp"

namespace arwkv {

// ---------------------------------------------------------------------------
// Recipe

TrainRecipe TrainRecipe::resolved() const {
  TrainRecipe r = *this;
  auto require = [](bool ok, const char* field, const std::string& why) {
    if (!ok) throw ConfigError("invalid field '" + std::string(field) + "': " + why);
  };
  require(r.total_steps >= 1, "total_steps", "must be >= 1");
  if (r.warmup_steps < 0) r.warmup_steps = static_cast<Index>(std::llround(0.05 * static_cast<double>(r.total_steps)));
  if (r.min_lr < 0) r.min_lr = r.base_lr / 100.0;
  require(r.base_lr > 0, "base_lr", "must be positive");
  require(r.min_lr <= r.base_lr, "min_lr", "must not exceed base_lr");
  require(r.beta1 >= 0 && r.beta1 < 1, "beta1", "must be in [0, 1)");
  require(r.beta2 >= 0 && r.beta2 < 1, "beta2", "must be in [0, 1)");
  require(r.adam_eps > 0, "adam_eps", "must be positive");
  require(r.weight_decay >= 0, "weight_decay", "must be >= 0");
  require(r.batch_size >= 1, "batch_size", "must be >= 1");
  require(r.accum_steps >= 1, "accum_steps", "must be >= 1");
  require(r.warmup_steps <= r.total_steps, "warmup_steps", "must not exceed total_steps");
  require(!r.mixup || r.mixup_alpha > 0, "mixup_alpha", "must be positive");
  require(!r.cutmix || r.cutmix_alpha > 0, "cutmix_alpha", "must be positive");
  require(r.label_smoothing >= 0 && r.label_smoothing < 1, "label_smoothing", "must be in [0, 1)");
  require(r.drop_path_rate < 1, "drop_path_rate", "must be below 1");
  require(r.eval_every >= 0, "eval_every", "must be >= 0");
  require(r.eval_batch_size >= 1, "eval_batch_size", "must be >= 1");
  require(r.early_stop_accuracy >= 0 && r.early_stop_accuracy <= 1, "early_stop_accuracy", "must be in [0, 1]");
  return r;
}

std::string serialize_recipe(const TrainRecipe& r) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return format_kv({
      {"recipe_version", std::to_string(TrainRecipe::kVersion)},
      {"base_lr", format_double(r.base_lr)},
      {"beta1", format_double(r.beta1)},
      {"beta2", format_double(r.beta2)},
      {"adam_eps", format_double(r.adam_eps)},
      {"weight_decay", format_double(r.weight_decay)},
      {"batch_size", std::to_string(r.batch_size)},
      {"accum_steps", std::to_string(r.accum_steps)},
      {"total_steps", std::to_string(r.total_steps)},
      {"warmup_steps", std::to_string(r.warmup_steps)},
      {"min_lr", format_double(r.min_lr)},
      {"mixup", b(r.mixup)},
      {"mixup_alpha", format_double(r.mixup_alpha)},
      {"cutmix", b(r.cutmix)},
      {"cutmix_alpha", format_double(r.cutmix_alpha)},
      {"label_smoothing", format_double(r.label_smoothing)},
      {"drop_path_rate", format_double(r.drop_path_rate)},
      {"seed", std::to_string(r.seed)},
      {"eval_every", std::to_string(r.eval_every)},
      {"eval_batch_size", std::to_string(r.eval_batch_size)},
      {"early_stop_accuracy", format_double(r.early_stop_accuracy)},
      {"precision", r.use_f64 ? "f64" : "f32"},
  });
}

TrainRecipe parse_recipe(const KeyValueFile& kv) {
  TrainRecipe r;
  if (kv.has("recipe_version") && kv.get_int("recipe_version") != TrainRecipe::kVersion)
    throw ConfigError(kv.origin() + ": unsupported recipe_version");
  auto num = [&](const char* key, double& dst) {
    if (kv.has(key)) dst = kv.get_double(key);
  };
  auto integer = [&](const char* key, Index& dst) {
    if (kv.has(key)) dst = kv.get_int(key);
  };
  auto flag = [&](const char* key, bool& dst) {
    if (kv.has(key)) dst = kv.get_bool(key);
  };
  num("base_lr", r.base_lr);
  num("beta1", r.beta1);
  num("beta2", r.beta2);
  num("adam_eps", r.adam_eps);
  num("weight_decay", r.weight_decay);
  integer("batch_size", r.batch_size);
  integer("accum_steps", r.accum_steps);
  integer("total_steps", r.total_steps);
  integer("warmup_steps", r.warmup_steps);
  num("min_lr", r.min_lr);
  flag("mixup", r.mixup);
  num("mixup_alpha", r.mixup_alpha);
  flag("cutmix", r.cutmix);
  num("cutmix_alpha", r.cutmix_alpha);
  num("label_smoothing", r.label_smoothing);
  num("drop_path_rate", r.drop_path_rate);
  if (kv.has("seed")) {
    const long long s = kv.get_int("seed");
    if (s < 0) throw ConfigError(kv.origin() + ": invalid field 'seed': must be >= 0");
    r.seed = static_cast<std::uint64_t>(s);
  }
  integer("eval_every", r.eval_every);
  integer("eval_batch_size", r.eval_batch_size);
  num("early_stop_accuracy", r.early_stop_accuracy);
  if (kv.has("precision")) {
    const std::string p = kv.get_string("precision");
    if (p != "f32" && p != "f64") throw ConfigError(kv.origin() + ": invalid field 'precision': expected f32|f64");
    r.use_f64 = p == "f64";
  }
  if (const auto unused = kv.unused_keys(); !unused.empty())
    throw ConfigError(kv.origin() + ": unknown field '" + unused.front() + "'");
  return r.resolved();
}

TrainRecipe parse_recipe_text(std::string_view text) { return parse_recipe(KeyValueFile::parse(text, "<recipe>")); }

TrainRecipe load_recipe(const std::filesystem::path& path) { return parse_recipe(KeyValueFile::load(path)); }

double lr_at(Index step, const TrainRecipe& r) {
  if (step < 0) throw ContractError("lr_at: negative step");
  if (step < r.warmup_steps) return r.base_lr * static_cast<double>(step) / static_cast<double>(r.warmup_steps);
  if (step >= r.total_steps) return r.min_lr;
  const double progress =
      static_cast<double>(step - r.warmup_steps) / static_cast<double>(r.total_steps - r.warmup_steps);
  return r.min_lr + 0.5 * (r.base_lr - r.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// AdamW

template <typename T>
void adamw_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, Index step, double lr,
                  const AdamWHyper& h, bool decay) {
  if (step < 1) throw ContractError("adamw step index must be >= 1");
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape())
    throw DimensionError("adamw: parameter, gradient and moment shapes differ");
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  const bool shrink = decay && h.weight_decay != 0.0;
  for (Index i = 0; i < param.numel(); ++i) {
    double theta = param[i];
    if (shrink) theta -= lr * h.weight_decay * theta;
    const double g = grad[i];
    const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    theta -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + h.eps);
    param[i] = static_cast<T>(theta);
  }
}

bool decays(const std::string& name, const Shape& shape) {
  if (shape.size() < 2) return false;
  if (name == "pos_embed") return false;
  return name.find("shift_kernel") == std::string::npos;
}

template <typename T>
AdamW<T>::AdamW(std::vector<std::pair<std::string, Var<T>>> params, AdamWHyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
  for (const auto& [name, v] : params_) {
    decay_.push_back(decays(name, v.shape()));
    m_.emplace_back(v.shape());
    v_.emplace_back(v.shape());
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  for (const auto& [name, v] : params_)
    if (v.has_grad() && !v.grad_ref().all_finite())
      throw NumericError("non-finite gradient in parameter '" + name + "'");
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<T>& p = params_[i].second;
    const Tensor<T> g = p.grad();
    adamw_update(p.mutable_value(), g, m_[i], v_[i], step_, lr, hyper_, decay_[i]);
  }
}

// ---------------------------------------------------------------------------
// Augmentation and gradients

template <typename T>
SoftLabelBatch<T> augment_batch(const SoftLabelBatch<T>& batch, const TrainRecipe& r, Rng& rng) {
  SoftLabelBatch<T> out = batch;
  if (r.label_smoothing > 0) out.targets = smooth_labels(out.targets, r.label_smoothing);
  if (!r.mixup && !r.cutmix) return out;
  SoftLabelBatch<T> partner{ops::flip_tensor(out.inputs, 0), ops::flip_tensor(out.targets, 0)};
  const bool use_mixup = r.mixup && (!r.cutmix || rng.bernoulli(0.5));
  return use_mixup ? mixup(out, partner, r.mixup_alpha, rng).batch : cutmix(out, partner, r.cutmix_alpha, rng).batch;
}

template <typename T>
double accumulate_gradients(Model<T>& model, const std::vector<SoftLabelBatch<T>>& micro, bool train, Rng* drop_rng) {
  if (micro.empty()) throw ContractError("accumulate_gradients: no micro-batches");
  model.zero_grad();
  const T scale = T(1) / static_cast<T>(micro.size());
  double total = 0;
  for (const auto& b : micro) {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    const Var<T> logits = model.forward(ops::constant(b.inputs), train, drop_rng);
    const Var<T> loss = ops::soft_cross_entropy(logits, b.targets);
    total += static_cast<double>(loss.value().item());
    tape.backward(ops::affine(loss, scale, T(0)));
  }
  return total / static_cast<double>(micro.size());
}

template <typename T>
double grad_norm(const Model<T>& model) {
  double sq = 0;
  for (const auto& [name, v] : model.parameters()) {
    if (!v.has_grad()) continue;
    const Tensor<T>& g = v.grad_ref();
    for (Index i = 0; i < g.numel(); ++i) sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  return std::sqrt(sq);
}

template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& ds, Index batch_size) {
  if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
  NoGradScope<T> no_grad;
  EvalResult res;
  Index correct = 0;
  const Index k = ds.num_classes;
  for (Index start = 0; start < ds.size(); start += batch_size) {
    std::vector<Index> idx;
    for (Index i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
    const SoftLabelBatch<T> b = make_batch<T>(ds, idx);
    const Var<T> logits = model.forward(ops::constant(b.inputs), false, nullptr);
    res.loss += static_cast<double>(ops::soft_cross_entropy(logits, b.targets).value().item()) *
                static_cast<double>(idx.size());
    const Tensor<T>& lv = logits.value();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Index arg = 0;
      for (Index c = 1; c < k; ++c)
        if (lv[static_cast<Index>(i) * k + c] > lv[static_cast<Index>(i) * k + arg]) arg = c;
      if (arg == ds.primary_label(idx[i])) ++correct;
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  res.loss /= static_cast<double>(ds.size());
  return res;
}

// ---------------------------------------------------------------------------
// Loop

std::vector<std::string> metrics_schema() {
  return {"step", "kind", "lr", "loss", "grad_norm", "wall_ms", "split", "accuracy"};
}

std::vector<std::string> metrics_fields(const MetricsRow& row) {
  auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  return {std::to_string(row.step), row.kind,           num(row.lr),      num(row.loss),
          num(row.grad_norm),       num(row.wall_ms),   row.split,        num(row.accuracy)};
}

template <typename T>
TrainHistory train_loop(Model<T>& model, const Dataset& train, const Dataset* val, const TrainRecipe& recipe_in,
                        const TrainHooks<T>& hooks) {
  const TrainRecipe r = recipe_in.resolved();
  if (train.size() == 0) throw ContractError("train_loop: empty training set");
  if (train.num_classes != model.config().num_classes)
    throw ConfigError("dataset has " + std::to_string(train.num_classes) + " classes, model expects " +
                      std::to_string(model.config().num_classes));
  if (r.drop_path_rate >= 0) model.set_drop_path_rate(r.drop_path_rate);

  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  using Clock = std::chrono::steady_clock;
  const auto ms_since = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  TrainHistory hist;
  hist.data_hash = 0xcbf29ce484222325ull;
  auto emit = [&](const MetricsRow& row) {
    hist.rows.push_back(row);
    if (hooks.on_row) hooks.on_row(row);
  };

  AdamW<T> opt(model.parameters(), AdamWHyper{r.beta1, r.beta2, r.adam_eps, r.weight_decay});
  BatchIterator batches(train.size(), r.batch_size, r.seed);
  Rng aug_rng(r.seed, "augment");
  Rng drop_rng(r.seed, "drop_path");
  Index epoch = 0;
  std::vector<Batch> current = batches.epoch(epoch);
  std::size_t cursor = 0;

  auto next_indices = [&]() {
    if (cursor == current.size()) {
      current = batches.epoch(++epoch);
      cursor = 0;
    }
    const auto& idx = current[cursor++].indices;
    for (Index i : idx) {
      hist.data_hash ^= static_cast<std::uint64_t>(i);
      hist.data_hash *= 0x100000001b3ull;
    }
    return idx;
  };

  auto run_eval = [&](Index step) -> bool {
    const auto t0 = Clock::now();
    const EvalResult ev = evaluate(model, *val, r.eval_batch_size);
    emit(MetricsRow{step, "eval", kNaN, ev.loss, kNaN, ms_since(t0), "val", ev.accuracy});
    hist.final_accuracy = ev.accuracy;
    if (ev.accuracy > hist.best_accuracy) {
      hist.best_accuracy = ev.accuracy;
      hist.best_step = step;
      if (hooks.on_best) hooks.on_best(model, step, ev.accuracy);
    }
    return r.early_stop_accuracy > 0 && ev.accuracy >= r.early_stop_accuracy;
  };

  for (Index step = 1; step <= r.total_steps; ++step) {
    const auto t0 = Clock::now();
    std::vector<SoftLabelBatch<T>> micro;
    for (Index a = 0; a < r.accum_steps; ++a)
      micro.push_back(augment_batch(make_batch<T>(train, next_indices()), r, aug_rng));
    double loss = 0, gnorm = 0;
    const double lr = lr_at(step, r);
    try {
      loss = accumulate_gradients(model, micro, true, &drop_rng);
      gnorm = grad_norm(model);
      if (!std::isfinite(loss) || !std::isfinite(gnorm)) throw NumericError("non-finite loss or gradient norm");
      opt.step(lr);
    } catch (const NumericError& e) {
      hist.status = TrainStatus::NonFinite;
      hist.failure = "step " + std::to_string(step) + ": " + e.what();
      model.zero_grad();
      return hist;
    }
    hist.steps_run = step;
    emit(MetricsRow{step, "train", lr, loss, gnorm, ms_since(t0), "train", kNaN});
    if (val && r.eval_every > 0 && (step % r.eval_every == 0 || step == r.total_steps) && run_eval(step)) {
      hist.status = TrainStatus::EarlyStopped;
      break;
    }
  }
  if (val && r.eval_every == 0) run_eval(hist.steps_run);
  model.zero_grad();
  return hist;
}

#define ARWKV_INSTANTIATE_TRAIN(T)                                                                             \
  template void adamw_update<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, Index, double,           \
                                const AdamWHyper&, bool);                                                      \
  template class AdamW<T>;                                                                                     \
  template SoftLabelBatch<T> augment_batch<T>(const SoftLabelBatch<T>&, const TrainRecipe&, Rng&);             \
  template double accumulate_gradients<T>(Model<T>&, const std::vector<SoftLabelBatch<T>>&, bool, Rng*);      \
  template double grad_norm<T>(const Model<T>&);                                                               \
  template EvalResult evaluate<T>(const Model<T>&, const Dataset&, Index);                                     \
  template TrainHistory train_loop<T>(Model<T>&, const Dataset&, const Dataset*, const TrainRecipe&,           \
                                      const TrainHooks<T>&);

ARWKV_INSTANTIATE_TRAIN(float)
ARWKV_INSTANTIATE_TRAIN(double)

#undef ARWKV_INSTANTIATE_TRAIN

}  // namespace arwkv
