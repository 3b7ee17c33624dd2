// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "arwkv/bench.hpp"
#include "arwkv/data.hpp"
#include "arwkv/model_config.hpp"
#include "arwkv/training.hpp"

namespace arwkv::cli {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNonFinite = 3;

/// --data accepts either `synthetic:key=value,...` or manifest paths
/// `train.tsv[,val.tsv]`. Synthetic keys are those of parse_synthetic_spec
/// plus n_train and n_val; classes and input dims default to the model's.
struct DataSource {
  std::string text;
  bool synthetic = false;
  SyntheticTaskSpec task;
  Index n_train = 2000;
  Index n_val = 500;
  std::filesystem::path train_manifest, val_manifest;
};

DataSource parse_data_arg(const std::string& text, const ModelConfig& cfg);

struct LoadedData {
  Dataset train;
  std::optional<Dataset> val;
};
LoadedData load_data(const DataSource& src);

struct TrainArgs {
  std::string config;
  std::string recipe;  // empty = defaults
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
};

/// Writes metrics.csv, final.ckpt, best.ckpt (when validating) and the
/// resolved config.snapshot / recipe.snapshot / data.snapshot into `out`.
int cmd_train(const TrainArgs& args, std::ostream& log, std::ostream& err);

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;  // optional; writes eval.csv
};
int cmd_eval(const EvalArgs& args, std::ostream& log, std::ostream& err);

struct BenchArgs {
  std::vector<Index> lengths;  // empty = 2^4 .. 2^13
  Index channels = 192;
  Index batch = 1;
  int reps = 5;
  std::vector<std::string> operators;  // empty = all four
  std::string out;
  std::int64_t mem_budget_bytes = 0;
  std::uint64_t seed = 0;
};
int cmd_bench(const BenchArgs& args, std::ostream& log, std::ostream& err);

/// Ablation ladder:
///   A causal, 1D shift, no cutmix   B + cutmix   C + bidirectional (average)
///   D + weighted gate               E + qshift   F + convshift
ModelConfig variant_config(const ModelConfig& base, char variant);
TrainRecipe variant_recipe(const TrainRecipe& base, char variant);
std::string variant_label(char variant);

struct AblationRow {
  char variant = 'A';
  std::string label;
  ModelConfig config;
  Index params = 0;
  Index steps = 0;
  double final_accuracy = 0;
  double best_accuracy = 0;
  std::uint64_t data_hash = 0;
};

std::vector<std::string> ablation_schema();
std::vector<std::string> ablation_fields(const AblationRow& row);

/// Trains the requested variants (all six when empty) on identical data and seeds.
std::vector<AblationRow> run_ablation(const ModelConfig& base, const TrainRecipe& recipe, const LoadedData& data,
                                      const std::string& variants, std::ostream& log);

struct AblateArgs {
  std::string config;
  std::string recipe;
  std::string data;
  std::string out;
  std::string variants;  // e.g. "AC"; empty = all
  std::optional<std::uint64_t> seed;
};
int cmd_ablate(const AblateArgs& args, std::ostream& log, std::ostream& err);

struct GradcheckRow {
  std::string scope;
  std::string name;
  double max_rel_err = 0;
  double tol = 0;
  bool pass = false;
  std::string failure;
};

/// f64 central-difference suites: "ops" at 1e-6, "kernel" at 1e-4, "model" at 1e-3.
std::vector<GradcheckRow> gradcheck_suite(const std::string& scope, std::uint64_t seed = 0);

struct GradcheckArgs {
  std::string scope = "all";  // ops | kernel | model | all
  std::uint64_t seed = 0;
};
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& log, std::ostream& err);

}  // namespace arwkv::cli
