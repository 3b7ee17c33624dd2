// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

using namespace arwkv::cli;

int main(int argc, char** argv) {
  CLI::App app{"arwkv: bidirectional WKV7 spectrogram classifier"};
  app.require_subcommand(1);

  TrainArgs train;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  t->add_option("--config", train.config, "Model config file")->required();
  t->add_option("--recipe", train.recipe, "Training recipe file (defaults when omitted)");
  t->add_option("--data", train.data, "Manifest 'train.tsv[,val.tsv]' or 'synthetic:key=value,...'")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  auto* t_seed = t->add_option("--seed", train_seed, "Override the recipe seed");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval.data, "Evaluation data (validation split when present)")->required();
  e->add_option("--out", eval.out, "Optional output directory for eval.csv");

  BenchArgs bench;
  std::vector<long long> lengths;
  auto* b = app.add_subcommand("bench", "Runtime scaling of wkv7 vs naive attention");
  b->add_option("--lengths", lengths, "Ascending sequence lengths (default 16..8192)")->delimiter(',');
  b->add_option("--channels", bench.channels, "Channels C (heads of 64)")->capture_default_str();
  b->add_option("--batch", bench.batch, "Batch size")->capture_default_str();
  b->add_option("--reps", bench.reps, "Timed repetitions per point (>= 3)")->capture_default_str();
  b->add_option("--operators", bench.operators, "wkv7,wkv7_bi,attention,attention_causal")->delimiter(',');
  b->add_option("--mem-budget-bytes", bench.mem_budget_bytes, "Simulated memory budget (0 = none)");
  b->add_option("--seed", bench.seed, "Input seed");
  b->add_option("--out", bench.out, "Output directory")->required();

  AblateArgs ablate;
  std::uint64_t ablate_seed = 0;
  auto* a = app.add_subcommand("ablate", "Train the A-F ablation ladder on a synthetic task");
  a->add_option("--config", ablate.config, "Base model config")->required();
  a->add_option("--recipe", ablate.recipe, "Training recipe");
  a->add_option("--data", ablate.data, "synthetic:key=value,...")->required();
  a->add_option("--out", ablate.out, "Output directory")->required();
  a->add_option("--variant", ablate.variants, "Subset of variants, e.g. AC (default all)");
  auto* a_seed = a->add_option("--seed", ablate_seed, "Override the recipe seed");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks in f64");
  g->add_option("--scope", gc.scope, "ops | kernel | model | all")->capture_default_str();
  g->add_option("--seed", gc.seed, "Input seed");

  CLI11_PARSE(app, argc, argv);

  if (*t) {
    if (*t_seed) train.seed = train_seed;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (*e) return cmd_eval(eval, std::cout, std::cerr);
  if (*b) {
    bench.lengths.assign(lengths.begin(), lengths.end());
    return cmd_bench(bench, std::cout, std::cerr);
  }
  if (*a) {
    if (*a_seed) ablate.seed = ablate_seed;
    return cmd_ablate(ablate, std::cout, std::cerr);
  }
  return cmd_gradcheck(gc, std::cout, std::cerr);
}
