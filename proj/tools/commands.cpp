// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "arwkv/checkpoint.hpp"
#include "arwkv/csv.hpp"
#include "arwkv/errors.hpp"
#include "arwkv/kv_file.hpp"

namespace fs = std::filesystem;

namespace arwkv::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

}  // namespace

DataSource parse_data_arg(const std::string& text, const ModelConfig& cfg) {
  DataSource src;
  src.text = text;
  if (text.empty()) throw ConfigError("--data is required");
  const std::string prefix = "synthetic:";
  if (text.rfind(prefix, 0) == 0) {
    src.synthetic = true;
    std::string task_items;
    bool has_classes = false, has_mels = false, has_frames = false;
    for (const auto& item : split_commas(text.substr(prefix.size()))) {
      const auto eq = item.find('=');
      const std::string key = item.substr(0, eq);
      if (eq != std::string::npos && (key == "n_train" || key == "n_val")) {
        try {
          (key == "n_train" ? src.n_train : src.n_val) = std::stoll(item.substr(eq + 1));
        } catch (const std::exception&) {
          throw ConfigError("synthetic spec '" + key + "' needs an integer");
        }
        continue;
      }
      has_classes |= key == "classes";
      has_mels |= key == "n_mels";
      has_frames |= key == "n_frames";
      if (!task_items.empty()) task_items += ',';
      task_items += item;
    }
    if (!has_classes) task_items += (task_items.empty() ? "" : ",") + std::string("classes=") + std::to_string(cfg.num_classes);
    if (!has_mels) task_items += ",n_mels=" + std::to_string(cfg.n_mels);
    if (!has_frames) task_items += ",n_frames=" + std::to_string(cfg.n_frames);
    src.task = parse_synthetic_spec(task_items);
    if (src.n_train < 1) throw ConfigError("synthetic spec 'n_train' must be >= 1");
    if (src.n_val < 0) throw ConfigError("synthetic spec 'n_val' must be >= 0");
    return src;
  }
  const auto parts = split_commas(text);
  if (parts.empty() || parts.size() > 2) throw ConfigError("--data expects 'train.tsv[,val.tsv]' or 'synthetic:...'");
  src.train_manifest = parts[0];
  if (parts.size() == 2) src.val_manifest = parts[1];
  return src;
}

LoadedData load_data(const DataSource& src) {
  LoadedData d;
  if (src.synthetic) {
    d.train = gen_synthetic(src.task, src.n_train, "train");
    if (src.n_val > 0) d.val = gen_synthetic(src.task, src.n_val, "val");
    return d;
  }
  d.train = load_dataset(load_manifest(src.train_manifest));
  if (!src.val_manifest.empty()) d.val = load_dataset(load_manifest(src.val_manifest));
  return d;
}

// ---------------------------------------------------------------------------
// train

namespace {

template <typename T>
int train_typed(const ModelConfig& cfg, const TrainRecipe& recipe, const LoadedData& data, const fs::path& out,
                std::ostream& log, std::ostream& err) {
  Model<T> model(cfg, recipe.seed);
  CsvWriter metrics(out / "metrics.csv", metrics_schema());
  TrainHooks<T> hooks;
  hooks.on_row = [&](const MetricsRow& row) {
    metrics.write(metrics_fields(row));
    if (row.kind == "eval")
      log << "step " << row.step << "  val_acc " << format_double(row.accuracy) << "  val_loss "
          << format_double(row.loss) << '\n';
  };
  hooks.on_best = [&](const Model<T>& m, Index, double) { save_model(m, out / "best.ckpt"); };
  const TrainHistory hist = train_loop(model, data.train, data.val ? &*data.val : nullptr, recipe, hooks);
  save_model(model, out / "final.ckpt");
  if (hist.status == TrainStatus::NonFinite) {
    err << "error: training halted: " << hist.failure << "; final.ckpt holds the last finite parameters\n";
    return kExitNonFinite;
  }
  log << "trained " << hist.steps_run << " steps";
  if (hist.final_accuracy >= 0) log << ", final val_acc " << format_double(hist.final_accuracy);
  log << '\n';
  return kExitOk;
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& log, std::ostream& err) {
  ModelConfig cfg;
  TrainRecipe recipe;
  DataSource src;
  LoadedData data;
  fs::path out;
  try {
    if (args.config.empty()) throw ConfigError("--config is required");
    cfg = load_config(args.config);
    recipe = args.recipe.empty() ? TrainRecipe{}.resolved() : load_recipe(args.recipe);
    if (args.seed) recipe.seed = *args.seed;
    src = parse_data_arg(args.data, cfg);
    data = load_data(src);
    out = prepare_out(args.out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  try {
    write_text(out / "config.snapshot", serialize_config(cfg));
    write_text(out / "recipe.snapshot", serialize_recipe(recipe));
    write_text(out / "data.snapshot", src.text + "\n");
    return recipe.use_f64 ? train_typed<double>(cfg, recipe, data, out, log, err)
                          : train_typed<float>(cfg, recipe, data, out, log, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const EvalArgs& args, std::ostream& log, std::ostream& err) {
  try {
    if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    const Model<float> model = load_model<float>(args.checkpoint);
    const LoadedData data = load_data(parse_data_arg(args.data, model.config()));
    const Dataset& ds = data.val ? *data.val : data.train;
    const EvalResult res = evaluate(model, ds);
    log << "accuracy " << format_double(res.accuracy) << "  loss " << format_double(res.loss) << "  samples "
        << ds.size() << '\n';
    if (!args.out.empty()) {
      const fs::path out = prepare_out(args.out);
      emit_csv({{args.checkpoint, std::to_string(ds.size()), format_double(res.accuracy), format_double(res.loss)}},
               {"checkpoint", "samples", "accuracy", "loss"}, out / "eval.csv");
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// bench

int cmd_bench(const BenchArgs& args, std::ostream& log, std::ostream& err) {
  try {
    BenchOptions opts;
    opts.lengths = args.lengths.empty() ? BenchOptions::default_lengths() : args.lengths;
    opts.channels = args.channels;
    opts.batch = args.batch;
    opts.reps = args.reps;
    opts.mem_budget_bytes = args.mem_budget_bytes;
    opts.seed = args.seed;
    if (!args.operators.empty()) {
      opts.operators.clear();
      for (const auto& o : args.operators) opts.operators.push_back(parse_bench_operator(o));
    }
    opts.validate();
    const fs::path out = prepare_out(args.out);
    CsvWriter csv(out / "bench.csv", bench_schema());
    const auto points = run_bench(opts, [&](const BenchPoint& p) {
      csv.write(bench_fields(p));
      log << std::left << std::setw(18) << to_string(p.op) << " L=" << std::setw(6) << p.seq_len << ' '
          << (p.status == "ok" ? format_double(p.wall_ms) + " ms" : p.status) << '\n';
    });
    for (BenchOperator op : opts.operators) {
      try {
        log << "log-log slope " << to_string(op) << " (top 4): " << format_double(loglog_slope(points, op, 4)) << '\n';
      } catch (const ContractError&) {
        log << "log-log slope " << to_string(op) << ": not enough points\n";
      }
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// ablate

ModelConfig variant_config(const ModelConfig& base, char v) {
  if (v < 'A' || v > 'F') throw ConfigError(std::string("unknown ablation variant '") + v + "'");
  ModelConfig c = base;
  c.scan = v <= 'B' ? ScanKind::Causal : ScanKind::Bidirectional;
  c.fusion = v <= 'C' ? FusionKind::Average : FusionKind::WeightedGate;
  c.token_shift = v <= 'D' ? TokenShift::Original1D : v == 'E' ? TokenShift::QShift : TokenShift::ConvShift;
  c.validate();
  return c;
}

TrainRecipe variant_recipe(const TrainRecipe& base, char v) {
  if (v < 'A' || v > 'F') throw ConfigError(std::string("unknown ablation variant '") + v + "'");
  TrainRecipe r = base;
  if (v == 'A') r.cutmix = false;
  return r;
}

std::string variant_label(char v) {
  static const std::map<char, std::string> labels{{'A', "causal"},        {'B', "+cutmix"},  {'C', "+bi_scan"},
                                                  {'D', "+weighted_gate"}, {'E', "+qshift"},  {'F', "+convshift"}};
  return labels.at(v);
}

std::vector<std::string> ablation_schema() {
  return {"variant",  "label",          "scan",          "fusion",        "token_shift", "cutmix",
          "params",   "steps",          "val_accuracy",  "best_accuracy", "data_hash"};
}

std::vector<std::string> ablation_fields(const AblationRow& r) {
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << r.data_hash;
  return {std::string(1, r.variant),
          r.label,
          std::string(to_string(r.config.scan)),
          r.config.scan == ScanKind::Causal ? "-" : std::string(to_string(r.config.fusion)),
          std::string(to_string(r.config.token_shift)),
          r.variant == 'A' ? "false" : "true",
          std::to_string(r.params),
          std::to_string(r.steps),
          format_double(r.final_accuracy),
          format_double(r.best_accuracy),
          hash.str()};
}

std::vector<AblationRow> run_ablation(const ModelConfig& base, const TrainRecipe& recipe, const LoadedData& data,
                                      const std::string& variants, std::ostream& log) {
  const std::string which = variants.empty() ? "ABCDEF" : variants;
  std::vector<AblationRow> rows;
  for (char v : which) {
    AblationRow row;
    row.variant = v;
    row.label = variant_label(v);
    row.config = variant_config(base, v);
    const TrainRecipe r = variant_recipe(recipe, v);
    Model<float> model(row.config, r.seed);
    row.params = model.num_parameters();
    const TrainHistory h = train_loop(model, data.train, data.val ? &*data.val : nullptr, r);
    if (h.status == TrainStatus::NonFinite) throw NumericError("variant " + std::string(1, v) + ": " + h.failure);
    row.steps = h.steps_run;
    row.final_accuracy = h.final_accuracy;
    row.best_accuracy = h.best_accuracy;
    row.data_hash = h.data_hash;
    log << "variant " << v << " (" << row.label << "): val_acc " << format_double(row.final_accuracy) << '\n';
    rows.push_back(row);
  }
  return rows;
}

int cmd_ablate(const AblateArgs& args, std::ostream& log, std::ostream& err) {
  ModelConfig cfg;
  TrainRecipe recipe;
  LoadedData data;
  fs::path out;
  try {
    if (args.config.empty()) throw ConfigError("--config is required");
    cfg = load_config(args.config);
    recipe = args.recipe.empty() ? TrainRecipe{}.resolved() : load_recipe(args.recipe);
    if (args.seed) recipe.seed = *args.seed;
    const DataSource src = parse_data_arg(args.data, cfg);
    if (!src.synthetic) throw ConfigError("ablate needs a synthetic task (--data synthetic:...)");
    data = load_data(src);
    if (!data.val) throw ConfigError("ablate needs validation data (n_val > 0)");
    for (char v : args.variants) variant_config(cfg, v);
    out = prepare_out(args.out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  try {
    CsvWriter csv(out / "ablation.csv", ablation_schema());
    for (const auto& row : run_ablation(cfg, recipe, data, args.variants, log)) csv.write(ablation_fields(row));
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& log, std::ostream& err) {
  std::vector<std::string> scopes;
  if (args.scope == "all") {
    scopes = {"ops", "kernel", "model"};
  } else if (args.scope == "ops" || args.scope == "kernel" || args.scope == "model") {
    scopes = {args.scope};
  } else {
    err << "error: --scope must be ops|kernel|model|all, got '" << args.scope << "'\n";
    return kExitConfig;
  }
  bool ok = true;
  log << std::left << std::setw(8) << "scope" << std::setw(28) << "op" << std::setw(14) << "max_rel_err"
      << std::setw(10) << "tol" << "status\n";
  for (const auto& s : scopes) {
    for (const auto& row : gradcheck_suite(s, args.seed)) {
      std::ostringstream e;
      e << std::scientific << std::setprecision(3) << row.max_rel_err;
      std::ostringstream t;
      t << std::scientific << std::setprecision(0) << row.tol;
      log << std::setw(8) << row.scope << std::setw(28) << row.name << std::setw(14) << e.str() << std::setw(10)
          << t.str() << (row.pass ? "ok" : "FAIL") << '\n';
      if (!row.pass) {
        ok = false;
        err << "gradcheck failed: " << row.scope << "/" << row.name << ": " << row.failure << '\n';
      }
    }
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace arwkv::cli
