// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `arwkv_acceptance 1 2 3`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "arwkv/attention.hpp"
#include "arwkv/bench.hpp"
#include "arwkv/checkpoint.hpp"
#include "arwkv/csv.hpp"
#include "arwkv/data.hpp"
#include "arwkv/kv_file.hpp"
#include "arwkv/model_config.hpp"
#include "arwkv/ops.hpp"
#include "arwkv/rng.hpp"
#include "arwkv/wkv.hpp"
#include "commands.hpp"

namespace fs = std::filesystem;
using namespace arwkv;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const fs::path kSource = ARWKV_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "arwkv_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename T>
wkv::WkvStepInputs<T> random_inputs(Index B, Index L, Index H, Index d, Rng& rng) {
  const Shape s{B, L, H, d};
  auto fill = [&](double lo, double hi) {
    Tensor<T> t(s);
    for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return t;
  };
  wkv::WkvStepInputs<T> in;
  in.r = fill(-1, 1);
  in.w = fill(0.3, 0.995);
  in.a = fill(0.02, 0.98);
  in.k_tilde = fill(-1, 1);
  in.v = fill(-1, 1);
  in.kappa_hat = Tensor<T>(s);
  std::vector<double> row(static_cast<std::size_t>(d));
  for (Index r = 0; r < B * L * H; ++r) {
    double n = 0;
    for (auto& x : row) {
      x = rng.normal();
      n += x * x;
    }
    for (Index j = 0; j < d; ++j) in.kappa_hat[r * d + j] = static_cast<T>(row[j] / std::sqrt(n));
  }
  return in;
}

template <typename T>
wkv::WkvVars<T> as_vars(const wkv::WkvStepInputs<T>& in) {
  return {Var<T>(in.r), Var<T>(in.w), Var<T>(in.kappa_hat), Var<T>(in.a), Var<T>(in.k_tilde), Var<T>(in.v)};
}

// ---------------------------------------------------------------------------

Outcome kernel_oracle() {
  const auto t0 = Clock::now();
  Rng rng(1, "acceptance/oracle");
  const Index ds[] = {2, 4, 8}, Ls[] = {1, 3, 17, 64};
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = ds[rng.uniform_int(3)], L = Ls[rng.uniform_int(4)];
    const Index B = 1 + rng.uniform_int(2), H = 1 + rng.uniform_int(2);
    const auto in = random_inputs<float>(B, L, H, d, rng);
    worst = std::max(worst, double(max_abs_diff(wkv::scan_forward(in, wkv::Direction::Forward).out,
                                                wkv::wkv_oracle(in))));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10,
          "50 configs, max abs diff " + fmt(worst) + " (tol 1e-5), " + fmt(secs) + " s (limit 10)"};
}

Outcome causality() {
  Rng rng(2, "acceptance/causality");
  int ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index L = 2 + rng.uniform_int(63), t = rng.uniform_int(L - 1), H = 2, d = 8, row = H * d;
    const auto in = random_inputs<float>(1, L, H, d, rng);
    const auto noise = random_inputs<float>(1, L, H, d, rng);
    auto edited = in;
    for (Index i = (t + 1) * row; i < L * row; ++i) {
      edited.r[i] = noise.r[i];
      edited.w[i] = noise.w[i];
      edited.kappa_hat[i] = noise.kappa_hat[i];
      edited.a[i] = noise.a[i];
      edited.k_tilde[i] = noise.k_tilde[i];
      edited.v[i] = noise.v[i];
    }
    const auto p0 = wkv::scan_forward(in, wkv::Direction::Forward).out;
    const auto p1 = wkv::scan_forward(edited, wkv::Direction::Forward).out;
    ok += std::memcmp(p0.ptr(), p1.ptr(), sizeof(float) * (t + 1) * row) == 0;
  }
  return {ok == 20, std::to_string(ok) + "/20 trials bit-identical on the prefix"};
}

Outcome reversal_identity() {
  Rng rng(3, "acceptance/reversal");
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index L = 1 + rng.uniform_int(40);
    const auto in = random_inputs<float>(2, L, 2, 8, rng);
    Tensor<float> G(in.r.shape()), G_rev;
    for (Index i = 0; i < G.numel(); ++i) G[i] = static_cast<float>(rng.uniform());
    G_rev = ops::flip_tensor(G, 1);
    for (Index i = 0; i < G_rev.numel(); ++i) G_rev[i] = 1.0f - G_rev[i];
    wkv::WkvStepInputs<float> rev{ops::flip_tensor(in.r, 1),       ops::flip_tensor(in.w, 1),
                                  ops::flip_tensor(in.kappa_hat, 1), ops::flip_tensor(in.a, 1),
                                  ops::flip_tensor(in.k_tilde, 1), ops::flip_tensor(in.v, 1)};
    const auto lhs = wkv::bi_wkv(as_vars(rev), Var<float>(G_rev)).value();
    const auto rhs = ops::flip_tensor(wkv::bi_wkv(as_vars(in), Var<float>(G)).value(), 1);
    worst = std::max(worst, double(max_abs_diff(lhs, rhs)));
  }
  return {worst < 1e-5, "20 draws, max abs diff " + fmt(worst) + " (tol 1e-5)"};
}

Outcome spectral_bound() {
  // Precursors pushed through the model's activations: w = exp(-exp(u)),
  // a = sigmoid(u), kappa = normalized Gaussian.
  Rng rng(4, "acceptance/spectral");
  const Index dims[] = {4, 8, 32, 64};
  double worst = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const Index d = dims[draw % 4];
    std::vector<double> w(d), a(d), k(d);
    double n = 0;
    for (Index j = 0; j < d; ++j) {
      w[j] = std::exp(-std::exp(-2 + 4 * rng.uniform()));
      a[j] = 1 / (1 + std::exp(-(-2 + 4 * rng.uniform())));
      k[j] = rng.normal();
      n += k[j] * k[j];
    }
    for (auto& x : k) x /= std::sqrt(n);
    worst = std::max(worst, wkv::spectral_norm(wkv::transition_matrix<double>(w, k, a)));
  }
  return {worst <= 1 + 1e-5, "1000 draws, max spectral norm " + fmt(worst) + " (bound 1 + 1e-5)"};
}

Outcome gradients() {
  const auto t0 = Clock::now();
  std::vector<cli::GradcheckRow> rows;
  for (const char* scope : {"ops", "kernel", "model"})
    for (auto& r : cli::gradcheck_suite(scope, 0)) rows.push_back(std::move(r));
  int failed = 0;
  double worst[3] = {0, 0, 0};
  const char* scopes[3] = {"ops", "kernel", "model"};
  for (const auto& r : rows) {
    failed += !r.pass;
    for (int s = 0; s < 3; ++s)
      if (r.scope == scopes[s]) worst[s] = std::max(worst[s], r.max_rel_err);
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < 300, std::to_string(rows.size() - failed) + "/" + std::to_string(rows.size()) +
                                         " checks; worst rel err ops " + fmt(worst[0]) + " (1e-6), kernel " +
                                         fmt(worst[1]) + " (1e-4), model " + fmt(worst[2]) + " (1e-3); " +
                                         fmt(secs) + " s"};
}

Outcome parameter_budgets() {
  const std::pair<const char*, double> targets[] = {{"T", 6e6}, {"S", 23e6}, {"B", 91e6}};
  bool pass = true;
  std::string detail;
  for (const auto& [name, target] : targets) {
    const double n = double(param_count(ModelConfig::preset(name)));
    const double rel = n / target - 1;
    pass &= std::abs(rel) <= 0.2;
    detail += std::string(detail.empty() ? "" : ", ") + name + " " + fmt(n / 1e6) + "M (" + (rel >= 0 ? "+" : "") +
              fmt(100 * rel) + "%)";
  }
  return {pass, detail + " vs 6M/23M/91M +-20%"};
}

Outcome complexity_shape() {
  const auto t0 = Clock::now();
  BenchOptions o;
  o.lengths = {1024, 2048, 4096, 8192};
  o.channels = 192;
  o.reps = 3;
  o.operators = {BenchOperator::Wkv7, BenchOperator::Attention};
  const auto pts = run_bench(o);
  const double sw = loglog_slope(pts, BenchOperator::Wkv7), sa = loglog_slope(pts, BenchOperator::Attention);
  double tw = 0, ta = 0;
  for (const auto& p : pts)
    if (p.seq_len == 8192) (p.op == BenchOperator::Wkv7 ? tw : ta) = p.wall_ms;
  const double secs = seconds_since(t0);
  const bool pass = sw >= 0.8 && sw <= 1.3 && sa >= 1.7 && tw > 0 && tw < ta && secs < 600;
  return {pass, "slope wkv7 " + fmt(sw) + " (0.8..1.3), attention " + fmt(sa) + " (>= 1.7); at 8192 wkv7 " +
                    fmt(tw) + " ms vs attention " + fmt(ta) + " ms; " + fmt(secs) + " s"};
}

std::vector<CsvRow> read_metrics(const fs::path& p) {
  auto rows = read_csv(p);
  for (auto& r : rows)
    if (r.size() > 5) r[5].clear();  // wall_ms
  return rows;
}

Outcome learnability() {
  const auto t0 = Clock::now();
  const fs::path out = scratch("learnability");
  std::ostringstream log, err;
  const int rc = cli::cmd_train({(kSource / "configs/micro.cfg").string(), (kSource / "configs/micro.recipe").string(),
                                 "synthetic:classes=10,snr_db=10,cue=anywhere,n_train=4000,n_val=500,seed=0",
                                 out.string(), std::uint64_t{0}},
                                log, err);
  if (rc != 0) return {false, "cmd_train exit " + std::to_string(rc) + ": " + err.str()};
  double best = 0;
  long hit = -1;
  const auto rows = read_csv(out / "metrics.csv");
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i][1] == "eval") {
      const double acc = std::stod(rows[i][7]);
      best = std::max(best, acc);
      if (hit < 0 && acc >= 0.9) hit = std::stol(rows[i][0]);
    }
  const double secs = seconds_since(t0);
  return {hit > 0 && hit <= 2000 && secs < 1800,
          "best val acc " + fmt(best) + (hit > 0 ? " (reached 0.9 at step " + std::to_string(hit) + ")" : "") +
              ", " + fmt(secs) + " s (limit 1800)"};
}

Outcome bidirectional_advantage() {
  const ModelConfig base = load_config(kSource / "configs/micro.cfg");
  TrainRecipe recipe = load_recipe(kSource / "configs/ablation.recipe");
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    recipe.seed = seed;
    const auto src = cli::parse_data_arg(
        "synthetic:snr_db=10,cue=early_10pct,n_train=4000,n_val=500,seed=" + std::to_string(seed), base);
    std::ostringstream log;
    const auto rows = cli::run_ablation(base, recipe, cli::load_data(src), "AC", log);
    const double a = rows[0].final_accuracy, c = rows[1].final_accuracy;
    wins += c >= a;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " C " + fmt(c) + " vs A " +
              fmt(a);
    if (rows[0].data_hash != rows[1].data_hash) return {false, "data order differs between variants"};
  }
  return {wins >= 2, std::to_string(wins) + "/3 seeds with C >= A (" + detail + ")"};
}

Outcome determinism() {
  // f32 micro run compared within 1e-6 relative, f64 nano run compared exactly.
  struct Case {
    const char* name;
    std::string config, precision;
    bool exact;
  };
  const Case cases[] = {{"f32", "config_version = 1\npreset = micro\n", "f32", false},
                        {"f64", "config_version = 1\npreset = nano\ndrop_path_rate = 0.2\n", "f64", true}};
  std::string detail;
  bool pass = true;
  for (const auto& c : cases) {
    const fs::path dir = scratch(std::string("determinism_") + c.name);
    std::ofstream(dir / "model.cfg") << c.config;
    std::ofstream(dir / "run.recipe") << "base_lr = 0.002\nbatch_size = 16\ntotal_steps = 30\nwarmup_steps = 5\n"
                                         "eval_every = 10\neval_batch_size = 50\nprecision = "
                                      << c.precision << "\n";
    std::vector<std::vector<CsvRow>> runs;
    for (int r = 0; r < 2; ++r) {
      std::ostringstream log, err;
      const fs::path out = dir / ("run" + std::to_string(r));
      const int rc = cli::cmd_train({(dir / "model.cfg").string(), (dir / "run.recipe").string(),
                                     "synthetic:n_train=200,n_val=50", out.string(), std::uint64_t{11}},
                                    log, err);
      if (rc != 0) return {false, std::string(c.name) + " cmd_train exit " + std::to_string(rc) + ": " + err.str()};
      runs.push_back(read_metrics(out / "metrics.csv"));
    }
    double worst = 0;
    bool same_shape = runs[0].size() == runs[1].size();
    for (std::size_t i = 1; same_shape && i < runs[0].size(); ++i)
      for (std::size_t j = 0; j < runs[0][i].size(); ++j) {
        const auto &x = runs[0][i][j], &y = runs[1][i][j];
        if (x == y) continue;
        if (c.exact) {
          worst = std::numeric_limits<double>::infinity();
          continue;
        }
        try {
          const double a = std::stod(x), b = std::stod(y);
          worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}));
        } catch (const std::exception&) {
          worst = std::numeric_limits<double>::infinity();
        }
      }
    const bool ok = same_shape && (c.exact ? worst == 0 : worst <= 1e-6);
    pass &= ok;
    detail += std::string(detail.empty() ? "" : "; ") + c.name + " " + std::to_string(runs[0].size() - 1) + " rows, " +
              (worst == 0 ? std::string("identical") : "max rel diff " + fmt(worst));
  }
  return {pass, detail};
}

Outcome formats() {
  const fs::path dir = scratch("formats");
  Rng rng(11, "acceptance/formats");
  const float specials[] = {std::numeric_limits<float>::denorm_min(), -std::numeric_limits<float>::denorm_min(),
                            1.1754942e-38f, -2.5e-41f, -0.0f, std::numeric_limits<float>::max(),
                            std::numeric_limits<float>::min()};

  MelSpectrogram spec{128, 1024, std::vector<float>(128 * 1024), "acceptance"};
  for (auto& v : spec.data) v = static_cast<float>(rng.normal() * 20);
  for (std::size_t i = 0; i < std::size(specials); ++i) spec.data[i * 4099] = specials[i];
  write_melf(spec, dir / "s.melf");
  const auto back = read_melf(dir / "s.melf");
  const bool melf_ok = back.n_mels == spec.n_mels && back.n_frames == spec.n_frames &&
                       std::memcmp(back.data.data(), spec.data.data(), spec.data.size() * 4) == 0;

  Model<float> model(ModelConfig::preset("micro"), 5);
  Tensor<float> w = model.param("head.weight").value();
  for (std::size_t i = 0; i < std::size(specials); ++i) w[static_cast<Index>(i)] = specials[i];
  model.set_param("head.weight", w);
  save_model(model, dir / "m.ckpt");
  const auto loaded = load_model<float>(dir / "m.ckpt");
  bool ckpt_ok = loaded.config() == model.config();
  for (const auto& [name, p] : model.parameters()) {
    const auto& q = loaded.param(name).value();
    ckpt_ok &= q.shape() == p.value().shape() &&
               std::memcmp(q.ptr(), p.value().ptr(), sizeof(float) * static_cast<std::size_t>(q.numel())) == 0;
  }
  return {melf_ok && ckpt_ok, std::string("MELF 128x1024 ") + (melf_ok ? "bit-exact" : "MISMATCH") + ", checkpoint " +
                                  std::to_string(model.parameters().size()) + " tensors " +
                                  (ckpt_ok ? "bit-exact" : "MISMATCH") + ", subnormals included"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"kernel oracle equivalence", kernel_oracle},
      {"causality", causality},
      {"bidirectional reversal identity", reversal_identity},
      {"transition spectral bound", spectral_bound},
      {"gradient correctness", gradients},
      {"parameter budgets", parameter_budgets},
      {"complexity shape", complexity_shape},
      {"learnability", learnability},
      {"bidirectional advantage", bidirectional_advantage},
      {"determinism", determinism},
      {"formats", formats},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d  %-32s %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
