// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "arwkv/errors.hpp"
#include "arwkv/ops.hpp"
#include "arwkv/regularization.hpp"
#include "arwkv/wkv.hpp"

namespace arwkv {

using namespace ops;

template <typename T>
Var<T> patch_embed(const Var<T>& spec, const Var<T>& patch_weight, const Var<T>& patch_bias, const Var<T>& pos,
                   const Var<T>& ln_weight, const Var<T>& ln_bias, Index patch_h, Index patch_w) {
  const Shape& s = spec.shape();
  if (s.size() != 4 || s[1] != 1) throw DimensionError("spectrogram batch must be [B,1,n_mels,n_frames], got " + shape_str(s));
  if (s[2] % patch_h != 0 || s[3] % patch_w != 0)
    throw ConfigError("input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " is not divisible by patch " +
                      std::to_string(patch_h) + "x" + std::to_string(patch_w));
  const Index batch = s[0], rows = s[2] / patch_h, cols = s[3] / patch_w;
  const Index dim = patch_weight.shape()[0];
  if (pos.shape() != Shape{1, rows * cols, dim})
    throw ConfigError("positional table " + shape_str(pos.shape()) + " does not match a " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " patch grid");
  Var<T> x = conv2d(spec, patch_weight, patch_bias, patch_h, patch_w, 0, 0);  // [B,D,rows,cols]
  x = reshape(permute(x, {0, 2, 3, 1}), Shape{batch, rows * cols, dim});
  return layernorm(add(x, pos), ln_weight, ln_bias);
}

namespace {

void check_grid(const Shape& s, const PatchGrid& grid, const char* what) {
  if (s.size() != 3) throw DimensionError(std::string(what) + " expects [B,L,D], got " + shape_str(s));
  if (s[1] != grid.len())
    throw DimensionError(std::string(what) + ": sequence length " + std::to_string(s[1]) + " does not match grid " +
                         std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
}

}  // namespace

template <typename T>
Var<T> conv_shift_residual(const Var<T>& x, const PatchGrid& grid, const Var<T>& kernel) {
  check_grid(x.shape(), grid, "conv_shift_residual");
  const Shape& s = x.shape();
  Var<T> img = permute(reshape(x, Shape{s[0], grid.rows, grid.cols, s[2]}), {0, 3, 1, 2});
  Var<T> res = sub(dwconv2d(img, kernel), img);
  return reshape(permute(res, {0, 2, 3, 1}), s);
}

template <typename T>
Var<T> qshift_residual(const Var<T>& x, const PatchGrid& grid) {
  check_grid(x.shape(), grid, "qshift_residual");
  if (x.shape()[2] % 4 != 0) throw ConfigError("qshift needs embed_dim divisible by 4, got " + std::to_string(x.shape()[2]));
  return sub(quarter_shift(x, grid.rows, grid.cols), x);
}

template <typename T>
Var<T> token_shift_1d(const Var<T>& x) {
  return sub(shift_sequence(x), x);
}

template <typename T>
Var<T> token_shift_residual(const Var<T>& x, const ModelConfig& cfg, const PatchGrid& grid, const Var<T>& kernel) {
  switch (cfg.token_shift) {
    case TokenShift::Original1D:
      return token_shift_1d(x);
    case TokenShift::QShift:
      return qshift_residual(x, grid);
    case TokenShift::ConvShift:
      return conv_shift_residual(x, grid, kernel);
  }
  throw ConfigError("unknown token shift");
}

template <typename T>
Var<T> lerp_params(const Var<T>& x, const Var<T>& x_res, const Var<T>& mu) {
  return add(x, mul(x_res, mu));
}

template <typename T>
Var<T> spatial_mix(const Var<T>& x, const BlockParams<T>& p, const ModelConfig& cfg, const PatchGrid& grid) {
  check_grid(x.shape(), grid, "spatial_mix");
  const Index batch = x.shape()[0], len = x.shape()[1], dim = x.shape()[2];
  const Shape heads{batch, len, cfg.heads(), cfg.head_dim};

  const Var<T> x_res = token_shift_residual(x, cfg, grid, p.shift_kernel);
  const Var<T> xr = lerp_params(x, x_res, p.mu_r);
  const Var<T> xw = lerp_params(x, x_res, p.mu_w);
  const Var<T> xk = lerp_params(x, x_res, p.mu_k);
  const Var<T> xv = lerp_params(x, x_res, p.mu_v);
  const Var<T> xa = lerp_params(x, x_res, p.mu_a);
  const Var<T> xg = lerp_params(x, x_res, p.mu_g);

  const Var<T> r = matmul(xr, p.W_r);
  const Var<T> k = matmul(xk, p.W_k);
  const Var<T> v = matmul(xv, p.W_v);
  const Var<T> w = neg_exp_exp(add(p.lambda_w, matmul(tanh(matmul(xw, p.A_w1)), p.A_w2)));
  const Var<T> a = sigmoid(add(p.lambda_a, matmul(matmul(xa, p.A_a1), p.A_a2)));
  const Var<T> kappa_hat = l2_normalize(reshape(mul(k, p.xi_kappa), heads));
  const Var<T> k_tilde = mul(k, affine(mul(affine(a, T(1), T(-1)), p.zeta), T(1), T(1)));

  wkv::WkvVars<T> in{reshape(r, heads), reshape(w, heads), kappa_hat, reshape(a, heads), reshape(k_tilde, heads),
                     reshape(v, heads)};
  Var<T> out;
  if (cfg.scan == ScanKind::Causal) {
    out = wkv::wkv7_scan(in, wkv::Direction::Forward).out;
  } else {
    Var<T> gate = cfg.fusion == FusionKind::WeightedGate ? sigmoid(add(matmul(x_res, p.W_G), p.b_G))
                                                         : constant(Tensor<T>::full(Shape{batch, len, dim}, T(0.5)));
    out = wkv::bi_wkv(in, reshape(gate, heads));
  }
  if (cfg.bonus_enabled) {
    const Var<T> rho = reshape(p.rho, Shape{cfg.heads(), cfg.head_dim});
    const Var<T> coef = sum_axis(mul(mul(in.r, in.k_tilde), rho), 3, true);
    out = add(out, mul(coef, in.v));
  }
  out = mul(reshape(rms_norm(out), Shape{batch, len, dim}), p.out_norm);
  const Var<T> g = sigmoid(matmul(matmul(xg, p.A_g1), p.A_g2));
  return matmul(mul(out, g), p.W_o);
}

template <typename T>
Var<T> channel_mix(const Var<T>& x, const BlockParams<T>& p, const ModelConfig& cfg, const PatchGrid& grid) {
  check_grid(x.shape(), grid, "channel_mix");
  const Var<T> x_res = token_shift_residual(x, cfg, grid, p.ffn_shift_kernel);
  const Var<T> xk = lerp_params(x, x_res, p.ffn_mu_k);
  return matmul(square(relu(matmul(xk, p.ffn_W_k))), p.ffn_W_v);
}

template <typename T>
Tensor<T> bilinear_matrix(const PatchGrid& from, const PatchGrid& to) {
  if (from.rows < 1 || from.cols < 1 || to.rows < 1 || to.cols < 1) throw ConfigError("bilinear_matrix: empty grid");
  // 1D interpolation weights: entry [i][j] = weight of source j for target i.
  auto axis = [](Index n_from, Index n_to) {
    std::vector<std::vector<double>> m(static_cast<std::size_t>(n_to), std::vector<double>(n_from, 0.0));
    for (Index i = 0; i < n_to; ++i) {
      const double src = n_to == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n_from - 1) / static_cast<double>(n_to - 1);
      const Index j0 = std::min<Index>(static_cast<Index>(std::floor(src)), n_from - 1);
      const Index j1 = std::min<Index>(j0 + 1, n_from - 1);
      const double f = src - static_cast<double>(j0);
      m[i][j0] += 1.0 - f;
      m[i][j1] += f;
    }
    return m;
  };
  const auto mr = axis(from.rows, to.rows);
  const auto mc = axis(from.cols, to.cols);
  Tensor<T> out(Shape{to.len(), from.len()});
  for (Index r = 0; r < to.rows; ++r)
    for (Index c = 0; c < to.cols; ++c)
      for (Index sr = 0; sr < from.rows; ++sr) {
        if (mr[r][sr] == 0.0) continue;
        for (Index sc = 0; sc < from.cols; ++sc)
          out[(r * to.cols + c) * from.len() + sr * from.cols + sc] = static_cast<T>(mr[r][sr] * mc[c][sc]);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization. Every parameter draws from its own named substream.

namespace {

Rng init_rng(std::uint64_t seed, const std::string& name) { return Rng(seed, "init", fnv1a64(name)); }

template <typename T>
Tensor<T> from_double(const Shape& shape, const std::vector<double>& v) {
  Tensor<T> t(shape);
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(v[static_cast<std::size_t>(i)]);
  return t;
}

/// Semi-orthogonal [rows, cols] matrix scaled by gain.
std::vector<double> orthogonal(Index rows, Index cols, double gain, Rng& rng) {
  const Index n = std::max(rows, cols), m = std::min(rows, cols);
  Eigen::MatrixXd g(n, m);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(m, m);
  for (Index j = 0; j < m; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out[i * cols + j] = gain * (rows >= cols ? q(i, j) : q(j, i));
  return out;
}

std::vector<double> normal(Index n, double stddev, Rng& rng) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = stddev * rng.normal();
  return out;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  drop_path_rate_ = cfg_.drop_path_rate;
  const Index D = cfg_.embed_dim, L = cfg_.seq_len(), K = cfg_.num_classes, hidden = cfg_.hidden_dim();
  const Index ks = cfg_.conv_kernel;

  auto fill = [&](const std::string& name, const Shape& shape, double value) {
    return add_param(name, Tensor<T>::full(shape, static_cast<T>(value)));
  };
  auto ortho = [&](const std::string& name, Index rows, Index cols, double gain) {
    Rng rng = init_rng(seed_, name);
    return add_param(name, from_double<T>(Shape{rows, cols}, orthogonal(rows, cols, gain, rng)));
  };
  auto gaussian = [&](const std::string& name, const Shape& shape, double stddev) {
    Rng rng = init_rng(seed_, name);
    return add_param(name, from_double<T>(shape, normal(shape_numel(shape), stddev, rng)));
  };
  auto ramp = [&](const std::string& name, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(D));
    for (Index c = 0; c < D; ++c) v[c] = lo + (hi - lo) * (D > 1 ? static_cast<double>(c) / static_cast<double>(D - 1) : 0.0);
    return add_param(name, from_double<T>(Shape{D}, v));
  };

  {
    Rng rng = init_rng(seed_, "patch.weight");
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.patch_h * cfg_.patch_w));
    std::vector<double> v(static_cast<std::size_t>(D * cfg_.patch_h * cfg_.patch_w));
    for (auto& e : v) e = bound * (2.0 * rng.uniform() - 1.0);
    patch_weight_ = add_param("patch.weight", from_double<T>(Shape{D, 1, cfg_.patch_h, cfg_.patch_w}, v));
  }
  patch_bias_ = fill("patch.bias", Shape{D}, 0.0);
  pos_embed_ = gaussian("pos_embed", Shape{1, L, D}, 0.02);
  ln0_weight_ = fill("ln0.weight", Shape{D}, 1.0);
  ln0_bias_ = fill("ln0.bias", Shape{D}, 0.0);

  const bool conv = cfg_.token_shift == TokenShift::ConvShift;
  const bool gated = cfg_.scan == ScanKind::Bidirectional && cfg_.fusion == FusionKind::WeightedGate;
  for (Index i = 0; i < cfg_.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    BlockParams<T> p;
    p.ln1_weight = fill(b + "ln1.weight", Shape{D}, 1.0);
    p.ln1_bias = fill(b + "ln1.bias", Shape{D}, 0.0);
    p.mu_r = ramp(b + "att.mu_r", 0.0, 1.0);
    p.mu_w = ramp(b + "att.mu_w", 0.0, 1.0);
    p.mu_k = ramp(b + "att.mu_k", 0.0, 1.0);
    p.mu_v = ramp(b + "att.mu_v", 0.0, 1.0);
    p.mu_a = ramp(b + "att.mu_a", 0.0, 1.0);
    p.mu_g = ramp(b + "att.mu_g", 0.0, 1.0);
    p.W_r = ortho(b + "att.W_r", D, D, 1.0);
    p.W_k = ortho(b + "att.W_k", D, D, 1.0);
    p.W_v = ortho(b + "att.W_v", D, D, 1.0);
    p.W_o = ortho(b + "att.W_o", D, D, 0.5);
    {
      // Decay ramps from 0.85 to 0.98 across channels: lambda = ln(-ln w).
      std::vector<double> v(static_cast<std::size_t>(D));
      for (Index c = 0; c < D; ++c) {
        const double w = 0.85 + 0.13 * (D > 1 ? static_cast<double>(c) / static_cast<double>(D - 1) : 0.0);
        v[c] = std::log(-std::log(w));
      }
      p.lambda_w = add_param(b + "att.lambda_w", from_double<T>(Shape{D}, v));
    }
    p.A_w1 = fill(b + "att.A_w1", Shape{D, cfg_.lora_rank_w}, 0.0);
    p.A_w2 = ortho(b + "att.A_w2", cfg_.lora_rank_w, D, 0.1);
    p.lambda_a = fill(b + "att.lambda_a", Shape{D}, 0.0);
    p.A_a1 = fill(b + "att.A_a1", Shape{D, cfg_.lora_rank_a}, 0.0);
    p.A_a2 = ortho(b + "att.A_a2", cfg_.lora_rank_a, D, 0.1);
    p.A_g1 = fill(b + "att.A_g1", Shape{D, cfg_.lora_rank_g}, 0.0);
    p.A_g2 = ortho(b + "att.A_g2", cfg_.lora_rank_g, D, 0.1);
    p.xi_kappa = fill(b + "att.xi_kappa", Shape{D}, 1.0);
    p.zeta = fill(b + "att.zeta", Shape{D}, 1.0);
    if (gated) {
      p.W_G = fill(b + "att.W_G", Shape{D, D}, 0.0);
      p.b_G = fill(b + "att.b_G", Shape{D}, 0.0);
    }
    if (conv) p.shift_kernel = fill(b + "att.shift_kernel", Shape{D, 1, ks, ks}, 1.0 / static_cast<double>(ks * ks));
    p.out_norm = fill(b + "att.out_norm", Shape{D}, 1.0);
    if (cfg_.bonus_enabled) p.rho = fill(b + "att.rho", Shape{D}, 0.0);
    p.ln2_weight = fill(b + "ln2.weight", Shape{D}, 1.0);
    p.ln2_bias = fill(b + "ln2.bias", Shape{D}, 0.0);
    p.ffn_mu_k = ramp(b + "ffn.mu_k", 0.0, 1.0);
    p.ffn_W_k = ortho(b + "ffn.W_k", D, hidden, 1.0);
    p.ffn_W_v = ortho(b + "ffn.W_v", hidden, D, 0.5);
    if (conv) p.ffn_shift_kernel = fill(b + "ffn.shift_kernel", Shape{D, 1, ks, ks}, 1.0 / static_cast<double>(ks * ks));
    blocks_.push_back(std::move(p));
  }

  ln_out_weight_ = fill("ln_out.weight", Shape{D}, 1.0);
  ln_out_bias_ = fill("ln_out.bias", Shape{D}, 0.0);
  head_weight_ = gaussian("head.weight", Shape{D, K}, 0.02);
  head_bias_ = fill("head.bias", Shape{K}, 0.0);
}

template <typename T>
Var<T> Model<T>::add_param(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  Var<T> v(std::move(value), true, name);
  index_[name] = params_.size();
  params_.emplace_back(name, v);
  return v;
}

template <typename T>
const Var<T>& Model<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return params_[it->second].second;
}

template <typename T>
Index Model<T>::num_parameters() const {
  Index n = 0;
  for (const auto& [name, v] : params_) n += v.numel();
  return n;
}

template <typename T>
void Model<T>::set_param(const std::string& name, const Tensor<T>& value) {
  Var<T> v = param(name);
  if (v.shape() != value.shape())
    throw DimensionError("parameter '" + name + "' has shape " + shape_str(v.shape()) + ", got " + shape_str(value.shape()));
  v.mutable_value() = value;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

template <typename T>
void Model<T>::set_drop_path_rate(double rate) {
  if (rate < 0 || rate >= 1) throw ConfigError("drop_path_rate must be in [0, 1)");
  drop_path_rate_ = rate;
}

template <typename T>
PatchGrid Model<T>::grid_for(const Shape& s) const {
  if (s.size() != 4 || s[1] != 1) throw DimensionError("spectrogram batch must be [B,1,n_mels,n_frames], got " + shape_str(s));
  if (s[2] % cfg_.patch_h != 0 || s[3] % cfg_.patch_w != 0)
    throw ConfigError("input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " is not divisible by patch " +
                      std::to_string(cfg_.patch_h) + "x" + std::to_string(cfg_.patch_w));
  return PatchGrid{s[2] / cfg_.patch_h, s[3] / cfg_.patch_w};
}

template <typename T>
Var<T> Model<T>::positional_for(const PatchGrid& grid) const {
  const PatchGrid native = cfg_.grid();
  if (grid == native) return pos_embed_;
  if (!cfg_.pos_interpolation)
    throw ConfigError("input patch grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                      " does not match the positional table " + std::to_string(native.rows) + "x" +
                      std::to_string(native.cols) + " (enable pos_interpolation to resample)");
  const Index D = cfg_.embed_dim;
  Var<T> table = reshape(pos_embed_, Shape{native.len(), D});
  return reshape(matmul(constant(bilinear_matrix<T>(native, grid)), table), Shape{1, grid.len(), D});
}

template <typename T>
Var<T> Model<T>::features(const Var<T>& spec, bool train, Rng* rng) const {
  const PatchGrid grid = grid_for(spec.shape());
  Var<T> x = patch_embed(spec, patch_weight_, patch_bias_, positional_for(grid), ln0_weight_, ln0_bias_, cfg_.patch_h,
                         cfg_.patch_w);
  const Index depth = cfg_.depth;
  for (Index i = 0; i < depth; ++i) {
    const BlockParams<T>& p = blocks_[static_cast<std::size_t>(i)];
    x = add(x, drop_path(spatial_mix(layernorm(x, p.ln1_weight, p.ln1_bias), p, cfg_, grid), drop_path_rate_, i, depth,
                         train, rng));
    x = add(x, drop_path(channel_mix(layernorm(x, p.ln2_weight, p.ln2_bias), p, cfg_, grid), drop_path_rate_, i, depth,
                         train, rng));
  }
  return layernorm(x, ln_out_weight_, ln_out_bias_);
}

template <typename T>
Var<T> Model<T>::forward(const Var<T>& spec, bool train, Rng* rng) const {
  return add(matmul(mean_axis(features(spec, train, rng), 1), head_weight_), head_bias_);
}

#define ARWKV_INSTANTIATE_MODEL(T)                                                                             \
  template Var<T> patch_embed<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,    \
                                 const Var<T>&, Index, Index);                                                 \
  template Var<T> conv_shift_residual<T>(const Var<T>&, const PatchGrid&, const Var<T>&);                      \
  template Var<T> qshift_residual<T>(const Var<T>&, const PatchGrid&);                                         \
  template Var<T> token_shift_1d<T>(const Var<T>&);                                                            \
  template Var<T> token_shift_residual<T>(const Var<T>&, const ModelConfig&, const PatchGrid&, const Var<T>&); \
  template Var<T> lerp_params<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> spatial_mix<T>(const Var<T>&, const BlockParams<T>&, const ModelConfig&, const PatchGrid&);  \
  template Var<T> channel_mix<T>(const Var<T>&, const BlockParams<T>&, const ModelConfig&, const PatchGrid&);  \
  template Tensor<T> bilinear_matrix<T>(const PatchGrid&, const PatchGrid&);                                   \
  template class Model<T>;

ARWKV_INSTANTIATE_MODEL(float)
ARWKV_INSTANTIATE_MODEL(double)

#undef ARWKV_INSTANTIATE_MODEL

}  // namespace arwkv
