// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "arwkv/autodiff.hpp"
#include "arwkv/model_config.hpp"
#include "arwkv/rng.hpp"
#include "arwkv/tensor.hpp"

namespace arwkv {

/// Learnable weights of one block. Optional members are undefined when the
/// config does not use them (shift kernels outside convshift, the fusion gate
/// outside bidirectional weighted fusion, rho without the bonus term).
template <typename T>
struct BlockParams {
  Var<T> ln1_weight, ln1_bias;
  Var<T> mu_r, mu_w, mu_k, mu_v, mu_a, mu_g;  // [D]
  Var<T> W_r, W_k, W_v, W_o;                  // [D, D]
  Var<T> lambda_w, A_w1, A_w2;                // [D], [D, rank_w], [rank_w, D]
  Var<T> lambda_a, A_a1, A_a2;
  Var<T> A_g1, A_g2;
  Var<T> xi_kappa, zeta;                      // [D]
  Var<T> W_G, b_G;                            // [D, D], [D]
  Var<T> shift_kernel;                        // [D, 1, k, k]
  Var<T> out_norm;                            // [D], per-head RMS norm scale
  Var<T> rho;                                 // [D]
  Var<T> ln2_weight, ln2_bias;
  Var<T> ffn_mu_k;                            // [D]
  Var<T> ffn_W_k, ffn_W_v;                    // [D, hidden], [hidden, D]
  Var<T> ffn_shift_kernel;                    // [D, 1, k, k]
};

// Building blocks. All sequence tensors are [B, L, D] with tokens in
// row-major grid order.

/// Conv2D patch projection + positional table + initial LayerNorm.
/// spec: [B, 1, n_mels, n_frames]; pos: [1, L, D] for `grid`.
template <typename T>
Var<T> patch_embed(const Var<T>& spec, const Var<T>& patch_weight, const Var<T>& patch_bias, const Var<T>& pos,
                   const Var<T>& ln_weight, const Var<T>& ln_bias, Index patch_h, Index patch_w);

/// DWConv2D(X) - X on the patch grid, flattened back to tokens.
template <typename T>
Var<T> conv_shift_residual(const Var<T>& x, const PatchGrid& grid, const Var<T>& kernel);

/// Quarter-channel one-cell shift minus identity.
template <typename T>
Var<T> qshift_residual(const Var<T>& x, const PatchGrid& grid);

/// x_{t-1} - x_t with a zero token before the first.
template <typename T>
Var<T> token_shift_1d(const Var<T>& x);

/// Residual for the configured token shift; `kernel` is used by convshift only.
template <typename T>
Var<T> token_shift_residual(const Var<T>& x, const ModelConfig& cfg, const PatchGrid& grid, const Var<T>& kernel);

/// x + x_res * mu.
template <typename T>
Var<T> lerp_params(const Var<T>& x, const Var<T>& x_res, const Var<T>& mu);

template <typename T>
Var<T> spatial_mix(const Var<T>& x, const BlockParams<T>& p, const ModelConfig& cfg, const PatchGrid& grid);

template <typename T>
Var<T> channel_mix(const Var<T>& x, const BlockParams<T>& p, const ModelConfig& cfg, const PatchGrid& grid);

/// Row-major bilinear resampling matrix [rows*cols, from.rows*from.cols]
/// (align-corners convention). Multiplying a positional table by it resizes
/// the table onto a new grid.
template <typename T>
Tensor<T> bilinear_matrix(const PatchGrid& from, const PatchGrid& to);

template <typename T>
class Model {
 public:
  /// Builds and initializes every parameter from `seed`. Initial values are
  /// drawn in double precision, so float and double models with the same seed
  /// hold the same numbers up to rounding.
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  /// Parameters in a fixed registration order.
  const std::vector<std::pair<std::string, Var<T>>>& parameters() const { return params_; }
  const Var<T>& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return index_.count(name) > 0; }
  Index num_parameters() const;

  const BlockParams<T>& block(Index i) const { return blocks_.at(static_cast<std::size_t>(i)); }

  /// Overwrites one parameter's value; the shape must match.
  void set_param(const std::string& name, const Tensor<T>& value);
  void zero_grad();

  /// Stochastic depth rate used in train mode (defaults to the config's).
  void set_drop_path_rate(double rate);
  double drop_path_rate() const { return drop_path_rate_; }

  /// Final-LayerNorm token features before pooling, [B, L, D].
  Var<T> features(const Var<T>& spec, bool train = false, Rng* rng = nullptr) const;

  /// Logits [B, num_classes]. `rng` drives stochastic depth and is required
  /// in train mode when the drop-path rate is nonzero.
  Var<T> forward(const Var<T>& spec, bool train = false, Rng* rng = nullptr) const;

  /// Patch grid for an input of the given spectrogram shape. Throws
  /// ConfigError when the dims are not multiples of the patch size.
  PatchGrid grid_for(const Shape& spec_shape) const;

 private:
  Var<T> add_param(const std::string& name, Tensor<T> value);
  Var<T> positional_for(const PatchGrid& grid) const;

  ModelConfig cfg_;
  std::uint64_t seed_;
  double drop_path_rate_;
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::map<std::string, std::size_t> index_;

  Var<T> patch_weight_, patch_bias_, pos_embed_, ln0_weight_, ln0_bias_;
  std::vector<BlockParams<T>> blocks_;
  Var<T> ln_out_weight_, ln_out_bias_, head_weight_, head_bias_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace arwkv
