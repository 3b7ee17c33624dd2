// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "arwkv/kv_file.hpp"
#include "arwkv/tensor.hpp"

namespace arwkv {

enum class TokenShift { Original1D, QShift, ConvShift };
enum class ScanKind { Causal, Bidirectional };
enum class FusionKind { Average, WeightedGate };

std::string_view to_string(TokenShift v);
std::string_view to_string(ScanKind v);
std::string_view to_string(FusionKind v);
TokenShift parse_token_shift(std::string_view s);
ScanKind parse_scan_kind(std::string_view s);
FusionKind parse_fusion_kind(std::string_view s);

/// Non-overlapping patch grid; tokens are flattened row-major, rows are
/// frequency bands and columns are time steps: t = row * cols + col.
struct PatchGrid {
  Index rows = 0;
  Index cols = 0;
  Index len() const { return rows * cols; }
  bool operator==(const PatchGrid&) const = default;
};

struct ModelConfig {
  static constexpr int kVersion = 1;

  Index embed_dim = 768;
  Index depth = 12;
  Index head_dim = 64;
  Index patch_h = 16;
  Index patch_w = 16;
  Index n_mels = 128;
  Index n_frames = 1024;
  TokenShift token_shift = TokenShift::ConvShift;
  ScanKind scan = ScanKind::Bidirectional;
  FusionKind fusion = FusionKind::WeightedGate;
  Index conv_kernel = 3;
  Index lora_rank_w = 64;
  Index lora_rank_a = 64;
  Index lora_rank_g = 64;
  double channel_mix_ratio = 4.0;
  Index num_classes = 527;
  double drop_path_rate = 0.5;
  bool bonus_enabled = false;
  /// Bilinearly resize the positional table when the input grid differs.
  bool pos_interpolation = false;

  Index heads() const { return embed_dim / head_dim; }
  Index hidden_dim() const;
  PatchGrid grid() const { return PatchGrid{n_mels / patch_h, n_frames / patch_w}; }
  Index seq_len() const { return grid().len(); }

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// "T", "S", "B" (12 layers at 192/384/768, d = 64, 128x1024 input, 16x16
  /// patches), "micro" (96-dim, 4 layers, 32x64 input, 8x8 patches, 10
  /// classes) and "nano" (16-dim, 2 layers, 12 tokens; gradient checks).
  static ModelConfig preset(std::string_view name);

  bool operator==(const ModelConfig&) const = default;
};

/// Serializes every field, including `config_version`.
std::string serialize_config(const ModelConfig& cfg);

/// Reads a config. With a `preset` key the preset supplies defaults; without
/// one every field is required. Unknown keys are rejected.
ModelConfig parse_config(const KeyValueFile& kv);
ModelConfig parse_config_text(std::string_view text);
ModelConfig load_config(const std::filesystem::path& path);

/// Exact number of learnable scalars the model allocates for `cfg`.
Index param_count(const ModelConfig& cfg);

}  // namespace arwkv
