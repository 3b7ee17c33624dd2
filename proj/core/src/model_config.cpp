// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/model_config.hpp"

#include <cmath>

namespace arwkv {

std::string_view to_string(TokenShift v) {
  switch (v) {
    case TokenShift::Original1D: return "original1d";
    case TokenShift::QShift: return "qshift";
    case TokenShift::ConvShift: return "convshift";
  }
  return "?";
}

std::string_view to_string(ScanKind v) {
  return v == ScanKind::Causal ? "causal" : "bidirectional";
}

std::string_view to_string(FusionKind v) {
  return v == FusionKind::Average ? "average" : "weighted_gate";
}

TokenShift parse_token_shift(std::string_view s) {
  if (s == "original1d") return TokenShift::Original1D;
  if (s == "qshift") return TokenShift::QShift;
  if (s == "convshift") return TokenShift::ConvShift;
  throw ConfigError("token_shift must be one of original1d|qshift|convshift, got '" + std::string(s) + "'");
}

ScanKind parse_scan_kind(std::string_view s) {
  if (s == "causal") return ScanKind::Causal;
  if (s == "bidirectional") return ScanKind::Bidirectional;
  throw ConfigError("scan must be causal|bidirectional, got '" + std::string(s) + "'");
}

FusionKind parse_fusion_kind(std::string_view s) {
  if (s == "average") return FusionKind::Average;
  if (s == "weighted_gate") return FusionKind::WeightedGate;
  throw ConfigError("fusion must be average|weighted_gate, got '" + std::string(s) + "'");
}

Index ModelConfig::hidden_dim() const {
  return static_cast<Index>(std::llround(channel_mix_ratio * static_cast<double>(embed_dim)));
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* field, const std::string& why) {
    if (!ok) throw ConfigError("invalid field '" + std::string(field) + "': " + why);
  };
  require(embed_dim > 0, "embed_dim", "must be positive");
  require(depth > 0, "depth", "must be positive");
  require(head_dim > 0 && embed_dim % head_dim == 0, "head_dim", "must divide embed_dim");
  require(patch_h > 0 && n_mels % patch_h == 0, "patch_h", "must divide n_mels");
  require(patch_w > 0 && n_frames % patch_w == 0, "patch_w", "must divide n_frames");
  require(n_mels > 0, "n_mels", "must be positive");
  require(n_frames > 0, "n_frames", "must be positive");
  require(conv_kernel > 0 && conv_kernel % 2 == 1, "conv_kernel", "must be odd");
  require(lora_rank_w > 0, "lora_rank_w", "must be positive");
  require(lora_rank_a > 0, "lora_rank_a", "must be positive");
  require(lora_rank_g > 0, "lora_rank_g", "must be positive");
  require(channel_mix_ratio > 0 && hidden_dim() > 0, "channel_mix_ratio", "must be positive");
  require(num_classes > 0, "num_classes", "must be positive");
  require(drop_path_rate >= 0 && drop_path_rate < 1, "drop_path_rate", "must be in [0, 1)");
  require(token_shift != TokenShift::QShift || embed_dim % 4 == 0, "embed_dim", "qshift needs a multiple of 4");
}

ModelConfig ModelConfig::preset(std::string_view name) {
  ModelConfig c;
  auto paper_scale = [&](Index dim, double drop) {
    c.embed_dim = dim;
    c.depth = 12;
    c.head_dim = 64;
    c.lora_rank_w = c.lora_rank_a = c.lora_rank_g = dim / 12;
    c.drop_path_rate = drop;
  };
  if (name == "T") {
    paper_scale(192, 0.05);
  } else if (name == "S") {
    paper_scale(384, 0.35);
  } else if (name == "B") {
    paper_scale(768, 0.5);
  } else if (name == "micro") {
    c.embed_dim = 96;
    c.depth = 4;
    c.head_dim = 32;
    c.patch_h = c.patch_w = 8;
    c.n_mels = 32;
    c.n_frames = 64;
    c.lora_rank_w = c.lora_rank_a = c.lora_rank_g = 8;
    c.num_classes = 10;
    c.drop_path_rate = 0.0;
  } else if (name == "nano") {
    c.embed_dim = 16;
    c.depth = 2;
    c.head_dim = 8;
    c.patch_h = c.patch_w = 4;
    c.n_mels = 12;
    c.n_frames = 16;
    c.lora_rank_w = c.lora_rank_a = c.lora_rank_g = 4;
    c.channel_mix_ratio = 2.0;
    c.num_classes = 3;
    c.drop_path_rate = 0.0;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected T, S, B, micro or nano)");
  }
  return c;
}

std::string serialize_config(const ModelConfig& c) {
  return format_kv({
      {"config_version", std::to_string(ModelConfig::kVersion)},
      {"embed_dim", std::to_string(c.embed_dim)},
      {"depth", std::to_string(c.depth)},
      {"head_dim", std::to_string(c.head_dim)},
      {"patch_h", std::to_string(c.patch_h)},
      {"patch_w", std::to_string(c.patch_w)},
      {"n_mels", std::to_string(c.n_mels)},
      {"n_frames", std::to_string(c.n_frames)},
      {"token_shift", std::string(to_string(c.token_shift))},
      {"scan", std::string(to_string(c.scan))},
      {"fusion", std::string(to_string(c.fusion))},
      {"conv_kernel", std::to_string(c.conv_kernel)},
      {"lora_rank_w", std::to_string(c.lora_rank_w)},
      {"lora_rank_a", std::to_string(c.lora_rank_a)},
      {"lora_rank_g", std::to_string(c.lora_rank_g)},
      {"channel_mix_ratio", format_double(c.channel_mix_ratio)},
      {"num_classes", std::to_string(c.num_classes)},
      {"drop_path_rate", format_double(c.drop_path_rate)},
      {"bonus_enabled", c.bonus_enabled ? "true" : "false"},
      {"pos_interpolation", c.pos_interpolation ? "true" : "false"},
  });
}

ModelConfig parse_config(const KeyValueFile& kv) {
  ModelConfig c;
  const bool has_preset = kv.has("preset");
  if (has_preset) c = ModelConfig::preset(kv.get_string("preset"));
  const long long version = kv.get_int("config_version");
  if (version != ModelConfig::kVersion)
    throw ConfigError(kv.origin() + ": unsupported config_version " + std::to_string(version));

  auto take_int = [&](const char* key, Index& dst) {
    if (!has_preset || kv.has(key)) dst = kv.get_int(key);
  };
  auto take_double = [&](const char* key, double& dst) {
    if (!has_preset || kv.has(key)) dst = kv.get_double(key);
  };
  auto take_bool = [&](const char* key, bool& dst) {
    if (!has_preset || kv.has(key)) dst = kv.get_bool(key);
  };
  take_int("embed_dim", c.embed_dim);
  take_int("depth", c.depth);
  take_int("head_dim", c.head_dim);
  take_int("patch_h", c.patch_h);
  take_int("patch_w", c.patch_w);
  take_int("n_mels", c.n_mels);
  take_int("n_frames", c.n_frames);
  if (!has_preset || kv.has("token_shift")) c.token_shift = parse_token_shift(kv.get_string("token_shift"));
  if (!has_preset || kv.has("scan")) c.scan = parse_scan_kind(kv.get_string("scan"));
  if (!has_preset || kv.has("fusion")) c.fusion = parse_fusion_kind(kv.get_string("fusion"));
  take_int("conv_kernel", c.conv_kernel);
  take_int("lora_rank_w", c.lora_rank_w);
  take_int("lora_rank_a", c.lora_rank_a);
  take_int("lora_rank_g", c.lora_rank_g);
  take_double("channel_mix_ratio", c.channel_mix_ratio);
  take_int("num_classes", c.num_classes);
  take_double("drop_path_rate", c.drop_path_rate);
  take_bool("bonus_enabled", c.bonus_enabled);
  // Optional in every mode; defaults to the hard-error behaviour.
  if (kv.has("pos_interpolation")) c.pos_interpolation = kv.get_bool("pos_interpolation");

  if (const auto unused = kv.unused_keys(); !unused.empty())
    throw ConfigError(kv.origin() + ": unknown field '" + unused.front() + "'");
  c.validate();
  return c;
}

ModelConfig parse_config_text(std::string_view text) {
  return parse_config(KeyValueFile::parse(text, "<config>"));
}

ModelConfig load_config(const std::filesystem::path& path) {
  return parse_config(KeyValueFile::load(path));
}

Index param_count(const ModelConfig& c) {
  const Index D = c.embed_dim;
  const Index k2 = c.conv_kernel * c.conv_kernel;
  const Index L = c.seq_len();

  Index att = 0;
  att += 2 * D;                                   // ln1
  att += 6 * D;                                   // mu_r, mu_w, mu_k, mu_v, mu_a, mu_g
  att += 4 * D * D;                               // W_r, W_k, W_v, W_o
  att += D + 2 * D * c.lora_rank_w;               // decay precursor
  att += D + 2 * D * c.lora_rank_a;               // learning-rate precursor
  att += 2 * D * c.lora_rank_g;                   // output gate
  att += 2 * D;                                   // xi_kappa, zeta
  att += D;                                       // per-head output norm scale
  if (c.scan == ScanKind::Bidirectional && c.fusion == FusionKind::WeightedGate) att += D * D + D;
  if (c.token_shift == TokenShift::ConvShift) att += D * k2;
  if (c.bonus_enabled) att += D;

  Index ffn = 0;
  ffn += 2 * D;                                   // ln2
  ffn += D;                                       // mu_k
  ffn += 2 * D * c.hidden_dim();                  // W_k, W_v
  if (c.token_shift == TokenShift::ConvShift) ffn += D * k2;

  Index total = c.depth * (att + ffn);
  total += D * c.patch_h * c.patch_w + D;         // patch embedding
  total += L * D;                                 // positional table
  total += 2 * D;                                 // ln0
  total += 2 * D;                                 // final ln
  total += D * c.num_classes + c.num_classes;     // head
  return total;
}

}  // namespace arwkv
