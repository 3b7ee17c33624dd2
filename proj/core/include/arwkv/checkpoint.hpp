// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "arwkv/model.hpp"
#include "arwkv/model_config.hpp"
#include "arwkv/tensor.hpp"

/// Checkpoint layout (all integers little-endian):
///
///   "ARWK"  u32 version=1  u32 config_len  config text (key = value lines)
///   repeated until EOF:
///     u16 name_len  name bytes  u8 rank  u32 dim[rank]  f32 data[prod(dim)]
namespace arwkv {

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError with the byte offset on bad magic, version or truncation.
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint");

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint to_checkpoint(const Model<T>& model);

/// Builds a model from the stored config and loads every tensor. Missing,
/// unknown or mis-shaped tensors raise FormatError.
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt);

template <typename T>
void save_model(const Model<T>& model, const std::filesystem::path& path) {
  write_checkpoint(path, to_checkpoint(model));
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint<T>(read_checkpoint(path));
}

}  // namespace arwkv
