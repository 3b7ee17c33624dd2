// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace arwkv {

namespace detail {

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace detail

std::string encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes("ARWK");
  w.put<std::uint32_t>(Checkpoint::kVersion);
  const std::string cfg = serialize_config(ckpt.config);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long: " + name);
    if (t.rank() > 255) throw FormatError("tensor '" + name + "' has rank above 255");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (Index d : t.shape()) {
      if (d < 0 || d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("tensor '" + name + "' dim out of range");
      w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    }
    for (Index i = 0; i < t.numel(); ++i) w.put_f32(t[i]);
  }
  return std::move(w.str());
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin) {
  detail::ByteReader r(bytes, origin);
  if (r.bytes(4, "magic") != "ARWK") r.fail_at(0, "bad magic (expected \"ARWK\")");
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) r.fail_at(version_at, "unsupported version " + std::to_string(version));
  const auto cfg_len = r.get<std::uint32_t>("config length");
  const std::size_t cfg_at = r.offset();
  const std::string_view cfg_text = r.bytes(cfg_len, "config blob");

  Checkpoint ck;
  try {
    ck.config = parse_config(KeyValueFile::parse(cfg_text, origin + " config"));
  } catch (const ConfigError& e) {
    r.fail_at(cfg_at, std::string("invalid config blob: ") + e.what());
  }
  std::set<std::string> seen;
  while (!r.at_end()) {
    const std::size_t rec_at = r.offset();
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    std::string name(r.bytes(name_len, "tensor name"));
    if (!seen.insert(name).second) r.fail_at(rec_at, "duplicate tensor '" + name + "'");
    const auto rank = r.get<std::uint8_t>("tensor rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      shape.push_back(r.get<std::uint32_t>("tensor dim"));
      numel *= static_cast<std::uint64_t>(shape.back());
    }
    if (numel * 4 > r.remaining()) r.fail("truncated data for tensor '" + name + "'");
    Tensor<float> t(shape);
    for (Index i = 0; i < t.numel(); ++i) t[i] = r.get_f32("tensor data");
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file_bytes(path.string(), encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file_bytes(path.string()), path.string());
}

template <typename T>
Checkpoint to_checkpoint(const Model<T>& model) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto& [name, v] : model.parameters()) ck.tensors.emplace_back(name, v.value().template cast<float>());
  return ck;
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<T> model(ckpt.config);
  std::set<std::string> loaded;
  for (const auto& [name, t] : ckpt.tensors) {
    if (!model.has_param(name)) throw FormatError("checkpoint tensor '" + name + "' is not a model parameter");
    if (model.param(name).shape() != t.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                        shape_str(model.param(name).shape()));
    model.set_param(name, t.template cast<T>());
    loaded.insert(name);
  }
  for (const auto& [name, v] : model.parameters())
    if (!loaded.count(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
  return model;
}

template Checkpoint to_checkpoint<float>(const Model<float>&);
template Checkpoint to_checkpoint<double>(const Model<double>&);
template Model<float> model_from_checkpoint<float>(const Checkpoint&);
template Model<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace arwkv
