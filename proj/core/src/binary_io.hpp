// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian encoding helpers shared by the MELF and checkpoint formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "arwkv/errors.hpp"

namespace arwkv::detail {

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out{};
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    v = to_le(v);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void bytes(std::string_view s) { buf_.append(s); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

/// Reads from a byte buffer; every failure reports the byte offset.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string origin) : data_(data), origin_(std::move(origin)) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return to_le(v);
  }
  float get_f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const { fail_at(pos_, msg); }
  [[noreturn]] void fail_at(std::size_t off, const std::string& msg) const {
    throw FormatError(origin_ + ": " + msg + " at byte offset " + std::to_string(off));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n)
      fail(std::string("truncated ") + what + " (need " + std::to_string(n) + " bytes, have " +
           std::to_string(data_.size() - pos_) + ")");
  }

  std::string_view data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

}  // namespace arwkv::detail
