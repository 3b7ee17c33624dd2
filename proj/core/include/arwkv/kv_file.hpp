// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "arwkv/errors.hpp"

namespace arwkv {

/// Flat `key = value` text file. `#` starts a comment; blank lines are
/// ignored; keys are unique. Values are kept as trimmed strings and converted
/// on access. Lookups are tracked so unused keys can be reported.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, std::string_view origin = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  /// Throws ConfigError "missing field '<key>'" when absent.
  const std::string& raw(std::string_view key) const;

  std::string get_string(std::string_view key) const { return raw(key); }
  long long get_int(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<double> get_doubles(std::string_view key) const;

  void set(std::string key, std::string value);
  /// Keys present in the file that no getter has touched.
  std::vector<std::string> unused_keys() const;
  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::map<std::string, std::string, std::less<>> values_;
  std::map<std::string, int, std::less<>> line_of_;
  mutable std::set<std::string, std::less<>> touched_;
};

/// Writes entries in the given order as `key = value` lines.
std::string format_kv(const std::vector<std::pair<std::string, std::string>>& entries);

std::string format_double(double v);

}  // namespace arwkv
