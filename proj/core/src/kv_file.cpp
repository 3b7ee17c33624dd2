// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/kv_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace arwkv {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string_view origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
    if (kv.values_.count(key))
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": duplicate field '" + key + "'");
    kv.values_.emplace(key, value);
    kv.line_of_.emplace(key, line_no);
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

bool KeyValueFile::has(std::string_view key) const {
  return values_.find(key) != values_.end();
}

const std::string& KeyValueFile::raw(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing field '" + std::string(key) + "'");
  touched_.emplace(key);
  return it->second;
}

long long KeyValueFile::get_int(std::string_view key) const {
  const std::string& s = raw(key);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(origin_ + ": field '" + std::string(key) + "' is not an integer: '" + s + "'");
  return v;
}

double KeyValueFile::get_double(std::string_view key) const {
  const std::string& s = raw(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": field '" + std::string(key) + "' is not a number: '" + s + "'");
  }
}

bool KeyValueFile::get_bool(std::string_view key) const {
  const std::string& s = raw(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(origin_ + ": field '" + std::string(key) + "' is not a boolean: '" + s + "'");
}

std::vector<double> KeyValueFile::get_doubles(std::string_view key) const {
  const std::string& s = raw(key);
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t(trim(item));
    try {
      out.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": field '" + std::string(key) + "' has a bad list entry '" + t + "'");
    }
  }
  return out;
}

void KeyValueFile::set(std::string key, std::string value) {
  values_[std::move(key)] = std::move(value);
}

std::vector<std::string> KeyValueFile::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!touched_.count(k)) out.push_back(k);
  return out;
}

std::string format_kv(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace arwkv
