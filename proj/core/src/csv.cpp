// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/csv.hpp"

#include <sstream>

#include "arwkv/errors.hpp"

namespace arwkv {

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_format_row(const CsvRow& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(row[i]);
  }
  out += '\n';
  return out;
}

namespace {

void check_schema(const std::vector<CsvRow>& rows, const CsvRow& schema) {
  if (schema.empty()) throw ContractError("csv schema has no columns");
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].size() != schema.size())
      throw ContractError("csv row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                          " fields, schema has " + std::to_string(schema.size()));
}

}  // namespace

std::string format_csv(const std::vector<CsvRow>& rows, const CsvRow& schema) {
  check_schema(rows, schema);
  std::string out = csv_format_row(schema);
  for (const auto& r : rows) out += csv_format_row(r);
  return out;
}

void emit_csv(const std::vector<CsvRow>& rows, const CsvRow& schema, const std::filesystem::path& path) {
  const std::string text = format_csv(rows, schema);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool quoted = false, field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
      row.clear();
      field.clear();
      field_started = false;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (field_started || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

CsvWriter::CsvWriter(const std::filesystem::path& path, CsvRow schema) : schema_(std::move(schema)) {
  check_schema({}, schema_);
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error("cannot open '" + path.string() + "' for writing");
  out_ << csv_format_row(schema_) << std::flush;
}

void CsvWriter::write(const CsvRow& row) {
  check_schema({row}, schema_);
  out_ << csv_format_row(row) << std::flush;
}

}  // namespace arwkv
