// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace arwkv {

using CsvRow = std::vector<std::string>;

/// Quotes a field when it holds a comma, quote, CR or LF; quotes are doubled.
std::string csv_escape(std::string_view field);
std::string csv_format_row(const CsvRow& row);

/// Header then records, one trailing newline per record. Every row must have
/// exactly schema.size() fields; violations throw ContractError before the
/// file is touched.
void emit_csv(const std::vector<CsvRow>& rows, const CsvRow& schema, const std::filesystem::path& path);
std::string format_csv(const std::vector<CsvRow>& rows, const CsvRow& schema);

/// Parses RFC-4180 text (quoted fields may span lines). Returns all records,
/// header included.
std::vector<CsvRow> parse_csv(std::string_view text);
std::vector<CsvRow> read_csv(const std::filesystem::path& path);

/// Append-only writer that flushes after every row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, CsvRow schema);
  void write(const CsvRow& row);
  const CsvRow& schema() const { return schema_; }

 private:
  std::ofstream out_;
  CsvRow schema_;
};

}  // namespace arwkv
