#pragma once

// Minimal RFC 4180 CSV: comma separated, double-quote quoting, LF line ends
// on write (CRLF accepted on read).

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pfram/error.hpp"

namespace pfram::csv {

using Row = std::vector<std::string>;

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_row(const Row& row) {
  std::string line;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) line += ',';
    line += quote(row[i]);
  }
  return line + "\n";
}

inline std::vector<Row> parse(std::string_view text, std::string_view source = "csv") {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    if (!(row.size() == 1 && row[0].empty() && !field_started)) rows.push_back(std::move(row));
    row.clear();
    field_started = false;
  };
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
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          throw InputError(std::string(source) + ": stray quote on line " + std::to_string(line));
        quoted = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (quoted) throw InputError(std::string(source) + ": unterminated quoted field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Reads a CSV file whose first row must equal `header` (when nonempty).
inline std::vector<Row> read_table(const std::string& path, const Row& header) {
  auto rows = parse(read_file(path), path);
  if (rows.empty()) throw InputError(path + ": file is empty");
  if (!header.empty() && rows.front() != header) {
    std::string expected;
    for (const auto& h : header) expected += (expected.empty() ? "" : ",") + h;
    throw InputError(path + ": expected header '" + expected + "'");
  }
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].size() != rows.front().size())
      throw InputError(path + ": row " + std::to_string(i + 1) + " has " +
                       std::to_string(rows[i].size()) + " fields, expected " +
                       std::to_string(rows.front().size()));
  return rows;
}

}  // namespace pfram::csv
