#pragma once

#include <string>
#include <vector>

namespace evpanel {

// Shortest decimal string that round-trips the double exactly.
std::string format_double(double v);

// Rectangular delimited-text payload. Writers prepend header comment lines
// ("# ..."); readers skip them. Missing values travel as empty fields.
struct TextTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::vector<std::string>& add_row() {
    rows.emplace_back(columns.size());
    return rows.back();
  }
  int column_index(const std::string& name) const;
};

void write_table(const std::string& path, const TextTable& table,
                 char delimiter, const std::string& header_comment);

// Reads a delimited file: auto-detects tab vs comma from the header line,
// skips '#' comment lines, keeps cells as raw strings. line_numbers holds the
// 1-based source line of each data row for error reporting.
struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> line_numbers;
  char delimiter = '\t';
};

RawTable read_delimited(const std::string& path);

}  // namespace evpanel
