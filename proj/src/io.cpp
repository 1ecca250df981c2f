#include "evpanel/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "evpanel/errors.hpp"

namespace evpanel {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

int TextTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

void write_table(const std::string& path, const TextTable& table,
                 char delimiter, const std::string& header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot open for writing: " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  for (size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out << delimiter;
    out << table.columns[i];
  }
  out << "\n";
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << delimiter;
      out << row[i];
    }
    out << "\n";
  }
  if (!out) throw Error("IoError", "write failed: " + path);
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

RawTable read_delimited(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot open for reading: " + path);
  RawTable table;
  std::string line;
  long line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') continue;
    if (!have_header) {
      table.delimiter = line.find('\t') != std::string::npos ? '\t' : ',';
      table.columns = split_line(line, table.delimiter);
      have_header = true;
      continue;
    }
    table.rows.push_back(split_line(line, table.delimiter));
    table.line_numbers.push_back(line_no);
    if (table.rows.back().size() != table.columns.size()) {
      throw MalformedRow("line " + std::to_string(line_no) + " of " + path +
                         ": expected " + std::to_string(table.columns.size()) +
                         " fields, found " +
                         std::to_string(table.rows.back().size()));
    }
  }
  if (!have_header) {
    throw MalformedRow("no header row in " + path);
  }
  return table;
}

}  // namespace evpanel
