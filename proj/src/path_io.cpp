#include "evpanel/path_io.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include "evpanel/io.hpp"

namespace evpanel {

namespace {

constexpr double kZ95 = 1.959963984540054;  // norm_ppf(0.975)

std::string kind_tag(EventTimeBin::Kind kind) {
  switch (kind) {
    case EventTimeBin::Kind::PooledPre: return "pooled_pre";
    case EventTimeBin::Kind::PooledPost: return "pooled_post";
    case EventTimeBin::Kind::Exact: break;
  }
  return "exact";
}

EventTimeBin::Kind parse_kind(const std::string& tag, long line) {
  if (tag == "exact") return EventTimeBin::Kind::Exact;
  if (tag == "pooled_pre") return EventTimeBin::Kind::PooledPre;
  if (tag == "pooled_post") return EventTimeBin::Kind::PooledPost;
  throw MalformedRow("unknown bin kind '" + tag + "' at line " +
                     std::to_string(line));
}

double parse_num(const std::string& s, long line) {
  if (s.empty() || s == "nan") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw MalformedRow("bad number '" + s + "' at line " +
                       std::to_string(line));
  }
  return v;
}

long parse_int(const std::string& s, long line) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw MalformedRow("bad integer '" + s + "' at line " +
                       std::to_string(line));
  }
  return v;
}

}  // namespace

void save_path(const CoefficientPath& path, const std::string& table_file,
               const std::string& vcov_file, char delimiter,
               const std::string& header_comment) {
  TextTable table;
  table.columns = {"kind",   "tau",     "estimate", "se",
                   "ci_lo",  "ci_hi",   "n_obs",    "reference"};
  for (int i = 0; i < path.size(); ++i) {
    auto& row = table.add_row();
    row[0] = kind_tag(path.event_times[i].kind);
    row[1] = std::to_string(path.event_times[i].tau);
    row[2] = format_double(path.estimates[i]);
    row[3] = format_double(path.ses[i]);
    row[4] = format_double(path.estimates[i] - kZ95 * path.ses[i]);
    row[5] = format_double(path.estimates[i] + kZ95 * path.ses[i]);
    row[6] = format_double(path.n_obs[i]);
    row[7] = i == path.reference_index ? "1" : "0";
  }
  write_table(table_file, table, delimiter, header_comment);

  TextTable vc;
  vc.columns.push_back("label");
  for (int i = 0; i < path.size(); ++i) {
    if (i == path.reference_index) continue;
    vc.columns.push_back(path.event_times[i].label());
  }
  for (int i = 0; i < path.size(); ++i) {
    if (i == path.reference_index) continue;
    auto& row = vc.add_row();
    row[0] = path.event_times[i].label();
    for (int j = 0; j < path.size(); ++j) {
      if (j == path.reference_index) continue;
      row[1 + path.vcov_index(j)] =
          format_double(path.vcov(path.vcov_index(i), path.vcov_index(j)));
    }
  }
  write_table(vcov_file, vc, delimiter, header_comment);
}

CoefficientPath load_path(const std::string& table_file,
                          const std::string& vcov_file) {
  const RawTable raw = read_delimited(table_file);
  const char* needed[] = {"kind", "tau", "estimate", "se", "n_obs",
                          "reference"};
  std::vector<int> idx;
  for (const char* name : needed) {
    int found = -1;
    for (size_t c = 0; c < raw.columns.size(); ++c) {
      if (raw.columns[c] == name) {
        found = static_cast<int>(c);
        break;
      }
    }
    if (found < 0) {
      throw MissingColumn("path table lacks column " + std::string(name));
    }
    idx.push_back(found);
  }

  CoefficientPath path;
  const int nb = static_cast<int>(raw.rows.size());
  if (nb == 0) throw EmptySample("path table has no rows");
  path.estimates = Vector::Zero(nb);
  path.ses = Vector::Zero(nb);
  path.n_obs.assign(nb, 0.0);
  path.reference_index = -1;
  for (int r = 0; r < nb; ++r) {
    const auto& row = raw.rows[r];
    const long line = raw.line_numbers[r];
    EventTimeBin bin;
    bin.kind = parse_kind(row[idx[0]], line);
    bin.tau = static_cast<int>(parse_int(row[idx[1]], line));
    path.event_times.push_back(bin);
    path.estimates[r] = parse_num(row[idx[2]], line);
    path.ses[r] = parse_num(row[idx[3]], line);
    path.n_obs[r] = parse_num(row[idx[4]], line);
    if (parse_int(row[idx[5]], line) != 0) {
      if (path.reference_index >= 0) {
        throw MalformedRow("multiple reference rows in path table");
      }
      path.reference_index = r;
    }
  }
  if (path.reference_index < 0) {
    throw MalformedRow("path table lacks a reference row");
  }
  path.reference_period = path.event_times[path.reference_index].tau;
  path.reference_mean = std::numeric_limits<double>::quiet_NaN();

  const RawTable vc = read_delimited(vcov_file);
  if (static_cast<int>(vc.rows.size()) != nb - 1 ||
      static_cast<int>(vc.columns.size()) != nb) {
    throw MalformedRow("covariance table does not match the path table");
  }
  path.vcov = Matrix::Zero(nb - 1, nb - 1);
  for (int r = 0; r < nb - 1; ++r) {
    for (int c = 0; c < nb - 1; ++c) {
      path.vcov(r, c) = parse_num(vc.rows[r][c + 1], vc.line_numbers[r]);
    }
  }
  return path;
}

void save_attgt(const GroupTimeATT& grid, const std::string& file,
                char delimiter, const std::string& header_comment) {
  TextTable table;
  table.columns = {"cohort", "period", "att", "se", "n_treated", "n_control"};
  for (const auto& cell : grid.cells) {
    auto& row = table.add_row();
    row[0] = std::to_string(cell.cohort);
    row[1] = std::to_string(cell.period);
    row[2] = format_double(cell.att);
    row[3] = format_double(cell.se);
    row[4] = std::to_string(cell.n_treated);
    row[5] = std::to_string(cell.n_control);
  }
  write_table(file, table, delimiter, header_comment);
}

}  // namespace evpanel
