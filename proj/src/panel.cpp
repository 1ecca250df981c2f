#include "evpanel/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "evpanel/io.hpp"

namespace evpanel {

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

bool parse_int(const std::string& s, int& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

int PanelDataset::unit_index(const std::string& id) const {
  auto it = unit_index_.find(id);
  return it == unit_index_.end() ? -1 : it->second;
}

void PanelDataset::set_censored(std::vector<uint8_t> flags) {
  if (static_cast<long>(flags.size()) != n_cells()) {
    throw Error("InternalError", "censored flag size mismatch");
  }
  censored_ = std::move(flags);
}

bool PanelDataset::has_outcome(const std::string& name) const {
  return std::find(outcome_names_.begin(), outcome_names_.end(), name) !=
         outcome_names_.end();
}

bool PanelDataset::has_covariate(const std::string& name) const {
  return std::find(covariate_names_.begin(), covariate_names_.end(), name) !=
         covariate_names_.end();
}

const Vector& PanelDataset::outcome(const std::string& name) const {
  for (size_t i = 0; i < outcome_names_.size(); ++i) {
    if (outcome_names_[i] == name) return outcome_cols_[i];
  }
  throw MissingColumn("outcome not present: " + name);
}

const Vector& PanelDataset::covariate(const std::string& name) const {
  for (size_t i = 0; i < covariate_names_.size(); ++i) {
    if (covariate_names_[i] == name) return covariate_cols_[i];
  }
  throw MissingColumn("covariate not present: " + name);
}

long PanelDataset::cell_at(int unit_idx, int period) const {
  auto [first, last] = unit_ranges_[unit_idx];
  // cells of a unit are sorted by period
  long lo = first, hi = last;
  while (lo < hi) {
    const long mid = lo + (hi - lo) / 2;
    if (cell_period_[mid] < period) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  if (lo < last && cell_period_[lo] == period) return lo;
  return -1;
}

PanelBuilder& PanelBuilder::outcomes(std::vector<std::string> names) {
  panel_.outcome_names_ = std::move(names);
  return *this;
}

PanelBuilder& PanelBuilder::covariates(std::vector<std::string> names) {
  panel_.covariate_names_ = std::move(names);
  return *this;
}

int PanelBuilder::add_unit(UnitRecord unit) {
  if (panel_.unit_index_.count(unit.id)) {
    throw DuplicateCell("unit added twice: " + unit.id);
  }
  const int idx = static_cast<int>(panel_.units_.size());
  panel_.unit_index_.emplace(unit.id, idx);
  if (unit.comorbidity && (*unit.comorbidity < 1 || *unit.comorbidity > 6)) {
    throw MalformedRow("unit " + unit.id + ": comorbidity outside [1, 6]");
  }
  if (unit.deprivation && (*unit.deprivation < 1 || *unit.deprivation > 5)) {
    throw MalformedRow("unit " + unit.id + ": deprivation outside [1, 5]");
  }
  panel_.units_.push_back(std::move(unit));
  return idx;
}

void PanelBuilder::set_anchors(int unit_idx, std::optional<int> shock,
                               std::optional<int> adoption) {
  if (unit_idx < 0 || unit_idx >= panel_.n_units()) {
    throw Error("InternalError", "set_anchors: unit index out of range");
  }
  panel_.units_[unit_idx].shock_period = shock;
  panel_.units_[unit_idx].adoption_period = adoption;
}

void PanelBuilder::add_cell(int unit_idx, int period,
                            const std::vector<double>& outcomes,
                            const std::vector<double>& covariates,
                            double weight, bool censored) {
  if (unit_idx < 0 || unit_idx >= panel_.n_units()) {
    throw Error("InternalError", "add_cell: unit index out of range");
  }
  if (outcomes.size() != panel_.outcome_names_.size() ||
      covariates.size() != panel_.covariate_names_.size()) {
    throw Error("InternalError", "add_cell: column count mismatch");
  }
  if (!(weight >= 0.0)) {
    throw MalformedRow("unit " + panel_.units_[unit_idx].id + " period " +
                       std::to_string(period) + ": negative weight");
  }
  panel_.cell_unit_.push_back(unit_idx);
  panel_.cell_period_.push_back(period);
  panel_.censored_.push_back(censored ? 1 : 0);
  outcome_rows_.push_back(outcomes);
  covariate_rows_.push_back(covariates);
  weight_rows_.push_back(weight);
}

PanelDataset PanelBuilder::build() {
  const long n = static_cast<long>(panel_.cell_unit_.size());
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    if (panel_.cell_unit_[a] != panel_.cell_unit_[b]) {
      return panel_.cell_unit_[a] < panel_.cell_unit_[b];
    }
    return panel_.cell_period_[a] < panel_.cell_period_[b];
  });

  PanelDataset out;
  out.units_ = std::move(panel_.units_);
  out.unit_index_ = std::move(panel_.unit_index_);
  out.outcome_names_ = panel_.outcome_names_;
  out.covariate_names_ = panel_.covariate_names_;
  out.cell_unit_.resize(n);
  out.cell_period_.resize(n);
  out.censored_.resize(n);
  out.weights_.resize(n);
  out.outcome_cols_.assign(out.outcome_names_.size(), Vector(n));
  out.covariate_cols_.assign(out.covariate_names_.size(), Vector(n));

  for (long i = 0; i < n; ++i) {
    const long src = order[i];
    out.cell_unit_[i] = panel_.cell_unit_[src];
    out.cell_period_[i] = panel_.cell_period_[src];
    out.censored_[i] = panel_.censored_[src];
    out.weights_[i] = weight_rows_[src];
    for (size_t c = 0; c < out.outcome_cols_.size(); ++c) {
      out.outcome_cols_[c][i] = outcome_rows_[src][c];
    }
    for (size_t c = 0; c < out.covariate_cols_.size(); ++c) {
      out.covariate_cols_[c][i] = covariate_rows_[src][c];
    }
  }

  for (long i = 1; i < n; ++i) {
    if (out.cell_unit_[i] == out.cell_unit_[i - 1] &&
        out.cell_period_[i] == out.cell_period_[i - 1]) {
      throw DuplicateCell("unit " + out.units_[out.cell_unit_[i]].id +
                          " period " + std::to_string(out.cell_period_[i]) +
                          " appears more than once");
    }
  }

  out.unit_ranges_.assign(out.units_.size(), {0, 0});
  long pos = 0;
  for (int u = 0; u < out.n_units(); ++u) {
    const long first = pos;
    while (pos < n && out.cell_unit_[pos] == u) ++pos;
    out.unit_ranges_[u] = {first, pos};
  }

  if (n > 0) {
    out.t_min_ = *std::min_element(out.cell_period_.begin(),
                                   out.cell_period_.end());
    out.t_max_ = *std::max_element(out.cell_period_.begin(),
                                   out.cell_period_.end());
  }
  return out;
}

namespace {

struct ColumnMap {
  int unit = -1, period = -1, shock = -1, adoption = -1;
  int district = -1, provider = -1, sex = -1, age = -1;
  int comorbidity = -1, deprivation = -1, weight = -1, censored = -1;
  std::vector<std::pair<std::string, int>> outcomes;
  std::vector<std::pair<std::string, int>> covariates;
};

ColumnMap map_columns(const RawTable& raw, const PanelSchema& schema) {
  ColumnMap cm;
  std::vector<bool> claimed(raw.columns.size(), false);
  auto find = [&](const std::string& name) -> int {
    for (size_t i = 0; i < raw.columns.size(); ++i) {
      if (raw.columns[i] == name && !claimed[i]) {
        claimed[i] = true;
        return static_cast<int>(i);
      }
    }
    return -1;
  };

  cm.unit = find(schema.unit);
  cm.period = find(schema.period);
  if (cm.unit < 0) throw MissingColumn("column not found: " + schema.unit);
  if (cm.period < 0) throw MissingColumn("column not found: " + schema.period);
  cm.shock = find(schema.shock);
  cm.adoption = find(schema.adoption);
  cm.district = find(schema.district);
  cm.provider = find(schema.provider);
  cm.sex = find(schema.sex);
  cm.age = find(schema.age);
  cm.comorbidity = find(schema.comorbidity);
  cm.deprivation = find(schema.deprivation);
  cm.weight = find(schema.weight);
  cm.censored = find(schema.censored);

  if (!schema.outcomes.empty() || !schema.covariates.empty()) {
    for (const auto& name : schema.outcomes) {
      const int idx = find(name);
      if (idx < 0) throw MissingColumn("outcome column not found: " + name);
      cm.outcomes.emplace_back(name, idx);
    }
    for (const auto& name : schema.covariates) {
      int idx = find(name);
      if (idx < 0) idx = find("cov_" + name);
      if (idx < 0) throw MissingColumn("covariate column not found: " + name);
      cm.covariates.emplace_back(name, idx);
    }
  } else {
    for (size_t i = 0; i < raw.columns.size(); ++i) {
      if (claimed[i]) continue;
      const std::string& name = raw.columns[i];
      if (name.rfind("cov_", 0) == 0) {
        cm.covariates.emplace_back(name.substr(4), static_cast<int>(i));
      } else {
        cm.outcomes.emplace_back(name, static_cast<int>(i));
      }
    }
  }
  if (cm.outcomes.empty()) {
    throw MissingColumn("panel file has no outcome column");
  }
  return cm;
}

std::string row_loc(const RawTable& raw, size_t r) {
  return "line " + std::to_string(raw.line_numbers[r]);
}

}  // namespace

PanelDataset load_panel(const std::string& path, const PanelSchema& schema) {
  const RawTable raw = read_delimited(path);
  const ColumnMap cm = map_columns(raw, schema);

  PanelBuilder builder;
  std::vector<std::string> outcome_names, covariate_names;
  for (const auto& [name, idx] : cm.outcomes) outcome_names.push_back(name);
  for (const auto& [name, idx] : cm.covariates) covariate_names.push_back(name);
  builder.outcomes(outcome_names).covariates(covariate_names);

  struct PendingUnit {
    std::optional<int> shock;
    std::optional<int> adoption;
    bool adoption_explicit = false;
    // indicator mode: period -> status, checked for monotonicity at the end
    std::map<int, int> status;
  };
  std::unordered_map<std::string, int> seen;
  std::vector<PendingUnit> pending;
  std::vector<UnitRecord> records;

  auto opt_int = [&](const std::vector<std::string>& row, int col, size_t r,
                     const char* what) -> std::optional<int> {
    if (col < 0 || row[col].empty()) return std::nullopt;
    int v;
    if (!parse_int(row[col], v)) {
      throw MalformedRow(row_loc(raw, r) + ": unparseable " +
                         std::string(what) + " '" + row[col] + "'");
    }
    return v;
  };
  auto opt_double = [&](const std::vector<std::string>& row, int col, size_t r,
                        const char* what) -> std::optional<double> {
    if (col < 0 || row[col].empty()) return std::nullopt;
    double v;
    if (!parse_double(row[col], v)) {
      throw MalformedRow(row_loc(raw, r) + ": unparseable " +
                         std::string(what) + " '" + row[col] + "'");
    }
    return v;
  };

  for (size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    const std::string& unit_id = row[cm.unit];
    if (unit_id.empty()) {
      throw MalformedRow(row_loc(raw, r) + ": empty unit id");
    }
    int period;
    if (!parse_int(row[cm.period], period)) {
      throw MalformedRow(row_loc(raw, r) + ": unparseable period '" +
                         row[cm.period] + "'");
    }

    int uidx;
    auto it = seen.find(unit_id);
    if (it == seen.end()) {
      uidx = static_cast<int>(pending.size());
      seen.emplace(unit_id, uidx);
      pending.emplace_back();
      UnitRecord rec;
      rec.id = unit_id;
      if (cm.district >= 0) rec.district = row[cm.district];
      if (cm.provider >= 0) rec.provider = row[cm.provider];
      rec.sex = opt_double(row, cm.sex, r, "sex");
      rec.age = opt_double(row, cm.age, r, "age");
      rec.comorbidity = opt_int(row, cm.comorbidity, r, "comorbidity");
      rec.deprivation = opt_int(row, cm.deprivation, r, "deprivation");
      records.push_back(rec);
      builder.add_unit(std::move(rec));
    } else {
      uidx = it->second;
    }
    PendingUnit& pu = pending[uidx];

    if (auto shock = opt_int(row, cm.shock, r, "anchor")) {
      if (pu.shock && *pu.shock != *shock) {
        throw MalformedRow(row_loc(raw, r) + ": unit " + unit_id +
                           " has conflicting anchor periods");
      }
      pu.shock = shock;
    }
    if (cm.adoption >= 0) {
      if (schema.adoption_is_indicator) {
        if (auto status = opt_int(row, cm.adoption, r, "adoption")) {
          if (*status != 0 && *status != 1) {
            throw MalformedRow(row_loc(raw, r) +
                               ": adoption indicator must be 0 or 1");
          }
          pu.status[period] = *status;
        }
      } else if (auto adoption = opt_int(row, cm.adoption, r, "adoption")) {
        if (pu.adoption_explicit && pu.adoption != adoption) {
          throw MalformedRow(
              row_loc(raw, r) + ": unit " + unit_id +
              " has conflicting adoption periods (absorbing adoption)");
        }
        pu.adoption = adoption;
        pu.adoption_explicit = true;
      }
    }

    std::vector<double> ovals(cm.outcomes.size(), kNaN);
    for (size_t c = 0; c < cm.outcomes.size(); ++c) {
      if (auto v = opt_double(row, cm.outcomes[c].second, r, "outcome")) {
        ovals[c] = *v;
      }
    }
    std::vector<double> cvals(cm.covariates.size(), kNaN);
    for (size_t c = 0; c < cm.covariates.size(); ++c) {
      if (auto v = opt_double(row, cm.covariates[c].second, r, "covariate")) {
        cvals[c] = *v;
      }
    }
    double weight = 1.0;
    if (auto w = opt_double(row, cm.weight, r, "weight")) weight = *w;
    if (!(weight >= 0.0)) {
      throw MalformedRow(row_loc(raw, r) + ": negative weight");
    }
    bool censored = false;
    if (auto c = opt_int(row, cm.censored, r, "censored")) censored = *c != 0;

    builder.add_cell(uidx, period, ovals, cvals, weight, censored);
  }

  // derive adoption from indicator trajectories and check absorbing treatment
  for (size_t u = 0; u < pending.size(); ++u) {
    PendingUnit& pu = pending[u];
    if (!pu.status.empty()) {
      bool on = false;
      std::optional<int> first_on;
      for (const auto& [t, s] : pu.status) {
        if (on && s == 0) {
          throw MalformedRow("unit " + records[u].id + ": adoption at period " +
                             std::to_string(*first_on) +
                             " followed by non-treatment at period " +
                             std::to_string(t) +
                             " (absorbing-treatment violation)");
        }
        if (s == 1 && !on) {
          on = true;
          first_on = t;
        }
      }
      pu.adoption = first_on;
    }
    builder.set_anchors(static_cast<int>(u), pu.shock, pu.adoption);
  }

  return builder.build();
}

void save_panel(const PanelDataset& panel, const std::string& path,
                char delimiter, const std::string& header_comment) {
  TextTable table;
  table.columns = {"unit", "period", "anchor", "adoption"};
  for (const auto& name : panel.outcome_names()) table.columns.push_back(name);
  for (const auto& name : panel.covariate_names()) {
    table.columns.push_back("cov_" + name);
  }
  for (const char* label : {"district", "provider", "sex", "age",
                            "comorbidity", "deprivation", "weight",
                            "censored"}) {
    table.columns.push_back(label);
  }

  auto fmt_opt_int = [](const std::optional<int>& v) {
    return v ? std::to_string(*v) : std::string();
  };
  auto fmt_opt_double = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  auto fmt_value = [](double v) {
    return std::isnan(v) ? std::string() : format_double(v);
  };

  for (long i = 0; i < panel.n_cells(); ++i) {
    auto& row = table.add_row();
    const UnitRecord& u = panel.unit(panel.cell_unit()[i]);
    size_t c = 0;
    row[c++] = u.id;
    row[c++] = std::to_string(panel.cell_period()[i]);
    row[c++] = fmt_opt_int(u.shock_period);
    row[c++] = fmt_opt_int(u.adoption_period);
    for (const auto& name : panel.outcome_names()) {
      row[c++] = fmt_value(panel.outcome(name)[i]);
    }
    for (const auto& name : panel.covariate_names()) {
      row[c++] = fmt_value(panel.covariate(name)[i]);
    }
    row[c++] = u.district;
    row[c++] = u.provider;
    row[c++] = fmt_opt_double(u.sex);
    row[c++] = fmt_opt_double(u.age);
    row[c++] = u.comorbidity ? std::to_string(*u.comorbidity) : std::string();
    row[c++] = u.deprivation ? std::to_string(*u.deprivation) : std::string();
    row[c++] = format_double(panel.weights()[i]);
    row[c++] = panel.censored()[i] ? "1" : "0";
  }
  write_table(path, table, delimiter, header_comment);
}

int event_time(const PanelDataset& panel, int unit_idx, int period,
               Anchor anchor) {
  const auto a = panel.anchor_period(unit_idx, anchor);
  if (!a) {
    throw NoAnchor("unit " + panel.unit(unit_idx).id + " has no " +
                   (anchor == Anchor::Shock ? "shock" : "adoption") +
                   " anchor");
  }
  return period - *a;
}

std::vector<int> unit_cohorts(const PanelDataset& panel, Anchor anchor) {
  std::vector<int> cohorts(panel.n_units(), kNeverCohort);
  for (int u = 0; u < panel.n_units(); ++u) {
    if (auto a = panel.anchor_period(u, anchor)) cohorts[u] = *a;
  }
  return cohorts;
}

std::map<std::string, int> assign_cohorts(const PanelDataset& panel,
                                          Anchor anchor) {
  std::map<std::string, int> out;
  const std::vector<int> cohorts = unit_cohorts(panel, anchor);
  for (int u = 0; u < panel.n_units(); ++u) {
    out.emplace(panel.unit(u).id, cohorts[u]);
  }
  return out;
}

}  // namespace evpanel
