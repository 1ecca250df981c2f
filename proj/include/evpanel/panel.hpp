#pragma once

// Long-format unit-by-period panel with two event anchors per unit: a shock
// date (first acute event) and an adoption date (absorbing program entry).
// Cells are stored column-oriented and sorted by (unit, period); outcomes and
// covariates are dense vectors with NaN marking missing values.

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "evpanel/errors.hpp"
#include "evpanel/types.hpp"

namespace evpanel {

// Sentinel cohort for units that never adopt. Units whose adoption date lies
// beyond the observed window keep their literal (finite) date, so the two
// cases stay distinguishable.
inline constexpr int kNeverCohort = std::numeric_limits<int>::max();

enum class Anchor { Shock, Adoption };

struct UnitRecord {
  std::string id;
  std::optional<int> shock_period;
  std::optional<int> adoption_period;  // absorbing: treated for all t >= this
  std::string district;
  std::string provider;
  std::optional<double> sex;
  std::optional<double> age;
  std::optional<int> comorbidity;  // integer score in [1, 6]
  std::optional<int> deprivation;  // integer quintile in [1, 5]
};

class PanelDataset {
 public:
  int n_units() const { return static_cast<int>(units_.size()); }
  long n_cells() const { return static_cast<long>(cell_unit_.size()); }
  int t_min() const { return t_min_; }
  int t_max() const { return t_max_; }

  const std::vector<UnitRecord>& units() const { return units_; }
  const UnitRecord& unit(int idx) const { return units_[idx]; }
  int unit_index(const std::string& id) const;

  const std::vector<int32_t>& cell_unit() const { return cell_unit_; }
  const std::vector<int32_t>& cell_period() const { return cell_period_; }
  const std::vector<uint8_t>& censored() const { return censored_; }
  void set_censored(std::vector<uint8_t> flags);
  const Vector& weights() const { return weights_; }

  const std::vector<std::string>& outcome_names() const {
    return outcome_names_;
  }
  const std::vector<std::string>& covariate_names() const {
    return covariate_names_;
  }
  bool has_outcome(const std::string& name) const;
  bool has_covariate(const std::string& name) const;
  const Vector& outcome(const std::string& name) const;
  const Vector& covariate(const std::string& name) const;

  // Cell index of (unit, period), or -1 when that cell is absent.
  long cell_at(int unit_idx, int period) const;

  // Half-open [first, last) range of cell indices belonging to a unit.
  std::pair<long, long> unit_cells(int unit_idx) const {
    return unit_ranges_[unit_idx];
  }

  std::optional<int> anchor_period(int unit_idx, Anchor anchor) const {
    const UnitRecord& u = units_[unit_idx];
    return anchor == Anchor::Shock ? u.shock_period : u.adoption_period;
  }

 private:
  friend class PanelBuilder;

  std::vector<UnitRecord> units_;
  std::unordered_map<std::string, int> unit_index_;
  std::vector<int32_t> cell_unit_;
  std::vector<int32_t> cell_period_;
  std::vector<uint8_t> censored_;
  Vector weights_;
  std::vector<std::string> outcome_names_;
  std::vector<Vector> outcome_cols_;
  std::vector<std::string> covariate_names_;
  std::vector<Vector> covariate_cols_;
  std::vector<std::pair<long, long>> unit_ranges_;
  int t_min_ = 0;
  int t_max_ = -1;
};

// Incremental construction; build() sorts cells by (unit, period), validates
// uniqueness and weights, and freezes the dataset.
class PanelBuilder {
 public:
  PanelBuilder& outcomes(std::vector<std::string> names);
  PanelBuilder& covariates(std::vector<std::string> names);

  int add_unit(UnitRecord unit);

  // Anchor dates may only be known once every row of a unit has been seen.
  void set_anchors(int unit_idx, std::optional<int> shock,
                   std::optional<int> adoption);

  void add_cell(int unit_idx, int period, const std::vector<double>& outcomes,
                const std::vector<double>& covariates, double weight = 1.0,
                bool censored = false);

  PanelDataset build();

 private:
  PanelDataset panel_;
  std::vector<std::vector<double>> outcome_rows_;
  std::vector<std::vector<double>> covariate_rows_;
  std::vector<double> weight_rows_;
};

// Column mapping for delimited panel files. Empty outcome/covariate lists
// switch on inference: any column not claimed by a fixed role is an outcome,
// unless its name starts with "cov_" (covariate, prefix stripped).
struct PanelSchema {
  std::string unit = "unit";
  std::string period = "period";
  std::string shock = "anchor";
  std::string adoption = "adoption";
  bool adoption_is_indicator = false;  // 0/1 treatment status instead of date
  std::string district = "district";
  std::string provider = "provider";
  std::string sex = "sex";
  std::string age = "age";
  std::string comorbidity = "comorbidity";
  std::string deprivation = "deprivation";
  std::string weight = "weight";
  std::string censored = "censored";
  std::vector<std::string> outcomes;
  std::vector<std::string> covariates;
};

PanelDataset load_panel(const std::string& path,
                        const PanelSchema& schema = {});

// Emits the fixed column order: unit, period, anchor, adoption, outcomes,
// cov_-prefixed covariates, labels, weight, censored.
void save_panel(const PanelDataset& panel, const std::string& path,
                char delimiter = '\t', const std::string& header_comment = "");

// Event time relative to the chosen anchor; throws NoAnchor when the unit
// lacks that anchor date.
int event_time(const PanelDataset& panel, int unit_idx, int period,
               Anchor anchor);

// Adoption-style cohorts under the chosen anchor: the anchor period for
// anchored units, kNeverCohort otherwise.
std::vector<int> unit_cohorts(const PanelDataset& panel, Anchor anchor);
std::map<std::string, int> assign_cohorts(const PanelDataset& panel,
                                          Anchor anchor);

// Calendar quarters encode as year * 4 + (quarter - 1).
inline int quarter_index(int year, int quarter) {
  return year * 4 + (quarter - 1);
}

}  // namespace evpanel
