#pragma once

// Descriptive views of an event panel: raw and smoothed outcome trajectories
// around the anchor, leave-one-out provider adoption propensity, covariate
// balance across ever- and never-treated units, and adoption intake counts
// by district.

#include <optional>
#include <string>
#include <vector>

#include "evpanel/censor.hpp"
#include "evpanel/panel.hpp"

namespace evpanel {

struct TrajectoryPoint {
  int tau = 0;
  long n = 0;
  double mean_raw = 0.0;
  double mean_smooth = 0.0;  // moving average that never crosses the anchor
  double lo = 0.0;           // pointwise band around mean_smooth
  double hi = 0.0;
};

struct TrajectorySeries {
  std::string group;  // "treated" (ever-adopting units) or "control"
  std::vector<TrajectoryPoint> points;
};

// Event-time means of an outcome over [-window, window] for ever-adopting and
// never-adopting units separately (a unit contributes when its anchor period
// exists).  Means are smoothed with a centered span-period moving average
// computed separately before and after the anchor so the jump at the event is
// not blurred; bands are the per-event-time normal approximation
// mean_smooth +/- z * sd/sqrt(n).  Event times with no observations are
// omitted; a group with no observations is omitted; nothing to plot at all is
// EmptyGroup.
std::vector<TrajectorySeries> moving_average_trajectory(
    const PanelDataset& panel, const CensorMask& mask,
    const std::string& outcome, Anchor anchor = Anchor::Adoption,
    int window = 12, int span = 3, double level = 0.95);

struct LeniencyRow {
  std::string unit;
  std::string provider;
  int adopts = 0;              // unit ever adopts
  long group_size = 0;         // units sharing the provider
  std::optional<double> loo;   // adoption share among the provider's other
                               // units; absent for single-unit providers
};

struct LeniencyResult {
  std::vector<LeniencyRow> rows;  // every unit, in panel order
  long n_full = 0;        // rows with a defined leave-one-out share
  long n_restricted = 0;  // rows in providers with >= min_group members
  // equal-variance two-sample t comparison of the leave-one-out share
  // between adopters and non-adopters, on the restricted rows
  double mean_adopters = 0.0;
  double mean_non_adopters = 0.0;
  double sd_adopters = 0.0;
  double sd_non_adopters = 0.0;
  double diff = 0.0;
  double t_stat = 0.0;
  double p_value = 0.0;
};

LeniencyResult loo_leniency(const PanelDataset& panel, long min_group = 10);

enum class BaselineFilter {
  PreShock,     // cells strictly before the unit's shock period
  PreAdoption,  // cells strictly before adoption (all cells if never)
  All,
};

struct BalanceRow {
  std::string name;
  long n_treated = 0;  // units contributing on each side
  long n_control = 0;
  double mean_treated = 0.0;
  double mean_control = 0.0;
  double sd_treated = 0.0;
  double sd_control = 0.0;
  double diff = 0.0;    // treated minus control
  double t_stat = 0.0;  // two-sample equal-variance t
  double smd = 0.0;     // diff / pooled standard deviation
};

// One row per unit characteristic and per covariate/outcome baseline mean,
// comparing ever-adopting against never-adopting units.
std::vector<BalanceRow> balance_table(
    const PanelDataset& panel, const CensorMask& mask,
    BaselineFilter filter = BaselineFilter::PreAdoption);

struct IntakeRow {
  std::string district;
  int period = 0;
  long count = 0;  // units in the district adopting in this period
};

std::vector<IntakeRow> district_intake(const PanelDataset& panel);

}  // namespace evpanel
