#pragma once

// Transition-gap exclusion. When a unit's shock date and adoption date
// differ, the quarters from the earlier date up to (but not including) the
// later one mix pre- and post-regimes of the two events; those cells are
// flagged and every downstream computation skips them. A cell survives iff
//   t < min(T_shock, T_adopt)  or  t >= max(T_shock, T_adopt).
// Units with at most one anchor, or identical anchors, keep all cells.
// Flagged cells are masked, never deleted, so estimates are invariant to
// whatever values the masked cells hold.

#include <map>
#include <string>
#include <vector>

#include "evpanel/panel.hpp"

namespace evpanel {

struct CensorMask {
  std::vector<uint8_t> keep;  // aligned with panel cell order

  long n_dropped() const {
    long n = 0;
    for (uint8_t k : keep) n += k ? 0 : 1;
    return n;
  }

  static CensorMask all(long n_cells) {
    CensorMask m;
    m.keep.assign(n_cells, 1);
    return m;
  }
};

// Computes the mask and mirrors it into the panel's censored flags.
CensorMask censor_gap(PanelDataset& panel);

// Mask without touching the panel (for read-only pipelines).
CensorMask censor_gap_mask(const PanelDataset& panel);

struct CensorReportRow {
  std::string unit;
  int t_shock = 0;
  int t_adopt = 0;
  int drop_from = 0;  // first excluded period
  int drop_to = 0;    // last excluded period
};

// One row per unit with a nonempty excluded window.
std::vector<CensorReportRow> censor_report(const PanelDataset& panel);

// Gap length |T_adopt - T_shock| -> number of units, over units carrying
// both anchors.
std::map<int, long> censor_gap_histogram(const PanelDataset& panel);

}  // namespace evpanel
