#include "evpanel/censor.hpp"

#include <algorithm>

namespace evpanel {

CensorMask censor_gap_mask(const PanelDataset& panel) {
  CensorMask mask = CensorMask::all(panel.n_cells());
  for (int u = 0; u < panel.n_units(); ++u) {
    const UnitRecord& unit = panel.unit(u);
    if (!unit.shock_period || !unit.adoption_period) continue;
    const int lo = std::min(*unit.shock_period, *unit.adoption_period);
    const int hi = std::max(*unit.shock_period, *unit.adoption_period);
    if (lo == hi) continue;
    auto [first, last] = panel.unit_cells(u);
    for (long i = first; i < last; ++i) {
      const int t = panel.cell_period()[i];
      if (t >= lo && t < hi) mask.keep[i] = 0;
    }
  }
  return mask;
}

CensorMask censor_gap(PanelDataset& panel) {
  CensorMask mask = censor_gap_mask(panel);
  std::vector<uint8_t> flags(mask.keep.size());
  for (size_t i = 0; i < mask.keep.size(); ++i) flags[i] = mask.keep[i] ? 0 : 1;
  panel.set_censored(std::move(flags));
  return mask;
}

std::vector<CensorReportRow> censor_report(const PanelDataset& panel) {
  std::vector<CensorReportRow> out;
  for (int u = 0; u < panel.n_units(); ++u) {
    const UnitRecord& unit = panel.unit(u);
    if (!unit.shock_period || !unit.adoption_period) continue;
    const int lo = std::min(*unit.shock_period, *unit.adoption_period);
    const int hi = std::max(*unit.shock_period, *unit.adoption_period);
    if (lo == hi) continue;
    CensorReportRow row;
    row.unit = unit.id;
    row.t_shock = *unit.shock_period;
    row.t_adopt = *unit.adoption_period;
    row.drop_from = lo;
    row.drop_to = hi - 1;
    out.push_back(std::move(row));
  }
  return out;
}

std::map<int, long> censor_gap_histogram(const PanelDataset& panel) {
  std::map<int, long> hist;
  for (int u = 0; u < panel.n_units(); ++u) {
    const UnitRecord& unit = panel.unit(u);
    if (!unit.shock_period || !unit.adoption_period) continue;
    const int gap = std::abs(*unit.adoption_period - *unit.shock_period);
    ++hist[gap];
  }
  return hist;
}

}  // namespace evpanel
