#include "evpanel/descriptives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "evpanel/stats.hpp"

namespace evpanel {

namespace {

struct Accum {
  long n = 0;
  double sum = 0.0;
  double sumsq = 0.0;

  void add(double v) {
    ++n;
    sum += v;
    sumsq += v * v;
  }
  double mean() const {
    return n > 0 ? sum / static_cast<double>(n)
                 : std::numeric_limits<double>::quiet_NaN();
  }
  double var() const {  // sample variance
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean();
    return std::max(0.0, (sumsq - static_cast<double>(n) * m * m) /
                             static_cast<double>(n - 1));
  }
  double sd() const { return std::sqrt(var()); }
};

}  // namespace

namespace {

std::vector<TrajectoryPoint> trajectory_points(const std::map<int, Accum>& by_tau,
                                               int window, int span,
                                               double z) {
  const int half = span / 2;
  std::vector<TrajectoryPoint> out;
  for (const auto& [tau, acc] : by_tau) {
    TrajectoryPoint p;
    p.tau = tau;
    p.n = acc.n;
    p.mean_raw = acc.mean();
    // average raw means over the span, clipped to this side of the anchor
    const int lo_t = tau < 0 ? -window : 0;
    const int hi_t = tau < 0 ? -1 : window;
    double sum = 0.0;
    int k = 0;
    for (int t = std::max(tau - half, lo_t); t <= std::min(tau + half, hi_t);
         ++t) {
      auto it = by_tau.find(t);
      if (it == by_tau.end()) continue;
      sum += it->second.mean();
      ++k;
    }
    p.mean_smooth = sum / k;
    const double v = acc.var();
    const double se =
        acc.n >= 2 && std::isfinite(v)
            ? std::sqrt(v / static_cast<double>(acc.n))
            : 0.0;
    p.lo = p.mean_smooth - z * se;
    p.hi = p.mean_smooth + z * se;
    out.push_back(p);
  }
  return out;
}

}  // namespace

std::vector<TrajectorySeries> moving_average_trajectory(
    const PanelDataset& panel, const CensorMask& mask,
    const std::string& outcome, Anchor anchor, int window, int span,
    double level) {
  if (window < 1) throw InvalidSpec("trajectory window must be >= 1");
  if (span < 1 || span % 2 == 0) {
    throw InvalidSpec("smoothing span must be a positive odd number");
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw InvalidSpec("confidence level must lie in (0, 1)");
  }
  if (static_cast<long>(mask.keep.size()) != panel.n_cells()) {
    throw Error("InternalError", "censor mask does not match the panel");
  }

  const Vector& ycol = panel.outcome(outcome);
  std::map<int, Accum> treated, control;
  for (long i = 0; i < panel.n_cells(); ++i) {
    if (!mask.keep[i]) continue;
    if (!std::isfinite(ycol[i])) continue;
    const int u = panel.cell_unit()[i];
    const auto a = panel.anchor_period(u, anchor);
    if (!a) continue;
    const int tau = panel.cell_period()[i] - *a;
    if (tau < -window || tau > window) continue;
    auto& by_tau =
        panel.unit(u).adoption_period.has_value() ? treated : control;
    by_tau[tau].add(ycol[i]);
  }
  if (treated.empty() && control.empty()) {
    throw EmptyGroup("no anchored observations inside the window");
  }

  const double z = norm_ppf(0.5 + 0.5 * level);
  std::vector<TrajectorySeries> out;
  if (!treated.empty()) {
    out.push_back({"treated", trajectory_points(treated, window, span, z)});
  }
  if (!control.empty()) {
    out.push_back({"control", trajectory_points(control, window, span, z)});
  }
  return out;
}

namespace {

struct TwoSampleT {
  double t = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
};

// Equal-variance two-sample t on unit-level values.  A zero pooled standard
// error degenerates to t = 0 when the means agree.
TwoSampleT pooled_t(const Accum& a, const Accum& b) {
  TwoSampleT out;
  if (a.n < 2 || b.n < 2) return out;
  const double df = static_cast<double>(a.n + b.n - 2);
  const double pooled = ((a.n - 1) * a.var() + (b.n - 1) * b.var()) / df;
  const double se = std::sqrt(
      pooled * (1.0 / static_cast<double>(a.n) + 1.0 / static_cast<double>(b.n)));
  const double diff = a.mean() - b.mean();
  if (se > 0.0) {
    out.t = diff / se;
    out.p = student_t_p(out.t, df);
  } else if (diff == 0.0) {
    out.t = 0.0;
    out.p = 1.0;
  }
  return out;
}

}  // namespace

LeniencyResult loo_leniency(const PanelDataset& panel, long min_group) {
  if (min_group < 2) throw InvalidSpec("min_group must be >= 2");

  std::map<std::string, std::pair<long, long>> groups;  // provider -> (n, sum)
  for (int u = 0; u < panel.n_units(); ++u) {
    const UnitRecord& rec = panel.unit(u);
    auto& g = groups[rec.provider];
    ++g.first;
    g.second += rec.adoption_period.has_value() ? 1 : 0;
  }

  LeniencyResult res;
  Accum adopters, non_adopters;
  for (int u = 0; u < panel.n_units(); ++u) {
    const UnitRecord& rec = panel.unit(u);
    const auto& g = groups[rec.provider];
    LeniencyRow row;
    row.unit = rec.id;
    row.provider = rec.provider;
    row.adopts = rec.adoption_period.has_value() ? 1 : 0;
    row.group_size = g.first;
    if (g.first >= 2) {
      row.loo = static_cast<double>(g.second - row.adopts) /
                static_cast<double>(g.first - 1);
      ++res.n_full;
      if (g.first >= min_group) {
        ++res.n_restricted;
        (row.adopts ? adopters : non_adopters).add(*row.loo);
      }
    }
    res.rows.push_back(row);
  }

  res.mean_adopters = adopters.mean();
  res.mean_non_adopters = non_adopters.mean();
  res.sd_adopters = adopters.n >= 2 ? adopters.sd() : 0.0;
  res.sd_non_adopters = non_adopters.n >= 2 ? non_adopters.sd() : 0.0;
  res.diff = res.mean_adopters - res.mean_non_adopters;
  const TwoSampleT tt = pooled_t(adopters, non_adopters);
  res.t_stat = tt.t;
  res.p_value = tt.p;
  return res;
}

namespace {

double smd_of(const Accum& treated, const Accum& control) {
  const double vt = treated.n >= 2 ? treated.var() : 0.0;
  const double vc = control.n >= 2 ? control.var() : 0.0;
  const double diff = treated.mean() - control.mean();
  const double denom = std::sqrt(0.5 * (vt + vc));
  if (denom == 0.0) return diff == 0.0 ? 0.0
                                       : std::numeric_limits<double>::quiet_NaN();
  return diff / denom;
}

}  // namespace

std::vector<BalanceRow> balance_table(const PanelDataset& panel,
                                      const CensorMask& mask,
                                      BaselineFilter filter) {
  if (static_cast<long>(mask.keep.size()) != panel.n_cells()) {
    throw Error("InternalError", "censor mask does not match the panel");
  }

  std::vector<uint8_t> is_treated(panel.n_units(), 0);
  for (int u = 0; u < panel.n_units(); ++u) {
    is_treated[u] = panel.unit(u).adoption_period.has_value() ? 1 : 0;
  }

  auto in_baseline = [&](int u, int t) {
    const UnitRecord& rec = panel.unit(u);
    switch (filter) {
      case BaselineFilter::PreShock:
        return rec.shock_period.has_value() && t < *rec.shock_period;
      case BaselineFilter::PreAdoption:
        return !rec.adoption_period || t < *rec.adoption_period;
      case BaselineFilter::All:
        return true;
    }
    return false;
  };

  std::vector<BalanceRow> out;
  auto push_row = [&](const std::string& name, const Accum& t,
                      const Accum& c) {
    if (t.n == 0 && c.n == 0) return;
    BalanceRow row;
    row.name = name;
    row.n_treated = t.n;
    row.n_control = c.n;
    row.mean_treated = t.mean();
    row.mean_control = c.mean();
    row.sd_treated = t.n >= 2 ? t.sd() : 0.0;
    row.sd_control = c.n >= 2 ? c.sd() : 0.0;
    row.diff = row.mean_treated - row.mean_control;
    row.t_stat = pooled_t(t, c).t;
    row.smd = smd_of(t, c);
    out.push_back(row);
  };

  // unit characteristics
  {
    Accum sex_t, sex_c, age_t, age_c, com_t, com_c, dep_t, dep_c;
    for (int u = 0; u < panel.n_units(); ++u) {
      const UnitRecord& rec = panel.unit(u);
      const bool tr = is_treated[u];
      if (rec.sex) (tr ? sex_t : sex_c).add(*rec.sex);
      if (rec.age) (tr ? age_t : age_c).add(*rec.age);
      if (rec.comorbidity) (tr ? com_t : com_c).add(*rec.comorbidity);
      if (rec.deprivation) (tr ? dep_t : dep_c).add(*rec.deprivation);
    }
    push_row("sex", sex_t, sex_c);
    push_row("age", age_t, age_c);
    push_row("comorbidity", com_t, com_c);
    push_row("deprivation", dep_t, dep_c);
  }

  // per-unit baseline means of each covariate and outcome
  auto column_rows = [&](const std::string& name, const Vector& col) {
    Accum t, c;
    for (int u = 0; u < panel.n_units(); ++u) {
      const auto [lo, hi] = panel.unit_cells(u);
      Accum unit_mean;
      for (long i = lo; i < hi; ++i) {
        if (!mask.keep[i]) continue;
        if (!in_baseline(u, panel.cell_period()[i])) continue;
        if (!std::isfinite(col[i])) continue;
        unit_mean.add(col[i]);
      }
      if (unit_mean.n == 0) continue;
      (is_treated[u] ? t : c).add(unit_mean.mean());
    }
    push_row(name, t, c);
  };
  for (const auto& name : panel.covariate_names()) {
    column_rows(name, panel.covariate(name));
  }
  for (const auto& name : panel.outcome_names()) {
    column_rows(name, panel.outcome(name));
  }
  return out;
}

std::vector<IntakeRow> district_intake(const PanelDataset& panel) {
  std::map<std::pair<std::string, int>, long> counts;
  for (int u = 0; u < panel.n_units(); ++u) {
    const UnitRecord& rec = panel.unit(u);
    if (!rec.adoption_period) continue;
    ++counts[{rec.district, *rec.adoption_period}];
  }
  std::vector<IntakeRow> out;
  out.reserve(counts.size());
  for (const auto& [key, n] : counts) {
    out.push_back({key.first, key.second, n});
  }
  return out;
}

}  // namespace evpanel
