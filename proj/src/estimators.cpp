#include "evpanel/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>

#include "evpanel/io.hpp"
#include "evpanel/stats.hpp"

namespace evpanel {

void EventStudySpec::validate() const {
  if (leads < 1 || lags < 1) {
    throw InvalidSpec("window needs at least one lead and one lag");
  }
  if (pool_leads < 0 || pool_lags < 0) {
    throw InvalidSpec("endpoint accumulation widths must be >= 0");
  }
  if (reference < window_lo() - 1 || reference > window_hi()) {
    throw InvalidSpec("reference event time lies outside the window [" +
                      std::to_string(window_lo() - 1) + ", " +
                      std::to_string(window_hi()) + "]");
  }
  if (reference == 0 && !allow_zero_reference) {
    throw InvalidSpec(
        "normalizing at event time 0 discards the impact period; set "
        "allow_zero_reference to override");
  }
  if (cs_base_offset < 1) {
    throw InvalidSpec("cs_base_offset must be at least 1");
  }
  if (!(demean.tol > 0.0) || demean.max_iter < 1) {
    throw InvalidSpec("demeaning tolerance and iteration cap must be positive");
  }
}

std::string EventTimeBin::label() const {
  switch (kind) {
    case Kind::PooledPre:
      return "<=" + std::to_string(tau);
    case Kind::PooledPost:
      return ">=" + std::to_string(tau);
    case Kind::Exact:
      break;
  }
  return std::to_string(tau);
}

int CoefficientPath::find_exact(int tau) const {
  for (int i = 0; i < size(); ++i) {
    if (event_times[i].kind == EventTimeBin::Kind::Exact &&
        event_times[i].tau == tau) {
      return i;
    }
  }
  return -1;
}

int CoefficientPath::find_pooled_post() const {
  for (int i = 0; i < size(); ++i) {
    if (event_times[i].kind == EventTimeBin::Kind::PooledPost) return i;
  }
  return -1;
}

namespace {

constexpr double kPropensityEps = 0.005;

struct Bins {
  std::vector<EventTimeBin> bins;  // [pooled pre, exacts..., pooled post]
  int ref = -1;

  int index_of(int tau) const {
    const int lo = bins.front().tau;
    const int hi = bins.back().tau;
    if (tau <= lo) return 0;
    if (tau >= hi) return static_cast<int>(bins.size()) - 1;
    return 1 + (tau - (lo + 1));
  }
};

Bins make_bins(const EventStudySpec& spec) {
  Bins b;
  b.bins.push_back({spec.window_lo() - 1, EventTimeBin::Kind::PooledPre});
  for (int tau = spec.window_lo(); tau < spec.window_hi(); ++tau) {
    b.bins.push_back({tau, EventTimeBin::Kind::Exact});
  }
  b.bins.push_back({spec.window_hi(), EventTimeBin::Kind::PooledPost});
  b.ref = b.index_of(spec.reference);
  return b;
}

// Support rule shared by the regression estimators: an exact bin without
// observations is an error, a pooled endpoint bin without support is dropped
// with a warning (the window simply extends past the data), and the reference
// bin must always be identified. Returns the full->active index map (-1 for
// dropped bins) and appends the surviving bins to `active`.
std::vector<int> prune_bins(const Bins& layout,
                            const std::vector<double>& support,
                            std::vector<EventTimeBin>& active,
                            std::vector<std::string>& warnings) {
  const int nfull = static_cast<int>(layout.bins.size());
  std::vector<int> active_of(nfull, -1);
  for (int b = 0; b < nfull; ++b) {
    const EventTimeBin& bin = layout.bins[b];
    const bool pooled = bin.kind != EventTimeBin::Kind::Exact;
    if (support[b] == 0.0) {
      if (b == layout.ref) {
        if (pooled) {
          throw InvalidSpec("the pooled reference bin " + bin.label() +
                            " has no observations; shrink the window or move "
                            "the reference");
        }
        throw EmptyEventTime("the reference event time " + bin.label() +
                             " has no observations");
      }
      if (!pooled) {
        throw EmptyEventTime("no observations identify event time " +
                             bin.label());
      }
      warnings.push_back("pooled bin " + bin.label() +
                         " has no observations and is dropped");
      continue;
    }
    active_of[b] = static_cast<int>(active.size());
    active.push_back(bin);
  }
  return active_of;
}

struct LabelCodes {
  std::vector<int32_t> district;  // per unit
  std::vector<int32_t> provider;
};

LabelCodes label_codes(const PanelDataset& panel) {
  LabelCodes lc;
  lc.district.resize(panel.n_units());
  lc.provider.resize(panel.n_units());
  std::map<std::string, int32_t> dmap, pmap;
  for (int u = 0; u < panel.n_units(); ++u) {
    auto d = dmap.emplace(panel.unit(u).district,
                          static_cast<int32_t>(dmap.size()));
    lc.district[u] = d.first->second;
    auto p = pmap.emplace(panel.unit(u).provider,
                          static_cast<int32_t>(pmap.size()));
    lc.provider[u] = p.first->second;
  }
  return lc;
}

std::string fe_name(FeDim dim) {
  switch (dim) {
    case FeDim::Unit: return "unit";
    case FeDim::Period: return "period";
    case FeDim::DistrictPeriod: return "district_period";
    case FeDim::Provider: return "provider";
  }
  return "?";
}

struct Sample {
  std::vector<long> cells;  // panel cell indices
  std::vector<int> unit;
  std::vector<int> period;
  Vector y;
  Vector w;
  std::vector<int> cohort_of_unit;  // per panel unit

  long size() const { return static_cast<long>(cells.size()); }

  void keep_if(const std::vector<uint8_t>& keep) {
    long out = 0;
    for (long r = 0; r < size(); ++r) {
      if (!keep[r]) continue;
      cells[out] = cells[r];
      unit[out] = unit[r];
      period[out] = period[r];
      y[out] = y[r];
      w[out] = w[r];
      ++out;
    }
    cells.resize(out);
    unit.resize(out);
    period.resize(out);
    y.conservativeResize(out);
    w.conservativeResize(out);
  }
};

Sample build_sample(const PanelDataset& panel, const CensorMask& mask,
                    const EventStudySpec& spec, const std::string& outcome) {
  if (static_cast<long>(mask.keep.size()) != panel.n_cells()) {
    throw Error("InternalError", "censor mask does not match the panel");
  }
  const Vector& ycol = panel.outcome(outcome);
  std::vector<const Vector*> covs;
  for (const auto& name : spec.covariates) {
    covs.push_back(&panel.covariate(name));
  }
  Sample s;
  s.cohort_of_unit = unit_cohorts(panel, spec.anchor);
  for (long i = 0; i < panel.n_cells(); ++i) {
    if (!mask.keep[i]) continue;
    if (!std::isfinite(ycol[i])) continue;
    bool complete = true;
    for (const Vector* c : covs) {
      if (!std::isfinite((*c)[i])) {
        complete = false;
        break;
      }
    }
    if (!complete) continue;
    s.cells.push_back(i);
    s.unit.push_back(panel.cell_unit()[i]);
    s.period.push_back(panel.cell_period()[i]);
  }
  const long n = s.size();
  s.y.resize(n);
  s.w.resize(n);
  for (long r = 0; r < n; ++r) {
    s.y[r] = ycol[s.cells[r]];
    s.w[r] = panel.weights()[s.cells[r]];
  }
  return s;
}

std::vector<int32_t> dim_codes(const PanelDataset& panel, const Sample& s,
                               FeDim dim, const LabelCodes& lc) {
  std::vector<int32_t> codes(s.cells.size());
  const int32_t periods = panel.t_max() - panel.t_min() + 1;
  for (long r = 0; r < s.size(); ++r) {
    switch (dim) {
      case FeDim::Unit:
        codes[r] = s.unit[r];
        break;
      case FeDim::Period:
        codes[r] = s.period[r] - panel.t_min();
        break;
      case FeDim::Provider:
        codes[r] = lc.provider[s.unit[r]];
        break;
      case FeDim::DistrictPeriod:
        codes[r] = lc.district[s.unit[r]] * periods +
                   (s.period[r] - panel.t_min());
        break;
    }
  }
  return codes;
}

std::vector<Grouping> fe_groupings(const PanelDataset& panel, const Sample& s,
                                   const EventStudySpec& spec,
                                   const LabelCodes& lc) {
  std::vector<Grouping> out;
  for (FeDim dim : spec.fixed_effects) {
    out.push_back(make_grouping(fe_name(dim), dim_codes(panel, s, dim, lc)));
  }
  return out;
}

void fill_covariates(const PanelDataset& panel, const Sample& s,
                     const EventStudySpec& spec, Matrix& X, int first_col) {
  for (size_t c = 0; c < spec.covariates.size(); ++c) {
    const Vector& col = panel.covariate(spec.covariates[c]);
    for (long r = 0; r < s.size(); ++r) {
      X(r, first_col + static_cast<int>(c)) = col[s.cells[r]];
    }
  }
}

void attach_diagnostics(CoefficientPath& path) {
  try {
    path.pretrend_p = pretrend_test(path);
  } catch (const Error&) {
    path.pretrend_p = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    path.leveloff_p = leveling_off_test(path);
  } catch (const Error&) {
    path.leveloff_p = std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

CoefficientPath twfe_event_study(const PanelDataset& panel,
                                 const CensorMask& mask,
                                 const EventStudySpec& spec,
                                 const std::string& outcome) {
  spec.validate();
  Sample s = build_sample(panel, mask, spec, outcome);
  if (s.size() == 0) {
    throw EmptySample("no usable observations for outcome " + outcome);
  }

  bool any_anchored = false;
  std::set<int> distinct;
  for (long r = 0; r < s.size(); ++r) {
    const int g = s.cohort_of_unit[s.unit[r]];
    distinct.insert(g);
    any_anchored = any_anchored || g != kNeverCohort;
  }
  if (!any_anchored) {
    throw CollinearDesign(
        "no unit in the sample ever receives the event; event-time effects "
        "are unidentified");
  }
  if (distinct.size() < 2) {
    throw CollinearDesign(
        "a single adoption cohort with no comparison group leaves event-time "
        "effects collinear with period effects");
  }

  const Bins layout = make_bins(spec);
  const int nfull = static_cast<int>(layout.bins.size());
  const long n = s.size();

  std::vector<double> support(nfull, 0.0);
  std::vector<int> row_bin(n, -1);  // full-layout bin per anchored row
  double ref_sum = 0.0;
  long ref_n = 0;
  for (long r = 0; r < n; ++r) {
    const int g = s.cohort_of_unit[s.unit[r]];
    if (g == kNeverCohort) continue;
    const int b = layout.index_of(s.period[r] - g);
    row_bin[r] = b;
    if (s.w[r] > 0.0) support[b] += 1.0;
    if (b == layout.ref) {
      ref_sum += s.y[r];
      ++ref_n;
    }
  }

  CoefficientPath path;
  std::vector<EventTimeBin> act;
  const std::vector<int> active_of =
      prune_bins(layout, support, act, path.warnings);
  const int nb = static_cast<int>(act.size());
  const int ref = active_of[layout.ref];
  const int ncov = static_cast<int>(spec.covariates.size());

  Matrix X = Matrix::Zero(n, nb - 1 + ncov);
  std::vector<std::string> names;
  std::vector<int> col_of_bin(nb, -1);
  {
    int c = 0;
    for (int b = 0; b < nb; ++b) {
      if (b == ref) continue;
      col_of_bin[b] = c;
      names.push_back("tau" + act[b].label());
      ++c;
    }
    for (const auto& nm : spec.covariates) names.push_back(nm);
  }

  // A unit that never reaches the event is, at every t, maximally far before
  // it: it loads on the pooled pre bin when that bin exists (the loading is
  // absorbed by its unit effect, so estimates are unchanged either way).
  const int never_bin = active_of[0];
  for (long r = 0; r < n; ++r) {
    const int b = row_bin[r] >= 0 ? active_of[row_bin[r]] : never_bin;
    if (b >= 0 && col_of_bin[b] >= 0) X(r, col_of_bin[b]) = 1.0;
  }
  fill_covariates(panel, s, spec, X, nb - 1);

  const LabelCodes lc = label_codes(panel);
  FeModelOptions options;
  options.demean = spec.demean;
  RegressionResult res =
      fit_fe_model(std::move(X), s.y, names, s.w,
                   fe_groupings(panel, s, spec, lc),
                   dim_codes(panel, s, spec.cluster_dim, lc), options);

  for (int b = 0; b < nb; ++b) {
    if (b == ref) continue;
    if (!res.kept[col_of_bin[b]]) {
      throw CollinearDesign("event-time column " + act[b].label() +
                            " is collinear with the absorbed effects");
    }
  }

  path.event_times = act;
  path.reference_index = ref;
  path.reference_period = act[ref].tau;
  path.estimates = Vector::Zero(nb);
  path.ses = Vector::Zero(nb);
  path.n_obs.resize(nb, 0.0);
  for (int b = 0; b < nfull; ++b) {
    if (active_of[b] >= 0) path.n_obs[active_of[b]] = support[b];
  }
  path.vcov = Matrix::Zero(nb - 1, nb - 1);
  for (int b = 0; b < nb; ++b) {
    if (b == ref) continue;
    path.estimates[b] = res.coefficients[col_of_bin[b]];
    path.ses[b] = res.se(col_of_bin[b]);
    for (int b2 = 0; b2 < nb; ++b2) {
      if (b2 == ref) continue;
      path.vcov(path.vcov_index(b), path.vcov_index(b2)) =
          res.vcov(col_of_bin[b], col_of_bin[b2]);
    }
  }
  path.reference_mean = ref_n > 0 ? ref_sum / ref_n : 0.0;
  attach_diagnostics(path);
  return path;
}

CoefficientPath sun_abraham(const PanelDataset& panel, const CensorMask& mask,
                            const EventStudySpec& spec,
                            const std::string& outcome) {
  spec.validate();
  if (spec.control_group == ControlGroup::NotYetTreated) {
    throw InvalidSpec(
        "the interaction-weighted estimator needs a fixed control cohort: "
        "use never_treated or last_treated");
  }
  Sample s = build_sample(panel, mask, spec, outcome);
  if (s.size() == 0) {
    throw EmptySample("no usable observations for outcome " + outcome);
  }

  std::set<int> finite;
  bool has_never = false;
  for (long r = 0; r < s.size(); ++r) {
    const int g = s.cohort_of_unit[s.unit[r]];
    if (g == kNeverCohort) {
      has_never = true;
    } else {
      finite.insert(g);
    }
  }

  std::vector<int> treated;
  if (spec.control_group == ControlGroup::NeverTreated) {
    if (!has_never) {
      throw NoControlCohort(
          "no never-treated units are available as the control cohort");
    }
    treated.assign(finite.begin(), finite.end());
  } else {  // LastTreated
    if (finite.empty()) {
      throw NoControlCohort("no adopting cohort exists");
    }
    const int g_ctrl = *finite.rbegin();
    for (int g : finite) {
      if (g != g_ctrl) treated.push_back(g);
    }
    if (treated.empty()) {
      throw NoControlCohort(
          "only one adopting cohort: nothing remains once the latest cohort "
          "is reserved as control");
    }
    // the control cohort must never be observed treated
    std::vector<uint8_t> keep(s.size(), 0);
    for (long r = 0; r < s.size(); ++r) keep[r] = s.period[r] < g_ctrl;
    s.keep_if(keep);
    if (s.size() == 0) {
      throw EmptySample("restricting to periods before the control cohort's "
                        "adoption leaves no observations");
    }
  }
  if (treated.empty()) {
    throw NoControlCohort("no treated cohorts to estimate");
  }

  const Bins layout = make_bins(spec);
  const int nfull = static_cast<int>(layout.bins.size());
  const long n = s.size();

  std::map<int, int> cohort_slot;
  for (size_t i = 0; i < treated.size(); ++i) {
    cohort_slot[treated[i]] = static_cast<int>(i);
  }
  const int ng = static_cast<int>(treated.size());

  // per (cohort, bin) counts over the kept sample
  Matrix counts = Matrix::Zero(ng, nfull);
  std::vector<int> row_slot(n, -1), row_bin(n, -1);
  double ref_sum = 0.0;
  long ref_n = 0;
  for (long r = 0; r < n; ++r) {
    const int g = s.cohort_of_unit[s.unit[r]];
    auto it = cohort_slot.find(g);
    if (it == cohort_slot.end()) continue;
    const int b = layout.index_of(s.period[r] - g);
    row_slot[r] = it->second;
    row_bin[r] = b;
    if (s.w[r] > 0.0) counts(it->second, b) += 1.0;
    if (b == layout.ref) {
      ref_sum += s.y[r];
      ++ref_n;
    }
  }

  std::vector<double> support(nfull, 0.0);
  for (int b = 0; b < nfull; ++b) support[b] = counts.col(b).sum();

  CoefficientPath path;
  std::vector<EventTimeBin> act;
  const std::vector<int> active_of =
      prune_bins(layout, support, act, path.warnings);
  const int nb = static_cast<int>(act.size());
  const int ref = active_of[layout.ref];
  std::vector<int> full_of(nb, -1);
  for (int b = 0; b < nfull; ++b) {
    if (active_of[b] >= 0) full_of[active_of[b]] = b;
  }

  struct InteractionCell {
    int gslot = 0;
    int bin = 0;  // active bin index
    int col = 0;
    double n = 0.0;
  };
  std::vector<InteractionCell> cells;
  for (int gi = 0; gi < ng; ++gi) {
    for (int b = 0; b < nb; ++b) {
      if (b == ref) continue;
      if (counts(gi, full_of[b]) == 0.0) {
        path.warnings.push_back(
            "cohort " + std::to_string(treated[gi]) +
            " has no observations at event time " + act[b].label() +
            "; its weight is redistributed");
        continue;
      }
      cells.push_back({gi, b, -1, counts(gi, full_of[b])});
    }
  }

  const bool with_covs =
      spec.covariates_in_interactions && !spec.covariates.empty();
  const int ncov = with_covs ? static_cast<int>(spec.covariates.size()) : 0;
  Matrix X = Matrix::Zero(n, static_cast<long>(cells.size()) + ncov);
  std::vector<std::string> names;
  for (size_t c = 0; c < cells.size(); ++c) {
    cells[c].col = static_cast<int>(c);
    names.push_back("g" + std::to_string(treated[cells[c].gslot]) + ":tau" +
                    act[cells[c].bin].label());
  }
  if (with_covs) {
    for (const auto& nm : spec.covariates) names.push_back(nm);
  }

  // column lookup by (gslot, active bin)
  Matrix col_of = Matrix::Constant(ng, nb, -1.0);
  for (const auto& cell : cells) col_of(cell.gslot, cell.bin) = cell.col;
  for (long r = 0; r < n; ++r) {
    if (row_slot[r] < 0) continue;
    const int b = active_of[row_bin[r]];
    if (b < 0) continue;
    const int col = static_cast<int>(col_of(row_slot[r], b));
    if (col >= 0) X(r, col) = 1.0;
  }
  if (with_covs) {
    fill_covariates(panel, s, spec, X, static_cast<int>(cells.size()));
  }

  const LabelCodes lc = label_codes(panel);
  FeModelOptions options;
  options.demean = spec.demean;
  RegressionResult res =
      fit_fe_model(std::move(X), s.y, names, s.w,
                   fe_groupings(panel, s, spec, lc),
                   dim_codes(panel, s, spec.cluster_dim, lc), options);

  // cohort-share aggregation within each relative time
  path.event_times = act;
  path.reference_index = ref;
  path.reference_period = act[ref].tau;
  path.estimates = Vector::Zero(nb);
  path.ses = Vector::Zero(nb);
  path.n_obs.assign(nb, 0.0);
  for (int b = 0; b < nfull; ++b) {
    if (active_of[b] >= 0) path.n_obs[active_of[b]] = support[b];
  }
  path.vcov = Matrix::Zero(nb - 1, nb - 1);

  Matrix A = Matrix::Zero(nb - 1, res.coefficients.size());
  for (int b = 0; b < nb; ++b) {
    if (b == ref) continue;
    double wsum = 0.0;
    for (const auto& cell : cells) {
      if (cell.bin != b) continue;
      if (!res.kept[cell.col]) {
        path.warnings.push_back("interaction cell " + res.names[cell.col] +
                                " was dropped as collinear; its weight is "
                                "redistributed");
        continue;
      }
      wsum += cell.n;
    }
    if (wsum == 0.0) {
      throw CollinearDesign("every cohort cell at event time " +
                            act[b].label() +
                            " is collinear with the absorbed effects");
    }
    double est = 0.0;
    for (const auto& cell : cells) {
      if (cell.bin != b || !res.kept[cell.col]) continue;
      const double w = cell.n / wsum;
      est += w * res.coefficients[cell.col];
      A(path.vcov_index(b), cell.col) = w;
    }
    path.estimates[b] = est;
  }

  path.vcov = A * res.vcov * A.transpose();
  if (spec.sa_weight_vcov) {
    // treat cohort shares as estimated: within-bin dispersion of the cell
    // effects over the multinomial share noise adds variance
    for (int b = 0; b < nb; ++b) {
      if (b == ref) continue;
      double wsum = 0.0, mean = 0.0, mom2 = 0.0;
      for (const auto& cell : cells) {
        if (cell.bin != b || !res.kept[cell.col]) continue;
        wsum += cell.n;
      }
      if (wsum <= 0.0) continue;
      for (const auto& cell : cells) {
        if (cell.bin != b || !res.kept[cell.col]) continue;
        const double w = cell.n / wsum;
        mean += w * res.coefficients[cell.col];
        mom2 += w * res.coefficients[cell.col] * res.coefficients[cell.col];
      }
      const int vi = path.vcov_index(b);
      path.vcov(vi, vi) += std::max(0.0, mom2 - mean * mean) / wsum;
    }
  }
  path.vcov = 0.5 * (path.vcov + path.vcov.transpose()).eval();
  for (int b = 0; b < nb; ++b) {
    if (b == ref) continue;
    const int vi = path.vcov_index(b);
    path.ses[b] = std::sqrt(std::max(0.0, path.vcov(vi, vi)));
  }
  path.reference_mean = ref_n > 0 ? ref_sum / ref_n : 0.0;
  attach_diagnostics(path);
  return path;
}

namespace {

// Logistic score by iteratively reweighted least squares; returns fitted
// probabilities for each row of Z. First-stage estimation error is not
// propagated into the treatment-effect covariance.
Vector logistic_fit(const Matrix& Z, const std::vector<uint8_t>& label) {
  const long n = Z.rows();
  const long k = Z.cols();
  Vector beta = Vector::Zero(k);
  for (int iter = 0; iter < 50; ++iter) {
    Vector eta = Z * beta;
    Vector p(n), wdiag(n);
    for (long i = 0; i < n; ++i) {
      const double e = std::clamp(eta[i], -30.0, 30.0);
      p[i] = 1.0 / (1.0 + std::exp(-e));
      wdiag[i] = std::max(p[i] * (1.0 - p[i]), 1e-10);
    }
    Matrix ZtWZ = Z.transpose() * wdiag.asDiagonal() * Z;
    ZtWZ.diagonal().array() += 1e-10;
    Vector grad(k);
    grad.setZero();
    for (long i = 0; i < n; ++i) {
      grad += (static_cast<double>(label[i]) - p[i]) * Z.row(i).transpose();
    }
    Vector step = ZtWZ.ldlt().solve(grad);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  Vector eta = Z * beta;
  Vector p(n);
  for (long i = 0; i < n; ++i) {
    const double e = std::clamp(eta[i], -30.0, 30.0);
    p[i] = 1.0 / (1.0 + std::exp(-e));
  }
  return p;
}

}  // namespace

GroupTimeATT callaway_santanna(const PanelDataset& panel,
                               const CensorMask& mask,
                               const EventStudySpec& spec,
                               const std::string& outcome,
                               const std::vector<std::string>& ipw_covariates) {
  spec.validate();
  if (spec.control_group == ControlGroup::LastTreated) {
    throw InvalidSpec(
        "the cohort-period grid supports never_treated or not_yet_treated "
        "control groups");
  }
  if (static_cast<long>(mask.keep.size()) != panel.n_cells()) {
    throw Error("InternalError", "censor mask does not match the panel");
  }
  const Vector& ycol = panel.outcome(outcome);
  const std::vector<int> cohorts = unit_cohorts(panel, spec.anchor);

  std::set<int> finite;
  bool has_never = false;
  for (int g : cohorts) {
    if (g == kNeverCohort) {
      has_never = true;
    } else {
      finite.insert(g);
    }
  }
  if (finite.empty()) throw EmptySample("no adopting cohorts in the panel");
  if (spec.control_group == ControlGroup::NeverTreated && !has_never) {
    throw NoControlCohort(
        "no never-treated units are available as the control group");
  }
  const int max_finite = *finite.rbegin();
  const int second_finite = finite.size() > 1
                                ? *std::next(finite.rbegin())
                                : std::numeric_limits<int>::min();

  auto value_at = [&](int u, int t) -> std::optional<double> {
    const long c = panel.cell_at(u, t);
    if (c < 0 || !mask.keep[c]) return std::nullopt;
    const double v = ycol[c];
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  };

  // propensity covariates evaluated at the cohort's base period; plain unit
  // labels are accepted by name
  auto ipw_value = [&](const std::string& name, int u,
                       int base) -> std::optional<double> {
    if (panel.has_covariate(name)) {
      const long c = panel.cell_at(u, base);
      if (c < 0 || !mask.keep[c]) return std::nullopt;
      const double v = panel.covariate(name)[c];
      if (!std::isfinite(v)) return std::nullopt;
      return v;
    }
    const UnitRecord& rec = panel.unit(u);
    if (name == "sex") return rec.sex;
    if (name == "age") return rec.age;
    if (name == "comorbidity") {
      if (!rec.comorbidity) return std::nullopt;
      return static_cast<double>(*rec.comorbidity);
    }
    if (name == "deprivation") {
      if (!rec.deprivation) return std::nullopt;
      return static_cast<double>(*rec.deprivation);
    }
    throw MissingColumn("propensity covariate not present: " + name);
  };

  GroupTimeATT grid;
  grid.base_offset = spec.cs_base_offset;
  grid.control_group = spec.control_group;

  struct PendingCell {
    GroupTimeATT::Cell cell;
    std::vector<std::pair<int, double>> influence;  // (unit, value)
  };
  std::vector<PendingCell> pending;

  for (int g : finite) {
    const int base = g - spec.cs_base_offset;
    if (base < panel.t_min()) {
      grid.warnings.push_back("cohort " + std::to_string(g) +
                              " dropped: its base period precedes the panel");
      continue;
    }
    for (int t = panel.t_min(); t <= panel.t_max(); ++t) {
      if (t == base) continue;
      if (t > base && t < g) continue;  // anticipation window stays out

      const bool not_yet = spec.control_group == ControlGroup::NotYetTreated;
      if (not_yet && !has_never) {
        // the control pool must adopt later than the comparison window and
        // cannot include cohort g itself
        const int last_other = g == max_finite ? second_finite : max_finite;
        if (std::max(t, base) >= last_other) continue;
      }

      std::vector<int> tu, cu;
      std::vector<double> tdy, cdy;
      for (int u = 0; u < panel.n_units(); ++u) {
        const int gu = cohorts[u];
        const bool is_treated = gu == g;
        bool is_control = false;
        if (not_yet) {
          is_control = gu > std::max(t, base);
        } else {
          is_control = gu == kNeverCohort;
        }
        if (!is_treated && !is_control) continue;
        const auto yt = value_at(u, t);
        const auto yb = value_at(u, base);
        if (!yt || !yb) continue;
        if (is_treated) {
          tu.push_back(u);
          tdy.push_back(*yt - *yb);
        } else {
          cu.push_back(u);
          cdy.push_back(*yt - *yb);
        }
      }
      if (tu.empty()) {
        grid.warnings.push_back("cohort " + std::to_string(g) + " period " +
                                std::to_string(t) +
                                " skipped: no treated observations");
        continue;
      }
      if (cu.empty()) {
        throw NoControlObservations("cohort " + std::to_string(g) +
                                    " period " + std::to_string(t) +
                                    " has no control observations");
      }

      // control weights: uniform, or normalized propensity odds
      std::vector<double> cw(cu.size(), 1.0 / static_cast<double>(cu.size()));
      if (!ipw_covariates.empty()) {
        const long m = static_cast<long>(tu.size() + cu.size());
        const long kz = static_cast<long>(ipw_covariates.size()) + 1;
        Matrix Z(m, kz);
        std::vector<uint8_t> label(m, 0);
        bool usable = true;
        for (long i = 0; i < m; ++i) {
          const int u = i < static_cast<long>(tu.size())
                            ? tu[i]
                            : cu[i - static_cast<long>(tu.size())];
          label[i] = i < static_cast<long>(tu.size()) ? 1 : 0;
          Z(i, 0) = 1.0;
          for (size_t c = 0; c < ipw_covariates.size(); ++c) {
            const auto v = ipw_value(ipw_covariates[c], u, base);
            if (!v) {
              usable = false;
              break;
            }
            Z(i, 1 + static_cast<long>(c)) = *v;
          }
          if (!usable) break;
        }
        if (!usable) {
          throw NoControlObservations(
              "cohort " + std::to_string(g) + " period " + std::to_string(t) +
              ": propensity covariates missing for some units");
        }
        const Vector p = logistic_fit(Z, label);
        long offending = 0;
        for (long i = 0; i < m; ++i) {
          if (p[i] < kPropensityEps || p[i] > 1.0 - kPropensityEps) {
            ++offending;
          }
        }
        if (offending > 0) {
          throw PropensityOverlap(
              "propensity scores outside [" + format_double(kPropensityEps) +
              ", " + format_double(1.0 - kPropensityEps) + "] for " +
              format_double(static_cast<double>(offending) /
                            static_cast<double>(m)) +
              " of the cohort " + std::to_string(g) + " period " +
              std::to_string(t) + " sample");
        }
        double odds_sum = 0.0;
        for (size_t j = 0; j < cu.size(); ++j) {
          const double pj = p[tu.size() + j];
          cw[j] = pj / (1.0 - pj);
          odds_sum += cw[j];
        }
        for (double& w : cw) w /= odds_sum;
      }

      const double mean_t =
          std::accumulate(tdy.begin(), tdy.end(), 0.0) /
          static_cast<double>(tdy.size());
      double mean_c = 0.0;
      for (size_t j = 0; j < cdy.size(); ++j) mean_c += cw[j] * cdy[j];

      PendingCell pc;
      pc.cell.cohort = g;
      pc.cell.period = t;
      pc.cell.att = mean_t - mean_c;
      pc.cell.n_treated = static_cast<long>(tu.size());
      pc.cell.n_control = static_cast<long>(cu.size());
      double var = 0.0;
      for (size_t i = 0; i < tu.size(); ++i) {
        const double psi = (tdy[i] - mean_t) / static_cast<double>(tu.size());
        pc.influence.emplace_back(tu[i], psi);
        var += psi * psi;
      }
      for (size_t j = 0; j < cu.size(); ++j) {
        const double psi = -cw[j] * (cdy[j] - mean_c);
        pc.influence.emplace_back(cu[j], psi);
        var += psi * psi;
      }
      pc.cell.se = std::sqrt(var);
      pending.push_back(std::move(pc));
    }
  }

  const int nc = static_cast<int>(pending.size());
  grid.cells.reserve(nc);
  Matrix infl = Matrix::Zero(panel.n_units(), nc);
  for (int c = 0; c < nc; ++c) {
    grid.cells.push_back(pending[c].cell);
    for (const auto& [u, v] : pending[c].influence) infl(u, c) = v;
  }
  grid.vcov = infl.transpose() * infl;
  grid.vcov = 0.5 * (grid.vcov + grid.vcov.transpose()).eval();
  return grid;
}

CoefficientPath aggregate_event_time(const GroupTimeATT& grid, int pool_from,
                                     std::optional<int> pool_pre_from,
                                     int reference) {
  if (grid.cells.empty()) {
    throw EmptySample("cohort-period grid is empty");
  }
  if (pool_pre_from && *pool_pre_from >= pool_from) {
    throw InvalidSpec("pooled bins overlap");
  }

  // map each cell onto its event-time bin
  std::set<int> exact_taus;
  bool any_pre_pool = false, any_post_pool = false;
  for (const auto& cell : grid.cells) {
    const int tau = cell.period - cell.cohort;
    if (tau >= pool_from) {
      any_post_pool = true;
    } else if (pool_pre_from && tau <= *pool_pre_from) {
      any_pre_pool = true;
    } else {
      exact_taus.insert(tau);
    }
  }
  if (exact_taus.count(reference)) {
    throw InvalidSpec("reference event time collides with an estimated cell");
  }
  if (reference >= pool_from || (pool_pre_from && reference <= *pool_pre_from)) {
    throw InvalidSpec("reference event time lies inside a pooled bin");
  }
  exact_taus.insert(reference);

  CoefficientPath path;
  path.warnings = grid.warnings;
  if (any_pre_pool) {
    path.event_times.push_back(
        {*pool_pre_from, EventTimeBin::Kind::PooledPre});
  }
  for (int tau : exact_taus) {
    path.event_times.push_back({tau, EventTimeBin::Kind::Exact});
  }
  if (any_post_pool) {
    path.event_times.push_back({pool_from, EventTimeBin::Kind::PooledPost});
  }

  const int nb = path.size();
  path.reference_index = -1;
  for (int i = 0; i < nb; ++i) {
    if (path.event_times[i].kind == EventTimeBin::Kind::Exact &&
        path.event_times[i].tau == reference) {
      path.reference_index = i;
    }
  }
  path.reference_period = reference;
  path.estimates = Vector::Zero(nb);
  path.ses = Vector::Zero(nb);
  path.n_obs.assign(nb, 0.0);
  path.reference_mean = std::numeric_limits<double>::quiet_NaN();

  auto bin_of = [&](int tau) -> int {
    for (int i = 0; i < nb; ++i) {
      const auto& bin = path.event_times[i];
      switch (bin.kind) {
        case EventTimeBin::Kind::PooledPre:
          if (tau <= bin.tau) return i;
          break;
        case EventTimeBin::Kind::PooledPost:
          if (tau >= bin.tau) return i;
          break;
        case EventTimeBin::Kind::Exact:
          if (tau == bin.tau) return i;
          break;
      }
    }
    return -1;
  };

  const int ncells = static_cast<int>(grid.cells.size());
  Matrix A = Matrix::Zero(nb - 1, ncells);
  std::vector<double> wsum(nb, 0.0);
  for (int c = 0; c < ncells; ++c) {
    const auto& cell = grid.cells[c];
    const int b = bin_of(cell.period - cell.cohort);
    if (b < 0 || b == path.reference_index) continue;
    wsum[b] += static_cast<double>(cell.n_treated);
    path.n_obs[b] += static_cast<double>(cell.n_treated);
  }
  for (int c = 0; c < ncells; ++c) {
    const auto& cell = grid.cells[c];
    const int b = bin_of(cell.period - cell.cohort);
    if (b < 0 || b == path.reference_index || wsum[b] <= 0.0) continue;
    const double w = static_cast<double>(cell.n_treated) / wsum[b];
    path.estimates[b] += w * cell.att;
    A(path.vcov_index(b), c) = w;
  }

  path.vcov = A * grid.vcov * A.transpose();
  path.vcov = 0.5 * (path.vcov + path.vcov.transpose()).eval();
  for (int b = 0; b < nb; ++b) {
    if (b == path.reference_index) continue;
    const int vi = path.vcov_index(b);
    path.ses[b] = std::sqrt(std::max(0.0, path.vcov(vi, vi)));
  }
  attach_diagnostics(path);
  return path;
}

double pretrend_test(const CoefficientPath& path,
                     const std::vector<int>& leads) {
  std::vector<int> sel;
  if (leads.empty()) {
    for (int i = 0; i < path.size(); ++i) {
      if (i == path.reference_index) continue;
      const auto& bin = path.event_times[i];
      if (bin.tau >= 0) continue;
      if (bin.kind == EventTimeBin::Kind::Exact && bin.tau == -1) continue;
      sel.push_back(i);
    }
  } else {
    for (int tau : leads) {
      int found = -1;
      for (int i = 0; i < path.size(); ++i) {
        if (path.event_times[i].tau == tau) {
          found = i;
          break;
        }
      }
      if (found < 0) {
        throw MissingCoefficient("no lead coefficient at event time " +
                                 std::to_string(tau));
      }
      if (found == path.reference_index) {
        throw InvalidSpec("the reference coefficient cannot enter the test");
      }
      sel.push_back(found);
    }
  }
  if (sel.empty()) {
    throw DegenerateRestriction("no lead coefficients to test");
  }

  const int m = static_cast<int>(path.vcov.rows());
  Vector beta = Vector::Zero(m);
  for (int i = 0; i < path.size(); ++i) {
    const int vi = path.vcov_index(i);
    if (vi >= 0) beta[vi] = path.estimates[i];
  }
  Matrix R = Matrix::Zero(static_cast<int>(sel.size()), m);
  for (size_t k = 0; k < sel.size(); ++k) {
    R(static_cast<int>(k), path.vcov_index(sel[k])) = 1.0;
  }
  return wald_test(beta, path.vcov, R, Vector::Zero(sel.size())).p_value;
}

double leveling_off_test(const CoefficientPath& path, int last_k) {
  std::vector<int> posts;
  for (int i = 0; i < path.size(); ++i) {
    if (i == path.reference_index) continue;
    if (path.event_times[i].tau >= 0) posts.push_back(i);
  }
  if (static_cast<int>(posts.size()) > last_k) {
    posts.erase(posts.begin(),
                posts.end() - static_cast<std::ptrdiff_t>(last_k));
  }
  if (posts.size() < 2) {
    throw DegenerateRestriction(
        "leveling-off needs at least two post coefficients");
  }

  const int m = static_cast<int>(path.vcov.rows());
  Vector beta = Vector::Zero(m);
  for (int i = 0; i < path.size(); ++i) {
    const int vi = path.vcov_index(i);
    if (vi >= 0) beta[vi] = path.estimates[i];
  }
  Matrix R = Matrix::Zero(static_cast<int>(posts.size()) - 1, m);
  for (size_t k = 0; k + 1 < posts.size(); ++k) {
    R(static_cast<int>(k), path.vcov_index(posts[k + 1])) = 1.0;
    R(static_cast<int>(k), path.vcov_index(posts[k])) -= 1.0;
  }
  return wald_test(beta, path.vcov, R,
                   Vector::Zero(static_cast<int>(posts.size()) - 1))
      .p_value;
}

}  // namespace evpanel
