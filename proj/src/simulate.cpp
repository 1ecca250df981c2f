#include "evpanel/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "evpanel/io.hpp"
#include "evpanel/rng.hpp"

namespace evpanel {

double StructuralParams::lambda_for(int cohort) const {
  auto it = lambda_h_by_cohort.find(cohort);
  return it == lambda_h_by_cohort.end() ? lambda_h : it->second;
}

double StructuralParams::xi_for(int cohort) const {
  auto it = xi_by_cohort.find(cohort);
  return it == xi_by_cohort.end() ? xi : it->second;
}

void StructuralParams::validate() const {
  auto check_lambda = [](double l) {
    if (!(std::fabs(l) < 1.0)) {
      throw UnstablePersistence("persistence must satisfy |lambda_h| < 1, got " +
                                format_double(l));
    }
  };
  check_lambda(lambda_h);
  for (const auto& [cohort, l] : lambda_h_by_cohort) check_lambda(l);
  if (outcomes.empty()) {
    throw InvalidAdoptionProcess("simulation needs at least one outcome");
  }
  for (double sd : {sd_u, sd_v, sd_eps, fe_unit_sd, fe_time_sd}) {
    if (!(sd >= 0.0)) {
      throw InvalidAdoptionProcess("shock standard deviations must be >= 0");
    }
  }
  if (n_districts < 1 || n_providers < 1) {
    throw InvalidAdoptionProcess("need at least one district and provider");
  }
}

void AdoptionProcess::validate() const {
  if (!(never_prob >= 0.0 && never_prob <= 1.0)) {
    throw InvalidAdoptionProcess("never_prob must lie in [0, 1]");
  }
  if (kind == Kind::FixedList) {
    if (periods.empty() && never_prob < 1.0) {
      throw InvalidAdoptionProcess("fixed-list adoption needs periods");
    }
  } else {
    if (!(hazard > 0.0 && hazard <= 1.0)) {
      throw InvalidAdoptionProcess("geometric hazard must lie in (0, 1]");
    }
  }
}

double health_path(double lambda_h, double xi, long k) {
  if (!(std::fabs(lambda_h) < 1.0)) {
    throw UnstablePersistence("persistence must satisfy |lambda_h| < 1, got " +
                              format_double(lambda_h));
  }
  if (k <= 0) return 0.0;
  return xi * (1.0 - std::pow(lambda_h, static_cast<double>(k))) /
         (1.0 - lambda_h);
}

double health_path(const StructuralParams& params, long k) {
  return health_path(params.lambda_h, params.xi, k);
}

const TruthProfile::Path& TruthProfile::for_outcome(
    const std::string& name) const {
  for (const auto& p : paths) {
    if (p.outcome == name) return p;
  }
  throw MissingColumn("truth profile has no outcome " + name);
}

namespace {

TruthProfile truth_from(const StructuralParams& params, double lambda,
                        double xi, int horizon) {
  TruthProfile truth;
  truth.horizon = horizon;
  for (const auto& o : params.outcomes) {
    TruthProfile::Path path;
    path.outcome = o.name;
    path.beta.resize(horizon + 1);
    for (int k = 0; k <= horizon; ++k) {
      path.beta[k] = o.on_program + o.on_health * health_path(lambda, xi, k);
    }
    path.beta_inf = o.on_program + o.on_health * xi / (1.0 - lambda);
    truth.paths.push_back(std::move(path));
  }
  return truth;
}

}  // namespace

TruthProfile true_event_coefficients(const StructuralParams& params,
                                     int horizon) {
  params.validate();
  return truth_from(params, params.lambda_h, params.xi, horizon);
}

TruthProfile true_event_coefficients_for_cohort(const StructuralParams& params,
                                                int cohort, int horizon) {
  params.validate();
  return truth_from(params, params.lambda_for(cohort), params.xi_for(cohort),
                    horizon);
}

SimResult simulate_panel(const StructuralParams& params, int n_units,
                         int t_min, int t_max, uint64_t seed,
                         const AnchorProcess& shock,
                         const AdoptionProcess& adoption, int truth_horizon) {
  params.validate();
  adoption.validate();
  if (n_units < 1 || t_max < t_min) {
    throw InvalidAdoptionProcess("panel dimensions must be positive");
  }
  if (shock.kind == AnchorProcess::Kind::Uniform && shock.hi < shock.lo) {
    throw InvalidAdoptionProcess("shock window is empty");
  }
  if (adoption.start_relative_to_shock &&
      shock.kind == AnchorProcess::Kind::None) {
    throw InvalidAdoptionProcess(
        "adoption start is relative to a shock that is never drawn");
  }

  const int n_periods = t_max - t_min + 1;
  const int n_outcomes = static_cast<int>(params.outcomes.size());

  // common calendar effects, one stream per outcome so adding an outcome
  // never perturbs the others
  Matrix time_fe = Matrix::Zero(n_periods, n_outcomes);
  if (params.fe_time_sd > 0.0) {
    for (int m = 0; m < n_outcomes; ++m) {
      Rng rng(seed, 0x7133E000ULL + static_cast<uint64_t>(m));
      for (int t = 0; t < n_periods; ++t) {
        time_fe(t, m) = rng.normal(0.0, params.fe_time_sd);
      }
    }
  }

  // provider-level adoption hazard multipliers
  std::vector<double> provider_mult(params.n_providers, 1.0);
  if (params.provider_hazard_sd > 0.0) {
    Rng rng(seed, 0x9120CE55ULL);
    for (auto& m : provider_mult) {
      m = std::exp(rng.normal(0.0, params.provider_hazard_sd));
    }
  }

  std::vector<std::string> outcome_names;
  for (const auto& o : params.outcomes) outcome_names.push_back(o.name);

  PanelBuilder builder;
  builder.outcomes(outcome_names).covariates({"investment"});

  std::vector<int> cohorts(n_units, kNeverCohort);
  for (int u = 0; u < n_units; ++u) {
    Rng rng(seed, 1000 + static_cast<uint64_t>(u));

    UnitRecord rec;
    rec.id = "u" + std::to_string(u);
    const int district = rng.uniform_int(0, params.n_districts - 1);
    const int provider = rng.uniform_int(0, params.n_providers - 1);
    rec.district = "d" + std::to_string(district);
    rec.provider = "p" + std::to_string(provider);
    rec.sex = static_cast<double>(rng.bernoulli(0.5) ? 1 : 0);
    rec.age = 60.0 + rng.uniform() * 35.0;
    rec.comorbidity = rng.uniform_int(1, 6);
    rec.deprivation = rng.uniform_int(1, 5);

    std::optional<int> t_shock;
    switch (shock.kind) {
      case AnchorProcess::Kind::None:
        break;
      case AnchorProcess::Kind::Fixed:
        t_shock = shock.fixed;
        break;
      case AnchorProcess::Kind::Uniform:
        t_shock = rng.uniform_int(shock.lo, shock.hi);
        break;
    }

    std::optional<int> t_adopt;
    if (!rng.bernoulli(adoption.never_prob)) {
      if (adoption.kind == AdoptionProcess::Kind::FixedList) {
        t_adopt = adoption.periods[u % adoption.periods.size()];
      } else {
        double hazard = adoption.hazard * provider_mult[provider];
        hazard = std::clamp(hazard, 1e-9, 1.0);
        const int start = adoption.start_relative_to_shock
                              ? *t_shock + adoption.start
                              : adoption.start;
        t_adopt = start + rng.geometric(hazard);
      }
    }
    rec.shock_period = t_shock;
    rec.adoption_period = t_adopt;
    const int uidx = builder.add_unit(std::move(rec));
    builder.set_anchors(uidx, t_shock, t_adopt);
    cohorts[u] = t_adopt ? *t_adopt : kNeverCohort;

    const int cohort = cohorts[u];
    const double lambda = params.lambda_for(cohort);
    const double xi = params.xi_for(cohort);

    Vector unit_fe = Vector::Zero(n_outcomes);
    if (params.fe_unit_sd > 0.0) {
      for (int m = 0; m < n_outcomes; ++m) {
        unit_fe[m] = rng.normal(0.0, params.fe_unit_sd);
      }
    }

    double h = 0.0;
    for (int t = t_min; t <= t_max; ++t) {
      const double n_it = (t_adopt && t >= *t_adopt) ? 1.0 : 0.0;
      const double v =
          params.sd_v > 0.0 ? rng.normal(0.0, params.sd_v) : 0.0;
      const double invest = params.alpha_h * h + params.alpha_n * n_it + v;

      std::vector<double> yvals(n_outcomes);
      for (int m = 0; m < n_outcomes; ++m) {
        const auto& o = params.outcomes[m];
        double y = unit_fe[m] + time_fe(t - t_min, m) + o.on_health * h +
                   o.on_program * n_it;
        if (params.sd_eps > 0.0) y += rng.normal(0.0, params.sd_eps);
        if (params.binary_cut) y = y >= *params.binary_cut ? 1.0 : 0.0;
        yvals[m] = y;
      }
      builder.add_cell(uidx, t, yvals, {invest});

      const double u_t = params.sd_u > 0.0 ? rng.normal(0.0, params.sd_u) : 0.0;
      h = lambda * h + xi * n_it + u_t;
    }
  }

  if (truth_horizon < 0) truth_horizon = n_periods - 1;

  SimResult out{builder.build(), TruthProfile{}};

  const bool heterogeneous =
      !params.lambda_h_by_cohort.empty() || !params.xi_by_cohort.empty();
  if (!heterogeneous) {
    out.truth = true_event_coefficients(params, truth_horizon);
  } else {
    // adopter-share-weighted average of the per-cohort truths
    std::map<int, long> adopters;
    for (int c : cohorts) {
      if (c != kNeverCohort) ++adopters[c];
    }
    long total = 0;
    for (const auto& [c, n] : adopters) total += n;
    TruthProfile truth;
    truth.horizon = truth_horizon;
    for (const auto& o : params.outcomes) {
      TruthProfile::Path path;
      path.outcome = o.name;
      path.beta = Vector::Zero(truth_horizon + 1);
      path.beta_inf = 0.0;
      truth.paths.push_back(std::move(path));
    }
    for (const auto& [cohort, count] : adopters) {
      const TruthProfile ct =
          true_event_coefficients_for_cohort(params, cohort, truth_horizon);
      const double w = static_cast<double>(count) / static_cast<double>(total);
      for (size_t m = 0; m < truth.paths.size(); ++m) {
        truth.paths[m].beta += w * ct.paths[m].beta;
        truth.paths[m].beta_inf += w * ct.paths[m].beta_inf;
      }
    }
    out.truth = std::move(truth);
  }
  return out;
}

void save_truth(const TruthProfile& truth, const std::string& path,
                char delimiter, const std::string& header_comment) {
  TextTable table;
  table.columns = {"outcome", "event_time", "beta_true"};
  for (const auto& p : truth.paths) {
    for (int k = 0; k <= truth.horizon; ++k) {
      auto& row = table.add_row();
      row[0] = p.outcome;
      row[1] = std::to_string(k);
      row[2] = format_double(p.beta[k]);
    }
    auto& row = table.add_row();
    row[0] = p.outcome;
    row[1] = "inf";
    row[2] = format_double(p.beta_inf);
  }
  write_table(path, table, delimiter, header_comment);
}

}  // namespace evpanel
