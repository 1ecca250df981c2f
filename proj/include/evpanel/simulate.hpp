#pragma once

// Synthetic staggered-adoption panel generator with known dynamic treatment
// effects. A latent health stock follows
//   h[t+1] = lambda_h * h[t] + xi * n[t] + u[t],   |lambda_h| < 1,
// where n[t] is the absorbing adoption indicator. Outcomes load linearly on
// the stock and on the indicator, so the true event-time coefficient of an
// outcome with loadings (on_health, on_program) at exposure k >= 0 is
//   beta_k = on_program + on_health * xi * (1 - lambda_h^k) / (1 - lambda_h),
// with beta_k = 0 for k < 0 (no anticipation) and the long-run limit
//   beta_inf = on_program + on_health * xi / (1 - lambda_h).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evpanel/panel.hpp"
#include "evpanel/types.hpp"

namespace evpanel {

struct OutcomeLoading {
  std::string name;
  double on_health = 0.0;   // multiplies the latent stock
  double on_program = 0.0;  // direct loading on the adoption indicator
};

struct StructuralParams {
  double lambda_h = 0.5;  // stock persistence, must satisfy |lambda_h| < 1
  double xi = 1.0;        // per-period stock increment while enrolled
  std::map<int, double> lambda_h_by_cohort;
  std::map<int, double> xi_by_cohort;

  std::vector<OutcomeLoading> outcomes;

  // investment index emitted as covariate "investment":
  //   I = alpha_h * h + alpha_n * n + v
  double alpha_h = 0.0;
  double alpha_n = 0.0;

  double sd_u = 0.0;    // stock shock
  double sd_v = 0.0;    // investment shock
  double sd_eps = 0.0;  // outcome noise
  double fe_unit_sd = 0.0;
  double fe_time_sd = 0.0;

  // threshold latent outcomes into {0,1}; unset keeps them linear
  std::optional<double> binary_cut;

  // label generation for descriptive tooling
  int n_districts = 4;
  int n_providers = 40;
  double provider_hazard_sd = 0.0;  // lognormal spread of adoption hazard

  double lambda_for(int cohort) const;
  double xi_for(int cohort) const;
  void validate() const;
};

// Deterministic stock response k periods after adoption (zero before).
double health_path(double lambda_h, double xi, long k);
double health_path(const StructuralParams& params, long k);

struct TruthProfile {
  struct Path {
    std::string outcome;
    Vector beta;  // beta[k] for exposure k = 0..horizon
    double beta_inf = 0.0;
  };
  std::vector<Path> paths;
  int horizon = 0;

  const Path& for_outcome(const std::string& name) const;
};

// Truth under the default (non-overridden) parameter group.
TruthProfile true_event_coefficients(const StructuralParams& params,
                                     int horizon);
// Truth under a specific cohort's parameter overrides.
TruthProfile true_event_coefficients_for_cohort(const StructuralParams& params,
                                                int cohort, int horizon);

struct AnchorProcess {
  enum class Kind { None, Fixed, Uniform };
  Kind kind = Kind::None;
  int fixed = 0;
  int lo = 0, hi = 0;

  static AnchorProcess none() { return {}; }
  static AnchorProcess at(int period) {
    return {Kind::Fixed, period, 0, 0};
  }
  static AnchorProcess uniform(int lo, int hi) {
    return {Kind::Uniform, 0, lo, hi};
  }
};

struct AdoptionProcess {
  enum class Kind { FixedList, Geometric };
  Kind kind = Kind::FixedList;
  // FixedList: unit i adopts at periods[i % periods.size()]; a list as long
  // as the unit count therefore assigns per unit.
  std::vector<int> periods;
  // Geometric: from `start`, adopt each period with probability `hazard`.
  double hazard = 0.0;
  int start = 0;
  bool start_relative_to_shock = false;
  // Either way, a unit never adopts with probability never_prob.
  double never_prob = 0.0;

  static AdoptionProcess list(std::vector<int> periods, double never_prob = 0) {
    AdoptionProcess p;
    p.kind = Kind::FixedList;
    p.periods = std::move(periods);
    p.never_prob = never_prob;
    return p;
  }
  static AdoptionProcess geometric(double hazard, int start,
                                   double never_prob = 0,
                                   bool relative_to_shock = false) {
    AdoptionProcess p;
    p.kind = Kind::Geometric;
    p.hazard = hazard;
    p.start = start;
    p.never_prob = never_prob;
    p.start_relative_to_shock = relative_to_shock;
    return p;
  }
  void validate() const;
};

struct SimResult {
  PanelDataset panel;
  TruthProfile truth;
};

// Balanced panel over [t_min, t_max]. Each unit's draws come from a stream
// keyed by (seed, unit index), so identical seeds reproduce bit-identical
// panels regardless of generation order. The returned truth is the default-
// group profile; with cohort overrides it is the adopter-share-weighted
// average of the per-cohort profiles.
SimResult simulate_panel(const StructuralParams& params, int n_units,
                         int t_min, int t_max, uint64_t seed,
                         const AnchorProcess& shock,
                         const AdoptionProcess& adoption,
                         int truth_horizon = -1);

void save_truth(const TruthProfile& truth, const std::string& path,
                char delimiter = '\t', const std::string& header_comment = "");

}  // namespace evpanel
