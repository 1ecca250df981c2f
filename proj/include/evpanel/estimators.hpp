#pragma once

// Staggered-adoption event-study estimators sharing one window convention.
// With G leads, M lags and endpoint accumulation widths (L_G, L_M), the path
// runs over
//   pooled pre bin  tau <= -G-L_G-1,
//   exact bins      tau = -G-L_G .. M+L_M-1,
//   pooled post bin tau >= M+L_M,
// normalized at the reference event time (default -2; -1 is transitional).
//
// twfe_event_study   pooled two-way fixed-effects path over event dummies
// sun_abraham        saturated cohort-by-relative-time regression, aggregated
//                    with cohort-share weights per relative time
// callaway_santanna  cohort-period average-treatment grid built from long
//                    differences against a base period, aggregated to event
//                    time with cohort-size weights

#include <optional>
#include <string>
#include <vector>

#include "evpanel/censor.hpp"
#include "evpanel/fe_solver.hpp"
#include "evpanel/panel.hpp"
#include "evpanel/types.hpp"

namespace evpanel {

enum class EstimatorKind { Twfe, SunAbraham, CallawaySantAnna };
enum class ControlGroup { NeverTreated, NotYetTreated, LastTreated };
enum class FeDim { Unit, Period, DistrictPeriod, Provider };

struct EventStudySpec {
  Anchor anchor = Anchor::Adoption;
  int leads = 5;       // G
  int lags = 5;        // M
  int pool_leads = 0;  // L_G
  int pool_lags = 1;   // L_M
  int reference = -2;
  bool allow_zero_reference = false;

  std::vector<FeDim> fixed_effects = {FeDim::Unit, FeDim::Period};
  std::vector<std::string> covariates;
  FeDim cluster_dim = FeDim::Unit;
  ControlGroup control_group = ControlGroup::NeverTreated;

  int cs_base_offset = 2;  // base period of cohort g is g - cs_base_offset
  bool sa_weight_vcov = false;  // add cohort-share sampling variance
  bool covariates_in_interactions = true;

  DemeanOptions demean;

  int window_lo() const { return -leads - pool_leads; }
  int window_hi() const { return lags + pool_lags; }
  void validate() const;
};

struct EventTimeBin {
  enum class Kind { Exact, PooledPre, PooledPost };
  int tau = 0;
  Kind kind = Kind::Exact;

  std::string label() const;
  bool contains(int t) const {
    switch (kind) {
      case Kind::Exact: return t == tau;
      case Kind::PooledPre: return t <= tau;
      case Kind::PooledPost: return t >= tau;
    }
    return false;
  }
};

struct CoefficientPath {
  std::vector<EventTimeBin> event_times;  // ascending in tau
  Vector estimates;
  Vector ses;
  std::vector<double> n_obs;  // kept anchored observations per bin
  Matrix vcov;                // over bins excluding the reference
  int reference_index = -1;
  int reference_period = 0;
  double reference_mean = 0.0;
  double pretrend_p = std::numeric_limits<double>::quiet_NaN();
  double leveloff_p = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;

  int size() const { return static_cast<int>(event_times.size()); }
  // position in vcov of a path index, -1 for the reference
  int vcov_index(int path_index) const {
    if (path_index == reference_index) return -1;
    return path_index - (path_index > reference_index ? 1 : 0);
  }
  int find_exact(int tau) const;
  int find_pooled_post() const;
};

struct GroupTimeATT {
  struct Cell {
    int cohort = 0;
    int period = 0;
    double att = 0.0;
    double se = 0.0;
    long n_treated = 0;
    long n_control = 0;
  };
  std::vector<Cell> cells;  // ascending (cohort, period)
  Matrix vcov;              // influence-function covariance across cells
  int base_offset = 2;
  ControlGroup control_group = ControlGroup::NeverTreated;
  std::vector<std::string> warnings;
};

CoefficientPath twfe_event_study(const PanelDataset& panel,
                                 const CensorMask& mask,
                                 const EventStudySpec& spec,
                                 const std::string& outcome);

CoefficientPath sun_abraham(const PanelDataset& panel, const CensorMask& mask,
                            const EventStudySpec& spec,
                            const std::string& outcome);

GroupTimeATT callaway_santanna(const PanelDataset& panel,
                               const CensorMask& mask,
                               const EventStudySpec& spec,
                               const std::string& outcome,
                               const std::vector<std::string>& ipw_covariates =
                                   {});

// Collapses a cohort-period grid onto event time. Exact bins cover
// [pool_pre_from + 1, pool_from - 1]; event times at or beyond pool_from
// (resp. at or below pool_pre_from) merge into pooled bins weighted by
// per-cell treated counts. Pass nullopt to skip a pooled side.
CoefficientPath aggregate_event_time(const GroupTimeATT& grid, int pool_from,
                                     std::optional<int> pool_pre_from =
                                         std::nullopt,
                                     int reference = -2);

// Joint Wald p-value that the selected lead coefficients vanish. An empty
// selection defaults to every lead except the reference and tau = -1.
double pretrend_test(const CoefficientPath& path,
                     const std::vector<int>& leads = {});

// Joint Wald p-value that the last `last_k` post coefficients (pooled bin
// included) are pairwise equal.
double leveling_off_test(const CoefficientPath& path, int last_k = 3);

}  // namespace evpanel
