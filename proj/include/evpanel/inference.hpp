#pragma once

// Post-treatment summaries of a dynamic coefficient path, sensitivity
// intervals that stay valid when parallel trends fails by at most a multiple
// of the observed pre-event drift, and minimum detectable effects.
//
// The sensitivity model: let delta_k be the bias of the event-time-k
// coefficient relative to the (zero) reference.  The bias sequence starts at
// the reference and moves in steps, each step bounded by M times the largest
// consecutive jump seen along the lead path.  The reported bounds maximize /
// minimize the target functional over all such bias sequences; the interval
// further widens the bounds by a normal critical value times a conservative
// (triangle-inequality) standard error, which makes intervals nested in M by
// construction and reduces to estimate +/- z * se at M = 0.

#include <optional>
#include <vector>

#include "evpanel/errors.hpp"
#include "evpanel/estimators.hpp"
#include "evpanel/types.hpp"

namespace evpanel {

struct PostAverage {
  double estimate = 0.0;
  double se = 0.0;
  int from = 0;  // first and last event times entering the average
  int to = 0;
};

// Equal-weighted average of the exact post coefficients with event time in
// [from, to].  `to` defaults to the largest exact post event time present.
// Throws MissingCoefficient when an event time in the range is absent.
PostAverage average_post_effect(const CoefficientPath& path, int from = 0,
                                std::optional<int> to = std::nullopt);

// Weighted average over an explicit set of exact post event times; weights
// default to equal and must otherwise match `taus` in length.
PostAverage average_post_effect(const CoefficientPath& path,
                                const std::vector<int>& taus,
                                const std::vector<double>& weights = {});

struct HonestOptions {
  int post_from = 0;           // target window start (exact event times)
  std::optional<int> post_to;  // target window end; default: last exact post
  // explicit target event times; overrides [post_from, post_to] when set
  std::vector<int> target_taus;
  // optional custom target weights over the window; default equal
  std::vector<double> target_weights;
  // scale the violation budget by the largest lead level instead of the
  // largest consecutive lead jump
  bool scale_on_levels = false;
};

struct HonestBounds {
  double estimate = 0.0;  // target functional at the point estimates
  double lower = 0.0;     // bias-only bounds (no sampling noise)
  double upper = 0.0;
  double se_target = 0.0;
  double se_step = 0.0;  // se of the lead difference that sets the scale
  double s_pre = 0.0;    // largest consecutive jump along the lead path
  double b_factor = 0.0;  // sum of |cumulative target weights| over steps
  double m = 0.0;
};

struct HonestInterval {
  double lower = 0.0;
  double upper = 0.0;
  double m = 0.0;
  double level = 0.0;
};

HonestBounds honest_rm_bounds(const CoefficientPath& path, double m,
                              const HonestOptions& options = {});

HonestInterval honest_rm_interval(const CoefficientPath& path, double m,
                                  double level = 0.95,
                                  const HonestOptions& options = {});

struct SensitivityResult {
  std::vector<HonestInterval> intervals;  // one per requested m
  std::string target;  // descriptor of the summary functional
  std::string method;  // interval construction tag
};

// One interval per entry of ms (each must be >= 0).
SensitivityResult sensitivity_grid(const CoefficientPath& path,
                                   const std::vector<double>& ms,
                                   double level = 0.95,
                                   const HonestOptions& options = {});

struct MDEResult {
  double se = 0.0;
  double alpha = 0.05;
  double power = 0.80;
  double multiplier = 0.0;  // z_{1-alpha/2} + z_{power}
  double mde = 0.0;         // multiplier * se
};

MDEResult mde(double se, double alpha = 0.05, double power = 0.80);

}  // namespace evpanel
