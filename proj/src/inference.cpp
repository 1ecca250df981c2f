#include "evpanel/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "evpanel/stats.hpp"

namespace evpanel {

namespace {

struct TargetInfo {
  std::vector<int> path_idx;  // one per event time in [from, to]
  std::map<int, double> weight_of_tau;
  int from = 0;
  int to = 0;
  double estimate = 0.0;
  double se = 0.0;
  double b_factor = 0.0;
};

// Variance of a linear combination of path coefficients, where the reference
// coefficient is an exact zero.
double combo_variance(const CoefficientPath& path,
                      const std::map<int, double>& coef_of_path_idx) {
  double var = 0.0;
  for (const auto& [i, ci] : coef_of_path_idx) {
    const int vi = path.vcov_index(i);
    if (vi < 0) continue;
    for (const auto& [j, cj] : coef_of_path_idx) {
      const int vj = path.vcov_index(j);
      if (vj < 0) continue;
      var += ci * cj * path.vcov(vi, vj);
    }
  }
  return std::max(0.0, var);
}

TargetInfo resolve_target(const CoefficientPath& path,
                          const HonestOptions& options,
                          bool empty_window_infeasible) {
  TargetInfo t;
  std::vector<int> taus = options.target_taus;
  std::vector<double> w = options.target_weights;
  if (taus.empty()) {
    t.from = options.post_from;
    if (t.from < 0) {
      throw InvalidSpec("the target window must start at event time >= 0");
    }
    if (options.post_to) {
      t.to = *options.post_to;
    } else {
      t.to = -1;
      for (int i = 0; i < path.size(); ++i) {
        const auto& bin = path.event_times[i];
        if (bin.kind == EventTimeBin::Kind::Exact && bin.tau >= t.from) {
          t.to = std::max(t.to, bin.tau);
        }
      }
      if (t.to < t.from) {
        if (empty_window_infeasible) {
          throw InfeasibleLP("the coefficient path has no exact post "
                             "coefficients to bound");
        }
        throw MissingCoefficient("no exact post coefficients at or after "
                                 "event time " + std::to_string(t.from));
      }
    }
    if (t.to < t.from) {
      throw InvalidSpec("target window is empty");
    }
    for (int tau = t.from; tau <= t.to; ++tau) taus.push_back(tau);
  } else {
    std::sort(taus.begin(), taus.end());
    if (std::adjacent_find(taus.begin(), taus.end()) != taus.end()) {
      throw InvalidSpec("target event times must be distinct");
    }
    if (taus.front() < 0) {
      throw InvalidSpec("target event times must be >= 0");
    }
    t.from = taus.front();
    t.to = taus.back();
  }

  if (w.empty()) {
    w.assign(taus.size(), 1.0 / static_cast<double>(taus.size()));
  } else if (w.size() != taus.size()) {
    throw InvalidSpec("target weights must match the target window length");
  }

  std::map<int, double> combo;
  for (size_t k = 0; k < taus.size(); ++k) {
    const int tau = taus[k];
    const int idx = path.find_exact(tau);
    if (idx < 0) {
      throw MissingCoefficient("no coefficient at event time " +
                               std::to_string(tau));
    }
    t.path_idx.push_back(idx);
    t.weight_of_tau[tau] = w[k];
    t.estimate += w[k] * path.estimates[idx];
    combo[idx] += w[k];
  }
  t.se = std::sqrt(combo_variance(path, combo));

  // the bias of event time tau accumulates steps 0..tau, so step j carries
  // the total target weight sitting at or beyond j
  for (int j = 0; j <= t.to; ++j) {
    double cj = 0.0;
    for (const auto& [tau, wk] : t.weight_of_tau) {
      if (tau >= j) cj += wk;
    }
    t.b_factor += std::abs(cj);
  }
  return t;
}

struct LeadScale {
  double s_pre = 0.0;
  double se_step = 0.0;
};

LeadScale lead_scale(const CoefficientPath& path, bool on_levels) {
  // values along the lead path; the reference enters as an exact zero
  std::map<int, int> idx_of_tau;  // exact pre bins only
  for (int i = 0; i < path.size(); ++i) {
    const auto& bin = path.event_times[i];
    if (bin.kind == EventTimeBin::Kind::Exact && bin.tau < 0) {
      idx_of_tau[bin.tau] = i;
    }
  }
  LeadScale out;
  bool found = false;
  if (on_levels) {
    for (const auto& [tau, idx] : idx_of_tau) {
      if (idx == path.reference_index) continue;
      const double level = std::abs(path.estimates[idx]);
      if (!found || level > out.s_pre) {
        found = true;
        out.s_pre = level;
        out.se_step = std::sqrt(combo_variance(path, {{idx, 1.0}}));
      }
    }
    if (!found) {
      throw InfeasibleLP(
          "no lead coefficients are available to scale the violation budget");
    }
    return out;
  }
  for (const auto& [tau, idx] : idx_of_tau) {
    auto next = idx_of_tau.find(tau + 1);
    if (next == idx_of_tau.end()) continue;
    const int a = idx;
    const int b = next->second;
    const double diff =
        std::abs(path.estimates[b] - path.estimates[a]);
    if (!found || diff > out.s_pre) {
      found = true;
      out.s_pre = diff;
      out.se_step = std::sqrt(
          combo_variance(path, {{a, -1.0}, {b, 1.0}}));
    }
  }
  if (!found) {
    throw InfeasibleLP(
        "no consecutive lead differences are available to scale the "
        "violation budget");
  }
  return out;
}

}  // namespace

PostAverage average_post_effect(const CoefficientPath& path, int from,
                                std::optional<int> to) {
  HonestOptions options;
  options.post_from = from;
  options.post_to = to;
  const TargetInfo t = resolve_target(path, options, false);
  PostAverage out;
  out.estimate = t.estimate;
  out.se = t.se;
  out.from = t.from;
  out.to = t.to;
  return out;
}

PostAverage average_post_effect(const CoefficientPath& path,
                                const std::vector<int>& taus,
                                const std::vector<double>& weights) {
  if (taus.empty()) {
    throw InvalidSpec("the target event-time set is empty");
  }
  HonestOptions options;
  options.target_taus = taus;
  options.target_weights = weights;
  const TargetInfo t = resolve_target(path, options, false);
  PostAverage out;
  out.estimate = t.estimate;
  out.se = t.se;
  out.from = t.from;
  out.to = t.to;
  return out;
}

HonestBounds honest_rm_bounds(const CoefficientPath& path, double m,
                              const HonestOptions& options) {
  if (m < 0.0) throw InvalidSpec("relative magnitude must be >= 0");
  const TargetInfo t = resolve_target(path, options, true);
  const LeadScale scale = lead_scale(path, options.scale_on_levels);
  HonestBounds out;
  out.estimate = t.estimate;
  out.se_target = t.se;
  out.se_step = scale.se_step;
  out.s_pre = scale.s_pre;
  out.b_factor = t.b_factor;
  out.m = m;
  const double spread = m * t.b_factor * scale.s_pre;
  out.lower = t.estimate - spread;
  out.upper = t.estimate + spread;
  return out;
}

HonestInterval honest_rm_interval(const CoefficientPath& path, double m,
                                  double level, const HonestOptions& options) {
  if (!(level > 0.0 && level < 1.0)) {
    throw InvalidSpec("confidence level must lie in (0, 1)");
  }
  const HonestBounds b = honest_rm_bounds(path, m, options);
  const double z = norm_ppf(0.5 + 0.5 * level);
  const double se = b.se_target + m * b.b_factor * b.se_step;
  HonestInterval out;
  out.lower = b.lower - z * se;
  out.upper = b.upper + z * se;
  out.m = m;
  out.level = level;
  return out;
}

SensitivityResult sensitivity_grid(const CoefficientPath& path,
                                   const std::vector<double>& ms,
                                   double level,
                                   const HonestOptions& options) {
  SensitivityResult out;
  out.intervals.reserve(ms.size());
  for (double m : ms) {
    out.intervals.push_back(honest_rm_interval(path, m, level, options));
  }

  const TargetInfo t = resolve_target(path, options, true);
  std::ostringstream target;
  target << (options.target_weights.empty() ? "mean" : "weighted_mean");
  if (options.target_taus.empty()) {
    target << "(tau " << t.from << ".." << t.to << ")";
  } else {
    target << "(tau";
    std::vector<int> taus = options.target_taus;
    std::sort(taus.begin(), taus.end());
    for (size_t i = 0; i < taus.size(); ++i) {
      target << (i == 0 ? " " : ",") << taus[i];
    }
    target << ")";
  }
  out.target = target.str();
  out.method = options.scale_on_levels
                   ? "relative_magnitudes_lp_conservative_levels"
                   : "relative_magnitudes_lp_conservative";
  return out;
}

MDEResult mde(double se, double alpha, double power) {
  if (!(se >= 0.0) || !std::isfinite(se)) {
    throw InvalidSpec("standard error must be finite and >= 0");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidSpec("size must lie in (0, 1)");
  }
  if (!(power > 0.0 && power < 1.0)) {
    throw InvalidSpec("power must lie in (0, 1)");
  }
  MDEResult out;
  out.se = se;
  out.alpha = alpha;
  out.power = power;
  out.multiplier = norm_ppf(1.0 - alpha / 2.0) + norm_ppf(power);
  out.mde = out.multiplier * se;
  return out;
}

}  // namespace evpanel
