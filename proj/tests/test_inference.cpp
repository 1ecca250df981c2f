#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "evpanel/censor.hpp"
#include "evpanel/estimators.hpp"
#include "evpanel/inference.hpp"
#include "evpanel/simulate.hpp"
#include "evpanel/stats.hpp"

using namespace evpanel;

namespace {

constexpr double kZ975 = 1.959963984540054;

// Path over exact bins at the given event times, normalized at ref_tau; the
// covariance covers the non-reference bins in ascending tau order.
CoefficientPath hand_path(const std::vector<int>& taus,
                          const std::vector<double>& estimates, int ref_tau,
                          const Matrix& vcov) {
  CoefficientPath p;
  for (size_t i = 0; i < taus.size(); ++i) {
    p.event_times.push_back({taus[i], EventTimeBin::Kind::Exact});
    if (taus[i] == ref_tau) p.reference_index = static_cast<int>(i);
  }
  p.reference_period = ref_tau;
  p.estimates = Vector::Zero(static_cast<long>(taus.size()));
  for (size_t i = 0; i < taus.size(); ++i) p.estimates[i] = estimates[i];
  p.vcov = vcov;
  p.ses = Vector::Zero(static_cast<long>(taus.size()));
  for (int i = 0; i < p.size(); ++i) {
    const int vi = p.vcov_index(i);
    if (vi >= 0) p.ses[i] = std::sqrt(vcov(vi, vi));
  }
  return p;
}

// Exhaustive sign enumeration of the box-constrained bias program: each step
// j = 0..to moves by +/- (m * s); the bias at event time tau accumulates the
// first tau+1 steps. Exact because a linear functional over a box is
// maximized at a vertex.
double vertex_spread(const std::map<int, double>& weights, int to, double m,
                     double s) {
  const int steps = to + 1;
  double best = 0.0;
  for (int pattern = 0; pattern < (1 << steps); ++pattern) {
    double total = 0.0;
    double bias = 0.0;
    int j = 0;
    for (int tau = 0; tau <= to; ++tau, ++j) {
      bias += ((pattern >> j) & 1) ? m * s : -m * s;
      auto it = weights.find(tau);
      if (it != weights.end()) total += it->second * bias;
    }
    best = std::max(best, total);
  }
  return best;
}

Matrix toy_vcov4() {
  Matrix v(4, 4);
  v << 0.040, 0.006, 0.004, 0.002,
       0.006, 0.030, 0.005, 0.003,
       0.004, 0.005, 0.050, 0.007,
       0.002, 0.003, 0.007, 0.060;
  return v;
}

CoefficientPath toy_path() {
  return hand_path({-3, -2, -1, 0, 1}, {0.3, 0.0, -0.2, 1.0, 1.4}, -2,
                   toy_vcov4());
}

}  // namespace

TEST_CASE("post averages and their delta-method errors") {
  const CoefficientPath path = toy_path();

  SUBCASE("default window runs to the last exact post bin") {
    const PostAverage avg = average_post_effect(path);
    CHECK(avg.from == 0);
    CHECK(avg.to == 1);
    CHECK(avg.estimate == doctest::Approx(1.2).epsilon(1e-12));
    const double var = 0.25 * (0.050 + 0.060) + 2 * 0.25 * 0.007;
    CHECK(std::abs(avg.se - std::sqrt(var)) <= 1e-12);
  }

  SUBCASE("two equal-variance bins shrink by root two") {
    Matrix v = 0.09 * Matrix::Identity(4, 4);
    const CoefficientPath p =
        hand_path({-3, -2, -1, 0, 1}, {0.3, 0.0, -0.2, 1.0, 2.0}, -2, v);
    const PostAverage avg = average_post_effect(p, 0, 1);
    CHECK(std::abs(avg.se - 0.3 / std::sqrt(2.0)) <= 1e-12);
  }

  SUBCASE("explicit event times and weights") {
    const PostAverage avg = average_post_effect(path, {0, 1}, {0.25, 0.75});
    CHECK(avg.estimate == doctest::Approx(0.25 * 1.0 + 0.75 * 1.4));
    const double var = 0.0625 * 0.050 + 0.5625 * 0.060 +
                       2 * 0.25 * 0.75 * 0.007;
    CHECK(std::abs(avg.se - std::sqrt(var)) <= 1e-12);
  }

  SUBCASE("a pooled post bin does not extend the default window") {
    CoefficientPath p = toy_path();
    p.event_times.push_back({2, EventTimeBin::Kind::PooledPost});
    p.estimates.conservativeResize(6);
    p.estimates[5] = 9.0;
    p.ses.conservativeResize(6);
    p.ses[5] = 1.0;
    Matrix v = Matrix::Zero(5, 5);
    v.topLeftCorner(4, 4) = toy_vcov4();
    v(4, 4) = 1.0;
    p.vcov = v;
    const PostAverage avg = average_post_effect(p);
    CHECK(avg.to == 1);
  }

  SUBCASE("holes and malformed requests") {
    CHECK_THROWS_AS(average_post_effect(path, 0, 3), MissingCoefficient);
    const CoefficientPath holey = hand_path(
        {-2, 0, 2}, {0.0, 1.0, 2.0}, -2, 0.04 * Matrix::Identity(2, 2));
    CHECK_THROWS_AS(average_post_effect(holey), MissingCoefficient);
    CHECK_THROWS_AS(average_post_effect(path, std::vector<int>{}),
                    InvalidSpec);
    CHECK_THROWS_AS(average_post_effect(path, {0, 1}, {1.0}), InvalidSpec);
    CHECK_THROWS_AS(average_post_effect(path, {1, 1}), InvalidSpec);
    CHECK_THROWS_AS(average_post_effect(path, {-1, 0}), InvalidSpec);
    CHECK_THROWS_AS(average_post_effect(path, -1), InvalidSpec);
  }
}

TEST_CASE("zero relative magnitude reduces to the usual interval") {
  const CoefficientPath path = toy_path();
  const PostAverage avg = average_post_effect(path);
  const HonestInterval ci = honest_rm_interval(path, 0.0, 0.95);
  CHECK(std::abs(ci.lower - (avg.estimate - kZ975 * avg.se)) <= 1e-12);
  CHECK(std::abs(ci.upper - (avg.estimate + kZ975 * avg.se)) <= 1e-12);

  const HonestBounds b = honest_rm_bounds(path, 0.0);
  CHECK(b.lower == doctest::Approx(b.estimate));
  CHECK(b.upper == doctest::Approx(b.estimate));
}

TEST_CASE("bias bounds agree with exhaustive vertex enumeration") {
  const CoefficientPath path = toy_path();
  // largest consecutive lead jump: |0 - 0.3| across (-3, -2)
  const double s = 0.3;

  SUBCASE("equal weights over both post bins") {
    for (double m : {0.5, 1.0, 2.0}) {
      const HonestBounds b = honest_rm_bounds(path, m);
      CHECK(std::abs(b.s_pre - s) <= 1e-12);
      CHECK(std::abs(b.b_factor - 1.5) <= 1e-12);
      const double spread =
          vertex_spread({{0, 0.5}, {1, 0.5}}, 1, m, s);
      CHECK(std::abs((b.upper - b.estimate) - spread) <= 1e-12);
      CHECK(std::abs((b.estimate - b.lower) - spread) <= 1e-12);
    }
  }

  SUBCASE("asymmetric weights") {
    HonestOptions opt;
    opt.target_taus = {0, 1};
    opt.target_weights = {0.3, 0.7};
    const HonestBounds b = honest_rm_bounds(path, 1.0, opt);
    CHECK(std::abs(b.b_factor - 1.7) <= 1e-12);
    const double spread = vertex_spread({{0, 0.3}, {1, 0.7}}, 1, 1.0, s);
    CHECK(std::abs((b.upper - b.estimate) - spread) <= 1e-12);
  }

  SUBCASE("a single late target accumulates both steps") {
    HonestOptions opt;
    opt.target_taus = {1};
    const HonestBounds b = honest_rm_bounds(path, 1.0, opt);
    CHECK(std::abs(b.b_factor - 2.0) <= 1e-12);
    const double spread = vertex_spread({{1, 1.0}}, 1, 1.0, s);
    CHECK(std::abs((b.upper - b.estimate) - spread) <= 1e-12);
  }

  SUBCASE("the interval stacks sampling noise on the bias bound") {
    const HonestInterval ci = honest_rm_interval(path, 1.0, 0.95);
    const HonestBounds b = honest_rm_bounds(path, 1.0);
    const double se_t = std::sqrt(0.25 * (0.050 + 0.060) + 2 * 0.25 * 0.007);
    const double se_step = std::sqrt(0.040);  // jump against the reference
    CHECK(std::abs(b.se_target - se_t) <= 1e-12);
    CHECK(std::abs(b.se_step - se_step) <= 1e-12);
    const double wide = se_t + 1.0 * 1.5 * se_step;
    CHECK(std::abs(ci.lower - (b.lower - kZ975 * wide)) <= 1e-12);
    CHECK(std::abs(ci.upper - (b.upper + kZ975 * wide)) <= 1e-12);
  }
}

TEST_CASE("level scaling swaps the budget yardstick") {
  Vector d(5);
  d << 0.04, 0.0225, 0.01, 0.05, 0.06;
  const CoefficientPath path =
      hand_path({-4, -3, -2, -1, 0, 1}, {0.5, 0.45, 0.0, -0.1, 1.0, 1.4}, -2,
                Matrix(d.asDiagonal()));
  HonestOptions diff_opt;
  const HonestBounds bd = honest_rm_bounds(path, 2.0, diff_opt);
  CHECK(std::abs(bd.s_pre - 0.45) <= 1e-12);   // jump (-3) -> (-2)
  CHECK(std::abs(bd.se_step - 0.15) <= 1e-12);  // sd of the -3 coefficient
  CHECK(std::abs((bd.upper - bd.estimate) - 2.0 * 1.5 * 0.45) <= 1e-12);

  HonestOptions lvl_opt;
  lvl_opt.scale_on_levels = true;
  const HonestBounds bl = honest_rm_bounds(path, 2.0, lvl_opt);
  CHECK(std::abs(bl.s_pre - 0.5) <= 1e-12);    // largest lead level, at -4
  CHECK(std::abs(bl.se_step - 0.2) <= 1e-12);
  CHECK(std::abs((bl.upper - bl.estimate) - 2.0 * 1.5 * 0.5) <= 1e-12);
}

TEST_CASE("intervals are nested in the relative magnitude") {
  uint64_t state = 88172645463325252ull;
  auto next_u = [&]() {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return state;
  };
  auto unif = [&]() { return (next_u() >> 11) * 0x1.0p-53; };

  const std::vector<double> ms = {0.0, 0.5, 1.0, 1.5, 2.0};
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> taus = {-3, -2, -1, 0, 1, 2};
    std::vector<double> ests(taus.size());
    for (auto& e : ests) e = 2.0 * unif() - 1.0;
    ests[1] = 0.0;
    Matrix g(5, 5);
    for (long i = 0; i < 5; ++i) {
      for (long j = 0; j < 5; ++j) g(i, j) = unif() - 0.5;
    }
    Matrix v = 0.02 * (g * g.transpose()) + 0.001 * Matrix::Identity(5, 5);
    const CoefficientPath path = hand_path(taus, ests, -2, v);

    const SensitivityResult grid = sensitivity_grid(path, ms, 0.95);
    REQUIRE(grid.intervals.size() == ms.size());
    for (size_t i = 1; i < grid.intervals.size(); ++i) {
      CHECK(grid.intervals[i].lower <= grid.intervals[i - 1].lower + 1e-12);
      CHECK(grid.intervals[i].upper >= grid.intervals[i - 1].upper - 1e-12);
    }

    const PostAverage avg = average_post_effect(path);
    CHECK(std::abs(grid.intervals[0].lower -
                   (avg.estimate - kZ975 * avg.se)) <= 1e-9);
    CHECK(std::abs(grid.intervals[0].upper -
                   (avg.estimate + kZ975 * avg.se)) <= 1e-9);

    // the bias-only spread agrees with brute-force vertex enumeration
    for (double m : {0.5, 1.5}) {
      const HonestBounds b = honest_rm_bounds(path, m);
      const double spread = vertex_spread(
          {{0, 1.0 / 3}, {1, 1.0 / 3}, {2, 1.0 / 3}}, 2, m, b.s_pre);
      CHECK(std::abs((b.upper - b.estimate) - spread) <= 1e-10);
    }
  }
}

TEST_CASE("infeasible programs are reported, not guessed") {
  SUBCASE("no consecutive lead pair") {
    const CoefficientPath path = hand_path(
        {-4, -2, 0, 1}, {0.3, 0.0, 1.0, 1.4}, -2,
        0.04 * Matrix::Identity(3, 3));
    CHECK_THROWS_AS(honest_rm_bounds(path, 1.0), InfeasibleLP);
  }
  SUBCASE("no lead level to scale on") {
    const CoefficientPath path = hand_path(
        {-2, 0, 1}, {0.0, 1.0, 1.4}, -2, 0.04 * Matrix::Identity(2, 2));
    HonestOptions opt;
    opt.scale_on_levels = true;
    CHECK_THROWS_AS(honest_rm_bounds(path, 1.0, opt), InfeasibleLP);
  }
  SUBCASE("no exact post coefficients") {
    CoefficientPath path = hand_path({-3, -2, -1}, {0.3, 0.0, -0.2}, -2,
                                     0.04 * Matrix::Identity(2, 2));
    path.event_times.push_back({0, EventTimeBin::Kind::PooledPost});
    path.estimates.conservativeResize(4);
    path.estimates[3] = 1.0;
    path.ses.conservativeResize(4);
    path.ses[3] = 0.2;
    Matrix v = Matrix::Zero(3, 3);
    v.topLeftCorner(2, 2) = 0.04 * Matrix::Identity(2, 2);
    v(2, 2) = 0.04;
    path.vcov = v;
    CHECK_THROWS_AS(honest_rm_bounds(path, 1.0), InfeasibleLP);
  }
  SUBCASE("negative magnitudes and silly levels") {
    const CoefficientPath path = toy_path();
    CHECK_THROWS_AS(honest_rm_bounds(path, -0.5), InvalidSpec);
    CHECK_THROWS_AS(honest_rm_interval(path, 1.0, 1.0), InvalidSpec);
    CHECK_THROWS_AS(sensitivity_grid(path, {0.0, -1.0}), InvalidSpec);
  }
}

TEST_CASE("grid metadata names the target and the construction") {
  const CoefficientPath path = toy_path();
  {
    const SensitivityResult grid = sensitivity_grid(path, {0.0, 1.0});
    CHECK(grid.target == "mean(tau 0..1)");
    CHECK(grid.method == "relative_magnitudes_lp_conservative");
  }
  {
    HonestOptions opt;
    opt.target_taus = {1, 0};
    opt.target_weights = {0.7, 0.3};
    const SensitivityResult grid = sensitivity_grid(path, {1.0}, 0.9, opt);
    CHECK(grid.target == "weighted_mean(tau 0,1)");
    CHECK(grid.intervals[0].level == 0.9);
  }
  {
    HonestOptions opt;
    opt.scale_on_levels = true;
    const SensitivityResult grid = sensitivity_grid(path, {1.0}, 0.95, opt);
    CHECK(grid.method == "relative_magnitudes_lp_conservative_levels");
  }
}

TEST_CASE("minimum detectable effects replicate the published table") {
  const MDEResult m = mde(0.0179);
  CHECK(std::abs(m.multiplier - 2.8016) <= 0.0005);
  CHECK(std::abs(m.multiplier -
                 (1.959963984540054 + 0.8416212335729143)) <= 1e-12);
  CHECK(std::abs(m.mde - 0.0503) <= 0.0005);
  CHECK(std::abs(mde(0.0160).mde - 0.0448) <= 0.0005);
  CHECK(std::abs(mde(0.0126).mde - 0.0352) <= 0.0005);
  CHECK(std::abs(mde(0.0184).mde - 0.0515) <= 0.0005);

  // homogeneity and the degenerate power case
  CHECK(mde(0.02).mde == doctest::Approx(2.0 * mde(0.01).mde).epsilon(1e-12));
  CHECK(std::abs(mde(1.0, 0.05, 0.5).multiplier - 1.959963984540054) <=
        1e-12);
  CHECK(std::abs(mde(1.0, 0.2, 0.9).multiplier -
                 (1.2815515655446004 + 1.2815515655446004)) <= 1e-12);

  CHECK_THROWS_AS(mde(-0.1), InvalidSpec);
  CHECK_THROWS_AS(mde(0.1, 0.0, 0.8), InvalidSpec);
  CHECK_THROWS_AS(mde(0.1, 0.05, 1.0), InvalidSpec);
}

TEST_CASE("the averaged coefficient matches a reparameterized regression") {
  StructuralParams p;
  p.lambda_h = 0.5;
  p.xi = 1.0;
  p.outcomes = {{"y", 0.1, 0.02}};
  p.sd_eps = 0.4;
  p.fe_unit_sd = 0.5;
  p.fe_time_sd = 0.3;
  const SimResult sim = simulate_panel(p, 80, 0, 15, 29, AnchorProcess::none(),
                                       AdoptionProcess::list({6}, 0.5));
  const PanelDataset& panel = sim.panel;
  CensorMask mask = CensorMask::all(panel.n_cells());
  const EventStudySpec spec;
  const CoefficientPath path = twfe_event_study(panel, mask, spec, "y");
  const PostAverage avg = average_post_effect(path, 0, 2);

  // rebuild the same design with the first column transformed to carry the
  // 3-bin average directly: [D0 D1 D2] beta = [3 D0, D1 - D0, D2 - D0] gamma
  // with gamma_1 = (beta_0 + beta_1 + beta_2) / 3
  const long n = panel.n_cells();
  const std::vector<int> cohorts = unit_cohorts(panel, Anchor::Adoption);
  const int lo = spec.window_lo(), hi = spec.window_hi();
  std::vector<int> bin_taus;  // full layout: pooled pre, exacts, pooled post
  for (int t = lo - 1; t <= hi; ++t) bin_taus.push_back(t);
  auto bin_of = [&](int tau) {
    if (tau <= lo - 1) return 0;
    if (tau >= hi) return static_cast<int>(bin_taus.size()) - 1;
    return tau - (lo - 1);
  };
  const int ref_bin = bin_of(spec.reference);

  std::vector<int> cols;  // non-reference bins, ascending
  for (int b = 0; b < static_cast<int>(bin_taus.size()); ++b) {
    if (b != ref_bin) cols.push_back(b);
  }
  std::map<int, int> col_of_bin;
  for (size_t c = 0; c < cols.size(); ++c) col_of_bin[cols[c]] = c;

  Matrix X = Matrix::Zero(n, static_cast<long>(cols.size()));
  Vector y(n);
  std::vector<int32_t> ucode(n), tcode(n);
  for (long i = 0; i < n; ++i) {
    const int u = panel.cell_unit()[i];
    const int t = panel.cell_period()[i];
    ucode[i] = u;
    tcode[i] = t;
    y[i] = panel.outcome("y")[i];
    const int g = cohorts[u];
    const int b = g == kNeverCohort ? 0 : bin_of(t - g);
    if (b != ref_bin) X(i, col_of_bin[b]) = 1.0;
  }
  // mix the three post columns
  const int c0 = col_of_bin[bin_of(0)];
  const int c1 = col_of_bin[bin_of(1)];
  const int c2 = col_of_bin[bin_of(2)];
  Matrix mixed = X;
  mixed.col(c0) = 3.0 * X.col(c0);
  mixed.col(c1) = X.col(c1) - X.col(c0);
  mixed.col(c2) = X.col(c2) - X.col(c0);

  std::vector<std::string> names(cols.size());
  for (size_t c = 0; c < cols.size(); ++c) {
    names[c] = "c" + std::to_string(c);
  }
  std::vector<Grouping> groups;
  groups.push_back(make_grouping("unit", ucode));
  groups.push_back(make_grouping("period", tcode));
  const RegressionResult res =
      fit_fe_model(std::move(mixed), y, names, Vector(), groups, ucode);

  CHECK(std::abs(res.coefficients[c0] - avg.estimate) <= 1e-8);
  CHECK(std::abs(res.se(c0) - avg.se) <= 1e-8);
}
