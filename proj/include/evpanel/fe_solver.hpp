#pragma once

// High-dimensional fixed-effects regression engine: alternating-projection
// demeaning over an arbitrary list of groupings, weighted least squares with
// deterministic first-come handling of rank deficiency, cluster-robust
// covariance, and Wald tests.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "evpanel/errors.hpp"
#include "evpanel/types.hpp"

namespace evpanel {

struct Grouping {
  std::string name;
  std::vector<int32_t> codes;  // dense level codes per observation
  int n_levels = 0;
};

// Compacts arbitrary label codes into dense 0..L-1 codes assigned in order
// of first appearance.
Grouping make_grouping(std::string name, std::span<const int32_t> raw);

struct DemeanOptions {
  double tol = 1e-8;
  int max_iter = 10000;
};

// Sweeps (weighted) group means out of every column in place, cycling over
// the groupings until the largest mean subtracted during a full cycle drops
// below tol. Returns the number of cycles used; a single grouping is exact
// after one sweep. Throws NoConvergence past max_iter.
int demean_in_place(MatrixRef values, const std::vector<Grouping>& groups,
                    const Vector* weights = nullptr,
                    const DemeanOptions& options = {});

Vector demean(ConstVectorRef values, const std::vector<Grouping>& groups,
              const Vector* weights = nullptr,
              const DemeanOptions& options = {});

struct RegressionResult {
  std::vector<std::string> names;
  Vector coefficients;        // zero at dropped columns
  std::vector<uint8_t> kept;  // column retained in the fit
  Matrix vcov;                // full size; zero rows/cols at dropped columns
  Vector residuals;
  long n_obs = 0;
  int rank = 0;
  long absorbed_dof = 0;  // parameters soaked up by demeaned fixed effects
  long dof_residual = 0;
  int cluster_count = 0;
  int iterations_to_converge = 0;  // demeaning cycles (pipeline fits)
  long singletons_dropped = 0;

  // retained-column bread (X'WX)^-1 and the design, kept for sandwiches
  Matrix bread;
  std::vector<int> kept_idx;
  Matrix design;
  Vector reg_weights;

  double se(int j) const { return std::sqrt(std::max(0.0, vcov(j, j))); }
};

// Weighted least squares. Rank-deficient columns are detected during a
// left-to-right Cholesky sweep of the Gram matrix and dropped deterministically
// (first column in wins). The classical covariance sigma^2 (X'WX)^-1 is
// installed; call cluster_vcov to replace it.
RegressionResult ols(Matrix X, Vector y, std::vector<std::string> names,
                     Vector weights = Vector());

// CR1 cluster-robust sandwich: meat = sum over clusters of score outer
// products, scaled by (G/(G-1)) * ((n-1)/dof_residual). Stores the matrix in
// result.vcov and returns it. Throws SingleCluster when fewer than two
// clusters remain.
Matrix cluster_vcov(RegressionResult& result,
                    std::span<const int32_t> clusters,
                    bool small_sample = true);

struct WaldResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int df = 0;
};

// (R beta - r)' (R V R')^+ (R beta - r) against chi-square with df equal to
// the rank of R V R'. Rank-deficient restriction covariances fall back to the
// eigenvalue pseudo-inverse; a zero-rank covariance with a nonzero restriction
// violation is DegenerateRestriction.
WaldResult wald_test(ConstVectorRef beta, ConstMatrixRef vcov,
                     ConstMatrixRef R, ConstVectorRef r);

WaldResult wald_test(const RegressionResult& result, ConstMatrixRef R,
                     ConstVectorRef r);

struct FeModelOptions {
  DemeanOptions demean;
  bool drop_singletons = true;
  bool cluster_small_sample = true;
};

// Full pipeline: iterative singleton removal, joint demeaning of y and X,
// OLS, absorbed-dof accounting (sum of levels-1 per grouping, plus one grand
// mean, minus redundancies found as connected components across the first two
// groupings), then clustered or classical covariance.
RegressionResult fit_fe_model(Matrix X, Vector y,
                              std::vector<std::string> names, Vector weights,
                              std::vector<Grouping> fe_groups,
                              std::vector<int32_t> clusters,
                              const FeModelOptions& options = {});

}  // namespace evpanel
