#include "evpanel/fe_solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_map>

#include "evpanel/stats.hpp"

namespace evpanel {

Grouping make_grouping(std::string name, std::span<const int32_t> raw) {
  Grouping g;
  g.name = std::move(name);
  g.codes.resize(raw.size());
  std::unordered_map<int32_t, int32_t> remap;
  remap.reserve(raw.size() / 4 + 8);
  for (size_t i = 0; i < raw.size(); ++i) {
    auto [it, inserted] = remap.emplace(raw[i], g.n_levels);
    if (inserted) ++g.n_levels;
    g.codes[i] = it->second;
  }
  return g;
}

int demean_in_place(MatrixRef values, const std::vector<Grouping>& groups,
                    const Vector* weights, const DemeanOptions& options) {
  if (groups.empty()) return 0;
  const long n = values.rows();
  const long k = values.cols();
  for (const auto& g : groups) {
    if (static_cast<long>(g.codes.size()) != n) {
      throw Error("InternalError", "grouping size does not match data");
    }
  }

  // per-grouping level weight totals
  std::vector<Vector> level_w(groups.size());
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    level_w[gi] = Vector::Zero(groups[gi].n_levels);
    for (long i = 0; i < n; ++i) {
      level_w[gi][groups[gi].codes[i]] += weights ? (*weights)[i] : 1.0;
    }
  }

  Vector means;
  double last_update = 0.0;
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    double max_update = 0.0;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
      const Grouping& g = groups[gi];
      for (long c = 0; c < k; ++c) {
        means.setZero(g.n_levels);
        auto col = values.col(c);
        if (weights) {
          for (long i = 0; i < n; ++i) {
            means[g.codes[i]] += (*weights)[i] * col[i];
          }
        } else {
          for (long i = 0; i < n; ++i) means[g.codes[i]] += col[i];
        }
        for (int l = 0; l < g.n_levels; ++l) {
          means[l] = level_w[gi][l] > 0.0 ? means[l] / level_w[gi][l] : 0.0;
          max_update = std::max(max_update, std::fabs(means[l]));
        }
        for (long i = 0; i < n; ++i) col[i] -= means[g.codes[i]];
      }
    }
    last_update = max_update;
    if (groups.size() == 1) return iter;  // one sweep is exact
    if (max_update < options.tol) return iter;
  }
  throw NoConvergence(options.max_iter, last_update,
                      "demeaning did not converge in " +
                          std::to_string(options.max_iter) + " cycles");
}

Vector demean(ConstVectorRef values, const std::vector<Grouping>& groups,
              const Vector* weights, const DemeanOptions& options) {
  Matrix m = values;
  demean_in_place(m, groups, weights, options);
  return m.col(0);
}

RegressionResult ols(Matrix X, Vector y, std::vector<std::string> names,
                     Vector weights) {
  const long n = X.rows();
  const long k = X.cols();
  if (n == 0) throw EmptySample("regression has no observations");
  if (y.size() != n) {
    throw Error("InternalError", "ols: y length does not match X");
  }
  if (weights.size() == 0) weights = Vector::Ones(n);
  if (names.empty()) {
    for (long j = 0; j < k; ++j) names.push_back("x" + std::to_string(j));
  }

  // weighted Gram and cross moments
  Matrix G(k, k);
  Vector Xty(k);
  {
    Matrix Xw = X.array().colwise() * weights.array();
    G.noalias() = Xw.transpose() * X;
    Xty.noalias() = Xw.transpose() * y;
  }

  // Left-to-right Cholesky with first-come column retention. A pivot that
  // collapses relative to the column's original scale marks a column inside
  // the span of earlier retained columns; it is dropped, not reordered.
  const double rel_tol = 1e-9;
  const double abs_floor =
      1e-12 * std::max(1.0, G.diagonal().cwiseAbs().maxCoeff());
  std::vector<uint8_t> kept(k, 0);
  std::vector<int> kept_idx;
  Matrix L = Matrix::Zero(k, k);  // rows indexed by original column
  for (long j = 0; j < k; ++j) {
    double pivot = G(j, j);
    for (int m : kept_idx) pivot -= L(j, m) * L(j, m);
    if (G(j, j) <= abs_floor || pivot <= rel_tol * G(j, j)) continue;
    const int slot = static_cast<int>(kept_idx.size());
    L(j, slot) = std::sqrt(pivot);
    for (long i = j + 1; i < k; ++i) {
      double v = G(i, j);
      for (int m = 0; m < slot; ++m) v -= L(i, m) * L(j, m);
      L(i, slot) = v / L(j, slot);
    }
    kept[j] = 1;
    kept_idx.push_back(static_cast<int>(j));
  }

  const int r = static_cast<int>(kept_idx.size());
  RegressionResult res;
  res.names = std::move(names);
  res.n_obs = n;
  res.rank = r;
  res.kept = kept;
  res.kept_idx = kept_idx;
  res.coefficients = Vector::Zero(k);
  res.vcov = Matrix::Zero(k, k);

  if (r > 0) {
    // compact lower-triangular factor of the retained Gram
    Matrix Lc(r, r);
    for (int a = 0; a < r; ++a) {
      for (int b = 0; b < r; ++b) Lc(a, b) = b <= a ? L(kept_idx[a], b) : 0.0;
    }
    Vector rhs(r);
    for (int a = 0; a < r; ++a) rhs[a] = Xty[kept_idx[a]];
    // solve L L' beta = rhs
    Vector z = Lc.triangularView<Eigen::Lower>().solve(rhs);
    Vector beta =
        Lc.transpose().triangularView<Eigen::Upper>().solve(z);
    for (int a = 0; a < r; ++a) res.coefficients[kept_idx[a]] = beta[a];

    Matrix Linv = Lc.triangularView<Eigen::Lower>()
                      .solve(Matrix::Identity(r, r));
    res.bread = Linv.transpose() * Linv;  // (X'WX)^-1 on retained columns
  } else {
    res.bread = Matrix(0, 0);
  }

  res.residuals = y - X * res.coefficients;
  res.dof_residual = std::max<long>(n - r, 0);

  const double rss =
      (res.residuals.array().square() * weights.array()).sum();
  const double sigma2 =
      res.dof_residual > 0 ? rss / static_cast<double>(res.dof_residual) : 0.0;
  for (int a = 0; a < r; ++a) {
    for (int b = 0; b < r; ++b) {
      res.vcov(kept_idx[a], kept_idx[b]) = sigma2 * res.bread(a, b);
    }
  }

  res.design = std::move(X);
  res.reg_weights = std::move(weights);
  return res;
}

Matrix cluster_vcov(RegressionResult& result,
                    std::span<const int32_t> clusters, bool small_sample) {
  if (static_cast<long>(clusters.size()) != result.n_obs) {
    throw Error("InternalError", "cluster assignment length mismatch");
  }
  const Grouping g = make_grouping("cluster", clusters);
  if (g.n_levels < 2) {
    throw SingleCluster("cluster-robust covariance needs at least 2 clusters, "
                        "found " + std::to_string(g.n_levels));
  }
  const int r = static_cast<int>(result.kept_idx.size());
  const long n = result.n_obs;

  // scores per cluster: sum_i w_i e_i x_i over retained columns
  Matrix scores = Matrix::Zero(g.n_levels, r);
  for (long i = 0; i < n; ++i) {
    const double we = result.reg_weights[i] * result.residuals[i];
    if (we == 0.0) continue;
    for (int a = 0; a < r; ++a) {
      scores(g.codes[i], a) += we * result.design(i, result.kept_idx[a]);
    }
  }
  Matrix meat = scores.transpose() * scores;

  double c = 1.0;
  if (small_sample) {
    const double G = g.n_levels;
    const double dof = std::max<long>(result.dof_residual, 1);
    c = (G / (G - 1.0)) * ((static_cast<double>(n) - 1.0) / dof);
  }

  Matrix Vr = c * (result.bread * meat * result.bread);
  Vr = 0.5 * (Vr + Vr.transpose());  // enforce symmetry

  const long k = result.coefficients.size();
  Matrix V = Matrix::Zero(k, k);
  for (int a = 0; a < r; ++a) {
    for (int b = 0; b < r; ++b) {
      V(result.kept_idx[a], result.kept_idx[b]) = Vr(a, b);
    }
  }
  result.vcov = V;
  result.cluster_count = g.n_levels;
  return result.vcov;
}

WaldResult wald_test(ConstVectorRef beta, ConstMatrixRef vcov,
                     ConstMatrixRef R, ConstVectorRef r) {
  if (R.rows() == 0) {
    throw DegenerateRestriction("Wald test with zero restrictions");
  }
  if (R.cols() != beta.size() || r.size() != R.rows()) {
    throw Error("InternalError", "wald_test: dimension mismatch");
  }
  const Vector diff = R * beta - r;
  Matrix S = R * vcov * R.transpose();
  S = 0.5 * (S + S.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
  const Vector& vals = eig.eigenvalues();
  const double max_eig = vals.size() ? vals.cwiseAbs().maxCoeff() : 0.0;
  const double tol = std::max(1e-12 * max_eig, 1e-300);

  // a covariance at floating-point-noise scale cannot discriminate; when the
  // restriction also holds to that precision the test is vacuous, not evidence
  const double beta_scale = 1.0 + beta.cwiseAbs().maxCoeff();
  if (max_eig <= 1e-14 * beta_scale * beta_scale &&
      diff.cwiseAbs().maxCoeff() <= 1e-7 * beta_scale) {
    return {0.0, 1.0, 0};
  }

  int rank = 0;
  for (long i = 0; i < vals.size(); ++i) {
    if (vals[i] > tol) ++rank;
  }
  if (rank == 0) {
    throw DegenerateRestriction(
        "restriction covariance has rank 0 but the restriction is violated");
  }

  // pseudo-inverse on the retained eigenspace
  Vector proj = eig.eigenvectors().transpose() * diff;
  double stat = 0.0;
  for (long i = 0; i < vals.size(); ++i) {
    if (vals[i] > tol) stat += proj[i] * proj[i] / vals[i];
  }
  WaldResult out;
  out.statistic = stat;
  out.df = rank;
  out.p_value = chisq_sf(stat, rank);
  return out;
}

WaldResult wald_test(const RegressionResult& result, ConstMatrixRef R,
                     ConstVectorRef r) {
  return wald_test(result.coefficients, result.vcov, R, r);
}

namespace {

// Observations that are alone in any grouping level are perfectly absorbed by
// that level's effect; they carry no information about the slopes and distort
// degrees of freedom. Remove them iteratively (a removal can create new
// singletons in other groupings).
std::vector<long> survivors_after_singletons(
    const std::vector<Grouping>& groups, long n) {
  std::vector<long> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (groups.empty()) return rows;
  bool changed = true;
  while (changed && !rows.empty()) {
    changed = false;
    for (const auto& g : groups) {
      std::vector<long> count(g.n_levels, 0);
      for (long row : rows) ++count[g.codes[row]];
      std::vector<long> next;
      next.reserve(rows.size());
      for (long row : rows) {
        if (count[g.codes[row]] > 1) {
          next.push_back(row);
        } else {
          changed = true;
        }
      }
      rows.swap(next);
      if (rows.empty()) break;
    }
  }
  return rows;
}

long absorbed_parameter_count(const std::vector<Grouping>& groups, long n) {
  if (groups.empty()) return 0;
  long absorbed = 1;  // shared grand mean
  for (const auto& g : groups) absorbed += g.n_levels - 1;
  if (groups.size() >= 2) {
    // connected components of the bipartite graph between the first two
    // groupings; each extra component is one more redundant parameter
    const Grouping& a = groups[0];
    const Grouping& b = groups[1];
    std::vector<int> parent(a.n_levels + b.n_levels);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
      while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
      }
      return x;
    };
    for (long i = 0; i < n; ++i) {
      const int ra = find(a.codes[i]);
      const int rb = find(a.n_levels + b.codes[i]);
      if (ra != rb) parent[ra] = rb;
    }
    std::vector<uint8_t> seen(parent.size(), 0);
    int components = 0;
    for (long i = 0; i < n; ++i) {
      const int root = find(a.codes[i]);
      if (!seen[root]) {
        seen[root] = 1;
        ++components;
      }
    }
    absorbed -= components - 1;
  }
  return absorbed;
}

}  // namespace

RegressionResult fit_fe_model(Matrix X, Vector y,
                              std::vector<std::string> names, Vector weights,
                              std::vector<Grouping> fe_groups,
                              std::vector<int32_t> clusters,
                              const FeModelOptions& options) {
  const long n_all = X.rows();
  if (weights.size() == 0) weights = Vector::Ones(n_all);

  std::vector<long> rows(n_all);
  std::iota(rows.begin(), rows.end(), 0);
  long singletons = 0;
  if (options.drop_singletons && !fe_groups.empty()) {
    rows = survivors_after_singletons(fe_groups, n_all);
    singletons = n_all - static_cast<long>(rows.size());
  }
  if (rows.empty()) throw EmptySample("no observations survive screening");

  const long n = static_cast<long>(rows.size());
  Matrix Xs(n, X.cols());
  Vector ys(n), ws(n);
  std::vector<int32_t> cs(clusters.empty() ? 0 : n);
  for (long i = 0; i < n; ++i) {
    Xs.row(i) = X.row(rows[i]);
    ys[i] = y[rows[i]];
    ws[i] = weights[rows[i]];
    if (!clusters.empty()) cs[i] = clusters[rows[i]];
  }
  std::vector<Grouping> groups;
  groups.reserve(fe_groups.size());
  for (const auto& g : fe_groups) {
    std::vector<int32_t> sub(n);
    for (long i = 0; i < n; ++i) sub[i] = g.codes[rows[i]];
    groups.push_back(make_grouping(g.name, sub));
  }

  int iterations = 0;
  if (!groups.empty()) {
    Matrix joint(n, Xs.cols() + 1);
    joint.col(0) = ys;
    joint.rightCols(Xs.cols()) = Xs;
    iterations = demean_in_place(joint, groups, &ws, options.demean);
    ys = joint.col(0);
    Xs = joint.rightCols(Xs.cols());
  }

  RegressionResult res = ols(std::move(Xs), std::move(ys), std::move(names),
                             std::move(ws));
  res.iterations_to_converge = iterations;
  res.singletons_dropped = singletons;
  res.absorbed_dof = absorbed_parameter_count(groups, n);
  res.dof_residual = std::max<long>(res.n_obs - res.rank - res.absorbed_dof, 0);

  // refresh the classical covariance with the corrected dof
  const double rss =
      (res.residuals.array().square() * res.reg_weights.array()).sum();
  const double sigma2 =
      res.dof_residual > 0 ? rss / static_cast<double>(res.dof_residual) : 0.0;
  const int r = static_cast<int>(res.kept_idx.size());
  res.vcov.setZero();
  for (int a = 0; a < r; ++a) {
    for (int b = 0; b < r; ++b) {
      res.vcov(res.kept_idx[a], res.kept_idx[b]) = sigma2 * res.bread(a, b);
    }
  }

  if (!cs.empty()) {
    cluster_vcov(res, cs, options.cluster_small_sample);
  }
  return res;
}

}  // namespace evpanel
