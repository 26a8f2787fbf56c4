#pragma once

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"

namespace cpda {

enum class ConstraintKind {
  StateInvariant,   // g(x) = 0 shared across time and members
  ForecastRelative  // g(x_a; x_f) = h(x_a) - h(x_f), anchored per member
};

/// Equality-constraint system g(x) = 0 with Jacobian G(x) = dg/dx.
/// Evaluators must be pure so distinct members can be projected in parallel.
struct ConstraintSystem {
  int n_c = 0;
  ConstraintKind kind = ConstraintKind::StateInvariant;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eval;
  std::function<SparseMat(const Eigen::VectorXd&)> jacobian;

  bool empty() const { return n_c == 0; }
};

struct ProjectionResult {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

// Dense constraint systems (n_c <= 64) use an exact Newton matrix
// G(x_k) G^T(anchor) refactored each iteration. Larger systems (the
// Navier-Stokes incompressibility block) use conjugate gradients on the
// symmetric G(anchor) G^T(anchor), which is consistent even when the
// divergence rows are redundant, with the anchor matrix frozen across
// Newton iterations.
constexpr int kDenseConstraintLimit = 64;

inline Eigen::VectorXd solve_inner_dense(const Eigen::MatrixXd& m, const Eigen::VectorXd& rhs) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible())
    throw RankDeficiencyError("projection: inner Jacobian G(x) G^T(anchor) is singular");
  return lu.solve(rhs);
}

struct ProjectionAttempt {
  ProjectionResult result;
  bool converged = false;
};

inline ProjectionAttempt project_engine(const Eigen::VectorXd& x_hat, const ConstraintSystem& cs,
                                        const Eigen::VectorXd& jac_anchor, double tol,
                                        int max_iter);

}  // namespace detail

/// Newton projection onto {g = 0} along the fixed adjoint direction
/// G^T(jac_anchor): x = x_hat - G^T(anchor) * lambda with g(x) = 0.
/// A halving line search on ||g||_2 globalizes the iteration.
inline ProjectionResult project_to_manifold(const Eigen::VectorXd& x_hat,
                                            const ConstraintSystem& cs,
                                            const Eigen::VectorXd& jac_anchor,
                                            double tol = 1e-10, int max_iter = 50) {
  const auto attempt = detail::project_engine(x_hat, cs, jac_anchor, tol, max_iter);
  if (!attempt.converged)
    throw ProjectionFailure("projection: Newton did not reach tolerance",
                            attempt.result.residual, attempt.result.iterations);
  return attempt.result;
}

/// Repeated anchored projection for model-internal invariant enforcement:
/// when a round stalls, the adjoint direction is re-anchored at the current
/// iterate and the correction continues from there. Reaches the manifold from
/// much farther away than the single-anchor form; the combined correction is
/// no longer a single G^T(anchor) lambda, so analysis projections do not use
/// this.
inline Eigen::VectorXd robust_project(const Eigen::VectorXd& x_hat, const ConstraintSystem& cs,
                                      double tol = 1e-10, int max_iter = 30, int restarts = 5) {
  Eigen::VectorXd x = x_hat;
  double prev_residual = std::numeric_limits<double>::infinity();
  for (int round = 0; round <= restarts; ++round) {
    const auto attempt = detail::project_engine(x, cs, x, tol, max_iter);
    if (attempt.converged) return attempt.result.x;
    if (!(attempt.result.residual < prev_residual))
      break;  // no progress between rounds
    prev_residual = attempt.result.residual;
    x = attempt.result.x;
  }
  throw ProjectionFailure("robust_project: did not reach tolerance", prev_residual,
                          max_iter * (restarts + 1));
}

namespace detail {

inline ProjectionAttempt project_engine(const Eigen::VectorXd& x_hat, const ConstraintSystem& cs,
                                        const Eigen::VectorXd& jac_anchor, double tol,
                                        int max_iter) {
  if (cs.empty()) return {{x_hat, Eigen::VectorXd(), 0, 0.0}, true};

  const SparseMat g_anchor = cs.jacobian(jac_anchor);
  const SparseMat gt_anchor = g_anchor.transpose();

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(cs.n_c);
  Eigen::VectorXd x = x_hat;
  Eigen::VectorXd g = cs.eval(x);
  double gnorm2 = g.norm();
  if (g.lpNorm<Eigen::Infinity>() <= tol)
    return {{x, lambda, 0, g.lpNorm<Eigen::Infinity>()}, true};

  const bool dense = cs.n_c <= detail::kDenseConstraintLimit;
  SparseMat m_sparse;
  Eigen::ConjugateGradient<SparseMat, Eigen::Lower | Eigen::Upper> cg;
  if (!dense) {
    m_sparse = (g_anchor * gt_anchor).pruned();
    cg.setTolerance(1e-13);
    cg.setMaxIterations(20 * cs.n_c);
    cg.compute(m_sparse);
  }

  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd dlam;
    if (dense) {
      const Eigen::MatrixXd m = Eigen::MatrixXd(cs.jacobian(x)) * Eigen::MatrixXd(gt_anchor);
      dlam = solve_inner_dense(m, g);
    } else {
      dlam = cg.solve(g);
    }

    double step = 1.0;
    Eigen::VectorXd lam_try, x_try, g_try;
    for (int half = 0; half <= 30; ++half) {
      lam_try = lambda + step * dlam;
      x_try = x_hat - gt_anchor * lam_try;
      g_try = cs.eval(x_try);
      if (g_try.norm() < gnorm2 || g_try.lpNorm<Eigen::Infinity>() <= tol) break;
      step *= 0.5;
    }
    lambda = lam_try;
    x = x_try;
    g = g_try;
    gnorm2 = g.norm();

    const double res = g.lpNorm<Eigen::Infinity>();
    if (res <= tol) return {{x, lambda, it, res}, true};
  }
  return {{x, lambda, max_iter, g.lpNorm<Eigen::Infinity>()}, false};
}

}  // namespace detail

/// Max relative error between the analytic Jacobian and central finite
/// differences of g; cheap validity check for constraint implementations.
inline double jacobian_check(const ConstraintSystem& cs, const Eigen::VectorXd& x, double h_fd) {
  if (!(h_fd > 0.0)) throw DimensionError("jacobian_check: h_fd must be positive");
  const Eigen::MatrixXd g_analytic = Eigen::MatrixXd(cs.jacobian(x));
  double worst = 0.0;
  Eigen::VectorXd xp = x, xm = x;
  for (int j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + h_fd;
    xm[j] = x[j] - h_fd;
    const Eigen::VectorXd col = (cs.eval(xp) - cs.eval(xm)) / (2.0 * h_fd);
    xp[j] = x[j];
    xm[j] = x[j];
    for (int i = 0; i < cs.n_c; ++i) {
      const double err = std::abs(g_analytic(i, j) - col[i]) / (1.0 + std::abs(g_analytic(i, j)));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace cpda
