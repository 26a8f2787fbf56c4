#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cpda/constraints.hpp"
#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"

namespace cpda::pendulum {

// Double pendulum in Cartesian coordinates, index-2 DAE form. State ordering:
// (x1, y1, x2, y2, u1, v1, u2, v2), n_s = 8, unit masses and rod lengths.
constexpr int kDim = 8;
constexpr double kGravity = 9.8;

struct RhsResult {
  Eigen::VectorXd deriv;   // (velocities, accelerations)
  Eigen::Vector2d lambda;  // rod tensions
};

/// Rod tensions from the 2x2 linear system obtained by differentiating the
/// velocity-level constraints.
inline Eigen::Vector2d tensions(const Eigen::VectorXd& s) {
  const double x1 = s[0], y1 = s[1], x2 = s[2], y2 = s[3];
  const double u1 = s[4], v1 = s[5], u2 = s[6], v2 = s[7];
  const double dx = x2 - x1, dy = y2 - y1, du = u2 - u1, dv = v2 - v1;
  Eigen::Matrix2d m;
  m << x1 * x1 + y1 * y1, -(x1 * dx + y1 * dy),
      -(x1 * dx + y1 * dy), 2.0 * (dx * dx + dy * dy);
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  if (std::abs(det) < 1e-14 * (1.0 + m.cwiseAbs().maxCoeff()))
    throw RankDeficiencyError("pendulum: singular tension system (degenerate geometry)");
  Eigen::Vector2d b;
  b << u1 * u1 + v1 * v1 - kGravity * y1, du * du + dv * dv;
  return m.inverse() * b;
}

/// Accelerations for given tensions; affine in lambda.
inline Eigen::Vector4d accelerations(const Eigen::VectorXd& s, const Eigen::Vector2d& lambda) {
  const double x1 = s[0], y1 = s[1], dx = s[2] - s[0], dy = s[3] - s[1];
  Eigen::Vector4d a;
  a << -lambda[0] * x1 + lambda[1] * dx,
      -lambda[0] * y1 + lambda[1] * dy - kGravity,
      -lambda[1] * dx,
      -lambda[1] * dy - kGravity;
  return a;
}

inline RhsResult rhs(const Eigen::VectorXd& s) {
  if (s.size() != kDim) throw DimensionError("pendulum::rhs: state must have length 8");
  RhsResult r;
  r.lambda = tensions(s);
  r.deriv.resize(kDim);
  r.deriv.head<4>() = s.tail<4>();
  r.deriv.tail<4>() = accelerations(s, r.lambda);
  return r;
}

inline double total_energy(const Eigen::VectorXd& s) {
  const double ke = 0.5 * s.tail<4>().squaredNorm();
  return ke + kGravity * (s[1] + s[3] + 3.0);
}

/// The experiment's reference state: both rods at rest with total mechanical
/// energy 9.8 * (4 + sqrt(3)) = 56.1741.
inline Eigen::VectorXd reference_state() {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(kDim);
  s[0] = 0.5;
  s[1] = std::sqrt(3.0) / 2.0;
  s[2] = 0.5;
  s[3] = std::sqrt(3.0) / 2.0 + 1.0;
  return s;
}

/// Five constraints: two rod lengths, two rod-velocity orthogonality
/// relations, and total mechanical energy relative to E0.
inline ConstraintSystem constraints(double e0) {
  ConstraintSystem cs;
  cs.n_c = 5;
  cs.kind = ConstraintKind::StateInvariant;
  cs.eval = [e0](const Eigen::VectorXd& s) {
    const double x1 = s[0], y1 = s[1], x2 = s[2], y2 = s[3];
    const double u1 = s[4], v1 = s[5], u2 = s[6], v2 = s[7];
    const double dx = x2 - x1, dy = y2 - y1, du = u2 - u1, dv = v2 - v1;
    Eigen::VectorXd g(5);
    g[0] = 0.5 * (x1 * x1 + y1 * y1 - 1.0);
    g[1] = 0.5 * (dx * dx + dy * dy - 1.0);
    g[2] = x1 * u1 + y1 * v1;
    g[3] = dx * du + dy * dv;
    g[4] = total_energy(s) - e0;
    return g;
  };
  cs.jacobian = [](const Eigen::VectorXd& s) {
    const double x1 = s[0], y1 = s[1], x2 = s[2], y2 = s[3];
    const double u1 = s[4], v1 = s[5], u2 = s[6], v2 = s[7];
    const double dx = x2 - x1, dy = y2 - y1, du = u2 - u1, dv = v2 - v1;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(5, kDim);
    g.row(0) << x1, y1, 0, 0, 0, 0, 0, 0;
    g.row(1) << -dx, -dy, dx, dy, 0, 0, 0, 0;
    g.row(2) << u1, v1, 0, 0, x1, y1, 0, 0;
    g.row(3) << -du, -dv, du, dv, -dx, -dy, dx, dy;
    g.row(4) << 0, kGravity, 0, kGravity, u1, v1, u2, v2;
    return SparseMat(g.sparseView());
  };
  return cs;
}

/// One step of the two-stage partitioned half-explicit Runge-Kutta scheme
/// (tableau A = [0 0; 1 0], A~ = [0 0; 1/2 1/2], b = [1/2 1/2]) applied to
/// the first-order index-2 form. Stage 1 takes the consistent tensions at
/// (q0, w0); the stage-2 tensions are solved so the end-of-step state
/// satisfies the velocity-level constraints. A final Newton projection onto
/// the full invariant set (rod lengths, rod velocities, energy anchored at
/// the input state) removes the O(h^3) per-step defect that would otherwise
/// accumulate over long trajectories.
inline Eigen::VectorXd pherk2_step(const Eigen::VectorXd& s, double dt) {
  if (!(dt > 0.0)) throw DimensionError("pendulum::pherk2_step: dt must be positive");
  const Eigen::Vector4d q0 = s.head<4>();
  const Eigen::Vector4d w0 = s.tail<4>();

  // stage 1
  const Eigen::Vector2d lam1 = tensions(s);
  const Eigen::Vector4d wd1 = accelerations(s, lam1);

  // stage 2 positions
  const Eigen::Vector4d q2 = q0 + dt * w0;
  const double x1 = q2[0], y1 = q2[1];
  const double dx = q2[2] - q2[0], dy = q2[3] - q2[1];
  Eigen::Vector4d a_hat;
  a_hat << 0.0, -kGravity, 0.0, -kGravity;
  Eigen::Matrix<double, 4, 2> phi;  // d(accelerations)/d(lambda) at q2
  phi << -x1, dx, -y1, dy, 0.0, -dx, 0.0, -dy;

  const Eigen::Vector4d w_fix = w0 + 0.5 * dt * (wd1 + a_hat);

  // Solve the stage-2 tensions so the velocity-level constraints at the step
  // end point keep the input's own values (zero on the nominal manifold):
  //   w1 = w_fix + (dt/2) Phi lam,  q1 = q0 + (dt/2) (w0 + w1).
  Eigen::Vector2d gv_target;
  gv_target << q0[0] * w0[0] + q0[1] * w0[1],
      (q0[2] - q0[0]) * (w0[2] - w0[0]) + (q0[3] - q0[1]) * (w0[3] - w0[1]);
  Eigen::Vector2d lam2 = Eigen::Vector2d::Zero();
  Eigen::Vector4d w1, q1;
  for (int it = 0; it < 25; ++it) {
    w1 = w_fix + 0.5 * dt * (phi * lam2);
    q1 = q0 + 0.5 * dt * (w0 + w1);
    const double qx1 = q1[0], qy1 = q1[1];
    const double qdx = q1[2] - q1[0], qdy = q1[3] - q1[1];
    const double wdu = w1[2] - w1[0], wdv = w1[3] - w1[1];
    Eigen::Vector2d gv;
    gv << qx1 * w1[0] + qy1 * w1[1] - gv_target[0],
        qdx * wdu + qdy * wdv - gv_target[1];
    if (gv.cwiseAbs().maxCoeff() < 1e-13) break;
    Eigen::Matrix<double, 2, 4> gp;  // d g_vel / d w at (q1, .)
    gp << qx1, qy1, 0, 0, -qdx, -qdy, qdx, qdy;
    Eigen::Matrix<double, 2, 4> gq;  // d g_vel / d q at (., w1)
    gq << w1[0], w1[1], 0, 0, -wdu, -wdv, wdu, wdv;
    const Eigen::Matrix2d jac =
        gp * (0.5 * dt * phi) + gq * (0.25 * dt * dt * phi);
    const double det = jac(0, 0) * jac(1, 1) - jac(0, 1) * jac(1, 0);
    if (std::abs(det) < 1e-300)
      throw NumericalError("pendulum::pherk2_step: stage algebraic solve failed");
    lam2 -= jac.inverse() * gv;
  }
  w1 = w_fix + 0.5 * dt * (phi * lam2);
  q1 = q0 + 0.5 * dt * (w0 + w1);

  Eigen::VectorXd out(kDim);
  out.head<4>() = q1;
  out.tail<4>() = w1;

  // Invariant enforcement: project onto the *input's own* invariant level set
  // {g(x) = g(s)}. On-manifold states keep all five constraints at solver
  // precision; off-manifold states (analyses of unconstrained filters) keep
  // their violated values instead of being pulled to the nominal manifold,
  // i.e. the model preserves its invariants weakly, wherever they are.
  const ConstraintSystem nominal = constraints(total_energy(s));
  const Eigen::VectorXd target = nominal.eval(s);
  ConstraintSystem level_set = nominal;
  level_set.eval = [base = nominal.eval, target](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(base(x) - target);
  };
  return robust_project(out, level_set, 1e-12, 30, 5);
}

/// The reference state followed by count-1 evolutions spaced dt_samp apart;
/// truth and ensemble members are drawn from this pool without repetition.
inline std::vector<Eigen::VectorXd> sample_pool(int count, double dt_samp) {
  std::vector<Eigen::VectorXd> pool;
  pool.reserve(count);
  Eigen::VectorXd s = reference_state();
  pool.push_back(s);
  for (int i = 1; i < count; ++i) {
    s = pherk2_step(s, dt_samp);
    pool.push_back(s);
  }
  return pool;
}

}  // namespace cpda::pendulum
