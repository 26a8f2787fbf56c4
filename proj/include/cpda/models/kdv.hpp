#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <vector>

#include "cpda/constraints.hpp"
#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"

namespace cpda::kdv {

// Korteweg-de Vries  x_t + 3 (x^2)_x + x_xxx = 0  on the periodic domain
// [-10, 10], second-order central differences, n = 100 grid points in the
// reference experiment.

struct Grid {
  int n = 100;
  double length = 20.0;
  double dx() const { return length / n; }
  Eigen::VectorXd nodes() const {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = -0.5 * length + dx() * i;
    return x;
  }
};

/// Nonlinear advection 3 (x^2)_x = 6 x x_x in the energy-conserving
/// three-point form (x_{i+1} + x_i + x_{i-1})(x_{i+1} - x_{i-1}) / dx,
/// which preserves the discrete mass and momentum sums exactly.
inline Eigen::VectorXd nonlinear_term(const Eigen::VectorXd& x, double dx) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const double xp = x[(i + 1) % n], xm = x[(i + n - 1) % n];
    out[i] = (xp + x[i] + xm) * (xp - xm) / dx;
  }
  return out;
}

inline Eigen::VectorXd third_derivative(const Eigen::VectorXd& x, double dx) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd out(n);
  const double c = 1.0 / (2.0 * dx * dx * dx);
  for (int i = 0; i < n; ++i) {
    const double xp2 = x[(i + 2) % n], xp = x[(i + 1) % n];
    const double xm = x[(i + n - 1) % n], xm2 = x[(i + n - 2) % n];
    out[i] = c * (xp2 - 2.0 * xp + 2.0 * xm - xm2);
  }
  return out;
}

inline Eigen::VectorXd rhs(const Eigen::VectorXd& x, const Grid& grid) {
  return -nonlinear_term(x, grid.dx()) - third_derivative(x, grid.dx());
}

/// Analytic tendency Jacobian (periodic banded).
inline SparseMat rhs_jacobian(const Eigen::VectorXd& x, const Grid& grid) {
  const int n = static_cast<int>(x.size());
  const double dx = grid.dx();
  const double c3 = 1.0 / (2.0 * dx * dx * dx);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(5 * n);
  for (int i = 0; i < n; ++i) {
    const int ip = (i + 1) % n, im = (i + n - 1) % n;
    const int ip2 = (i + 2) % n, im2 = (i + n - 2) % n;
    const double xp = x[ip], xm = x[im];
    // d/dx of the nonlinear three-point form
    trip.emplace_back(i, ip, -((xp - xm) + (xp + x[i] + xm)) / dx);
    trip.emplace_back(i, i, -(xp - xm) / dx);
    trip.emplace_back(i, im, -((xp - xm) - (xp + x[i] + xm)) / dx);
    // third derivative
    trip.emplace_back(i, ip2, -c3);
    trip.emplace_back(i, ip, 2.0 * c3);
    trip.emplace_back(i, im, -2.0 * c3);
    trip.emplace_back(i, im2, c3);
  }
  SparseMat j(n, n);
  j.setFromTriplets(trip.begin(), trip.end());
  return j;
}

/// Implicit midpoint step x1 = x0 + dt f((x0 + x1)/2), solved by Newton with
/// the analytic tendency Jacobian to an inf-norm residual below 1e-11.
inline Eigen::VectorXd implicit_midpoint_step(const Eigen::VectorXd& x0, double dt,
                                              const Grid& grid) {
  if (!(dt > 0.0)) throw DimensionError("kdv::implicit_midpoint_step: dt must be positive");
  const int n = static_cast<int>(x0.size());
  Eigen::VectorXd x1 = x0;
  for (int it = 0; it < 30; ++it) {
    const Eigen::VectorXd mid = 0.5 * (x0 + x1);
    const Eigen::VectorXd res = x1 - x0 - dt * rhs(mid, grid);
    if (res.lpNorm<Eigen::Infinity>() < 1e-11) return x1;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(n, n) -
                          0.5 * dt * Eigen::MatrixXd(rhs_jacobian(mid, grid));
    x1 -= Eigen::PartialPivLU<Eigen::MatrixXd>(jac).solve(res);
    if (!x1.allFinite()) break;
  }
  throw NumericalError("kdv::implicit_midpoint_step: Newton did not converge; reduce dt");
}

/// Discrete mass, momentum, and energy functionals:
///   phi_1 = dx sum x,  phi_2 = dx sum x^2,
///   phi_3 = dx sum (0.5 (D+ x)^2 - x^3)   with D+ the forward difference.
/// For the two-soliton state 6 sech^2 these evaluate to [12, 48, -211.3815].
inline Eigen::Vector3d invariants(const Eigen::VectorXd& x, const Grid& grid) {
  const int n = static_cast<int>(x.size());
  const double dx = grid.dx();
  double p1 = 0.0, p2 = 0.0, p3 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double fwd = (x[(i + 1) % n] - x[i]) / dx;
    p1 += x[i];
    p2 += x[i] * x[i];
    p3 += 0.5 * fwd * fwd - x[i] * x[i] * x[i];
  }
  return Eigen::Vector3d(dx * p1, dx * p2, dx * p3);
}

/// g(x) = phi(x) - anchor with the analytic Jacobian rows
///   d phi_1 = dx 1^T,  d phi_2 = 2 dx x^T,
///   d phi_3 = dx (D+^T D+ x - 3 x^2)^T.
inline ConstraintSystem constraints(const Eigen::Vector3d& anchor, const Grid& grid) {
  ConstraintSystem cs;
  cs.n_c = 3;
  cs.kind = ConstraintKind::StateInvariant;
  cs.eval = [anchor, grid](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(invariants(x, grid) - anchor);
  };
  cs.jacobian = [grid](const Eigen::VectorXd& x) {
    const int n = static_cast<int>(x.size());
    const double dx = grid.dx();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3, n);
    for (int i = 0; i < n; ++i) {
      const int ip = (i + 1) % n, im = (i + n - 1) % n;
      g(0, i) = dx;
      g(1, i) = 2.0 * dx * x[i];
      // d/dx_i of 0.5 sum_j ((x_{j+1} - x_j)/dx)^2: contributions from j = i
      // (as left node) and j = i-1 (as right node)
      const double fwd_i = (x[ip] - x[i]) / dx;
      const double fwd_im = (x[i] - x[im]) / dx;
      g(2, i) = dx * ((-fwd_i + fwd_im) / dx - 3.0 * x[i] * x[i]);
    }
    return SparseMat(g.sparseView());
  };
  return cs;
}

/// Periodic discrete Laplacian plus 1e-3 I (the Laplacian alone is singular
/// on the periodic domain); used for both the diffusion and the precision.
inline SparseMat laplacian_like(const Grid& grid, double shift = 1e-3) {
  const int n = grid.n;
  const double c = 1.0 / (grid.dx() * grid.dx());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(3 * n);
  for (int i = 0; i < n; ++i) {
    trip.emplace_back(i, i, -2.0 * c + shift);
    trip.emplace_back(i, (i + 1) % n, c);
    trip.emplace_back(i, (i + n - 1) % n, c);
  }
  SparseMat lap(n, n);
  lap.setFromTriplets(trip.begin(), trip.end());
  return lap;
}

/// Two-soliton initial condition 6 sech^2(x).
inline Eigen::VectorXd two_soliton(const Grid& grid) {
  const Eigen::VectorXd nodes = grid.nodes();
  Eigen::VectorXd x(grid.n);
  for (int i = 0; i < grid.n; ++i) {
    const double c = std::cosh(nodes[i]);
    x[i] = 6.0 / (c * c);
  }
  return x;
}

/// Observation selector for x(stride : stride : n) in 1-based indexing.
inline SparseMat observation_operator(const Grid& grid, int stride = 4) {
  const int n_o = grid.n / stride;
  SparseMat h(n_o, grid.n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n_o);
  for (int k = 0; k < n_o; ++k) trip.emplace_back(k, stride * (k + 1) - 1, 1.0);
  h.setFromTriplets(trip.begin(), trip.end());
  return h;
}

}  // namespace cpda::kdv
