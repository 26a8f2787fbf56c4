#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "cpda/constraints.hpp"
#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"
#include "cpda/rng.hpp"

namespace cpda::ns2d {

// Incompressible Navier-Stokes in vorticity-streamfunction form on
// [0,1] x [-1,1] with homogeneous Dirichlet boundaries:
//   d omega / dt = -J(psi, omega) + Re^{-1} Lap omega + Ro^{-1} (psi_x + F),
//   Lap psi = -omega,   F = sin(pi y).
// The assimilated state is the velocity pair stacked as [u; v] with
// node index k = i * ny + j (x-major), n_s = 2 nx ny.
//
// All first derivatives are tensor-product operators (central interior,
// second-order one-sided at walls). Because d/dx and d/dy act on different
// tensor factors they commute exactly, so velocities derived from any
// streamfunction are discretely divergence-free to machine precision.

struct Grid {
  int nx = 64;
  int ny = 129;
  double dx() const { return 1.0 / (nx - 1); }
  double dy() const { return 2.0 / (ny - 1); }
  int nodes() const { return nx * ny; }
  int state_dim() const { return 2 * nodes(); }
  int idx(int i, int j) const { return i * ny + j; }
  double x(int i) const { return i * dx(); }
  double y(int j) const { return -1.0 + j * dy(); }
  bool interior(int i, int j) const { return i > 0 && i < nx - 1 && j > 0 && j < ny - 1; }
};

namespace detail {

/// 1D first derivative: central interior, second-order one-sided ends.
inline SparseMat d1_matrix(int n, double h) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(3 * n);
  const double c = 1.0 / (2.0 * h);
  t.emplace_back(0, 0, -3.0 * c);
  t.emplace_back(0, 1, 4.0 * c);
  t.emplace_back(0, 2, -1.0 * c);
  for (int i = 1; i < n - 1; ++i) {
    t.emplace_back(i, i - 1, -c);
    t.emplace_back(i, i + 1, c);
  }
  t.emplace_back(n - 1, n - 1, 3.0 * c);
  t.emplace_back(n - 1, n - 2, -4.0 * c);
  t.emplace_back(n - 1, n - 3, 1.0 * c);
  SparseMat m(n, n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

}  // namespace detail

class Model {
 public:
  Model(Grid grid, double re = 450.0, double ro = 0.0036)
      : grid_(grid), re_(re), ro_(ro) {
    build_operators();
  }

  const Grid& grid() const { return grid_; }
  double reynolds() const { return re_; }
  double rossby() const { return ro_; }

  const SparseMat& ddx() const { return cx_; }
  const SparseMat& ddy() const { return cy_; }
  const SparseMat& divergence() const { return div_; }
  const SparseMat& curl() const { return curl_; }

  /// Solves Lap psi = -omega with psi = 0 on the boundary.
  Eigen::VectorXd poisson_psi(const Eigen::VectorXd& omega) const {
    const int ni = grid_.nx - 2, nj = grid_.ny - 2;
    Eigen::VectorXd rhs(ni * nj);
    for (int i = 1; i < grid_.nx - 1; ++i)
      for (int j = 1; j < grid_.ny - 1; ++j)
        rhs[(i - 1) * nj + (j - 1)] = omega[grid_.idx(i, j)];
    const Eigen::VectorXd sol = poisson_->solve(rhs);
    if (poisson_->info() != Eigen::Success)
      throw NumericalError("ns2d: Poisson solve failed");
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(grid_.nodes());
    for (int i = 1; i < grid_.nx - 1; ++i)
      for (int j = 1; j < grid_.ny - 1; ++j)
        psi[grid_.idx(i, j)] = sol[(i - 1) * nj + (j - 1)];
    return psi;
  }

  /// Arakawa's energy/enstrophy-conserving nine-point Jacobian; zero on the
  /// boundary ring.
  Eigen::VectorXd arakawa(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grid_.nodes());
    const double c = 1.0 / (12.0 * grid_.dx() * grid_.dy());
    const int ny = grid_.ny;
    for (int i = 1; i < grid_.nx - 1; ++i) {
      for (int j = 1; j < ny - 1; ++j) {
        const int k = i * ny + j;
        const int e = k + ny, w = k - ny, n = k + 1, s = k - 1;
        const int ne = e + 1, se = e - 1, nw = w + 1, sw = w - 1;
        const double j1 = (p[e] - p[w]) * (q[n] - q[s]) - (p[n] - p[s]) * (q[e] - q[w]);
        const double j2 = p[e] * (q[ne] - q[se]) - p[w] * (q[nw] - q[sw]) -
                          p[n] * (q[ne] - q[nw]) + p[s] * (q[se] - q[sw]);
        const double j3 = q[n] * (p[ne] - p[nw]) - q[s] * (p[se] - p[sw]) -
                          q[e] * (p[ne] - p[se]) + q[w] * (p[nw] - p[sw]);
        out[k] = c * (j1 + j2 + j3);
      }
    }
    return out;
  }

  Eigen::VectorXd laplacian(const Eigen::VectorXd& f) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grid_.nodes());
    const double cx = 1.0 / (grid_.dx() * grid_.dx());
    const double cy = 1.0 / (grid_.dy() * grid_.dy());
    const int ny = grid_.ny;
    for (int i = 1; i < grid_.nx - 1; ++i)
      for (int j = 1; j < ny - 1; ++j) {
        const int k = i * ny + j;
        out[k] = cx * (f[k + ny] - 2.0 * f[k] + f[k - ny]) +
                 cy * (f[k + 1] - 2.0 * f[k] + f[k - 1]);
      }
    return out;
  }

  /// Vorticity tendency; the boundary ring stays at zero.
  Eigen::VectorXd rhs(const Eigen::VectorXd& omega) const {
    const Eigen::VectorXd psi = poisson_psi(omega);
    Eigen::VectorXd out = -arakawa(psi, omega) + laplacian(omega) / re_;
    const Eigen::VectorXd psi_x = cx_ * psi;
    for (int i = 1; i < grid_.nx - 1; ++i)
      for (int j = 1; j < grid_.ny - 1; ++j) {
        const int k = grid_.idx(i, j);
        out[k] += (psi_x[k] + forcing_[k]) / ro_;
      }
    return out;
  }

  /// Strong-stability-preserving three-stage Runge-Kutta step.
  Eigen::VectorXd rk3_step(const Eigen::VectorXd& omega, double dt) const {
    const Eigen::VectorXd s1 = omega + dt * rhs(omega);
    const Eigen::VectorXd s2 = 0.75 * omega + 0.25 * (s1 + dt * rhs(s1));
    return omega / 3.0 + (2.0 / 3.0) * (s2 + dt * rhs(s2));
  }

  /// (u, v) = (psi_y, -psi_x).
  Eigen::VectorXd velocities_from_psi(const Eigen::VectorXd& psi) const {
    Eigen::VectorXd uv(grid_.state_dim());
    uv.head(grid_.nodes()) = cy_ * psi;
    uv.tail(grid_.nodes()) = -(cx_ * psi);
    return uv;
  }

  Eigen::VectorXd velocities_from_vorticity(const Eigen::VectorXd& omega) const {
    return velocities_from_psi(poisson_psi(omega));
  }

  /// omega = v_x - u_y with the vorticity boundary reset to zero.
  Eigen::VectorXd vorticity_from_velocities(const Eigen::VectorXd& uv) const {
    Eigen::VectorXd omega = curl_ * uv;
    for (int i = 0; i < grid_.nx; ++i) {
      omega[grid_.idx(i, 0)] = 0.0;
      omega[grid_.idx(i, grid_.ny - 1)] = 0.0;
    }
    for (int j = 0; j < grid_.ny; ++j) {
      omega[grid_.idx(0, j)] = 0.0;
      omega[grid_.idx(grid_.nx - 1, j)] = 0.0;
    }
    return omega;
  }

  /// One assimilation interval: velocities -> vorticity -> `substeps` RK3
  /// steps -> velocities.
  Eigen::VectorXd step_cycle(const Eigen::VectorXd& uv, double dt_total, int substeps) const {
    Eigen::VectorXd omega = vorticity_from_velocities(uv);
    const double dt = dt_total / substeps;
    for (int s = 0; s < substeps; ++s) omega = rk3_step(omega, dt);
    return velocities_from_vorticity(omega);
  }

  double energy(const Eigen::VectorXd& uv) const {
    return 0.5 * grid_.dx() * grid_.dy() * uv.squaredNorm();
  }

  double enstrophy(const Eigen::VectorXd& uv) const {
    return 0.5 * grid_.dx() * grid_.dy() * (curl_ * uv).squaredNorm();
  }

  // Forecast-relative constraints for one member are built by
  // member_constraints() below (free function so the returned evaluators can
  // hold the model alive).

  /// blkdiag(L, L) with L the full-grid Laplacian, Dirichlet couplings
  /// dropped and boundary rows set to the interior diagonal; symmetric and
  /// nonsingular, used for the diffusion sigma = blkdiag(L, L)^{-1} and the
  /// precision s * blkdiag(L, L)^2.
  SparseMat block_laplacian() const {
    const int n = grid_.nodes();
    const double cx = 1.0 / (grid_.dx() * grid_.dx());
    const double cy = 1.0 / (grid_.dy() * grid_.dy());
    const double diag = -2.0 * (cx + cy);
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(2 * 5 * n);
    for (int blk = 0; blk < 2; ++blk) {
      const int off = blk * n;
      for (int i = 0; i < grid_.nx; ++i) {
        for (int j = 0; j < grid_.ny; ++j) {
          const int k = grid_.idx(i, j);
          t.emplace_back(off + k, off + k, diag);
          if (!grid_.interior(i, j)) continue;
          if (i > 1) t.emplace_back(off + k, off + k - grid_.ny, cx);
          if (i < grid_.nx - 2) t.emplace_back(off + k, off + k + grid_.ny, cx);
          if (j > 1) t.emplace_back(off + k, off + k - 1, cy);
          if (j < grid_.ny - 2) t.emplace_back(off + k, off + k + 1, cy);
        }
      }
    }
    SparseMat l(2 * n, 2 * n);
    l.setFromTriplets(t.begin(), t.end());
    return l;
  }

  /// Smooth random field from the first `modes` x `modes` Dirichlet sine
  /// modes with N(0,1) coefficients.
  Eigen::VectorXd smooth_random_field(std::uint64_t key, double amplitude, int modes = 3) const {
    CounterRng rng(key);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(grid_.nodes());
    for (int kx = 1; kx <= modes; ++kx)
      for (int ky = 1; ky <= modes; ++ky) {
        const double c = rng.normal();
        for (int i = 0; i < grid_.nx; ++i)
          for (int j = 0; j < grid_.ny; ++j)
            f[grid_.idx(i, j)] += c * std::sin(M_PI * kx * grid_.x(i)) *
                                  std::sin(M_PI * ky * (grid_.y(j) + 1.0) / 2.0);
      }
    return amplitude * f;
  }

  /// Equally spaced m x m interior lattice; index formula
  /// i_k = round((k+1)(nx-1)/(m+1)), j_l = round((l+1)(ny-1)/(m+1)).
  std::vector<std::pair<int, int>> observation_lattice(int m) const {
    std::vector<std::pair<int, int>> pts;
    pts.reserve(m * m);
    for (int k = 0; k < m; ++k)
      for (int l = 0; l < m; ++l) {
        int i = static_cast<int>(std::lround((k + 1) * double(grid_.nx - 1) / (m + 1)));
        int j = static_cast<int>(std::lround((l + 1) * double(grid_.ny - 1) / (m + 1)));
        i = std::min(std::max(i, 1), grid_.nx - 2);
        j = std::min(std::max(j, 1), grid_.ny - 2);
        pts.emplace_back(i, j);
      }
    return pts;
  }

  /// Selects u and v at the observation lattice: n_o = 2 m^2.
  SparseMat observation_operator(int m) const {
    const auto pts = observation_lattice(m);
    const int n_pts = static_cast<int>(pts.size());
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(2 * n_pts);
    for (int p = 0; p < n_pts; ++p) {
      const int k = grid_.idx(pts[p].first, pts[p].second);
      t.emplace_back(p, k, 1.0);
      t.emplace_back(n_pts + p, grid_.nodes() + k, 1.0);
    }
    SparseMat h(2 * n_pts, grid_.state_dim());
    h.setFromTriplets(t.begin(), t.end());
    return h;
  }

  /// Physical location of a state component (u-block and v-block components
  /// at the same node share a location).
  std::pair<double, double> location(int state_index) const {
    const int k = state_index % grid_.nodes();
    return {grid_.x(k / grid_.ny), grid_.y(k % grid_.ny)};
  }

 private:
  void build_operators() {
    const SparseMat dx1 = detail::d1_matrix(grid_.nx, grid_.dx());
    const SparseMat dy1 = detail::d1_matrix(grid_.ny, grid_.dy());
    const int n = grid_.nodes();
    const int ny = grid_.ny;

    std::vector<Eigen::Triplet<double>> tx, ty;
    tx.reserve(dx1.nonZeros() * ny);
    for (int k = 0; k < dx1.outerSize(); ++k)
      for (SparseMat::InnerIterator it(dx1, k); it; ++it)
        for (int j = 0; j < ny; ++j)
          tx.emplace_back(static_cast<int>(it.row()) * ny + j,
                          static_cast<int>(it.col()) * ny + j, it.value());
    cx_.resize(n, n);
    cx_.setFromTriplets(tx.begin(), tx.end());

    ty.reserve(dy1.nonZeros() * grid_.nx);
    for (int k = 0; k < dy1.outerSize(); ++k)
      for (SparseMat::InnerIterator it(dy1, k); it; ++it)
        for (int i = 0; i < grid_.nx; ++i)
          ty.emplace_back(i * ny + static_cast<int>(it.row()),
                          i * ny + static_cast<int>(it.col()), it.value());
    cy_.resize(n, n);
    cy_.setFromTriplets(ty.begin(), ty.end());

    // div [u; v] = Cx u + Cy v ; curl [u; v] = Cx v - Cy u
    std::vector<Eigen::Triplet<double>> td, tc;
    td.reserve(cx_.nonZeros() + cy_.nonZeros());
    tc.reserve(cx_.nonZeros() + cy_.nonZeros());
    for (int k = 0; k < cx_.outerSize(); ++k)
      for (SparseMat::InnerIterator it(cx_, k); it; ++it) {
        td.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        tc.emplace_back(static_cast<int>(it.row()), n + static_cast<int>(it.col()), it.value());
      }
    for (int k = 0; k < cy_.outerSize(); ++k)
      for (SparseMat::InnerIterator it(cy_, k); it; ++it) {
        td.emplace_back(static_cast<int>(it.row()), n + static_cast<int>(it.col()), it.value());
        tc.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), -it.value());
      }
    div_.resize(n, 2 * n);
    div_.setFromTriplets(td.begin(), td.end());
    curl_.resize(n, 2 * n);
    curl_.setFromTriplets(tc.begin(), tc.end());

    // interior Dirichlet Laplacian, negated so the factorization is SPD
    const int ni = grid_.nx - 2, nj = grid_.ny - 2;
    const double cxx = 1.0 / (grid_.dx() * grid_.dx());
    const double cyy = 1.0 / (grid_.dy() * grid_.dy());
    std::vector<Eigen::Triplet<double>> tl;
    tl.reserve(5 * ni * nj);
    for (int i = 0; i < ni; ++i)
      for (int j = 0; j < nj; ++j) {
        const int k = i * nj + j;
        tl.emplace_back(k, k, 2.0 * (cxx + cyy));
        if (i > 0) tl.emplace_back(k, k - nj, -cxx);
        if (i < ni - 1) tl.emplace_back(k, k + nj, -cxx);
        if (j > 0) tl.emplace_back(k, k - 1, -cyy);
        if (j < nj - 1) tl.emplace_back(k, k + 1, -cyy);
      }
    SparseMat neg_lap(ni * nj, ni * nj);
    neg_lap.setFromTriplets(tl.begin(), tl.end());
    poisson_ = std::make_shared<Eigen::SimplicialLDLT<SparseMat>>(neg_lap);
    if (poisson_->info() != Eigen::Success)
      throw NumericalError("ns2d: Poisson prefactorization failed");

    forcing_.resize(n);
    for (int i = 0; i < grid_.nx; ++i)
      for (int j = 0; j < grid_.ny; ++j)
        forcing_[grid_.idx(i, j)] = std::sin(M_PI * grid_.y(j));
  }

  Grid grid_;
  double re_, ro_;
  SparseMat cx_, cy_, div_, curl_;
  Eigen::VectorXd forcing_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMat>> poisson_;
};

/// Forecast-relative constraint system for one member: pointwise divergence
/// at every grid node plus energy and enstrophy equality with the anchor.
/// n_c = nx ny + 2. The evaluators share ownership of the model.
inline ConstraintSystem member_constraints(std::shared_ptr<const Model> model,
                                           const Eigen::VectorXd& anchor_uv) {
  ConstraintSystem cs;
  const int n = model->grid().nodes();
  cs.n_c = n + 2;
  cs.kind = ConstraintKind::ForecastRelative;
  const double e0 = model->energy(anchor_uv);
  const double z0 = model->enstrophy(anchor_uv);
  const double quad = model->grid().dx() * model->grid().dy();
  cs.eval = [model, e0, z0, n](const Eigen::VectorXd& uv) {
    Eigen::VectorXd g(n + 2);
    g.head(n) = model->divergence() * uv;
    g[n] = model->energy(uv) - e0;
    g[n + 1] = model->enstrophy(uv) - z0;
    return g;
  };
  cs.jacobian = [model, quad, n](const Eigen::VectorXd& uv) {
    const SparseMat& div = model->divergence();
    const SparseMat& curl = model->curl();
    SparseMat jac(n + 2, 2 * n);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(div.nonZeros() + 4 * n);
    for (int k = 0; k < div.outerSize(); ++k)
      for (SparseMat::InnerIterator it(div, k); it; ++it)
        trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    const Eigen::VectorXd energy_row = quad * uv;
    const Eigen::VectorXd enstrophy_row = quad * (curl.transpose() * (curl * uv).eval());
    for (int c = 0; c < 2 * n; ++c) {
      if (energy_row[c] != 0.0) trip.emplace_back(n, c, energy_row[c]);
      if (enstrophy_row[c] != 0.0) trip.emplace_back(n + 1, c, enstrophy_row[c]);
    }
    jac.setFromTriplets(trip.begin(), trip.end());
    return jac;
  };
  return cs;
}

}  // namespace cpda::ns2d
