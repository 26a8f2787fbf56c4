#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "cpda/models/ns2d.hpp"
#include "cpda/rng.hpp"

using namespace cpda;

namespace {

std::shared_ptr<const ns2d::Model> small_model(int nx = 16, int ny = 21) {
  ns2d::Grid grid;
  grid.nx = nx;
  grid.ny = ny;
  return std::make_shared<const ns2d::Model>(grid);
}

Eigen::VectorXd interior_random(const ns2d::Grid& grid, std::uint64_t seed, int ring = 1) {
  CounterRng rng(seed);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(grid.nodes());
  for (int i = ring; i < grid.nx - ring; ++i)
    for (int j = ring; j < grid.ny - ring; ++j) f[grid.idx(i, j)] = rng.normal();
  return f;
}

}  // namespace

TEST_CASE("ns2d poisson solver") {
  auto model = small_model();
  const auto& grid = model->grid();

  REQUIRE(model->poisson_psi(Eigen::VectorXd::Zero(grid.nodes())).isZero(0.0));

  // the (1,1) grid sine mode is an exact eigenvector of the discrete
  // Dirichlet Laplacian
  const double dx = grid.dx(), dy = grid.dy();
  const double lam = -4.0 / (dx * dx) * std::pow(std::sin(M_PI * dx / 2.0), 2) -
                     4.0 / (dy * dy) * std::pow(std::sin(M_PI * dy / 2.0 / 2.0), 2);
  Eigen::VectorXd mode(grid.nodes());
  for (int i = 0; i < grid.nx; ++i)
    for (int j = 0; j < grid.ny; ++j)
      mode[grid.idx(i, j)] =
          std::sin(M_PI * grid.x(i)) * std::sin(M_PI * (grid.y(j) + 1.0) / 2.0);
  const Eigen::VectorXd psi = model->poisson_psi(mode);
  REQUIRE((psi - mode / (-lam)).lpNorm<Eigen::Infinity>() < 1e-8);

  // round trip: Lap psi = -omega on the interior
  const Eigen::VectorXd omega = interior_random(grid, 3);
  const Eigen::VectorXd psi2 = model->poisson_psi(omega);
  REQUIRE((model->laplacian(psi2) + omega).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("ns2d poisson eigenfunction error converges at second order") {
  // against the continuous eigenvalue the error is O(h^2)
  auto err_for = [](int nx, int ny) {
    ns2d::Grid grid;
    grid.nx = nx;
    grid.ny = ny;
    const ns2d::Model model(grid);
    const double lam_cont = -M_PI * M_PI - M_PI * M_PI / 4.0;
    Eigen::VectorXd mode(grid.nodes());
    for (int i = 0; i < grid.nx; ++i)
      for (int j = 0; j < grid.ny; ++j)
        mode[grid.idx(i, j)] =
            std::sin(M_PI * grid.x(i)) * std::sin(M_PI * (grid.y(j) + 1.0) / 2.0);
    return (model.poisson_psi(mode) - mode / (-lam_cont)).lpNorm<Eigen::Infinity>();
  };
  const double e1 = err_for(9, 17);
  const double e2 = err_for(17, 33);
  REQUIRE(std::log2(e1 / e2) == Catch::Approx(2.0).margin(0.2));
}

TEST_CASE("ns2d arakawa jacobian properties") {
  auto model = small_model();
  const auto& grid = model->grid();

  // antisymmetry J(a, a) = 0
  const Eigen::VectorXd a = interior_random(grid, 5);
  REQUIRE(model->arakawa(a, a).lpNorm<Eigen::Infinity>() < 1e-12);

  // discrete energy / enstrophy conservation sums
  const Eigen::VectorXd p = interior_random(grid, 7);
  const Eigen::VectorXd q = interior_random(grid, 11);
  const Eigen::VectorXd j = model->arakawa(p, q);
  REQUIRE(std::abs(q.dot(j)) < 1e-10 * q.norm() * j.norm());
  REQUIRE(std::abs(p.dot(j)) < 1e-10 * p.norm() * j.norm());

  // the plain sum telescopes for fields supported two rings inside
  const Eigen::VectorXd p2 = interior_random(grid, 13, 2);
  const Eigen::VectorXd q2 = interior_random(grid, 17, 2);
  REQUIRE(std::abs(model->arakawa(p2, q2).sum()) < 1e-10);
}

TEST_CASE("ns2d zero vorticity: tendency is the forcing term only") {
  auto model = small_model();
  const auto& grid = model->grid();
  const Eigen::VectorXd f = model->rhs(Eigen::VectorXd::Zero(grid.nodes()));
  for (int i = 1; i < grid.nx - 1; ++i)
    for (int j = 1; j < grid.ny - 1; ++j)
      REQUIRE(f[grid.idx(i, j)] ==
              Catch::Approx(std::sin(M_PI * grid.y(j)) / model->rossby()).margin(1e-12));
}

TEST_CASE("ns2d velocities derived from a streamfunction are divergence-free") {
  auto model = small_model();
  CounterRng rng(23);
  const Eigen::VectorXd psi = model->smooth_random_field(23, 2.0, 4);
  const Eigen::VectorXd uv = model->velocities_from_psi(psi);
  REQUIRE((model->divergence() * uv).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("ns2d round trip psi -> velocities -> vorticity converges to Lap psi") {
  auto err_for = [](int nx, int ny) {
    ns2d::Grid grid;
    grid.nx = nx;
    grid.ny = ny;
    const ns2d::Model model(grid);
    Eigen::VectorXd psi(grid.nodes());
    for (int i = 0; i < grid.nx; ++i)
      for (int j = 0; j < grid.ny; ++j)
        psi[grid.idx(i, j)] =
            std::sin(M_PI * grid.x(i)) * std::sin(M_PI * (grid.y(j) + 1.0));
    const Eigen::VectorXd uv = model.velocities_from_psi(psi);
    // omega = curl(uv) equals -Lap psi = 2 pi^2 psi for this smooth field.
    // Measured two rings inside, where both derivative applications use pure
    // central stencils; the boundary-adjacent composition of one-sided and
    // central stencils is one order lower.
    const Eigen::VectorXd omega = model.curl() * uv;
    double worst = 0.0;
    for (int i = 2; i < grid.nx - 2; ++i)
      for (int j = 2; j < grid.ny - 2; ++j)
        worst = std::max(worst, std::abs(omega[grid.idx(i, j)] -
                                         2.0 * M_PI * M_PI * psi[grid.idx(i, j)]));
    return worst;
  };
  const double e1 = err_for(17, 33);
  const double e2 = err_for(33, 65);
  REQUIRE(std::log2(e1 / e2) == Catch::Approx(2.0).margin(0.3));
}

TEST_CASE("ns2d rk3 self-convergence is third order") {
  auto model = small_model(12, 17);
  const auto& grid = model->grid();
  Eigen::VectorXd w0 = model->smooth_random_field(31, 5.0, 3);

  auto run = [&](double dt, double t_final) {
    Eigen::VectorXd w = w0;
    const int n = static_cast<int>(std::lround(t_final / dt));
    for (int i = 0; i < n; ++i) w = model->rk3_step(w, dt);
    return w;
  };
  const double t_final = 2e-3;
  const Eigen::VectorXd ref = run(t_final / 64.0, t_final);
  const double e1 = (run(t_final / 4.0, t_final) - ref).norm();
  const double e2 = (run(t_final / 8.0, t_final) - ref).norm();
  const double e3 = (run(t_final / 16.0, t_final) - ref).norm();
  REQUIRE(std::log2(e1 / e2) == Catch::Approx(3.0).margin(0.3));
  REQUIRE(std::log2(e2 / e3) == Catch::Approx(3.0).margin(0.3));
}

TEST_CASE("ns2d constraints") {
  auto model = small_model();
  const auto& grid = model->grid();

  SECTION("uniform flow has zero divergence rows") {
    Eigen::VectorXd uv = Eigen::VectorXd::Zero(grid.state_dim());
    uv.head(grid.nodes()).setConstant(3.0);  // u = 3, v = 0
    const ConstraintSystem cs = ns2d::member_constraints(model, uv);
    const Eigen::VectorXd g = cs.eval(uv);
    REQUIRE(g.head(grid.nodes()).lpNorm<Eigen::Infinity>() < 1e-12);
  }

  SECTION("jacobian passes the finite-difference check") {
    const Eigen::VectorXd psi = model->smooth_random_field(37, 1.0, 3);
    const Eigen::VectorXd uv = model->velocities_from_psi(psi);
    const Eigen::VectorXd anchor_psi = model->smooth_random_field(41, 1.0, 3);
    const ConstraintSystem cs =
        ns2d::member_constraints(model, model->velocities_from_psi(anchor_psi));
    REQUIRE(jacobian_check(cs, uv, 1e-6) < 1e-5);
  }

  SECTION("projection restores divergence-freeness and quadratic anchors") {
    const Eigen::VectorXd psi = model->smooth_random_field(43, 1.0, 3);
    const Eigen::VectorXd anchor = model->velocities_from_psi(psi);
    const ConstraintSystem cs = ns2d::member_constraints(model, anchor);
    CounterRng rng(47);
    const Eigen::VectorXd x = anchor + 0.01 * rng.normal_vector(grid.state_dim());
    const auto res = project_to_manifold(x, cs, x, 1e-9, 50);
    REQUIRE(cs.eval(res.x).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}
