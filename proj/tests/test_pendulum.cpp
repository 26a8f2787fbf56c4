#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "cpda/models/pendulum.hpp"

using namespace cpda;

TEST_CASE("pendulum rhs at the hanging rest state") {
  // both rods straight down, zero velocity: the tensions carry the weight
  Eigen::VectorXd s(8);
  s << 0, -1, 0, -2, 0, 0, 0, 0;
  const auto r = pendulum::rhs(s);
  REQUIRE(r.deriv.lpNorm<Eigen::Infinity>() < 1e-12);

  // substituting lambda back reproduces the linear system
  const double x1 = s[0], y1 = s[1];
  const double dx = s[2] - s[0], dy = s[3] - s[1];
  Eigen::Matrix2d m;
  m << x1 * x1 + y1 * y1, -(x1 * dx + y1 * dy), -(x1 * dx + y1 * dy),
      2.0 * (dx * dx + dy * dy);
  Eigen::Vector2d b;
  b << -pendulum::kGravity * y1, 0.0;
  REQUIRE((m * r.lambda - b).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("pendulum energy is conserved along the vector field") {
  Eigen::VectorXd s = pendulum::reference_state();
  for (int i = 0; i < 137; ++i) s = pendulum::pherk2_step(s, 0.01);
  // finite-difference d/dt E along the rhs
  const double h = 1e-6;
  const auto r = pendulum::rhs(s);
  const double ep = pendulum::total_energy(s + h * r.deriv);
  const double em = pendulum::total_energy(s - h * r.deriv);
  REQUIRE(std::abs((ep - em) / (2.0 * h)) < 1e-6);
}

TEST_CASE("pendulum constraints") {
  Eigen::VectorXd rest(8);
  rest << 0, -1, 0, -2, 0, 0, 0, 0;
  const double e_rest = pendulum::total_energy(rest);
  REQUIRE(pendulum::constraints(e_rest).eval(rest).lpNorm<Eigen::Infinity>() == 0.0);

  // the experiment's reference energy
  const double e0 = pendulum::total_energy(pendulum::reference_state());
  REQUIRE(e0 == Catch::Approx(56.1741).margin(1e-4));

  Eigen::VectorXd s = pendulum::reference_state();
  for (int i = 0; i < 77; ++i) s = pendulum::pherk2_step(s, 0.01);
  REQUIRE(jacobian_check(pendulum::constraints(e0), s, 1e-6) < 1e-5);
}

TEST_CASE("pherk2 preserves the constraints over long runs") {
  const Eigen::VectorXd ref = pendulum::reference_state();
  const ConstraintSystem cs = pendulum::constraints(pendulum::total_energy(ref));
  Eigen::VectorXd s = ref;
  double worst = 0.0;
  for (int i = 0; i < 3000; ++i) {
    s = pendulum::pherk2_step(s, 0.01);
    worst = std::max(worst, cs.eval(s).lpNorm<Eigen::Infinity>());
  }
  REQUIRE(worst < 1e-6);
}

TEST_CASE("pherk2 mirror symmetry") {
  // x -> -x is a symmetry of the dynamics; trajectories commute with it
  auto mirror = [](const Eigen::VectorXd& s) {
    Eigen::VectorXd m = s;
    m[0] = -s[0];
    m[2] = -s[2];
    m[4] = -s[4];
    m[6] = -s[6];
    return m;
  };
  Eigen::VectorXd a = pendulum::reference_state();
  Eigen::VectorXd b = mirror(a);
  for (int i = 0; i < 100; ++i) {
    a = pendulum::pherk2_step(a, 0.01);
    b = pendulum::pherk2_step(b, 0.01);
  }
  REQUIRE((mirror(a) - b).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("pherk2 is second order (Richardson self-convergence)") {
  // start from a moving on-manifold state
  Eigen::VectorXd s0 = pendulum::reference_state();
  for (int i = 0; i < 200; ++i) s0 = pendulum::pherk2_step(s0, 0.01);

  auto run = [&](double dt, double t_final) {
    Eigen::VectorXd s = s0;
    const int n = static_cast<int>(std::lround(t_final / dt));
    for (int i = 0; i < n; ++i) s = pendulum::pherk2_step(s, dt);
    return s;
  };
  const double t_final = 0.12;
  const Eigen::VectorXd ref = run(1.25e-4, t_final);
  const double e1 = (run(4e-3, t_final) - ref).norm();
  const double e2 = (run(2e-3, t_final) - ref).norm();
  const double e3 = (run(1e-3, t_final) - ref).norm();
  const double slope1 = std::log2(e1 / e2);
  const double slope2 = std::log2(e2 / e3);
  REQUIRE(slope1 == Catch::Approx(2.0).margin(0.2));
  REQUIRE(slope2 == Catch::Approx(2.0).margin(0.2));
}

TEST_CASE("pendulum degenerate geometry is reported") {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(8);  // both points at the origin
  REQUIRE_THROWS_AS(pendulum::rhs(s), RankDeficiencyError);
}

TEST_CASE("sample pool stays on the reference manifold") {
  const double e0 = pendulum::total_energy(pendulum::reference_state());
  const ConstraintSystem cs = pendulum::constraints(e0);
  const auto pool = pendulum::sample_pool(40, 0.008);
  REQUIRE(pool.size() == 40);
  for (const auto& s : pool) REQUIRE(cs.eval(s).lpNorm<Eigen::Infinity>() < 1e-9);
}
