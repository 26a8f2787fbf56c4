#include <catch2/catch_amalgamated.hpp>

#include "cpda/kalman.hpp"
#include "cpda/models/pendulum.hpp"
#include "cpda/rng.hpp"

using namespace cpda;

namespace {

Ensemble random_ensemble(int n_s, int n_e, std::uint64_t seed) {
  CounterRng rng(seed);
  Ensemble ens;
  ens.members.resize(n_s, n_e);
  for (int e = 0; e < n_e; ++e) ens.members.col(e) = rng.normal_vector(n_s);
  return ens;
}

ObservationModel identity_obs(int n, const Eigen::VectorXd& y, double r) {
  SparseMat h(n, n);
  h.setIdentity();
  return ObservationModel::from_matrix(h, y, r * Eigen::MatrixXd::Identity(n, n));
}

}  // namespace

TEST_CASE("inflate") {
  Ensemble pair;
  pair.members.resize(1, 2);
  pair.members << 0, 2;
  const Ensemble doubled = inflate(pair, 2.0);
  REQUIRE(doubled.members(0, 0) == Catch::Approx(-1.0));
  REQUIRE(doubled.members(0, 1) == Catch::Approx(3.0));

  const Ensemble r = random_ensemble(3, 8, 5);
  REQUIRE(inflate(r, 1.0).members.isApprox(r.members));
  const Ensemble inflated = inflate(r, 1.08);
  REQUIRE((ensemble_mean(inflated) - ensemble_mean(r)).lpNorm<Eigen::Infinity>() < 1e-12);
  const Eigen::MatrixXd c0 = empirical_covariance(r);
  const Eigen::MatrixXd c1 = empirical_covariance(inflated);
  REQUIRE((c1 - 1.08 * 1.08 * c0).lpNorm<Eigen::Infinity>() < 1e-10 * c0.lpNorm<Eigen::Infinity>());

  REQUIRE_THROWS_AS(inflate(r, 0.9), DimensionError);
}

TEST_CASE("gaspari_cohn endpoints") {
  REQUIRE(gaspari_cohn(0.0, 1.0) == Catch::Approx(1.0));
  REQUIRE(gaspari_cohn(2.0, 1.0) == Catch::Approx(0.0).margin(1e-14));
  REQUIRE(gaspari_cohn(2.5, 1.0) == 0.0);
  REQUIRE(gaspari_cohn(0.559 * 2, 0.559) == Catch::Approx(0.0).margin(1e-14));
  // monotone decay on [0, 2]
  double prev = 1.0;
  for (double d = 0.1; d <= 2.0; d += 0.1) {
    const double w = gaspari_cohn(d, 1.0);
    REQUIRE(w <= prev + 1e-12);
    prev = w;
  }
}

TEST_CASE("etkf: uninformative observations leave the forecast unchanged") {
  const Ensemble fc = random_ensemble(4, 10, 9);
  ObservationModel obs = identity_obs(4, Eigen::VectorXd::Ones(4), 1e12);
  const Ensemble an = etkf_analysis(fc, obs, 1.0);
  REQUIRE((an.members - fc.members).lpNorm<Eigen::Infinity>() <
          1e-4 * fc.members.lpNorm<Eigen::Infinity>());
}

TEST_CASE("etkf: scalar posterior matches the Kalman formulas") {
  CounterRng rng(11);
  Ensemble fc;
  fc.members.resize(1, 40);
  for (int e = 0; e < 40; ++e) fc.members(0, e) = 1.0 + 0.5 * rng.normal();
  const double p = empirical_covariance(fc)(0, 0);
  const double r = 0.3;
  const double y = 2.0;
  Eigen::VectorXd yv(1);
  yv << y;
  const Ensemble an = etkf_analysis(fc, identity_obs(1, yv, r), 1.0);
  const double pa = empirical_covariance(an)(0, 0);
  REQUIRE(pa == Catch::Approx(p * r / (p + r)).epsilon(1e-10));
  const double xf = ensemble_mean(fc)[0];
  const double xa_expected = xf + p / (p + r) * (y - xf);
  REQUIRE(ensemble_mean(an)[0] == Catch::Approx(xa_expected).epsilon(1e-10));
}

TEST_CASE("etkf: linear H preserves linear constraints satisfied by the forecast") {
  CounterRng rng(13);
  const int n = 6, n_e = 8;
  const Eigen::VectorXd a = rng.normal_vector(n);
  Ensemble fc = random_ensemble(n, n_e, 17);
  for (int e = 0; e < n_e; ++e) {
    Eigen::VectorXd c = fc.members.col(e);
    fc.members.col(e) = c - a * (a.dot(c) / a.squaredNorm());  // a^T x = 0 for all members
  }
  SparseMat h(2, n);
  std::vector<Eigen::Triplet<double>> t{{0, 0, 1.0}, {1, 3, 1.0}};
  h.setFromTriplets(t.begin(), t.end());
  ObservationModel obs =
      ObservationModel::from_matrix(h, rng.normal_vector(2), 0.1 * Eigen::MatrixXd::Identity(2, 2));
  const Ensemble an = etkf_analysis(fc, obs, 1.05);
  for (int e = 0; e < n_e; ++e) REQUIRE(std::abs(a.dot(an.members.col(e))) < 1e-10);
}

TEST_CASE("etkf: permutation equivariance") {
  const Ensemble fc = random_ensemble(3, 7, 23);
  CounterRng rng(29);
  ObservationModel obs = identity_obs(3, rng.normal_vector(3), 0.25);
  const Ensemble an = etkf_analysis(fc, obs, 1.02);

  CounterRng shuffle(31);
  const auto perm = shuffle.permutation(7);
  Ensemble permuted;
  permuted.members.resize(3, 7);
  for (int e = 0; e < 7; ++e) permuted.members.col(e) = fc.members.col(perm[e]);
  const Ensemble an_perm = etkf_analysis(permuted, obs, 1.02);
  for (int e = 0; e < 7; ++e)
    REQUIRE((an_perm.members.col(e) - an.members.col(perm[e])).lpNorm<Eigen::Infinity>() < 1e-11);
}

TEST_CASE("letkf: infinite radius matches the global etkf") {
  // 1D chain where every state sees every observation with weight 1
  const int n = 5, n_e = 6;
  const Ensemble fc = random_ensemble(n, n_e, 37);
  CounterRng rng(41);
  ObservationModel obs = identity_obs(n, rng.normal_vector(n), 0.5);
  LocalizationConfig loc;
  loc.radius = 1e9;
  loc.distance = [](int i, int j) { return std::abs(i - j); };
  const Ensemble global = etkf_analysis(fc, obs, 1.03);
  const Ensemble local = letkf_analysis(fc, obs, 1.03, loc);
  REQUIRE((global.members - local.members).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("letkf: states beyond the taper support keep forecast values") {
  const int n = 6, n_e = 5;
  const Ensemble fc = random_ensemble(n, n_e, 43);
  Eigen::VectorXd y(1);
  y << 0.7;
  SparseMat h(1, n);
  std::vector<Eigen::Triplet<double>> t{{0, 0, 1.0}};  // observe state 0 only
  h.setFromTriplets(t.begin(), t.end());
  ObservationModel obs =
      ObservationModel::from_matrix(h, y, 0.1 * Eigen::MatrixXd::Identity(1, 1));
  LocalizationConfig loc;
  loc.radius = 1.0;  // support = 2: states 2.. are untouched
  loc.distance = [](int i, int j) { return std::abs(i - j); };
  const Ensemble an = letkf_analysis(fc, obs, 1.0, loc);
  for (int i = 2; i < n; ++i)
    REQUIRE((an.members.row(i) - fc.members.row(i)).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((an.members.row(0) - fc.members.row(0)).lpNorm<Eigen::Infinity>() > 1e-6);
}

TEST_CASE("constrained variants") {
  const Eigen::VectorXd ref = pendulum::reference_state();
  const double e0 = pendulum::total_energy(ref);
  const ConstraintSystem cs = pendulum::constraints(e0);

  // forecast on the manifold: walk the reference forward a bit
  const int n_e = 12;
  Ensemble fc;
  fc.members.resize(8, n_e);
  Eigen::VectorXd s = ref;
  for (int e = 0; e < n_e; ++e) {
    for (int k = 0; k < 25; ++k) s = pendulum::pherk2_step(s, 0.008);
    fc.members.col(e) = s;
  }

  FilterConfig cfg;
  cfg.constraints = {cs};

  SECTION("ETKFP with huge R leaves members near the forecast") {
    ObservationModel obs = identity_obs(8, ensemble_mean(fc), 1e12);
    cfg.variant = FilterVariant::Etkfp;
    cfg.inflation = 1.0;
    const Ensemble an = kalman_analysis(fc, obs, cfg);
    REQUIRE((an.members - fc.members).lpNorm<Eigen::Infinity>() < 1e-4);
    for (int e = 0; e < n_e; ++e)
      REQUIRE(cs.eval(an.members.col(e)).lpNorm<Eigen::Infinity>() < 1e-10);
  }

  SECTION("ETKFP pendulum analysis satisfies all constraints") {
    CounterRng rng(47);
    ObservationModel obs =
        identity_obs(8, fc.members.col(0) + 0.3 * rng.normal_vector(8), 0.1);
    cfg.variant = FilterVariant::Etkfp;
    cfg.inflation = 1.08;
    const Ensemble an = kalman_analysis(fc, obs, cfg);
    for (int e = 0; e < n_e; ++e)
      REQUIRE(cs.eval(an.members.col(e)).lpNorm<Eigen::Infinity>() < 1e-10);
  }

  SECTION("ETKFA with tiny R_g pins a linear constraint") {
    CounterRng rng(53);
    const int n = 4, m = 10;
    const Eigen::VectorXd a = rng.normal_vector(n);
    ConstraintSystem lin;
    lin.n_c = 1;
    lin.eval = [a](const Eigen::VectorXd& x) {
      Eigen::VectorXd g(1);
      g[0] = a.dot(x);
      return g;
    };
    lin.jacobian = [a](const Eigen::VectorXd&) {
      Eigen::MatrixXd g(1, a.size());
      g.row(0) = a.transpose();
      return SparseMat(g.sparseView());
    };
    const Ensemble fcl = random_ensemble(n, m, 59);
    ObservationModel obs = identity_obs(n, rng.normal_vector(n), 0.5);
    FilterConfig acfg;
    acfg.variant = FilterVariant::Etkfa;
    acfg.inflation = 1.0;
    acfg.constraints = {lin};
    acfg.r_g = 1e-12 * Eigen::MatrixXd::Identity(1, 1);
    const Ensemble an = kalman_analysis(fcl, obs, acfg);
    for (int e = 0; e < m; ++e) REQUIRE(std::abs(a.dot(an.members.col(e))) < 1e-5);
  }

  SECTION("config validation") {
    ObservationModel obs = identity_obs(8, ensemble_mean(fc), 0.1);
    FilterConfig bad;
    bad.variant = FilterVariant::Etkfp;
    REQUIRE_THROWS_AS(kalman_analysis(fc, obs, bad), ConfigError);
    bad.variant = FilterVariant::Letkf;
    REQUIRE_THROWS_AS(kalman_analysis(fc, obs, bad), ConfigError);
  }
}
