#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "cpda/constraints.hpp"
#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"
#include "cpda/observation.hpp"

namespace cpda {

/// Gaspari-Cohn fifth-order piecewise rational taper with support 2c.
inline double gaspari_cohn(double distance, double c) {
  if (!(c > 0.0)) throw DimensionError("gaspari_cohn: radius must be positive");
  const double r = std::abs(distance) / c;
  if (r >= 2.0) return 0.0;
  const double r2 = r * r, r3 = r2 * r, r4 = r3 * r, r5 = r4 * r;
  if (r <= 1.0)
    return -0.25 * r5 + 0.5 * r4 + 0.625 * r3 - 5.0 / 3.0 * r2 + 1.0;
  return r5 / 12.0 - 0.5 * r4 + 0.625 * r3 + 5.0 / 3.0 * r2 - 5.0 * r + 4.0 - 2.0 / (3.0 * r);
}

/// Multiplicative anomaly inflation: mean + alpha * (member - mean).
inline Ensemble inflate(const Ensemble& ens, double alpha) {
  if (ens.size() < 2) throw DimensionError("inflate: need n_e >= 2");
  if (!(alpha >= 1.0)) throw DimensionError("inflate: alpha must be >= 1");
  const Eigen::VectorXd mean = ensemble_mean(ens);
  Ensemble out;
  out.members = (alpha * (ens.members.colwise() - mean)).colwise() + mean;
  return out;
}

struct LocalizationConfig {
  double radius = 1.0;
  // distance between state component i and observation j, in the same units
  // as `radius`
  std::function<double(int state_i, int obs_j)> distance;
};

enum class FilterVariant { Etkf, Etkfp, Etkfa, Letkf, Letkfp, Letkfa, Vfp, VfpStab, VfpDae };

inline bool is_localized(FilterVariant v) {
  return v == FilterVariant::Letkf || v == FilterVariant::Letkfp || v == FilterVariant::Letkfa;
}
inline bool is_projected(FilterVariant v) {
  return v == FilterVariant::Etkfp || v == FilterVariant::Letkfp;
}
inline bool is_augmented(FilterVariant v) {
  return v == FilterVariant::Etkfa || v == FilterVariant::Letkfa;
}

struct FilterConfig {
  FilterVariant variant = FilterVariant::Etkf;
  double inflation = 1.0;
  std::optional<LocalizationConfig> localization;
  // one entry: constraints shared by all members; n_e entries: per-member
  // (forecast-relative) systems; empty: unconstrained
  std::vector<ConstraintSystem> constraints;
  Eigen::MatrixXd r_g;
  double projection_tol = 1e-10;
  int projection_max_iter = 50;

  const ConstraintSystem& constraint_for(int member) const {
    return constraints.size() == 1 ? constraints.front() : constraints.at(member);
  }
};

namespace detail {

struct EnsembleSpaceSolve {
  Eigen::VectorXd mean_weights;    // w_bar
  Eigen::MatrixXd sqrt_transform;  // symmetric sqrt((n_e-1) P_tilde)
};

/// Shared core of the transform update on whitened quantities
/// (S_w = R^{-1/2} S, d_w = R^{-1/2}(y - y_bar)). The mean weights solve the
/// regularized least-squares system [S_w; sqrt(n_e-1) I] w ~ [d_w; 0] by QR,
/// which keeps the constraint-tight pseudo-observation case (R_g -> 0)
/// accurate; the symmetric square root comes from the eigendecomposition of
/// (n_e-1) I + S_w^T S_w.
inline EnsembleSpaceSolve transform_weights(const Eigen::MatrixXd& s_white,
                                            const Eigen::VectorXd& d_white, int n_e) {
  const int n_o = static_cast<int>(s_white.rows());
  const double reg = std::sqrt(static_cast<double>(n_e - 1));
  Eigen::MatrixXd stacked(n_o + n_e, n_e);
  stacked.topRows(n_o) = s_white;
  stacked.bottomRows(n_e) = reg * Eigen::MatrixXd::Identity(n_e, n_e);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_o + n_e);
  rhs.head(n_o) = d_white;

  EnsembleSpaceSolve out;
  out.mean_weights = stacked.colPivHouseholderQr().solve(rhs);

  Eigen::MatrixXd m = s_white.transpose() * s_white;
  m.diagonal().array() += static_cast<double>(n_e - 1);
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw NumericalError("etkf: inner matrix (n_e-1)I + S^T R^{-1} S is not SPD");
  const Eigen::VectorXd inv = es.eigenvalues().cwiseInverse();
  out.sqrt_transform = es.eigenvectors() *
                       (static_cast<double>(n_e - 1) * inv.array()).sqrt().matrix().asDiagonal() *
                       es.eigenvectors().transpose();
  return out;
}

}  // namespace detail

/// Deterministic square-root ETKF update with symmetric transform; inflation
/// is applied to the forecast anomalies before the analysis.
inline Ensemble etkf_analysis(const Ensemble& ens, const ObservationModel& obs, double alpha) {
  const int n_e = ens.size();
  if (n_e < 2) throw DimensionError("etkf_analysis: need n_e >= 2");
  const Ensemble fc = inflate(ens, alpha);
  const Eigen::VectorXd mean = ensemble_mean(fc);
  const Eigen::MatrixXd anomalies = fc.members.colwise() - mean;

  const int n_o = obs.obs_dim();
  Eigen::MatrixXd hx(n_o, n_e);
  for (int e = 0; e < n_e; ++e) hx.col(e) = obs.H(fc.members.col(e));
  const Eigen::VectorXd hx_mean = hx.rowwise().mean();
  const Eigen::MatrixXd s = hx.colwise() - hx_mean;

  const Eigen::LLT<Eigen::MatrixXd> r_llt(obs.R);
  if (r_llt.info() != Eigen::Success)
    throw NumericalError("etkf_analysis: R factorization failed (not SPD)");
  const Eigen::MatrixXd s_white = r_llt.matrixL().solve(s);
  const Eigen::VectorXd d_white = r_llt.matrixL().solve(obs.y - hx_mean);

  const auto sol = detail::transform_weights(s_white, d_white, n_e);
  Ensemble out;
  out.members = (anomalies * (sol.mean_weights.replicate(1, n_e) + sol.sqrt_transform)).colwise() +
                mean;
  return out;
}

/// R-localized LETKF: a per-state-component transform update with R^{-1}
/// tapered by Gaspari-Cohn weights. Requires diagonal R. State components for
/// which every taper weight vanishes keep their forecast values.
inline Ensemble letkf_analysis(const Ensemble& ens, const ObservationModel& obs, double alpha,
                               const LocalizationConfig& loc) {
  const int n_e = ens.size();
  if (n_e < 2) throw DimensionError("letkf_analysis: need n_e >= 2");
  if (!loc.distance) throw DimensionError("letkf_analysis: localization distance not set");
  const int n_o = obs.obs_dim();
  for (int i = 0; i < n_o; ++i)
    for (int j = 0; j < n_o; ++j)
      if (i != j && obs.R(i, j) != 0.0)
        throw NumericalError("letkf_analysis: R-localization requires diagonal R");
  const Eigen::VectorXd rinv = obs.R.diagonal().cwiseInverse();

  const Ensemble fc = inflate(ens, alpha);
  const Eigen::VectorXd mean = ensemble_mean(fc);
  const Eigen::MatrixXd anomalies = fc.members.colwise() - mean;

  Eigen::MatrixXd hx(n_o, n_e);
  for (int e = 0; e < n_e; ++e) hx.col(e) = obs.H(fc.members.col(e));
  const Eigen::VectorXd hx_mean = hx.rowwise().mean();
  const Eigen::MatrixXd s = hx.colwise() - hx_mean;
  const Eigen::VectorXd dy = obs.y - hx_mean;

  const int n_s = ens.state_dim();
  Ensemble out;
  out.members.resize(n_s, n_e);

  Eigen::VectorXd weights(n_o), prev_weights(n_o);
  prev_weights.setConstant(-1.0);
  detail::EnsembleSpaceSolve sol;
  for (int i = 0; i < n_s; ++i) {
    bool any = false;
    for (int j = 0; j < n_o; ++j) {
      weights[j] = gaspari_cohn(loc.distance(i, j), loc.radius);
      any = any || weights[j] > 0.0;
    }
    if (!any) {
      out.members.row(i) = ens.members.row(i);  // no information reaches this state
      continue;
    }
    if (!(weights.array() == prev_weights.array()).all()) {
      const Eigen::VectorXd wr_sqrt = weights.cwiseProduct(rinv).cwiseSqrt();
      sol = detail::transform_weights(wr_sqrt.asDiagonal() * s, wr_sqrt.cwiseProduct(dy), n_e);
      prev_weights = weights;
    }
    out.members.row(i) =
        anomalies.row(i) * (sol.mean_weights.replicate(1, n_e) + sol.sqrt_transform);
    out.members.row(i).array() += mean[i];
  }
  return out;
}

/// Dispatches the six ETKF/LETKF variants: plain, projected (P), augmented
/// (A). P-variants project each member onto the constraint manifold with the
/// member's own unconstrained analysis as the Jacobian anchor; A-variants run
/// the base filter against the pseudo-observation triplet.
inline Ensemble kalman_analysis(const Ensemble& forecast, const ObservationModel& obs,
                                const FilterConfig& cfg) {
  const FilterVariant v = cfg.variant;
  if ((is_projected(v) || is_augmented(v)) && cfg.constraints.empty())
    throw ConfigError("filter.variant", "P/A variants require a constraint system");
  if (is_localized(v) && !cfg.localization)
    throw ConfigError("filter.variant", "L variants require a localization config");
  if (is_augmented(v) && cfg.constraints.size() != 1)
    throw ConfigError("filter.variant",
                      "augmented observations need a constraint shared across members");

  ObservationModel work = obs;
  std::optional<LocalizationConfig> loc = cfg.localization;
  if (is_augmented(v)) {
    work = augment_observations(obs, cfg.constraints.front(), cfg.r_g).model;
    if (is_localized(v) && loc) {
      // pseudo-observations of global constraints carry no location: give
      // their rows unit taper weight everywhere
      const int n_o = obs.obs_dim();
      LocalizationConfig ext = *loc;
      ext.distance = [base = loc->distance, n_o](int i, int j) {
        return j < n_o ? base(i, j) : 0.0;
      };
      loc = ext;
    }
  }

  Ensemble analysis = is_localized(v) ? letkf_analysis(forecast, work, cfg.inflation, *loc)
                                      : etkf_analysis(forecast, work, cfg.inflation);

  if (is_projected(v)) {
    for (int e = 0; e < analysis.size(); ++e) {
      const ConstraintSystem& cs = cfg.constraint_for(e);
      try {
        analysis.members.col(e) =
            project_to_manifold(analysis.members.col(e), cs, analysis.members.col(e),
                                cfg.projection_tol, cfg.projection_max_iter)
                .x;
      } catch (ProjectionFailure& f) {
        f.member = e;
        throw;
      }
    }
  }
  return analysis;
}

}  // namespace cpda
