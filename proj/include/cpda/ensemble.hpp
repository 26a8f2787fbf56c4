#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <utility>

#include "cpda/errors.hpp"

namespace cpda {

using StateVector = Eigen::VectorXd;
using CovarianceEstimate = Eigen::MatrixXd;
using SparseMat = Eigen::SparseMatrix<double>;

/// An ensemble of state columns: n_s x n_e. Columns are exchangeable samples
/// of the same distribution; the column count is fixed over an analysis step.
struct Ensemble {
  Eigen::MatrixXd members;

  Ensemble() = default;
  explicit Ensemble(Eigen::MatrixXd m) : members(std::move(m)) {}

  int state_dim() const { return static_cast<int>(members.rows()); }
  int size() const { return static_cast<int>(members.cols()); }

  bool all_finite() const { return members.allFinite(); }
};

inline StateVector ensemble_mean(const Ensemble& ens) {
  if (ens.size() < 1) throw DimensionError("ensemble_mean: empty ensemble");
  return ens.members.rowwise().mean();
}

/// Columns of member - mean; rows sum to zero.
inline Eigen::MatrixXd ensemble_anomalies(const Ensemble& ens) {
  if (ens.size() < 2) throw DimensionError("ensemble_anomalies: need n_e >= 2");
  return ens.members.colwise() - ensemble_mean(ens).eval();
}

/// Unbiased sample covariance A A^T / (n_e - 1).
inline CovarianceEstimate empirical_covariance(const Ensemble& ens) {
  if (ens.size() < 2) throw DimensionError("empirical_covariance: need n_e >= 2");
  const Eigen::MatrixXd a = ensemble_anomalies(ens);
  return (a * a.transpose()) / static_cast<double>(ens.size() - 1);
}

/// Per-component sample variances, n_e - 1 divisor.
inline Eigen::VectorXd component_variances(const Ensemble& ens) {
  if (ens.size() < 2) throw DimensionError("component_variances: need n_e >= 2");
  const Eigen::MatrixXd a = ensemble_anomalies(ens);
  return a.array().square().rowwise().sum() / static_cast<double>(ens.size() - 1);
}

/// Static shrinkage gamma * P + (1 - gamma) * I.
inline CovarianceEstimate shrink_covariance(const CovarianceEstimate& cov, double gamma_sh) {
  if (!(gamma_sh >= 0.0 && gamma_sh <= 1.0))
    throw DimensionError("shrink_covariance: gamma_sh must lie in [0, 1]");
  if (cov.rows() != cov.cols())
    throw DimensionError("shrink_covariance: covariance must be square");
  CovarianceEstimate out = gamma_sh * cov;
  out.diagonal().array() += 1.0 - gamma_sh;
  return out;
}

}  // namespace cpda
