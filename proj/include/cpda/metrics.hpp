#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"

namespace cpda {

/// One assimilation cycle's worth of diagnostics.
struct CycleRecord {
  int cycle = 0;          // 1-based
  double time = 0.0;      // physical time of the analysis
  double rmse_cum = 0.0;  // cumulative spatio-temporal RMSE up to this cycle
  double crmse_cum = 0.0;
  double max_abs_g = 0.0;  // max over members of |g|_inf at the analysis
  int flow_steps = 0;      // pseudo-time steps taken (0 for transform filters)
  double wall_ms = 0.0;
};

struct RunRecord {
  std::vector<CycleRecord> cycles;
  int spinup = 0;
  int n_e = 0, n_s = 0, n_c = 0;
  bool truncated = false;  // analysis failure before the last cycle
  std::string failure;
};

/// Accumulates the spatio-temporal sums of the RMSE/CRMSE definitions:
///   RMSE(k)  = sqrt( sum_{i=rho}^k sum_e ||x_a,i^e - x_true,i||^2 / C1 ),
///   CRMSE(k) = sqrt( sum_{i=rho}^k sum_e ||E g(x_a,i^e)||^2 / C2 ),
/// with C1 = (k - rho + 1) n_e n_s and C2 = (k - rho + 1) n_e n_c. The
/// per-member form is used because the ensemble mean does not lie on the
/// constraint manifold.
class MetricAccumulator {
 public:
  MetricAccumulator(int n_s, int n_e, int n_c) : n_s_(n_s), n_e_(n_e), n_c_(n_c) {}

  void add_cycle(double state_sq_sum, double constraint_sq_sum) {
    state_sq_ += state_sq_sum;
    constraint_sq_ += constraint_sq_sum;
    ++cycles_;
  }

  int counted_cycles() const { return cycles_; }

  double rmse() const {
    if (cycles_ == 0) return 0.0;
    return std::sqrt(state_sq_ / (static_cast<double>(cycles_) * n_e_ * n_s_));
  }

  double crmse() const {
    if (cycles_ == 0 || n_c_ == 0) return 0.0;
    return std::sqrt(constraint_sq_ / (static_cast<double>(cycles_) * n_e_ * n_c_));
  }

 private:
  int n_s_, n_e_, n_c_;
  int cycles_ = 0;
  double state_sq_ = 0.0;
  double constraint_sq_ = 0.0;
};

/// Cumulative RMSE over cycles rho..k from raw analyses and truth columns.
inline double rmse(const std::vector<Ensemble>& analyses, const Eigen::MatrixXd& truth, int rho,
                   int k) {
  if (k < rho) throw DimensionError("rmse: k must be >= rho");
  const int n_e = analyses.at(rho - 1).size();
  const int n_s = analyses.at(rho - 1).state_dim();
  double sum = 0.0;
  for (int i = rho; i <= k; ++i) {
    const Ensemble& a = analyses.at(i - 1);
    for (int e = 0; e < n_e; ++e) sum += (a.members.col(e) - truth.col(i)).squaredNorm();
  }
  return std::sqrt(sum / (static_cast<double>(k - rho + 1) * n_e * n_s));
}

/// Cumulative CRMSE with diagonal scaling E over cycles rho..k.
inline double crmse(const std::vector<Eigen::MatrixXd>& constraint_values,
                    const Eigen::VectorXd& scaling, int rho, int k) {
  if (k < rho) throw DimensionError("crmse: k must be >= rho");
  const int n_c = static_cast<int>(constraint_values.at(rho - 1).rows());
  if (scaling.size() != n_c) throw DimensionError("crmse: scaling dimension mismatch");
  const int n_e = static_cast<int>(constraint_values.at(rho - 1).cols());
  double sum = 0.0;
  for (int i = rho; i <= k; ++i)
    sum += (scaling.asDiagonal() * constraint_values.at(i - 1)).squaredNorm();
  return std::sqrt(sum / (static_cast<double>(k - rho + 1) * n_e * n_c));
}

}  // namespace cpda
