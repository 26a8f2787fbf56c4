#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <utility>

#include "cpda/constraints.hpp"
#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"

namespace cpda {

/// Observation operator H, data y, and SPD error covariance R.
/// `linear` holds the sparse matrix of H when H is linear; the particle flow
/// needs it for the adjoint term H^T R^{-1} (H(x) - y). Augmented operators
/// (with nonlinear constraint rows) leave it empty and are only usable by the
/// ensemble-space filters.
struct ObservationModel {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> H;
  SparseMat linear;  // n_o x n_s when H is linear, else 0 x 0
  Eigen::VectorXd y;
  Eigen::MatrixXd R;

  int obs_dim() const { return static_cast<int>(R.rows()); }
  bool has_linear() const { return linear.rows() > 0; }

  static ObservationModel from_matrix(SparseMat h, Eigen::VectorXd data, Eigen::MatrixXd r) {
    ObservationModel m;
    m.linear = std::move(h);
    m.H = [hm = m.linear](const Eigen::VectorXd& x) { return Eigen::VectorXd(hm * x); };
    m.y = std::move(data);
    m.R = std::move(r);
    return m;
  }
};

/// Observation triplet extended with pseudo-observations of the constraints:
/// H_hat = [H; g], y_hat = [y; 0], R_hat = blkdiag(R, R_g).
struct AugmentedObservation {
  ObservationModel model;
};

inline bool is_spd(const Eigen::MatrixXd& m, double sym_tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  if ((m - m.transpose()).lpNorm<Eigen::Infinity>() >
      sym_tol * (1.0 + m.lpNorm<Eigen::Infinity>()))
    return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

inline AugmentedObservation augment_observations(const ObservationModel& obs,
                                                 const ConstraintSystem& cs,
                                                 const Eigen::MatrixXd& r_g) {
  if (cs.empty()) return {obs};
  if (r_g.rows() != cs.n_c || r_g.cols() != cs.n_c)
    throw DimensionError("augment_observations: R_g must be n_c x n_c");
  if (!is_spd(r_g)) throw NumericalError("augment_observations: R_g is not SPD");

  const int n_o = obs.obs_dim();
  AugmentedObservation out;
  out.model.H = [h = obs.H, g = cs.eval, n_o, n_c = cs.n_c](const Eigen::VectorXd& x) {
    Eigen::VectorXd hx(n_o + n_c);
    hx.head(n_o) = h(x);
    hx.tail(n_c) = g(x);
    return hx;
  };
  out.model.y = Eigen::VectorXd::Zero(n_o + cs.n_c);
  out.model.y.head(n_o) = obs.y;
  out.model.R = Eigen::MatrixXd::Zero(n_o + cs.n_c, n_o + cs.n_c);
  out.model.R.topLeftCorner(n_o, n_o) = obs.R;
  out.model.R.bottomRightCorner(cs.n_c, cs.n_c) = r_g;
  return out;
}

}  // namespace cpda
