#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <memory>

#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"

namespace cpda {

enum class PrecisionKind { ShrunkDenseInverse, ScaledSquaredLaplacian };

/// Regularized inverse-covariance operator. Two representations:
///  - shrunk-dense-inverse: apply solves (gamma P + (1-gamma) I) w = v via a
///    dense factorization built once;
///  - scaled-squared-laplacian: apply computes s * L (L v) without ever
///    materializing L^2.
class PrecisionOperator {
 public:
  PrecisionOperator() = default;

  static PrecisionOperator shrunk_dense(const CovarianceEstimate& cov, double gamma_sh) {
    const Eigen::MatrixXd m = shrink_covariance(cov, gamma_sh);
    PrecisionOperator op;
    op.kind_ = PrecisionKind::ShrunkDenseInverse;
    op.dim_ = static_cast<int>(m.rows());
    op.forward_ = std::make_shared<Eigen::MatrixXd>(m);
    auto f = std::make_shared<Eigen::LDLT<Eigen::MatrixXd>>(m);
    if (f->info() != Eigen::Success || !f->isPositive())
      throw NumericalError("PrecisionOperator: shrunk covariance is not positive definite");
    op.factor_ = std::move(f);
    return op;
  }

  static PrecisionOperator scaled_squared_laplacian(std::shared_ptr<const SparseMat> lap,
                                                    double scale) {
    if (!lap || lap->rows() != lap->cols())
      throw DimensionError("PrecisionOperator: laplacian must be square");
    if (!(scale > 0.0))
      throw NumericalError("PrecisionOperator: scale must be positive");
    PrecisionOperator op;
    op.kind_ = PrecisionKind::ScaledSquaredLaplacian;
    op.dim_ = static_cast<int>(lap->rows());
    op.lap_ = std::move(lap);
    op.scale_ = scale;
    return op;
  }

  PrecisionKind kind() const { return kind_; }
  int dim() const { return dim_; }

  /// P^{-1} v.
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    check(v);
    if (kind_ == PrecisionKind::ShrunkDenseInverse) return factor_->solve(v);
    return scale_ * (*lap_ * (*lap_ * v).eval());
  }

  /// P v (the forward covariance action); used for consistency checks and
  /// sampling. For the laplacian kind this solves with L twice.
  Eigen::VectorXd apply_forward(const Eigen::VectorXd& v) const {
    check(v);
    if (kind_ == PrecisionKind::ShrunkDenseInverse) return *forward_ * v;
    Eigen::SparseLU<SparseMat> lu(*lap_);
    if (lu.info() != Eigen::Success)
      throw NumericalError("PrecisionOperator: laplacian factorization failed");
    return lu.solve(lu.solve(v).eval()) / scale_;
  }

  /// Dense matrix of the precision (P^{-1}); used by the Rosenbrock drift
  /// Jacobian on small problems.
  Eigen::MatrixXd dense() const {
    if (dim_ == 0) throw NumericalError("PrecisionOperator: empty operator");
    if (kind_ == PrecisionKind::ShrunkDenseInverse)
      return factor_->solve(Eigen::MatrixXd::Identity(dim_, dim_));
    return scale_ * Eigen::MatrixXd(SparseMat((*lap_) * (*lap_)));
  }

 private:
  void check(const Eigen::VectorXd& v) const {
    if (dim_ == 0) throw NumericalError("PrecisionOperator: empty operator");
    if (v.size() != dim_) throw DimensionError("PrecisionOperator: dimension mismatch");
  }

  PrecisionKind kind_ = PrecisionKind::ShrunkDenseInverse;
  int dim_ = 0;
  std::shared_ptr<const Eigen::LDLT<Eigen::MatrixXd>> factor_;
  std::shared_ptr<const Eigen::MatrixXd> forward_;
  std::shared_ptr<const SparseMat> lap_;
  double scale_ = 1.0;
};

/// Builds the scaled-squared-laplacian precision: s * L^2 with
/// s = 1 / max_i Var_i(ens).
inline PrecisionOperator laplacian_precision(std::shared_ptr<const SparseMat> lap,
                                             const Ensemble& ens) {
  if (!lap || lap->rows() != lap->cols() || lap->rows() != ens.state_dim())
    throw DimensionError("laplacian_precision: laplacian / ensemble size mismatch");
  const double max_var = component_variances(ens).maxCoeff();
  if (!(max_var > 0.0))
    throw DegenerateEnsembleError("laplacian_precision: ensemble has zero spread");
  return PrecisionOperator::scaled_squared_laplacian(std::move(lap), 1.0 / max_var);
}

inline PrecisionOperator laplacian_precision(const SparseMat& lap, const Ensemble& ens) {
  return laplacian_precision(std::make_shared<const SparseMat>(lap), ens);
}

inline StateVector apply_precision(const PrecisionOperator& prec, const StateVector& v) {
  return prec.apply(v);
}

/// Recipe for rebuilding a precision operator from the current ensemble;
/// the flow refreshes P_tau^{-1} every pseudo-time step.
struct PrecisionSpec {
  PrecisionKind kind = PrecisionKind::ShrunkDenseInverse;
  double gamma_sh = 0.01;
  std::shared_ptr<const SparseMat> laplacian;

  PrecisionOperator build(const Ensemble& ens) const {
    if (kind == PrecisionKind::ShrunkDenseInverse)
      return PrecisionOperator::shrunk_dense(empirical_covariance(ens), gamma_sh);
    return laplacian_precision(laplacian, ens);
  }
};

}  // namespace cpda
