#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <memory>

#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"

namespace cpda {

/// State-independent diffusion sigma of the flow SDE. Exposes the two actions
/// the drift needs: xi -> sigma * xi and v -> (sigma sigma^T / 2) v. Because
/// sigma does not depend on x, the divergence term of the optimal drift is
/// identically zero.
class DiffusionOperator {
 public:
  enum class Kind { Zero, Diagonal, SolveScaled, DenseFactor };

  static DiffusionOperator zero(int dim) {
    DiffusionOperator d;
    d.kind_ = Kind::Zero;
    d.dim_ = dim;
    return d;
  }

  /// sigma = diag(d).
  static DiffusionOperator diagonal(const Eigen::VectorXd& d) {
    DiffusionOperator out;
    out.kind_ = Kind::Diagonal;
    out.dim_ = static_cast<int>(d.size());
    out.diag_ = d;
    return out;
  }

  /// sigma = c * M^{-1} for a fixed sparse symmetric M (Laplacian-like);
  /// M is factored once.
  static DiffusionOperator scaled_inverse(double c, const SparseMat& m) {
    if (m.rows() != m.cols()) throw DimensionError("DiffusionOperator: M must be square");
    DiffusionOperator out;
    out.kind_ = Kind::SolveScaled;
    out.dim_ = static_cast<int>(m.rows());
    out.scale_ = c;
    auto lu = std::make_shared<Eigen::SparseLU<SparseMat>>();
    lu->compute(m);
    if (lu->info() != Eigen::Success)
      throw NumericalError("DiffusionOperator: factorization of M failed");
    out.solver_ = std::move(lu);
    return out;
  }

  /// sigma = alpha * sqrt(P) via the symmetric matrix square root.
  static DiffusionOperator scaled_sqrt_covariance(double alpha, const CovarianceEstimate& cov) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
      throw NumericalError("DiffusionOperator: covariance eigendecomposition failed");
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    DiffusionOperator out;
    out.kind_ = Kind::DenseFactor;
    out.dim_ = static_cast<int>(cov.rows());
    out.dense_ = std::make_shared<Eigen::MatrixXd>(
        alpha * es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose());
    return out;
  }

  bool is_zero() const { return kind_ == Kind::Zero; }
  int dim() const { return dim_; }

  /// sigma * xi.
  Eigen::VectorXd apply(const Eigen::VectorXd& xi) const {
    check(xi);
    switch (kind_) {
      case Kind::Zero:
        return Eigen::VectorXd::Zero(dim_);
      case Kind::Diagonal:
        return diag_.cwiseProduct(xi);
      case Kind::SolveScaled:
        return scale_ * solver_->solve(xi);
      case Kind::DenseFactor:
        return *dense_ * xi;
    }
    return xi;
  }

  /// (sigma sigma^T / 2) v.
  Eigen::VectorXd quadratic(const Eigen::VectorXd& v) const {
    check(v);
    switch (kind_) {
      case Kind::Zero:
        return Eigen::VectorXd::Zero(dim_);
      case Kind::Diagonal:
        return 0.5 * diag_.array().square().matrix().cwiseProduct(v);
      case Kind::SolveScaled:
        return 0.5 * scale_ * scale_ * solver_->solve(solver_->solve(v).eval());
      case Kind::DenseFactor:
        return 0.5 * (*dense_ * (dense_->transpose() * v));
    }
    return v;
  }

  /// Dense sigma sigma^T / 2; used when assembling the Rosenbrock drift
  /// Jacobian on small problems.
  Eigen::MatrixXd quadratic_dense() const {
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(dim_, dim_);
    switch (kind_) {
      case Kind::Zero:
        return Eigen::MatrixXd::Zero(dim_, dim_);
      case Kind::Diagonal:
        return (0.5 * diag_.array().square()).matrix().asDiagonal();
      case Kind::SolveScaled: {
        const Eigen::MatrixXd minv = solver_->solve(id);
        return 0.5 * scale_ * scale_ * minv * minv.transpose();
      }
      case Kind::DenseFactor:
        return 0.5 * (*dense_) * dense_->transpose();
    }
    return id;
  }

 private:
  void check(const Eigen::VectorXd& v) const {
    if (v.size() != dim_) throw DimensionError("DiffusionOperator: dimension mismatch");
  }

  Kind kind_ = Kind::Zero;
  int dim_ = 0;
  Eigen::VectorXd diag_;
  double scale_ = 1.0;
  std::shared_ptr<Eigen::SparseLU<SparseMat>> solver_;
  std::shared_ptr<const Eigen::MatrixXd> dense_;
};

}  // namespace cpda
