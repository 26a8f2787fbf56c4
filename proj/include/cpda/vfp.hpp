#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpda/constraints.hpp"
#include "cpda/diffusion.hpp"
#include "cpda/ensemble.hpp"
#include "cpda/errors.hpp"
#include "cpda/observation.hpp"
#include "cpda/precision.hpp"
#include "cpda/rng.hpp"

namespace cpda {

enum class FlowMethod { Vfp, VfpStab, VfpDae };
enum class SdeIntegrator { EulerMaruyama, RosenbrockEm };
enum class DaeScheme { AnchorAtX0, EvolveProject, RosenbrockProject, Eliminated };

inline const char* dae_scheme_name(DaeScheme s) {
  switch (s) {
    case DaeScheme::AnchorAtX0: return "anchor-at-x0";
    case DaeScheme::EvolveProject: return "evolve-project";
    case DaeScheme::RosenbrockProject: return "rosenbrock-project";
    case DaeScheme::Eliminated: return "eliminated";
  }
  return "?";
}

struct FlowConfig {
  double pseudo_step = 1e-3;       // delta tau
  double stop_tol = 1e-6;          // inf-norm change of the ensemble mean
  int max_steps = 1000;
  SdeIntegrator integrator = SdeIntegrator::EulerMaruyama;
  DaeScheme dae_scheme = DaeScheme::EvolveProject;
  double stabilization_gamma = 0.0;             // VFPSTAB only
  std::optional<double> perturbed_obs_scale;    // eta ~ N(0, scale^2 R), drawn once per analysis
  std::uint64_t seed = 0;
  double projection_tol = 1e-10;
  int projection_max_iter = 50;
};

/// Everything the Gaussian drift needs at one pseudo-time instant. The
/// intermediate pieces (x_bar_tau, P_tau^{-1}) are refreshed from the current
/// ensemble once per pseudo-time step.
struct GaussianFlowContext {
  Eigen::VectorXd forecast_mean;
  Eigen::VectorXd intermediate_mean;
  PrecisionOperator forecast_precision;      // P_f^{-1}
  PrecisionOperator intermediate_precision;  // P_tau^{-1}
  const ObservationModel* obs = nullptr;
  std::shared_ptr<const Eigen::LDLT<Eigen::MatrixXd>> r_solver;
  const Eigen::MatrixXd* member_obs = nullptr;  // optional perturbed data, n_o x n_e

  const Eigen::VectorXd observation_for(int member) const {
    if (member >= 0 && member_obs != nullptr) return member_obs->col(member);
    return obs->y;
  }
};

/// Gaussian log-density gradients:
///   grad log P_tau(x) = -P_tau^{-1} (x - x_bar_tau)
///   grad log P_a(x)   = -P_f^{-1} (x - x_bar_f) - H^T R^{-1} (H(x) - y)
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gaussian_log_gradients(
    const Eigen::VectorXd& x, const GaussianFlowContext& ctx, int member = -1) {
  const Eigen::VectorXd grad_tau = -ctx.intermediate_precision.apply(x - ctx.intermediate_mean);
  Eigen::VectorXd grad_a = -ctx.forecast_precision.apply(x - ctx.forecast_mean);
  if (!ctx.obs->has_linear())
    throw NumericalError("gaussian_log_gradients: flow needs a linear observation operator");
  const Eigen::VectorXd resid = ctx.obs->H(x) - ctx.observation_for(member);
  grad_a -= ctx.obs->linear.transpose() * ctx.r_solver->solve(resid);
  return {grad_tau, grad_a};
}

/// KL-minimizing drift with A = I and state-independent diffusion:
///   F = (grad log P_a - grad log P_tau) + (sigma sigma^T / 2) grad log P_tau.
inline Eigen::VectorXd optimal_drift(const Eigen::VectorXd& x, const GaussianFlowContext& ctx,
                                     const DiffusionOperator& diff, int member = -1) {
  const auto [grad_tau, grad_a] = gaussian_log_gradients(x, ctx, member);
  Eigen::VectorXd f = grad_a - grad_tau;
  if (!diff.is_zero()) f += diff.quadratic(grad_tau);
  return f;
}

/// VFPSTAB drift: F(x) - gamma * G^T (G G^T)^{-1} g(x).
inline Eigen::VectorXd vfpstab_drift(const Eigen::VectorXd& x, const GaussianFlowContext& ctx,
                                     const DiffusionOperator& diff, const ConstraintSystem& cs,
                                     double gamma, int member = -1) {
  Eigen::VectorXd f = optimal_drift(x, ctx, diff, member);
  if (gamma == 0.0 || cs.empty()) return f;
  const SparseMat g_jac = cs.jacobian(x);
  const Eigen::VectorXd g = cs.eval(x);
  const Eigen::MatrixXd gram = Eigen::MatrixXd(SparseMat(g_jac * g_jac.transpose()));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  if (!lu.isInvertible()) throw RankDeficiencyError("vfpstab_drift: G G^T is singular");
  f -= gamma * (g_jac.transpose() * lu.solve(g));
  return f;
}

/// Analytic drift Jacobian under the Gaussian assumption with x_bar_tau and
/// P_tau frozen and H linear:
///   F_x = -P_f^{-1} - H^T R^{-1} H + P_tau^{-1} - (sigma sigma^T / 2) P_tau^{-1}.
inline Eigen::MatrixXd drift_jacobian(const GaussianFlowContext& ctx,
                                      const DiffusionOperator& diff) {
  if (!ctx.obs->has_linear())
    throw NumericalError("drift_jacobian: flow needs a linear observation operator");
  const Eigen::MatrixXd h_dense = Eigen::MatrixXd(ctx.obs->linear);
  const Eigen::MatrixXd p_tau = ctx.intermediate_precision.dense();
  Eigen::MatrixXd fx = -ctx.forecast_precision.dense();
  fx.noalias() -= h_dense.transpose() * ctx.r_solver->solve(h_dense);
  fx += p_tau;
  if (!diff.is_zero()) fx.noalias() -= diff.quadratic_dense() * p_tau;
  return fx;
}

/// One Euler-Maruyama pseudo-time step applied to every member:
///   x <- x + h F(x) + sqrt(h) sigma xi,   xi ~ N(0, I) fresh per member.
inline Ensemble vfp_step_em(const Ensemble& ens, const GaussianFlowContext& ctx,
                            const DiffusionOperator& diff, double h,
                            const std::function<Eigen::VectorXd(int)>& xi_for_member) {
  if (!(h > 0.0)) throw DimensionError("vfp_step_em: h must be positive");
  Ensemble out = ens;
  const double sqrt_h = std::sqrt(h);
  for (int e = 0; e < ens.size(); ++e) {
    const Eigen::VectorXd f = optimal_drift(ens.members.col(e), ctx, diff, e);
    if (!f.allFinite())
      throw NumericalError("vfp_step_em: non-finite drift for member " + std::to_string(e));
    out.members.col(e) += h * f;
    if (!diff.is_zero()) out.members.col(e) += sqrt_h * diff.apply(xi_for_member(e));
  }
  return out;
}

/// Rosenbrock-Euler-Maruyama predictor:
///   x1 = x0 + h (I - h F_x)^{-1} F(x0) + sqrt(h) sigma xi.
inline Eigen::VectorXd rosenbrock_em_predictor(const Eigen::VectorXd& x,
                                               const GaussianFlowContext& ctx,
                                               const DiffusionOperator& diff, double h,
                                               const Eigen::VectorXd& xi, int member = -1) {
  const int n = static_cast<int>(x.size());
  const Eigen::MatrixXd fx = drift_jacobian(ctx, diff);
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n) - h * fx;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
  const Eigen::VectorXd rhs = optimal_drift(x, ctx, diff, member);
  const Eigen::VectorXd incr = lu.solve(rhs);
  if (!incr.allFinite())
    throw NumericalError("rosenbrock_em_predictor: singular (I - h F_x); reduce h");
  Eigen::VectorXd x1 = x + h * incr;
  if (!diff.is_zero()) x1 += std::sqrt(h) * diff.apply(xi);
  return x1;
}

namespace detail {

/// Tangent projector (I - G^T (G G^T)^{-1} G)(x0) applied to v; dense Gram
/// solve below the size threshold, CG above it.
inline Eigen::VectorXd tangent_project(const ConstraintSystem& cs, const Eigen::VectorXd& x0,
                                       const Eigen::VectorXd& v) {
  const SparseMat g_jac = cs.jacobian(x0);
  const Eigen::VectorXd gv = g_jac * v;
  Eigen::VectorXd mu;
  if (cs.n_c <= kDenseConstraintLimit) {
    const Eigen::MatrixXd gram = Eigen::MatrixXd(SparseMat(g_jac * g_jac.transpose()));
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (!lu.isInvertible()) throw RankDeficiencyError("tangent_project: G G^T is singular");
    mu = lu.solve(gv);
  } else {
    const SparseMat gram = (g_jac * SparseMat(g_jac.transpose())).pruned();
    Eigen::ConjugateGradient<SparseMat, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-13);
    cg.setMaxIterations(20 * cs.n_c);
    cg.compute(gram);
    mu = cg.solve(gv);
  }
  return v - g_jac.transpose() * mu;
}

}  // namespace detail

/// Advances one member of the constrained flow by one pseudo-time step of the
/// selected SDAE scheme: a predictor x_tilde followed by solving
/// g(x_tilde - G^T(anchor) z) = 0. Exposed separately so the schemes can be
/// exercised with an arbitrary drift in tests.
inline Eigen::VectorXd vfpdae_advance_member(const Eigen::VectorXd& x0,
                                             const Eigen::VectorXd& drift,
                                             const Eigen::VectorXd& sigma_xi_scaled, double h,
                                             const ConstraintSystem& cs, DaeScheme scheme,
                                             double tol, int max_iter,
                                             const Eigen::PartialPivLU<Eigen::MatrixXd>* rosen_lu =
                                                 nullptr) {
  Eigen::VectorXd x_tilde;
  bool anchor_at_x0 = false;
  switch (scheme) {
    case DaeScheme::AnchorAtX0:
      x_tilde = x0 + h * drift + sigma_xi_scaled;
      anchor_at_x0 = true;
      break;
    case DaeScheme::EvolveProject:
      x_tilde = x0 + h * drift + sigma_xi_scaled;
      break;
    case DaeScheme::RosenbrockProject: {
      if (rosen_lu == nullptr)
        throw NumericalError("vfpdae_advance_member: rosenbrock-project needs (I - h F_x)");
      x_tilde = x0 + h * rosen_lu->solve(drift) + sigma_xi_scaled;
      break;
    }
    case DaeScheme::Eliminated: {
      // Project the whole increment onto the tangent space at x0, then pull
      // the result back onto the manifold. (The Remark's closed form applies
      // the projector itself; its printed inverse is singular.)
      const Eigen::VectorXd incr = detail::tangent_project(cs, x0, h * drift + sigma_xi_scaled);
      x_tilde = x0 + incr;
      break;
    }
  }
  if (!x_tilde.allFinite()) throw NumericalError("vfpdae_advance_member: non-finite predictor");
  return project_to_manifold(x_tilde, cs, anchor_at_x0 ? x0 : x_tilde, tol, max_iter).x;
}

/// One constrained pseudo-time step for the whole ensemble. Every member must
/// satisfy |g| <= tol on entry; every member satisfies it on exit.
inline Ensemble vfpdae_step(const Ensemble& ens, const GaussianFlowContext& ctx,
                            const DiffusionOperator& diff,
                            const std::function<const ConstraintSystem&(int)>& cs_for_member,
                            const FlowConfig& cfg,
                            const std::function<Eigen::VectorXd(int)>& xi_for_member) {
  const double h = cfg.pseudo_step;
  if (!(h > 0.0)) throw DimensionError("vfpdae_step: h must be positive");
  Ensemble out = ens;
  const double sqrt_h = std::sqrt(h);

  std::optional<Eigen::PartialPivLU<Eigen::MatrixXd>> rosen_lu;
  if (cfg.dae_scheme == DaeScheme::RosenbrockProject) {
    const int n = ens.state_dim();
    rosen_lu.emplace(Eigen::MatrixXd::Identity(n, n) - h * drift_jacobian(ctx, diff));
  }

  for (int e = 0; e < ens.size(); ++e) {
    const Eigen::VectorXd x0 = ens.members.col(e);
    const Eigen::VectorXd f = optimal_drift(x0, ctx, diff, e);
    Eigen::VectorXd sxi = Eigen::VectorXd::Zero(ens.state_dim());
    if (!diff.is_zero()) sxi = sqrt_h * diff.apply(xi_for_member(e));
    try {
      out.members.col(e) =
          vfpdae_advance_member(x0, f, sxi, h, cs_for_member(e), cfg.dae_scheme,
                                cfg.projection_tol, cfg.projection_max_iter,
                                rosen_lu ? &*rosen_lu : nullptr);
    } catch (ProjectionFailure& fail) {
      fail.member = e;
      fail.scheme = dae_scheme_name(cfg.dae_scheme);
      throw;
    }
  }
  return out;
}

struct FlowProblem {
  ObservationModel obs;
  std::vector<ConstraintSystem> constraints;  // empty | 1 shared | n_e per member
  DiffusionOperator diffusion;
  PrecisionSpec precision;
  FlowMethod method = FlowMethod::Vfp;

  const ConstraintSystem& constraint_for(int member) const {
    return constraints.size() == 1 ? constraints.front() : constraints.at(member);
  }
};

struct FlowResult {
  Ensemble ensemble;
  int steps = 0;
  bool converged = false;
};

namespace detail {
constexpr std::uint64_t kWienerTag = 0x57494E45ull;    // flow Wiener draws
constexpr std::uint64_t kPerturbTag = 0x50455254ull;   // perturbed observations
}  // namespace detail

/// Evolves the ensemble from the forecast toward the analysis along the
/// chosen flow. The intermediate statistics (x_bar_tau, P_tau^{-1}) are
/// refreshed from the current ensemble every pseudo-time step; iteration
/// stops when the inf-norm change of the ensemble mean falls below
/// cfg.stop_tol or after cfg.max_steps (non-convergence is flagged, not an
/// error). `initial` lets callers warm-start the flow (e.g. from a projected
/// ETKF analysis) while keeping forecast statistics from the true forecast.
inline FlowResult run_flow(const Ensemble& forecast, const Ensemble& initial,
                           const FlowProblem& prob, const FlowConfig& cfg, std::uint64_t cycle) {
  const int n_e = forecast.size();
  const int n_s = forecast.state_dim();
  if (initial.size() != n_e || initial.state_dim() != n_s)
    throw DimensionError("run_flow: initial ensemble shape mismatch");
  if (!forecast.all_finite()) throw NumericalError("run_flow: non-finite forecast");

  Ensemble ens = initial;
  const bool constrained = !prob.constraints.empty();
  auto cs_for = [&prob](int e) -> const ConstraintSystem& { return prob.constraint_for(e); };

  // VFPDAE requires on-manifold members along the whole flow; members that
  // violate the constraint on entry are projected first.
  if (prob.method == FlowMethod::VfpDae && constrained) {
    for (int e = 0; e < n_e; ++e) {
      const ConstraintSystem& cs = cs_for(e);
      const Eigen::VectorXd x = ens.members.col(e);
      if (cs.eval(x).lpNorm<Eigen::Infinity>() > cfg.projection_tol) {
        try {
          ens.members.col(e) =
              project_to_manifold(x, cs, x, cfg.projection_tol, cfg.projection_max_iter).x;
        } catch (ProjectionFailure& fail) {
          fail.member = e;
          throw;
        }
      }
    }
  }

  const Eigen::VectorXd forecast_mean = ensemble_mean(forecast);
  const PrecisionOperator forecast_precision = prob.precision.build(forecast);
  auto r_solver = std::make_shared<Eigen::LDLT<Eigen::MatrixXd>>(prob.obs.R);
  if (r_solver->info() != Eigen::Success)
    throw NumericalError("run_flow: R factorization failed");

  std::optional<Eigen::MatrixXd> member_obs;
  if (cfg.perturbed_obs_scale) {
    const Eigen::LLT<Eigen::MatrixXd> r_llt(prob.obs.R);
    if (r_llt.info() != Eigen::Success)
      throw NumericalError("run_flow: R must be SPD for perturbed observations");
    member_obs.emplace(prob.obs.obs_dim(), n_e);
    for (int e = 0; e < n_e; ++e) {
      CounterRng rng({cfg.seed, detail::kPerturbTag, cycle, static_cast<std::uint64_t>(e)});
      const Eigen::VectorXd eta = r_llt.matrixL() * rng.normal_vector(prob.obs.obs_dim());
      member_obs->col(e) = prob.obs.y + *cfg.perturbed_obs_scale * eta;
    }
  }

  Eigen::VectorXd prev_mean = ensemble_mean(ens);
  FlowResult result;
  const double sqrt_h = std::sqrt(cfg.pseudo_step);

  for (int step = 1; step <= cfg.max_steps; ++step) {
    GaussianFlowContext ctx;
    ctx.forecast_mean = forecast_mean;
    ctx.intermediate_mean = ensemble_mean(ens);
    ctx.forecast_precision = forecast_precision;
    ctx.intermediate_precision = prob.precision.build(ens);
    ctx.obs = &prob.obs;
    ctx.r_solver = r_solver;
    ctx.member_obs = member_obs ? &*member_obs : nullptr;

    auto xi = [&](int e) {
      CounterRng rng({cfg.seed, detail::kWienerTag, cycle, static_cast<std::uint64_t>(step),
                      static_cast<std::uint64_t>(e)});
      return rng.normal_vector(n_s);
    };

    if (prob.method == FlowMethod::VfpDae) {
      if (!constrained) throw ConfigError("flow", "VFPDAE requires a constraint system");
      ens = vfpdae_step(ens, ctx, prob.diffusion, cs_for, cfg, xi);
    } else {
      std::optional<Eigen::PartialPivLU<Eigen::MatrixXd>> rosen_lu;
      if (cfg.integrator == SdeIntegrator::RosenbrockEm) {
        rosen_lu.emplace(Eigen::MatrixXd::Identity(n_s, n_s) -
                         cfg.pseudo_step * drift_jacobian(ctx, prob.diffusion));
      }
      const double gamma = prob.method == FlowMethod::VfpStab ? cfg.stabilization_gamma : 0.0;
      Ensemble next = ens;
      for (int e = 0; e < n_e; ++e) {
        const Eigen::VectorXd x0 = ens.members.col(e);
        const Eigen::VectorXd f =
            (prob.method == FlowMethod::VfpStab && constrained)
                ? vfpstab_drift(x0, ctx, prob.diffusion, cs_for(e), gamma, e)
                : optimal_drift(x0, ctx, prob.diffusion, e);
        if (!f.allFinite())
          throw NumericalError("run_flow: non-finite drift for member " + std::to_string(e));
        Eigen::VectorXd x1;
        if (cfg.integrator == SdeIntegrator::RosenbrockEm) {
          x1 = x0 + cfg.pseudo_step * rosen_lu->solve(f);
        } else {
          x1 = x0 + cfg.pseudo_step * f;
        }
        if (!prob.diffusion.is_zero()) x1 += sqrt_h * prob.diffusion.apply(xi(e));
        next.members.col(e) = x1;
      }
      ens = std::move(next);
    }

    result.steps = step;
    const Eigen::VectorXd mean = ensemble_mean(ens);
    if ((mean - prev_mean).lpNorm<Eigen::Infinity>() < cfg.stop_tol) {
      result.converged = true;
      break;
    }
    prev_mean = mean;
  }

  result.ensemble = std::move(ens);
  return result;
}

inline FlowResult run_flow(const Ensemble& forecast, const FlowProblem& prob,
                           const FlowConfig& cfg, std::uint64_t cycle = 0) {
  return run_flow(forecast, forecast, prob, cfg, cycle);
}

}  // namespace cpda
