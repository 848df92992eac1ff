#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pdzd/probing.hpp"
#include "pdzd/sets.hpp"

namespace pdzd {

/// Gains and timescales shared by the whole dynamics family.
struct SolverParams {
  double k_x = 1.0;
  double k_lambda = 1.0;
  double alpha_x = 1e-3;
  double alpha_lambda = 1e-3;
  double eps_g = 0.025;
  double delta_reg = 0.0;  // dual regularization, 0 = off
  ProjectableSet dual_set = ProjectableSet::nonnegative_orthant(0);

  void check(int m) const {
    if (k_x <= 0 || k_lambda <= 0 || alpha_x <= 0 || alpha_lambda <= 0 || eps_g <= 0)
      throw std::invalid_argument("solver params: gains and timescales must be positive");
    if (delta_reg < 0) throw std::invalid_argument("solver params: delta_reg must be >= 0");
    if (!dual_set.is_dual_domain())
      throw std::invalid_argument("solver params: dual set must be an orthant variant");
    if (dual_set.dim() != m)
      throw std::invalid_argument("solver params: dual set dimension mismatch");
  }
};

/// Primal x, dual lambda, and the gradient/constraint filter states xi, mu.
struct SolverState {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  Eigen::VectorXd xi;
  Eigen::VectorXd mu;

  static SolverState zero(int n, int m) {
    SolverState s;
    s.x = Eigen::VectorXd::Zero(n);
    s.lambda = Eigen::VectorXd::Zero(m);
    s.xi = Eigen::VectorXd::Zero(n);
    s.mu = Eigen::VectorXd::Zero(m);
    return s;
  }

  int n() const { return static_cast<int>(x.size()); }
  int m() const { return static_cast<int>(lambda.size()); }

  bool all_finite() const {
    return x.allFinite() && lambda.allFinite() && xi.allFinite() && mu.allFinite();
  }

  double norm() const {
    return std::sqrt(x.squaredNorm() + lambda.squaredNorm() + xi.squaredNorm() +
                     mu.squaredNorm());
  }

  // this = base + a * dir, used by the integrator stages
  void set_add(const SolverState& base, double a, const SolverState& dir) {
    x = base.x + a * dir.x;
    lambda = base.lambda + a * dir.lambda;
    xi = base.xi + a * dir.xi;
    mu = base.mu + a * dir.mu;
  }

  void axpy(double a, const SolverState& dir) {
    x += a * dir.x;
    lambda += a * dir.lambda;
    xi += a * dir.xi;
    mu += a * dir.mu;
  }
};

/// Zeroth-order feedback from one plant evaluation.
struct Feedback {
  double f_val = 0.0;
  Eigen::VectorXd g_vals;

  bool all_finite() const { return std::isfinite(f_val) && g_vals.allFinite(); }
};

/// White-box evaluation used by the gradient-based baselines and the KKT
/// residual: constraint values plus analytic gradients.
struct Gradients {
  Eigen::VectorXd grad_f;  // n
  Eigen::MatrixXd grad_g;  // m x n, row j = grad g_j
  Eigen::VectorXd g;       // m
};

inline double lagrangian(double f_val, const Eigen::VectorXd& g_vals,
                         const Eigen::VectorXd& lambda, double delta_reg = 0.0) {
  if (g_vals.size() != lambda.size())
    throw std::invalid_argument("lagrangian: constraint/multiplier dimension mismatch");
  return f_val + lambda.dot(g_vals) - 0.5 * delta_reg * lambda.squaredNorm();
}

/// Continuous projected primal-dual gradient flow (white-box baseline).
inline SolverState ppdgd_rhs(const SolverState& state, const Gradients& grads,
                             const SolverParams& params, const ProjectableSet& primal_set) {
  if (grads.grad_f.size() != state.x.size() || grads.grad_g.rows() != state.lambda.size() ||
      grads.g.size() != state.lambda.size())
    throw std::invalid_argument("ppdgd_rhs: gradient dimension mismatch");
  SolverState d = SolverState::zero(state.n(), state.m());
  const Eigen::VectorXd grad_lag = grads.grad_f + grads.grad_g.transpose() * state.lambda;
  d.x = params.k_x *
        (primal_set.project_point(state.x - params.alpha_x * grad_lag) - state.x);
  const Eigen::VectorXd dual_arg =
      state.lambda + params.alpha_lambda * (grads.g - params.delta_reg * state.lambda);
  d.lambda = params.k_lambda * (params.dual_set.project_point(dual_arg) - state.lambda);
  return d;
}

/// Zeroth-order variant: demodulated feedback drives the low-pass filters
/// xi (Lagrangian gradient estimate) and mu (constraint estimate); state
/// projections act on the shrunken feasible set.
inline SolverState ppdzd_rhs(const SolverState& state, const Feedback& fb, double t,
                             const SolverParams& params, const ProbingPlan& plan,
                             const ProjectableSet& shrunken_set) {
  if (fb.g_vals.size() != state.lambda.size())
    throw std::invalid_argument("ppdzd_rhs: feedback dimension mismatch");
  if (plan.size() != state.x.size())
    throw std::invalid_argument("ppdzd_rhs: probing plan dimension mismatch");
  if (!fb.all_finite()) throw std::invalid_argument("ppdzd_rhs: nonfinite feedback");
  SolverState d;
  d.x = params.k_x *
        (shrunken_set.project_point(state.x - params.alpha_x * state.xi) - state.x);
  const Eigen::VectorXd dual_arg =
      state.lambda + params.alpha_lambda * (state.mu - params.delta_reg * state.lambda);
  d.lambda = params.k_lambda * (params.dual_set.project_point(dual_arg) - state.lambda);
  const double demod = (fb.f_val + state.lambda.dot(fb.g_vals)) / (plan.eps_a() * plan.eta());
  d.xi = (demod * plan.probe_vector(t) - state.xi) / params.eps_g;
  d.mu = (fb.g_vals - state.mu) / params.eps_g;
  return d;
}

/// Discontinuous white-box flow: directions projected onto tangent cones.
inline SolverState dppdgd_rhs(const SolverState& state, const Gradients& grads,
                              const SolverParams& params, const ProjectableSet& primal_set) {
  if (grads.grad_f.size() != state.x.size() || grads.g.size() != state.lambda.size())
    throw std::invalid_argument("dppdgd_rhs: gradient dimension mismatch");
  SolverState d = SolverState::zero(state.n(), state.m());
  const Eigen::VectorXd grad_lag = grads.grad_f + grads.grad_g.transpose() * state.lambda;
  d.x = params.k_x * primal_set.project_tangent_cone(state.x, -grad_lag);
  d.lambda = params.k_lambda *
             params.dual_set.project_tangent_cone(
                 state.lambda, grads.g - params.delta_reg * state.lambda);
  return d;
}

/// Discontinuous zeroth-order variant; filter dynamics identical to ppdzd.
inline SolverState dppdzd_rhs(const SolverState& state, const Feedback& fb, double t,
                              const SolverParams& params, const ProbingPlan& plan,
                              const ProjectableSet& shrunken_set) {
  if (fb.g_vals.size() != state.lambda.size())
    throw std::invalid_argument("dppdzd_rhs: feedback dimension mismatch");
  if (!fb.all_finite()) throw std::invalid_argument("dppdzd_rhs: nonfinite feedback");
  SolverState d;
  d.x = params.k_x * shrunken_set.project_tangent_cone(state.x, -state.xi);
  d.lambda = params.k_lambda *
             params.dual_set.project_tangent_cone(
                 state.lambda, state.mu - params.delta_reg * state.lambda);
  const double demod = (fb.f_val + state.lambda.dot(fb.g_vals)) / (plan.eps_a() * plan.eta());
  d.xi = (demod * plan.probe_vector(t) - state.xi) / params.eps_g;
  d.mu = (fb.g_vals - state.mu) / params.eps_g;
  return d;
}

struct KktResidual {
  double stationarity = 0.0;
  double primal_feas = 0.0;
  double dual_feas = 0.0;
  double complementarity = 0.0;

  double max_component() const {
    return std::max(std::max(stationarity, primal_feas), std::max(dual_feas, complementarity));
  }
};

/// Natural-map KKT residual of the saddle point problem at (x, lambda).
inline KktResidual kkt_residual(const Gradients& grads, const ProjectableSet& primal_set,
                                const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) {
  KktResidual r;
  const Eigen::VectorXd grad_lag = grads.grad_f + grads.grad_g.transpose() * lambda;
  r.stationarity = (x - primal_set.project_point(x - grad_lag)).norm();
  r.primal_feas = grads.g.cwiseMax(0.0).norm() + primal_set.distance(x);
  r.dual_feas = (-lambda).cwiseMax(0.0).norm();
  r.complementarity = std::fabs(lambda.dot(grads.g));
  return r;
}

/// Averaged demodulation of zeroth-order feedback over the full common
/// probe period: recovers grad f + sum_j lambda_j grad g_j up to O(eps_a).
/// The evaluator must be time-invariant across the averaging window.
inline Eigen::VectorXd gradient_estimate_oracle(
    const std::function<Feedback(const Eigen::VectorXd&)>& eval, const Eigen::VectorXd& x,
    const Eigen::VectorXd& lambda, const ProbingPlan& plan) {
  if (plan.size() != x.size())
    throw std::invalid_argument("gradient_estimate_oracle: plan dimension mismatch");
  const double period = plan.common_period();
  std::vector<double> brk;
  double fastest = period;
  for (int i = 0; i < plan.size(); ++i) {
    const auto pts = plan.component_breakpoints(i, period);
    brk.insert(brk.end(), pts.begin(), pts.end());
    fastest = std::min(fastest, plan.component_period(i));
  }
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.size());
  detail::for_each_quadrature_node(period, std::move(brk), fastest / 64.0,
                                   [&](double t, double w) {
                                     const Eigen::VectorXd d = plan.probe_vector(t);
                                     const Feedback fb = eval(x + plan.eps_a() * d);
                                     if (!fb.all_finite())
                                       throw std::runtime_error(
                                           "gradient_estimate_oracle: nonfinite plant output");
                                     const double s = fb.f_val + lambda.dot(fb.g_vals);
                                     acc += (w * s) * d;
                                   });
  return acc / (period * plan.eps_a() * plan.eta());
}

}  // namespace pdzd
