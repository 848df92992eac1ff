#pragma once

// Shared desk-scale experiment instances used by the unit and acceptance
// suites. Constants are fixed (not drawn per run) so failures reproduce.

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "pdzd/dynamics.hpp"
#include "pdzd/plants.hpp"
#include "pdzd/probing.hpp"

namespace testsupport {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// kappa_i = 1.2 + 1.5 i, i = 1..n (as exact fractions).
inline std::vector<pdzd::Rational> staircase_kappas(int n) {
  std::vector<pdzd::Rational> out;
  for (int i = 1; i <= n; ++i) out.push_back(pdzd::Rational(12 + 15 * i, 10));
  return out;
}

/// Field-experiment gain set: eps_a = eps_omega = eps_g = 0.025,
/// alpha_x = alpha_lambda = 0.001, k_x = 50, k_lambda = 10.
inline pdzd::SolverParams experiment_params(int m, double eps_scale = 1.0) {
  pdzd::SolverParams p;
  p.k_x = 50.0;
  p.k_lambda = 10.0;
  p.alpha_x = 0.001;
  p.alpha_lambda = 0.001;
  p.eps_g = 0.025 * eps_scale;
  p.dual_set = pdzd::ProjectableSet::nonnegative_orthant(m);
  return p;
}

inline pdzd::ProbingPlan experiment_plan(int n, double eps_scale = 1.0,
                                         pdzd::SignalKind kind = pdzd::SignalKind::Square) {
  return pdzd::ProbingPlan(kind, 0.025 * eps_scale, 0.025 * eps_scale, staircase_kappas(n));
}

/// Seven-variable QP with the quadratic cost 0.1 ||x||^2, device boxes
/// [-2, 2.5], and two voltage-style affine constraints that are inactive
/// (slack -0.02) at the optimum. Coordinate 4 is box-active, which pins
/// the dithered equilibrium one probing amplitude inside the face; its
/// multiplier kappa_4 = 7.2 has no odd-ratio partner in the staircase
/// plan, so the face gradient does not leak into other coordinates under
/// square probing.
inline pdzd::Plant seven_var_qp() {
  const int n = 7;
  const MatrixXd Q = 0.2 * MatrixXd::Identity(n, n);
  VectorXd c(n);
  c << -0.24, 0.08, -0.06, 0.6, 0.04, -0.12, 0.02;
  MatrixXd A(2, n);
  A << -0.22, -0.15, -0.31, -0.12, -0.25, -0.18, -0.28,
       -0.10, -0.27, -0.08, -0.30, -0.14, -0.21, -0.09;
  VectorXd b(2);
  b << -0.067, 0.495;
  return pdzd::qp_plant(
      Q, c, A, b,
      pdzd::ProjectableSet::box(VectorXd::Constant(n, -2.0), VectorXd::Constant(n, 2.5)));
}

/// Noise baselines for the two voltage-style rows of seven_var_qp: the
/// uncontrolled readings g(0) = -b, so the multiplicative model perturbs
/// the deviation of each channel from its no-control state.
inline VectorXd seven_var_qp_noise_baseline() {
  VectorXd b(2);
  b << 0.067, -0.495;
  return b;
}

struct OvcInstance {
  MatrixXd sensitivity;  // nodes x devices
  VectorXd v0_nominal;   // pre-disturbance profile, all within limits
  VectorXd v0_dropped;   // post-disturbance profile, three nodes low
  double v_low = 0.95;
  double v_high = 1.05;
  double cost_coeff = 0.1;
  std::vector<std::pair<double, double>> device_bounds;
};

/// Seven devices, six monitored nodes, radial-feeder-like sensitivities.
inline OvcInstance ovc_instance() {
  OvcInstance inst;
  inst.sensitivity.resize(6, 7);
  inst.sensitivity << 0.32, 0.05, 0.02, 0.01, 0.01, 0.01, 0.02,
                      0.05, 0.36, 0.06, 0.02, 0.01, 0.01, 0.02,
                      0.02, 0.06, 0.34, 0.05, 0.02, 0.01, 0.02,
                      0.01, 0.02, 0.05, 0.38, 0.06, 0.02, 0.03,
                      0.01, 0.01, 0.02, 0.06, 0.35, 0.05, 0.04,
                      0.01, 0.01, 0.01, 0.02, 0.05, 0.33, 0.26;
  inst.v0_nominal.resize(6);
  inst.v0_nominal << 0.995, 0.990, 0.985, 0.982, 0.986, 0.992;
  inst.v0_dropped.resize(6);
  inst.v0_dropped << 0.952, 0.920, 0.916, 0.912, 0.951, 0.961;
  inst.device_bounds.assign(7, {-2.0, 2.5});
  return inst;
}

inline pdzd::Plant ovc_plant_from(const OvcInstance& inst, const VectorXd& v0) {
  return pdzd::ovc_plant(inst.sensitivity, v0, inst.v_low, inst.v_high, inst.cost_coeff,
                         inst.device_bounds);
}

}  // namespace testsupport
