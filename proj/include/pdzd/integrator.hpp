#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdzd/csv.hpp"
#include "pdzd/dynamics.hpp"
#include "pdzd/plants.hpp"
#include "pdzd/probing.hpp"

namespace pdzd {

struct IntegrationConfig {
  enum class Method { RK4, Euler };
  Method method = Method::RK4;
  double step = 1e-3;
  double t0 = 0.0;
  double t_end = 1.0;
  int record_every = 1;
  bool reproject = true;  // forced on for Euler (discontinuous dynamics)

  void check() const {
    if (step <= 0) throw std::invalid_argument("integration: step must be positive");
    if (t_end <= t0) throw std::invalid_argument("integration: t_end must exceed t0");
    if (record_every < 1) throw std::invalid_argument("integration: record_every must be >= 1");
  }
};

/// Step size resolving the fastest dither component with margin.
inline double default_step(const ProbingPlan& plan) {
  return plan.eps_omega() / (64.0 * plan.max_kappa());
}

/// Hard upper bound on the step for probed runs: at least 40 steps per
/// fastest probe period.
inline double max_step_for_plan(const ProbingPlan& plan) {
  return plan.eps_omega() / (40.0 * plan.max_kappa());
}

inline int default_record_every(double t0, double t_end, double step,
                                long max_records = 100000) {
  const long steps = std::max(1L, std::lround((t_end - t0) / step));
  return static_cast<int>(std::max(1L, (steps + max_records - 1) / max_records));
}

/// Time-stamped record of states, implemented inputs, feedback and metrics.
struct Trajectory {
  std::vector<double> times;
  std::vector<SolverState> states;
  std::vector<Eigen::VectorXd> inputs;  // implemented x-hat
  std::vector<Feedback> feedback;
  std::vector<double> cost;
  std::vector<double> max_violation;
  std::vector<double> dist_to_ref;  // empty when no reference given
  double record_dt = 0.0;
  SolverState final_state;
  double final_time = 0.0;
  bool aborted = false;
  std::string abort_reason;

  std::size_t size() const { return times.size(); }
};

/// Everything the closed loop needs besides the plant itself.
struct LoopOptions {
  std::optional<ProbingPlan> plan;           // dither for the implemented input
  std::optional<ProjectableSet> primal_set;  // reprojection target for x
  std::optional<ProjectableSet> dual_set;    // reprojection target for lambda
  std::optional<Eigen::VectorXd> reference;  // for the dist_to_ref metric
  std::optional<NoiseModel> state_noise;     // bounded additive state noise
};

using RhsFn = std::function<SolverState(const SolverState&, const Feedback&, double)>;

/// Fixed-step closed-loop integration. The plant is sampled once per macro
/// step at the implemented input x-hat(t_k) and the feedback is held across
/// the RK4 stages; the projection/filter algebra still uses stage states.
inline Trajectory integrate(const RhsFn& rhs, const SolverState& initial, Plant& plant,
                            const IntegrationConfig& config, const LoopOptions& loop = {}) {
  config.check();
  if (loop.plan && config.step > max_step_for_plan(*loop.plan) * (1.0 + 1e-12))
    throw std::invalid_argument(
        "integration: step too large for the probing plan (need >= 40 steps per fastest "
        "period)");
  if (loop.primal_set && loop.primal_set->distance(initial.x) > 1e-9)
    throw std::invalid_argument("integration: initial x outside the primal set");
  if (loop.dual_set && loop.dual_set->distance(initial.lambda) > 1e-9)
    throw std::invalid_argument("integration: initial lambda outside the dual set");
  if (loop.state_noise && loop.state_noise->kind != NoiseModel::Kind::AdditiveState)
    throw std::invalid_argument("integration: state noise model must be AdditiveState");

  const bool reproject =
      (config.reproject || config.method == IntegrationConfig::Method::Euler) &&
      (loop.primal_set || loop.dual_set);
  const double h = config.step;
  const long steps = std::max(1L, std::lround((config.t_end - config.t0) / h));

  Trajectory traj;
  traj.record_dt = h * config.record_every;
  const long expected = steps / config.record_every + 1;
  traj.times.reserve(expected);
  traj.states.reserve(expected);

  CounterRng noise_rng(loop.state_noise ? loop.state_noise->seed : 0);
  const double noise_bound = loop.state_noise ? loop.state_noise->bound : 0.0;

  SolverState state = initial;
  SolverState k1, k2, k3, k4, stage;
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(state.n());

  for (long k = 0; k < steps; ++k) {
    const double t = config.t0 + static_cast<double>(k) * h;

    Eigen::VectorXd xhat = state.x;
    if (loop.plan) xhat += loop.plan->eps_a() * loop.plan->probe_vector(t);
    Feedback fb = plant.eval(xhat, t);
    if (!fb.all_finite() || !state.all_finite()) {
      traj.aborted = true;
      traj.abort_reason = "nonfinite " + std::string(fb.all_finite() ? "state" : "feedback") +
                          " at t=" + std::to_string(t);
      break;
    }

    if (k % config.record_every == 0) {
      traj.times.push_back(t);
      traj.states.push_back(state);
      traj.inputs.push_back(xhat);
      traj.feedback.push_back(fb);
      traj.cost.push_back(fb.f_val);
      traj.max_violation.push_back(fb.g_vals.size() ? std::max(0.0, fb.g_vals.maxCoeff())
                                                    : 0.0);
      if (loop.reference) traj.dist_to_ref.push_back((state.x - *loop.reference).norm());
    }

    if (loop.state_noise) {
      for (int i = 0; i < noise.size(); ++i)
        noise(i) = noise_rng.next_normal() * noise_bound / 3.0;
      const double norm = noise.norm();
      if (norm > noise_bound) noise *= noise_bound / norm;
    }

    const auto deriv = [&](const SolverState& s, double tau) {
      SolverState d = rhs(s, fb, tau);
      if (loop.state_noise) d.x += noise;
      return d;
    };

    if (config.method == IntegrationConfig::Method::Euler) {
      k1 = deriv(state, t);
      state.axpy(h, k1);
    } else {
      k1 = deriv(state, t);
      stage.set_add(state, 0.5 * h, k1);
      k2 = deriv(stage, t + 0.5 * h);
      stage.set_add(state, 0.5 * h, k2);
      k3 = deriv(stage, t + 0.5 * h);
      stage.set_add(state, h, k3);
      k4 = deriv(stage, t + h);
      state.axpy(h / 6.0, k1);
      state.axpy(h / 3.0, k2);
      state.axpy(h / 3.0, k3);
      state.axpy(h / 6.0, k4);
    }

    if (reproject) {
      if (loop.primal_set) state.x = loop.primal_set->project_point(state.x);
      if (loop.dual_set) state.lambda = loop.dual_set->project_point(state.lambda);
    }
    if (!state.all_finite()) {
      traj.aborted = true;
      traj.abort_reason = "nonfinite state after step at t=" + std::to_string(t + h);
      break;
    }
  }

  traj.final_state = state;
  traj.final_time = config.t0 + static_cast<double>(steps) * h;
  return traj;
}

struct Summary {
  double final_cost = std::numeric_limits<double>::quiet_NaN();
  double final_violation = std::numeric_limits<double>::quiet_NaN();
  double settling_time = std::numeric_limits<double>::infinity();
  double time_in_violation = 0.0;
  std::optional<double> mean_abs_tracking_error;
  std::optional<double> nu_measured;  // sup distance over the last 20%
};

/// Sup of ||x - ref|| over the trailing fraction of the records.
inline double sup_tail_distance(const Trajectory& traj, const Eigen::VectorXd& ref,
                                double fraction = 0.2) {
  if (traj.size() == 0) throw std::invalid_argument("sup_tail_distance: empty trajectory");
  const double t_cut =
      traj.times.back() - fraction * (traj.times.back() - traj.times.front());
  double sup = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i)
    if (traj.times[i] >= t_cut) sup = std::max(sup, (traj.states[i].x - ref).norm());
  return sup;
}

/// Mean primal state over the trailing fraction of the records.
inline Eigen::VectorXd mean_tail_state(const Trajectory& traj, double fraction = 0.2) {
  if (traj.size() == 0) throw std::invalid_argument("mean_tail_state: empty trajectory");
  const double t_cut =
      traj.times.back() - fraction * (traj.times.back() - traj.times.front());
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(traj.states[0].x.size());
  long count = 0;
  for (std::size_t i = 0; i < traj.size(); ++i)
    if (traj.times[i] >= t_cut) {
      acc += traj.states[i].x;
      ++count;
    }
  return acc / static_cast<double>(count);
}

inline Summary summarize(const Trajectory& traj, double nu,
                         const std::optional<Eigen::VectorXd>& reference = std::nullopt,
                         double viol_tol = 1e-8) {
  if (traj.size() == 0) throw std::invalid_argument("summarize: empty trajectory");
  Summary s;
  s.final_cost = traj.cost.back();
  s.final_violation = traj.max_violation.back();
  for (double v : traj.max_violation)
    if (v > viol_tol) s.time_in_violation += traj.record_dt;

  const bool have_dist = !traj.dist_to_ref.empty();
  std::vector<double> dist;
  if (have_dist) {
    dist = traj.dist_to_ref;
  } else if (reference) {
    dist.reserve(traj.size());
    for (const auto& st : traj.states) dist.push_back((st.x - *reference).norm());
  }
  if (!dist.empty()) {
    // first time after which the distance stays within nu
    std::size_t first_ok = traj.size();
    for (std::size_t i = traj.size(); i-- > 0;) {
      if (dist[i] > nu) break;
      first_ok = i;
    }
    s.settling_time = first_ok < traj.size() ? traj.times[first_ok]
                                             : std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (double d : dist) acc += d;
    s.mean_abs_tracking_error = acc / static_cast<double>(dist.size());
    if (reference) s.nu_measured = sup_tail_distance(traj, *reference, 0.2);
  }
  return s;
}

/// Column schema: t, x_1..x_n, xhat_1..xhat_n, lambda_1..lambda_m, f,
/// g_1..g_m, max_violation, cost. Values round-trip exactly.
inline void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
  if (traj.size() == 0) {
    out << "t\n";
    return;
  }
  const int n = static_cast<int>(traj.states[0].x.size());
  const int m = static_cast<int>(traj.states[0].lambda.size());
  out << "t";
  for (int i = 1; i <= n; ++i) out << ",x_" << i;
  for (int i = 1; i <= n; ++i) out << ",xhat_" << i;
  for (int j = 1; j <= m; ++j) out << ",lambda_" << j;
  out << ",f";
  for (int j = 1; j <= m; ++j) out << ",g_" << j;
  out << ",max_violation,cost\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out << format_double(traj.times[k]);
    for (int i = 0; i < n; ++i) out << ',' << format_double(traj.states[k].x(i));
    for (int i = 0; i < n; ++i) out << ',' << format_double(traj.inputs[k](i));
    for (int j = 0; j < m; ++j) out << ',' << format_double(traj.states[k].lambda(j));
    out << ',' << format_double(traj.feedback[k].f_val);
    for (int j = 0; j < m; ++j) out << ',' << format_double(traj.feedback[k].g_vals(j));
    out << ',' << format_double(traj.max_violation[k]) << ',' << format_double(traj.cost[k])
        << '\n';
  }
}

inline void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_trajectory_csv(traj, out);
}

}  // namespace pdzd
