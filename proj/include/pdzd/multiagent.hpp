#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pdzd/csv.hpp"
#include "pdzd/dynamics.hpp"
#include "pdzd/integrator.hpp"
#include "pdzd/probing.hpp"
#include "pdzd/sets.hpp"

namespace pdzd {

/// Action-space partition plus constraint membership bookkeeping.
/// members[j] lists the agents involved in constraint j; owner[j] is the
/// agent whose dual block holds constraint j in the consensus variant.
class AgentLayout {
 public:
  AgentLayout(std::vector<int> dims, std::vector<ProjectableSet> sets,
              std::vector<std::vector<int>> members, std::vector<int> owner = {})
      : dims_(std::move(dims)), sets_(std::move(sets)), members_(std::move(members)),
        owner_(std::move(owner)) {
    if (dims_.size() != sets_.size())
      throw std::invalid_argument("agent layout: dims/sets size mismatch");
    const int n_agents = static_cast<int>(dims_.size());
    offsets_.resize(n_agents, 0);
    for (int i = 0; i < n_agents; ++i) {
      if (dims_[i] <= 0 || sets_[i].dim() != dims_[i])
        throw std::invalid_argument("agent layout: set dimension mismatch for agent " +
                                    std::to_string(i));
      if (i + 1 < n_agents) offsets_[i + 1] = offsets_[i] + dims_[i];
    }
    if (owner_.empty()) {
      owner_.reserve(members_.size());
      for (const auto& s : members_) {
        if (s.empty()) throw std::invalid_argument("agent layout: constraint with no members");
        owner_.push_back(s.front());
      }
    }
    if (owner_.size() != members_.size())
      throw std::invalid_argument("agent layout: owner/members size mismatch");
    for (std::size_t j = 0; j < members_.size(); ++j) {
      bool owner_in = false;
      for (int i : members_[j]) {
        if (i < 0 || i >= n_agents)
          throw std::invalid_argument("agent layout: member index out of range");
        if (i == owner_[j]) owner_in = true;
      }
      if (!owner_in) throw std::invalid_argument("agent layout: owner not a member");
    }
    involved_.assign(n_agents, {});
    for (std::size_t j = 0; j < members_.size(); ++j)
      for (int i : members_[j]) involved_[i].push_back(static_cast<int>(j));
  }

  int agents() const { return static_cast<int>(dims_.size()); }
  int constraints() const { return static_cast<int>(members_.size()); }
  int total_dim() const { return offsets_.back() + dims_.back(); }
  int dim(int i) const { return dims_[i]; }
  int offset(int i) const { return offsets_[i]; }
  const ProjectableSet& set(int i) const { return sets_[i]; }
  const std::vector<int>& members(int j) const { return members_[j]; }
  int owner(int j) const { return owner_[j]; }
  /// J_i: constraints involving agent i.
  const std::vector<int>& involved(int i) const { return involved_[i]; }

  /// Copy with every agent set eps-shrunk for dithered operation.
  AgentLayout shrunken(double eps_a) const {
    std::vector<ProjectableSet> sets;
    sets.reserve(sets_.size());
    for (const auto& s : sets_) sets.push_back(s.shrink(eps_a));
    return AgentLayout(dims_, std::move(sets), members_, owner_);
  }

 private:
  std::vector<int> dims_;
  std::vector<ProjectableSet> sets_;
  std::vector<std::vector<int>> members_;
  std::vector<int> owner_;
  std::vector<int> offsets_;
  std::vector<std::vector<int>> involved_;
};

/// Weighted directed communication graph; a_ij > 0 means j sends to i.
class CommGraph {
 public:
  CommGraph(Eigen::MatrixXd adjacency, double eps_p)
      : a_(std::move(adjacency)), eps_p_(eps_p) {
    if (a_.rows() != a_.cols()) throw std::invalid_argument("graph: adjacency must be square");
    if (eps_p_ <= 0) throw std::invalid_argument("graph: eps_p must be positive");
    if (a_.size() > 0 && a_.minCoeff() < 0)
      throw std::invalid_argument("graph: negative edge weight");
    balance_residual_ = 0.0;
    for (int i = 0; i < a_.rows(); ++i)
      balance_residual_ =
          std::max(balance_residual_, std::fabs(a_.row(i).sum() - a_.col(i).sum()));
    strongly_connected_ = reachable_from(0) && reachable_from_reverse(0);
  }

  static CommGraph ring(int n, double weight, double eps_p) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) a(i, (i + 1) % n) = weight;
    return CommGraph(a, eps_p);
  }

  static CommGraph complete(int n, double weight, double eps_p) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(n, n, weight);
    a.diagonal().setZero();
    return CommGraph(a, eps_p);
  }

  /// Balanced random digraph built by superposing weighted directed cycles.
  static CommGraph cycle_superposition(int n, int cycles, std::uint64_t seed, double eps_p) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    CounterRng rng(seed);
    std::vector<int> perm(n);
    for (int c = 0; c < cycles; ++c) {
      for (int i = 0; i < n; ++i) perm[i] = i;
      for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_uniform() * (i + 1)) % (i + 1);
        std::swap(perm[i], perm[j]);
      }
      const double w = 0.5 + rng.next_uniform();
      for (int i = 0; i < n; ++i) a(perm[i], perm[(i + 1) % n]) += w;
    }
    return CommGraph(a, eps_p);
  }

  /// Edge-list CSV `i,j,weight` with a header row, zero-based node ids.
  static CommGraph from_edge_list_csv(const std::string& path, int n, double eps_p) {
    const Eigen::MatrixXd rows = read_matrix_csv(path);
    if (rows.cols() != 3) throw std::runtime_error("edge list CSV needs i,j,weight columns");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (int r = 0; r < rows.rows(); ++r) {
      const int i = static_cast<int>(rows(r, 0));
      const int j = static_cast<int>(rows(r, 1));
      if (i < 0 || i >= n || j < 0 || j >= n)
        throw std::runtime_error("edge list CSV: node id out of range");
      a(i, j) = rows(r, 2);
    }
    return CommGraph(a, eps_p);
  }

  int size() const { return static_cast<int>(a_.rows()); }
  double eps_p() const { return eps_p_; }
  const Eigen::MatrixXd& adjacency() const { return a_; }
  double balance_residual() const { return balance_residual_; }
  bool strongly_connected() const { return strongly_connected_; }
  bool valid() const { return strongly_connected_ && balance_residual_ <= 1e-12; }

 private:
  bool bfs(int start, bool reverse) const {
    std::vector<bool> seen(size(), false);
    std::queue<int> q;
    q.push(start);
    seen[start] = true;
    int count = 1;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v = 0; v < size(); ++v) {
        const double w = reverse ? a_(v, u) : a_(u, v);
        if (w > 0 && !seen[v]) {
          seen[v] = true;
          ++count;
          q.push(v);
        }
      }
    }
    return count == size();
  }
  bool reachable_from(int s) const { return size() == 0 ? true : bfs(s, false); }
  bool reachable_from_reverse(int s) const { return size() == 0 ? true : bfs(s, true); }

  Eigen::MatrixXd a_;
  double eps_p_;
  double balance_residual_ = 0.0;
  bool strongly_connected_ = false;
};

struct GraphReport {
  double balance_residual = 0.0;
  bool strongly_connected = false;
  bool ok = false;
};

inline GraphReport check_graph(const CommGraph& g) {
  GraphReport r;
  r.balance_residual = g.balance_residual();
  r.strongly_connected = g.strongly_connected();
  r.ok = g.valid();
  return r;
}

/// Feedback split for the broadcast-dual variant: per-agent local costs
/// plus shared constraint evaluations (each g_j measured once).
struct DecentralizedFeedback {
  Eigen::VectorXd local_costs;  // f_i(xhat_i), one per agent
  Eigen::VectorXd g;            // g_j(xhat), one per constraint
};

/// Per-agent updates with broadcast duals. Each agent uses only its own
/// cost feedback and the (g_j, lambda_j) pairs of constraints it belongs
/// to; each dual row is updated exactly once. The stacked result equals
/// the single-problem zeroth-order flow applied blockwise.
inline SolverState decentralized_step(const AgentLayout& layout, const SolverState& state,
                                      const DecentralizedFeedback& fb, double t,
                                      const SolverParams& params, const ProbingPlan& plan) {
  const int n = layout.total_dim();
  const int m = layout.constraints();
  if (state.n() != n || state.m() != m || fb.local_costs.size() != layout.agents() ||
      fb.g.size() != m || plan.size() != n)
    throw std::invalid_argument("decentralized_step: dimension mismatch");

  SolverState d = SolverState::zero(n, m);
  const Eigen::VectorXd probe = plan.probe_vector(t);
  for (int i = 0; i < layout.agents(); ++i) {
    const int off = layout.offset(i);
    const int ni = layout.dim(i);
    const Eigen::VectorXd xi_block = state.xi.segment(off, ni);
    const Eigen::VectorXd x_block = state.x.segment(off, ni);
    d.x.segment(off, ni) =
        params.k_x *
        (layout.set(i).project_point(x_block - params.alpha_x * xi_block) - x_block);
    const auto& mine = layout.involved(i);
    Eigen::VectorXd lam_sub(mine.size()), g_sub(mine.size());
    for (std::size_t r = 0; r < mine.size(); ++r) {
      lam_sub(r) = state.lambda(mine[r]);
      g_sub(r) = fb.g(mine[r]);
    }
    const double demod =
        (fb.local_costs(i) + lam_sub.dot(g_sub)) / (plan.eps_a() * plan.eta());
    d.xi.segment(off, ni) =
        (demod * probe.segment(off, ni) - xi_block) / params.eps_g;
  }
  for (int j = 0; j < m; ++j) {
    const double arg =
        state.lambda(j) +
        params.alpha_lambda * (state.mu(j) - params.delta_reg * state.lambda(j));
    d.lambda(j) = params.k_lambda * (std::max(0.0, arg) - state.lambda(j));
    d.mu(j) = (fb.g(j) - state.mu(j)) / params.eps_g;
  }
  return d;
}

/// Extended state for the fully distributed variant: solver state plus the
/// per-agent consensus integrator p.
struct MultiAgentState {
  SolverState core;
  Eigen::VectorXd p;

  void set_add(const MultiAgentState& base, double a, const MultiAgentState& dir) {
    core.set_add(base.core, a, dir.core);
    p = base.p + a * dir.p;
  }
  void axpy(double a, const MultiAgentState& dir) {
    core.axpy(a, dir.core);
    p += a * dir.p;
  }
  bool all_finite() const { return core.all_finite() && p.allFinite(); }
};

/// Local feedback for the consensus variant: agent-owned costs and
/// agent-owned constraint blocks, all functions of the joint action.
struct ConsensusFeedback {
  Eigen::VectorXd local_costs;          // f_i(xhat)
  std::vector<Eigen::VectorXd> local_g;  // g_i(xhat) blocks
};

/// Fully distributed step: dynamic average consensus on the demodulation
/// signal (y tracks the network average of f_i + lambda_i' g_i), per-agent
/// dual blocks, neighbor-only communication. Weight balance keeps
/// sum_i p_i invariant. Set discontinuous=true for tangent-cone updates.
inline MultiAgentState consensus_step(const CommGraph& graph, const AgentLayout& layout,
                                      const MultiAgentState& mstate, const ConsensusFeedback& fb,
                                      double t, const SolverParams& params,
                                      const ProbingPlan& plan, bool discontinuous = false) {
  const int n_agents = layout.agents();
  if (graph.size() != n_agents || mstate.p.size() != n_agents ||
      fb.local_costs.size() != n_agents || static_cast<int>(fb.local_g.size()) != n_agents)
    throw std::invalid_argument("consensus_step: dimension mismatch");
  if (!graph.valid())
    throw std::invalid_argument(
        "consensus_step: graph must be weight-balanced and strongly connected");

  // dual blocks are laid out agent-major: lambda = [lambda_1; ...; lambda_N]
  std::vector<int> dual_offset(n_agents, 0);
  int m_total = 0;
  for (int i = 0; i < n_agents; ++i) {
    dual_offset[i] = m_total;
    m_total += static_cast<int>(fb.local_g[i].size());
  }
  if (mstate.core.m() != m_total)
    throw std::invalid_argument("consensus_step: dual block size mismatch");

  const SolverState& s = mstate.core;
  MultiAgentState d;
  d.core = SolverState::zero(s.n(), s.m());
  d.p.resize(n_agents);

  Eigen::VectorXd y(n_agents);
  for (int i = 0; i < n_agents; ++i) {
    const int mo = dual_offset[i];
    const int mi = static_cast<int>(fb.local_g[i].size());
    y(i) = fb.local_costs(i) + s.lambda.segment(mo, mi).dot(fb.local_g[i]) - mstate.p(i);
  }
  const auto& a = graph.adjacency();
  for (int i = 0; i < n_agents; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n_agents; ++j)
      if (a(i, j) > 0) acc += a(i, j) * (y(i) - y(j));
    d.p(i) = acc / graph.eps_p();
  }

  const Eigen::VectorXd probe = plan.probe_vector(t);
  const double scale =
      static_cast<double>(n_agents) / (plan.eps_a() * plan.eta());
  for (int i = 0; i < n_agents; ++i) {
    const int off = layout.offset(i);
    const int ni = layout.dim(i);
    const int mo = dual_offset[i];
    const int mi = static_cast<int>(fb.local_g[i].size());
    const Eigen::VectorXd x_block = s.x.segment(off, ni);
    const Eigen::VectorXd xi_block = s.xi.segment(off, ni);
    const Eigen::VectorXd lam_block = s.lambda.segment(mo, mi);
    const Eigen::VectorXd mu_block = s.mu.segment(mo, mi);

    if (discontinuous) {
      d.core.x.segment(off, ni) =
          params.k_x * layout.set(i).project_tangent_cone(x_block, -xi_block);
      const Eigen::VectorXd dir = mu_block - params.delta_reg * lam_block;
      Eigen::VectorXd lam_dot(mi);
      for (int r = 0; r < mi; ++r)
        lam_dot(r) = (lam_block(r) <= kActiveFaceTol && dir(r) < 0) ? 0.0 : dir(r);
      d.core.lambda.segment(mo, mi) = params.k_lambda * lam_dot;
    } else {
      d.core.x.segment(off, ni) =
          params.k_x *
          (layout.set(i).project_point(x_block - params.alpha_x * xi_block) - x_block);
      for (int r = 0; r < mi; ++r) {
        const double arg =
            lam_block(r) + params.alpha_lambda * (mu_block(r) - params.delta_reg * lam_block(r));
        d.core.lambda(mo + r) = params.k_lambda * (std::max(0.0, arg) - lam_block(r));
      }
    }
    d.core.xi.segment(off, ni) =
        (scale * y(i) * probe.segment(off, ni) - xi_block) / params.eps_g;
    d.core.mu.segment(mo, mi) = (fb.local_g[i] - mu_block) / params.eps_g;
  }
  return d;
}

using DecentralizedEvalFn = std::function<DecentralizedFeedback(const Eigen::VectorXd&, double)>;

/// Closed-loop integration of the broadcast-dual variant: shared
/// constraints measured once per step, dual rows updated once and shared
/// among member agents. Produces an ordinary trajectory whose cost channel
/// is the summed local cost feedback.
inline Trajectory integrate_decentralized(const AgentLayout& layout,
                                          const SolverState& initial,
                                          const DecentralizedEvalFn& eval,
                                          const IntegrationConfig& config,
                                          const SolverParams& params, const ProbingPlan& plan) {
  config.check();
  if (config.step > max_step_for_plan(plan) * (1.0 + 1e-12))
    throw std::invalid_argument("integrate_decentralized: step too large for probing plan");

  const double h = config.step;
  const long steps = std::max(1L, std::lround((config.t_end - config.t0) / h));
  Trajectory traj;
  traj.record_dt = h * config.record_every;
  SolverState state = initial;
  SolverState k1, k2, k3, k4, stage;

  for (long k = 0; k < steps; ++k) {
    const double t = config.t0 + static_cast<double>(k) * h;
    const Eigen::VectorXd xhat = state.x + plan.eps_a() * plan.probe_vector(t);
    const DecentralizedFeedback fb = eval(xhat, t);

    if (k % config.record_every == 0) {
      traj.times.push_back(t);
      traj.states.push_back(state);
      traj.inputs.push_back(xhat);
      Feedback rec;
      rec.f_val = fb.local_costs.sum();
      rec.g_vals = fb.g;
      traj.feedback.push_back(rec);
      traj.cost.push_back(rec.f_val);
      traj.max_violation.push_back(fb.g.size() ? std::max(0.0, fb.g.maxCoeff()) : 0.0);
    }

    const auto deriv = [&](const SolverState& s, double tau) {
      return decentralized_step(layout, s, fb, tau, params, plan);
    };
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

    for (int i = 0; i < layout.agents(); ++i) {
      const int off = layout.offset(i);
      const int ni = layout.dim(i);
      state.x.segment(off, ni) = layout.set(i).project_point(state.x.segment(off, ni));
    }
    state.lambda = state.lambda.cwiseMax(0.0);

    if (!state.all_finite()) {
      traj.aborted = true;
      traj.abort_reason = "nonfinite state at t=" + std::to_string(t + h);
      break;
    }
  }
  traj.final_state = state;
  traj.final_time = config.t0 + static_cast<double>(steps) * h;
  return traj;
}

using ConsensusEvalFn = std::function<ConsensusFeedback(const Eigen::VectorXd&, double)>;

struct ConsensusTrajectory {
  std::vector<double> times;
  std::vector<MultiAgentState> states;
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> y_signals;
  double max_abs_sum_p = 0.0;  // conservation audit over every step
  MultiAgentState final_state;
  double final_time = 0.0;
  bool aborted = false;
  std::string abort_reason;

  std::size_t size() const { return times.size(); }
};

/// Closed-loop integration of the consensus variant as one synchronous ODE.
/// Initialization requires sum_i p_i = 0 (zero steady-state tracking error).
inline ConsensusTrajectory integrate_consensus(const CommGraph& graph,
                                               const AgentLayout& layout,
                                               const MultiAgentState& initial,
                                               const ConsensusEvalFn& eval,
                                               const IntegrationConfig& config,
                                               const SolverParams& params,
                                               const ProbingPlan& plan,
                                               bool discontinuous = false) {
  config.check();
  if (config.step > max_step_for_plan(plan) * (1.0 + 1e-12))
    throw std::invalid_argument("integrate_consensus: step too large for probing plan");
  if (!graph.valid())
    throw std::invalid_argument(
        "integrate_consensus: graph must be weight-balanced and strongly connected");
  if (std::fabs(initial.p.sum()) > 1e-12)
    throw std::invalid_argument("integrate_consensus: sum of p must start at zero");

  const double h = config.step;
  const long steps = std::max(1L, std::lround((config.t_end - config.t0) / h));
  ConsensusTrajectory traj;
  MultiAgentState state = initial;
  MultiAgentState k1, k2, k3, k4, stage;

  for (long k = 0; k < steps; ++k) {
    const double t = config.t0 + static_cast<double>(k) * h;
    const Eigen::VectorXd xhat = state.core.x + plan.eps_a() * plan.probe_vector(t);
    const ConsensusFeedback fb = eval(xhat, t);

    if (k % config.record_every == 0) {
      traj.times.push_back(t);
      traj.states.push_back(state);
      traj.inputs.push_back(xhat);
      Eigen::VectorXd y(layout.agents());
      int mo = 0;
      for (int i = 0; i < layout.agents(); ++i) {
        const int mi = static_cast<int>(fb.local_g[i].size());
        y(i) = fb.local_costs(i) + state.core.lambda.segment(mo, mi).dot(fb.local_g[i]) -
               state.p(i);
        mo += mi;
      }
      traj.y_signals.push_back(y);
    }

    const auto deriv = [&](const MultiAgentState& ms, double tau) {
      return consensus_step(graph, layout, ms, fb, tau, params, plan, discontinuous);
    };
    if (config.method == IntegrationConfig::Method::Euler || discontinuous) {
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

    for (int i = 0; i < layout.agents(); ++i) {
      const int off = layout.offset(i);
      const int ni = layout.dim(i);
      state.core.x.segment(off, ni) =
          layout.set(i).project_point(state.core.x.segment(off, ni));
    }
    state.core.lambda = state.core.lambda.cwiseMax(0.0);
    traj.max_abs_sum_p = std::max(traj.max_abs_sum_p, std::fabs(state.p.sum()));

    if (!state.all_finite()) {
      traj.aborted = true;
      traj.abort_reason = "nonfinite state at t=" + std::to_string(t + h);
      break;
    }
  }
  traj.final_state = state;
  traj.final_time = config.t0 + static_cast<double>(steps) * h;
  return traj;
}

}  // namespace pdzd
