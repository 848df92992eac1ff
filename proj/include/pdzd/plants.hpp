#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pdzd/dynamics.hpp"
#include "pdzd/random.hpp"
#include "pdzd/sets.hpp"

namespace pdzd {

/// Piecewise-linear exogenous disturbance, defined only on [t_front, t_back].
class PiecewiseLinearSchedule {
 public:
  PiecewiseLinearSchedule(std::vector<double> times, std::vector<Eigen::VectorXd> values)
      : times_(std::move(times)), values_(std::move(values)) {
    if (times_.size() != values_.size() || times_.size() < 2)
      throw std::invalid_argument("schedule: need matching times/values, at least two knots");
    for (std::size_t i = 1; i < times_.size(); ++i) {
      if (times_[i] <= times_[i - 1])
        throw std::invalid_argument("schedule: knot times must increase");
      if (values_[i].size() != values_[0].size())
        throw std::invalid_argument("schedule: knot value dimension mismatch");
    }
  }

  int dim() const { return static_cast<int>(values_[0].size()); }
  double t_front() const { return times_.front(); }
  double t_back() const { return times_.back(); }
  const std::vector<double>& knot_times() const { return times_; }
  const std::vector<Eigen::VectorXd>& knot_values() const { return values_; }

  Eigen::VectorXd value(double t) const {
    if (t < times_.front() - 1e-12 || t > times_.back() + 1e-12)
      throw std::out_of_range("schedule: time " + std::to_string(t) + " outside domain [" +
                              std::to_string(times_.front()) + ", " +
                              std::to_string(times_.back()) + "]");
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return values_.front();
    if (it == times_.end()) return values_.back();
    const std::size_t hi = it - times_.begin();
    const std::size_t lo = hi - 1;
    const double w = (t - times_[lo]) / (times_[hi] - times_[lo]);
    return (1.0 - w) * values_[lo] + w * values_[hi];
  }

 private:
  std::vector<double> times_;
  std::vector<Eigen::VectorXd> values_;
};

struct NoiseModel {
  enum class Kind { MultiplicativeDeviation, AdditiveState };
  Kind kind = Kind::MultiplicativeDeviation;
  double sigma = 0.0;        // std of the per-channel deviation factor
  Eigen::VectorXd baseline;  // per-channel deviation reference (empty = zeros)
  double sigma_f = 0.0;      // additive cost-feedback noise, off by default
  double bound = 0.0;        // sup-norm bound of additive state noise
  std::uint64_t seed = 0;
};

/// Black-box evaluator with optional white-box extras (analytic gradients,
/// known optimum) used by baselines and test oracles.
struct Plant {
  int n = 0;
  int m = 0;
  std::function<Feedback(const Eigen::VectorXd&, double)> eval;
  std::function<Gradients(const Eigen::VectorXd&, double)> gradients;
  ProjectableSet primal_set = ProjectableSet::nonnegative_orthant(0);
  std::optional<Eigen::VectorXd> optimum;
  std::optional<Eigen::VectorXd> multipliers;
  std::optional<double> optimal_cost;
  std::function<Plant(const PiecewiseLinearSchedule&)> schedule_hook;

  bool has_gradients() const { return static_cast<bool>(gradients); }
};

inline KktResidual kkt_residual(const Plant& plant, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& lambda, double t = 0.0) {
  if (!plant.has_gradients())
    throw std::invalid_argument("kkt_residual: plant has no white-box gradients");
  return kkt_residual(plant.gradients(x, t), plant.primal_set, x, lambda);
}

struct QpOptimum {
  Eigen::VectorXd x;
  Eigen::VectorXd mult;  // multipliers of the inequality rows
  double cost = 0.0;
};

/// Exact optimum of min 1/2 x'Qx + c'x s.t. Ax <= b, lo <= x <= hi by
/// KKT enumeration over every (box face) x (active row subset) pattern.
inline QpOptimum qp_active_set_optimum(const Eigen::MatrixXd& Q, const Eigen::VectorXd& c,
                                       const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                       const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const int n = static_cast<int>(Q.rows());
  const int m = static_cast<int>(A.rows());
  if (m > 10) throw std::invalid_argument("qp optimum: more than 10 inequality rows");
  if (n > 9) throw std::invalid_argument("qp optimum: enumeration limited to 9 variables");
  const double tol = 1e-9;

  QpOptimum best;
  double best_cost = std::numeric_limits<double>::infinity();
  bool found = false;

  std::vector<int> face(n, 0);  // 0 free, 1 lower, 2 upper
  long patterns = 1;
  for (int i = 0; i < n; ++i) patterns *= 3;

  for (long pat = 0; pat < patterns; ++pat) {
    long rem = pat;
    std::vector<int> free_idx;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      face[i] = rem % 3;
      rem /= 3;
      if (face[i] == 0)
        free_idx.push_back(i);
      else
        x(i) = face[i] == 1 ? lo(i) : hi(i);
    }
    const int nf = static_cast<int>(free_idx.size());

    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      std::vector<int> act;
      for (int j = 0; j < m; ++j)
        if (mask & (1u << j)) act.push_back(j);
      const int na = static_cast<int>(act.size());
      if (na > nf) continue;

      // KKT system on the free coordinates
      Eigen::MatrixXd K(nf + na, nf + na);
      Eigen::VectorXd rhs(nf + na);
      for (int r = 0; r < nf; ++r) {
        for (int s = 0; s < nf; ++s) K(r, s) = Q(free_idx[r], free_idx[s]);
        double qb = c(free_idx[r]);
        for (int i = 0; i < n; ++i)
          if (face[i] != 0) qb += Q(free_idx[r], i) * x(i);
        rhs(r) = -qb;
        for (int s = 0; s < na; ++s) {
          K(r, nf + s) = A(act[s], free_idx[r]);
          K(nf + s, r) = A(act[s], free_idx[r]);
        }
      }
      for (int r = 0; r < na; ++r) {
        for (int s = 0; s < na; ++s) K(nf + r, nf + s) = 0.0;
        double bb = b(act[r]);
        for (int i = 0; i < n; ++i)
          if (face[i] != 0) bb -= A(act[r], i) * x(i);
        rhs(nf + r) = bb;
      }

      Eigen::VectorXd sol(nf + na);
      if (nf + na > 0) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
        if (!lu.isInvertible()) continue;
        sol = lu.solve(rhs);
      }

      Eigen::VectorXd xc = x;
      for (int r = 0; r < nf; ++r) xc(free_idx[r]) = sol(r);
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
      for (int r = 0; r < na; ++r) mu(act[r]) = sol(nf + r);

      if (na > 0 && mu.minCoeff() < -tol) continue;
      bool ok = true;
      for (int i = 0; i < n && ok; ++i)
        if (xc(i) < lo(i) - tol || xc(i) > hi(i) + tol) ok = false;
      for (int j = 0; j < m && ok; ++j)
        if (A.row(j).dot(xc) - b(j) > tol * (1.0 + std::fabs(b(j)))) ok = false;
      if (!ok) continue;

      // box multiplier signs
      const Eigen::VectorXd grad = Q * xc + c + A.transpose() * mu;
      for (int i = 0; i < n && ok; ++i) {
        if (face[i] == 1 && grad(i) < -tol) ok = false;
        if (face[i] == 2 && grad(i) > tol) ok = false;
        if (face[i] == 0 && std::fabs(grad(i)) > 1e-7 * (1.0 + grad.norm())) ok = false;
      }
      if (!ok) continue;

      const double cost = 0.5 * xc.dot(Q * xc) + c.dot(xc);
      if (cost < best_cost) {
        best_cost = cost;
        best.x = xc;
        best.mult = mu;
        best.cost = cost;
        found = true;
      }
    }
  }
  if (!found) throw std::invalid_argument("qp optimum: no feasible KKT point (infeasible?)");
  return best;
}

/// Optimum of the same box QP by projected dual ascent with an exact
/// active-set polish; handles more inequality rows than the enumeration.
inline QpOptimum box_qp_dual_ascent_optimum(const Eigen::MatrixXd& Q, const Eigen::VectorXd& c,
                                            const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                            const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                            double tol = 1e-10, long max_iter = 3000000) {
  const int n = static_cast<int>(Q.rows());
  const int m = static_cast<int>(A.rows());
  const Eigen::VectorXd qdiag = Q.diagonal();
  if ((Q - Eigen::MatrixXd(qdiag.asDiagonal())).norm() > 1e-14 * (1.0 + Q.norm()))
    throw std::invalid_argument("dual ascent oracle requires diagonal Q");
  if (qdiag.minCoeff() <= 0)
    throw std::invalid_argument("dual ascent oracle requires positive diagonal Q");

  const auto primal = [&](const Eigen::VectorXd& lam) -> Eigen::VectorXd {
    const Eigen::VectorXd u = -(c + A.transpose() * lam).cwiseQuotient(qdiag);
    return u.cwiseMax(lo).cwiseMin(hi);
  };

  const double l_dual =
      (A * qdiag.cwiseInverse().asDiagonal() * A.transpose()).operatorNorm();
  const double step = 1.0 / std::max(l_dual, 1e-12);
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd x = primal(lam);
  for (long it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd g = A * x - b;
    const Eigen::VectorXd next = (lam + step * g).cwiseMax(0.0);
    const double resid = (next - lam).lpNorm<Eigen::Infinity>() / step;
    lam = next;
    x = primal(lam);
    if (resid <= tol) break;
  }

  // exact polish on the detected active pattern
  std::vector<int> act;
  for (int j = 0; j < m; ++j)
    if (lam(j) > 1e-9 || std::fabs(A.row(j).dot(x) - b(j)) < 1e-7) act.push_back(j);
  std::vector<int> face(n, 0);
  for (int i = 0; i < n; ++i) {
    if (x(i) <= lo(i) + 1e-7) face[i] = 1;
    if (x(i) >= hi(i) - 1e-7) face[i] = 2;
  }
  if (act.size() <= 10u) {
    Eigen::MatrixXd Aact(act.size(), n);
    Eigen::VectorXd bact(act.size());
    for (std::size_t r = 0; r < act.size(); ++r) {
      Aact.row(r) = A.row(act[r]);
      bact(r) = b(act[r]);
    }
    try {
      // one-pattern enumeration: restrict the generic oracle to the
      // detected rows, then embed the multipliers back
      QpOptimum sub = qp_active_set_optimum(Q, c, Aact, bact, lo, hi);
      Eigen::VectorXd full = Eigen::VectorXd::Zero(m);
      for (std::size_t r = 0; r < act.size(); ++r) full(act[r]) = sub.mult(r);
      // accept only if the polish is feasible for the dropped rows
      if (m == 0 || (A * sub.x - b).maxCoeff() <= 1e-9) {
        sub.mult = full;
        return sub;
      }
    } catch (const std::exception&) {
      // fall through to the unpolished iterate
    }
  }
  QpOptimum out;
  out.x = x;
  out.mult = lam;
  out.cost = 0.5 * x.dot(Q * x) + c.dot(x);
  return out;
}

/// White-box convex QP plant: f = 1/2 x'Qx + c'x, g = Ax - b, optimum
/// computed at construction by the active-set enumeration.
inline Plant qp_plant(const Eigen::MatrixXd& Q, const Eigen::VectorXd& c,
                      const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                      ProjectableSet primal_set) {
  const int n = static_cast<int>(Q.rows());
  const int m = static_cast<int>(A.rows());
  if (Q.cols() != n || c.size() != n || (m > 0 && A.cols() != n) || b.size() != m)
    throw std::invalid_argument("qp_plant: dimension mismatch");
  if ((Q - Q.transpose()).norm() > 1e-12 * (1.0 + Q.norm()))
    throw std::invalid_argument("qp_plant: Q must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::invalid_argument("qp_plant: Q must be positive semidefinite");
  if (m > 10) throw std::invalid_argument("qp_plant: at most 10 inequality rows");

  Eigen::VectorXd lo, hi;
  if (!primal_set.box_bounds(lo, hi))
    throw std::invalid_argument("qp_plant: primal set must be box-like for the oracle");

  Plant p;
  p.n = n;
  p.m = m;
  p.primal_set = std::move(primal_set);
  p.eval = [Q, c, A, b](const Eigen::VectorXd& x, double) {
    Feedback fb;
    fb.f_val = 0.5 * x.dot(Q * x) + c.dot(x);
    fb.g_vals = A * x - b;
    return fb;
  };
  p.gradients = [Q, c, A, b](const Eigen::VectorXd& x, double) {
    Gradients g;
    g.grad_f = Q * x + c;
    g.grad_g = A;
    g.g = A * x - b;
    return g;
  };
  const QpOptimum opt = qp_active_set_optimum(Q, c, A, b, lo, hi);
  p.optimum = opt.x;
  p.multipliers = opt.mult;
  p.optimal_cost = opt.cost;
  return p;
}

struct TcpUtility {
  enum class Kind { Log, Sqrt };
  Kind kind = Kind::Log;
  double weight = 1.0;
};

/// Network utility maximization plant: maximize sum of concave source
/// utilities subject to link spare-capacity constraints (negated to a
/// minimization; g_l <= 0 means link l within capacity).
inline Plant tcp_plant(const Eigen::MatrixXd& incidence, const Eigen::VectorXd& capacities,
                       const std::vector<TcpUtility>& utilities, const Eigen::VectorXd& rate_lo,
                       const Eigen::VectorXd& rate_hi) {
  const int links = static_cast<int>(incidence.rows());
  const int sources = static_cast<int>(incidence.cols());
  if (capacities.size() != links || static_cast<int>(utilities.size()) != sources ||
      rate_lo.size() != sources || rate_hi.size() != sources)
    throw std::invalid_argument("tcp_plant: dimension mismatch");
  if (links > 0 && capacities.minCoeff() <= 0)
    throw std::invalid_argument("tcp_plant: capacities must be positive");
  for (int s = 0; s < sources; ++s) {
    if (incidence.col(s).maxCoeff() <= 0)
      throw std::invalid_argument("tcp_plant: source " + std::to_string(s) + " has empty path");
    if (utilities[s].kind == TcpUtility::Kind::Log && rate_lo(s) <= 0)
      throw std::invalid_argument("tcp_plant: log utility needs positive lower rate bound");
  }

  Plant p;
  p.n = sources;
  p.m = links;
  p.primal_set = ProjectableSet::box(rate_lo, rate_hi);
  const auto value = [utilities](const Eigen::VectorXd& r) {
    double f = 0.0;
    for (std::size_t s = 0; s < utilities.size(); ++s) {
      const double w = utilities[s].weight;
      f -= utilities[s].kind == TcpUtility::Kind::Log ? w * std::log(r(s))
                                                      : w * std::sqrt(r(s));
    }
    return f;
  };
  p.eval = [incidence, capacities, value](const Eigen::VectorXd& r, double) {
    Feedback fb;
    fb.f_val = value(r);
    fb.g_vals = incidence * r - capacities;
    return fb;
  };
  p.gradients = [incidence, capacities, utilities, value](const Eigen::VectorXd& r, double) {
    Gradients g;
    g.grad_f.resize(r.size());
    for (int s = 0; s < r.size(); ++s) {
      const double w = utilities[s].weight;
      g.grad_f(s) = utilities[s].kind == TcpUtility::Kind::Log
                        ? -w / r(s)
                        : -0.5 * w / std::sqrt(r(s));
    }
    g.grad_g = incidence;
    g.g = incidence * r - capacities;
    return g;
  };
  return p;
}

/// Steady-state building thermal plant: zone temperatures from a linear
/// heat balance, comfort band as asymptotic constraints, power as cost.
inline Plant thermal_plant(double ambient, const Eigen::MatrixXd& coupling,
                           const Eigen::VectorXd& efficiency, double t_low, double t_high,
                           const Eigen::VectorXd& power_caps) {
  const int n = static_cast<int>(coupling.rows());
  if (coupling.cols() != n || efficiency.size() != n || power_caps.size() != n)
    throw std::invalid_argument("thermal_plant: dimension mismatch");
  if (t_low >= t_high) throw std::invalid_argument("thermal_plant: empty comfort band");
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) off += std::fabs(coupling(i, j));
    if (std::fabs(coupling(i, i)) <= off)
      throw std::invalid_argument("thermal_plant: coupling not row-diagonally dominant");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(coupling);
  if (!lu.isInvertible()) throw std::invalid_argument("thermal_plant: singular coupling");
  const Eigen::MatrixXd gain = lu.inverse() * efficiency.asDiagonal();  // T = amb - gain p

  Plant p;
  p.n = n;
  p.m = 2 * n;
  p.primal_set = ProjectableSet::box(Eigen::VectorXd::Zero(n), power_caps);
  const auto build_eval = [n, gain, t_low, t_high](std::function<double(double)> amb) {
    return [n, gain, t_low, t_high, amb](const Eigen::VectorXd& pw, double t) {
      Feedback fb;
      fb.f_val = pw.sum();
      const Eigen::VectorXd temp =
          Eigen::VectorXd::Constant(n, amb(t)) - gain * pw;
      fb.g_vals.resize(2 * n);
      fb.g_vals.head(n) = Eigen::VectorXd::Constant(n, t_low) - temp;
      fb.g_vals.tail(n) = temp - Eigen::VectorXd::Constant(n, t_high);
      return fb;
    };
  };
  p.eval = build_eval([ambient](double) { return ambient; });
  p.gradients = [n, gain, p_eval = p.eval](const Eigen::VectorXd& pw, double t) {
    Gradients g;
    g.grad_f = Eigen::VectorXd::Ones(n);
    g.grad_g.resize(2 * n, n);
    g.grad_g.topRows(n) = gain;
    g.grad_g.bottomRows(n) = -gain;
    g.g = p_eval(pw, t).g_vals;
    return g;
  };
  p.schedule_hook = [ambient, coupling, efficiency, t_low, t_high, power_caps,
                     build_eval](const PiecewiseLinearSchedule& sched) {
    if (sched.dim() != 1)
      throw std::invalid_argument("thermal schedule must be one-dimensional (ambient shift)");
    Plant shifted =
        thermal_plant(ambient, coupling, efficiency, t_low, t_high, power_caps);
    shifted.eval = build_eval([ambient, sched](double t) { return ambient + sched.value(t)(0); });
    shifted.gradients = nullptr;  // time-varying; tests rebuild static instances per knot
    shifted.optimum.reset();
    shifted.optimal_cost.reset();
    return shifted;
  };
  return p;
}

/// Linear-sensitivity voltage plant: v(x, t) = v0(t) + R x with a quadratic
/// injection cost and box device capacities. Stands in for a full power
/// flow model at desk scale.
inline Plant ovc_plant(const Eigen::MatrixXd& R, const Eigen::VectorXd& v0, double v_low,
                       double v_high, double cost_coeff,
                       const std::vector<std::pair<double, double>>& device_bounds,
                       const PiecewiseLinearSchedule* schedule = nullptr) {
  const int nodes = static_cast<int>(R.rows());
  const int devices = static_cast<int>(R.cols());
  if (v0.size() != nodes || static_cast<int>(device_bounds.size()) != devices)
    throw std::invalid_argument("ovc_plant: dimension mismatch");
  if (!R.allFinite()) throw std::invalid_argument("ovc_plant: nonfinite sensitivity entries");

  std::vector<ProjectableSet> boxes;
  boxes.reserve(devices);
  for (const auto& [lo, hi] : device_bounds) boxes.push_back(ProjectableSet::box1d(lo, hi));

  Plant p;
  p.n = devices;
  p.m = 2 * nodes;
  p.primal_set = ProjectableSet::product(std::move(boxes));

  std::optional<PiecewiseLinearSchedule> sched_copy;
  if (schedule) sched_copy = *schedule;
  const auto v0_at = [v0, sched_copy](double t) -> Eigen::VectorXd {
    return sched_copy ? Eigen::VectorXd(v0 + sched_copy->value(t)) : v0;
  };
  p.eval = [R, v0_at, v_low, v_high, cost_coeff, nodes](const Eigen::VectorXd& x, double t) {
    Feedback fb;
    fb.f_val = cost_coeff * x.squaredNorm();
    const Eigen::VectorXd v = v0_at(t) + R * x;
    fb.g_vals.resize(2 * nodes);
    fb.g_vals.head(nodes) = Eigen::VectorXd::Constant(nodes, v_low) - v;
    fb.g_vals.tail(nodes) = v - Eigen::VectorXd::Constant(nodes, v_high);
    return fb;
  };
  p.gradients = [R, v0_at, v_low, v_high, cost_coeff, nodes](const Eigen::VectorXd& x,
                                                             double t) {
    Gradients g;
    g.grad_f = 2.0 * cost_coeff * x;
    g.grad_g.resize(2 * nodes, x.size());
    g.grad_g.topRows(nodes) = -R;
    g.grad_g.bottomRows(nodes) = R;
    const Eigen::VectorXd v = v0_at(t) + R * x;
    g.g.resize(2 * nodes);
    g.g.head(nodes) = Eigen::VectorXd::Constant(nodes, v_low) - v;
    g.g.tail(nodes) = v - Eigen::VectorXd::Constant(nodes, v_high);
    return g;
  };

  if (!schedule) {
    // static instance: white-box optimum from the dual-ascent oracle
    Eigen::VectorXd lo(devices), hi(devices);
    for (int i = 0; i < devices; ++i) {
      lo(i) = device_bounds[i].first;
      hi(i) = device_bounds[i].second;
    }
    Eigen::MatrixXd A(2 * nodes, devices);
    A.topRows(nodes) = -R;
    A.bottomRows(nodes) = R;
    Eigen::VectorXd b(2 * nodes);
    b.head(nodes) = v0 - Eigen::VectorXd::Constant(nodes, v_low);
    b.tail(nodes) = Eigen::VectorXd::Constant(nodes, v_high) - v0;
    const Eigen::MatrixXd Q = 2.0 * cost_coeff * Eigen::MatrixXd::Identity(devices, devices);
    const QpOptimum opt =
        box_qp_dual_ascent_optimum(Q, Eigen::VectorXd::Zero(devices), A, b, lo, hi);
    p.optimum = opt.x;
    p.multipliers = opt.mult;
    p.optimal_cost = opt.cost;
  }
  p.schedule_hook = [R, v0, v_low, v_high, cost_coeff,
                     device_bounds](const PiecewiseLinearSchedule& sched) {
    if (sched.dim() != R.rows())
      throw std::invalid_argument("ovc schedule dimension must match node count");
    return ovc_plant(R, v0, v_low, v_high, cost_coeff, device_bounds, &sched);
  };
  return p;
}

/// Wraps feedback with seeded multiplicative deviation noise on the
/// constraint channels (and optional additive cost noise). Additive state
/// noise is an integrator concern, not a feedback transform.
inline Plant with_noise(const Plant& plant, const NoiseModel& model) {
  if (model.kind == NoiseModel::Kind::AdditiveState)
    throw std::invalid_argument(
        "with_noise: additive state noise is applied by the integrator, not the plant");
  if (model.sigma < 0 || model.sigma_f < 0)
    throw std::invalid_argument("with_noise: negative sigma");
  Eigen::VectorXd baseline = model.baseline.size() == 0
                                 ? Eigen::VectorXd::Zero(plant.m)
                                 : model.baseline;
  if (baseline.size() != plant.m)
    throw std::invalid_argument("with_noise: baseline dimension mismatch");

  Plant noisy = plant;
  if (model.sigma == 0 && model.sigma_f == 0) return noisy;
  noisy.eval = [base = plant.eval, model, baseline,
                rng = CounterRng(model.seed)](const Eigen::VectorXd& x, double t) mutable {
    Feedback fb = base(x, t);
    if (model.sigma > 0)
      for (int j = 0; j < fb.g_vals.size(); ++j) {
        const double dev = fb.g_vals(j) - baseline(j);
        fb.g_vals(j) = baseline(j) + dev * (1.0 + model.sigma * rng.next_normal());
      }
    if (model.sigma_f > 0) fb.f_val += model.sigma_f * rng.next_normal();
    return fb;
  };
  return noisy;
}

/// Adds a piecewise-linear disturbance to the plant's exogenous input
/// (base voltage for the voltage plant, ambient for the thermal plant).
inline Plant with_schedule(const Plant& plant, const PiecewiseLinearSchedule& schedule) {
  if (!plant.schedule_hook)
    throw std::invalid_argument("with_schedule: plant has no exogenous disturbance input");
  return plant.schedule_hook(schedule);
}

}  // namespace pdzd
