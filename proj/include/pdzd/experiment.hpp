#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdzd/csv.hpp"
#include "pdzd/dynamics.hpp"
#include "pdzd/integrator.hpp"
#include "pdzd/multiagent.hpp"
#include "pdzd/plants.hpp"
#include "pdzd/probing.hpp"
#include "pdzd/random.hpp"

namespace pdzd {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// FNV-1a over the canonical (key-sorted) dump; recorded in every artifact.
inline std::uint64_t config_hash(const json& config) {
  const std::string dump = config.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct ExperimentOutcome {
  int exit_code = 0;  // 0 success, 2 validation refusal, 3 numerical abort
  std::string message;
  std::optional<Summary> summary;
  std::optional<double> estimator_error;
  std::optional<double> max_abs_sum_p;
  std::uint64_t hash = 0;
};

namespace detail {

inline Eigen::VectorXd vector_from(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from(const json& j) {
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(j.size(), j[0].size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j[0].size()) throw std::invalid_argument("ragged matrix in config");
    for (std::size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline SignalKind kind_from(const std::string& name) {
  if (name == "sinusoid" || name == "sin") return SignalKind::Sinusoid;
  if (name == "square") return SignalKind::Square;
  if (name == "triangle") return SignalKind::Triangle;
  throw std::invalid_argument("unknown probing signal kind: " + name);
}

}  // namespace detail

/// Tagged-variant set schema: {"type": "box" | "ball" | "halfspaces" |
/// "nonnegative_orthant" | "capped_orthant" | "product", ...}.
inline ProjectableSet set_from_config(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "box")
    return ProjectableSet::box(detail::vector_from(j.at("lower")),
                               detail::vector_from(j.at("upper")));
  if (type == "ball")
    return ProjectableSet::ball(detail::vector_from(j.at("center")),
                                j.at("radius").get<double>());
  if (type == "halfspaces")
    return ProjectableSet::halfspaces(detail::matrix_from(j.at("rows")),
                                      detail::vector_from(j.at("offsets")));
  if (type == "nonnegative_orthant")
    return ProjectableSet::nonnegative_orthant(j.at("dim").get<int>());
  if (type == "capped_orthant")
    return ProjectableSet::capped_orthant(j.at("dim").get<int>(), j.at("cap").get<double>());
  if (type == "product") {
    std::vector<ProjectableSet> factors;
    for (const auto& f : j.at("factors")) factors.push_back(set_from_config(f));
    return ProjectableSet::product(std::move(factors));
  }
  throw std::invalid_argument("unknown set type: " + type);
}

inline ProbingPlan plan_from_config(const json& j, std::vector<std::string>& warnings) {
  std::vector<Rational> kappa;
  for (const auto& entry : j.at("kappa")) {
    if (entry.is_string()) {
      kappa.push_back(Rational::parse(entry.get<std::string>()));
    } else {
      const double value = entry.get<double>();
      const Rational r = Rational::from_double(value);
      if (std::fabs(r.value() - value) > 1e-12 * (1.0 + std::fabs(value)))
        warnings.push_back("kappa " + std::to_string(value) + " rationalized to " + r.str());
      else
        warnings.push_back("decimal kappa " + std::to_string(value) + " ingested as exact " +
                           r.str());
      kappa.push_back(r);
    }
  }
  return ProbingPlan(detail::kind_from(j.at("kind").get<std::string>()),
                     j.at("eps_a").get<double>(), j.at("eps_omega").get<double>(),
                     std::move(kappa));
}

inline NoiseModel noise_from_config(const json& j) {
  NoiseModel model;
  const std::string type = j.value("type", "multiplicative");
  if (type == "multiplicative") {
    model.kind = NoiseModel::Kind::MultiplicativeDeviation;
    model.sigma = j.value("sigma", 0.0);
    model.sigma_f = j.value("sigma_f", 0.0);
    if (j.contains("baseline")) model.baseline = detail::vector_from(j.at("baseline"));
  } else if (type == "additive_state") {
    model.kind = NoiseModel::Kind::AdditiveState;
    model.bound = j.at("bound").get<double>();
  } else {
    throw std::invalid_argument("unknown noise type: " + type);
  }
  model.seed = j.value("seed", 0ull);
  return model;
}

inline PiecewiseLinearSchedule schedule_from_csv(const std::string& path) {
  const Eigen::MatrixXd table = read_matrix_csv(path);
  if (table.cols() < 2)
    throw std::invalid_argument("schedule CSV needs a time column and at least one value");
  std::vector<double> times;
  std::vector<Eigen::VectorXd> values;
  for (int r = 0; r < table.rows(); ++r) {
    times.push_back(table(r, 0));
    values.push_back(table.row(r).tail(table.cols() - 1).transpose());
  }
  return PiecewiseLinearSchedule(std::move(times), std::move(values));
}

inline Plant plant_from_config(const json& j, const fs::path& base_dir) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "qp") {
    const ProjectableSet feasible =
        j.contains("primal_set")
            ? set_from_config(j.at("primal_set"))
            : ProjectableSet::box(detail::vector_from(j.at("box_lower")),
                                  detail::vector_from(j.at("box_upper")));
    return qp_plant(detail::matrix_from(j.at("Q")), detail::vector_from(j.at("c")),
                    j.contains("A") ? detail::matrix_from(j.at("A"))
                                    : Eigen::MatrixXd(0, j.at("c").size()),
                    j.contains("b") ? detail::vector_from(j.at("b")) : Eigen::VectorXd(0),
                    feasible);
  }
  if (type == "tcp") {
    std::vector<TcpUtility> utilities;
    for (const auto& u : j.at("utilities")) {
      TcpUtility util;
      const std::string kind = u.value("kind", "log");
      util.kind = kind == "sqrt" ? TcpUtility::Kind::Sqrt : TcpUtility::Kind::Log;
      util.weight = u.value("weight", 1.0);
      utilities.push_back(util);
    }
    return tcp_plant(detail::matrix_from(j.at("incidence")),
                     detail::vector_from(j.at("capacities")), utilities,
                     detail::vector_from(j.at("rate_lower")),
                     detail::vector_from(j.at("rate_upper")));
  }
  if (type == "thermal") {
    const auto comfort = j.at("comfort");
    return thermal_plant(j.at("ambient").get<double>(), detail::matrix_from(j.at("coupling")),
                         detail::vector_from(j.at("efficiency")), comfort[0].get<double>(),
                         comfort[1].get<double>(), detail::vector_from(j.at("power_caps")));
  }
  if (type == "ovc") {
    Eigen::MatrixXd sensitivity;
    if (j.contains("sensitivity_csv"))
      sensitivity = read_matrix_csv((base_dir / j.at("sensitivity_csv").get<std::string>()).string());
    else
      sensitivity = detail::matrix_from(j.at("sensitivity"));
    std::vector<std::pair<double, double>> bounds;
    for (const auto& bb : j.at("device_bounds"))
      bounds.emplace_back(bb[0].get<double>(), bb[1].get<double>());
    return ovc_plant(sensitivity, detail::vector_from(j.at("v0")),
                     j.value("v_low", 0.95), j.value("v_high", 1.05), j.value("cost_coeff", 0.1),
                     bounds);
  }
  throw std::invalid_argument("unknown plant type: " + type);
}

inline SolverParams params_from_config(const json& j, int m) {
  SolverParams p;
  p.k_x = j.value("k_x", 50.0);
  p.k_lambda = j.value("k_lambda", 10.0);
  p.alpha_x = j.value("alpha_x", 0.001);
  p.alpha_lambda = j.value("alpha_lambda", 0.001);
  p.eps_g = j.value("eps_g", 0.025);
  p.delta_reg = j.value("delta_reg", 0.0);
  if (j.contains("dual_cap") && !j.at("dual_cap").is_null())
    p.dual_set = ProjectableSet::capped_orthant(m, j.at("dual_cap").get<double>());
  else
    p.dual_set = ProjectableSet::nonnegative_orthant(m);
  p.check(m);
  return p;
}

struct SummaryRow {
  std::uint64_t hash = 0;
  std::string status;
  Summary summary;
  std::optional<double> estimator_error;
  std::optional<double> max_abs_sum_p;
};

inline void write_summary_csv(const fs::path& path, const SummaryRow& row) {
  std::ofstream out(path);
  out << "config_hash,status,final_cost,final_violation,settling_time,time_in_violation,"
         "mean_abs_tracking_error,nu_measured,estimator_error,max_abs_sum_p\n";
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(row.hash));
  out << hash_buf << ',' << row.status << ',' << format_double(row.summary.final_cost) << ','
      << format_double(row.summary.final_violation) << ','
      << format_double(row.summary.settling_time) << ','
      << format_double(row.summary.time_in_violation) << ',';
  if (row.summary.mean_abs_tracking_error)
    out << format_double(*row.summary.mean_abs_tracking_error);
  out << ',';
  if (row.summary.nu_measured) out << format_double(*row.summary.nu_measured);
  out << ',';
  if (row.estimator_error) out << format_double(*row.estimator_error);
  out << ',';
  if (row.max_abs_sum_p) out << format_double(*row.max_abs_sum_p);
  out << '\n';
}

/// Runs one configured experiment. Writes validation.txt always; writes
/// trajectory.csv and summary.csv only when validation passes. Exit codes:
/// 0 success, 2 validation refusal, 3 numerical abort.
inline ExperimentOutcome run_experiment(const json& config, const fs::path& out_dir,
                                        bool allow_unorthogonal = false,
                                        const fs::path& base_dir = ".") {
  ExperimentOutcome outcome;
  outcome.hash = config_hash(config);
  fs::create_directories(out_dir);
  std::ostringstream validation;
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(outcome.hash));
  validation << "config_hash: " << hash_buf << "\n";

  const auto refuse = [&](const std::string& why) {
    validation << "refused: " << why << "\n";
    std::ofstream(out_dir / "validation.txt") << validation.str();
    outcome.exit_code = 2;
    outcome.message = why;
    return outcome;
  };

  try {
    const std::string dynamics = config.at("dynamics").get<std::string>();
    const bool zeroth_order = dynamics == "ppdzd" || dynamics == "dppdzd";
    const bool discontinuous = dynamics == "dppdgd" || dynamics == "dppdzd";
    if (!zeroth_order && dynamics != "ppdgd" && dynamics != "dppdgd")
      return refuse("unknown dynamics: " + dynamics);

    Plant plant = plant_from_config(config.at("plant"), base_dir);
    const std::uint64_t seed = config.value("seed", 0ull);

    if (config.contains("schedule_csv")) {
      const auto sched = schedule_from_csv(
          (base_dir / config.at("schedule_csv").get<std::string>()).string());
      plant = with_schedule(plant, sched);
      const auto& integ = config.at("integration");
      if (sched.t_front() > integ.value("t0", 0.0) ||
          sched.t_back() < integ.at("t_end").get<double>())
        return refuse("schedule does not cover the integration horizon");
    }

    std::optional<NoiseModel> state_noise;
    if (config.contains("noise")) {
      NoiseModel model = noise_from_config(config.at("noise"));
      model.seed = CounterRng::derive(seed, model.seed);
      if (model.kind == NoiseModel::Kind::MultiplicativeDeviation)
        plant = with_noise(plant, model);
      else
        state_noise = model;
    }

    // probing plan and orthogonality gate
    std::optional<ProbingPlan> plan;
    std::vector<std::string> plan_warnings;
    if (config.contains("probing")) {
      plan = plan_from_config(config.at("probing"), plan_warnings);
      for (const auto& w : plan_warnings) validation << "note: " << w << "\n";
      const OrthogonalityReport report = validate_orthogonality(*plan);
      validation << "probing: " << (report.ok ? "orthogonality ok" : "orthogonality NOT clean")
                 << ", admissible per harmonic rules: " << (report.admissible ? "yes" : "no")
                 << "\n";
      for (const auto& v : report.violations) validation << "violation: " << v << "\n";
      for (const auto& f : report.quadrature_flags) validation << "flag: " << f << "\n";
      if (!report.admissible && !allow_unorthogonal)
        return refuse("probing plan violates the harmonic admissibility rules");
    }
    if (zeroth_order) {
      if (!plan) return refuse("zeroth-order dynamics need a probing plan");
      if (plan->size() != plant.n)
        return refuse("probing plan size does not match the plant dimension");
    }
    if (!zeroth_order && !plant.has_gradients())
      return refuse("gradient-based dynamics need a white-box plant");

    // integration setup
    const auto& integ = config.at("integration");
    IntegrationConfig cfg;
    cfg.method = discontinuous || integ.value("method", "rk4") == std::string("euler")
                     ? IntegrationConfig::Method::Euler
                     : IntegrationConfig::Method::RK4;
    cfg.t0 = integ.value("t0", 0.0);
    cfg.t_end = integ.at("t_end").get<double>();
    cfg.step = integ.contains("step") && !integ.at("step").is_null()
                   ? integ.at("step").get<double>()
                   : (plan ? default_step(*plan) : 1e-3);
    cfg.record_every = integ.contains("record_every") && !integ.at("record_every").is_null()
                           ? integ.at("record_every").get<int>()
                           : default_record_every(cfg.t0, cfg.t_end, cfg.step);
    cfg.reproject = integ.value("reproject", true);
    if (plan && cfg.step > max_step_for_plan(*plan) * (1.0 + 1e-12))
      return refuse("step exceeds the dither resolution bound");

    SolverParams params = params_from_config(config.value("params", json::object()), plant.m);

    // multiagent validation (graph report goes into validation.txt)
    std::optional<CommGraph> graph;
    std::optional<AgentLayout> layout;
    std::string ma_mode;
    if (config.contains("multiagent")) {
      const auto& ma = config.at("multiagent");
      ma_mode = ma.value("mode", "broadcast");
      std::vector<int> dims;
      for (const auto& d : ma.at("dims")) dims.push_back(d.get<int>());
      std::vector<std::vector<int>> members;
      for (const auto& row : ma.at("members")) {
        std::vector<int> s;
        for (const auto& i : row) s.push_back(i.get<int>());
        members.push_back(std::move(s));
      }
      std::vector<int> owner;
      if (ma.contains("owner"))
        for (const auto& o : ma.at("owner")) owner.push_back(o.get<int>());
      Eigen::VectorXd lo, hi;
      if (!plant.primal_set.box_bounds(lo, hi))
        return refuse("multiagent mode needs a box-like feasible set");
      std::vector<ProjectableSet> sets;
      int at = 0;
      for (const int d : dims) {
        sets.push_back(ProjectableSet::box(lo.segment(at, d), hi.segment(at, d)));
        at += d;
      }
      if (at != plant.n) return refuse("agent dims do not sum to the plant dimension");
      layout = AgentLayout(dims, std::move(sets), members, owner);
      const double eps_p = ma.value("eps_p", 0.05);
      if (ma.contains("graph_csv"))
        graph = CommGraph::from_edge_list_csv(
            (base_dir / ma.at("graph_csv").get<std::string>()).string(),
            static_cast<int>(dims.size()), eps_p);
      else if (ma.contains("graph"))
        graph = CommGraph(detail::matrix_from(ma.at("graph").at("adjacency")), eps_p);
      if (graph) {
        const GraphReport gr = check_graph(*graph);
        validation << "graph: balance residual " << gr.balance_residual
                   << ", strongly connected: " << (gr.strongly_connected ? "yes" : "no")
                   << ", ok: " << (gr.ok ? "yes" : "no") << "\n";
        if (ma_mode == "consensus" && !gr.ok)
          return refuse("consensus mode needs a weight-balanced strongly connected graph");
      } else if (ma_mode == "consensus") {
        return refuse("consensus mode needs a communication graph");
      }
      if (!zeroth_order) return refuse("multiagent modes run the zeroth-order dynamics");
    }

    validation << "validated: ok\n";
    std::ofstream(out_dir / "validation.txt") << validation.str();

    // build and run the closed loop
    const ProjectableSet state_set =
        zeroth_order ? plant.primal_set.shrink(plan->eps_a()) : plant.primal_set;
    SolverState init = SolverState::zero(plant.n, plant.m);
    if (config.contains("initial_x"))
      init.x = detail::vector_from(config.at("initial_x"));
    init.x = state_set.project_point(init.x);

    const double nu = config.contains("metrics") ? config.at("metrics").value("nu", 0.05) : 0.05;
    const double viol_tol =
        config.contains("metrics") ? config.at("metrics").value("viol_tol", 1e-8) : 1e-8;

    Trajectory traj;
    if (layout) {
      const AgentLayout run_layout = layout->shrunken(plan->eps_a());
      // separable local costs from the plant description
      const auto& pj = config.at("plant");
      const std::string ptype = pj.at("type").get<std::string>();
      std::function<Eigen::VectorXd(const Eigen::VectorXd&)> local_costs;
      if (ptype == "ovc") {
        const double coeff = pj.value("cost_coeff", 0.1);
        const AgentLayout lay = *layout;
        local_costs = [coeff, lay](const Eigen::VectorXd& xhat) {
          Eigen::VectorXd f(lay.agents());
          for (int i = 0; i < lay.agents(); ++i)
            f(i) = coeff * xhat.segment(lay.offset(i), lay.dim(i)).squaredNorm();
          return f;
        };
      } else if (ptype == "qp") {
        const Eigen::MatrixXd Q = detail::matrix_from(pj.at("Q"));
        const Eigen::VectorXd c = detail::vector_from(pj.at("c"));
        const AgentLayout lay = *layout;
        for (int i = 0; i < lay.agents(); ++i)
          for (int r = 0; r < plant.n; ++r)
            for (int s = 0; s < plant.n; ++s) {
              const bool r_in = r >= lay.offset(i) && r < lay.offset(i) + lay.dim(i);
              const bool s_in = s >= lay.offset(i) && s < lay.offset(i) + lay.dim(i);
              if (r_in != s_in && Q(r, s) != 0.0)
                throw std::invalid_argument("qp cost is not separable over the agent layout");
            }
        local_costs = [Q, c, lay](const Eigen::VectorXd& xhat) {
          Eigen::VectorXd f(lay.agents());
          for (int i = 0; i < lay.agents(); ++i) {
            const auto xb = xhat.segment(lay.offset(i), lay.dim(i));
            f(i) = 0.5 * xb.dot(Q.block(lay.offset(i), lay.offset(i), lay.dim(i), lay.dim(i)) * xb) +
                   c.segment(lay.offset(i), lay.dim(i)).dot(xb);
          }
          return f;
        };
      } else {
        return refuse("multiagent mode supports qp and ovc plants");
      }

      if (ma_mode == "consensus") {
        MultiAgentState ms;
        ms.core = init;
        ms.p = Eigen::VectorXd::Zero(run_layout.agents());
        Plant& plant_ref = plant;
        const AgentLayout lay = *layout;
        const ConsensusEvalFn eval = [&plant_ref, local_costs, lay](const Eigen::VectorXd& xhat,
                                                                    double t) {
          const Feedback fb = plant_ref.eval(xhat, t);
          ConsensusFeedback out;
          out.local_costs = local_costs(xhat);
          out.local_g.resize(lay.agents());
          std::vector<std::vector<double>> rows(lay.agents());
          for (int jrow = 0; jrow < fb.g_vals.size(); ++jrow)
            rows[lay.owner(jrow)].push_back(fb.g_vals(jrow));
          for (int i = 0; i < lay.agents(); ++i) {
            out.local_g[i].resize(rows[i].size());
            for (std::size_t r = 0; r < rows[i].size(); ++r) out.local_g[i](r) = rows[i][r];
          }
          return out;
        };
        const ConsensusTrajectory ctraj = integrate_consensus(
            *graph, run_layout, ms, eval, cfg, params, *plan, discontinuous);
        outcome.max_abs_sum_p = ctraj.max_abs_sum_p;
        // re-expressed as a plain trajectory for the standard artifacts;
        // the feedback column is re-measured at the recorded inputs
        traj.record_dt = cfg.step * cfg.record_every;
        for (std::size_t k = 0; k < ctraj.size(); ++k) {
          traj.times.push_back(ctraj.times[k]);
          traj.states.push_back(ctraj.states[k].core);
          traj.inputs.push_back(ctraj.inputs[k]);
          const Feedback fb = plant.eval(ctraj.inputs[k], ctraj.times[k]);
          traj.feedback.push_back(fb);
          traj.cost.push_back(fb.f_val);
          traj.max_violation.push_back(
              fb.g_vals.size() ? std::max(0.0, fb.g_vals.maxCoeff()) : 0.0);
          if (plant.optimum)
            traj.dist_to_ref.push_back((ctraj.states[k].core.x - *plant.optimum).norm());
        }
        traj.final_state = ctraj.final_state.core;
        traj.final_time = ctraj.final_time;
        traj.aborted = ctraj.aborted;
        traj.abort_reason = ctraj.abort_reason;
      } else {
        Plant& plant_ref = plant;
        const DecentralizedEvalFn eval = [&plant_ref, local_costs](const Eigen::VectorXd& xhat,
                                                                   double t) {
          const Feedback fb = plant_ref.eval(xhat, t);
          DecentralizedFeedback out;
          out.local_costs = local_costs(xhat);
          out.g = fb.g_vals;
          return out;
        };
        traj = integrate_decentralized(run_layout, init, eval, cfg, params, *plan);
        if (plant.optimum)
          for (const auto& st : traj.states)
            traj.dist_to_ref.push_back((st.x - *plant.optimum).norm());
      }
    } else {
      LoopOptions loop;
      loop.primal_set = state_set;
      loop.dual_set = params.dual_set;
      loop.state_noise = state_noise;
      if (plant.optimum) loop.reference = *plant.optimum;
      if (zeroth_order) loop.plan = *plan;

      RhsFn rhs;
      const ProjectableSet rhs_set = state_set;
      if (dynamics == "ppdgd")
        rhs = [&plant, params, rhs_set](const SolverState& s, const Feedback&, double t) {
          return ppdgd_rhs(s, plant.gradients(s.x, t), params, rhs_set);
        };
      else if (dynamics == "dppdgd")
        rhs = [&plant, params, rhs_set](const SolverState& s, const Feedback&, double t) {
          return dppdgd_rhs(s, plant.gradients(s.x, t), params, rhs_set);
        };
      else if (dynamics == "ppdzd")
        rhs = [params, plan, rhs_set](const SolverState& s, const Feedback& fb, double t) {
          return ppdzd_rhs(s, fb, t, params, *plan, rhs_set);
        };
      else
        rhs = [params, plan, rhs_set](const SolverState& s, const Feedback& fb, double t) {
          return dppdzd_rhs(s, fb, t, params, *plan, rhs_set);
        };

      traj = integrate(rhs, init, plant, cfg, loop);
    }

    // artifacts
    {
      std::ofstream out(out_dir / "trajectory.csv");
      out << "# config_hash=" << hash_buf << "\n";
      write_trajectory_csv(traj, out);
    }
    SummaryRow row;
    row.hash = outcome.hash;
    row.status = traj.aborted ? "aborted" : "ok";
    if (traj.size() > 0)
      row.summary = summarize(traj, nu,
                              plant.optimum ? std::optional(*plant.optimum) : std::nullopt,
                              viol_tol);
    if (!traj.aborted && plant.has_gradients() && plan && !layout) {
      Plant& plant_ref = plant;
      const Gradients g = plant.gradients(traj.final_state.x, traj.final_time);
      const Eigen::VectorXd est = gradient_estimate_oracle(
          [&plant_ref, &traj](const Eigen::VectorXd& xhat) {
            return plant_ref.eval(xhat, traj.final_time);
          },
          traj.final_state.x, traj.final_state.lambda, *plan);
      row.estimator_error =
          (est - (g.grad_f + g.grad_g.transpose() * traj.final_state.lambda)).norm();
      outcome.estimator_error = row.estimator_error;
    }
    row.max_abs_sum_p = outcome.max_abs_sum_p;
    write_summary_csv(out_dir / "summary.csv", row);
    outcome.summary = row.summary;

    if (traj.aborted) {
      outcome.exit_code = 3;
      outcome.message = traj.abort_reason;
    }
    return outcome;
  } catch (const std::exception& e) {
    return refuse(e.what());
  }
}

/// Applies dotted-path overrides ("probing.eps_a" -> /probing/eps_a).
inline json with_override(json config, const std::string& dotted, const json& value) {
  std::string pointer = "/";
  for (const char c : dotted) pointer += c == '.' ? '/' : c;
  config[json::json_pointer(pointer)] = value;
  return config;
}

struct SweepPoint {
  int index = 0;
  json overrides;
  ExperimentOutcome outcome;
};

/// Cartesian-product sweep; per-point failures are recorded and the sweep
/// continues. Seeds are derived from (base seed, point index).
inline std::vector<SweepPoint> run_sweep(const json& base_config, const json& grid,
                                         const fs::path& out_dir, int jobs = 1,
                                         bool allow_unorthogonal = false,
                                         const fs::path& base_dir = ".") {
  std::vector<std::string> names;
  std::vector<std::vector<json>> values;
  for (const auto& [key, list] : grid.items()) {
    names.push_back(key);
    values.emplace_back(list.begin(), list.end());
  }
  long total = 1;
  for (const auto& v : values) total *= static_cast<long>(v.size());

  std::vector<SweepPoint> points(total);
  const std::uint64_t base_seed = base_config.value("seed", 0ull);
  for (long idx = 0; idx < total; ++idx) {
    points[idx].index = static_cast<int>(idx);
    long rem = idx;
    json overrides = json::object();
    for (std::size_t d = 0; d < names.size(); ++d) {
      overrides[names[d]] = values[d][rem % values[d].size()];
      rem /= static_cast<long>(values[d].size());
    }
    points[idx].overrides = std::move(overrides);
  }

  fs::create_directories(out_dir);
  std::atomic<long> next{0};
  const auto worker = [&]() {
    for (;;) {
      const long idx = next.fetch_add(1);
      if (idx >= total) return;
      json config = base_config;
      for (const auto& [key, value] : points[idx].overrides.items())
        config = with_override(std::move(config), key, value);
      config["seed"] = CounterRng::derive(base_seed, static_cast<std::uint64_t>(idx));
      char name[32];
      std::snprintf(name, sizeof(name), "point_%03ld", idx);
      points[idx].outcome =
          run_experiment(config, out_dir / name, allow_unorthogonal, base_dir);
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::ofstream out(out_dir / "sweep_summary.csv");
  char hash_buf[32];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(config_hash(base_config)));
  out << "# base_config_hash=" << hash_buf << "\n";
  out << "point";
  for (const auto& n : names) out << ',' << n;
  out << ",status,exit,final_cost,final_violation,settling_time,time_in_violation,"
         "nu_measured,estimator_error\n";
  for (const auto& p : points) {
    out << p.index;
    for (const auto& n : names) out << ',' << p.overrides.at(n).dump();
    const bool ok = p.outcome.exit_code == 0;
    out << ',' << (p.outcome.exit_code == 0 ? "ok" : p.outcome.exit_code == 2 ? "refused" : "aborted")
        << ',' << p.outcome.exit_code;
    if (ok && p.outcome.summary) {
      const Summary& s = *p.outcome.summary;
      out << ',' << format_double(s.final_cost) << ',' << format_double(s.final_violation)
          << ',' << format_double(s.settling_time) << ','
          << format_double(s.time_in_violation) << ',';
      if (s.nu_measured) out << format_double(*s.nu_measured);
      out << ',';
      if (p.outcome.estimator_error) out << format_double(*p.outcome.estimator_error);
    } else {
      out << ",,,,,,";
    }
    out << '\n';
  }
  return points;
}

}  // namespace pdzd
