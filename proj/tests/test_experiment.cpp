#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pdzd/experiment.hpp"
#include "support.hpp"

using namespace pdzd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("pdzd_test_" + tag);
  fs::remove_all(dir);
  return dir;
}

json small_qp_config() {
  json config;
  config["seed"] = 7;
  config["dynamics"] = "ppdzd";
  config["params"] = {{"k_x", 50.0}, {"k_lambda", 10.0}, {"alpha_x", 0.001},
                      {"alpha_lambda", 0.001}, {"eps_g", 0.025}};
  config["probing"] = {{"kind", "square"}, {"eps_a", 0.025}, {"eps_omega", 0.025},
                       {"kappa", {"27/10", "21/5"}}};
  config["plant"] = {{"type", "qp"},
                     {"Q", {{0.2, 0.0}, {0.0, 0.2}}},
                     {"c", {-0.04, 0.02}},
                     {"A", {{-0.5, -0.5}}},
                     {"b", {0.4}},
                     {"box_lower", {-2.0, -2.0}},
                     {"box_upper", {2.5, 2.5}}};
  config["integration"] = {{"t0", 0.0}, {"t_end", 0.02}};
  return config;
}

json staircase_ovc_config() {
  const auto inst = testsupport::ovc_instance();
  json sens = json::array();
  for (int r = 0; r < inst.sensitivity.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < inst.sensitivity.cols(); ++c) row.push_back(inst.sensitivity(r, c));
    sens.push_back(row);
  }
  json v0 = json::array();
  for (int r = 0; r < inst.v0_dropped.size(); ++r) v0.push_back(inst.v0_dropped(r));
  json bounds = json::array();
  for (const auto& [lo, hi] : inst.device_bounds) bounds.push_back({lo, hi});

  json config;
  config["seed"] = 1;
  config["dynamics"] = "ppdzd";
  config["probing"] = {{"kind", "square"}, {"eps_a", 0.025}, {"eps_omega", 0.025},
                       {"kappa", {2.7, 4.2, 5.7, 7.2, 8.7, 10.2, 11.7}}};
  config["plant"] = {{"type", "ovc"}, {"sensitivity", sens}, {"v0", v0},
                     {"v_low", 0.95}, {"v_high", 1.05}, {"cost_coeff", 0.1},
                     {"device_bounds", bounds}};
  config["integration"] = {{"t0", 0.0}, {"t_end", 0.01}};
  return config;
}

}  // namespace

TEST_CASE("a one-step horizon produces a single-record trajectory") {
  json config = small_qp_config();
  const ProbingPlan plan(SignalKind::Square, 0.025, 0.025,
                         {Rational(27, 10), Rational(21, 5)});
  const double h = default_step(plan);
  config["integration"]["t_end"] = h;
  config["integration"]["step"] = h;
  const fs::path dir = fresh_dir("one_step");
  const auto outcome = run_experiment(config, dir);
  REQUIRE(outcome.exit_code == 0);
  const std::string traj = slurp(dir / "trajectory.csv");
  // comment line + header + exactly one record
  REQUIRE(std::count(traj.begin(), traj.end(), '\n') == 3);
}

TEST_CASE("the staircase voltage config validates and runs") {
  const json config = staircase_ovc_config();
  const fs::path dir = fresh_dir("ovc");
  const auto outcome = run_experiment(config, dir);
  REQUIRE(outcome.exit_code == 0);
  const std::string validation = slurp(dir / "validation.txt");
  REQUIRE(validation.find("admissible per harmonic rules: yes") != std::string::npos);
  REQUIRE(validation.find("validated: ok") != std::string::npos);
  // decimals were ingested as exact fractions, with a note
  REQUIRE(validation.find("27/10") != std::string::npos);
  REQUIRE(fs::exists(dir / "summary.csv"));
}

TEST_CASE("an odd-harmonic square plan is refused before any run artifacts") {
  json config = small_qp_config();
  config["probing"]["kappa"] = {"1", "3"};
  const fs::path dir = fresh_dir("refused");
  const auto outcome = run_experiment(config, dir);
  REQUIRE(outcome.exit_code == 2);
  REQUIRE(fs::exists(dir / "validation.txt"));
  REQUIRE_FALSE(fs::exists(dir / "trajectory.csv"));
  REQUIRE_FALSE(fs::exists(dir / "summary.csv"));
  const std::string validation = slurp(dir / "validation.txt");
  REQUIRE(validation.find("odd-harmonic pair") != std::string::npos);
  REQUIRE(validation.find("refused") != std::string::npos);

  // the same plan passes with the explicit override
  const fs::path dir2 = fresh_dir("allowed");
  const auto forced = run_experiment(config, dir2, /*allow_unorthogonal=*/true);
  REQUIRE(forced.exit_code == 0);
  REQUIRE(fs::exists(dir2 / "trajectory.csv"));
}

TEST_CASE("invalid configs are refused with a reason") {
  json config = small_qp_config();
  config["dynamics"] = "newton";
  const fs::path dir = fresh_dir("bad_dynamics");
  REQUIRE(run_experiment(config, dir).exit_code == 2);

  json mismatched = small_qp_config();
  mismatched["probing"]["kappa"] = {"27/10"};  // plan size 1, plant size 2
  REQUIRE(run_experiment(mismatched, fresh_dir("plan_dims")).exit_code == 2);

  json bad_step = small_qp_config();
  bad_step["integration"]["step"] = 1.0;  // underresolves the dither
  REQUIRE(run_experiment(bad_step, fresh_dir("bad_step")).exit_code == 2);
}

TEST_CASE("reruns of one config hash produce byte-identical artifacts") {
  json config = small_qp_config();
  config["integration"]["t_end"] = 0.05;
  const fs::path dir_a = fresh_dir("replay_a");
  const fs::path dir_b = fresh_dir("replay_b");
  REQUIRE(run_experiment(config, dir_a).exit_code == 0);
  REQUIRE(run_experiment(config, dir_b).exit_code == 0);
  REQUIRE(slurp(dir_a / "trajectory.csv") == slurp(dir_b / "trajectory.csv"));
  REQUIRE(slurp(dir_a / "summary.csv") == slurp(dir_b / "summary.csv"));
  REQUIRE(config_hash(config) == config_hash(json::parse(config.dump())));
}

TEST_CASE("an empty grid sweeps a single base point") {
  json config = small_qp_config();
  const fs::path dir = fresh_dir("sweep_empty");
  const auto points = run_sweep(config, json::object(), dir);
  REQUIRE(points.size() == 1);
  REQUIRE(points[0].outcome.exit_code == 0);
  REQUIRE(fs::exists(dir / "point_000" / "trajectory.csv"));
  REQUIRE(fs::exists(dir / "sweep_summary.csv"));
}

TEST_CASE("noise level sweep produces one row per level") {
  json config = small_qp_config();
  config["noise"] = {{"type", "multiplicative"}, {"sigma", 0.0}, {"seed", 3}};
  json grid;
  grid["noise.sigma"] = {0.0, 0.1, 0.3, 0.5};
  const fs::path dir = fresh_dir("sweep_sigma");
  const auto points = run_sweep(config, grid, dir, /*jobs=*/2);
  REQUIRE(points.size() == 4);
  for (const auto& p : points) REQUIRE(p.outcome.exit_code == 0);
  const std::string csv = slurp(dir / "sweep_summary.csv");
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 6);  // hash + header + 4 rows
}

TEST_CASE("amplitude sweep shows monotone estimator error on a curved plant") {
  json config;
  config["seed"] = 5;
  config["dynamics"] = "ppdzd";
  config["params"] = {{"k_x", 1.0}, {"k_lambda", 1.0}, {"alpha_x", 0.01},
                      {"alpha_lambda", 0.01}, {"eps_g", 0.05}};
  config["probing"] = {{"kind", "sinusoid"}, {"eps_a", 0.05}, {"eps_omega", 0.01},
                       {"kappa", {"1", "2"}}};
  config["plant"] = {{"type", "tcp"},
                     {"incidence", {{1, 1}}},
                     {"capacities", {1.0}},
                     {"utilities", {{{"kind", "log"}, {"weight", 1.0}},
                                     {{"kind", "log"}, {"weight", 0.7}}}},
                     {"rate_lower", {0.2, 0.2}},
                     {"rate_upper", {2.0, 2.0}}};
  config["integration"] = {{"t0", 0.0}, {"t_end", 0.02}};

  json grid;
  grid["probing.eps_a"] = {0.05, 0.025, 0.0125};
  const fs::path dir = fresh_dir("sweep_eps");
  const auto points = run_sweep(config, grid, dir);
  REQUIRE(points.size() == 3);
  std::vector<double> errs;
  for (const auto& p : points) {
    REQUIRE(p.outcome.exit_code == 0);
    REQUIRE(p.outcome.estimator_error.has_value());
    errs.push_back(*p.outcome.estimator_error);
  }
  REQUIRE(errs[1] < errs[0]);
  REQUIRE(errs[2] < errs[1]);
}

TEST_CASE("tagged set schema covers every variant") {
  REQUIRE(set_from_config(json::parse(R"({"type":"box","lower":[0,0],"upper":[1,1]})")).dim() ==
          2);
  REQUIRE(set_from_config(json::parse(R"({"type":"ball","center":[0,0,0],"radius":2.0})"))
              .dim() == 3);
  const auto hs = set_from_config(
      json::parse(R"({"type":"halfspaces","rows":[[1,1],[-1,0]],"offsets":[1,0]})"));
  Eigen::VectorXd p(2);
  p << 1, 1;
  REQUIRE(hs.contains(hs.project_point(p), 1e-9));
  REQUIRE(set_from_config(json::parse(R"({"type":"nonnegative_orthant","dim":4})")).dim() == 4);
  REQUIRE(set_from_config(json::parse(R"({"type":"capped_orthant","dim":2,"cap":3.0})"))
              .is_dual_domain());
  const auto prod = set_from_config(json::parse(
      R"({"type":"product","factors":[{"type":"box","lower":[0],"upper":[1]},
          {"type":"ball","center":[0,0],"radius":1.0}]})"));
  REQUIRE(prod.dim() == 3);
  REQUIRE_THROWS_AS(set_from_config(json::parse(R"({"type":"cone"})")),
                    std::invalid_argument);
}

TEST_CASE("all four dynamics are selectable by name") {
  for (const std::string name : {"ppdgd", "ppdzd", "dppdgd", "dppdzd"}) {
    json config = small_qp_config();
    config["dynamics"] = name;
    config["integration"]["t_end"] = 0.02;
    const fs::path dir = fresh_dir("dyn_" + name);
    const auto outcome = run_experiment(config, dir);
    INFO(name << ": " << outcome.message);
    REQUIRE(outcome.exit_code == 0);
    REQUIRE(fs::exists(dir / "trajectory.csv"));
  }
}

TEST_CASE("multiagent modes run from the config") {
  json config = small_qp_config();
  // separable two-agent problem: diagonal cost blocks, one row per agent
  config["plant"]["A"] = {{1.0, 0.0}, {0.0, 1.0}};
  config["plant"]["b"] = {2.0, 2.0};
  config["multiagent"] = {{"mode", "broadcast"},
                          {"dims", {1, 1}},
                          {"members", {{0}, {1}}},
                          {"eps_p", 0.05}};
  config["integration"]["t_end"] = 0.02;
  const auto broadcast = run_experiment(config, fresh_dir("ma_broadcast"));
  INFO(broadcast.message);
  REQUIRE(broadcast.exit_code == 0);

  config["multiagent"]["mode"] = "consensus";
  config["multiagent"]["owner"] = {0, 1};
  config["multiagent"]["graph"] = {{"adjacency", {{0.0, 1.0}, {1.0, 0.0}}}};
  const fs::path dir = fresh_dir("ma_consensus");
  const auto consensus = run_experiment(config, dir);
  INFO(consensus.message);
  REQUIRE(consensus.exit_code == 0);
  const std::string validation = slurp(dir / "validation.txt");
  REQUIRE(validation.find("strongly connected: yes") != std::string::npos);
  const std::string summary = slurp(dir / "summary.csv");
  REQUIRE(summary.find("ok") != std::string::npos);

  // a one-way star graph is refused for consensus
  config["multiagent"]["graph"] = {{"adjacency", {{0.0, 0.0}, {1.0, 0.0}}}};
  REQUIRE(run_experiment(config, fresh_dir("ma_badgraph")).exit_code == 2);
}

TEST_CASE("sweeps record per-point failures and continue") {
  json config = small_qp_config();
  json grid;
  grid["probing.kappa"] = json::array({json::array({"27/10", "21/5"}),
                                       json::array({"1", "3"})});
  const fs::path dir = fresh_dir("sweep_fail");
  const auto points = run_sweep(config, grid, dir);
  REQUIRE(points.size() == 2);
  REQUIRE(points[0].outcome.exit_code == 0);
  REQUIRE(points[1].outcome.exit_code == 2);  // odd-harmonic pair refused
  const std::string csv = slurp(dir / "sweep_summary.csv");
  REQUIRE(csv.find("refused") != std::string::npos);
}

