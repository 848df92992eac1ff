#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pdzd/experiment.hpp"

namespace fs = std::filesystem;

namespace {

pdzd::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  pdzd::json j;
  in >> j;
  return j;
}

std::string resolve_out_dir(const std::string& flag, const pdzd::json& config) {
  if (!flag.empty()) return flag;
  if (config.contains("output") && config.at("output").contains("dir"))
    return config.at("output").at("dir").get<std::string>();
  if (const char* env = std::getenv("PDZD_OUT")) return env;
  return "pdzd_out";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model-free constrained feedback optimization experiment runner"};
  app.require_subcommand(1);

  std::string config_path, grid_path, out_flag;
  int jobs = 1;
  bool allow_unorthogonal = false;

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("config", config_path, "JSON experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_flag, "output directory (default: config, $PDZD_OUT, pdzd_out)");
  run->add_flag("--allow-unorthogonal", allow_unorthogonal,
                "run even if the probing plan violates the harmonic rules");

  auto* sweep = app.add_subcommand("sweep", "Cartesian sweep over config fields");
  sweep->add_option("config", config_path, "JSON experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--grid", grid_path, "JSON grid: {\"field.path\": [values...]}")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--jobs", jobs, "parallel sweep points");
  sweep->add_option("--out", out_flag, "output directory");
  sweep->add_flag("--allow-unorthogonal", allow_unorthogonal);

  CLI11_PARSE(app, argc, argv);

  try {
    const pdzd::json config = load_json(config_path);
    const fs::path base_dir = fs::path(config_path).parent_path();
    const fs::path out_dir = resolve_out_dir(out_flag, config);

    if (app.got_subcommand(run)) {
      const auto outcome = pdzd::run_experiment(config, out_dir, allow_unorthogonal, base_dir);
      if (!outcome.message.empty()) std::cerr << outcome.message << "\n";
      return outcome.exit_code;
    }

    pdzd::json grid = load_json(grid_path);
    if (grid.contains("grid")) grid = grid.at("grid");
    const auto points =
        pdzd::run_sweep(config, grid, out_dir, jobs, allow_unorthogonal, base_dir);
    for (const auto& p : points)
      if (p.outcome.exit_code != 0)
        std::cerr << "point " << p.index << ": " << p.outcome.message << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
