#include <CLI11.hpp>
#include <fmt/format.h>

#include "invcheck/cli.h"

int main(int argc, char** argv) {
  CLI::App app{"Sampled checker for nonincrease of a function along constrained differential inclusions"};
  std::string scenario;
  invcheck::RunFlags flags;
  std::uint64_t seed = 0;
  double dt = 0.0, horizon = 0.0;
  int grid = 0;
  std::vector<std::string> checks;
  std::string out_dir = ".";

  app.add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Root seed (overrides the scenario)");
  auto* dt_opt = app.add_option("--dt", dt, "Euler step")->check(CLI::PositiveNumber);
  auto* horizon_opt =
      app.add_option("--horizon", horizon, "Simulation horizon")->check(CLI::PositiveNumber);
  auto* grid_opt =
      app.add_option("--grid", grid, "Closure grid points per axis")->check(CLI::Range(2, 2001));
  app.add_flag("--emit-trajectories", flags.emit_trajectories,
               "Write <name>.traj.csv (oracle witness, else the first start)");
  auto* checks_opt = app.add_option("--check", checks, "Condition/assumption ids to run")
                         ->delimiter(',');
  app.add_flag("--oracle", flags.oracle, "Run the monotonicity oracle");
  app.add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", flags.quiet, "No progress output");
  app.add_flag("--reproducible", flags.reproducible, "Omit timestamps and timings from the report");
  app.add_option("--out", out_dir, "Output directory")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*seed_opt) flags.seed = seed;
  if (*dt_opt) flags.dt = dt;
  if (*horizon_opt) flags.horizon = horizon;
  if (*grid_opt) flags.grid = grid;
  if (*checks_opt) flags.checks = checks;
  flags.out_dir = out_dir;

  const auto result = invcheck::run(scenario, flags);
  if (!flags.quiet) fmt::print(stderr, "report: {}\n", result.report_path.string());
  return result.exit_code;
}
