#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "invcheck/verdict.h"

namespace invcheck {

// Malformed scenario text: `what()` carries the origin and line:column.
class ScenarioParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scenario that parses but fails validation; every failure is listed.
class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct ScenarioGrids {
  int closure = 21;     // points per axis of the closure grid
  int boundary = 101;   // points per grid line for boundary sampling
  int continuity = 11;  // points per axis for the F continuity diagnostic
};

struct Scenario {
  std::string name;
  int dimension = 0;
  Constants constants;
  System system;
  ScenarioGrids grids;
  std::uint64_t seed = 1;
  double dt = 1e-3;
  double horizon = 2.0;
  int directions_per_dim = 64;
  std::vector<ConditionId> conditions;
  std::vector<AssumptionId> assumptions;
  std::vector<Vec> oracle_starts;
  int oracle_ensemble = 8;
};

Scenario parse_scenario(const std::string& text, const std::string& origin = "<string>");
Scenario load_scenario(const std::filesystem::path& path);

// Command-line overrides; unset fields keep the scenario's values.
struct RunFlags {
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<double> horizon;
  std::optional<int> grid;  // closure grid points per axis
  bool emit_trajectories = false;
  // Replaces the scenario's requested checks when present; ids may name
  // conditions or assumptions.
  std::optional<std::vector<std::string>> checks;
  bool oracle = false;
  int jobs = 1;
  bool quiet = false;
  bool reproducible = false;
  std::filesystem::path out_dir = ".";
};

struct RunResult {
  int exit_code = 0;
  std::filesystem::path report_path;
  std::optional<std::filesystem::path> trajectory_path;
  std::string report;  // the text written to report_path
};

// Exit codes: 0 every requested check completed, 1 some verdict is
// INCONCLUSIVE, 2 the scenario could not be loaded or a check failed to run.
RunResult run(const std::filesystem::path& scenario_path, const RunFlags& flags);
RunResult run(const Scenario& scenario, const RunFlags& flags);

}  // namespace invcheck
