#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fixtures.h"
#include "invcheck/cli.h"

using namespace fixtures;
namespace fs = std::filesystem;
using invcheck::RunFlags;
using nlohmann::json;

namespace {

fs::path scenario_path(const std::string& name) {
  return fs::path(INVCHECK_SCENARIO_DIR) / (name + ".scn");
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("invcheck_test_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Vec vec(const json& a) {
  Vec v(static_cast<int>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

std::vector<std::string> problems_of(const std::string& text) {
  try {
    invcheck::parse_scenario(text);
  } catch (const invcheck::ScenarioError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& needle) {
  for (const auto& p : problems) {
    if (p.find(needle) != std::string::npos) return true;
  }
  return false;
}

const char* kMinimal = R"({
  "name": "half",
  "dimension": 2,
  "box": [[-1, 1], [-1, 1]],
  "set": {"le": "x1"},
  "map": {"vertices": [["-1", "0"]]},
  "function": {"class": "C1", "expr": "x1"}
})";

}  // namespace

TEST_CASE("example1 scenario loads its data") {
  const auto s = invcheck::load_scenario(scenario_path("example1"));
  CHECK(s.name == "example1");
  CHECK(s.dimension == 2);
  CHECK(s.system.c.kind() == invcheck::ConstraintSet::Kind::kLeaf);
  CHECK(s.system.c.leaf_data().rel == invcheck::Relation::kEqual);
  CHECK(s.system.c.contains(v2(0.7, 0.0)));
  CHECK_FALSE(s.system.c.contains(v2(0.0, 0.1)));

  const Vec x = v2(0.3, 0.0);
  const auto image = s.system.f.image(x);
  REQUIRE(image.size() == 2);
  CHECK((image[0] - v2(1, 0)).norm() <= 1e-15);
  CHECK((image[1] - v2(-std::cos(0.09), std::sin(0.09))).norm() <= 1e-15);
  CHECK(s.system.b.value(x) == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(s.system.b.function_class() == invcheck::FunctionClass::kC1);
  CHECK(s.oracle_starts.size() == 3);
  CHECK(s.oracle_ensemble == 16);
}

TEST_CASE("bouncing ball scenario uses the gravity constant") {
  const auto s = invcheck::load_scenario(scenario_path("bouncing_ball"));
  CHECK(s.constants.at("g") == 9.81);
  CHECK(s.system.c.violation(v2(-0.5, 0.0)) == 0.5);
  CHECK(s.system.c.violation(v2(0.25, 3.0)) == -0.25);
  const auto image = s.system.f.image(v2(1.0, 2.0));
  REQUIRE(image.size() == 1);
  CHECK((image[0] - v2(2.0, -9.81)).norm() == 0.0);
  CHECK(s.system.b.value(v2(1.0, 2.0)) == doctest::Approx(9.81 + 2.0).epsilon(1e-15));
}

TEST_CASE("example2 scenario: guarded map and lsc function") {
  const auto s = invcheck::load_scenario(scenario_path("example2"));
  CHECK(s.system.b.function_class() == invcheck::FunctionClass::kLsc);
  CHECK(s.system.b.value(v2(0.5, 0.0)) == 0.0);
  CHECK(s.system.b.value(v2(0.5, 1e-3)) == 1.0);
  CHECK(s.system.f.image(v2(-0.5, 0.3)).size() == 1);
  CHECK(s.system.f.image(v2(0.5, 0.3)).size() == 2);
  CHECK(s.system.tol.step_slack == 1e-2);
  CHECK(s.grids.boundary == 1001);
  // Spot points of each union member.
  CHECK(s.system.c.contains(v2(0.5, 0.25)));
  CHECK(s.system.c.contains(v2(0.5, 0.0)));
  CHECK(s.system.c.contains(v2(-0.5, 0.1)));
  CHECK_FALSE(s.system.c.contains(v2(0.5, 0.2)));
}

TEST_CASE("missing dimension is reported by name") {
  std::string text = kMinimal;
  text.replace(text.find("\"dimension\": 2,"), 15, "");
  const auto problems = problems_of(text);
  CHECK(mentions(problems, "\"dimension\""));
}

TEST_CASE("validation lists every failure") {
  const std::string text = R"({
    "name": "bad",
    "dimension": 2,
    "box": [[1, -1], [-1, 1]],
    "set": {"le": "x3"},
    "map": {"vertices": [["1"]]},
    "function": {"class": "smooth", "expr": "x1 +"},
    "colour": "red"
  })";
  const auto problems = problems_of(text);
  CHECK(problems.size() >= 6);
  CHECK(mentions(problems, "box[0]: need lo < hi"));
  CHECK(mentions(problems, "set.le"));
  CHECK(mentions(problems, "map.vertices[0]"));
  CHECK(mentions(problems, "function.class"));
  CHECK(mentions(problems, "function.expr"));
  CHECK(mentions(problems, "unknown key \"colour\""));
}

TEST_CASE("coverage gaps in guards are validation errors") {
  std::string text = kMinimal;
  text.replace(text.find(R"({"vertices": [["-1", "0"]]})"), 27,
               R"({"branches": [{"guard": {"le": "x1 + 0.5"}, "vertices": [["-1", "0"]]}]})");
  CHECK(mentions(problems_of(text), "map"));
}

TEST_CASE("syntax errors carry line and column") {
  std::string text = kMinimal;
  text.replace(text.find("\"set\""), 5, "set");
  try {
    invcheck::parse_scenario(text, "demo.scn");
    FAIL("expected a parse error");
  } catch (const invcheck::ScenarioParseError& e) {
    CHECK(std::string(e.what()).rfind("demo.scn:5:", 0) == 0);
  }
}

TEST_CASE("minimal scenario takes defaults and comments are allowed") {
  const auto s = invcheck::parse_scenario(std::string("// leading comment\n") + kMinimal);
  CHECK(s.seed == 1);
  CHECK(s.dt == 1e-3);
  CHECK(s.grids.closure == 21);
  CHECK(s.conditions.empty());
  CHECK(s.system.tol.membership == 1e-9);
}

TEST_CASE("run: exit codes and error reports") {
  const fs::path dir = fresh_dir("exit");
  RunFlags flags;
  flags.quiet = true;
  flags.reproducible = true;
  flags.out_dir = dir;

  SUBCASE("unknown check id") {
    flags.checks = std::vector<std::string>{"COND-NOPE"};
    const auto r = invcheck::run(scenario_path("example1"), flags);
    CHECK(r.exit_code == 2);
    const json j = json::parse(slurp(r.report_path));
    CHECK(j["errors"][0].get<std::string>().find("COND-NOPE") != std::string::npos);
    CHECK(j["exit_code"] == 2);
  }
  SUBCASE("unreadable scenario") {
    const auto r = invcheck::run(dir / "missing.scn", flags);
    CHECK(r.exit_code == 2);
    CHECK(r.report_path.filename() == "missing.verdict");
  }
  SUBCASE("class mismatch is an execution error") {
    flags.checks = std::vector<std::string>{"COND-CLARKE"};
    auto s = invcheck::load_scenario(scenario_path("example2"));
    s.grids.boundary = 21;
    const auto r = invcheck::run(s, flags);
    CHECK(r.exit_code == 2);
  }
  SUBCASE("completed checks exit 0 regardless of verdict") {
    flags.checks = std::vector<std::string>{"COND-GRAD"};
    const auto r = invcheck::run(scenario_path("example1"), flags);
    CHECK(r.exit_code == 0);
    const json j = json::parse(r.report);
    CHECK(j["conditions"][0]["verdict"] == "VIOLATED");
    CHECK_FALSE(j.contains("generated"));
    CHECK_FALSE(j.contains("elapsed_seconds"));
  }
  SUBCASE("inconclusive oracle exits 1") {
    // Every start lies outside the set, so no trajectory is evaluated.
    auto s = invcheck::parse_scenario(R"({
      "name": "outside", "dimension": 1, "box": [[-1, 1]],
      "set": {"le": "x1"}, "map": {"vertices": [["-1"]]},
      "function": {"class": "C1", "expr": "x1"},
      "checks": {"oracle": {"starts": [[0.5]]}}
    })");
    flags.oracle = true;
    const auto r = invcheck::run(s, flags);
    CHECK(r.exit_code == 1);
  }
}

TEST_CASE("run: report witnesses re-validate") {
  const fs::path dir = fresh_dir("witness");
  RunFlags flags;
  flags.quiet = true;
  flags.reproducible = true;
  flags.out_dir = dir;

  SUBCASE("gradient condition on example1") {
    const auto s = invcheck::load_scenario(scenario_path("example1"));
    const json j = json::parse(invcheck::run(s, flags).report);
    const auto& ws = j["conditions"][0]["witnesses"];
    REQUIRE_FALSE(ws.empty());
    for (const auto& w : ws) {
      const Vec x = vec(w["point"]), eta = vec(w["eta"]), zeta = vec(w["zeta"]);
      CHECK((s.system.b.pieces()[0].expr.gradient(x) - eta).norm() <= 1e-12);
      CHECK(invcheck::distance_to_hull(s.system.f.image(x), zeta) <= 1e-12);
      CHECK(invcheck::in_contingent_cone(s.system.c, x, zeta, s.system.tol).member);
      CHECK(std::fabs(eta.dot(zeta) - w["value"].get<double>()) <= 1e-12);
    }
  }
  SUBCASE("M2 on example2") {
    auto s = invcheck::load_scenario(scenario_path("example2"));
    s.grids.boundary = 41;
    flags.checks = std::vector<std::string>{"M2"};
    const json j = json::parse(invcheck::run(s, flags).report);
    const auto& a = j["assumptions"][0];
    CHECK(a["verdict"] == "VIOLATED");
    for (const auto& w : a["witnesses"]) {
      const Vec y = vec(w["point"]), v = vec(w["zeta"]);
      const auto r = invcheck::in_contingent_cone(s.system.c, y, v, s.system.tol);
      CHECK_FALSE(r.member);
      CHECK(std::fabs(r.residual - w["value"].get<double>()) <= 1e-12);
    }
  }
  SUBCASE("oracle on example2") {
    const auto s = invcheck::load_scenario(scenario_path("example2"));
    flags.checks = std::vector<std::string>{};
    flags.oracle = true;
    const json j = json::parse(invcheck::run(s, flags).report);
    const auto& o = j["oracle"];
    CHECK(o["verdict"] == "VIOLATED");
    for (const auto& w : o["witnesses"]) {
      const double inc = s.system.b.value(vec(w["point"])) - s.system.b.value(vec(w["zeta"]));
      CHECK(std::fabs(inc - w["value"].get<double>()) <= 1e-12);
    }
  }
}

TEST_CASE("run: reruns and thread counts give identical files") {
  const fs::path a = fresh_dir("rep_a");
  const fs::path b = fresh_dir("rep_b");
  RunFlags flags;
  flags.quiet = true;
  flags.reproducible = true;
  flags.oracle = true;
  flags.emit_trajectories = true;
  flags.out_dir = a;
  const auto ra = invcheck::run(scenario_path("bouncing_ball"), flags);
  flags.out_dir = b;
  flags.jobs = 3;
  const auto rb = invcheck::run(scenario_path("bouncing_ball"), flags);
  REQUIRE(ra.exit_code == 0);
  CHECK(slurp(ra.report_path) == slurp(rb.report_path));
  REQUIRE(ra.trajectory_path);
  REQUIRE(rb.trajectory_path);
  CHECK(slurp(*ra.trajectory_path) == slurp(*rb.trajectory_path));
  CHECK(slurp(*ra.trajectory_path).rfind("t,x1,x2,B\n", 0) == 0);
}

TEST_CASE("run: flag overrides reach the report") {
  const fs::path dir = fresh_dir("flags");
  RunFlags flags;
  flags.quiet = true;
  flags.reproducible = true;
  flags.out_dir = dir;
  flags.seed = 7;
  flags.dt = 2e-3;
  flags.horizon = 0.1;
  flags.grid = 5;
  flags.checks = std::vector<std::string>{"COND-GRAD"};
  const json j = json::parse(invcheck::run(scenario_path("bouncing_ball"), flags).report);
  CHECK(j["settings"]["seed"] == 7);
  CHECK(j["settings"]["dt"] == 2e-3);
  CHECK(j["settings"]["horizon"] == 0.1);
  CHECK(j["settings"]["closure_grid"] == 5);
  CHECK(j["assumptions"].empty());
}
