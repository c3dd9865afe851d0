#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "invcheck/cli.h"

namespace invcheck {

namespace {

using nlohmann::ordered_json;

ordered_json vec_json(const Vec& v) {
  ordered_json a = ordered_json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i] == 0.0 ? 0.0 : v[i]);
  return a;
}

ordered_json verdict_json(const std::string& id, const Verdict& v) {
  ordered_json j;
  j["id"] = id;
  j["verdict"] = outcome_name(v.outcome);
  j["proxy"] = v.proxy;
  j["samples"] = v.samples;
  j["inconclusive"] = v.inconclusive;
  j["unknown"] = v.unknown;
  ordered_json metrics = ordered_json::object();
  for (const auto& [k, x] : v.metrics) metrics[k] = x;
  j["metrics"] = metrics;
  j["notes"] = v.notes;
  ordered_json ws = ordered_json::array();
  for (const auto& w : v.witnesses) {
    ordered_json wj;
    wj["point"] = vec_json(w.point);
    wj["eta"] = vec_json(w.eta);
    wj["zeta"] = vec_json(w.zeta);
    wj["value"] = w.value;
    wj["note"] = w.note;
    ws.push_back(wj);
  }
  j["witnesses"] = ws;
  return j;
}

ordered_json conclusion_json(const Conclusion& c) {
  ordered_json j;
  j["rule"] = c.rule;
  j["statement"] = c.statement;
  j["direction"] = direction_name(c.direction);
  j["condition"] = c.condition ? ordered_json(condition_name(*c.condition)) : ordered_json();
  j["condition_verdict"] =
      c.condition ? ordered_json(outcome_name(c.condition_outcome)) : ordered_json();
  j["property"] = c.property;
  ordered_json hs = ordered_json::array();
  for (const auto& h : c.hypotheses) {
    hs.push_back({{"name", h.name}, {"holds", h.holds}, {"basis", h.basis}});
  }
  j["hypotheses"] = hs;
  return j;
}

ordered_json tolerances_json(const Tolerances& t) {
  return {{"membership", t.membership}, {"tangent", t.tangent},       {"normal", t.normal},
          {"duality", t.duality},       {"condition", t.condition},   {"constancy", t.constancy},
          {"kink", t.kink},             {"step_slack", t.step_slack}, {"lsc_jump", t.lsc_jump}};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Closure grid and boundary samples, merged without exact duplicates.
std::vector<Vec> sample_points(const Scenario& s, int closure_k) {
  auto less = [](const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                        b.data() + b.size());
  };
  std::set<Vec, decltype(less)> seen(less);
  std::vector<Vec> out;
  for (auto pts : {closure_grid(s.system.c, s.system.box, closure_k),
                   boundary_grid(s.system.c, s.system.box, s.grids.boundary)}) {
    for (auto& p : pts) {
      if (seen.insert(p).second) out.push_back(std::move(p));
    }
  }
  return out;
}

class Progress {
 public:
  explicit Progress(bool quiet) : quiet_(quiet) {}

  template <class... Args>
  void operator()(fmt::format_string<Args...> f, Args&&... args) const {
    if (!quiet_) fmt::print(stderr, "{}\n", fmt::format(f, std::forward<Args>(args)...));
  }

 private:
  bool quiet_;
};

RunResult finish(ordered_json& report, RunResult res, const std::filesystem::path& report_path) {
  report["exit_code"] = res.exit_code;
  res.report = report.dump(2) + "\n";
  res.report_path = report_path;
  std::ofstream out(report_path, std::ios::binary);
  out << res.report;
  if (!out) {
    fmt::print(stderr, "error: cannot write {}\n", report_path.string());
    res.exit_code = 2;
  }
  return res;
}

}  // namespace

RunResult run(const std::filesystem::path& scenario_path, const RunFlags& flags) {
  try {
    return run(load_scenario(scenario_path), flags);
  } catch (const std::exception& e) {
    ordered_json report;
    report["format"] = "invcheck-report/1";
    report["scenario"] = scenario_path.stem().string();
    report["source"] = scenario_path.filename().string();
    ordered_json errors = ordered_json::array();
    if (const auto* se = dynamic_cast<const ScenarioError*>(&e)) {
      for (const auto& p : se->problems()) errors.push_back(p);
    } else {
      errors.push_back(e.what());
    }
    report["errors"] = errors;
    if (!flags.quiet) fmt::print(stderr, "error: {}\n", e.what());
    RunResult res;
    res.exit_code = 2;
    return finish(report, res,
                  flags.out_dir / (scenario_path.stem().string() + ".verdict"));
  }
}

RunResult run(const Scenario& scenario, const RunFlags& flags) {
  const auto started = std::chrono::steady_clock::now();
  const Progress progress(flags.quiet);
  Scenario s = scenario;
  if (flags.seed) s.seed = *flags.seed;
  if (flags.dt) s.dt = *flags.dt;
  if (flags.horizon) s.horizon = *flags.horizon;
  const int closure_k = flags.grid.value_or(s.grids.closure);

  RunResult res;
  ordered_json errors = ordered_json::array();

  std::vector<ConditionId> conditions = s.conditions;
  std::vector<AssumptionId> assumptions = s.assumptions;
  if (flags.checks) {
    conditions.clear();
    assumptions.clear();
    for (const auto& id : *flags.checks) {
      if (auto c = parse_condition(id)) {
        conditions.push_back(*c);
      } else if (auto a = parse_assumption(id)) {
        assumptions.push_back(*a);
      } else {
        errors.push_back(fmt::format("unknown check id \"{}\"", id));
      }
    }
  }

  ordered_json report;
  report["format"] = "invcheck-report/1";
  report["scenario"] = s.name;
  if (!flags.reproducible) report["generated"] = utc_timestamp();
  report["settings"] = {{"seed", s.seed},
                        {"dt", s.dt},
                        {"horizon", s.horizon},
                        {"closure_grid", closure_k},
                        {"boundary_grid", s.grids.boundary},
                        {"continuity_grid", s.grids.continuity},
                        {"barycentric_resolution", s.system.resolution},
                        {"directions_per_dim", s.directions_per_dim},
                        {"oracle_ensemble", s.oracle_ensemble},
                        {"oracle", flags.oracle}};
  report["tolerances"] = tolerances_json(s.system.tol);
  report["function_class"] = class_name(s.system.b.function_class());

  CheckOptions opts;
  opts.directions_per_dim = s.directions_per_dim;
  opts.jobs = std::max(flags.jobs, 1);
  opts.seed = s.seed;
  opts.sim.dt = s.dt;
  opts.sim.horizon = s.horizon;
  opts.sim.box = s.system.box;
  opts.sim.resolution = s.system.resolution;
  opts.sim.tol = s.system.tol;

  if (errors.empty() && (!conditions.empty() || !assumptions.empty())) {
    try {
      const FDiagnostics fdiag = diagnose_f(s.system, s.grids.continuity);
      report["f_diagnostics"] = {{"continuous", fdiag.continuous},
                                 {"lipschitz", fdiag.lipschitz},
                                 {"lipschitz_estimate", fdiag.report.lipschitz},
                                 {"usc_excess", fdiag.report.usc_excess},
                                 {"lsc_excess", fdiag.report.lsc_excess},
                                 {"violations", fdiag.report.violations.size()}};

      const auto points = sample_points(s, closure_k);
      const auto grid = label_points(s.system, points, opts.jobs);
      std::size_t interior = 0, boundary = 0;
      std::map<CtildeLabel, std::size_t> labels;
      bool ctilde_open = true;
      for (const auto& p : grid) {
        interior += p.interior;
        if (!p.boundary) continue;
        ++boundary;
        ++labels[p.ctilde.label];
        ctilde_open = ctilde_open && p.ctilde.label == CtildeLabel::kTrivialOnly;
      }
      report["grid"] = {{"points", grid.size()},
                        {"interior", interior},
                        {"boundary", boundary},
                        {"boundary_nontrivial", labels[CtildeLabel::kNontrivial]},
                        {"boundary_trivial_only", labels[CtildeLabel::kTrivialOnly]},
                        {"boundary_unknown", labels[CtildeLabel::kUnknown]}};
      progress("{}: {} grid points, {} on the boundary", s.name, grid.size(), boundary);

      std::map<ConditionId, Verdict> cond_verdicts;
      ordered_json cj = ordered_json::array();
      for (ConditionId id : conditions) {
        try {
          const Verdict v = check_condition(s.system, id, grid, opts);
          progress("{}: {} ({} samples)", condition_name(id), outcome_name(v.outcome), v.samples);
          cj.push_back(verdict_json(condition_name(id), v));
          cond_verdicts[id] = v;
        } catch (const std::exception& e) {
          errors.push_back(fmt::format("{}: {}", condition_name(id), e.what()));
        }
      }
      report["conditions"] = cj;

      std::map<AssumptionId, Verdict> assumption_verdicts;
      ordered_json aj = ordered_json::array();
      for (AssumptionId id : assumptions) {
        try {
          const Verdict v = check_assumption(s.system, id, grid, fdiag, opts);
          progress("{}: {} ({} samples)", assumption_name(id), outcome_name(v.outcome), v.samples);
          aj.push_back(verdict_json(assumption_name(id), v));
          assumption_verdicts[id] = v;
        } catch (const std::exception& e) {
          errors.push_back(fmt::format("{}: {}", assumption_name(id), e.what()));
        }
      }
      report["assumptions"] = aj;

      if (!cond_verdicts.empty()) {
        const Conclusion c =
            apply_theory(s.system, cond_verdicts, assumption_verdicts, fdiag, ctilde_open);
        progress("conclusion: {} via {}", direction_name(c.direction), c.rule);
        report["conclusion"] = conclusion_json(c);
      }
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }

  std::optional<Trajectory> dump;
  if (errors.empty() && flags.oracle) {
    if (s.oracle_starts.empty()) {
      errors.push_back("--oracle needs checks.oracle.starts in the scenario");
    } else {
      try {
        OracleOptions oo;
        oo.ensemble = s.oracle_ensemble;
        oo.sim = opts.sim;
        oo.seed = s.seed;
        oo.jobs = opts.jobs;
        OracleResult o = monotonicity_oracle(s.system.c, s.system.f, s.system.b,
                                             s.oracle_starts, oo);
        progress("oracle: {} ({} trajectories)", outcome_name(o.verdict.outcome),
                 o.verdict.samples);
        ordered_json oj = verdict_json("oracle", o.verdict);
        ordered_json starts = ordered_json::array();
        for (const auto& x : s.oracle_starts) starts.push_back(vec_json(x));
        oj["starts"] = starts;
        report["oracle"] = oj;
        if (o.witness_trajectory) dump = std::move(o.witness_trajectory);
      } catch (const std::exception& e) {
        errors.push_back(fmt::format("oracle: {}", e.what()));
      }
    }
  }

  if (errors.empty() && flags.emit_trajectories) {
    if (!dump && s.oracle_starts.empty()) {
      errors.push_back("--emit-trajectories needs checks.oracle.starts in the scenario");
    } else {
      if (!dump) {
        dump = simulate(s.system.c, s.system.f, s.oracle_starts.front(), ensemble_strategy(0),
                        opts.sim, split_seed(split_seed(s.seed, 0), 0));
      }
      const auto path = flags.out_dir / (s.name + ".traj.csv");
      std::ofstream out(path, std::ios::binary);
      write_trajectory_csv(out, *dump, s.system.b);
      if (out) {
        res.trajectory_path = path;
        report["trajectory"] = {{"file", path.filename().string()},
                                {"steps", dump->velocities.size()},
                                {"termination", termination_name(dump->reason)}};
      } else {
        errors.push_back(fmt::format("cannot write {}", path.string()));
      }
    }
  }

  bool inconclusive = false;
  for (const char* key : {"conditions", "assumptions"}) {
    if (!report.contains(key)) continue;
    for (const auto& v : report[key]) inconclusive = inconclusive || v["verdict"] == "INCONCLUSIVE";
  }
  if (report.contains("oracle")) inconclusive = inconclusive || report["oracle"]["verdict"] == "INCONCLUSIVE";

  report["errors"] = errors;
  if (!flags.reproducible) {
    report["elapsed_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  for (const auto& e : errors) progress("error: {}", e.get<std::string>());
  res.exit_code = !errors.empty() ? 2 : inconclusive ? 1 : 0;
  return finish(report, res, flags.out_dir / (s.name + ".verdict"));
}

}  // namespace invcheck
