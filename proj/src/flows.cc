#include "invcheck/flows.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include <fmt/format.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

namespace invcheck {

namespace {

struct Candidate {
  std::vector<double> weights;
  Vec velocity;
};

// Largest fraction s in [0, 1] of the step x + s h v that keeps the
// violation at or below the threshold, found by bisection.
double feasible_fraction(const ConstraintSet& c, const Vec& x, const Vec& v, double h,
                         double threshold, int max_bisections) {
  if (c.violation(x + h * v) <= threshold) return 1.0;
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < max_bisections; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (c.violation(x + mid * h * v) <= threshold) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

std::vector<double> unit_weights(int m, int i) {
  std::vector<double> w(m, 0.0);
  w[i] = 1.0;
  return w;
}

Vec combine(const std::vector<Vec>& verts, const std::vector<double>& w) {
  Vec v = Vec::Zero(verts.front().size());
  for (std::size_t i = 0; i < verts.size(); ++i) v += w[i] * verts[i];
  return v;
}

struct Increase {
  std::size_t from = 0;
  std::size_t to = 0;
  double b_from = 0.0;
  double b_to = 0.0;
};

// First k with B(k) above min_{j<k} B(j) + tol, or a single-step lsc jump.
std::optional<Increase> first_increase(const Trajectory& traj, const PiecewiseFunction& b,
                                       double tol_mono, double lsc_jump) {
  const bool lsc = b.function_class() == FunctionClass::kLsc;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_at = 0;
  double prev = 0.0;
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    double bk;
    try {
      bk = b.value(traj.states[k]);
    } catch (const std::exception&) {
      break;
    }
    if (k > 0) {
      if (bk > best + tol_mono) return Increase{best_at, k, best, bk};
      if (lsc && bk - prev >= lsc_jump) return Increase{k - 1, k, prev, bk};
    }
    if (bk < best) {
      best = bk;
      best_at = k;
    }
    prev = bk;
  }
  return std::nullopt;
}

}  // namespace

std::string Strategy::name() const {
  switch (kind) {
    case StrategyKind::kVertex:
      return fmt::format("vertex({})", vertex);
    case StrategyKind::kRandomHull:
      return "random-hull";
    case StrategyKind::kTangential:
      return fmt::format("tangential({})", vertex);
  }
  return "?";
}

Strategy ensemble_strategy(int j) {
  static constexpr StrategyKind kinds[] = {StrategyKind::kVertex, StrategyKind::kRandomHull,
                                           StrategyKind::kTangential};
  return {kinds[j % 3], j / 3};
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::kHorizon:
      return "horizon";
    case Termination::kNoAdmissibleVelocity:
      return "no-admissible-velocity";
    case Termination::kProjectionFailure:
      return "projection-failure";
    case Termination::kUncovered:
      return "uncovered";
    case Termination::kLeftBox:
      return "left-box";
  }
  return "?";
}

Trajectory simulate(const ConstraintSet& c, const VelocityMap& f, const Vec& x0,
                    const Strategy& strategy, const SimulationOptions& options,
                    std::uint64_t seed) {
  const double v0 = c.violation(x0);
  if (v0 > 1e-6) throw std::invalid_argument("start point " + format_vec(x0) + " is not in cl(C)");
  const double threshold = std::max(options.tol.step_slack, std::max(0.0, v0));
  const double horizon = options.horizon;
  const double dt = options.dt;
  const auto max_steps = static_cast<std::size_t>(4.0 * std::ceil(horizon / dt)) + 16;

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);

  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  Vec x = x0;
  double t = 0.0;
  bool on_boundary = false;
  std::size_t iterations = 0;

  while (t < horizon * (1.0 - 1e-12)) {
    if (++iterations > max_steps) {
      traj.reason = Termination::kProjectionFailure;
      break;
    }
    if (options.box && !options.box->contains(x, 1e-12)) {
      traj.reason = Termination::kLeftBox;
      break;
    }
    std::vector<Vec> verts;
    try {
      verts = f.image(x, options.tol.membership);
    } catch (const UncoveredPoint&) {
      traj.reason = Termination::kUncovered;
      break;
    }
    const int m = static_cast<int>(verts.size());

    std::vector<double> w;
    switch (strategy.kind) {
      case StrategyKind::kVertex:
      case StrategyKind::kTangential:
        w = unit_weights(m, strategy.vertex % m);
        break;
      case StrategyKind::kRandomHull: {
        double total = 0.0;
        for (int i = 0; i < m; ++i) {
          w.push_back(expo(rng));
          total += w.back();
        }
        for (double& wi : w) wi /= total;
        break;
      }
    }
    const Vec pick = combine(verts, w);
    const double h = std::min(dt, horizon - t);
    const bool project = strategy.kind == StrategyKind::kTangential || on_boundary;

    std::vector<Candidate> candidates;
    if (project) {
      auto samples = admissible_velocities(f, c, x, options.resolution, options.tol);
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].admissible) order.push_back({-samples[i].velocity.dot(pick), i});
      }
      if (order.empty()) {
        traj.reason = Termination::kNoAdmissibleVelocity;
        break;
      }
      std::stable_sort(order.begin(), order.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const auto& [score, i] : order) {
        candidates.push_back({std::move(samples[i].weights), samples[i].velocity});
      }
    } else {
      candidates.push_back({w, pick});
    }

    double best_s = 0.0;
    const Candidate* chosen = nullptr;
    for (const auto& cand : candidates) {
      const double s = feasible_fraction(c, x, cand.velocity, h, threshold, options.max_bisections);
      if (s > best_s) {
        best_s = s;
        chosen = &cand;
      }
      if (s == 1.0) break;
    }
    if (chosen == nullptr) {
      if (!project) {
        on_boundary = true;
        continue;
      }
      traj.reason = Termination::kProjectionFailure;
      break;
    }
    traj.weights.push_back(chosen->weights);
    traj.velocities.push_back(chosen->velocity);
    x = x + (best_s * h) * chosen->velocity;
    t += best_s * h;
    traj.times.push_back(t);
    traj.states.push_back(x);
    on_boundary = best_s < 1.0;
  }
  return traj;
}

double velocity_bound(const VelocityMap& f, const Box& box, int k) {
  double best = 0.0;
  for (const auto& x : box.grid(k)) {
    try {
      for (const auto& v : f.image(x)) best = std::max(best, v.norm());
    } catch (const UncoveredPoint&) {
    }
  }
  return best;
}

std::vector<std::string> check_trajectory(const Trajectory& traj, const ConstraintSet& c,
                                          const VelocityMap& f, double vmax, double dt,
                                          const Tolerances& tol) {
  std::vector<std::string> problems;
  if (traj.states.empty()) return {"empty trajectory"};
  if (c.violation(traj.states.front()) > tol.membership) {
    problems.push_back("start " + format_vec(traj.states.front()) + " is not in cl(C)");
  }
  const double eps_traj = 10.0 * dt * vmax;
  for (std::size_t k = 1; k + 1 < traj.states.size(); ++k) {
    const Vec& x = traj.states[k];
    if (c.violation(x) <= eps_traj) continue;
    const Projection p = distance_and_project(c, x);
    if (!p.ok || p.distance > eps_traj) {
      problems.push_back(fmt::format("state {} at {} is farther than {} from C", k, format_vec(x),
                                     eps_traj));
    }
  }
  for (std::size_t k = 0; k + 1 < traj.states.size(); ++k) {
    const double step = (traj.states[k + 1] - traj.states[k]).norm();
    if (step > dt * vmax * (1.0 + 1e-12)) {
      problems.push_back(fmt::format("step {} has length {} > dt * vmax", k, step));
    }
    const double off = distance_to_hull(f.image(traj.states[k], tol.membership), traj.velocities[k]);
    if (off > 1e-9) {
      problems.push_back(fmt::format("velocity {} is {} away from the image hull", k, off));
    }
  }
  return problems;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const PiecewiseFunction& b) {
  const std::size_t n = traj.states.empty() ? 0 : traj.states.front().size();
  out << "t";
  for (std::size_t i = 0; i < n; ++i) out << ",x" << (i + 1);
  out << ",B\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    out << fmt::format("{:.17g}", traj.times[k]);
    for (std::size_t i = 0; i < n; ++i) out << fmt::format(",{:.17g}", traj.states[k][i]);
    out << ',';
    try {
      out << fmt::format("{:.17g}", b.value(traj.states[k]));
    } catch (const std::exception&) {
    }
    out << '\n';
  }
}

const char* label_name(CtildeLabel l) {
  switch (l) {
    case CtildeLabel::kNontrivial:
      return "nontrivial";
    case CtildeLabel::kTrivialOnly:
      return "trivial-only";
    case CtildeLabel::kUnknown:
      return "unknown";
  }
  return "?";
}

const char* rule_name(CtildeRule r) {
  switch (r) {
    case CtildeRule::kEmptyIntersection:
      return "empty-intersection";
    case CtildeRule::kNeighborhood:
      return "neighborhood-intersection";
    case CtildeRule::kHypertangent:
      return "hypertangent";
    case CtildeRule::kForwardProbe:
      return "forward-probe";
    case CtildeRule::kNone:
      return "none";
  }
  return "?";
}

CtildeResult classify_nontrivial(const ConstraintSet& c, const VelocityMap& f, const Vec& x,
                                 const Tolerances& tol, int resolution) {
  std::vector<VelocitySample> here;
  try {
    here = admissible_velocities(f, c, x, resolution, tol);
  } catch (const UncoveredPoint&) {
    return {};
  }
  const bool admissible =
      std::any_of(here.begin(), here.end(), [](const auto& s) { return s.admissible; });
  if (!admissible) {
    const bool clear = std::all_of(here.begin(), here.end(), [&](const auto& s) {
      return !s.inconclusive && s.residual > 10.0 * tol.tangent;
    });
    if (clear) return {CtildeLabel::kTrivialOnly, CtildeRule::kEmptyIntersection};
  }

  if (admissible) {
    bool all = true;
    const auto dirs = sphere_directions(static_cast<int>(x.size()), 32, 0x5e11);
    for (double r : {1e-2, 1e-3}) {
      for (const auto& u : dirs) {
        Vec y = x + r * u;
        if (!c.contains(y, tol.membership)) {
          ProjectOptions opt;
          opt.hint = &x;
          const Projection p = distance_and_project(c, y, opt);
          if (!p.ok) {
            all = false;
            break;
          }
          y = p.point;
        }
        try {
          const auto s = admissible_velocities(f, c, y, resolution, tol);
          all = std::any_of(s.begin(), s.end(), [](const auto& q) { return q.admissible; });
        } catch (const UncoveredPoint&) {
          all = false;
        }
        if (!all) break;
      }
      if (!all) break;
    }
    if (all) return {CtildeLabel::kNontrivial, CtildeRule::kNeighborhood};
  }

  bool hyper = true;
  for (const auto& v : f.image(x, tol.membership)) {
    const ConeQueryResult r = in_hypertangent_cone(c, x, v, tol);
    if (!r.member) {
      hyper = false;
      break;
    }
  }
  if (hyper) return {CtildeLabel::kNontrivial, CtildeRule::kHypertangent};

  // Every admissible direction runs into points without admissible velocities.
  if (admissible) {
    bool dead = true;
    for (const auto& s : here) {
      if (!s.admissible || s.velocity.norm() == 0.0) {
        if (s.admissible) dead = false;
        continue;
      }
      for (double r : {1e-1, 1e-2}) {
        const Vec y = x + r * s.velocity.normalized();
        ProjectOptions opt;
        opt.hint = &x;
        const Projection p = c.contains(y, tol.membership)
                                 ? Projection{true, 0.0, y}
                                 : distance_and_project(c, y, opt);
        if (!p.ok) {
          dead = false;
          break;
        }
        try {
          const auto there = admissible_velocities(f, c, p.point, resolution, tol);
          dead = std::none_of(there.begin(), there.end(),
                              [](const auto& q) { return q.admissible || q.inconclusive; });
        } catch (const UncoveredPoint&) {
          dead = false;
        }
        if (!dead) break;
      }
      if (!dead) break;
    }
    if (dead) return {CtildeLabel::kTrivialOnly, CtildeRule::kForwardProbe};
  }
  return {};
}

Verdict is_precontractive(const ConstraintSet& c, const VelocityMap& f, const ConstraintSet& k,
                          const std::vector<Vec>& boundary_samples,
                          const SimulationOptions& options, std::uint64_t seed) {
  Verdict v;
  v.proxy = "sample-based";
  SimulationOptions sim = options;
  sim.horizon = 10.0 * options.dt;
  for (std::size_t i = 0; i < boundary_samples.size(); ++i) {
    const Vec& x = boundary_samples[i];
    const CtildeResult cls = classify_nontrivial(c, f, x, options.tol, options.resolution);
    if (cls.label == CtildeLabel::kTrivialOnly) continue;
    if (cls.label == CtildeLabel::kUnknown) ++v.unknown;
    for (int j = 0; j < 8; ++j) {
      const Strategy st = ensemble_strategy(j);
      const Trajectory traj = simulate(c, f, x, st, sim, split_seed(split_seed(seed, i), j));
      if (traj.states.size() < 2) continue;
      ++v.samples;
      for (std::size_t s = 1; s < traj.states.size() && s <= 10; ++s) {
        const double viol = k.violation(traj.states[s]);
        if (viol >= 0.0) {
          v.outcome = Outcome::kViolated;
          v.witnesses.push_back(
              {x, Vec(), traj.states[s], viol, fmt::format("{} step {}", st.name(), s)});
          break;
        }
      }
      if (v.witnesses.size() >= 32) return v;
    }
  }
  return v;
}

OracleResult monotonicity_oracle(const ConstraintSet& c, const VelocityMap& f,
                                 const PiecewiseFunction& b, const std::vector<Vec>& starts,
                                 const OracleOptions& options) {
  if (!options.sim.box) throw std::invalid_argument("monotonicity oracle needs a box");
  const Box& box = *options.sim.box;
  OracleResult res;
  res.lipschitz_b = lipschitz_estimate(b, box);
  res.vmax = velocity_bound(f, box);
  res.tol_mono = 1e-6 + res.lipschitz_b * res.vmax * options.sim.dt;

  struct Run {
    bool skipped = false;
    Trajectory traj;
    std::optional<Increase> inc;
  };
  const std::size_t members = static_cast<std::size_t>(std::max(options.ensemble, 0));
  std::vector<Run> runs(starts.size() * members);
  auto work = [&](std::size_t idx) {
    const std::size_t i = idx / members;
    const std::size_t j = idx % members;
    Run& run = runs[idx];
    if (c.violation(starts[i]) > 1e-6) {
      run.skipped = true;
      return;
    }
    run.traj = simulate(c, f, starts[i], ensemble_strategy(static_cast<int>(j)), options.sim,
                        split_seed(split_seed(options.seed, i), j));
    run.inc = first_increase(run.traj, b, res.tol_mono, options.sim.tol.lsc_jump);
  };
  if (options.jobs > 1) {
    tbb::task_arena arena(options.jobs);
    arena.execute([&] { tbb::parallel_for(std::size_t{0}, runs.size(), work); });
  } else {
    for (std::size_t idx = 0; idx < runs.size(); ++idx) work(idx);
  }

  Verdict& v = res.verdict;
  v.proxy = "sample-based";
  for (std::size_t idx = 0; idx < runs.size(); ++idx) {
    const Run& run = runs[idx];
    if (run.skipped) {
      ++v.inconclusive;
      continue;
    }
    ++v.samples;
    if (!run.inc) continue;
    const Increase& inc = *run.inc;
    if (v.outcome != Outcome::kViolated) {
      v.outcome = Outcome::kViolated;
      res.witness_trajectory = run.traj;
    }
    if (v.witnesses.size() < 32) {
      Vec times(2);
      times << run.traj.times[inc.from], run.traj.times[inc.to];
      const std::size_t i = idx / members;
      const std::size_t j = idx % members;
      v.witnesses.push_back({run.traj.states[inc.to], times, run.traj.states[inc.from],
                             inc.b_to - inc.b_from,
                             fmt::format("start {} member {} {}: B {} -> {}", i, j,
                                         ensemble_strategy(static_cast<int>(j)).name(),
                                         inc.b_from, inc.b_to)});
    }
  }
  if (v.samples == 0) v.outcome = Outcome::kInconclusive;
  v.metrics = {{"tol_mono", res.tol_mono},
               {"lipschitz_b", res.lipschitz_b},
               {"vmax", res.vmax},
               {"ensemble", static_cast<double>(members)},
               {"starts", static_cast<double>(starts.size())},
               {"dt", options.sim.dt},
               {"horizon", options.sim.horizon}};
  return res;
}

}  // namespace invcheck
