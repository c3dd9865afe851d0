#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "invcheck/inclusion.h"
#include "invcheck/nonsmooth.h"

namespace invcheck {

enum class StrategyKind { kVertex, kRandomHull, kTangential };

// How the simulator picks a velocity from the image at each step. `vertex`
// is the vertex index for kVertex and the bias vertex for kTangential (taken
// modulo the number of image vertices).
struct Strategy {
  StrategyKind kind = StrategyKind::kVertex;
  int vertex = 0;

  std::string name() const;
};

// The j-th member of an oracle ensemble: vertex, random-hull and tangential
// strategies in turn, with the vertex index advancing every third member.
Strategy ensemble_strategy(int j);

enum class Termination { kHorizon, kNoAdmissibleVelocity, kProjectionFailure, kUncovered, kLeftBox };

const char* termination_name(Termination t);

struct SimulationOptions {
  double dt = 1e-3;
  double horizon = 2.0;
  int max_bisections = 40;
  int resolution = 10;
  std::optional<Box> box;  // stop once a state leaves it
  Tolerances tol;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  // Per step k (states[k] -> states[k+1]): barycentric weights over
  // image(states[k]) and the resulting velocity.
  std::vector<std::vector<double>> weights;
  std::vector<Vec> velocities;
  Termination reason = Termination::kHorizon;
};

// Explicit Euler with boundary bisection and tangential re-selection.
// A stepped point is accepted when C.violation stays at or below
// max(step_slack, violation of x0); otherwise the step is bisected onto the
// boundary and the next velocity is re-selected among the admissible samples.
Trajectory simulate(const ConstraintSet& c, const VelocityMap& f, const Vec& x0,
                    const Strategy& strategy, const SimulationOptions& options,
                    std::uint64_t seed);

// Largest image-vertex norm on a k-per-axis grid of the box.
double velocity_bound(const VelocityMap& f, const Box& box, int k = 21);

// Post-hoc check of the solution invariants: start in cl(C) within the
// membership tolerance, interior states within 10 dt vmax of C, steps of
// length at most dt vmax, and velocities within 1e-9 of the image hull.
std::vector<std::string> check_trajectory(const Trajectory& traj, const ConstraintSet& c,
                                          const VelocityMap& f, double vmax, double dt,
                                          const Tolerances& tol = {});

// CSV with header t,x1..xn,B and 17 significant digits; B is left empty where
// it cannot be evaluated.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, const PiecewiseFunction& b);

enum class CtildeLabel { kNontrivial, kTrivialOnly, kUnknown };
enum class CtildeRule { kEmptyIntersection, kNeighborhood, kHypertangent, kForwardProbe, kNone };

const char* label_name(CtildeLabel l);
const char* rule_name(CtildeRule r);

struct CtildeResult {
  CtildeLabel label = CtildeLabel::kUnknown;
  CtildeRule rule = CtildeRule::kNone;
};

// Rules in order: no admissible velocity (trivial-only); admissible
// velocities throughout a small shell (nontrivial); every image vertex
// hypertangent (nontrivial); every admissible direction leads, at radii 1e-1
// and 1e-2, to points without admissible velocities (trivial-only).
CtildeResult classify_nontrivial(const ConstraintSet& c, const VelocityMap& f, const Vec& x,
                                 const Tolerances& tol = {}, int resolution = 10);

// For each boundary sample that is not trivial-only, eight ensemble
// trajectories must lie in int(K) (K.violation < 0) for their first ten steps.
Verdict is_precontractive(const ConstraintSet& c, const VelocityMap& f, const ConstraintSet& k,
                          const std::vector<Vec>& boundary_samples,
                          const SimulationOptions& options = {}, std::uint64_t seed = 1);

struct OracleOptions {
  int ensemble = 8;
  SimulationOptions sim;
  std::uint64_t seed = 1;
  int jobs = 1;
};

struct OracleResult {
  Verdict verdict;
  double tol_mono = 0.0;
  double lipschitz_b = 0.0;
  double vmax = 0.0;
  // Trajectory holding the first violation in (start, member, step) order.
  std::optional<Trajectory> witness_trajectory;
};

// Brute-force check that B is nonincreasing along simulated solutions.
// Requires options.sim.box (used for the bounds on B and F). Witness: point
// = state at the later step, zeta = state at the earlier step, eta =
// (t_j, t_k), value = B(t_k) - B(t_j); the note names start, member and
// strategy.
OracleResult monotonicity_oracle(const ConstraintSet& c, const VelocityMap& f,
                                 const PiecewiseFunction& b, const std::vector<Vec>& starts,
                                 const OracleOptions& options);

}  // namespace invcheck
