#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "invcheck/flows.h"

namespace invcheck {

enum class ConditionId {
  kProxCone,
  kProxPt,
  kProxInt,
  kClarke,
  kClarkeNp,
  kClarkeInt,
  kClarkeNpInt,
  kGradAeInt,
  kGrad,
  kGradInt,
};

enum class AssumptionId { kA1, kM1, kM1Prime, kM2, kA2, kA3, kA4, kA5 };

// Where a condition is quantified: over the nontrivial-start set or int(C).
enum class Domain { kCtilde, kInterior };

const char* condition_name(ConditionId id);
const char* assumption_name(AssumptionId id);
std::optional<ConditionId> parse_condition(std::string_view name);
std::optional<AssumptionId> parse_assumption(std::string_view name);
Domain condition_domain(ConditionId id);
const std::vector<ConditionId>& all_conditions();
const std::vector<AssumptionId>& all_assumptions();

// The triple (C, F, B) plus the sampling box and numerical settings.
struct System {
  ConstraintSet c;
  VelocityMap f;
  PiecewiseFunction b;
  Box box;
  Tolerances tol;
  int resolution = 10;  // barycentric resolution for F(x) samples
};

struct CheckOptions {
  int directions_per_dim = 64;  // N^P / proximal-subgradient direction budget
  int jobs = 1;
  SimulationOptions sim;  // for the simulation-based assumptions
  std::uint64_t seed = 1;
};

struct LabeledPoint {
  Vec x;
  bool interior = false;  // C.violation(x) < -membership tolerance
  bool boundary = false;  // |C.violation(x)| <= membership tolerance
  CtildeResult ctilde;
};

// Box grid points (k per axis) that lie in cl(C).
std::vector<Vec> closure_grid(const ConstraintSet& c, const Box& box, int k);

// Points of the boundary of C found on the grid lines of a k-per-axis box
// grid: each primitive is sampled along every grid line, sign changes are
// bisected, and exact zeros are kept; only points on the boundary of C are
// returned, deduplicated, in grid order.
std::vector<Vec> boundary_grid(const ConstraintSet& c, const Box& box, int k);

std::vector<LabeledPoint> label_points(const System& sys, const std::vector<Vec>& points,
                                       int jobs = 1);

Verdict check_condition(const System& sys, ConditionId id, const std::vector<LabeledPoint>& grid,
                        const CheckOptions& options = {});

// Continuity diagnostics of F on a box grid, shared by A1 and the theory table.
struct FDiagnostics {
  bool continuous = false;
  bool lipschitz = false;
  ContinuityReport report;
};

FDiagnostics diagnose_f(const System& sys, int k = 11);

Verdict check_assumption(const System& sys, AssumptionId id, const std::vector<LabeledPoint>& grid,
                         const FDiagnostics& fdiag, const CheckOptions& options = {});

enum class Direction { kSufficient, kNecessary, kEquivalent, kNone };

const char* direction_name(Direction d);

// One implication between a condition and the nonincrease property, valid
// under the listed hypotheses. Hypothesis names: class predicates
// ("lipschitz", "regular", "nonpathological", "C1"), F diagnostics
// ("F-continuous", "F-lipschitz"), "Ctilde-open", and assumption ids.
struct TheoryRow {
  std::string id;
  std::string statement;
  ConditionId condition;
  Direction direction;
  std::vector<std::string> hypotheses;
};

const std::vector<TheoryRow>& theory_table();

struct Hypothesis {
  std::string name;
  bool holds = false;
  std::string basis;  // "class tag", "sample-based", "simulation-based", "not checked"
};

struct Conclusion {
  std::string rule;  // TheoryRow id, or "none"
  std::string statement;
  Direction direction = Direction::kNone;
  std::optional<ConditionId> condition;
  Outcome condition_outcome = Outcome::kInconclusive;
  // What the applied row says about nonincrease: "holds", "fails" or "undetermined".
  std::string property = "undetermined";
  std::vector<Hypothesis> hypotheses;
};

// Picks the strongest row whose hypotheses hold and whose direction says
// something given the condition verdict: equivalences first, then
// sufficiency when the condition holds or necessity when it is violated;
// ties go to table order.
Conclusion apply_theory(const System& sys, const std::map<ConditionId, Verdict>& conditions,
                        const std::map<AssumptionId, Verdict>& assumptions,
                        const FDiagnostics& fdiag, bool ctilde_open);

}  // namespace invcheck
