#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace invcheck {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Axis-aligned sampling box.
struct Box {
  Vec lo;
  Vec hi;

  int dimension() const { return static_cast<int>(lo.size()); }
  bool contains(const Vec& x, double slack = 0.0) const;
  Vec clamp(const Vec& x) const;
  // Regular grid with `k` points per axis (k >= 2), row-major in the last axis.
  std::vector<Vec> grid(int k) const;
  Vec extent() const { return hi - lo; }
};

// A point outside every guard of a piecewise definition.
class UncoveredPoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Outcome { kHolds, kViolated, kInconclusive };

const char* outcome_name(Outcome o);

// Numerical tolerances shared by every checker. Scenario files may override
// any of them by name.
struct Tolerances {
  double membership = 1e-9;   // leaf slack for g <= 0 and |g| = 0
  double tangent = 1e-4;      // contingent-cone quotient threshold
  double normal = 1e-4;       // proximal-normal distance mismatch
  double duality = 1e-3;      // normal/tangent inner products
  double condition = 1e-6;    // infinitesimal-condition inner products
  double constancy = 1e-6;    // "exists c" clause of the nonpathological tests
  double kink = 1e-12;        // expression switching-surface detection
  double step_slack = 1e-12;  // simulator: allowed growth of constraint violation per step
  double lsc_jump = 0.5;      // oracle: absolute per-step increase always reported for lsc B
};

struct Witness {
  Vec point;
  Vec eta;
  Vec zeta;
  double value = 0.0;
  std::string note;
};

// Result of a condition, assumption or oracle check. `samples` counts the
// evaluated work items; `unknown` counts points whose domain label could not
// be decided and were evaluated anyway.
struct Verdict {
  Outcome outcome = Outcome::kHolds;
  std::vector<Witness> witnesses;
  std::size_t samples = 0;
  std::size_t inconclusive = 0;
  std::size_t unknown = 0;
  std::string proxy = "exact";
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::string> notes;
};

// Deterministic seed splitting: root seed XOR a 64-bit mix of the index.
std::uint64_t split_seed(std::uint64_t root, std::uint64_t index);

// Deterministic unit directions in R^n. For n == 2 the directions are evenly
// spaced angles; otherwise they come from a seeded Gaussian normalization.
std::vector<Vec> sphere_directions(int n, int count, std::uint64_t seed = 0x5eed);

std::string format_vec(const Vec& v);

}  // namespace invcheck
