#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "invcheck/common.h"
#include "invcheck/expr.h"

namespace invcheck {

enum class Relation { kLessEqual, kEqual };

// Closed set described by a union/intersection tree over primitive
// constraints g(x) <= 0 and g(x) = 0. Copies share structure and the lazily
// built projection cache.
class ConstraintSet {
 public:
  enum class Kind { kLeaf, kUnion, kIntersection };

  struct Leaf {
    Expression g;
    Relation rel = Relation::kLessEqual;
  };

  ConstraintSet() = default;

  static ConstraintSet leaf(Expression g, Relation rel);
  static ConstraintSet unite(std::vector<ConstraintSet> parts);
  static ConstraintSet intersect(std::vector<ConstraintSet> parts);
  static ConstraintSet whole_space(int dimension);

  int dimension() const;
  Kind kind() const;
  const Leaf& leaf_data() const;
  const std::vector<ConstraintSet>& children() const;
  bool empty() const { return data_ == nullptr; }

  bool contains(const Vec& x, double tau = 1e-9) const;
  // Signed violation: <= 0 inside. Inequality leaves contribute g, equality
  // leaves |g|; unions take the minimum and intersections the maximum.
  double violation(const Vec& x) const;

  // The same set read as a subset of R^dimension (extra coordinates free).
  ConstraintSet lifted(int dimension) const;

  // Box used to seed projections from a grid. Returns a copy with a fresh cache.
  ConstraintSet with_box(const Box& box) const;
  const std::optional<Box>& box() const;

  std::string to_string() const;

  struct Data;
  struct Cache;

 private:
  std::shared_ptr<const Data> data_;
  std::shared_ptr<Cache> cache_;
  std::optional<Box> box_;

  friend struct ProjectionEngine;
};

struct Projection {
  bool ok = false;
  double distance = 0.0;
  Vec point;
};

struct ProjectOptions {
  // Stop as soon as a feasible point closer than this is found.
  double stop_below = -1.0;
  // Additional Newton seed, usually the base point of a cone query.
  const Vec* hint = nullptr;
};

// Euclidean projection onto the set. Each union branch is an intersection of
// smooth primitives; the projection onto a branch is found by solving the
// KKT system for every admissible active subset with Newton's method from
// the query point, the hint and, for far queries, nearby grid anchors.
Projection distance_and_project(const ConstraintSet& s, const Vec& y,
                                const ProjectOptions& options = {});

struct ConeQueryResult {
  bool member = false;
  bool inconclusive = false;
  double residual = 0.0;
  double h_at_min = 0.0;
  bool analytic = false;
  // Proximal-normal queries: the normal realized by the projection at the
  // accepting radius, (y - p)/|y - p|.
  Vec realized;
};

// Geometric step grid 1e-2 * 2^-k, k = 0..20.
const std::vector<double>& tangent_step_grid();

ConeQueryResult in_contingent_cone(const ConstraintSet& s, const Vec& x, const Vec& v,
                                   const Tolerances& tol = {});
ConeQueryResult in_contingent_cone_numeric(const ConstraintSet& s, const Vec& x, const Vec& v,
                                           const Tolerances& tol = {});
// Returns nullopt when the analytic rule does not apply at x.
std::optional<ConeQueryResult> in_contingent_cone_analytic(const ConstraintSet& s, const Vec& x,
                                                           const Vec& v,
                                                           const Tolerances& tol = {});

// The union of the projection cells of s that come within `radius` of x.
// Inside the ball of that radius around x it agrees with s, and projections of
// points within radius/2 of x are unchanged.
ConstraintSet localized(const ConstraintSet& s, const Vec& x, double radius);

// Member when the distance from x + r u to the set equals r within the normal
// tolerance, for the first radius r in {1e-3, 1e-2, 1e-1} whose projection
// succeeds.
ConeQueryResult in_proximal_normal_cone(const ConstraintSet& s, const Vec& x, const Vec& zeta,
                                        const Tolerances& tol = {});

ConeQueryResult in_hypertangent_cone(const ConstraintSet& s, const Vec& x, const Vec& v,
                                     const Tolerances& tol = {});

// Compares the contingent cone with the Clarke tangent cone on sampled
// directions. Witness: point x, zeta = the offending direction.
Verdict is_set_regular_at(const ConstraintSet& s, const Vec& x, int direction_budget,
                          const Tolerances& tol = {});

// Gradients of the primitives active at x (|g| <= tau), lifted to the set's
// dimension; kinked primitives are expanded into their smooth branches.
std::vector<Vec> active_gradients(const ConstraintSet& s, const Vec& x, double tau = 1e-9);

}  // namespace invcheck
