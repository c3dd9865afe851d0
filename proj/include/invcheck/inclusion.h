#pragma once

#include <vector>

#include "invcheck/geometry.h"

namespace invcheck {

// One vertex field: n expressions giving a velocity vector.
using VectorField = std::vector<Expression>;

// Set-valued map whose image at x is the convex hull of the vertex fields of
// every branch whose guard contains x.
class VelocityMap {
 public:
  struct Branch {
    ConstraintSet guard;
    std::vector<VectorField> vertices;
  };

  VelocityMap() = default;
  VelocityMap(std::vector<Branch> branches, int dimension);
  static VelocityMap single(std::vector<VectorField> vertices, int dimension);

  int dimension() const { return dimension_; }
  const std::vector<Branch>& branches() const { return branches_; }

  // Vertex velocities (duplicates removed); throws UncoveredPoint.
  std::vector<Vec> image(const Vec& x, double tau = 1e-9) const;

  // Coverage and evaluation problems on a k-per-axis grid.
  std::vector<std::string> validate(const Box& box, int k) const;

 private:
  std::vector<Branch> branches_;
  int dimension_ = 0;
};

struct VelocitySample {
  std::vector<double> weights;
  Vec velocity;
  bool admissible = false;
  bool inconclusive = false;
  double residual = 0.0;
};

// Barycentric weights with denominator q over m vertices, in lexicographic
// order; vertices are the entries with a single weight 1.
std::vector<std::vector<double>> barycentric_grid(int m, int q);

// Every barycentric sample of the image flagged against T_C(x).
std::vector<VelocitySample> admissible_velocities(const VelocityMap& f, const ConstraintSet& c,
                                                  const Vec& x, int q = 10,
                                                  const Tolerances& tol = {});

// Euclidean distance from a to the convex hull of the points.
double distance_to_hull(const std::vector<Vec>& points, const Vec& a);

// sup over a in A of the distance from a to hull(B).
double hull_excess(const std::vector<Vec>& a, const std::vector<Vec>& b);

struct ContinuityReport {
  double lipschitz = 0.0;   // max Hausdorff(image x, image y) / |x - y|
  double usc_excess = 0.0;  // max excess of image(y) over image(x) at the smallest offsets
  double lsc_excess = 0.0;  // max excess of image(x) over image(y) at the smallest offsets
  // Excesses above 1e-3: point x, zeta = the nearby y, note "usc" or "lsc".
  std::vector<Witness> violations;
};

// Images at y = x + s * u for 16 directions u and s in {rho, 1e-2 rho, 1e-4 rho};
// uncovered y are skipped. Semicontinuity excesses use the smallest offset.
ContinuityReport continuity_diagnostic(const VelocityMap& f, const std::vector<Vec>& points,
                                       double rho);

}  // namespace invcheck
