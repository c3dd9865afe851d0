#pragma once

#include <optional>
#include <string>
#include <vector>

#include "invcheck/geometry.h"

namespace invcheck {

enum class FunctionClass { kLsc, kLipschitz, kLipschitzRegular, kNonpathological, kC1 };

const char* class_name(FunctionClass c);
std::optional<FunctionClass> parse_class(std::string_view name);
// Lipschitz or better.
bool is_lipschitz(FunctionClass c);
// Regular in the sense of the epigraph (C1 functions are regular).
bool is_regular(FunctionClass c);
bool is_nonpathological(FunctionClass c);

// Scalar function given by region-guarded pieces. The value at x is the
// minimum over pieces whose guard contains x (within tau); for continuous
// classes the active pieces agree, and for lsc functions this picks the lower
// branch on guard boundaries.
class PiecewiseFunction {
 public:
  struct Piece {
    ConstraintSet guard;
    Expression expr;
  };

  PiecewiseFunction() = default;
  PiecewiseFunction(std::vector<Piece> pieces, FunctionClass cls, int dimension);
  static PiecewiseFunction single(Expression expr, FunctionClass cls);

  int dimension() const { return dimension_; }
  FunctionClass function_class() const { return class_; }
  const std::vector<Piece>& pieces() const { return pieces_; }

  double value(const Vec& x, double tau = 1e-9) const;
  std::vector<int> active_pieces(const Vec& x, double tau = 1e-9) const;
  PiecewiseFunction scaled(double c) const;

  // Coverage and overlap-continuity problems found on a k-per-axis grid.
  std::vector<std::string> validate(const Box& box, int k) const;

 private:
  std::vector<Piece> pieces_;
  FunctionClass class_ = FunctionClass::kC1;
  int dimension_ = 0;
};

struct GradientPolytope {
  std::vector<Vec> vertices;

  // Range of <z, d> over the hull.
  std::pair<double, double> support(const Vec& d) const;
};

// Gradients of the smooth branches of every active piece at x.
GradientPolytope clarke_gradient(const PiecewiseFunction& b, const Vec& x, double tau = 1e-9);

// epi B intersected with C x R, as a set in R^(n+1) with r the last coordinate.
// The box, when given, is extended by the sampled range of B.
ConstraintSet epigraph(const PiecewiseFunction& b, const ConstraintSet& c);

// (eta, -1) against the proximal normal cone of epi B at (x, B(x)).
ConeQueryResult proximal_subdifferential_test(const PiecewiseFunction& b, const Vec& x,
                                              const Vec& eta, const Tolerances& tol = {});

Verdict is_function_regular_at(const PiecewiseFunction& b, const Vec& x, int budget,
                               const Tolerances& tol = {});

// min over t in {1e-2 * 2^-k, k = 0..20} of (B(x + t) - B(x)) / t, for n = 1.
double dini_derivative(const PiecewiseFunction& b, double x);

// Largest Clarke-gradient vertex norm on a k-per-axis grid of the box. For
// lsc functions this is the largest piece-gradient norm (jumps excluded).
double lipschitz_estimate(const PiecewiseFunction& b, const Box& box, int k = 21);

// Distance of B(x) - B(y) to the set of <z, x - y> over gradient polytopes
// along a `grid`-point discretisation of the segment; adjacent grid points
// are merged so kinks between them are represented.
double lebourg_gap(const PiecewiseFunction& b, const Vec& x, const Vec& y, int grid = 1000);

struct DensityHit {
  Vec point;
  Vec eta;
  double lambda = 0.0;
};

// Looks for x' in x + radius * grid (k per axis) with a proximal normal
// (eta', -lambda), lambda > 0, to epi B at (x', B(x')).
std::optional<DensityHit> proximal_density_search(const PiecewiseFunction& b, const Vec& x,
                                                  double radius = 1e-2, int k = 5,
                                                  const Tolerances& tol = {});

}  // namespace invcheck
