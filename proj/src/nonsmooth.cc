#include "invcheck/nonsmooth.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace invcheck {

namespace {

constexpr struct {
  FunctionClass cls;
  const char* name;
} kClassNames[] = {
    {FunctionClass::kLsc, "lsc"},
    {FunctionClass::kLipschitz, "lipschitz"},
    {FunctionClass::kLipschitzRegular, "lipschitz-regular"},
    {FunctionClass::kNonpathological, "nonpathological"},
    {FunctionClass::kC1, "C1"},
};

bool is_whole_space(const ConstraintSet& s) {
  return s.kind() == ConstraintSet::Kind::kIntersection && s.children().empty();
}

void add_unique(std::vector<Vec>& out, const Vec& g) {
  for (const auto& v : out) {
    if ((v - g).lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + g.norm())) return;
  }
  out.push_back(g);
}

// Gradients of the smooth branches of the given pieces; no class check.
std::vector<Vec> piece_gradients(const PiecewiseFunction& b, const std::vector<int>& active,
                                 const Vec& x) {
  std::vector<Vec> out;
  for (int i : active) {
    const auto branches = b.pieces()[i].expr.smooth_branches(x);
    if (branches.empty()) throw KinkError("could not split piece " + std::to_string(i));
    for (const auto& e : branches) add_unique(out, e.gradient_any_branch(x));
  }
  return out;
}

Vec append(const Vec& x, double r) {
  Vec z(x.size() + 1);
  z.head(x.size()) = x;
  z(x.size()) = r;
  return z;
}

}  // namespace

const char* class_name(FunctionClass c) {
  for (const auto& e : kClassNames) {
    if (e.cls == c) return e.name;
  }
  return "?";
}

std::optional<FunctionClass> parse_class(std::string_view name) {
  for (const auto& e : kClassNames) {
    if (name == e.name) return e.cls;
  }
  return std::nullopt;
}

bool is_lipschitz(FunctionClass c) { return c != FunctionClass::kLsc; }

bool is_regular(FunctionClass c) {
  return c == FunctionClass::kLipschitzRegular || c == FunctionClass::kC1;
}

// C1 and regular functions are nonpathological as well.
bool is_nonpathological(FunctionClass c) {
  return c == FunctionClass::kNonpathological || is_regular(c);
}

PiecewiseFunction::PiecewiseFunction(std::vector<Piece> pieces, FunctionClass cls, int dimension)
    : pieces_(std::move(pieces)), class_(cls), dimension_(dimension) {
  if (pieces_.empty()) throw std::invalid_argument("piecewise function without pieces");
  for (const auto& p : pieces_) {
    if (p.guard.dimension() != dimension || p.expr.dimension() != dimension) {
      throw std::invalid_argument("piece dimension mismatch");
    }
  }
}

PiecewiseFunction PiecewiseFunction::single(Expression expr, FunctionClass cls) {
  const int n = expr.dimension();
  return PiecewiseFunction({{ConstraintSet::whole_space(n), std::move(expr)}}, cls, n);
}

std::vector<int> PiecewiseFunction::active_pieces(const Vec& x, double tau) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (pieces_[i].guard.contains(x, tau)) out.push_back(static_cast<int>(i));
  }
  return out;
}

double PiecewiseFunction::value(const Vec& x, double tau) const {
  const auto active = active_pieces(x, tau);
  if (active.empty()) throw UncoveredPoint("no piece covers " + format_vec(x));
  double v = std::numeric_limits<double>::infinity();
  for (int i : active) v = std::min(v, pieces_[i].expr.evaluate(x));
  return v;
}

PiecewiseFunction PiecewiseFunction::scaled(double c) const {
  std::vector<Piece> out;
  for (const auto& p : pieces_) out.push_back({p.guard, c * p.expr});
  return PiecewiseFunction(std::move(out), class_, dimension_);
}

std::vector<std::string> PiecewiseFunction::validate(const Box& box, int k) const {
  std::vector<std::string> problems;
  for (const auto& x : box.grid(k)) {
    const auto active = active_pieces(x);
    if (active.empty()) {
      problems.push_back("no piece covers " + format_vec(x));
      continue;
    }
    if (!is_lipschitz(class_) || active.size() < 2) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int i : active) {
      const double v = pieces_[i].expr.evaluate(x);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > 1e-9 * std::max(1.0, std::fabs(lo))) {
      problems.push_back("pieces disagree by " + std::to_string(hi - lo) + " at " + format_vec(x));
    }
  }
  return problems;
}

std::pair<double, double> GradientPolytope::support(const Vec& d) const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& v : vertices) {
    const double s = v.dot(d);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return {lo, hi};
}

GradientPolytope clarke_gradient(const PiecewiseFunction& b, const Vec& x, double tau) {
  if (!is_lipschitz(b.function_class())) {
    throw std::invalid_argument("Clarke gradient requires a locally Lipschitz function");
  }
  const auto active = b.active_pieces(x, tau);
  if (active.empty()) throw UncoveredPoint("no piece covers " + format_vec(x));
  return {piece_gradients(b, active, x)};
}

ConstraintSet epigraph(const PiecewiseFunction& b, const ConstraintSet& c) {
  const int n = b.dimension();
  const Expression r = Expression::variable(n, n + 1);
  std::vector<ConstraintSet> branches;
  for (const auto& p : b.pieces()) {
    ConstraintSet below =
        ConstraintSet::leaf(p.expr.lifted(n + 1) - r, Relation::kLessEqual);
    if (is_whole_space(p.guard)) {
      branches.push_back(std::move(below));
    } else {
      branches.push_back(ConstraintSet::intersect({p.guard.lifted(n + 1), std::move(below)}));
    }
  }
  ConstraintSet epi = ConstraintSet::unite(std::move(branches));
  if (!is_whole_space(c)) epi = ConstraintSet::intersect({c.lifted(n + 1), std::move(epi)});

  if (!c.box()) return epi;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& x : c.box()->grid(n == 1 ? 41 : 21)) {
    try {
      const double v = b.value(x);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    } catch (const std::exception&) {
    }
  }
  if (!std::isfinite(lo)) {
    lo = -1.0;
    hi = 1.0;
  }
  return epi.with_box({append(c.box()->lo, lo - 1.0), append(c.box()->hi, hi + 1.0)});
}

ConeQueryResult proximal_subdifferential_test(const PiecewiseFunction& b, const Vec& x,
                                              const Vec& eta, const Tolerances& tol) {
  const ConstraintSet epi = epigraph(b, ConstraintSet::whole_space(b.dimension()));
  return in_proximal_normal_cone(epi, append(x, b.value(x, tol.membership)), append(eta, -1.0),
                                 tol);
}

Verdict is_function_regular_at(const PiecewiseFunction& b, const Vec& x, int budget,
                               const Tolerances& tol) {
  const ConstraintSet epi = epigraph(b, ConstraintSet::whole_space(b.dimension()));
  return is_set_regular_at(epi, append(x, b.value(x, tol.membership)), budget, tol);
}

double dini_derivative(const PiecewiseFunction& b, double x) {
  if (b.dimension() != 1) throw std::invalid_argument("Dini derivative needs a 1-D function");
  Vec p(1);
  p(0) = x;
  const double base = b.value(p);
  double best = std::numeric_limits<double>::infinity();
  for (double t : tangent_step_grid()) {
    p(0) = x + t;
    best = std::min(best, (b.value(p) - base) / t);
  }
  return best;
}

double lipschitz_estimate(const PiecewiseFunction& b, const Box& box, int k) {
  double best = 0.0;
  for (const auto& x : box.grid(k)) {
    const auto active = b.active_pieces(x);
    if (active.empty()) continue;
    for (const auto& g : piece_gradients(b, active, x)) best = std::max(best, g.norm());
  }
  return best;
}

double lebourg_gap(const PiecewiseFunction& b, const Vec& x, const Vec& y, int grid) {
  const double target = b.value(x) - b.value(y);
  const Vec d = x - y;
  std::pair<double, double> prev{0.0, 0.0};
  double gap = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= grid; ++k) {
    const Vec u = y + (static_cast<double>(k) / (grid + 1)) * d;
    const auto cur = clarke_gradient(b, u).support(d);
    double lo = cur.first;
    double hi = cur.second;
    if (k > 1) {
      lo = std::min(lo, prev.first);
      hi = std::max(hi, prev.second);
    }
    const double dist = target < lo ? lo - target : (target > hi ? target - hi : 0.0);
    gap = std::min(gap, dist);
    prev = cur;
  }
  return gap;
}

std::optional<DensityHit> proximal_density_search(const PiecewiseFunction& b, const Vec& x,
                                                  double radius, int k, const Tolerances& tol) {
  const int n = b.dimension();
  const ConstraintSet epi = epigraph(b, ConstraintSet::whole_space(n));
  Box local{x - Vec::Constant(n, radius), x + Vec::Constant(n, radius)};
  std::vector<Vec> lower;
  for (const auto& u : sphere_directions(n + 1, 32, 0xde75)) {
    if (u(n) < -0.1) lower.push_back(u);
  }
  for (const auto& p : local.grid(k)) {
    double bp;
    try {
      bp = b.value(p, tol.membership);
    } catch (const std::exception&) {
      continue;
    }
    const Vec base = append(p, bp);
    std::vector<Vec> candidates;
    const auto active = b.active_pieces(p, tol.membership);
    for (const auto& g : piece_gradients(b, active, p)) candidates.push_back(append(g, -1.0));
    candidates.insert(candidates.end(), lower.begin(), lower.end());
    for (const auto& c : candidates) {
      const ConeQueryResult q = in_proximal_normal_cone(epi, base, c, tol);
      if (!q.member) continue;
      const Vec& nrm = q.realized;
      if (nrm(n) >= -tol.normal) continue;
      const double lambda = -nrm(n);
      return DensityHit{p, Vec(nrm.head(n) / lambda), lambda};
    }
  }
  return std::nullopt;
}

}  // namespace invcheck
