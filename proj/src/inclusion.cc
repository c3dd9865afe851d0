#include "invcheck/inclusion.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace invcheck {

namespace {

bool is_whole_space(const ConstraintSet& s) {
  return s.kind() == ConstraintSet::Kind::kIntersection && s.children().empty();
}

Vec evaluate_field(const VectorField& field, const Vec& x) {
  Vec v(static_cast<Eigen::Index>(field.size()));
  for (std::size_t i = 0; i < field.size(); ++i) v(static_cast<Eigen::Index>(i)) = field[i].evaluate(x);
  return v;
}

// Distance from a to the affine hull of the chosen points, or +inf when the
// nearest affine point has a negative barycentric weight.
double simplex_distance(const std::vector<Vec>& pts, const std::vector<int>& idx, const Vec& a) {
  const Vec& v0 = pts[idx[0]];
  if (idx.size() == 1) return (a - v0).norm();
  Mat d(v0.size(), static_cast<Eigen::Index>(idx.size() - 1));
  for (std::size_t j = 1; j < idx.size(); ++j) d.col(static_cast<Eigen::Index>(j - 1)) = pts[idx[j]] - v0;
  const Vec mu = d.completeOrthogonalDecomposition().solve(a - v0);
  if ((mu.array() < -1e-12).any() || mu.sum() > 1.0 + 1e-12) {
    return std::numeric_limits<double>::infinity();
  }
  return (v0 + d * mu - a).norm();
}

void for_each_subset(int m, int k, std::vector<int>& cur, int start,
                     const std::function<void(const std::vector<int>&)>& fn) {
  if (static_cast<int>(cur.size()) == k) {
    fn(cur);
    return;
  }
  for (int i = start; i < m; ++i) {
    cur.push_back(i);
    for_each_subset(m, k, cur, i + 1, fn);
    cur.pop_back();
  }
}

void compositions(int m, int left, std::vector<int>& cur,
                  std::vector<std::vector<double>>& out, int q) {
  if (static_cast<int>(cur.size()) == m - 1) {
    std::vector<double> w;
    for (int c : cur) w.push_back(static_cast<double>(c) / q);
    w.push_back(static_cast<double>(left) / q);
    out.push_back(std::move(w));
    return;
  }
  for (int c = left; c >= 0; --c) {
    cur.push_back(c);
    compositions(m, left - c, cur, out, q);
    cur.pop_back();
  }
}

}  // namespace

VelocityMap::VelocityMap(std::vector<Branch> branches, int dimension)
    : branches_(std::move(branches)), dimension_(dimension) {
  if (branches_.empty()) throw std::invalid_argument("velocity map without branches");
  for (const auto& b : branches_) {
    if (b.guard.dimension() != dimension) throw std::invalid_argument("guard dimension mismatch");
    if (b.vertices.empty()) throw std::invalid_argument("branch without vertex fields");
    for (const auto& f : b.vertices) {
      if (static_cast<int>(f.size()) != dimension) {
        throw std::invalid_argument("vertex field has the wrong number of components");
      }
      for (const auto& e : f) {
        if (e.dimension() != dimension) throw std::invalid_argument("field dimension mismatch");
      }
    }
  }
}

VelocityMap VelocityMap::single(std::vector<VectorField> vertices, int dimension) {
  return VelocityMap({{ConstraintSet::whole_space(dimension), std::move(vertices)}}, dimension);
}

std::vector<Vec> VelocityMap::image(const Vec& x, double tau) const {
  std::vector<Vec> out;
  bool covered = false;
  for (const auto& b : branches_) {
    if (!is_whole_space(b.guard) && !b.guard.contains(x, tau)) continue;
    covered = true;
    for (const auto& f : b.vertices) {
      Vec v = evaluate_field(f, x);
      const bool dup = std::any_of(out.begin(), out.end(), [&](const Vec& w) { return w == v; });
      if (!dup) out.push_back(std::move(v));
    }
  }
  if (!covered) throw UncoveredPoint("no velocity branch covers " + format_vec(x));
  return out;
}

std::vector<std::string> VelocityMap::validate(const Box& box, int k) const {
  std::vector<std::string> problems;
  for (const auto& x : box.grid(k)) {
    try {
      image(x);
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  return problems;
}

std::vector<std::vector<double>> barycentric_grid(int m, int q) {
  std::vector<std::vector<double>> out;
  if (m <= 0) return out;
  if (m == 1) return {{1.0}};
  std::vector<int> cur;
  compositions(m, q, cur, out, q);
  return out;
}

std::vector<VelocitySample> admissible_velocities(const VelocityMap& f, const ConstraintSet& c,
                                                  const Vec& x, int q, const Tolerances& tol) {
  const std::vector<Vec> verts = f.image(x, tol.membership);
  std::vector<VelocitySample> out;
  for (auto& w : barycentric_grid(static_cast<int>(verts.size()), q)) {
    VelocitySample s;
    s.velocity = Vec::Zero(x.size());
    for (std::size_t i = 0; i < verts.size(); ++i) s.velocity += w[i] * verts[i];
    s.weights = std::move(w);
    const ConeQueryResult r = in_contingent_cone(c, x, s.velocity, tol);
    s.admissible = r.member;
    s.inconclusive = r.inconclusive;
    s.residual = r.residual;
    out.push_back(std::move(s));
  }
  return out;
}

double distance_to_hull(const std::vector<Vec>& points, const Vec& a) {
  if (points.empty()) return std::numeric_limits<double>::infinity();
  const int m = static_cast<int>(points.size());
  const int kmax = std::min<int>(m, static_cast<int>(a.size()) + 1);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> cur;
  for (int k = 1; k <= kmax; ++k) {
    for_each_subset(m, k, cur, 0, [&](const std::vector<int>& idx) {
      best = std::min(best, simplex_distance(points, idx, a));
    });
  }
  return best;
}

double hull_excess(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  double worst = 0.0;
  for (const auto& p : a) worst = std::max(worst, distance_to_hull(b, p));
  return worst;
}

ContinuityReport continuity_diagnostic(const VelocityMap& f, const std::vector<Vec>& points,
                                       double rho) {
  ContinuityReport rep;
  const auto dirs = sphere_directions(f.dimension(), 16, 0xc0de);
  const double offsets[] = {rho, 1e-2 * rho, 1e-4 * rho};
  for (const auto& x : points) {
    std::vector<Vec> ix;
    try {
      ix = f.image(x);
    } catch (const UncoveredPoint&) {
      continue;
    }
    for (const auto& u : dirs) {
      for (double s : offsets) {
        const Vec y = x + s * u;
        std::vector<Vec> iy;
        try {
          iy = f.image(y);
        } catch (const UncoveredPoint&) {
          continue;
        }
        const double up = hull_excess(iy, ix);
        const double down = hull_excess(ix, iy);
        rep.lipschitz = std::max(rep.lipschitz, std::max(up, down) / s);
        if (s != offsets[2]) continue;
        rep.usc_excess = std::max(rep.usc_excess, up);
        rep.lsc_excess = std::max(rep.lsc_excess, down);
        if (up > 1e-3) rep.violations.push_back({x, Vec(), y, up, "usc"});
        if (down > 1e-3) rep.violations.push_back({x, Vec(), y, down, "lsc"});
      }
    }
  }
  return rep;
}

}  // namespace invcheck
