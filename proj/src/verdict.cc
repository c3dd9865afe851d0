#include "invcheck/verdict.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

namespace invcheck {

namespace {

constexpr std::array<const char*, 10> kConditionNames = {
    "COND-PROX-CONE", "COND-PROX-PT",      "COND-PROX-INT",    "COND-CLARKE", "COND-CLARKE-NP",
    "COND-CLARKE-INT", "COND-CLARKE-NP-INT", "COND-GRAD-AE-INT", "COND-GRAD",   "COND-GRAD-INT"};

constexpr std::array<const char*, 8> kAssumptionNames = {"A1", "M1", "M1'", "M2",
                                                         "A2", "A3", "A4",  "A5"};

constexpr std::size_t kMaxWitnesses = 32;
// Twice the largest proximal-normal radius plus a margin.
constexpr double kLocalRadius = 0.25;

Vec append(const Vec& x, double r) {
  Vec z(x.size() + 1);
  z << x, r;
  return z;
}

ConstraintSet boxed(const ConstraintSet& c, const Box& box) {
  return c.box() ? c : c.with_box(box);
}

template <class Fn>
auto map_points(std::size_t count, int jobs, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out(count);
  auto work = [&](std::size_t i) { out[i] = fn(i); };
  if (jobs > 1) {
    tbb::task_arena arena(jobs);
    arena.execute([&] { tbb::parallel_for(std::size_t{0}, count, work); });
  } else {
    for (std::size_t i = 0; i < count; ++i) work(i);
  }
  return out;
}

struct PointOutcome {
  bool evaluated = false;
  bool unknown = false;
  std::optional<Witness> worst;
  std::size_t inconclusive = 0;
  std::size_t near = 0;
  std::size_t pairs = 0;
};

// Keeps the largest value; earlier witnesses win ties.
void offer(std::optional<Witness>& slot, Witness w) {
  if (!slot || w.value > slot->value) slot = std::move(w);
}

class PairTester {
 public:
  PairTester(const Vec& x, const Tolerances& tol, PointOutcome& out, const char* note)
      : x_(x), tol_(tol), out_(out), note_(note) {}

  void operator()(const Vec& eta, const Vec& zeta) {
    ++out_.pairs;
    const double ip = eta.dot(zeta);
    const double ne = eta.norm();
    const double nz = zeta.norm();
    const double bound = tol_.condition * ((ne > 1.0 && nz > 1.0) ? ne * nz : 1.0);
    if (ip > bound) {
      offer(out_.worst, Witness{x_, eta, zeta, ip, note_});
    } else if (std::fabs(ip) <= bound) {
      ++out_.near;
    }
  }

 private:
  const Vec& x_;
  const Tolerances& tol_;
  PointOutcome& out_;
  const char* note_;
};

Verdict aggregate(std::vector<PointOutcome> outcomes, std::size_t grid_points) {
  Verdict v;
  std::vector<Witness> ws;
  std::size_t near = 0, pairs = 0;
  for (auto& o : outcomes) {
    if (!o.evaluated) continue;
    ++v.samples;
    v.unknown += o.unknown;
    v.inconclusive += o.inconclusive;
    near += o.near;
    pairs += o.pairs;
    if (o.worst) ws.push_back(std::move(*o.worst));
  }
  std::stable_sort(ws.begin(), ws.end(),
                   [](const Witness& a, const Witness& b) { return a.value > b.value; });
  if (ws.size() > kMaxWitnesses) ws.resize(kMaxWitnesses);
  v.outcome = ws.empty() ? Outcome::kHolds : Outcome::kViolated;
  v.witnesses = std::move(ws);
  v.metrics = {{"grid_points", double(grid_points)},
               {"domain_points", double(v.samples)},
               {"pairs", double(pairs)},
               {"near_ties", double(near)}};
  if (v.samples == 0) v.notes.push_back("empty quantifier domain on the sampled grid");
  if (near > 0) {
    v.notes.push_back(
        fmt::format("{} inner products within the condition tolerance of zero counted as holding",
                    near));
  }
  if (v.unknown > 0) {
    v.notes.push_back(fmt::format("{} points with undecided nontrivial-start label were evaluated",
                                  v.unknown));
  }
  return v;
}

// Gradients of the smooth branches of the active pieces (any class).
std::vector<Vec> piece_gradients(const PiecewiseFunction& b, const Vec& x, double tau) {
  std::vector<Vec> out;
  for (int i : b.active_pieces(x, tau)) {
    for (const auto& br : b.pieces()[i].expr.smooth_branches(x)) {
      Vec g = br.gradient_any_branch(x);
      const bool dup = std::any_of(out.begin(), out.end(),
                                   [&](const Vec& h) { return (h - g).norm() <= 1e-12; });
      if (!dup) out.push_back(std::move(g));
    }
  }
  return out;
}

double max_norm(const std::vector<Vec>& vs) {
  double m = 0.0;
  for (const auto& v : vs) m = std::max(m, v.norm());
  return m;
}

bool can_be_positive(const Vec& zeta, const std::vector<Vec>& vs, double vmax) {
  // Realized normals differ from the sampled direction by a small rotation,
  // so a direction that is clearly obtuse to every velocity is skipped.
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& v : vs) best = std::max(best, zeta.dot(v));
  return best >= -0.05 * vmax;
}

std::vector<Vec> np_filter(const std::vector<Vec>& velocities, const std::vector<Vec>& grads,
                           double eps) {
  std::vector<Vec> out;
  for (const auto& v : velocities) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& g : grads) {
      lo = std::min(lo, g.dot(v));
      hi = std::max(hi, g.dot(v));
    }
    if (hi - lo <= eps) out.push_back(v);
  }
  return out;
}

std::vector<Vec> hull_samples(const std::vector<Vec>& verts, int q) {
  std::vector<Vec> out;
  for (const auto& w : barycentric_grid(static_cast<int>(verts.size()), q)) {
    Vec v = Vec::Zero(verts.front().size());
    for (std::size_t i = 0; i < verts.size(); ++i) v += w[i] * verts[i];
    out.push_back(std::move(v));
  }
  return out;
}

struct Admissible {
  std::vector<Vec> velocities;
  std::size_t inconclusive = 0;
};

Admissible admissible_set(const System& sys, const ConstraintSet& c, const Vec& x) {
  Admissible a;
  for (const auto& s : admissible_velocities(sys.f, c, x, sys.resolution, sys.tol)) {
    if (s.inconclusive) ++a.inconclusive;
    if (s.admissible) a.velocities.push_back(s.velocity);
  }
  return a;
}

// Candidate directions in R^(n+1) for proximal normals at (x, B(x)).
std::vector<Vec> normal_candidates(const System& sys, const ConstraintSet& s, const Vec& z,
                                   const Vec& x, int budget) {
  const int n = static_cast<int>(x.size());
  std::vector<Vec> out;
  for (const auto& g : piece_gradients(sys.b, x, sys.tol.membership)) {
    out.push_back(append(g, -1.0).normalized());
  }
  for (const auto& g : active_gradients(s, z, sys.tol.membership)) {
    if (g.norm() < 1e-12) continue;
    out.push_back(g.normalized());
    out.push_back(-g.normalized());
  }
  for (auto& u : sphere_directions(n + 1, budget * n, 0x9e0)) out.push_back(std::move(u));
  return out;
}

PointOutcome eval_prox_cone(const System& sys, const ConstraintSet& c, const ConstraintSet& epi,
                            const Vec& x, const CheckOptions& opt) {
  PointOutcome out;
  const Admissible adm = admissible_set(sys, c, x);
  out.inconclusive += adm.inconclusive;
  if (adm.velocities.empty()) return out;
  const int n = static_cast<int>(x.size());
  const double vmax = max_norm(adm.velocities);
  const Vec z = append(x, sys.b.value(x, sys.tol.membership));
  const ConstraintSet local = localized(epi, z, kLocalRadius);
  PairTester test(x, sys.tol, out, "proximal normal");
  for (const auto& u : normal_candidates(sys, local, z, x, opt.directions_per_dim)) {
    if (!can_be_positive(u.head(n), adm.velocities, vmax)) continue;
    const ConeQueryResult r = in_proximal_normal_cone(local, z, u, sys.tol);
    if (r.inconclusive) ++out.inconclusive;
    if (!r.member) continue;
    const Vec nu = r.realized.size() == u.size() ? r.realized : u;
    for (const auto& v : adm.velocities) test(nu.head(n), v);
  }
  return out;
}

PointOutcome eval_prox_interior(const System& sys, const ConstraintSet& epi, const Vec& x,
                                const CheckOptions& opt) {
  PointOutcome out;
  const auto image = sys.f.image(x, sys.tol.membership);
  const int n = static_cast<int>(x.size());
  const double vmax = max_norm(image);
  const Vec z = append(x, sys.b.value(x, sys.tol.membership));
  const ConstraintSet local = localized(epi, z, kLocalRadius);
  PairTester test(x, sys.tol, out, "proximal subgradient");
  for (const auto& u : normal_candidates(sys, local, z, x, opt.directions_per_dim)) {
    if (u[n] >= -sys.tol.normal) continue;
    if (!can_be_positive(u.head(n), image, vmax)) continue;
    const ConeQueryResult r = in_proximal_normal_cone(local, z, u, sys.tol);
    if (r.inconclusive) ++out.inconclusive;
    if (!r.member) continue;
    const Vec nu = r.realized.size() == u.size() ? r.realized : u;
    if (nu[n] >= -sys.tol.normal) continue;
    const Vec eta = nu.head(n) / -nu[n];
    for (const auto& v : image) test(eta, v);
  }
  return out;
}

PointOutcome eval_gradient_family(const System& sys, ConditionId id, const ConstraintSet& c,
                                  const Vec& x) {
  PointOutcome out;
  std::vector<Vec> grads = clarke_gradient(sys.b, x, sys.tol.membership).vertices;
  const char* note = "clarke vertex";
  if (id == ConditionId::kGrad || id == ConditionId::kGradInt || id == ConditionId::kGradAeInt) {
    note = "gradient";
    if (id == ConditionId::kGradAeInt) {
      for (const auto& g : grads) {
        if ((g - grads.front()).norm() > 1e-12) return out;  // no gradient at a kink
      }
      grads.resize(1);
    }
  }

  std::vector<Vec> velocities;
  switch (id) {
    case ConditionId::kClarke:
    case ConditionId::kClarkeNp:
    case ConditionId::kGrad: {
      const Admissible adm = admissible_set(sys, c, x);
      out.inconclusive += adm.inconclusive;
      velocities = adm.velocities;
      break;
    }
    case ConditionId::kClarkeNpInt:
      velocities = hull_samples(sys.f.image(x, sys.tol.membership), sys.resolution);
      break;
    default:
      velocities = sys.f.image(x, sys.tol.membership);
  }
  if (id == ConditionId::kClarkeNp || id == ConditionId::kClarkeNpInt) {
    note = "constancy-filtered clarke vertex";
    velocities = np_filter(velocities, grads, sys.tol.constancy);
  }
  PairTester test(x, sys.tol, out, note);
  for (const auto& g : grads) {
    for (const auto& v : velocities) test(g, v);
  }
  return out;
}

void require_class(const System& sys, ConditionId id) {
  const FunctionClass cls = sys.b.function_class();
  switch (id) {
    case ConditionId::kProxCone:
    case ConditionId::kProxPt:
    case ConditionId::kProxInt:
      return;
    case ConditionId::kGrad:
    case ConditionId::kGradInt:
      if (cls != FunctionClass::kC1) {
        throw std::invalid_argument(
            fmt::format("{} requires a C1 function, got {}", condition_name(id), class_name(cls)));
      }
      return;
    default:
      if (!is_lipschitz(cls)) {
        throw std::invalid_argument(fmt::format("{} requires a Lipschitz function, got {}",
                                                condition_name(id), class_name(cls)));
      }
  }
}

bool in_ctilde(const LabeledPoint& p) {
  return (p.interior || p.boundary) && p.ctilde.label != CtildeLabel::kTrivialOnly;
}

bool boundary_ctilde(const LabeledPoint& p) { return p.boundary && in_ctilde(p); }

// Closest point of C to x + r u; nullopt when the projection fails.
std::optional<Vec> nearby_point(const ConstraintSet& c, const Vec& x, const Vec& u, double r,
                                double tau) {
  const Vec y = x + r * u;
  if (c.contains(y, tau)) return y;
  ProjectOptions po;
  po.hint = &x;
  const Projection p = distance_and_project(c, y, po);
  if (!p.ok) return std::nullopt;
  return p.point;
}

bool on_boundary(const ConstraintSet& c, const Vec& y, double tau) {
  return std::fabs(c.violation(y)) <= tau;
}

Verdict finish_assumption(std::vector<PointOutcome> outcomes, std::size_t grid_points,
                          const char* proxy) {
  Verdict v = aggregate(std::move(outcomes), grid_points);
  v.proxy = proxy;
  v.metrics.erase(std::remove_if(v.metrics.begin(), v.metrics.end(),
                                 [](const auto& m) { return m.first == "pairs" ||
                                                            m.first == "near_ties"; }),
                  v.metrics.end());
  v.notes.erase(std::remove_if(v.notes.begin(), v.notes.end(),
                               [](const std::string& s) {
                                 return s.find("inner products") != std::string::npos;
                               }),
                v.notes.end());
  return v;
}

std::vector<Vec> unit_normal_parts(const ConstraintSet& epi, const Vec& z,
                                   const std::vector<Vec>& candidates, int n,
                                   const Tolerances& tol, std::size_t& inconclusive) {
  std::vector<Vec> out;
  for (const auto& u : candidates) {
    const ConeQueryResult r = in_proximal_normal_cone(epi, z, u, tol);
    if (r.inconclusive) ++inconclusive;
    if (!r.member) continue;
    const Vec nu = r.realized.size() == u.size() ? r.realized : u;
    const Vec zeta = nu.head(n);
    if (zeta.norm() > 1e-3) out.push_back(zeta.normalized());
  }
  return out;
}

const Verdict* find(const std::map<AssumptionId, Verdict>& m, AssumptionId id) {
  const auto it = m.find(id);
  return it == m.end() ? nullptr : &it->second;
}

}  // namespace

const char* condition_name(ConditionId id) { return kConditionNames[static_cast<int>(id)]; }
const char* assumption_name(AssumptionId id) { return kAssumptionNames[static_cast<int>(id)]; }

std::optional<ConditionId> parse_condition(std::string_view name) {
  for (std::size_t i = 0; i < kConditionNames.size(); ++i) {
    if (name == kConditionNames[i]) return static_cast<ConditionId>(i);
  }
  return std::nullopt;
}

std::optional<AssumptionId> parse_assumption(std::string_view name) {
  for (std::size_t i = 0; i < kAssumptionNames.size(); ++i) {
    if (name == kAssumptionNames[i]) return static_cast<AssumptionId>(i);
  }
  return std::nullopt;
}

Domain condition_domain(ConditionId id) {
  switch (id) {
    case ConditionId::kProxCone:
    case ConditionId::kClarke:
    case ConditionId::kClarkeNp:
    case ConditionId::kGrad:
      return Domain::kCtilde;
    default:
      return Domain::kInterior;
  }
}

const std::vector<ConditionId>& all_conditions() {
  static const std::vector<ConditionId> ids = [] {
    std::vector<ConditionId> v;
    for (std::size_t i = 0; i < kConditionNames.size(); ++i) v.push_back(ConditionId(i));
    return v;
  }();
  return ids;
}

const std::vector<AssumptionId>& all_assumptions() {
  static const std::vector<AssumptionId> ids = [] {
    std::vector<AssumptionId> v;
    for (std::size_t i = 0; i < kAssumptionNames.size(); ++i) v.push_back(AssumptionId(i));
    return v;
  }();
  return ids;
}

std::vector<Vec> closure_grid(const ConstraintSet& c, const Box& box, int k) {
  std::vector<Vec> out;
  for (auto& x : box.grid(k)) {
    if (c.contains(x)) out.push_back(std::move(x));
  }
  return out;
}

namespace {

void collect_leaves(const ConstraintSet& s, std::vector<Expression>& out) {
  if (s.kind() == ConstraintSet::Kind::kLeaf) {
    out.push_back(s.leaf_data().g);
    return;
  }
  for (const auto& ch : s.children()) collect_leaves(ch, out);
}

}  // namespace

std::vector<Vec> boundary_grid(const ConstraintSet& c, const Box& box, int k) {
  const int n = box.dimension();
  std::vector<Expression> leaves;
  collect_leaves(c, leaves);
  const double tau = 1e-9;

  // Line start points: the grid of the other n-1 axes, in grid order.
  std::vector<Vec> found;
  const auto points = box.grid(k);
  for (int axis = 0; axis < n; ++axis) {
    for (const auto& p : points) {
      if (p[axis] != box.lo[axis]) continue;
      auto at = [&](int i) {
        Vec y = p;
        y[axis] = box.lo[axis] + box.extent()[axis] * i / (k - 1);
        return y;
      };
      for (const auto& g : leaves) {
        double prev = g.evaluate(at(0));
        if (prev == 0.0) found.push_back(at(0));
        for (int i = 1; i < k; ++i) {
          const Vec y = at(i);
          const double cur = g.evaluate(y);
          if (cur == 0.0) {
            found.push_back(y);
          } else if (prev != 0.0 && std::signbit(prev) != std::signbit(cur)) {
            double a = box.lo[axis] + box.extent()[axis] * (i - 1) / (k - 1);
            double b = y[axis];
            double ga = prev;
            for (int it = 0; it < 100 && b - a > 1e-15 * std::max(1.0, std::fabs(a)); ++it) {
              const double m = 0.5 * (a + b);
              Vec q = y;
              q[axis] = m;
              const double gm = g.evaluate(q);
              if (gm == 0.0) {
                a = b = m;
                break;
              }
              if (std::signbit(gm) == std::signbit(ga)) {
                a = m;
                ga = gm;
              } else {
                b = m;
              }
            }
            Vec q = y;
            q[axis] = 0.5 * (a + b);
            found.push_back(std::move(q));
          }
          prev = cur;
        }
      }
    }
  }

  std::vector<Vec> out;
  for (auto& y : found) {
    if (!on_boundary(c, y, tau)) continue;
    const bool dup = std::any_of(out.begin(), out.end(),
                                 [&](const Vec& z) { return (z - y).norm() <= 1e-12; });
    if (!dup) out.push_back(std::move(y));
  }
  return out;
}

std::vector<LabeledPoint> label_points(const System& sys, const std::vector<Vec>& points,
                                       int jobs) {
  return map_points(points.size(), jobs, [&](std::size_t i) {
    LabeledPoint p;
    p.x = points[i];
    const double v = sys.c.violation(p.x);
    p.interior = v < -sys.tol.membership;
    p.boundary = std::fabs(v) <= sys.tol.membership;
    if (p.interior || p.boundary) {
      p.ctilde = classify_nontrivial(sys.c, sys.f, p.x, sys.tol, sys.resolution);
    }
    return p;
  });
}

Verdict check_condition(const System& sys, ConditionId id, const std::vector<LabeledPoint>& grid,
                        const CheckOptions& options) {
  require_class(sys, id);
  const ConstraintSet c = boxed(sys.c, sys.box);
  const bool ctilde = condition_domain(id) == Domain::kCtilde;
  ConstraintSet epi;
  if (id == ConditionId::kProxCone) {
    epi = epigraph(sys.b, c);
  } else if (id == ConditionId::kProxPt || id == ConditionId::kProxInt) {
    epi = epigraph(sys.b, ConstraintSet::whole_space(sys.b.dimension()).with_box(sys.box));
  }

  auto outcomes = map_points(grid.size(), options.jobs, [&](std::size_t i) {
    const LabeledPoint& p = grid[i];
    PointOutcome out;
    if (ctilde ? !in_ctilde(p) : !p.interior) return out;
    switch (id) {
      case ConditionId::kProxCone:
        out = eval_prox_cone(sys, c, epi, p.x, options);
        break;
      case ConditionId::kProxPt:
      case ConditionId::kProxInt:
        out = eval_prox_interior(sys, epi, p.x, options);
        break;
      default:
        out = eval_gradient_family(sys, id, c, p.x);
    }
    if (id == ConditionId::kGradAeInt && out.pairs == 0) return PointOutcome{};
    out.evaluated = true;
    out.unknown = ctilde && p.ctilde.label == CtildeLabel::kUnknown;
    return out;
  });
  Verdict v = aggregate(std::move(outcomes), grid.size());
  if (id == ConditionId::kClarkeNp || id == ConditionId::kClarkeNpInt) {
    v.notes.push_back("velocities restricted to those with equal inner products over the Clarke "
                      "vertices within the constancy tolerance");
  }
  return v;
}

FDiagnostics diagnose_f(const System& sys, int k) {
  FDiagnostics d;
  std::vector<Vec> pts;
  for (auto& x : sys.box.grid(k)) {
    try {
      sys.f.image(x, sys.tol.membership);
      pts.push_back(std::move(x));
    } catch (const UncoveredPoint&) {
    }
  }
  d.report = continuity_diagnostic(sys.f, pts, 1e-2);
  d.continuous = d.report.violations.empty();
  d.lipschitz = d.continuous && d.report.lipschitz < 1e6;
  return d;
}

Verdict check_assumption(const System& sys, AssumptionId id, const std::vector<LabeledPoint>& grid,
                         const FDiagnostics& fdiag, const CheckOptions& options) {
  const ConstraintSet c = boxed(sys.c, sys.box);
  const Tolerances& tol = sys.tol;
  const double tau = tol.membership;
  const auto shell = sphere_directions(sys.box.dimension(), 16, 0xa55);

  switch (id) {
    case AssumptionId::kA1: {
      Verdict v;
      v.proxy = "sample-based";
      for (const auto& w : fdiag.report.violations) {
        if (w.note == "usc" && v.witnesses.size() < kMaxWitnesses) v.witnesses.push_back(w);
      }
      v.outcome = v.witnesses.empty() ? Outcome::kHolds : Outcome::kViolated;
      v.samples = static_cast<std::size_t>(std::pow(11.0, sys.box.dimension()));
      v.metrics = {{"usc_excess", fdiag.report.usc_excess},
                   {"lipschitz_estimate", fdiag.report.lipschitz}};
      v.notes.push_back("images are hulls of finitely many vertices: nonempty, compact, convex");
      return v;
    }

    case AssumptionId::kM2: {
      auto failing = [&](const Vec& y, PointOutcome& out) -> std::optional<Witness> {
        std::optional<Witness> w;
        for (const auto& v : sys.f.image(y, tau)) {
          const ConeQueryResult r = in_contingent_cone(c, y, v, tol);
          if (r.inconclusive) ++out.inconclusive;
          if (!r.member) offer(w, Witness{y, Vec(), v, r.residual, "image vertex outside T_C"});
        }
        return w;
      };
      auto outcomes = map_points(grid.size(), options.jobs, [&](std::size_t i) {
        PointOutcome out;
        const LabeledPoint& p = grid[i];
        if (!boundary_ctilde(p)) return out;
        out.evaluated = true;
        out.unknown = p.ctilde.label == CtildeLabel::kUnknown;
        if (auto w = failing(p.x, out)) {
          out.worst = std::move(w);
          return out;
        }
        // Every neighbourhood must contain a failing boundary point.
        std::optional<Witness> last;
        for (double r : {1e-2, 1e-3}) {
          std::optional<Witness> at_r;
          for (const auto& u : shell) {
            const auto y = nearby_point(c, p.x, u, r, tau);
            if (!y || !on_boundary(c, *y, tau)) continue;
            try {
              if (auto w = failing(*y, out)) offer(at_r, std::move(*w));
            } catch (const UncoveredPoint&) {
            }
          }
          if (!at_r) return out;
          last = std::move(at_r);
        }
        last->note = "image vertex outside T_C at every sampled radius";
        out.worst = std::move(last);
        return out;
      });
      return finish_assumption(std::move(outcomes), grid.size(), "sample-based");
    }

    case AssumptionId::kM1: {
      const double lf = fdiag.report.lipschitz;
      auto outcomes = map_points(grid.size(), options.jobs, [&](std::size_t i) {
        PointOutcome out;
        const LabeledPoint& p = grid[i];
        if (!boundary_ctilde(p)) return out;
        out.evaluated = true;
        out.unknown = p.ctilde.label == CtildeLabel::kUnknown;
        const Admissible here = admissible_set(sys, c, p.x);
        out.inconclusive += here.inconclusive;
        if (here.velocities.empty()) return out;
        std::optional<Witness> best;
        for (double r : {1e-1, 3e-2}) {
          double worst = 0.0;
          Vec worst_y = p.x;
          for (const auto& u : shell) {
            const auto y = nearby_point(c, p.x, u, r, tau);
            if (!y || !on_boundary(c, *y, tau)) continue;
            double e = std::numeric_limits<double>::infinity();
            try {
              const Admissible there = admissible_set(sys, c, *y);
              out.inconclusive += there.inconclusive;
              if (!there.velocities.empty()) e = hull_excess(here.velocities, there.velocities);
            } catch (const UncoveredPoint&) {
            }
            if (e > worst) {
              worst = e;
              worst_y = *y;
            }
          }
          if (worst <= 1e-3 + lf * r) return out;  // some neighbourhood works
          const double shown = std::isfinite(worst) ? worst : 1e300;
          if (!best || shown < best->value) {
            best = Witness{p.x, Vec(), worst_y, shown,
                           fmt::format("admissible set drops by {:.3g} within radius {:g}", worst,
                                       r)};
          }
        }
        out.worst = std::move(best);
        return out;
      });
      Verdict v = finish_assumption(std::move(outcomes), grid.size(), "sample-based");
      v.notes.push_back("lower semicontinuity of the admissible velocity set on the boundary, "
                        "used in place of the continuous-selection hypothesis");
      return v;
    }

    case AssumptionId::kM1Prime: {
      const double lf = fdiag.report.lipschitz;
      SimulationOptions sim = options.sim;
      sim.horizon = 10 * sim.dt;
      sim.box = sys.box;
      sim.resolution = sys.resolution;
      sim.tol = tol;
      auto outcomes = map_points(grid.size(), options.jobs, [&](std::size_t i) {
        PointOutcome out;
        const LabeledPoint& p = grid[i];
        if (!boundary_ctilde(p)) return out;
        out.evaluated = true;
        out.unknown = p.ctilde.label == CtildeLabel::kUnknown;
        const auto image = sys.f.image(p.x, tau);
        for (std::size_t j = 0; j < image.size(); ++j) {
          const ConeQueryResult r = in_contingent_cone(c, p.x, image[j], tol);
          if (r.inconclusive) ++out.inconclusive;
          if (!r.member) continue;
          const Trajectory t = simulate(c, sys.f, p.x, Strategy{StrategyKind::kVertex, int(j)},
                                        sim, split_seed(options.seed, i));
          const Vec& vo = image[j];
          double dev = t.states.size() < 2 ? vo.norm() : 0.0;
          bool bad = t.states.size() < 2;
          for (std::size_t k = 1; k < t.states.size(); ++k) {
            const double tk = t.times[k] - t.times[0];
            const double d = ((t.states[k] - p.x) / tk - vo).norm();
            dev = std::max(dev, d);
            if (d > 1e-3 + lf * vo.norm() * tk) bad = true;
          }
          if (bad) {
            offer(out.worst, Witness{p.x, Vec(), vo, dev,
                                     t.states.size() < 2
                                         ? "no step along the vertex"
                                         : "difference quotients leave the vertex"});
          }
        }
        return out;
      });
      return finish_assumption(std::move(outcomes), grid.size(), "simulation-based");
    }

    case AssumptionId::kA2: {
      const ConstraintSet epi = epigraph(sys.b, c);
      const int n = sys.box.dimension();
      auto directions = [&](const Vec& x, std::size_t& inc) {
        const Vec z = append(x, sys.b.value(x, tau));
        const ConstraintSet local = localized(epi, z, kLocalRadius);
        return unit_normal_parts(
            local, z, normal_candidates(sys, local, z, x, options.directions_per_dim), n, tol, inc);
      };
      auto outcomes = map_points(grid.size(), options.jobs, [&](std::size_t i) {
        PointOutcome out;
        const LabeledPoint& p = grid[i];
        if (!boundary_ctilde(p)) return out;
        out.evaluated = true;
        out.unknown = p.ctilde.label == CtildeLabel::kUnknown;
        const auto here = directions(p.x, out.inconclusive);
        for (const auto& u : shell) {
          const auto y = nearby_point(c, p.x, u, 1e-3, tau);
          if (!y) continue;
          std::vector<Vec> there;
          try {
            there = directions(*y, out.inconclusive);
          } catch (const UncoveredPoint&) {
            continue;
          }
          for (const auto& d : here) {
            double best = 2.0;
            for (const auto& e : there) best = std::min(best, (d - e).norm());
            if (best > 0.25) offer(out.worst, Witness{p.x, d, *y, best, "normal direction lost"});
          }
        }
        return out;
      });
      return finish_assumption(std::move(outcomes), grid.size(), "sample-based");
    }

    case AssumptionId::kA3: {
      const auto dirs = sphere_directions(sys.box.dimension(), 64, 0xa3);
      auto outcomes = map_points(grid.size(), options.jobs, [&](std::size_t i) {
        PointOutcome out;
        const LabeledPoint& p = grid[i];
        if (!p.boundary) return out;
        out.evaluated = true;
        for (double r : {1e-2, 1e-3, 1e-4}) {
          const bool reach = std::any_of(dirs.begin(), dirs.end(), [&](const Vec& u) {
            return c.violation(p.x + r * u) < -tau;
          });
          if (!reach) {
            out.worst = Witness{p.x, Vec(), Vec(), r, "no interior point at this radius"};
            break;
          }
        }
        return out;
      });
      return finish_assumption(std::move(outcomes), grid.size(), "sample-based");
    }

    case AssumptionId::kA4: {
      std::vector<Vec> boundary;
      for (const auto& p : grid) {
        if (p.boundary) boundary.push_back(p.x);
      }
      SimulationOptions sim = options.sim;
      sim.box = sys.box;
      sim.resolution = sys.resolution;
      sim.tol = tol;
      Verdict v = is_precontractive(c, sys.f, c, boundary, sim, options.seed);
      if (v.witnesses.size() > kMaxWitnesses) v.witnesses.resize(kMaxWitnesses);
      return v;
    }

    case AssumptionId::kA5: {
      const double lb = lipschitz_estimate(sys.b, sys.box);
      constexpr double r = 1e-4;
      auto outcomes = map_points(grid.size(), options.jobs, [&](std::size_t i) {
        PointOutcome out;
        const LabeledPoint& p = grid[i];
        if (!boundary_ctilde(p)) return out;
        out.evaluated = true;
        out.unknown = p.ctilde.label == CtildeLabel::kUnknown;
        const double bx = sys.b.value(p.x, tau);
        for (const auto& u : shell) {
          const Vec y = p.x + r * u;
          try {
            const double jump = std::fabs(sys.b.value(y, tau) - bx);
            if (jump > 1e-3 + lb * r) offer(out.worst, Witness{p.x, Vec(), y, jump, "jump of B"});
          } catch (const UncoveredPoint&) {
          }
        }
        return out;
      });
      return finish_assumption(std::move(outcomes), grid.size(), "sample-based");
    }
  }
  throw std::invalid_argument("unknown assumption");
}

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::kSufficient:
      return "sufficient-for-star";
    case Direction::kNecessary:
      return "necessary-for-star";
    case Direction::kEquivalent:
      return "equivalent-to-star";
    case Direction::kNone:
      return "none-applicable";
  }
  return "?";
}

const std::vector<TheoryRow>& theory_table() {
  using C = ConditionId;
  using D = Direction;
  static const std::vector<TheoryRow> rows = {
      {"prox-cone-necessary", "nonincrease and M1 imply COND-PROX-CONE", C::kProxCone,
       D::kNecessary, {"A1", "F-continuous", "M1"}},
      {"prox-cone-sufficient", "COND-PROX-CONE and M2 imply nonincrease for Lipschitz F",
       C::kProxCone, D::kSufficient, {"A1", "F-lipschitz", "M2"}},
      {"prox-cone-equivalent", "COND-PROX-CONE iff nonincrease under M1 and M2, F Lipschitz",
       C::kProxCone, D::kEquivalent, {"A1", "F-lipschitz", "M1", "M2"}},
      {"prox-cone-necessary-reach", "nonincrease implies COND-PROX-CONE under A2 and A3",
       C::kProxCone, D::kNecessary, {"A1", "F-continuous", "A2", "A3"}},
      {"prox-cone-equivalent-reach", "COND-PROX-CONE iff nonincrease under M2, A2, A3",
       C::kProxCone, D::kEquivalent, {"A1", "F-lipschitz", "M2", "A2", "A3"}},
      {"prox-int-necessary", "nonincrease implies COND-PROX-INT", C::kProxInt, D::kNecessary,
       {"A1", "F-continuous"}},
      {"prox-int-equivalent-open", "COND-PROX-INT iff nonincrease when the nontrivial-start set "
       "is open", C::kProxInt, D::kEquivalent, {"A1", "F-lipschitz", "Ctilde-open"}},
      {"prox-int-equivalent-contractive", "COND-PROX-INT iff nonincrease under A4 and A5",
       C::kProxInt, D::kEquivalent, {"A1", "F-lipschitz", "A4", "A5"}},
      {"clarke-sufficient", "COND-CLARKE implies nonincrease for Lipschitz B", C::kClarke,
       D::kSufficient, {"A1", "lipschitz"}},
      {"clarke-equivalent-regular", "COND-CLARKE iff nonincrease for regular B under M1",
       C::kClarke, D::kEquivalent, {"A1", "regular", "F-continuous", "M1"}},
      {"clarke-np-sufficient", "COND-CLARKE-NP implies nonincrease for nonpathological B",
       C::kClarkeNp, D::kSufficient, {"A1", "nonpathological"}},
      {"clarke-necessary-reach", "nonincrease implies COND-CLARKE for regular B under A2, A3",
       C::kClarke, D::kNecessary, {"A1", "regular", "F-continuous", "A2", "A3"}},
      {"clarke-int-sufficient", "COND-CLARKE-INT implies nonincrease under A4", C::kClarkeInt,
       D::kSufficient, {"A1", "lipschitz", "A4"}},
      {"clarke-np-int-sufficient", "COND-CLARKE-NP-INT implies nonincrease under A4",
       C::kClarkeNpInt, D::kSufficient, {"A1", "nonpathological", "A4"}},
      {"grad-ae-int-sufficient", "COND-GRAD-AE-INT implies COND-CLARKE-INT, hence nonincrease "
       "under A4", C::kGradAeInt, D::kSufficient, {"A1", "lipschitz", "F-continuous", "A4"}},
      {"grad-sufficient", "COND-GRAD implies nonincrease for C1 B", C::kGrad, D::kSufficient,
       {"A1", "C1"}},
      {"grad-equivalent", "COND-GRAD iff nonincrease for C1 B under M1, F continuous", C::kGrad,
       D::kEquivalent, {"A1", "C1", "F-continuous", "M1"}},
      {"grad-equivalent-reach", "COND-GRAD iff nonincrease for C1 B under A3, F continuous",
       C::kGrad, D::kEquivalent, {"A1", "C1", "F-continuous", "A3"}},
      {"grad-int-necessary", "nonincrease implies COND-GRAD-INT for C1 B", C::kGradInt,
       D::kNecessary, {"A1", "C1"}},
      {"grad-int-equivalent", "COND-GRAD-INT iff nonincrease for C1 B under A4, F continuous",
       C::kGradInt, D::kEquivalent, {"A1", "C1", "F-continuous", "A4"}},
  };
  return rows;
}

Conclusion apply_theory(const System& sys, const std::map<ConditionId, Verdict>& conditions,
                        const std::map<AssumptionId, Verdict>& assumptions,
                        const FDiagnostics& fdiag, bool ctilde_open) {
  const FunctionClass cls = sys.b.function_class();
  auto evaluate = [&](const std::string& h) -> Hypothesis {
    if (h == "lipschitz") return {h, is_lipschitz(cls), "class tag"};
    if (h == "regular") return {h, is_regular(cls), "class tag"};
    if (h == "nonpathological") return {h, is_nonpathological(cls), "class tag"};
    if (h == "C1") return {h, cls == FunctionClass::kC1, "class tag"};
    if (h == "F-continuous") return {h, fdiag.continuous, "sample-based"};
    if (h == "F-lipschitz") return {h, fdiag.lipschitz, "sample-based"};
    if (h == "Ctilde-open") return {h, ctilde_open, "sample-based"};
    if (h == "A1") {
      if (const Verdict* v = find(assumptions, AssumptionId::kA1)) {
        return {h, v->outcome == Outcome::kHolds, v->proxy};
      }
      const bool usc = std::none_of(fdiag.report.violations.begin(),
                                    fdiag.report.violations.end(),
                                    [](const Witness& w) { return w.note == "usc"; });
      return {h, usc, "sample-based"};
    }
    const auto id = parse_assumption(h);
    if (!id) throw std::logic_error("unknown hypothesis " + h);
    const Verdict* v = find(assumptions, *id);
    if (!v && *id == AssumptionId::kM1) {
      if ((v = find(assumptions, AssumptionId::kM1Prime))) {
        return {"M1 (via M1')", v->outcome == Outcome::kHolds, v->proxy};
      }
    }
    if (!v) return {h, false, "not checked"};
    return {h, v->outcome == Outcome::kHolds, v->proxy};
  };

  std::optional<Conclusion> eq, one_way;
  for (const auto& row : theory_table()) {
    const auto it = conditions.find(row.condition);
    if (it == conditions.end()) continue;
    const Outcome o = it->second.outcome;
    const bool informative =
        (row.direction == Direction::kEquivalent && o != Outcome::kInconclusive) ||
        (row.direction == Direction::kSufficient && o == Outcome::kHolds) ||
        (row.direction == Direction::kNecessary && o == Outcome::kViolated);
    if (!informative) continue;
    Conclusion c;
    bool ok = true;
    for (const auto& h : row.hypotheses) {
      c.hypotheses.push_back(evaluate(h));
      ok = ok && c.hypotheses.back().holds;
    }
    if (!ok) continue;
    c.rule = row.id;
    c.statement = row.statement;
    c.direction = row.direction;
    c.condition = row.condition;
    c.condition_outcome = o;
    c.property = o == Outcome::kHolds ? "holds" : "fails";
    if (row.direction == Direction::kEquivalent) {
      if (!eq) eq = std::move(c);
    } else if (!one_way) {
      one_way = std::move(c);
    }
  }
  if (eq) return *eq;
  if (one_way) return *one_way;
  Conclusion none;
  none.rule = "none";
  none.statement = "no implication applies with the checked hypotheses";
  if (!conditions.empty()) {
    none.condition = conditions.begin()->first;
    none.condition_outcome = conditions.begin()->second.outcome;
  }
  return none;
}

}  // namespace invcheck
