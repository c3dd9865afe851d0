#include "invcheck/geometry.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>

#include <fmt/format.h>

namespace invcheck {

struct ConstraintSet::Data {
  Kind kind = Kind::kIntersection;
  int dimension = 0;
  Leaf leaf;
  std::vector<ConstraintSet> children;
  // Leaves whose expression contains abs/min/max carry an equivalent tree
  // built from smooth primitives only.
  std::shared_ptr<const Data> smooth;
};

namespace {

struct SmoothLeaf {
  Expression g;
  Relation rel;
  bool affine = false;
  Vec a;  // gradient when affine
  double b = 0.0;
};

struct Cell {
  std::vector<int> leaves;
  std::vector<std::vector<int>> subsets;  // candidate active sets, equalities always included
  std::vector<int> affine;
};

constexpr std::size_t kMaxCells = 4096;

}  // namespace

struct ConstraintSet::Cache {
  std::once_flag built;
  std::vector<SmoothLeaf> leaves;
  std::vector<Cell> cells;

  std::once_flag anchored;
  std::vector<Mat> anchors;  // per cell, one column per grid point near the cell
  double spacing = std::numeric_limits<double>::infinity();
};

namespace {

using Data = ConstraintSet::Data;

NodePtr replace_node(const NodePtr& root, const Node* target, const NodePtr& with) {
  if (root.get() == target) return with;
  if (!root->a) return root;
  NodePtr a = replace_node(root->a, target, with);
  NodePtr b = root->b ? replace_node(root->b, target, with) : nullptr;
  if (a == root->a && b == root->b) return root;
  return make_node(root->op, a, b, root->value, root->index);
}

const Node* find_kink(const NodePtr& n) {
  if (n->op == Op::kAbs || n->op == Op::kMin || n->op == Op::kMax) {
    // Innermost first so switch conditions stay smooth where possible.
    if (const Node* inner = find_kink(n->a)) return inner;
    if (n->b) {
      if (const Node* inner = find_kink(n->b)) return inner;
    }
    return n.get();
  }
  if (n->a) {
    if (const Node* k = find_kink(n->a)) return k;
  }
  if (n->b) return find_kink(n->b);
  return nullptr;
}

NodePtr find_ptr(const NodePtr& root, const Node* target) {
  if (root.get() == target) return root;
  if (root->a) {
    if (auto p = find_ptr(root->a, target)) return p;
  }
  if (root->b) return find_ptr(root->b, target);
  return nullptr;
}

NodePtr sub(const NodePtr& a, const NodePtr& b) { return make_node(Op::kSub, a, b); }

ConstraintSet smooth_expansion(const Expression& g, Relation rel);

ConstraintSet smooth_leaf(NodePtr root, int n, Relation rel) {
  return smooth_expansion(Expression(std::move(root), n), rel);
}

// g(..abs(u)..) R 0  <=>  (u >= 0 and g(..u..) R 0) or (u <= 0 and g(..-u..) R 0),
// and analogously for min/max with the selector a - b.
ConstraintSet smooth_expansion(const Expression& g, Relation rel) {
  const Node* kink = find_kink(g.root());
  if (!kink) return ConstraintSet::leaf(g, rel);
  const int n = g.dimension();
  const NodePtr node = find_ptr(g.root(), kink);
  std::vector<ConstraintSet> branches;
  auto branch = [&](const NodePtr& selector_le0, const NodePtr& replacement) {
    branches.push_back(ConstraintSet::intersect(
        {smooth_leaf(selector_le0, n, Relation::kLessEqual),
         smooth_leaf(replace_node(g.root(), kink, replacement), n, rel)}));
  };
  const NodePtr& a = node->a;
  if (node->op == Op::kAbs) {
    branch(make_node(Op::kNeg, a), a);
    branch(a, make_node(Op::kNeg, a));
  } else {
    const NodePtr& b = node->b;
    const bool is_min = node->op == Op::kMin;
    // min picks a where a <= b, max picks a where a >= b.
    branch(is_min ? sub(a, b) : sub(b, a), a);
    branch(is_min ? sub(b, a) : sub(a, b), b);
  }
  return ConstraintSet::unite(std::move(branches));
}

double leaf_violation(const ConstraintSet::Leaf& leaf, const Vec& x) {
  const double g = leaf.g.evaluate(x);
  return leaf.rel == Relation::kEqual ? std::fabs(g) : g;
}

}  // namespace

ConstraintSet ConstraintSet::leaf(Expression g, Relation rel) {
  auto d = std::make_shared<Data>();
  d->kind = Kind::kLeaf;
  d->dimension = g.dimension();
  if (g.has_kink_nodes()) d->smooth = smooth_expansion(g, rel).data_;
  d->leaf = Leaf{std::move(g), rel};
  ConstraintSet s;
  s.data_ = d;
  s.cache_ = std::make_shared<Cache>();
  return s;
}

ConstraintSet ConstraintSet::unite(std::vector<ConstraintSet> parts) {
  if (parts.empty()) throw std::invalid_argument("union of no sets");
  if (parts.size() == 1) return parts.front();
  const int n = parts.front().dimension();
  auto d = std::make_shared<Data>();
  d->kind = Kind::kUnion;
  d->dimension = n;
  for (auto& p : parts) {
    if (p.dimension() != n) throw std::invalid_argument("dimension mismatch in union");
    d->children.push_back(std::move(p));
  }
  ConstraintSet s;
  s.data_ = d;
  s.cache_ = std::make_shared<Cache>();
  return s;
}

ConstraintSet ConstraintSet::intersect(std::vector<ConstraintSet> parts) {
  if (parts.empty()) throw std::invalid_argument("intersection of no sets; use whole_space");
  if (parts.size() == 1) return parts.front();
  const int n = parts.front().dimension();
  auto d = std::make_shared<Data>();
  d->kind = Kind::kIntersection;
  d->dimension = n;
  for (auto& p : parts) {
    if (p.dimension() != n) throw std::invalid_argument("dimension mismatch in intersection");
    d->children.push_back(std::move(p));
  }
  ConstraintSet s;
  s.data_ = d;
  s.cache_ = std::make_shared<Cache>();
  return s;
}

ConstraintSet ConstraintSet::whole_space(int dimension) {
  auto d = std::make_shared<Data>();
  d->kind = Kind::kIntersection;
  d->dimension = dimension;
  ConstraintSet s;
  s.data_ = d;
  s.cache_ = std::make_shared<Cache>();
  return s;
}

int ConstraintSet::dimension() const { return data_ ? data_->dimension : 0; }
ConstraintSet::Kind ConstraintSet::kind() const { return data_->kind; }
const ConstraintSet::Leaf& ConstraintSet::leaf_data() const { return data_->leaf; }
const std::vector<ConstraintSet>& ConstraintSet::children() const { return data_->children; }
const std::optional<Box>& ConstraintSet::box() const { return box_; }

bool ConstraintSet::contains(const Vec& x, double tau) const {
  switch (data_->kind) {
    case Kind::kLeaf:
      return leaf_violation(data_->leaf, x) <= tau;
    case Kind::kUnion:
      return std::any_of(data_->children.begin(), data_->children.end(),
                         [&](const ConstraintSet& c) { return c.contains(x, tau); });
    case Kind::kIntersection:
      return std::all_of(data_->children.begin(), data_->children.end(),
                         [&](const ConstraintSet& c) { return c.contains(x, tau); });
  }
  return false;
}

double ConstraintSet::violation(const Vec& x) const {
  switch (data_->kind) {
    case Kind::kLeaf:
      return leaf_violation(data_->leaf, x);
    case Kind::kUnion: {
      double v = std::numeric_limits<double>::infinity();
      for (const auto& c : data_->children) v = std::min(v, c.violation(x));
      return v;
    }
    case Kind::kIntersection: {
      double v = -std::numeric_limits<double>::infinity();
      for (const auto& c : data_->children) v = std::max(v, c.violation(x));
      return v;
    }
  }
  return 0.0;
}

ConstraintSet ConstraintSet::lifted(int dimension) const {
  if (data_->kind == Kind::kLeaf) {
    return leaf(data_->leaf.g.lifted(dimension), data_->leaf.rel);
  }
  if (data_->children.empty()) return whole_space(dimension);
  std::vector<ConstraintSet> parts;
  for (const auto& c : data_->children) parts.push_back(c.lifted(dimension));
  return data_->kind == Kind::kUnion ? unite(std::move(parts)) : intersect(std::move(parts));
}

ConstraintSet ConstraintSet::with_box(const Box& box) const {
  if (box.dimension() != dimension()) throw std::invalid_argument("box dimension mismatch");
  ConstraintSet s = *this;
  s.box_ = box;
  s.cache_ = std::make_shared<Cache>();
  return s;
}

std::string ConstraintSet::to_string() const {
  switch (data_->kind) {
    case Kind::kLeaf:
      return data_->leaf.g.to_string() + (data_->leaf.rel == Relation::kEqual ? " = 0" : " <= 0");
    case Kind::kUnion:
    case Kind::kIntersection: {
      if (data_->children.empty()) return "R^" + std::to_string(data_->dimension);
      std::string s;
      for (std::size_t i = 0; i < data_->children.size(); ++i) {
        if (i) s += data_->kind == Kind::kUnion ? " | " : " & ";
        s += "(" + data_->children[i].to_string() + ")";
      }
      return s;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Projection

struct ProjectionEngine {
  static const Data& data(const ConstraintSet& s) { return *s.data_; }
  static ConstraintSet::Cache& cache(const ConstraintSet& s) { return *s.cache_; }
  static const std::optional<Box>& box(const ConstraintSet& s) { return s.box_; }
};

namespace {

using Dnf = std::vector<std::vector<int>>;

Dnf to_dnf(const Data& d, std::vector<SmoothLeaf>& leaves) {
  if (d.kind == ConstraintSet::Kind::kLeaf) {
    if (d.smooth) return to_dnf(*d.smooth, leaves);
    SmoothLeaf l{d.leaf.g, d.leaf.rel, d.leaf.g.is_affine(), Vec(), 0.0};
    if (l.affine) {
      const Vec zero = Vec::Zero(d.dimension);
      l.a = l.g.gradient_any_branch(zero);
      l.b = l.g.evaluate(zero);
    }
    leaves.push_back(std::move(l));
    return {{static_cast<int>(leaves.size() - 1)}};
  }
  if (d.kind == ConstraintSet::Kind::kUnion) {
    Dnf out;
    for (const auto& c : d.children) {
      Dnf part = to_dnf(ProjectionEngine::data(c), leaves);
      out.insert(out.end(), part.begin(), part.end());
      if (out.size() > kMaxCells) throw std::runtime_error("constraint set too large to project");
    }
    return out;
  }
  Dnf out{{}};
  for (const auto& c : d.children) {
    Dnf part = to_dnf(ProjectionEngine::data(c), leaves);
    Dnf next;
    for (const auto& a : out) {
      for (const auto& b : part) {
        std::vector<int> cell = a;
        cell.insert(cell.end(), b.begin(), b.end());
        next.push_back(std::move(cell));
      }
    }
    if (next.size() > kMaxCells) throw std::runtime_error("constraint set too large to project");
    out = std::move(next);
  }
  return out;
}

void build_cells(const ConstraintSet& s) {
  auto& c = ProjectionEngine::cache(s);
  std::call_once(c.built, [&] {
    const Dnf dnf = to_dnf(ProjectionEngine::data(s), c.leaves);
    const int n = s.dimension();
    for (const auto& raw : dnf) {
      Cell cell;
      cell.leaves = raw;
      std::sort(cell.leaves.begin(), cell.leaves.end());
      cell.leaves.erase(std::unique(cell.leaves.begin(), cell.leaves.end()), cell.leaves.end());
      std::vector<int> eq, ineq;
      for (int i : cell.leaves) {
        (c.leaves[i].rel == Relation::kEqual ? eq : ineq).push_back(i);
        if (c.leaves[i].affine) cell.affine.push_back(i);
      }
      const int free = n - static_cast<int>(eq.size());
      // Subsets of inequality leaves of size <= free, smallest first.
      const int m = static_cast<int>(ineq.size());
      for (int size = 0; size <= std::min(free, m); ++size) {
        std::vector<bool> mask(m, false);
        std::fill(mask.begin(), mask.begin() + size, true);
        do {
          std::vector<int> subset = eq;
          for (int i = 0; i < m; ++i) {
            if (mask[i]) subset.push_back(ineq[i]);
          }
          cell.subsets.push_back(std::move(subset));
        } while (std::prev_permutation(mask.begin(), mask.end()));
      }
      if (free < 0) cell.subsets.push_back(eq);
      c.cells.push_back(std::move(cell));
    }
  });
}

double feasibility_slack(const Vec& z) { return 1e-12 * (1.0 + z.norm()); }

bool cell_feasible(const std::vector<SmoothLeaf>& leaves, const Cell& cell, const Vec& z,
                   double slack) {
  for (int i : cell.leaves) {
    const double g = leaves[i].g.evaluate(z);
    if (leaves[i].rel == Relation::kEqual ? std::fabs(g) > slack : g > slack) return false;
  }
  return true;
}

bool strictly_inside(const std::vector<SmoothLeaf>& leaves, const Cell& cell, const Vec& y) {
  for (int i : cell.leaves) {
    if (leaves[i].rel == Relation::kEqual) return false;
    if (leaves[i].g.evaluate(y) > 0.0) return false;
  }
  return true;
}

double affine_bound(const SmoothLeaf& l, const Vec& y) {
  const double na = l.a.norm();
  if (na == 0.0) return 0.0;
  const double g = l.a.dot(y) + l.b;
  return (l.rel == Relation::kEqual ? std::fabs(g) : std::max(0.0, g)) / na;
}

double cell_lower_bound(const std::vector<SmoothLeaf>& leaves, const Cell& cell, const Vec& y) {
  double lb = 0.0;
  for (int i : cell.affine) lb = std::max(lb, affine_bound(leaves[i], y));
  return lb;
}

Mat leaf_hessian(const SmoothLeaf& l, const Vec& z) {
  const int n = static_cast<int>(z.size());
  Mat h = Mat::Zero(n, n);
  if (l.affine) return h;
  for (int j = 0; j < n; ++j) {
    const double e = 1e-5 * std::max(1.0, std::fabs(z[j]));
    Vec p = z, m = z;
    p[j] += e;
    m[j] -= e;
    h.col(j) = (l.g.gradient_any_branch(p) - l.g.gradient_any_branch(m)) / (2 * e);
  }
  return 0.5 * (h + h.transpose());
}

// Newton's method on the KKT system of min |z - y|^2 s.t. g_i(z) = 0, i in active.
std::optional<Vec> solve_active(const std::vector<SmoothLeaf>& leaves, const std::vector<int>& active,
                                const Vec& y, const Vec& seed) {
  const int n = static_cast<int>(y.size());
  const int k = static_cast<int>(active.size());
  if (std::all_of(active.begin(), active.end(), [&](int i) { return leaves[i].affine; })) {
    // Affine active set: the projection onto {A z + b = 0} in closed form.
    Mat a(k, n);
    Vec b(k);
    for (int i = 0; i < k; ++i) {
      a.row(i) = leaves[active[i]].a.transpose();
      b[i] = leaves[active[i]].b;
    }
    const Vec mu = (a * a.transpose()).completeOrthogonalDecomposition().solve(a * y + b);
    Vec z = y - a.transpose() * mu;
    if (!z.allFinite() || (a * z + b).cwiseAbs().maxCoeff() > feasibility_slack(z)) {
      return std::nullopt;
    }
    return z;
  }
  Vec z = seed;
  Vec g(k);
  Mat jac(k, n);
  auto evaluate = [&](const Vec& p, Vec& gv, Mat& j) {
    for (int i = 0; i < k; ++i) {
      const auto& l = leaves[active[i]];
      gv[i] = l.g.evaluate(p);
      j.row(i) = (l.affine ? l.a : l.g.gradient_any_branch(p)).transpose();
    }
  };
  try {
    evaluate(z, g, jac);
    Vec lambda = jac.transpose().colPivHouseholderQr().solve(y - z);
    auto merit = [&](const Vec& p, const Vec& lam, const Vec& gv, const Mat& j) {
      return std::sqrt((p - y + j.transpose() * lam).squaredNorm() + gv.squaredNorm());
    };
    double f = merit(z, lambda, g, jac);
    const double target = 1e-15 * (1.0 + y.norm());
    for (int it = 0; it < 60 && f > target; ++it) {
      Mat h = Mat::Identity(n, n);
      for (int i = 0; i < k; ++i) {
        if (!leaves[active[i]].affine && lambda[i] != 0.0) {
          h += lambda[i] * leaf_hessian(leaves[active[i]], z);
        }
      }
      Mat kkt = Mat::Zero(n + k, n + k);
      kkt.topLeftCorner(n, n) = h;
      kkt.topRightCorner(n, k) = jac.transpose();
      kkt.bottomLeftCorner(k, n) = jac;
      Vec rhs(n + k);
      rhs.head(n) = -(z - y + jac.transpose() * lambda);
      rhs.tail(k) = -g;
      const Vec step = kkt.completeOrthogonalDecomposition().solve(rhs);
      bool accepted = false;
      double t = 1.0;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        const Vec zt = z + t * step.head(n);
        const Vec lt = lambda + t * step.tail(k);
        Vec gt(k);
        Mat jt(k, n);
        evaluate(zt, gt, jt);
        const double ft = merit(zt, lt, gt, jt);
        if (ft < (1.0 - 1e-4 * t) * f) {
          z = zt;
          lambda = lt;
          g = gt;
          jac = jt;
          f = ft;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
  } catch (const DomainError&) {
    return std::nullopt;
  }
  if (!z.allFinite()) return std::nullopt;
  if (k > 0 && g.cwiseAbs().maxCoeff() > feasibility_slack(z)) {
    // Degenerate constraint qualification: fall back to Gauss-Newton
    // restoration onto g_A = 0 so the subset still yields a feasible point.
    try {
      for (int it = 0; it < 100 && g.cwiseAbs().maxCoeff() > feasibility_slack(z); ++it) {
        const Vec dz = jac.completeOrthogonalDecomposition().solve(-g);
        if (!dz.allFinite() || dz.norm() == 0.0) break;
        z += dz;
        evaluate(z, g, jac);
      }
    } catch (const DomainError&) {
      return std::nullopt;
    }
    if (!z.allFinite() || g.cwiseAbs().maxCoeff() > feasibility_slack(z)) return std::nullopt;
  }
  return z;
}

int anchor_resolution(int n) {
  if (n <= 3) return 41;
  return std::max(5, static_cast<int>(std::floor(std::pow(2e5, 1.0 / n))));
}

void build_anchors(const ConstraintSet& s) {
  auto& c = ProjectionEngine::cache(s);
  std::call_once(c.anchored, [&] {
    const auto& box = ProjectionEngine::box(s);
    c.anchors.assign(c.cells.size(), Mat());
    if (!box) return;
    const int n = s.dimension();
    const int k = anchor_resolution(n);
    const std::vector<Vec> grid = box->grid(k);
    c.spacing = (box->extent() / (k - 1)).minCoeff();
    const double tube = c.spacing;
    for (std::size_t ci = 0; ci < c.cells.size(); ++ci) {
      const Cell& cell = c.cells[ci];
      std::vector<const Vec*> keep;
      for (const Vec& p : grid) {
        bool near = true;
        try {
          for (int i : cell.leaves) {
            const auto& l = c.leaves[i];
            const double g = l.g.evaluate(p);
            if (l.rel == Relation::kLessEqual) {
              if (g > 0.0) {
                near = false;
                break;
              }
            } else {
              const double slope = std::max(1e-12, l.g.gradient_any_branch(p).norm());
              if (std::fabs(g) > tube * slope) {
                near = false;
                break;
              }
            }
          }
        } catch (const DomainError&) {
          near = false;
        }
        if (near) keep.push_back(&p);
      }
      Mat a(n, static_cast<Eigen::Index>(keep.size()));
      for (std::size_t j = 0; j < keep.size(); ++j) a.col(static_cast<Eigen::Index>(j)) = *keep[j];
      c.anchors[ci] = std::move(a);
    }
  });
}

}  // namespace

Projection distance_and_project(const ConstraintSet& s, const Vec& y, const ProjectOptions& options) {
  Projection out;
  if (s.empty()) return out;
  build_cells(s);
  auto& cache = ProjectionEngine::cache(s);
  const auto& leaves = cache.leaves;
  const auto& cells = cache.cells;
  const int n = s.dimension();
  if (y.size() != n) throw std::invalid_argument("projection point dimension mismatch");

  double best = std::numeric_limits<double>::infinity();
  Vec best_z;
  auto consider = [&](const Vec& z, const Cell& cell) {
    const double d = (z - y).norm();
    if (d >= best) return;
    bool ok = false;
    try {
      ok = cell_feasible(leaves, cell, z, feasibility_slack(z));
    } catch (const DomainError&) {
      ok = false;
    }
    if (ok) {
      best = d;
      best_z = z;
    }
  };

  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    bool inside = false;
    try {
      inside = strictly_inside(leaves, cells[ci], y);
    } catch (const DomainError&) {
    }
    if (inside) {
      out.ok = true;
      out.distance = 0.0;
      out.point = y;
      return out;
    }
    order.emplace_back(cell_lower_bound(leaves, cells[ci], y), ci);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  auto done = [&] { return options.stop_below > 0 && best < options.stop_below; };

  auto search = [&](const std::vector<std::vector<Vec>>& seeds_per_cell) {
    for (const auto& [lb, ci] : order) {
      if (lb >= best || done()) continue;
      const Cell& cell = cells[ci];
      const auto& seeds = seeds_per_cell[ci];
      if (seeds.empty()) continue;
      for (const auto& subset : cell.subsets) {
        if (done()) return;
        double sub_lb = 0.0;
        for (int i : subset) {
          if (leaves[i].affine) sub_lb = std::max(sub_lb, affine_bound(leaves[i], y));
        }
        if (sub_lb >= best) continue;
        if (subset.empty()) continue;  // handled by strictly_inside
        for (const Vec& seed : seeds) {
          if (auto z = solve_active(leaves, subset, y, seed)) consider(*z, cell);
          if (done()) return;
        }
      }
    }
  };

  std::vector<std::vector<Vec>> local(cells.size());
  for (auto& seeds : local) {
    seeds.push_back(y);
    if (options.hint && options.hint->size() == n && !options.hint->isApprox(y)) {
      seeds.push_back(*options.hint);
    }
  }
  search(local);

  if (!done() && ProjectionEngine::box(s)) {
    build_anchors(s);
    if (!(best <= 0.5 * cache.spacing)) {
      std::vector<std::vector<Vec>> far(cells.size());
      for (const auto& [lb, ci] : order) {
        const Mat& a = cache.anchors[ci];
        if (a.cols() == 0 || lb >= best) continue;
        const Eigen::VectorXd dist = (a.colwise() - y).colwise().norm().transpose();
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < dist.size(); ++j) {
          if (dist[j] < best) idx.push_back(j);
        }
        std::stable_sort(idx.begin(), idx.end(),
                         [&](Eigen::Index p, Eigen::Index q) { return dist[p] < dist[q]; });
        if (idx.size() > 6) idx.resize(6);
        for (Eigen::Index j : idx) {
          const Vec anchor = a.col(j);
          // Anchors that satisfy every primitive are feasible points themselves.
          consider(anchor, cells[ci]);
          far[ci].push_back(anchor);
        }
      }
      search(far);
    }
  }

  if (!std::isfinite(best)) return out;
  out.ok = true;
  out.distance = best;
  out.point = best_z;
  return out;
}

// ---------------------------------------------------------------------------
// Cones

const std::vector<double>& tangent_step_grid() {
  static const std::vector<double> grid = [] {
    std::vector<double> h;
    for (int k = 0; k <= 20; ++k) h.push_back(1e-2 * std::ldexp(1.0, -k));
    return h;
  }();
  return grid;
}

namespace {

struct Fold {
  enum State { kOutside, kValue, kFallback } state = kOutside;
  double residual = 0.0;
  std::vector<Vec> normals;
  bool simple = true;
};

Fold fold_tangent(const Data& d, const Vec& x, const Vec& u, double tau) {
  using Kind = ConstraintSet::Kind;
  if (d.kind == Kind::kLeaf) {
    if (d.smooth) return fold_tangent(*d.smooth, x, u, tau);
    const double g = d.leaf.g.evaluate(x);
    const bool eq = d.leaf.rel == Relation::kEqual;
    if (eq ? std::fabs(g) > tau : g > tau) return {Fold::kOutside, 0.0, {}, true};
    if (!eq && g < -tau) return {Fold::kValue, 0.0, {}, true};
    Vec grad;
    try {
      grad = d.leaf.g.gradient(x);
    } catch (const KinkError&) {
      return {Fold::kFallback, 0.0, {}, false};
    }
    const double norm = grad.norm();
    if (norm <= 1e-8) return {Fold::kFallback, 0.0, {}, false};
    const double dot = grad.dot(u) / norm;
    return {Fold::kValue, eq ? std::fabs(dot) : std::max(0.0, dot), {grad}, true};
  }
  if (d.kind == Kind::kIntersection) {
    Fold out{Fold::kValue, 0.0, {}, true};
    bool fallback = false;
    for (const auto& c : d.children) {
      Fold f = fold_tangent(ProjectionEngine::data(c), x, u, tau);
      if (f.state == Fold::kOutside) return f;
      if (f.state == Fold::kFallback || (!f.simple && !f.normals.empty())) {
        fallback = true;
        continue;
      }
      out.residual = std::max(out.residual, f.residual);
      out.normals.insert(out.normals.end(), f.normals.begin(), f.normals.end());
    }
    if (fallback) return {Fold::kFallback, 0.0, {}, false};
    if (out.normals.size() > 1) {
      Mat m(x.size(), static_cast<Eigen::Index>(out.normals.size()));
      for (std::size_t i = 0; i < out.normals.size(); ++i) {
        m.col(static_cast<Eigen::Index>(i)) = out.normals[i].normalized();
      }
      Eigen::JacobiSVD<Mat> svd(m);
      const auto& sv = svd.singularValues();
      if (static_cast<std::size_t>(m.cols()) > static_cast<std::size_t>(m.rows()) ||
          sv[sv.size() - 1] < 1e-6) {
        return {Fold::kFallback, 0.0, {}, false};
      }
    }
    return out;
  }
  // Union: the contingent cone of a finite union is the union of the cones of
  // the members containing x.
  Fold best{Fold::kOutside, std::numeric_limits<double>::infinity(), {}, true};
  int containing = 0;
  bool fallback = false;
  for (const auto& c : d.children) {
    Fold f = fold_tangent(ProjectionEngine::data(c), x, u, tau);
    if (f.state == Fold::kOutside) continue;
    ++containing;
    if (f.state == Fold::kFallback) {
      fallback = true;
      continue;
    }
    if (best.state == Fold::kOutside || f.residual < best.residual) best = f;
  }
  if (containing == 0) return {Fold::kOutside, 0.0, {}, true};
  if (fallback) {
    // A certified member dominates whatever the undecided branch would give.
    if (best.state == Fold::kValue && best.residual == 0.0) {
      best.simple = false;
      return best;
    }
    return {Fold::kFallback, 0.0, {}, false};
  }
  best.simple = containing == 1 && best.simple;
  return best;
}

}  // namespace

std::optional<ConeQueryResult> in_contingent_cone_analytic(const ConstraintSet& s, const Vec& x,
                                                           const Vec& v, const Tolerances& tol) {
  const double nv = v.norm();
  if (nv == 0.0) return ConeQueryResult{true, false, 0.0, 0.0, true, Vec()};
  const Fold f = fold_tangent(ProjectionEngine::data(s), x, v / nv, tol.membership);
  if (f.state != Fold::kValue) return std::nullopt;
  ConeQueryResult r;
  r.analytic = true;
  r.residual = f.residual;
  r.member = f.residual <= tol.tangent;
  return r;
}

ConeQueryResult in_contingent_cone_numeric(const ConstraintSet& s, const Vec& x, const Vec& v,
                                           const Tolerances& tol) {
  ConeQueryResult r;
  const double nv = v.norm();
  if (nv == 0.0) {
    r.member = true;
    return r;
  }
  const Vec u = v / nv;
  double best = std::numeric_limits<double>::infinity();
  bool failed = false;
  for (double h : tangent_step_grid()) {
    ProjectOptions opt;
    opt.hint = &x;
    const Projection p = distance_and_project(s, x + h * u, opt);
    if (!p.ok) {
      failed = true;
      continue;
    }
    const double q = p.distance / h;
    if (q < best) {
      best = q;
      r.h_at_min = h;
    }
  }
  r.residual = best;
  r.member = best <= tol.tangent;
  r.inconclusive = !r.member && failed;
  return r;
}

ConeQueryResult in_contingent_cone(const ConstraintSet& s, const Vec& x, const Vec& v,
                                   const Tolerances& tol) {
  if (auto fast = in_contingent_cone_analytic(s, x, v, tol)) return *fast;
  return in_contingent_cone_numeric(s, x, v, tol);
}

ConstraintSet localized(const ConstraintSet& s, const Vec& x, double radius) {
  build_cells(s);
  const auto& cache = ProjectionEngine::cache(s);
  std::vector<ConstraintSet> kept;
  for (const Cell& cell : cache.cells) {
    std::vector<ConstraintSet> parts;
    for (int i : cell.leaves) {
      parts.push_back(ConstraintSet::leaf(cache.leaves[i].g, cache.leaves[i].rel));
    }
    ConstraintSet piece =
        parts.size() == 1 ? std::move(parts.front()) : ConstraintSet::intersect(std::move(parts));
    ProjectOptions opt;
    opt.stop_below = radius;
    const Projection p = distance_and_project(piece, x, opt);
    if (!p.ok || p.distance <= radius) kept.push_back(std::move(piece));
  }
  if (kept.size() == cache.cells.size()) return s;
  if (kept.empty()) return s;
  return kept.size() == 1 ? kept.front() : ConstraintSet::unite(std::move(kept));
}

ConeQueryResult in_proximal_normal_cone(const ConstraintSet& s, const Vec& x, const Vec& zeta,
                                        const Tolerances& tol) {
  ConeQueryResult r;
  const double nz = zeta.norm();
  if (nz == 0.0) throw std::invalid_argument("proximal normal query with zero direction");
  const Vec u = zeta / nz;
  r.residual = std::numeric_limits<double>::infinity();
  bool failed = false;
  for (double radius : {1e-3, 1e-2, 1e-1}) {
    const Vec y = x + radius * u;
    if (s.contains(y, 0.0)) {
      r.residual = 1.0;
      r.h_at_min = radius;
      break;
    }
    ProjectOptions opt;
    opt.hint = &x;
    opt.stop_below = radius * (1.0 - tol.normal);
    const Projection p = distance_and_project(s, y, opt);
    if (!p.ok) {
      failed = true;
      continue;
    }
    const double mismatch = std::fabs(p.distance - radius) / radius;
    if (mismatch < r.residual) {
      r.residual = mismatch;
      r.h_at_min = radius;
    }
    if (mismatch <= tol.normal) {
      r.member = true;
      r.realized = p.distance > 0 ? Vec((y - p.point) / p.distance) : u;
      return r;
    }
    // Balls tangent at x are nested, so a conclusive failure here repeats at
    // every larger radius.
    break;
  }
  r.inconclusive = failed;
  return r;
}

ConeQueryResult in_hypertangent_cone(const ConstraintSet& s, const Vec& x, const Vec& v,
                                     const Tolerances& tol) {
  ConeQueryResult r;
  const int n = s.dimension();
  const double nv = v.norm();
  const Vec u = nv > 0 ? Vec(v / nv) : Vec::Zero(n);
  const auto dirs = sphere_directions(n, 16);
  double best = std::numeric_limits<double>::infinity();
  for (double eps : {1e-2, 1e-3}) {
    for (double alpha : {1e-2, 1e-3}) {
      double worst = -std::numeric_limits<double>::infinity();
      for (int j = 1; j <= 10; ++j) {
        const double t = alpha * j / 10.0;
        for (const Vec& w : dirs) worst = std::max(worst, s.violation(x + t * (u + eps * w)));
      }
      if (worst <= tol.membership) {
        r.member = true;
        r.residual = std::max(0.0, worst);
        r.h_at_min = alpha;
        return r;
      }
      best = std::min(best, worst);
    }
  }
  r.residual = best;
  r.inconclusive = best < 10.0 * tol.membership;
  return r;
}

Verdict is_set_regular_at(const ConstraintSet& s, const Vec& x, int direction_budget,
                          const Tolerances& tol) {
  Verdict out;
  const int n = s.dimension();
  const auto dirs = sphere_directions(n, direction_budget);
  const auto base = sphere_directions(n, 8, 0xba5e);
  const std::vector<double> radii{1e-3, 1e-4, 1e-5};

  // Nearby points of the set at each radius.
  std::vector<std::vector<Vec>> ys(radii.size());
  for (std::size_t k = 0; k < radii.size(); ++k) {
    ys[k].push_back(x);
    for (const Vec& w : base) {
      ProjectOptions opt;
      opt.hint = &x;
      const Projection p = distance_and_project(s, x + radii[k] * w, opt);
      if (p.ok) {
        ys[k].push_back(p.point);
      } else {
        ++out.inconclusive;
      }
    }
  }

  auto clarke_quotient = [&](std::size_t k, const Vec& v) {
    double q = 0.0;
    for (const Vec& y : ys[k]) {
      for (double h : {radii[k], radii[k] / 4, radii[k] / 16}) {
        ProjectOptions opt;
        opt.hint = &y;
        const Projection p = distance_and_project(s, y + h * v, opt);
        if (!p.ok) {
          ++out.inconclusive;
          continue;
        }
        q = std::max(q, p.distance / h);
      }
    }
    return q;
  };

  for (const Vec& v : dirs) {
    const ConeQueryResult t = in_contingent_cone(s, x, v, tol);
    ++out.samples;
    if (t.inconclusive) {
      ++out.inconclusive;
      continue;
    }
    if (!t.member) continue;
    const double q_small = clarke_quotient(radii.size() - 1, v);
    if (q_small <= tol.tangent) continue;
    const double q_large = clarke_quotient(0, v);
    if (q_small >= 0.1 * q_large) {
      out.outcome = Outcome::kViolated;
      out.witnesses.push_back({x, Vec(), v, q_small, "contingent direction outside the Clarke tangent cone"});
      break;
    }
  }
  if (out.outcome != Outcome::kViolated && out.inconclusive > 0) out.outcome = Outcome::kInconclusive;
  out.proxy = "sample-based";
  return out;
}

std::vector<Vec> active_gradients(const ConstraintSet& s, const Vec& x, double tau) {
  std::vector<Vec> out;
  std::function<void(const Data&)> walk = [&](const Data& d) {
    if (d.kind == ConstraintSet::Kind::kLeaf) {
      if (d.smooth) return walk(*d.smooth);
      if (std::fabs(d.leaf.g.evaluate(x)) > tau) return;
      const Vec g = d.leaf.g.gradient_any_branch(x);
      if (g.norm() > 1e-12) out.push_back(g);
      return;
    }
    for (const auto& c : d.children) walk(ProjectionEngine::data(c));
  };
  walk(ProjectionEngine::data(s));
  return out;
}

}  // namespace invcheck
