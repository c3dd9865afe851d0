#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.h"
#include "invcheck/verdict.h"

using namespace fixtures;
using invcheck::AssumptionId;
using invcheck::ConditionId;
using invcheck::Outcome;
using invcheck::System;
using invcheck::VelocityMap;

namespace {

constexpr double kGamma = 9.81;

System example1() { return {eq("x2", 2), example1_map(), smooth("-x1", 2), box2(-1, 1, -1, 1)}; }

System ball() {
  return {le("-x1", 2), ball_map(), smooth("9.81*x1 + x2^2/2", 2), box2(0, 2, -2, 2)};
}

System example2() {
  return {example2_set(), example2_map(), example2_function(), box2(-1, 1, -1, 1)};
}

std::vector<invcheck::LabeledPoint> closure_points(const System& s, int k) {
  return invcheck::label_points(s, invcheck::closure_grid(s.c, s.box, k));
}

std::vector<invcheck::LabeledPoint> boundary_points(const System& s, int k) {
  return invcheck::label_points(s, invcheck::boundary_grid(s.c, s.box, k));
}

bool near(const Vec& a, const Vec& b, double tol) { return (a - b).norm() <= tol; }

}  // namespace

TEST_CASE("condition and assumption names round-trip") {
  for (auto id : invcheck::all_conditions()) {
    CHECK(invcheck::parse_condition(invcheck::condition_name(id)) == id);
  }
  for (auto id : invcheck::all_assumptions()) {
    CHECK(invcheck::parse_assumption(invcheck::assumption_name(id)) == id);
  }
  CHECK_FALSE(invcheck::parse_condition("COND-NOPE").has_value());
  CHECK(invcheck::condition_domain(ConditionId::kGrad) == invcheck::Domain::kCtilde);
  CHECK(invcheck::condition_domain(ConditionId::kGradInt) == invcheck::Domain::kInterior);
}

TEST_CASE("boundary grid examples") {
  const auto half = invcheck::boundary_grid(le("-x1", 2), box2(-1, 1, -1, 1), 5);
  CHECK(half.size() == 5);
  for (const auto& p : half) CHECK(p[0] == 0.0);

  const auto c = example2_set();
  const auto pts = invcheck::boundary_grid(c, box2(-1, 1, -1, 1), 21);
  int line = 0;
  for (const auto& p : pts) {
    INFO(invcheck::format_vec(p));
    CHECK(std::fabs(c.violation(p)) <= 1e-9);
    if (p[1] == 0.0 && p[0] > 0) ++line;
    if (p[1] != 0.0) CHECK(std::fabs(std::fabs(p[1]) - p[0] * p[0]) <= 1e-12);
  }
  CHECK(line == 10);
}

TEST_CASE("nontrivial-start labels for the bouncing ball") {
  const System s = ball();
  int wrong = 0, unknown = 0;
  for (int i = 0; i < 100; ++i) {
    const double x2 = -5.0 + 10.0 * i / 99;
    const auto p = invcheck::label_points(s, {v2(0, x2)}).front();
    CHECK(p.boundary);
    if (p.ctilde.label == invcheck::CtildeLabel::kUnknown) {
      ++unknown;
    } else if ((p.ctilde.label == invcheck::CtildeLabel::kNontrivial) != (x2 > 0)) {
      ++wrong;
    }
  }
  CHECK(wrong == 0);
  CHECK(unknown <= 5);
}

TEST_CASE("Example 1: gradient condition fails at the origin") {
  const System s = example1();
  const auto grid = closure_points(s, 21);
  const auto v = invcheck::check_condition(s, ConditionId::kGrad, grid);
  REQUIRE(v.outcome == Outcome::kViolated);
  const auto& w = v.witnesses.front();
  CHECK(near(w.point, v2(0, 0), 1e-12));
  CHECK(near(w.zeta, v2(-1, 0), 1e-6));
  CHECK(w.value == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(v.samples == 21);

  // The interior conditions are vacuous on a line.
  const auto vi = invcheck::check_condition(s, ConditionId::kGradInt, grid);
  CHECK(vi.outcome == Outcome::kHolds);
  CHECK(vi.samples == 0);
}

TEST_CASE("bouncing ball: gradient condition holds with exact cancellation") {
  const System s = ball();
  const auto grid = closure_points(s, 21);
  CHECK(grid.size() == 441);
  const auto v = invcheck::check_condition(s, ConditionId::kGrad, grid);
  CHECK(v.outcome == Outcome::kHolds);
  // Oracle: grad B . F = gamma x2 - x2 gamma, evaluated directly.
  std::size_t in_domain = 0;
  for (const auto& p : grid) {
    if (p.ctilde.label == invcheck::CtildeLabel::kTrivialOnly) continue;
    ++in_domain;
    const Vec g = v2(kGamma, p.x[1]);
    CHECK(std::fabs(g.dot(v2(p.x[1], -kGamma))) <= 1e-12);
  }
  CHECK(v.samples == in_domain);
  CHECK(v.samples >= 441 - 11);

  const auto vc = invcheck::check_condition(s, ConditionId::kClarke, grid);
  CHECK(vc.outcome == Outcome::kHolds);
  CHECK(invcheck::check_condition(s, ConditionId::kGradInt, grid).outcome == Outcome::kHolds);
}

TEST_CASE("class tags gate the derivative objects") {
  const System s = example2();
  const std::vector<invcheck::LabeledPoint> none;
  CHECK_THROWS_AS(invcheck::check_condition(s, ConditionId::kGrad, none), std::invalid_argument);
  CHECK_THROWS_AS(invcheck::check_condition(s, ConditionId::kClarke, none),
                  std::invalid_argument);
  CHECK_NOTHROW(invcheck::check_condition(s, ConditionId::kProxCone, none));
}

TEST_CASE("Example 2: proximal cone condition holds on the boundary") {
  const System s = example2();
  const auto grid = boundary_points(s, 41);
  const auto v = invcheck::check_condition(s, ConditionId::kProxCone, grid);
  INFO((v.witnesses.empty() ? std::string() : invcheck::format_vec(v.witnesses.front().point)));
  CHECK(v.outcome == Outcome::kHolds);
  CHECK(v.samples >= 20);

  const auto interior = closure_points(s, 11);
  CHECK(invcheck::check_condition(s, ConditionId::kProxCone, interior).outcome ==
        Outcome::kHolds);
  CHECK(invcheck::check_condition(s, ConditionId::kProxInt, interior).outcome == Outcome::kHolds);
}

TEST_CASE("proximal conditions detect an increasing function") {
  // B = x1 with F = (1, 0) on the plane: the epigraph normal (1, -1) sees an increase.
  const System s{ConstraintSet::whole_space(2), VelocityMap::single({field("1", "0")}, 2),
                 invcheck::PiecewiseFunction::single(Expression::parse("x1", 2),
                                                     invcheck::FunctionClass::kLsc),
                 box2(-1, 1, -1, 1)};
  const auto grid = closure_points(s, 3);
  const auto v = invcheck::check_condition(s, ConditionId::kProxCone, grid);
  REQUIRE(v.outcome == Outcome::kViolated);
  CHECK(v.witnesses.front().value == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-6));
  const auto vp = invcheck::check_condition(s, ConditionId::kProxPt, grid);
  REQUIRE(vp.outcome == Outcome::kViolated);
  CHECK(near(vp.witnesses.front().eta, v2(1, 0), 1e-6));
  CHECK(vp.witnesses.front().value == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("M2: Example 2 fails on the line, the ball holds") {
  const System s2 = example2();
  const invcheck::FDiagnostics f2 = invcheck::diagnose_f(s2);
  const auto v2r = invcheck::check_assumption(s2, AssumptionId::kM2, boundary_points(s2, 21), f2);
  REQUIRE(v2r.outcome == Outcome::kViolated);
  const auto& w = v2r.witnesses.front();
  CHECK(w.point[1] == 0.0);
  CHECK(w.point[0] > 0.1);
  CHECK(w.point[0] <= 1.0);

  const System sb = ball();
  const auto vb =
      invcheck::check_assumption(sb, AssumptionId::kM2, boundary_points(sb, 21), invcheck::diagnose_f(sb));
  CHECK(vb.outcome == Outcome::kHolds);
  CHECK(vb.samples == 10);
}

TEST_CASE("M1 proxies: Example 1 loses its admissible vertex at the origin") {
  const System s1 = example1();
  const auto f1 = invcheck::diagnose_f(s1);
  const auto grid1 = closure_points(s1, 21);
  for (auto id : {AssumptionId::kM1, AssumptionId::kM1Prime}) {
    const auto v = invcheck::check_assumption(s1, id, grid1, f1);
    INFO(invcheck::assumption_name(id));
    REQUIRE(v.outcome == Outcome::kViolated);
    CHECK(near(v.witnesses.front().point, v2(0, 0), 1e-12));
    CHECK(v.witnesses.size() == 1);
  }

  const System sb = ball();
  const auto fb = invcheck::diagnose_f(sb);
  const auto gridb = boundary_points(sb, 21);
  CHECK(invcheck::check_assumption(sb, AssumptionId::kM1, gridb, fb).outcome == Outcome::kHolds);
  CHECK(invcheck::check_assumption(sb, AssumptionId::kM1Prime, gridb, fb).outcome ==
        Outcome::kHolds);
}

TEST_CASE("A3, A5 and A1 examples") {
  const System s1 = example1();
  const auto f1 = invcheck::diagnose_f(s1);
  CHECK(invcheck::check_assumption(s1, AssumptionId::kA3, closure_points(s1, 5), f1).outcome ==
        Outcome::kViolated);
  CHECK(invcheck::check_assumption(s1, AssumptionId::kA1, {}, f1).outcome == Outcome::kHolds);

  const System sb = ball();
  const auto fb = invcheck::diagnose_f(sb);
  const auto gb = boundary_points(sb, 21);
  CHECK(invcheck::check_assumption(sb, AssumptionId::kA3, gb, fb).outcome == Outcome::kHolds);
  CHECK(invcheck::check_assumption(sb, AssumptionId::kA5, gb, fb).outcome == Outcome::kHolds);

  // Near (0.5, 0) the interior of Example 2's set is at distance 0.25.
  const System s2 = example2();
  const auto f2 = invcheck::diagnose_f(s2);
  const auto p = invcheck::label_points(s2, {v2(0.5, 0)});
  const auto a3 = invcheck::check_assumption(s2, AssumptionId::kA3, p, f2);
  CHECK(a3.outcome == Outcome::kViolated);
  const auto a5 = invcheck::check_assumption(s2, AssumptionId::kA5, p, f2);
  REQUIRE(a5.outcome == Outcome::kViolated);
  CHECK(a5.witnesses.front().value == doctest::Approx(1.0));
}

TEST_CASE("theory table conclusions for the three examples") {
  {
    const System s = ball();
    const auto f = invcheck::diagnose_f(s);
    const auto grid = closure_points(s, 11);
    std::map<ConditionId, invcheck::Verdict> cond{
        {ConditionId::kGrad, invcheck::check_condition(s, ConditionId::kGrad, grid)}};
    const auto bgrid = boundary_points(s, 21);
    std::map<AssumptionId, invcheck::Verdict> as{
        {AssumptionId::kM1, invcheck::check_assumption(s, AssumptionId::kM1, bgrid, f)},
        {AssumptionId::kM2, invcheck::check_assumption(s, AssumptionId::kM2, bgrid, f)}};
    const auto c = invcheck::apply_theory(s, cond, as, f, false);
    CHECK(c.rule == "grad-equivalent");
    CHECK(c.direction == invcheck::Direction::kEquivalent);
    CHECK(c.property == "holds");
  }
  {
    const System s = example1();
    const auto f = invcheck::diagnose_f(s);
    std::map<ConditionId, invcheck::Verdict> cond{
        {ConditionId::kGrad,
         invcheck::check_condition(s, ConditionId::kGrad, closure_points(s, 21))}};
    const auto c = invcheck::apply_theory(s, cond, {}, f, false);
    CHECK(c.direction == invcheck::Direction::kNone);
    CHECK(c.rule == "none");
    CHECK(c.condition_outcome == Outcome::kViolated);
  }
  {
    const System s = example2();
    const auto f = invcheck::diagnose_f(s);
    const auto bgrid = boundary_points(s, 21);
    std::map<ConditionId, invcheck::Verdict> cond{
        {ConditionId::kProxCone, invcheck::check_condition(s, ConditionId::kProxCone, bgrid)}};
    std::map<AssumptionId, invcheck::Verdict> as{
        {AssumptionId::kM2, invcheck::check_assumption(s, AssumptionId::kM2, bgrid, f)}};
    const auto c = invcheck::apply_theory(s, cond, as, f, false);
    CHECK(c.direction == invcheck::Direction::kNone);
    CHECK(c.condition_outcome == Outcome::kHolds);
  }
}

TEST_CASE("theory table: direction must match the condition verdict") {
  const System s = ball();
  const auto f = invcheck::diagnose_f(s);
  invcheck::Verdict held, failed;
  failed.outcome = Outcome::kViolated;
  // Sufficiency needs a holding condition, so a violated one yields nothing without M1.
  auto c = invcheck::apply_theory(s, {{ConditionId::kGrad, failed}}, {}, f, false);
  CHECK(c.direction == invcheck::Direction::kNone);
  c = invcheck::apply_theory(s, {{ConditionId::kGrad, held}}, {}, f, false);
  CHECK(c.rule == "grad-sufficient");
  CHECK(c.property == "holds");
  // Necessity of the interior gradient condition only speaks when it fails.
  c = invcheck::apply_theory(s, {{ConditionId::kGradInt, failed}}, {}, f, false);
  CHECK(c.rule == "grad-int-necessary");
  CHECK(c.property == "fails");
  for (const auto& row : invcheck::theory_table()) {
    CHECK_FALSE(row.hypotheses.empty());
    CHECK(row.hypotheses.front() == "A1");
  }
}

namespace {

// Kinked B = max(<a, x>, <b, x>) + 0.3 x1 x2 with a constant polytope F on the
// half-plane x1 >= 0; the origin sits on the kink and on the boundary.
System bilinear_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  char b[200];
  const double a1 = u(rng), a2 = u(rng), b1 = u(rng), b2 = u(rng);
  std::snprintf(b, sizeof b, "max(%.4f*x1 + %.4f*x2, %.4f*x1 + %.4f*x2) + 0.3*x1*x2", a1, a2, b1,
                b2);
  std::vector<invcheck::VectorField> verts;
  const int m = 2 + static_cast<int>(rng() % 2);
  for (int i = 0; i < m; ++i) {
    char f1[32], f2[32];
    std::snprintf(f1, sizeof f1, "%.4f", u(rng));
    std::snprintf(f2, sizeof f2, "%.4f", u(rng));
    verts.push_back(field(f1, f2));
  }
  return {le("-x1", 2), VelocityMap::single(verts, 2), lipschitz(b, 2),
          box2(-0.5, 0.5, -0.5, 0.5)};
}

// Oracle for COND-CLARKE at the given points: 100 samples of the Clarke hull
// against the admissible velocity samples.
Outcome sampled_clarke(const System& s, const std::vector<invcheck::LabeledPoint>& grid) {
  for (const auto& p : grid) {
    if (p.ctilde.label == invcheck::CtildeLabel::kTrivialOnly) continue;
    const auto verts = invcheck::clarke_gradient(s.b, p.x).vertices;
    std::vector<Vec> hull;
    if (verts.size() == 1) {
      hull = verts;
    } else {
      REQUIRE(verts.size() == 2);
      for (int i = 0; i < 100; ++i) {
        const double t = i / 99.0;
        hull.push_back((1 - t) * verts[0] + t * verts[1]);
      }
    }
    for (const auto& smp : invcheck::admissible_velocities(s.f, s.c, p.x)) {
      if (!smp.admissible) continue;
      for (const auto& eta : hull) {
        const double ip = eta.dot(smp.velocity);
        const double scale =
            (eta.norm() > 1 && smp.velocity.norm() > 1) ? eta.norm() * smp.velocity.norm() : 1.0;
        if (ip > 1e-6 * scale) return Outcome::kViolated;
      }
    }
  }
  return Outcome::kHolds;
}

}  // namespace

TEST_CASE("vertex sufficiency on bilinear fixtures") {
  int holds = 0, violated = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const System s = bilinear_fixture(seed);
    const auto grid = invcheck::label_points(s, {v2(0, 0), v2(0, 0.25), v2(0.25, 0)});
    const auto v = invcheck::check_condition(s, ConditionId::kClarke, grid);
    INFO("fixture ", seed);
    CHECK(v.outcome == sampled_clarke(s, grid));
    (v.outcome == Outcome::kHolds ? holds : violated)++;
  }
  CHECK(holds >= 5);
  CHECK(violated >= 5);
}

TEST_CASE("positive scaling leaves verdicts and witness points unchanged") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const System s = bilinear_fixture(seed);
    const auto grid = invcheck::label_points(s, s.box.grid(5));
    for (auto id : {ConditionId::kClarke, ConditionId::kClarkeInt, ConditionId::kGradAeInt,
                    ConditionId::kClarkeNp}) {
      const auto base = invcheck::check_condition(s, id, grid);
      for (double c : {0.5, 2.0}) {
        System scaled = s;
        scaled.b = s.b.scaled(c);
        const auto v = invcheck::check_condition(scaled, id, grid);
        INFO(invcheck::condition_name(id), " fixture ", seed, " c=", c);
        REQUIRE(v.outcome == base.outcome);
        REQUIRE(v.witnesses.size() == base.witnesses.size());
        for (std::size_t i = 0; i < v.witnesses.size(); ++i) {
          CHECK(near(v.witnesses[i].point, base.witnesses[i].point, 0.0));
          CHECK(v.witnesses[i].value == doctest::Approx(c * base.witnesses[i].value));
        }
      }
    }
  }
  // The same for the smooth and lsc examples.
  for (const System& s : {ball(), example1()}) {
    const auto grid = closure_points(s, 11);
    const auto base = invcheck::check_condition(s, ConditionId::kGrad, grid);
    System scaled = s;
    scaled.b = s.b.scaled(2.0);
    const auto v = invcheck::check_condition(scaled, ConditionId::kGrad, grid);
    CHECK(v.outcome == base.outcome);
  }
  const System s2 = example2();
  const auto g2 = boundary_points(s2, 21);
  System half = s2;
  half.b = s2.b.scaled(0.5);
  CHECK(invcheck::check_condition(half, ConditionId::kProxCone, g2).outcome ==
        invcheck::check_condition(s2, ConditionId::kProxCone, g2).outcome);
}

TEST_CASE("monotone budget: refining the grid never clears a violation") {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    const System s = bilinear_fixture(seed);
    const auto coarse = invcheck::label_points(s, s.box.grid(3));
    const auto fine = invcheck::label_points(s, s.box.grid(5));  // contains the coarse grid
    for (auto id : {ConditionId::kClarke, ConditionId::kClarkeInt}) {
      if (invcheck::check_condition(s, id, coarse).outcome == Outcome::kViolated) {
        CHECK(invcheck::check_condition(s, id, fine).outcome == Outcome::kViolated);
      }
    }
  }
  const System s1 = example1();
  CHECK(invcheck::check_condition(s1, ConditionId::kGrad, closure_points(s1, 41)).outcome ==
        Outcome::kViolated);

  // A larger direction budget never clears a proximal-normal violation.
  const System inc{ConstraintSet::whole_space(2), VelocityMap::single({field("1", "0.2")}, 2),
                   invcheck::PiecewiseFunction::single(Expression::parse("x1 + abs(x2)", 2),
                                                       invcheck::FunctionClass::kLsc),
                   box2(-1, 1, -1, 1)};
  const auto grid = closure_points(inc, 3);
  for (int budget : {4, 16, 64}) {
    invcheck::CheckOptions o;
    o.directions_per_dim = budget;
    CHECK(invcheck::check_condition(inc, ConditionId::kProxCone, grid, o).outcome ==
          Outcome::kViolated);
  }
}

TEST_CASE("parallel evaluation matches the serial result") {
  const System s = ball();
  const auto grid = closure_points(s, 11);
  invcheck::CheckOptions par;
  par.jobs = 3;
  const auto a = invcheck::check_condition(s, ConditionId::kGrad, grid);
  const auto b = invcheck::check_condition(s, ConditionId::kGrad, grid, par);
  CHECK(a.outcome == b.outcome);
  CHECK(a.samples == b.samples);
  const System s1 = example1();
  const auto g1 = closure_points(s1, 21);
  const auto c = invcheck::check_condition(s1, ConditionId::kGrad, g1);
  const auto d = invcheck::check_condition(s1, ConditionId::kGrad, g1, par);
  REQUIRE(c.witnesses.size() == d.witnesses.size());
  for (std::size_t i = 0; i < c.witnesses.size(); ++i) {
    CHECK(near(c.witnesses[i].point, d.witnesses[i].point, 0.0));
    CHECK(c.witnesses[i].value == d.witnesses[i].value);
  }
}
