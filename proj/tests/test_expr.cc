#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "invcheck/expr.h"

using invcheck::Expression;
using invcheck::Node;
using invcheck::NodePtr;
using invcheck::Op;
using invcheck::Vec;

namespace {

Vec v2(double a, double b) {
  Vec x(2);
  x << a, b;
  return x;
}

// Random smooth-ish trees. Division, sqrt and negative powers only ever see
// arguments of the form 1 + s^2, and exp only sees bounded arguments, so the
// sampled functions have moderate third derivatives on |x| <= 10.
class RandomTree {
 public:
  RandomTree(int n, std::uint64_t seed) : n_(n), rng_(seed) {}

  NodePtr make(int depth) {
    if (depth == 0 || pick(4) == 0) return leaf();
    switch (pick(11)) {
      case 0:
        return invcheck::make_node(Op::kAdd, make(depth - 1), make(depth - 1));
      case 1:
        return invcheck::make_node(Op::kSub, make(depth - 1), make(depth - 1));
      case 2:
        return invcheck::make_node(Op::kMul, make(depth - 1), make(depth - 1));
      case 3:
        return invcheck::make_node(Op::kDiv, make(depth - 1), one_plus_square(depth - 1));
      case 4:
        return invcheck::make_node(Op::kSin, make(depth - 1));
      case 5:
        return invcheck::make_node(Op::kCos, make(depth - 1));
      case 6:
        return invcheck::make_node(Op::kExp, invcheck::make_node(Op::kSin, make(depth - 1)));
      case 7:
        return invcheck::make_node(Op::kSqrt, one_plus_square(depth - 1));
      case 8:
        return invcheck::make_node(Op::kPow, one_plus_square(depth - 1), nullptr, 0.0, -1 - pick(2));
      case 9:
        return invcheck::make_node(Op::kPow, make(depth - 1), nullptr, 0.0, pick(4));
      default: {
        const Op op = pick(3) == 0 ? Op::kAbs : (pick(2) ? Op::kMin : Op::kMax);
        if (op == Op::kAbs) return invcheck::make_node(op, make(depth - 1));
        return invcheck::make_node(op, make(depth - 1), make(depth - 1));
      }
    }
  }

  Vec point() {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec x(n_);
    for (int i = 0; i < n_; ++i) x[i] = u(rng_);
    std::uniform_real_distribution<double> r(0.0, 10.0);
    return x.normalized() * r(rng_);
  }

 private:
  int pick(int k) { return std::uniform_int_distribution<int>(0, k - 1)(rng_); }

  NodePtr leaf() {
    if (pick(3) == 0) {
      std::uniform_real_distribution<double> c(-3.0, 3.0);
      return invcheck::make_node(Op::kConst, nullptr, nullptr, c(rng_));
    }
    return invcheck::make_node(Op::kVar, nullptr, nullptr, 0.0, pick(n_));
  }

  NodePtr one_plus_square(int depth) {
    return invcheck::make_node(
        Op::kAdd, invcheck::make_node(Op::kConst, nullptr, nullptr, 1.0),
        invcheck::make_node(Op::kPow, make(depth), nullptr, 0.0, 2));
  }

  int n_;
  std::mt19937_64 rng_;
};

}  // namespace

TEST_CASE("parse builds the expected tree shapes") {
  const auto e = Expression::parse("-cos(x1^2)", 2);
  const Node& root = *e.root();
  REQUIRE(root.op == Op::kNeg);
  REQUIRE(root.a->op == Op::kCos);
  REQUIRE(root.a->a->op == Op::kPow);
  CHECK(root.a->a->index == 2);
  CHECK(root.a->a->a->op == Op::kVar);
  CHECK(root.a->a->a->index == 0);
  CHECK(e.evaluate(v2(0.0, 0.0)) == -1.0);

  const auto x = Expression::parse("x1", 1);
  CHECK(x.root()->op == Op::kVar);
  CHECK(x.root()->index == 0);
}

TEST_CASE("precedence and associativity") {
  CHECK(Expression::parse("1+2*3", 1).evaluate(Vec::Zero(1)) == 7.0);
  CHECK(Expression::parse("2-3-4", 1).evaluate(Vec::Zero(1)) == -5.0);
  CHECK(Expression::parse("8/4/2", 1).evaluate(Vec::Zero(1)) == 1.0);
  CHECK(Expression::parse("-2^2", 1).evaluate(Vec::Zero(1)) == -4.0);
  CHECK(Expression::parse("2^-1", 1).evaluate(Vec::Zero(1)) == 0.5);
  CHECK(Expression::parse("2^(-2)", 1).evaluate(Vec::Zero(1)) == 0.25);
  CHECK(Expression::parse("(x1+1)^2^2", 1).evaluate(Vec::Constant(1, 1.0)) == 16.0);
  CHECK(Expression::parse("--3", 1).evaluate(Vec::Zero(1)) == 3.0);
  CHECK(Expression::parse("2*-3", 1).evaluate(Vec::Zero(1)) == -6.0);
  CHECK(Expression::parse("min(1, x1) + max(1, x1)", 1).evaluate(Vec::Constant(1, 4.0)) == 5.0);
  CHECK(Expression::parse("1.5e2 + .5", 1).evaluate(Vec::Zero(1)) == 150.5);
}

TEST_CASE("evaluate examples") {
  CHECK(Expression::parse("x2^2 - x1", 2).evaluate(v2(1, 2)) == 3.0);
  CHECK(Expression::parse("abs(x1)", 1).evaluate(Vec::Constant(1, -3.0)) == 3.0);
}

TEST_CASE("constants resolve by name") {
  const invcheck::Constants k{{"g", 9.81}};
  const auto e = Expression::parse("g*x1 + 0.5*x2^2", 2, k);
  CHECK(e.evaluate(v2(1, 2)) == doctest::Approx(11.81).epsilon(1e-15));
  const Vec g = e.gradient(v2(0, 1));
  CHECK(g[0] == 9.81);
  CHECK(g[1] == 1.0);
}

TEST_CASE("gradient examples") {
  const Vec g = Expression::parse("-x1", 2).gradient(v2(0, 0));
  CHECK(g[0] == -1.0);
  CHECK(g[1] == 0.0);

  const auto e = Expression::parse("sin(x1)*x2", 2);
  const Vec x = v2(0.3, 2.0);
  const Vec grad = e.gradient(x);
  const double h = 1e-5;
  for (int i = 0; i < 2; ++i) {
    Vec p = x, m = x;
    p[i] += h;
    m[i] -= h;
    const double fd = (e.evaluate(p) - e.evaluate(m)) / (2 * h);
    CHECK(std::fabs(grad[i] - fd) <= 1e-6 * std::fabs(grad[i]) + 1e-9);
  }
}

TEST_CASE("parse errors carry byte offsets") {
  try {
    Expression::parse("x1 + * 2", 2);
    FAIL("expected ParseError");
  } catch (const invcheck::ParseError& e) {
    CHECK(e.offset() == 5);
  }
  try {
    Expression::parse("x3", 2);
    FAIL("expected ParseError");
  } catch (const invcheck::ParseError& e) {
    CHECK(std::string(e.what()).find("exceeds dimension") != std::string::npos);
    CHECK(e.offset() == 0);
  }
  try {
    Expression::parse("1 + foo", 1);
    FAIL("expected ParseError");
  } catch (const invcheck::ParseError& e) {
    CHECK(std::string(e.what()).find("unknown identifier 'foo'") != std::string::npos);
    CHECK(e.offset() == 4);
  }
  CHECK_THROWS_AS(Expression::parse("", 1), invcheck::ParseError);
  CHECK_THROWS_AS(Expression::parse("x1^1.5", 1), invcheck::ParseError);
  CHECK_THROWS_AS(Expression::parse("x0", 1), invcheck::ParseError);
  CHECK_THROWS_AS(Expression::parse("(x1", 1), invcheck::ParseError);
  CHECK_THROWS_AS(Expression::parse("min(x1)", 1), invcheck::ParseError);
  CHECK_THROWS_AS(Expression::parse("x1 x1", 1), invcheck::ParseError);
}

TEST_CASE("domain errors are reported, never NaN") {
  CHECK_THROWS_AS(Expression::parse("sqrt(x1)", 1).evaluate(Vec::Constant(1, -1.0)),
                  invcheck::DomainError);
  CHECK_THROWS_AS(Expression::parse("1/x1", 1).evaluate(Vec::Zero(1)), invcheck::DomainError);
  CHECK_THROWS_AS(Expression::parse("x1^-1", 1).evaluate(Vec::Zero(1)), invcheck::DomainError);
  CHECK_THROWS_AS(Expression::parse("exp(x1)", 1).evaluate(Vec::Constant(1, 1000.0)),
                  invcheck::DomainError);
  CHECK_THROWS_AS(Expression::parse("sqrt(x1)", 1).gradient(Vec::Zero(1)), invcheck::DomainError);
}

TEST_CASE("kinks are detected on the switching surface") {
  CHECK_THROWS_AS(Expression::parse("abs(x1)", 1).gradient(Vec::Zero(1)), invcheck::KinkError);
  CHECK_THROWS_AS(Expression::parse("max(x1, x2)", 2).gradient(v2(1, 1)), invcheck::KinkError);
  CHECK(Expression::parse("abs(x1)", 1).gradient(Vec::Constant(1, -2.0))[0] == -1.0);
  CHECK(Expression::parse("abs(x1)", 1).gradient_any_branch(Vec::Zero(1))[0] == 1.0);

  const auto branches = Expression::parse("abs(x1) + max(x1, x2)", 2).smooth_branches(v2(0, 0));
  CHECK(branches.size() == 4);
  for (const auto& b : branches) CHECK_FALSE(b.has_kink_nodes());
  const auto away = Expression::parse("abs(x1)", 1).smooth_branches(Vec::Constant(1, -1.0));
  REQUIRE(away.size() == 1);
  CHECK(away[0].to_string() == "(-x1)");
}

TEST_CASE("affinity detection") {
  CHECK(Expression::parse("2*x1 - x2/4 + 3", 2).is_affine());
  CHECK(Expression::parse("-x2", 2).is_affine());
  CHECK(Expression::parse("x1^1 + sin(2)", 2).is_affine());
  CHECK_FALSE(Expression::parse("x1*x2", 2).is_affine());
  CHECK_FALSE(Expression::parse("x1^2 - x2", 2).is_affine());
  CHECK_FALSE(Expression::parse("abs(x1)", 1).is_affine());
  CHECK_FALSE(Expression::parse("1/x1", 1).is_affine());
}

TEST_CASE("print then parse round-trips") {
  const char* corpus[] = {"-cos(x1^2)", "sin(x1^2)",     "x1^2 - x2",   "x1^2 + x2",
                          "-x1",        "g*x1+0.5*x2^2", "abs(x1)-3",   "min(x1, -x2)",
                          "2^-3*x1",    "-(x1-x2)/(-2)", "1e-300*x1",   "exp(-x1^2)"};
  const invcheck::Constants k{{"g", 9.81}};
  for (const char* src : corpus) {
    const auto e = Expression::parse(src, 2, k);
    const auto again = Expression::parse(e.to_string(), 2, k);
    CHECK_MESSAGE(again.structurally_equal(e), src, " printed as ", e.to_string());
  }
  RandomTree gen(3, 7);
  for (int i = 0; i < 500; ++i) {
    const Expression e(gen.make(4), 3);
    const auto again = Expression::parse(e.to_string(), 3);
    REQUIRE_MESSAGE(again.structurally_equal(e), e.to_string());
  }
}

TEST_CASE("evaluation is bit-identical on repeat") {
  RandomTree gen(3, 11);
  for (int i = 0; i < 200; ++i) {
    const Expression e(gen.make(4), 3);
    const Vec x = gen.point();
    double a = 0, b = 0;
    try {
      a = e.evaluate(x);
      b = e.evaluate(x);
    } catch (const invcheck::DomainError&) {
      continue;
    }
    CHECK(std::memcmp(&a, &b, sizeof a) == 0);
  }
}

TEST_CASE("gradient matches central differences on random pairs") {
  RandomTree gen(3, 2024);
  const double h = 1e-5;
  int tested = 0;
  int attempts = 0;
  while (tested < 1000) {
    REQUIRE(++attempts < 20000);
    const Expression e(gen.make(3), 3);
    const Vec x = gen.point();
    // Skip points whose h-neighbourhood crosses a kink.
    bool near_kink = false;
    for (int i = 0; i < 3 && !near_kink; ++i) {
      for (double s : {-h, h}) {
        Vec y = x;
        y[i] += s;
        const auto here = e.smooth_branches(x);
        const auto there = e.smooth_branches(y);
        if (here.size() != 1 || there.size() != 1 || !here[0].structurally_equal(there[0])) {
          near_kink = true;
        }
      }
    }
    if (near_kink) continue;
    Vec g;
    try {
      g = e.gradient(x);
    } catch (const invcheck::KinkError&) {
      continue;
    }
    for (int i = 0; i < 3; ++i) {
      Vec p = x, m = x;
      p[i] += h;
      m[i] -= h;
      const double fd = (e.evaluate(p) - e.evaluate(m)) / (2 * h);
      CHECK_MESSAGE(std::fabs(g[i] - fd) <= 1e-6 * (1 + g.norm()), e.to_string(), " at ",
                    invcheck::format_vec(x));
    }
    ++tested;
  }
}

TEST_CASE("builders compose and lift") {
  const auto a = Expression::variable(0, 2);
  const auto b = Expression::constant(3.0, 2);
  const auto e = 2.0 * a + b * a - (-b);
  CHECK(e.evaluate(v2(1, 0)) == 8.0);
  CHECK((-b).root()->op == Op::kConst);
  const auto lifted = e.lifted(3);
  CHECK(lifted.dimension() == 3);
  Vec x3(3);
  x3 << 1, 0, 42;
  CHECK(lifted.evaluate(x3) == 8.0);
}
