#pragma once

// Small constructors shared by the test binaries.

#include <cstdio>
#include <random>
#include <string>

#include "invcheck/geometry.h"
#include "invcheck/inclusion.h"
#include "invcheck/nonsmooth.h"

namespace fixtures {

using invcheck::ConstraintSet;
using invcheck::Expression;
using invcheck::Relation;
using invcheck::Vec;

inline ConstraintSet le(const std::string& g, int n) {
  return ConstraintSet::leaf(Expression::parse(g, n), Relation::kLessEqual);
}

inline ConstraintSet eq(const std::string& g, int n) {
  return ConstraintSet::leaf(Expression::parse(g, n), Relation::kEqual);
}

inline Vec v2(double a, double b) {
  Vec x(2);
  x << a, b;
  return x;
}

inline Vec v3(double a, double b, double c) {
  Vec x(3);
  x << a, b, c;
  return x;
}

inline invcheck::Box box2(double lo1, double hi1, double lo2, double hi2) {
  return {v2(lo1, lo2), v2(hi1, hi2)};
}

// C = {|x2| >= x1^2} u {x1 <= 0} u {x2 = 0}, written with smooth leaves.
inline ConstraintSet example2_set() {
  return ConstraintSet::unite({le("x1^2 - x2", 2), le("x1^2 + x2", 2), le("x1", 2), eq("x2", 2)});
}

// B = 0 for x2 <= 0 and 1 for x2 > 0; the second guard is closed, so the
// minimum rule gives B = 0 on the line x2 = 0.
inline invcheck::PiecewiseFunction example2_function() {
  return invcheck::PiecewiseFunction(
      {{le("x2", 2), Expression::constant(0.0, 2)}, {le("-x2", 2), Expression::constant(1.0, 2)}},
      invcheck::FunctionClass::kLsc, 2);
}

inline invcheck::PiecewiseFunction smooth(const std::string& e, int n) {
  return invcheck::PiecewiseFunction::single(Expression::parse(e, n), invcheck::FunctionClass::kC1);
}

inline invcheck::PiecewiseFunction lipschitz(const std::string& e, int n) {
  return invcheck::PiecewiseFunction::single(Expression::parse(e, n),
                                             invcheck::FunctionClass::kLipschitz);
}

inline invcheck::VectorField field(const std::string& a, const std::string& b) {
  return {Expression::parse(a, 2), Expression::parse(b, 2)};
}

inline invcheck::VelocityMap example1_map() {
  return invcheck::VelocityMap::single({field("1", "0"), field("-cos(x1^2)", "sin(x1^2)")}, 2);
}

inline invcheck::VelocityMap example2_map() {
  return invcheck::VelocityMap({{le("-x1", 2), {field("1", "-x1"), field("1", "x1")}},
                                {le("x1", 2), {field("1", "0")}}},
                               2);
}

inline invcheck::VelocityMap ball_map() {
  return invcheck::VelocityMap::single({field("x2", "-9.81")}, 2);
}

// Random kinked Lipschitz function of two variables built from abs/min/max
// over random smooth terms. Some fixtures use two guarded pieces instead.
inline invcheck::PiecewiseFunction random_lipschitz(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> c(-2.0, 2.0);
  auto term = [&] {
    char buf[160];
    std::snprintf(buf, sizeof buf, "(%.4f*x1 + %.4f*x2 + %.4f + %.4f*x1*x2)", c(rng), c(rng),
                  c(rng), 0.5 * c(rng));
    return std::string(buf);
  };
  switch (rng() % 4) {
    case 0:
      return lipschitz("abs" + term() + " + " + term(), 2);
    case 1:
      return lipschitz("max(" + term() + ", " + term() + ") - abs" + term(), 2);
    case 2:
      return lipschitz("min(" + term() + ", sin" + term() + ")", 2);
    default: {
      // Two pieces glued along a line through the origin.
      const double a = c(rng), b = c(rng);
      char g[96];
      std::snprintf(g, sizeof g, "%.4f*x1 + %.4f*x2", a, b);
      const std::string s1 = term();
      const std::string s2 = s1 + " + (" + std::string(g) + ")*" + term();
      char neg[100];
      std::snprintf(neg, sizeof neg, "-(%s)", g);
      return invcheck::PiecewiseFunction(
          {{le(g, 2), Expression::parse(s1, 2)}, {le(neg, 2), Expression::parse(s2, 2)}},
          invcheck::FunctionClass::kLipschitz, 2);
    }
  }
}

}  // namespace fixtures
