#include "invcheck/common.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace invcheck {

bool Box::contains(const Vec& x, double slack) const {
  for (int i = 0; i < x.size(); ++i) {
    if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
  }
  return true;
}

Vec Box::clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

std::vector<Vec> Box::grid(int k) const {
  const int n = dimension();
  std::vector<Vec> out;
  std::vector<int> idx(n, 0);
  while (true) {
    Vec p(n);
    for (int i = 0; i < n; ++i) {
      p[i] = k == 1 ? 0.5 * (lo[i] + hi[i])
                    : lo[i] + (hi[i] - lo[i]) * static_cast<double>(idx[i]) / (k - 1);
    }
    out.push_back(p);
    int axis = n - 1;
    while (axis >= 0 && ++idx[axis] == k) {
      idx[axis] = 0;
      --axis;
    }
    if (axis < 0) break;
  }
  return out;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kHolds:
      return "HOLDS-ON-SAMPLES";
    case Outcome::kViolated:
      return "VIOLATED";
    case Outcome::kInconclusive:
      return "INCONCLUSIVE";
  }
  return "?";
}

std::uint64_t split_seed(std::uint64_t root, std::uint64_t index) {
  // splitmix64 finalizer applied to the index.
  std::uint64_t z = index + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z = z ^ (z >> 31);
  return root ^ z;
}

std::vector<Vec> sphere_directions(int n, int count, std::uint64_t seed) {
  std::vector<Vec> dirs;
  dirs.reserve(count);
  if (n == 1) {
    for (int k = 0; k < count; ++k) dirs.push_back(Vec::Constant(1, k % 2 == 0 ? 1.0 : -1.0));
    return dirs;
  }
  if (n == 2) {
    for (int k = 0; k < count; ++k) {
      const double a = 2.0 * std::numbers::pi * k / count;
      Vec d(2);
      d << std::cos(a), std::sin(a);
      dirs.push_back(d);
    }
    return dirs;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  while (static_cast<int>(dirs.size()) < count) {
    Vec d(n);
    for (int i = 0; i < n; ++i) d[i] = gauss(rng);
    const double norm = d.norm();
    if (norm < 1e-8) continue;
    dirs.push_back(d / norm);
  }
  return dirs;
}

std::string format_vec(const Vec& v) {
  std::string s = "(";
  for (int i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += fmt::format("{:.17g}", v[i]);
  }
  return s + ")";
}

}  // namespace invcheck
