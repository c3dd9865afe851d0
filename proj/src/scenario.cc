#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "invcheck/cli.h"

namespace invcheck {

namespace {

using nlohmann::json;

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid scenario:";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Validation walks the whole document and records every problem with its
// JSON path instead of stopping at the first one.
class Loader {
 public:
  std::vector<std::string> problems;

  void fail(const std::string& path, const std::string& msg) {
    problems.push_back(fmt::format("{}: {}", path, msg));
  }

  void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) return;
    for (const auto& [k, _] : obj.items()) {
      bool known = false;
      for (const char* key : keys) known = known || k == key;
      if (!known) fail(path, fmt::format("unknown key \"{}\"", k));
    }
  }

  const json* member(const json& obj, const char* key, const std::string& path, bool required) {
    if (obj.is_object()) {
      auto it = obj.find(key);
      if (it != obj.end()) return &*it;
    }
    if (required) fail(path, fmt::format("missing required field \"{}\"", key));
    return nullptr;
  }

  std::optional<double> number(const json& v, const std::string& path) {
    if (!v.is_number()) {
      fail(path, "expected a number");
      return std::nullopt;
    }
    const double d = v.get<double>();
    if (!std::isfinite(d)) {
      fail(path, "number is not finite");
      return std::nullopt;
    }
    return d;
  }

  std::optional<long long> integer(const json& v, const std::string& path, long long lo,
                                   long long hi) {
    if (!v.is_number_integer()) {
      fail(path, "expected an integer");
      return std::nullopt;
    }
    const long long i = v.get<long long>();
    if (i < lo || i > hi) {
      fail(path, fmt::format("expected an integer in [{}, {}]", lo, hi));
      return std::nullopt;
    }
    return i;
  }

  std::optional<Expression> expression(const json& v, const std::string& path, int n,
                                       const Constants& constants) {
    if (!v.is_string()) {
      fail(path, "expected an expression string");
      return std::nullopt;
    }
    try {
      return Expression::parse(v.get<std::string>(), n, constants);
    } catch (const std::exception& e) {
      fail(path, fmt::format("\"{}\": {}", v.get<std::string>(), e.what()));
      return std::nullopt;
    }
  }

  std::optional<Vec> point(const json& v, const std::string& path, int n) {
    if (!v.is_array() || static_cast<int>(v.size()) != n) {
      fail(path, fmt::format("expected an array of {} numbers", n));
      return std::nullopt;
    }
    Vec x(n);
    bool ok = true;
    for (int i = 0; i < n; ++i) {
      auto d = number(v[i], fmt::format("{}[{}]", path, i));
      if (d) {
        x[i] = *d;
      } else {
        ok = false;
      }
    }
    if (!ok) return std::nullopt;
    return x;
  }

  std::optional<ConstraintSet> set(const json& v, const std::string& path, int n,
                                   const Constants& constants) {
    if (v.is_string() && v.get<std::string>() == "everywhere") {
      return ConstraintSet::whole_space(n);
    }
    if (!v.is_object() || v.size() != 1) {
      fail(path, "expected \"everywhere\" or an object with one of le, ge, eq, union, intersection");
      return std::nullopt;
    }
    const auto& [key, body] = *v.items().begin();
    const std::string sub = path + "." + key;
    if (key == "le" || key == "ge" || key == "eq") {
      auto g = expression(body, sub, n, constants);
      if (!g) return std::nullopt;
      if (key == "eq") return ConstraintSet::leaf(*g, Relation::kEqual);
      return ConstraintSet::leaf(key == "le" ? *g : -*g, Relation::kLessEqual);
    }
    if (key == "union" || key == "intersection") {
      if (!body.is_array() || body.empty()) {
        fail(sub, "expected a nonempty array of sets");
        return std::nullopt;
      }
      std::vector<ConstraintSet> parts;
      bool ok = true;
      for (std::size_t i = 0; i < body.size(); ++i) {
        auto part = set(body[i], fmt::format("{}[{}]", sub, i), n, constants);
        if (part) {
          parts.push_back(*part);
        } else {
          ok = false;
        }
      }
      if (!ok) return std::nullopt;
      return key == "union" ? ConstraintSet::unite(std::move(parts))
                            : ConstraintSet::intersect(std::move(parts));
    }
    fail(path, fmt::format("unknown set operator \"{}\"", key));
    return std::nullopt;
  }

  std::optional<std::vector<VectorField>> vertices(const json& v, const std::string& path, int n,
                                                   const Constants& constants) {
    if (!v.is_array() || v.empty()) {
      fail(path, "expected a nonempty array of velocity vectors");
      return std::nullopt;
    }
    std::vector<VectorField> out;
    bool ok = true;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string vp = fmt::format("{}[{}]", path, i);
      if (!v[i].is_array() || static_cast<int>(v[i].size()) != n) {
        fail(vp, fmt::format("expected {} component expressions", n));
        ok = false;
        continue;
      }
      VectorField field;
      for (int j = 0; j < n; ++j) {
        auto e = expression(v[i][j], fmt::format("{}[{}]", vp, j), n, constants);
        if (e) {
          field.push_back(*e);
        } else {
          ok = false;
        }
      }
      out.push_back(std::move(field));
    }
    if (!ok) return std::nullopt;
    return out;
  }

  std::optional<VelocityMap> map(const json& v, const std::string& path, int n,
                                 const Constants& constants) {
    if (!v.is_object()) {
      fail(path, "expected an object with \"vertices\" or \"branches\"");
      return std::nullopt;
    }
    allow_keys(v, path, {"vertices", "branches"});
    if (v.contains("vertices") == v.contains("branches")) {
      fail(path, "give exactly one of \"vertices\" and \"branches\"");
      return std::nullopt;
    }
    if (v.contains("vertices")) {
      auto verts = vertices(v["vertices"], path + ".vertices", n, constants);
      if (!verts) return std::nullopt;
      return VelocityMap::single(std::move(*verts), n);
    }
    const json& bs = v["branches"];
    if (!bs.is_array() || bs.empty()) {
      fail(path + ".branches", "expected a nonempty array");
      return std::nullopt;
    }
    std::vector<VelocityMap::Branch> branches;
    bool ok = true;
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const std::string bp = fmt::format("{}.branches[{}]", path, i);
      allow_keys(bs[i], bp, {"guard", "vertices"});
      const json* g = member(bs[i], "guard", bp, true);
      const json* vs = member(bs[i], "vertices", bp, true);
      std::optional<ConstraintSet> guard;
      std::optional<std::vector<VectorField>> verts;
      if (g) guard = set(*g, bp + ".guard", n, constants);
      if (vs) verts = vertices(*vs, bp + ".vertices", n, constants);
      if (guard && verts) {
        branches.push_back({*guard, std::move(*verts)});
      } else {
        ok = false;
      }
    }
    if (!ok) return std::nullopt;
    return VelocityMap(std::move(branches), n);
  }

  std::optional<PiecewiseFunction> function(const json& v, const std::string& path, int n,
                                            const Constants& constants) {
    if (!v.is_object()) {
      fail(path, "expected an object with \"class\" and \"expr\" or \"pieces\"");
      return std::nullopt;
    }
    allow_keys(v, path, {"class", "expr", "pieces"});
    std::optional<FunctionClass> cls;
    if (const json* c = member(v, "class", path, true)) {
      if (c->is_string()) cls = parse_class(c->get<std::string>());
      if (!cls) {
        fail(path + ".class",
             "expected one of \"lsc\", \"lipschitz\", \"lipschitz-regular\", "
             "\"nonpathological\", \"C1\"");
      }
    }
    if (v.contains("expr") == v.contains("pieces")) {
      fail(path, "give exactly one of \"expr\" and \"pieces\"");
      return std::nullopt;
    }
    if (v.contains("expr")) {
      auto e = expression(v["expr"], path + ".expr", n, constants);
      if (!e || !cls) return std::nullopt;
      return PiecewiseFunction::single(*e, *cls);
    }
    const json& ps = v["pieces"];
    if (!ps.is_array() || ps.empty()) {
      fail(path + ".pieces", "expected a nonempty array");
      return std::nullopt;
    }
    std::vector<PiecewiseFunction::Piece> pieces;
    bool ok = cls.has_value();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const std::string pp = fmt::format("{}.pieces[{}]", path, i);
      allow_keys(ps[i], pp, {"guard", "expr"});
      const json* g = member(ps[i], "guard", pp, true);
      const json* e = member(ps[i], "expr", pp, true);
      std::optional<ConstraintSet> guard;
      std::optional<Expression> expr;
      if (g) guard = set(*g, pp + ".guard", n, constants);
      if (e) expr = expression(*e, pp + ".expr", n, constants);
      if (guard && expr) {
        pieces.push_back({*guard, *expr});
      } else {
        ok = false;
      }
    }
    if (!ok) return std::nullopt;
    return PiecewiseFunction(std::move(pieces), *cls, n);
  }

  void tolerances(const json& v, const std::string& path, Tolerances& tol) {
    if (!v.is_object()) {
      fail(path, "expected an object");
      return;
    }
    const std::pair<const char*, double*> fields[] = {
        {"membership", &tol.membership}, {"tangent", &tol.tangent},
        {"normal", &tol.normal},         {"duality", &tol.duality},
        {"condition", &tol.condition},   {"constancy", &tol.constancy},
        {"kink", &tol.kink},             {"step_slack", &tol.step_slack},
        {"lsc_jump", &tol.lsc_jump},
    };
    for (const auto& [k, val] : v.items()) {
      double* target = nullptr;
      for (const auto& [name, ptr] : fields) {
        if (k == name) target = ptr;
      }
      if (!target) {
        fail(path, fmt::format("unknown tolerance \"{}\"", k));
        continue;
      }
      auto d = number(val, path + "." + k);
      if (d && *d < 0) {
        fail(path + "." + k, "tolerance must be nonnegative");
      } else if (d) {
        *target = *d;
      }
    }
  }

  template <class Id>
  std::vector<Id> ids(const json& v, const std::string& path,
                      std::optional<Id> (*parse)(std::string_view)) {
    std::vector<Id> out;
    if (!v.is_array()) {
      fail(path, "expected an array of ids");
      return out;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::optional<Id> id;
      if (v[i].is_string()) id = parse(v[i].get<std::string>());
      if (id) {
        out.push_back(*id);
      } else {
        fail(fmt::format("{}[{}]", path, i), fmt::format("unknown id {}", v[i].dump()));
      }
    }
    return out;
  }

  Scenario scenario(const json& doc) {
    Scenario s;
    const std::string root = "scenario";
    if (!doc.is_object()) {
      fail(root, "top level must be an object");
      throw ScenarioError(problems);
    }
    allow_keys(doc, root,
               {"name", "dimension", "box", "constants", "set", "map", "function", "grids",
                "tolerances", "seed", "simulation", "checks"});

    if (const json* v = member(doc, "name", root, true)) {
      if (v->is_string() && !v->get<std::string>().empty()) {
        s.name = v->get<std::string>();
        if (s.name.find_first_of("/\\") != std::string::npos) {
          fail("name", "must not contain path separators");
        }
      } else {
        fail("name", "expected a nonempty string");
      }
    }
    int n = 0;
    if (const json* v = member(doc, "dimension", root, true)) {
      if (auto d = integer(*v, "dimension", 1, kMaxDimension)) n = static_cast<int>(*d);
    }
    s.dimension = n;

    if (const json* v = member(doc, "constants", root, false)) {
      if (!v->is_object()) {
        fail("constants", "expected an object of name: number");
      } else {
        for (const auto& [k, val] : v->items()) {
          if (auto d = number(val, "constants." + k)) s.constants[k] = *d;
        }
      }
    }

    const json* box = member(doc, "box", root, true);
    if (box && n > 0) {
      if (!box->is_array() || static_cast<int>(box->size()) != n) {
        fail("box", fmt::format("expected {} [lo, hi] pairs", n));
      } else {
        s.system.box.lo = Vec::Zero(n);
        s.system.box.hi = Vec::Zero(n);
        for (int i = 0; i < n; ++i) {
          const std::string bp = fmt::format("box[{}]", i);
          auto pair = point((*box)[i], bp, 2);
          if (!pair) continue;
          if (!((*pair)[0] < (*pair)[1])) fail(bp, "need lo < hi");
          s.system.box.lo[i] = (*pair)[0];
          s.system.box.hi[i] = (*pair)[1];
        }
      }
    }

    const json* set_v = member(doc, "set", root, true);
    const json* map_v = member(doc, "map", root, true);
    const json* fn_v = member(doc, "function", root, true);
    std::optional<ConstraintSet> c;
    std::optional<VelocityMap> f;
    std::optional<PiecewiseFunction> b;
    if (n > 0) {
      if (set_v) c = set(*set_v, "set", n, s.constants);
      if (map_v) f = map(*map_v, "map", n, s.constants);
      if (fn_v) b = function(*fn_v, "function", n, s.constants);
    }

    if (const json* v = member(doc, "tolerances", root, false)) {
      tolerances(*v, "tolerances", s.system.tol);
    }
    if (const json* v = member(doc, "seed", root, false)) {
      if (v->is_number_unsigned()) {
        s.seed = v->get<std::uint64_t>();
      } else {
        fail("seed", "expected a nonnegative integer");
      }
    }

    if (const json* v = member(doc, "grids", root, false)) {
      allow_keys(*v, "grids", {"closure", "boundary", "continuity", "barycentric"});
      if (const json* g = member(*v, "closure", "grids", false)) {
        if (auto k = integer(*g, "grids.closure", 2, 2001)) s.grids.closure = int(*k);
      }
      if (const json* g = member(*v, "boundary", "grids", false)) {
        if (auto k = integer(*g, "grids.boundary", 2, 100001)) s.grids.boundary = int(*k);
      }
      if (const json* g = member(*v, "continuity", "grids", false)) {
        if (auto k = integer(*g, "grids.continuity", 2, 201)) s.grids.continuity = int(*k);
      }
      if (const json* g = member(*v, "barycentric", "grids", false)) {
        if (auto k = integer(*g, "grids.barycentric", 1, 100)) s.system.resolution = int(*k);
      }
    }

    if (const json* v = member(doc, "simulation", root, false)) {
      allow_keys(*v, "simulation", {"dt", "horizon"});
      if (const json* d = member(*v, "dt", "simulation", false)) {
        auto x = number(*d, "simulation.dt");
        if (x && *x <= 0) fail("simulation.dt", "must be positive");
        if (x && *x > 0) s.dt = *x;
      }
      if (const json* h = member(*v, "horizon", "simulation", false)) {
        auto x = number(*h, "simulation.horizon");
        if (x && *x <= 0) fail("simulation.horizon", "must be positive");
        if (x && *x > 0) s.horizon = *x;
      }
    }

    if (const json* v = member(doc, "checks", root, false)) {
      allow_keys(*v, "checks", {"conditions", "assumptions", "oracle", "directions_per_dim"});
      if (const json* c2 = member(*v, "conditions", "checks", false)) {
        s.conditions = ids<ConditionId>(*c2, "checks.conditions", &parse_condition);
      }
      if (const json* a = member(*v, "assumptions", "checks", false)) {
        s.assumptions = ids<AssumptionId>(*a, "checks.assumptions", &parse_assumption);
      }
      if (const json* d = member(*v, "directions_per_dim", "checks", false)) {
        if (auto k = integer(*d, "checks.directions_per_dim", 1, 4096)) {
          s.directions_per_dim = int(*k);
        }
      }
      if (const json* o = member(*v, "oracle", "checks", false)) {
        allow_keys(*o, "checks.oracle", {"starts", "ensemble"});
        if (const json* e = member(*o, "ensemble", "checks.oracle", false)) {
          if (auto k = integer(*e, "checks.oracle.ensemble", 1, 1024)) s.oracle_ensemble = int(*k);
        }
        if (const json* st = member(*o, "starts", "checks.oracle", true)) {
          if (!st->is_array()) {
            fail("checks.oracle.starts", "expected an array of points");
          } else if (n > 0) {
            for (std::size_t i = 0; i < st->size(); ++i) {
              if (auto x = point((*st)[i], fmt::format("checks.oracle.starts[{}]", i), n)) {
                s.oracle_starts.push_back(*x);
              }
            }
          }
        }
      }
    }

    if (!c || !f || !b || s.system.box.dimension() != n) throw ScenarioError(problems);

    s.system.c = c->with_box(s.system.box);
    s.system.f = *f;
    s.system.b = *b;
    for (const auto& p : s.system.f.validate(s.system.box, 11)) fail("map", p);
    for (const auto& p : s.system.b.validate(s.system.box, 11)) fail("function", p);
    for (std::size_t i = 0; i < s.oracle_starts.size(); ++i) {
      if (!s.system.box.contains(s.oracle_starts[i])) {
        fail(fmt::format("checks.oracle.starts[{}]", i), "start lies outside the box");
      }
    }
    if (!problems.empty()) throw ScenarioError(problems);
    return s;
  }
};

}  // namespace

ScenarioError::ScenarioError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ScenarioParseError(fmt::format("{}:{}:{}: {}", origin, line, col, e.what()));
  }
  Loader loader;
  return loader.scenario(doc);
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioParseError(fmt::format("{}: cannot open file", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.string());
}

}  // namespace invcheck
