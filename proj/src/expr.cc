#include "invcheck/expr.h"

#include <array>
#include <cctype>
#include <cmath>
#include <functional>

#include <fmt/format.h>

namespace invcheck {

NodePtr make_node(Op op, NodePtr a, NodePtr b, double value, int index) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  n->value = value;
  n->index = index;
  return n;
}

namespace {

NodePtr negate(NodePtr a) {
  if (a->op == Op::kConst) return make_node(Op::kConst, nullptr, nullptr, -a->value);
  return make_node(Op::kNeg, std::move(a));
}

bool is_unary(Op op) {
  return op == Op::kNeg || op == Op::kSin || op == Op::kCos || op == Op::kExp ||
         op == Op::kSqrt || op == Op::kAbs || op == Op::kPow;
}

double ipow(double base, int k) {
  if (k < 0) {
    if (base == 0.0) throw DomainError("zero raised to a negative power");
    return 1.0 / ipow(base, -k);
  }
  double result = 1.0;
  double b = base;
  while (k > 0) {
    if (k & 1) result *= b;
    b *= b;
    k >>= 1;
  }
  return result;
}

class Parser {
 public:
  Parser(std::string_view src, int dimension, const Constants& constants)
      : src_(src), n_(dimension), constants_(constants) {}

  NodePtr parse_all() {
    NodePtr e = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) fail(fmt::format("unexpected '{}'", src_[pos_]));
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= src_.size()) fail(fmt::format("expected '{}' but input ended", c));
      fail(fmt::format("expected '{}'", c));
    }
  }

  NodePtr parse_expr() {
    NodePtr lhs = parse_term();
    while (true) {
      if (accept('+')) {
        lhs = make_node(Op::kAdd, lhs, parse_term());
      } else if (accept('-')) {
        lhs = make_node(Op::kSub, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_term() {
    NodePtr lhs = parse_unary();
    while (true) {
      if (accept('*')) {
        lhs = make_node(Op::kMul, lhs, parse_unary());
      } else if (accept('/')) {
        lhs = make_node(Op::kDiv, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_unary() {
    if (accept('-')) return negate(parse_unary());
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_atom();
    while (accept('^')) {
      base = make_node(Op::kPow, base, nullptr, 0.0, parse_exponent());
    }
    return base;
  }

  int parse_exponent() {
    const bool paren = accept('(');
    const bool neg = accept('-');
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    if (pos_ == start) fail("exponent must be an integer literal");
    if (pos_ < src_.size() && (src_[pos_] == '.' || src_[pos_] == 'e' || src_[pos_] == 'E')) {
      fail("exponent must be an integer literal");
    }
    const std::string digits(src_.substr(start, pos_ - start));
    if (digits.size() > 6) fail("exponent too large");
    int k = std::stoi(digits);
    if (paren) expect(')');
    return neg ? -k : k;
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t save = pos_;
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      const std::size_t digits = pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      if (pos_ == digits) pos_ = save;
    }
    const std::string text(src_.substr(start, pos_ - start));
    if (text == ".") {
      pos_ = start;
      fail("malformed number");
    }
    const double v = std::strtod(text.c_str(), nullptr);
    if (!std::isfinite(v)) {
      pos_ = start;
      fail("number out of range");
    }
    return make_node(Op::kConst, nullptr, nullptr, v);
  }

  NodePtr parse_atom() {
    skip_ws();
    if (pos_ >= src_.size()) fail("unexpected end of input");
    const char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (c == '(') {
      ++pos_;
      NodePtr e = parse_expr();
      expect(')');
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        ++pos_;
      }
      const std::string_view name = src_.substr(start, pos_ - start);
      return parse_identifier(name, start);
    }
    fail(fmt::format("unexpected '{}'", c));
  }

  NodePtr parse_identifier(std::string_view name, std::size_t start) {
    static const std::map<std::string_view, Op> kUnary = {
        {"sin", Op::kSin}, {"cos", Op::kCos}, {"exp", Op::kExp},
        {"sqrt", Op::kSqrt}, {"abs", Op::kAbs}};
    static const std::map<std::string_view, Op> kBinary = {{"min", Op::kMin},
                                                           {"max", Op::kMax}};
    if (auto it = kUnary.find(name); it != kUnary.end()) {
      expect('(');
      NodePtr arg = parse_expr();
      expect(')');
      return make_node(it->second, arg);
    }
    if (auto it = kBinary.find(name); it != kBinary.end()) {
      expect('(');
      NodePtr a = parse_expr();
      expect(',');
      NodePtr b = parse_expr();
      expect(')');
      return make_node(it->second, a, b);
    }
    if (name.size() >= 2 && name[0] == 'x' &&
        name.find_first_not_of("0123456789", 1) == std::string_view::npos) {
      const std::string digits(name.substr(1));
      const long idx = digits.size() > 6 ? 0 : std::stol(digits);
      if (idx < 1) {
        pos_ = start;
        fail(fmt::format("invalid variable '{}'", name));
      }
      if (idx > n_) {
        pos_ = start;
        fail(fmt::format("variable '{}' exceeds dimension {}", name, n_));
      }
      return make_node(Op::kVar, nullptr, nullptr, 0.0, static_cast<int>(idx - 1));
    }
    if (auto it = constants_.find(name); it != constants_.end()) {
      return make_node(Op::kConst, nullptr, nullptr, it->second);
    }
    pos_ = start;
    fail(fmt::format("unknown identifier '{}'", name));
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int n_;
  const Constants& constants_;
};

void print_node(const Node& n, std::string& out) {
  switch (n.op) {
    case Op::kConst:
      if (std::signbit(n.value)) {
        out += fmt::format("({:.17g})", n.value);
      } else {
        out += fmt::format("{:.17g}", n.value);
      }
      return;
    case Op::kVar:
      out += fmt::format("x{}", n.index + 1);
      return;
    case Op::kNeg:
      out += "(-";
      print_node(*n.a, out);
      out += ")";
      return;
    case Op::kSin:
    case Op::kCos:
    case Op::kExp:
    case Op::kSqrt:
    case Op::kAbs: {
      static const std::map<Op, const char*> kNames = {{Op::kSin, "sin"},
                                                        {Op::kCos, "cos"},
                                                        {Op::kExp, "exp"},
                                                        {Op::kSqrt, "sqrt"},
                                                        {Op::kAbs, "abs"}};
      out += kNames.at(n.op);
      out += "(";
      print_node(*n.a, out);
      out += ")";
      return;
    }
    case Op::kPow:
      out += "(";
      print_node(*n.a, out);
      out += fmt::format(")^{}", n.index);
      return;
    case Op::kMin:
    case Op::kMax:
      out += n.op == Op::kMin ? "min(" : "max(";
      print_node(*n.a, out);
      out += ", ";
      print_node(*n.b, out);
      out += ")";
      return;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      static const std::map<Op, const char*> kSym = {
          {Op::kAdd, " + "}, {Op::kSub, " - "}, {Op::kMul, " * "}, {Op::kDiv, " / "}};
      out += "(";
      print_node(*n.a, out);
      out += kSym.at(n.op);
      print_node(*n.b, out);
      out += ")";
      return;
    }
  }
}

bool equal_nodes(const Node& x, const Node& y) {
  if (x.op != y.op) return false;
  switch (x.op) {
    case Op::kConst:
      return x.value == y.value;
    case Op::kVar:
      return x.index == y.index;
    case Op::kPow:
      return x.index == y.index && equal_nodes(*x.a, *y.a);
    default:
      break;
  }
  if (!equal_nodes(*x.a, *y.a)) return false;
  if (x.b || y.b) return x.b && y.b && equal_nodes(*x.b, *y.b);
  return true;
}

enum class Degree { kConstant, kAffine, kOther };

Degree degree(const Node& n) {
  switch (n.op) {
    case Op::kConst:
      return Degree::kConstant;
    case Op::kVar:
      return Degree::kAffine;
    case Op::kNeg:
      return degree(*n.a);
    case Op::kAdd:
    case Op::kSub:
      return std::max(degree(*n.a), degree(*n.b));
    case Op::kMul: {
      const Degree a = degree(*n.a);
      const Degree b = degree(*n.b);
      if (a == Degree::kConstant) return b;
      if (b == Degree::kConstant) return a;
      return Degree::kOther;
    }
    case Op::kDiv: {
      const Degree b = degree(*n.b);
      return b == Degree::kConstant ? degree(*n.a) : Degree::kOther;
    }
    case Op::kPow: {
      const Degree a = degree(*n.a);
      if (n.index == 0 || a == Degree::kConstant) return Degree::kConstant;
      return n.index == 1 ? a : Degree::kOther;
    }
    case Op::kMin:
    case Op::kMax:
      return std::max(degree(*n.a), degree(*n.b)) == Degree::kConstant ? Degree::kConstant
                                                                       : Degree::kOther;
    default:
      return degree(*n.a) == Degree::kConstant ? Degree::kConstant : Degree::kOther;
  }
}

bool contains_kink(const Node& n) {
  if (n.op == Op::kAbs || n.op == Op::kMin || n.op == Op::kMax) return true;
  if (n.a && contains_kink(*n.a)) return true;
  return n.b && contains_kink(*n.b);
}

struct Dual {
  double v;
  std::array<double, kMaxDimension> g;
};

enum class KinkPolicy { kThrow, kPickBranch };

double eval_tree(const Node& n, const Vec& x);

}  // namespace

Expression::Expression(NodePtr root, int dimension) : root_(std::move(root)), dimension_(dimension) {
  if (dimension_ < 1 || dimension_ > kMaxDimension) {
    throw std::invalid_argument(fmt::format("dimension {} outside [1, {}]", dimension_,
                                            kMaxDimension));
  }
  compile();
}

Expression Expression::parse(std::string_view source, int dimension, const Constants& constants) {
  if (source.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw ParseError("empty expression", 0);
  }
  if (dimension < 1 || dimension > kMaxDimension) {
    throw std::invalid_argument(fmt::format("dimension {} outside [1, {}]", dimension,
                                            kMaxDimension));
  }
  Parser p(source, dimension, constants);
  return Expression(p.parse_all(), dimension);
}

Expression Expression::constant(double c, int dimension) {
  return Expression(make_node(Op::kConst, nullptr, nullptr, c), dimension);
}

Expression Expression::variable(int zero_based, int dimension) {
  if (zero_based < 0 || zero_based >= dimension) throw std::out_of_range("variable index");
  return Expression(make_node(Op::kVar, nullptr, nullptr, 0.0, zero_based), dimension);
}

void Expression::compile() {
  tape_.clear();
  std::function<void(const Node&)> emit = [&](const Node& n) {
    if (n.a) emit(*n.a);
    if (n.b) emit(*n.b);
    tape_.push_back({n.op, n.value, n.index});
  };
  emit(*root_);
}

namespace {

template <typename Stack>
double run_values(const auto& tape, const Vec& x, Stack& st) {
  std::size_t sp = 0;
  for (const auto& in : tape) {
    switch (in.op) {
      case Op::kConst:
        st[sp++] = in.value;
        break;
      case Op::kVar:
        st[sp++] = x[in.index];
        break;
      case Op::kNeg:
        st[sp - 1] = -st[sp - 1];
        break;
      case Op::kSin:
        st[sp - 1] = std::sin(st[sp - 1]);
        break;
      case Op::kCos:
        st[sp - 1] = std::cos(st[sp - 1]);
        break;
      case Op::kExp:
        st[sp - 1] = std::exp(st[sp - 1]);
        break;
      case Op::kSqrt:
        if (st[sp - 1] < 0.0) throw DomainError("sqrt of a negative number");
        st[sp - 1] = std::sqrt(st[sp - 1]);
        break;
      case Op::kAbs:
        st[sp - 1] = std::fabs(st[sp - 1]);
        break;
      case Op::kPow:
        st[sp - 1] = ipow(st[sp - 1], in.index);
        break;
      case Op::kAdd:
        --sp;
        st[sp - 1] += st[sp];
        break;
      case Op::kSub:
        --sp;
        st[sp - 1] -= st[sp];
        break;
      case Op::kMul:
        --sp;
        st[sp - 1] *= st[sp];
        break;
      case Op::kDiv:
        --sp;
        if (st[sp] == 0.0) throw DomainError("division by zero");
        st[sp - 1] /= st[sp];
        break;
      case Op::kMin:
        --sp;
        st[sp - 1] = std::min(st[sp - 1], st[sp]);
        break;
      case Op::kMax:
        --sp;
        st[sp - 1] = std::max(st[sp - 1], st[sp]);
        break;
    }
  }
  const double r = st[0];
  if (!std::isfinite(r)) throw DomainError("non-finite value");
  return r;
}

Vec run_duals(const auto& tape, const Vec& x, int n, KinkPolicy policy) {
  std::vector<Dual> st(tape.size());
  std::size_t sp = 0;
  auto scale = [n](Dual& d, double s) {
    for (int i = 0; i < n; ++i) d.g[i] *= s;
  };
  for (const auto& in : tape) {
    switch (in.op) {
      case Op::kConst: {
        Dual& d = st[sp++];
        d.v = in.value;
        d.g.fill(0.0);
        break;
      }
      case Op::kVar: {
        Dual& d = st[sp++];
        d.v = x[in.index];
        d.g.fill(0.0);
        d.g[in.index] = 1.0;
        break;
      }
      case Op::kNeg: {
        Dual& d = st[sp - 1];
        d.v = -d.v;
        scale(d, -1.0);
        break;
      }
      case Op::kSin: {
        Dual& d = st[sp - 1];
        const double c = std::cos(d.v);
        d.v = std::sin(d.v);
        scale(d, c);
        break;
      }
      case Op::kCos: {
        Dual& d = st[sp - 1];
        const double s = -std::sin(d.v);
        d.v = std::cos(d.v);
        scale(d, s);
        break;
      }
      case Op::kExp: {
        Dual& d = st[sp - 1];
        d.v = std::exp(d.v);
        scale(d, d.v);
        break;
      }
      case Op::kSqrt: {
        Dual& d = st[sp - 1];
        if (d.v < 0.0) throw DomainError("sqrt of a negative number");
        if (d.v == 0.0) throw DomainError("sqrt is not differentiable at 0");
        d.v = std::sqrt(d.v);
        scale(d, 0.5 / d.v);
        break;
      }
      case Op::kAbs: {
        Dual& d = st[sp - 1];
        if (std::fabs(d.v) <= kKinkTolerance && policy == KinkPolicy::kThrow) {
          throw KinkError("abs evaluated at its kink");
        }
        if (d.v < 0.0) {
          d.v = -d.v;
          scale(d, -1.0);
        }
        break;
      }
      case Op::kPow: {
        Dual& d = st[sp - 1];
        const int k = in.index;
        if (k == 0) {
          d.v = 1.0;
          d.g.fill(0.0);
          break;
        }
        const double dv = static_cast<double>(k) * ipow(d.v, k - 1);
        d.v = ipow(d.v, k);
        scale(d, dv);
        break;
      }
      case Op::kAdd: {
        --sp;
        Dual& a = st[sp - 1];
        const Dual& b = st[sp];
        a.v += b.v;
        for (int i = 0; i < n; ++i) a.g[i] += b.g[i];
        break;
      }
      case Op::kSub: {
        --sp;
        Dual& a = st[sp - 1];
        const Dual& b = st[sp];
        a.v -= b.v;
        for (int i = 0; i < n; ++i) a.g[i] -= b.g[i];
        break;
      }
      case Op::kMul: {
        --sp;
        Dual& a = st[sp - 1];
        const Dual& b = st[sp];
        for (int i = 0; i < n; ++i) a.g[i] = a.g[i] * b.v + a.v * b.g[i];
        a.v *= b.v;
        break;
      }
      case Op::kDiv: {
        --sp;
        Dual& a = st[sp - 1];
        const Dual& b = st[sp];
        if (b.v == 0.0) throw DomainError("division by zero");
        const double q = a.v / b.v;
        for (int i = 0; i < n; ++i) a.g[i] = (a.g[i] - q * b.g[i]) / b.v;
        a.v = q;
        break;
      }
      case Op::kMin:
      case Op::kMax: {
        --sp;
        Dual& a = st[sp - 1];
        const Dual& b = st[sp];
        if (std::fabs(a.v - b.v) <= kKinkTolerance && policy == KinkPolicy::kThrow) {
          throw KinkError(in.op == Op::kMin ? "min evaluated at its kink"
                                            : "max evaluated at its kink");
        }
        const bool take_b = in.op == Op::kMin ? b.v < a.v : b.v > a.v;
        if (take_b) a = b;
        break;
      }
    }
  }
  Vec g(n);
  for (int i = 0; i < n; ++i) g[i] = st[0].g[i];
  if (!std::isfinite(st[0].v) || !g.allFinite()) throw DomainError("non-finite derivative");
  return g;
}

double eval_tree(const Node& n, const Vec& x) {
  switch (n.op) {
    case Op::kConst:
      return n.value;
    case Op::kVar:
      return x[n.index];
    case Op::kNeg:
      return -eval_tree(*n.a, x);
    case Op::kSin:
      return std::sin(eval_tree(*n.a, x));
    case Op::kCos:
      return std::cos(eval_tree(*n.a, x));
    case Op::kExp:
      return std::exp(eval_tree(*n.a, x));
    case Op::kSqrt: {
      const double v = eval_tree(*n.a, x);
      if (v < 0.0) throw DomainError("sqrt of a negative number");
      return std::sqrt(v);
    }
    case Op::kAbs:
      return std::fabs(eval_tree(*n.a, x));
    case Op::kPow:
      return ipow(eval_tree(*n.a, x), n.index);
    case Op::kAdd:
      return eval_tree(*n.a, x) + eval_tree(*n.b, x);
    case Op::kSub:
      return eval_tree(*n.a, x) - eval_tree(*n.b, x);
    case Op::kMul:
      return eval_tree(*n.a, x) * eval_tree(*n.b, x);
    case Op::kDiv: {
      const double d = eval_tree(*n.b, x);
      if (d == 0.0) throw DomainError("division by zero");
      return eval_tree(*n.a, x) / d;
    }
    case Op::kMin:
      return std::min(eval_tree(*n.a, x), eval_tree(*n.b, x));
    case Op::kMax:
      return std::max(eval_tree(*n.a, x), eval_tree(*n.b, x));
  }
  return 0.0;
}

std::vector<NodePtr> branches(const NodePtr& n, const Vec& x, std::size_t cap) {
  switch (n->op) {
    case Op::kConst:
    case Op::kVar:
      return {n};
    case Op::kAbs: {
      const double v = eval_tree(*n->a, x);
      std::vector<NodePtr> out;
      for (const auto& c : branches(n->a, x, cap)) {
        if (v >= -kKinkTolerance) out.push_back(c);
        if (v <= kKinkTolerance) out.push_back(negate(c));
      }
      if (out.size() > cap) out.resize(cap);
      return out;
    }
    case Op::kMin:
    case Op::kMax: {
      const double va = eval_tree(*n->a, x);
      const double vb = eval_tree(*n->b, x);
      const bool tie = std::fabs(va - vb) <= kKinkTolerance;
      const bool pick_a = n->op == Op::kMin ? va <= vb : va >= vb;
      std::vector<NodePtr> out;
      if (tie || pick_a) {
        auto a = branches(n->a, x, cap);
        out.insert(out.end(), a.begin(), a.end());
      }
      if (tie || !pick_a) {
        auto b = branches(n->b, x, cap);
        out.insert(out.end(), b.begin(), b.end());
      }
      if (out.size() > cap) out.resize(cap);
      return out;
    }
    default:
      break;
  }
  std::vector<NodePtr> out;
  const auto as = branches(n->a, x, cap);
  if (is_unary(n->op)) {
    for (const auto& a : as) out.push_back(make_node(n->op, a, nullptr, n->value, n->index));
    return out;
  }
  const auto bs = branches(n->b, x, cap);
  for (const auto& a : as) {
    for (const auto& b : bs) {
      if (out.size() >= cap) return out;
      out.push_back(make_node(n->op, a, b, n->value, n->index));
    }
  }
  return out;
}

}  // namespace

double Expression::evaluate(const Vec& x) const {
  if (x.size() < dimension_) throw std::invalid_argument("point dimension mismatch");
  if (tape_.size() <= 64) {
    std::array<double, 64> st;
    return run_values(tape_, x, st);
  }
  std::vector<double> st(tape_.size());
  return run_values(tape_, x, st);
}

Vec Expression::gradient(const Vec& x) const {
  if (x.size() < dimension_) throw std::invalid_argument("point dimension mismatch");
  return run_duals(tape_, x, dimension_, KinkPolicy::kThrow);
}

Vec Expression::gradient_any_branch(const Vec& x) const {
  if (x.size() < dimension_) throw std::invalid_argument("point dimension mismatch");
  return run_duals(tape_, x, dimension_, KinkPolicy::kPickBranch);
}

std::vector<Expression> Expression::smooth_branches(const Vec& x, std::size_t cap) const {
  std::vector<Expression> out;
  for (auto& b : branches(root_, x, cap)) out.emplace_back(b, dimension_);
  return out;
}

std::string Expression::to_string() const {
  std::string s;
  print_node(*root_, s);
  return s;
}

bool Expression::structurally_equal(const Expression& other) const {
  return dimension_ == other.dimension_ && equal_nodes(*root_, *other.root_);
}

bool Expression::is_affine() const { return degree(*root_) != Degree::kOther; }

bool Expression::has_kink_nodes() const { return contains_kink(*root_); }

Expression Expression::lifted(int dimension) const {
  if (dimension < dimension_) throw std::invalid_argument("cannot shrink dimension");
  return Expression(root_, dimension);
}

Expression operator+(const Expression& a, const Expression& b) {
  return Expression(make_node(Op::kAdd, a.root(), b.root()), std::max(a.dimension(), b.dimension()));
}

Expression operator-(const Expression& a, const Expression& b) {
  return Expression(make_node(Op::kSub, a.root(), b.root()), std::max(a.dimension(), b.dimension()));
}

Expression operator*(const Expression& a, const Expression& b) {
  return Expression(make_node(Op::kMul, a.root(), b.root()), std::max(a.dimension(), b.dimension()));
}

Expression operator*(double c, const Expression& b) {
  return Expression(make_node(Op::kMul, make_node(Op::kConst, nullptr, nullptr, c), b.root()),
                    b.dimension());
}

Expression operator-(const Expression& a) { return Expression(negate(a.root()), a.dimension()); }

}  // namespace invcheck
