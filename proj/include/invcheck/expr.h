#pragma once

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "invcheck/common.h"

namespace invcheck {

inline constexpr double kKinkTolerance = 1e-12;
inline constexpr int kMaxDimension = 8;

enum class Op : std::uint8_t {
  kConst,
  kVar,
  kNeg,
  kSin,
  kCos,
  kExp,
  kSqrt,
  kAbs,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kPow,
  kMin,
  kMax,
};

struct Node {
  Op op = Op::kConst;
  double value = 0.0;  // kConst
  int index = 0;       // kVar: zero-based variable; kPow: integer exponent
  std::shared_ptr<const Node> a;
  std::shared_ptr<const Node> b;
};

using NodePtr = std::shared_ptr<const Node>;
using Constants = std::map<std::string, double, std::less<>>;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KinkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Expression {
 public:
  Expression() = default;
  Expression(NodePtr root, int dimension);

  static Expression parse(std::string_view source, int dimension,
                          const Constants& constants = {});
  static Expression constant(double c, int dimension);
  static Expression variable(int zero_based, int dimension);

  int dimension() const { return dimension_; }
  const NodePtr& root() const { return root_; }
  bool empty() const { return root_ == nullptr; }

  double evaluate(const Vec& x) const;
  // Exact forward-mode gradient; throws KinkError when abs/min/max sits on its
  // switching surface within kKinkTolerance.
  Vec gradient(const Vec& x) const;
  // Same as gradient() but resolves kinks by picking one branch.
  Vec gradient_any_branch(const Vec& x) const;
  // Copies of this expression with every abs/min/max node replaced by the
  // branch that is active at x; active kinks contribute all their branches.
  std::vector<Expression> smooth_branches(const Vec& x, std::size_t cap = 64) const;

  std::string to_string() const;
  bool structurally_equal(const Expression& other) const;
  bool is_affine() const;
  bool has_kink_nodes() const;
  // Same tree, viewed as a function on a larger space.
  Expression lifted(int dimension) const;

  friend Expression operator+(const Expression& a, const Expression& b);
  friend Expression operator-(const Expression& a, const Expression& b);
  friend Expression operator*(const Expression& a, const Expression& b);
  friend Expression operator*(double c, const Expression& b);
  friend Expression operator-(const Expression& a);

 private:
  struct Instr {
    Op op;
    double value;
    int index;
  };

  void compile();

  NodePtr root_;
  int dimension_ = 0;
  std::vector<Instr> tape_;
};

NodePtr make_node(Op op, NodePtr a = nullptr, NodePtr b = nullptr, double value = 0.0,
                  int index = 0);

}  // namespace invcheck
