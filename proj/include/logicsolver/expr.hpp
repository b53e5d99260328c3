#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/rational.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::expr {

// Declaration order doubles as the canonical operator order.
enum class Op : std::uint8_t { Add, Sub, Mul, Div, Pow };

inline constexpr Op kAllOps[] = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow};

enum class TokenKind : std::uint8_t { Operator, NumberSlot, Constant };

inline bool is_commutative(Op op) { return op == Op::Add || op == Op::Mul; }

/// ASCII symbol used in the prefix text encoding.
inline std::string_view op_ascii(Op op) {
  switch (op) {
    case Op::Add: return "+";
    case Op::Sub: return "-";
    case Op::Mul: return "*";
    case Op::Div: return "/";
    case Op::Pow: return "^";
  }
  return "?";
}

/// Display symbol used in infix rendering and formula surface text.
inline std::string_view op_symbol(Op op) {
  switch (op) {
    case Op::Add: return "+";
    case Op::Sub: return "−";
    case Op::Mul: return "×";
    case Op::Div: return "÷";
    case Op::Pow: return "^";
  }
  return "?";
}

/// Accepts both the ASCII and display spellings.
inline std::optional<Op> op_from_symbol(std::string_view s) {
  for (Op op : kAllOps) {
    if (s == op_ascii(op) || s == op_symbol(op)) return op;
  }
  return std::nullopt;
}

class Token {
 public:
  static Token op(Op o) {
    Token t;
    t.kind_ = TokenKind::Operator;
    t.op_ = o;
    return t;
  }
  static Token slot(std::size_t index) {
    Token t;
    t.kind_ = TokenKind::NumberSlot;
    t.slot_ = index;
    return t;
  }
  static Token constant(Rational value) {
    Token t;
    t.kind_ = TokenKind::Constant;
    t.value_ = std::move(value);
    return t;
  }

  TokenKind kind() const { return kind_; }
  bool is_operator() const { return kind_ == TokenKind::Operator; }
  bool is_slot() const { return kind_ == TokenKind::NumberSlot; }
  bool is_constant() const { return kind_ == TokenKind::Constant; }
  Op op() const { return op_; }
  std::size_t slot() const { return slot_; }
  const Rational& value() const { return value_; }

  friend bool operator==(const Token& a, const Token& b) {
    if (a.kind_ != b.kind_) return false;
    switch (a.kind_) {
      case TokenKind::Operator: return a.op_ == b.op_;
      case TokenKind::NumberSlot: return a.slot_ == b.slot_;
      case TokenKind::Constant: return a.value_ == b.value_;
    }
    return false;
  }

  // Operator < NumberSlot < Constant; within a kind by op order, index, value.
  friend std::strong_ordering operator<=>(const Token& a, const Token& b) {
    if (a.kind_ != b.kind_) return a.kind_ <=> b.kind_;
    switch (a.kind_) {
      case TokenKind::Operator: return a.op_ <=> b.op_;
      case TokenKind::NumberSlot: return a.slot_ <=> b.slot_;
      case TokenKind::Constant:
        if (a.value_ < b.value_) return std::strong_ordering::less;
        if (b.value_ < a.value_) return std::strong_ordering::greater;
        return std::strong_ordering::equal;
    }
    return std::strong_ordering::equal;
  }

 private:
  TokenKind kind_ = TokenKind::Constant;
  Op op_ = Op::Add;
  std::size_t slot_ = 0;
  Rational value_;
};

inline std::string to_text(const Token& t) {
  switch (t.kind()) {
    case TokenKind::Operator: return std::string(op_ascii(t.op()));
    case TokenKind::NumberSlot: return "N" + std::to_string(t.slot());
    case TokenKind::Constant: return format_rational(t.value());
  }
  return "?";
}

inline Token token_from_text(std::string_view s) {
  if (auto op = op_from_symbol(s)) return Token::op(*op);
  if (s.size() >= 2 && s.front() == 'N' && detail::all_digits(s.substr(1))) {
    return Token::slot(std::stoul(std::string(s.substr(1))));
  }
  try {
    return Token::constant(parse_rational(s));
  } catch (const Error&) {
    throw Error(Errc::MalformedPrefix, "unrecognised token '" + std::string(s) + "'");
  }
}

/// Whitespace-separated prefix text, e.g. "+ * N0 N1 3.14".
inline std::vector<Token> tokens_from_text(std::string_view text) {
  std::vector<Token> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(token_from_text(word));
  return out;
}

inline std::string tokens_to_text(std::span<const Token> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += to_text(t);
  }
  return out;
}

struct Tree {
  Token token;
  std::vector<Tree> children;

  static Tree leaf(Token t) { return Tree{std::move(t), {}}; }
  static Tree slot(std::size_t i) { return leaf(Token::slot(i)); }
  static Tree constant(Rational v) { return leaf(Token::constant(std::move(v))); }
  static Tree node(Op op, Tree left, Tree right) {
    Tree t{Token::op(op), {}};
    t.children.reserve(2);
    t.children.push_back(std::move(left));
    t.children.push_back(std::move(right));
    return t;
  }

  bool is_leaf() const { return children.empty(); }
  const Tree& left() const { return children[0]; }
  const Tree& right() const { return children[1]; }

  friend bool operator==(const Tree& a, const Tree& b) {
    return a.token == b.token && a.children == b.children;
  }
};

/// Structural total order: root token first, then children left to right.
inline std::strong_ordering compare(const Tree& a, const Tree& b) {
  if (auto c = a.token <=> b.token; c != 0) return c;
  if (auto c = a.children.size() <=> b.children.size(); c != 0) return c;
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (auto c = compare(a.children[i], b.children[i]); c != 0) return c;
  }
  return std::strong_ordering::equal;
}

namespace detail {

inline Tree parse_prefix_at(std::span<const Token> tokens, std::size_t& pos) {
  if (pos >= tokens.size()) {
    throw Error(Errc::MalformedPrefix, "tokens ended before all operators received operands");
  }
  const Token& t = tokens[pos++];
  if (!t.is_operator()) return Tree::leaf(t);
  Tree left = parse_prefix_at(tokens, pos);
  Tree right = parse_prefix_at(tokens, pos);
  return Tree::node(t.op(), std::move(left), std::move(right));
}

inline void print_prefix_into(const Tree& t, std::vector<Token>& out) {
  out.push_back(t.token);
  for (const auto& c : t.children) print_prefix_into(c, out);
}

}  // namespace detail

inline Tree parse_prefix(std::span<const Token> tokens) {
  if (tokens.empty()) throw Error(Errc::MalformedPrefix, "empty token sequence");
  std::size_t pos = 0;
  Tree t = detail::parse_prefix_at(tokens, pos);
  if (pos != tokens.size()) {
    throw Error(Errc::MalformedPrefix,
                std::to_string(tokens.size() - pos) + " token(s) left after a complete tree");
  }
  return t;
}

inline Tree parse_prefix(std::string_view text) { return parse_prefix(tokens_from_text(text)); }

inline std::vector<Token> print_prefix(const Tree& t) {
  std::vector<Token> out;
  detail::print_prefix_into(t, out);
  return out;
}

inline std::string prefix_text(const Tree& t) { return tokens_to_text(print_prefix(t)); }

inline std::string print_infix(const Tree& t) {
  if (t.is_leaf()) return to_text(t.token);
  return "(" + print_infix(t.left()) + " " + std::string(op_symbol(t.token.op())) + " " +
         print_infix(t.right()) + ")";
}

inline std::size_t tree_size(const Tree& t) {
  std::size_t n = 1;
  for (const auto& c : t.children) n += tree_size(c);
  return n;
}

inline std::size_t operator_count(const Tree& t) {
  if (t.is_leaf()) return 0;
  return 1 + operator_count(t.left()) + operator_count(t.right());
}

/// Highest slot index referenced plus one (0 when no slots).
inline std::size_t slot_arity(const Tree& t) {
  if (t.token.is_slot()) return t.token.slot() + 1;
  std::size_t n = 0;
  for (const auto& c : t.children) n = std::max(n, slot_arity(c));
  return n;
}

inline Rational apply(Op op, const Rational& a, const Rational& b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div:
      if (b == 0) throw Error(Errc::DivisionByZero, "division by zero");
      return a / b;
    case Op::Pow: {
      if (boost::multiprecision::denominator(b) != 1) {
        throw Error(Errc::NonIntegerExponent, "exponent " + format_rational(b) + " is not an integer");
      }
      BigInt e = boost::multiprecision::numerator(b);
      if (e > 1024 || e < -1024) {
        throw Error(Errc::NonIntegerExponent, "exponent " + e.str() + " out of range");
      }
      long long n = e.convert_to<long long>();
      if (n < 0 && a == 0) throw Error(Errc::DivisionByZero, "zero to a negative power");
      unsigned k = static_cast<unsigned>(n < 0 ? -n : n);
      Rational r(boost::multiprecision::pow(boost::multiprecision::numerator(a), k),
                 boost::multiprecision::pow(boost::multiprecision::denominator(a), k));
      return n < 0 ? Rational(1 / r) : r;
    }
  }
  return 0;
}

inline Rational evaluate(const Tree& t, std::span<const Rational> bindings) {
  switch (t.token.kind()) {
    case TokenKind::Constant: return t.token.value();
    case TokenKind::NumberSlot:
      if (t.token.slot() >= bindings.size()) {
        throw Error(Errc::UnboundSlot, "slot N" + std::to_string(t.token.slot()) + " has no binding");
      }
      return bindings[t.token.slot()];
    case TokenKind::Operator:
      return apply(t.token.op(), evaluate(t.left(), bindings), evaluate(t.right(), bindings));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Canonical form: constant folding, AC-flattening of + and ×, sorted operands,
// left-deep rebinarisation.
// ---------------------------------------------------------------------------

namespace detail {

inline void collect_chain(const Tree& t, Op op, std::vector<const Tree*>& out) {
  if (t.token.is_operator() && t.token.op() == op) {
    collect_chain(t.left(), op, out);
    collect_chain(t.right(), op, out);
  } else {
    out.push_back(&t);
  }
}

inline Tree canonicalize_impl(const Tree& t);

inline Tree canonical_chain(const Tree& t, Op op) {
  std::vector<const Tree*> raw;
  collect_chain(t, op, raw);

  std::vector<Tree> operands;
  std::optional<Rational> folded;
  auto absorb = [&](Tree c) {
    if (c.token.is_constant()) {
      folded = folded ? apply(op, *folded, c.token.value()) : c.token.value();
    } else {
      operands.push_back(std::move(c));
    }
  };
  for (const Tree* r : raw) {
    Tree c = canonicalize_impl(*r);
    if (c.token.is_operator() && c.token.op() == op) {
      // A canonical chain of the same operator: splice its operands.
      std::vector<const Tree*> inner;
      collect_chain(c, op, inner);
      for (const Tree* i : inner) absorb(*i);
    } else {
      absorb(std::move(c));
    }
  }

  const Rational identity = op == Op::Add ? Rational(0) : Rational(1);
  if (folded && (*folded != identity || operands.empty())) operands.push_back(Tree::constant(*folded));
  std::sort(operands.begin(), operands.end(),
            [](const Tree& a, const Tree& b) { return compare(a, b) < 0; });

  Tree acc = std::move(operands[0]);
  for (std::size_t i = 1; i < operands.size(); ++i) {
    acc = Tree::node(op, std::move(acc), std::move(operands[i]));
  }
  return acc;
}

inline Tree canonicalize_impl(const Tree& t) {
  if (t.is_leaf()) return t;
  const Op op = t.token.op();
  if (is_commutative(op)) return canonical_chain(t, op);

  Tree left = canonicalize_impl(t.left());
  Tree right = canonicalize_impl(t.right());
  if (left.token.is_constant() && right.token.is_constant()) {
    try {
      return Tree::constant(apply(op, left.token.value(), right.token.value()));
    } catch (const Error& e) {
      if (e.code() != Errc::NonIntegerExponent) throw;
    }
  }
  return Tree::node(op, std::move(left), std::move(right));
}

}  // namespace detail

/// Throws DivisionByZero when a constant subtree divides by zero.
inline Tree canonicalize(const Tree& t) { return detail::canonicalize_impl(t); }

// ---------------------------------------------------------------------------
// Solution-set expansion.
// ---------------------------------------------------------------------------

struct SolutionSet {
  std::vector<std::vector<Token>> members;
  bool truncated = false;

  bool contains(std::span<const Token> prefix) const {
    return std::any_of(members.begin(), members.end(), [&](const auto& m) {
      return std::equal(m.begin(), m.end(), prefix.begin(), prefix.end());
    });
  }
};

inline constexpr std::size_t kDefaultExpansionLimit = 256;

namespace detail {

// All trees reachable by swapping children of commutative nodes, identity first.
inline std::vector<Tree> commutative_variants(const Tree& t, std::size_t limit, bool& truncated) {
  if (t.is_leaf()) return {t};
  auto lefts = commutative_variants(t.left(), limit, truncated);
  auto rights = commutative_variants(t.right(), limit, truncated);
  const Op op = t.token.op();
  std::vector<Tree> out;
  for (const auto& l : lefts) {
    for (const auto& r : rights) {
      if (out.size() >= limit) {
        truncated = true;
        return out;
      }
      out.push_back(Tree::node(op, l, r));
      if (is_commutative(op)) {
        if (out.size() >= limit) {
          truncated = true;
          return out;
        }
        out.push_back(Tree::node(op, r, l));
      }
    }
  }
  return out;
}

}  // namespace detail

/// Commutative swaps of the input, then of its canonical form. The input's
/// own prefix is always the first member.
inline SolutionSet expand_solution_set(const Tree& t, std::size_t limit = kDefaultExpansionLimit) {
  if (limit == 0) limit = 1;
  SolutionSet set;
  std::set<std::string> seen;
  auto add_all = [&](const std::vector<Tree>& trees) {
    for (const auto& v : trees) {
      auto prefix = print_prefix(v);
      if (!seen.insert(tokens_to_text(prefix)).second) continue;
      if (set.members.size() >= limit) {
        set.truncated = true;
        return;
      }
      set.members.push_back(std::move(prefix));
    }
  };

  add_all(detail::commutative_variants(t, limit, set.truncated));
  try {
    Tree canonical = canonicalize(t);
    add_all(detail::commutative_variants(canonical, limit, set.truncated));
  } catch (const Error& e) {
    if (e.code() != Errc::DivisionByZero) throw;
  }
  return set;
}

namespace detail {

// Reduced fraction with |num|, den <= 2^62 so cross products fit in __int128.
// Exact fast path; anything larger falls back to Rational.
constexpr long long kSmallMax = 1LL << 62;

struct SmallQ {
  long long num = 0, den = 1;
};

enum class SmallEval { Ok, Fails, Overflow };

inline bool small_reduce(__int128 n, __int128 d, SmallQ& out) {
  if (d < 0) n = -n, d = -d;
  __int128 a = n < 0 ? -n : n, b = d;
  while (b != 0) {
    __int128 r = a % b;
    a = b;
    b = r;
  }
  if (a > 1) n /= a, d /= a;
  if (n > kSmallMax || n < -kSmallMax || d > kSmallMax) return false;
  out = {static_cast<long long>(n), static_cast<long long>(d)};
  return true;
}

inline bool small_of(const Rational& r, SmallQ& out) {
  const auto& n = boost::multiprecision::numerator(r);
  const auto& d = boost::multiprecision::denominator(r);
  if (n > kSmallMax || n < -kSmallMax || d > kSmallMax) return false;
  out = {n.convert_to<long long>(), d.convert_to<long long>()};
  return true;
}

inline SmallEval evaluate_small(const Tree& t, std::span<const SmallQ> bindings, SmallQ& out) {
  switch (t.token.kind()) {
    case TokenKind::Constant: return small_of(t.token.value(), out) ? SmallEval::Ok : SmallEval::Overflow;
    case TokenKind::NumberSlot:
      if (t.token.slot() >= bindings.size()) return SmallEval::Fails;
      out = bindings[t.token.slot()];
      return SmallEval::Ok;
    case TokenKind::Operator: break;
  }
  SmallQ x, y;
  if (auto r = evaluate_small(t.left(), bindings, x); r != SmallEval::Ok) return r;
  if (auto r = evaluate_small(t.right(), bindings, y); r != SmallEval::Ok) return r;
  const __int128 xn = x.num, xd = x.den, yn = y.num, yd = y.den;
  bool fits = true;
  switch (t.token.op()) {
    case Op::Add: fits = small_reduce(xn * yd + yn * xd, xd * yd, out); break;
    case Op::Sub: fits = small_reduce(xn * yd - yn * xd, xd * yd, out); break;
    case Op::Mul: fits = small_reduce(xn * yn, xd * yd, out); break;
    case Op::Div:
      if (yn == 0) return SmallEval::Fails;
      fits = small_reduce(xn * yd, xd * yn, out);
      break;
    default: return SmallEval::Overflow;
  }
  return fits ? SmallEval::Ok : SmallEval::Overflow;
}

inline std::optional<Rational> try_evaluate(const Tree& t, std::span<const Rational> exact,
                                            std::span<const SmallQ> small) {
  SmallQ v;
  switch (evaluate_small(t, small, v)) {
    case SmallEval::Ok: return Rational(v.num, v.den);
    case SmallEval::Fails: return std::nullopt;
    case SmallEval::Overflow: break;
  }
  try {
    return evaluate(t, exact);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Randomised equivalence test over rational bindings. Bindings on which
/// either side fails to evaluate are redrawn a bounded number of times.
inline bool probably_equivalent(const Tree& a, const Tree& b, std::size_t trials, std::uint64_t seed) {
  static const Rational kPool[] = {
      Rational(1),    Rational(2),    Rational(3),    Rational(4),    Rational(5),
      Rational(6),    Rational(7),    Rational(9),    Rational(11),   Rational(13),
      Rational(17),   Rational(19),   Rational(23),   Rational(1, 2), Rational(3, 4),
      Rational(5, 3), Rational(7, 2), Rational(2, 9), Rational(-3),   Rational(-5, 2)};
  constexpr std::size_t kPoolSize = std::size(kPool);
  constexpr int kRetries = 16;
  static const auto kSmallPool = [] {
    std::array<detail::SmallQ, kPoolSize> out;
    for (std::size_t i = 0; i < kPoolSize; ++i) detail::small_of(kPool[i], out[i]);
    return out;
  }();

  const std::size_t arity = std::max(slot_arity(a), slot_arity(b));
  Rng rng(seed);
  std::vector<Rational> bindings(arity);
  std::vector<detail::SmallQ> small(arity);
  std::size_t conclusive = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (int attempt = 0; attempt < kRetries; ++attempt) {
      for (std::size_t i = 0; i < arity; ++i) {
        const std::size_t pick = rng.index(kPoolSize);
        bindings[i] = kPool[pick];
        small[i] = kSmallPool[pick];
      }
      auto va = detail::try_evaluate(a, bindings, small);
      auto vb = detail::try_evaluate(b, bindings, small);
      if (va && vb) {
        if (*va != *vb) return false;
        ++conclusive;
        break;
      }
    }
  }
  return conclusive > 0 || a == b;
}

}  // namespace logicsolver::expr
