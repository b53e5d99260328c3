#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "logicsolver/logicsolver.hpp"

namespace testsupport {

namespace ls = logicsolver;

inline std::string source_dir() { return LOGICSOLVER_SOURCE_DIR; }
inline std::string kb_path() { return source_dir() + "/data/kb.json"; }
inline std::string fixture(const std::string& name) { return source_dir() + "/tests/fixtures/" + name; }
inline const ls::logic::KnowledgeBase& kb() {
  static const ls::logic::KnowledgeBase k = ls::logic::load_kb(kb_path());
  return k;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("logicsolver-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// Infix parser for fully parenthesised output of print_infix.
// ---------------------------------------------------------------------------

class InfixParser {
 public:
  explicit InfixParser(std::string_view text) : text_(text) {}

  ls::expr::Tree parse() {
    auto t = expression();
    skip_space();
    if (pos_ != text_.size()) fail("trailing input");
    return t;
  }

 private:
  ls::expr::Tree expression() {
    skip_space();
    if (peek() == '(') {
      ++pos_;
      auto left = expression();
      skip_space();
      const auto op = read_operator();
      auto right = expression();
      skip_space();
      if (peek() != ')') fail("expected ')'");
      ++pos_;
      return ls::expr::Tree::node(op, std::move(left), std::move(right));
    }
    std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != ')') ++pos_;
    if (start == pos_) fail("expected operand");
    return ls::expr::Tree::leaf(ls::expr::token_from_text(text_.substr(start, pos_ - start)));
  }

  ls::expr::Op read_operator() {
    for (ls::expr::Op op : ls::expr::kAllOps) {
      for (std::string_view sym : {ls::expr::op_symbol(op), ls::expr::op_ascii(op)}) {
        if (text_.substr(pos_, sym.size()) == sym) {
          pos_ += sym.size();
          return op;
        }
      }
    }
    fail("expected operator");
    return ls::expr::Op::Add;
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ls::Error(ls::Errc::MalformedPrefix, "infix: " + what + " at " + std::to_string(pos_));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

inline ls::expr::Tree parse_infix(std::string_view text) { return InfixParser(text).parse(); }

// ---------------------------------------------------------------------------
// Tree enumeration
// ---------------------------------------------------------------------------

/// Every tree with exactly `ops` operator nodes over the given operators and
/// leaves.
inline std::vector<ls::expr::Tree> enumerate_trees(std::size_t ops, const std::vector<ls::expr::Op>& operators,
                                                   const std::vector<ls::expr::Tree>& leaves) {
  if (ops == 0) return leaves;
  std::vector<ls::expr::Tree> out;
  for (std::size_t left_ops = 0; left_ops < ops; ++left_ops) {
    auto lefts = enumerate_trees(left_ops, operators, leaves);
    auto rights = enumerate_trees(ops - 1 - left_ops, operators, leaves);
    for (auto op : operators) {
      for (const auto& l : lefts) {
        for (const auto& r : rights) out.push_back(ls::expr::Tree::node(op, l, r));
      }
    }
  }
  return out;
}

inline std::size_t count_commutative(const ls::expr::Tree& t) {
  if (t.is_leaf()) return 0;
  return (ls::expr::is_commutative(t.token.op()) ? 1 : 0) + count_commutative(t.left()) + count_commutative(t.right());
}

// ---------------------------------------------------------------------------
// Central-difference gradient check
// ---------------------------------------------------------------------------

struct GradcheckResult {
  double max_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients of `loss()` with central differences on every
/// entry of `inputs`. Error per entry is |g_a - g_n| / max(1, |g_n|).
inline GradcheckResult gradcheck(const std::function<ls::nn::Tensor()>& loss, std::vector<ls::nn::Tensor> inputs,
                                 double eps = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  ls::nn::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    std::vector<double> g(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  GradcheckResult r;
  ls::nn::NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = loss().item();
      values[i] = orig - eps;
      const double down = loss().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      r.max_error = std::max(r.max_error, err);
      ++r.checked;
    }
  }
  return r;
}

inline ls::nn::Tensor random_tensor(ls::nn::Shape shape, ls::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ls::nn::shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ls::nn::Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace testsupport
