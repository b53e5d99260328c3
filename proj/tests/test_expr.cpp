#include <gtest/gtest.h>

#include <set>

#include "support/test_support.hpp"

namespace ls = logicsolver;
using ls::Rational;
using ls::expr::Op;
using ls::expr::Token;
using ls::expr::Tree;

namespace {

std::vector<Tree> leaf_pool() { return {Tree::slot(0), Tree::slot(1), Tree::slot(2), Tree::constant(Rational(2))}; }

// False for trees like "/ N1 - 2 2" that divide by zero under any binding.
bool evaluates(const Tree& t) {
  try {
    const std::vector<Rational> bindings{Rational(3), Rational(7), Rational(13)};
    ls::expr::evaluate(t, bindings);
    return true;
  } catch (const ls::Error&) {
    return false;
  }
}

std::vector<Rational> nums(std::initializer_list<long long> v) {
  std::vector<Rational> out;
  for (auto x : v) out.emplace_back(x);
  return out;
}

}  // namespace

TEST(ParsePrefix, SingleOperator) {
  auto t = ls::expr::parse_prefix("* N0 N1");
  EXPECT_EQ(t, Tree::node(Op::Mul, Tree::slot(0), Tree::slot(1)));
}

TEST(ParsePrefix, NestedLeftOperand) {
  auto t = ls::expr::parse_prefix("+ * N0 N1 N2");
  EXPECT_EQ(t, Tree::node(Op::Add, Tree::node(Op::Mul, Tree::slot(0), Tree::slot(1)), Tree::slot(2)));
  EXPECT_EQ(ls::expr::prefix_text(t), "+ * N0 N1 N2");
}

TEST(ParsePrefix, MissingOperandIsMalformed) {
  try {
    ls::expr::parse_prefix("* N0");
    FAIL();
  } catch (const ls::Error& e) {
    EXPECT_EQ(e.code(), ls::Errc::MalformedPrefix);
  }
}

TEST(ParsePrefix, ExtraTokensAreMalformed) {
  EXPECT_THROW(ls::expr::parse_prefix("N0 N1"), ls::Error);
  EXPECT_THROW(ls::expr::parse_prefix(""), ls::Error);
}

TEST(PrintPrefix, Basics) {
  EXPECT_EQ(ls::expr::prefix_text(Tree::node(Op::Mul, Tree::slot(0), Tree::slot(1))), "* N0 N1");
  EXPECT_EQ(ls::expr::prefix_text(Tree::slot(0)), "N0");
}

TEST(PrintPrefix, RoundTripAllTreesUpToSizeNine) {
  std::vector<Op> ops(std::begin(ls::expr::kAllOps), std::end(ls::expr::kAllOps));
  std::size_t count = 0;
  auto check = [&](const std::vector<Tree>& trees) {
    for (const auto& t : trees) {
      ASSERT_LE(ls::expr::tree_size(t), 9u);
      ASSERT_EQ(ls::expr::parse_prefix(ls::expr::print_prefix(t)), t);
      ASSERT_EQ(ls::expr::parse_prefix(ls::expr::prefix_text(t)), t);
      ++count;
    }
  };
  for (std::size_t k = 0; k <= 3; ++k) check(testsupport::enumerate_trees(k, ops, leaf_pool()));
  check(testsupport::enumerate_trees(4, {Op::Sub, Op::Div}, {Tree::slot(0), Tree::slot(1), Tree::constant(Rational(2))}));
  EXPECT_GT(count, 100000u);
}

TEST(PrintInfix, Examples) {
  EXPECT_EQ(ls::expr::print_infix(ls::expr::parse_prefix("+ * N0 N1 N2")), "((N0 × N1) + N2)");
  EXPECT_EQ(ls::expr::print_infix(ls::expr::parse_prefix("/ N0 - N1 N2")), "(N0 ÷ (N1 − N2))");
  EXPECT_EQ(ls::expr::print_infix(Tree::constant(Rational(157, 50))), "3.14");
}

TEST(PrintInfix, ReparsesToSameTree) {
  std::vector<Op> ops(std::begin(ls::expr::kAllOps), std::end(ls::expr::kAllOps));
  for (std::size_t k = 0; k <= 3; ++k) {
    for (const auto& t : testsupport::enumerate_trees(k, ops, leaf_pool())) {
      EXPECT_EQ(testsupport::parse_infix(ls::expr::print_infix(t)), t);
    }
  }
}

TEST(Evaluate, Examples) {
  EXPECT_EQ(ls::expr::evaluate(ls::expr::parse_prefix("* N0 N1"), nums({2, 3})), Rational(6));
  EXPECT_EQ(ls::expr::evaluate(ls::expr::parse_prefix("+ * N0 N1 N2"), nums({2, 3, 4})), Rational(10));
}

TEST(Evaluate, DivisionByZero) {
  try {
    ls::expr::evaluate(ls::expr::parse_prefix("/ N0 N1"), nums({1, 0}));
    FAIL();
  } catch (const ls::Error& e) {
    EXPECT_EQ(e.code(), ls::Errc::DivisionByZero);
  }
}

TEST(Evaluate, UnboundSlot) {
  try {
    ls::expr::evaluate(ls::expr::parse_prefix("+ N0 N3"), nums({1, 2}));
    FAIL();
  } catch (const ls::Error& e) {
    EXPECT_EQ(e.code(), ls::Errc::UnboundSlot);
  }
}

TEST(Evaluate, ExactRationals) {
  EXPECT_EQ(ls::expr::evaluate(ls::expr::parse_prefix("* / 1 3 3"), {}), Rational(1));
  EXPECT_EQ(ls::expr::evaluate(ls::expr::parse_prefix("^ N0 2"), nums({7})), Rational(49));
}

TEST(Evaluate, NonIntegerExponent) {
  try {
    ls::expr::evaluate(ls::expr::parse_prefix("^ 2 0.5"), {});
    FAIL();
  } catch (const ls::Error& e) {
    EXPECT_EQ(e.code(), ls::Errc::NonIntegerExponent);
  }
}

TEST(TreeSize, Examples) {
  EXPECT_EQ(ls::expr::tree_size(Tree::slot(0)), 1u);
  EXPECT_EQ(ls::expr::tree_size(ls::expr::parse_prefix("* N0 N1")), 3u);
  EXPECT_EQ(ls::expr::tree_size(ls::expr::parse_prefix("+ * N0 N1 N2")), 5u);
}

TEST(ExpandSolutionSet, OneSwap) {
  auto s = ls::expr::expand_solution_set(ls::expr::parse_prefix("+ N0 N1"));
  ASSERT_EQ(s.members.size(), 2u);
  EXPECT_EQ(ls::expr::tokens_to_text(s.members[0]), "+ N0 N1");
  EXPECT_EQ(ls::expr::tokens_to_text(s.members[1]), "+ N1 N0");
  EXPECT_FALSE(s.truncated);
}

TEST(ExpandSolutionSet, TwoSwapSites) {
  auto s = ls::expr::expand_solution_set(ls::expr::parse_prefix("* N0 + N1 N2"));
  EXPECT_EQ(s.members.size(), 4u);
}

TEST(ExpandSolutionSet, NoSymmetricOperator) {
  auto s = ls::expr::expand_solution_set(ls::expr::parse_prefix("- N0 N1"));
  ASSERT_EQ(s.members.size(), 1u);
  EXPECT_EQ(ls::expr::tokens_to_text(s.members[0]), "- N0 N1");
}

TEST(ExpandSolutionSet, LimitTruncatesAndKeepsInput) {
  auto t = ls::expr::parse_prefix("+ + N0 N1 + N2 N3");
  auto s = ls::expr::expand_solution_set(t, 3);
  EXPECT_EQ(s.members.size(), 3u);
  EXPECT_TRUE(s.truncated);
  EXPECT_TRUE(s.contains(ls::expr::print_prefix(t)));
}

TEST(ExpandSolutionSet, MembersAreEquivalent) {
  std::vector<Op> ops{Op::Add, Op::Sub, Op::Mul, Op::Div};
  for (const auto& t : testsupport::enumerate_trees(2, ops, leaf_pool())) {
    auto s = ls::expr::expand_solution_set(t);
    ASSERT_TRUE(s.contains(ls::expr::print_prefix(t)));
    if (!evaluates(t)) continue;
    for (const auto& m : s.members) {
      EXPECT_TRUE(ls::expr::probably_equivalent(t, ls::expr::parse_prefix(m), 64, 3));
    }
  }
}

TEST(ProbablyEquivalent, LargeValuesAndPowers) {
  const Tree big = Tree::constant(Rational(ls::BigInt(10) * ls::BigInt("1000000000000000000000000000000")));
  const Tree a = Tree::node(Op::Mul, Tree::slot(0), big);
  const Tree b = Tree::node(Op::Mul, big, Tree::slot(0));
  EXPECT_TRUE(ls::expr::probably_equivalent(a, b, 32, 2));
  EXPECT_FALSE(ls::expr::probably_equivalent(a, Tree::node(Op::Add, a, Tree::constant(Rational(1))), 32, 2));
  const Tree square = Tree::node(Op::Pow, Tree::slot(0), Tree::constant(Rational(2)));
  EXPECT_TRUE(ls::expr::probably_equivalent(square, Tree::node(Op::Mul, Tree::slot(0), Tree::slot(0)), 32, 2));
  EXPECT_FALSE(ls::expr::probably_equivalent(square, Tree::node(Op::Add, Tree::slot(0), Tree::slot(0)), 32, 2));
}

TEST(Canonicalize, Examples) {
  EXPECT_EQ(ls::expr::canonicalize(ls::expr::parse_prefix("+ N1 N0")), ls::expr::parse_prefix("+ N0 N1"));
  EXPECT_EQ(ls::expr::canonicalize(ls::expr::parse_prefix("* 2 3")), Tree::constant(Rational(6)));
}

TEST(Canonicalize, FlattensChains) {
  auto a = ls::expr::canonicalize(ls::expr::parse_prefix("+ N2 + N1 N0"));
  auto b = ls::expr::canonicalize(ls::expr::parse_prefix("+ + N0 N2 N1"));
  EXPECT_EQ(a, b);
}

TEST(Canonicalize, FoldingDivisionByZero) {
  try {
    ls::expr::canonicalize(ls::expr::parse_prefix("+ N0 / 1 0"));
    FAIL();
  } catch (const ls::Error& e) {
    EXPECT_EQ(e.code(), ls::Errc::DivisionByZero);
  }
}

TEST(Canonicalize, IdempotentAndEquivalent) {
  std::vector<Op> ops(std::begin(ls::expr::kAllOps), std::end(ls::expr::kAllOps));
  for (std::size_t k = 0; k <= 2; ++k) {
    for (const auto& t : testsupport::enumerate_trees(k, ops, leaf_pool())) {
      Tree c;
      try {
        c = ls::expr::canonicalize(t);
      } catch (const ls::Error&) {
        continue;
      }
      EXPECT_EQ(ls::expr::canonicalize(c), c) << ls::expr::prefix_text(t);
      if (!evaluates(t)) continue;
      EXPECT_TRUE(ls::expr::probably_equivalent(t, c, 64, 5)) << ls::expr::prefix_text(t);
    }
  }
}

TEST(ProbablyEquivalent, Examples) {
  auto a = ls::expr::parse_prefix("+ N0 N1");
  EXPECT_TRUE(ls::expr::probably_equivalent(a, ls::expr::parse_prefix("+ N1 N0"), 32, 1));
  EXPECT_FALSE(ls::expr::probably_equivalent(a, ls::expr::parse_prefix("- N0 N1"), 32, 1));
}

TEST(Rational, ParseAndFormat) {
  EXPECT_EQ(ls::parse_rational("0.15"), Rational(3, 20));
  EXPECT_EQ(ls::parse_rational("007"), Rational(7));
  EXPECT_EQ(ls::parse_rational("0.05"), Rational(1, 20));
  EXPECT_EQ(ls::parse_rational("25%"), Rational(1, 4));
  EXPECT_EQ(ls::parse_rational("-3/4"), Rational(-3, 4));
  EXPECT_EQ(ls::format_rational(Rational(157, 50)), "3.14");
  EXPECT_EQ(ls::format_rational(Rational(1, 3)), "1/3");
  EXPECT_EQ(ls::format_rational(Rational(-1, 20)), "-0.05");
  EXPECT_THROW(ls::parse_rational("abc"), ls::Error);
}

TEST(TokenText, RoundTrip) {
  for (const char* s : {"+", "-", "*", "/", "^", "N0", "N12", "3.14", "1/3"}) {
    EXPECT_EQ(ls::expr::to_text(ls::expr::token_from_text(s)), s);
  }
  EXPECT_EQ(ls::expr::token_from_text("×"), Token::op(Op::Mul));
}
