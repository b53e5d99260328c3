#include <gtest/gtest.h>

#include <cmath>

#include "support/test_support.hpp"

namespace ls = logicsolver;
namespace nn = ls::nn;
namespace lg = ls::logicgen;
using nn::Tensor;

namespace {

const std::vector<std::string> kText{"a", "pen", "costs", "N0", "and", "we", "buy", "N1", "."};

lg::LogicGenModel make_model(std::uint64_t seed, std::size_t hidden = 8) {
  std::vector<std::vector<std::string>> docs{kText};
  for (const auto& f : testsupport::kb().formulas()) docs.push_back(f.surface_tokens());
  lg::LogicGenConfig cfg;
  cfg.hidden = hidden;
  cfg.dropout = 0.0;
  return lg::LogicGenModel(nn::Vocabulary::build(docs), cfg, seed);
}

std::size_t id_of(const std::string& surface) { return *testsupport::kb().find_by_text(surface); }

}  // namespace

TEST(LogicGenLoss, UniformScoresCostLogT) {
  auto m = make_model(1);
  for (double& v : m.store().get("logicgen.score.v").mutable_values()) v = 0.0;
  const auto& kb = testsupport::kb();
  auto ctx = m.prepare(m.encode_problem(kText), m.formula_matrix(kb));
  ls::Rng rng(1);
  std::vector<Tensor> goals{testsupport::random_tensor({8}, rng), testsupport::random_tensor({8}, rng)};
  auto loss = m.logicgen_loss(goals, {3, 17}, ctx);
  EXPECT_NEAR(loss.item(), 2.0 * std::log(double(kb.size())), 1e-12);
}

TEST(LogicGenLoss, NoOperatorsIsZero) {
  auto m = make_model(2);
  auto ctx = m.prepare(m.encode_problem(kText), m.formula_matrix(testsupport::kb()));
  EXPECT_EQ(m.logicgen_loss({}, {}, ctx).item(), 0.0);
}

TEST(LogicGenLoss, MismatchedLengths) {
  auto m = make_model(2);
  auto ctx = m.prepare(m.encode_problem(kText), m.formula_matrix(testsupport::kb()));
  ls::Rng rng(2);
  EXPECT_THROW(m.logicgen_loss({testsupport::random_tensor({8}, rng)}, {1, 2}, ctx), ls::Error);
  EXPECT_THROW(m.logicgen_loss({testsupport::random_tensor({8}, rng)}, {400}, ctx), ls::Error);
}

TEST(LogicSelect, ArgmaxWithLowestTie) {
  EXPECT_EQ(lg::logic_select({0.1, 0.7, 0.2}), 1u);
  EXPECT_EQ(lg::logic_select({0.5, 0.5}), 0u);
  EXPECT_EQ(lg::logic_select({-3.0}), 0u);
  EXPECT_THROW(lg::logic_select({}), ls::Error);
}

TEST(Overfit, OneProblem) {
  auto m = make_model(3, 16);
  const auto& kb = testsupport::kb();
  ls::Rng rng(3);
  std::vector<Tensor> goals{testsupport::random_tensor({16}, rng)};
  const std::vector<std::size_t> gold{id_of("expenses = price × quantity")};
  nn::AdamState adam;
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    auto ctx = m.prepare(m.encode_problem(kText), m.formula_matrix(kb));
    Tensor l = m.logicgen_loss(goals, gold, ctx);
    loss = l.item();
    nn::backward(l);
    nn::adam_step(m.store(), adam, 1e-2, 0.0);
  }
  EXPECT_LT(loss, 0.01);
  auto ctx = m.prepare(m.encode_problem(kText), m.formula_matrix(kb));
  EXPECT_EQ(m.select_all(goals, ctx), gold);
}

TEST(OperatorPositions, PicksOperatorGoals) {
  auto prefix = ls::expr::tokens_from_text("* N0 + N1 1");
  std::vector<int> per_token{0, 1, 2, 3, 4};
  EXPECT_EQ(lg::operator_positions(prefix, per_token), (std::vector<int>{0, 2}));
  EXPECT_THROW(lg::operator_positions(prefix, std::vector<int>{1}), ls::Error);
}

TEST(Explain, OneLinePerOperator) {
  const auto& kb = testsupport::kb();
  const auto price = id_of("expenses = price × quantity");
  auto lines = lg::explain(ls::expr::parse_prefix("* N0 N1"), {price}, kb);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0].subtree_infix, "(N0 × N1)");
  EXPECT_EQ(lines[0].formula_text, "expenses = price × quantity");
  EXPECT_EQ(lines[0].semantics.lhs, "expenses");
  EXPECT_EQ(lines[0].render(), "(N0 × N1)  <-  expenses = price × quantity");

  auto nested = lg::explain(ls::expr::parse_prefix("* N0 + N1 1"), {price, kb.common_sense_id()}, kb);
  ASSERT_EQ(nested.size(), 2u);
  EXPECT_EQ(nested[1].subtree_infix, "(N1 + 1)");

  EXPECT_TRUE(lg::explain(ls::expr::parse_prefix("N0"), {}, kb).empty());
  EXPECT_THROW(lg::explain(ls::expr::parse_prefix("* N0 N1"), {}, kb), ls::Error);
}
