#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/expr.hpp"
#include "logicsolver/logic.hpp"
#include "logicsolver/nn/layers.hpp"
#include "logicsolver/nn/optim.hpp"
#include "logicsolver/nn/tensor.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::logicgen {

using nn::Tensor;

struct LogicGenConfig {
  std::size_t hidden = 64;  // must equal the solver's goal size
  double dropout = 0.5;

  nlohmann::ordered_json to_json() const { return {{"hidden", hidden}, {"dropout", dropout}}; }
  static LogicGenConfig from_json(const nlohmann::json& j) {
    LogicGenConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    return c;
  }
};

/// Problem-side tensors reused for every operator node.
struct LogicContext {
  nn::AdditiveAttention::Prepared problem;  // p^L token states
  nn::PairScorer::Prepared formulas;        // f^L rows
};

class LogicGenModel {
 public:
  LogicGenModel(nn::Vocabulary vocab, LogicGenConfig config, std::uint64_t seed)
      : vocab_(std::move(vocab)), config_(config) {
    Rng rng(seed);
    const std::size_t d = config_.hidden;
    encoder_ = nn::TextEncoder(store_, "logicgen.encoder", vocab_.size(), d, config_.dropout, rng);
    attention_ = nn::AdditiveAttention(store_, "logicgen.attention", d, d, d, rng);
    scorer_ = nn::PairScorer(store_, "logicgen.score", 2 * d, d, d, rng);
  }

  Tensor encode_problem(const std::vector<std::string>& tokens, bool train = false, Rng* rng = nullptr) const {
    return encoder_.encode(vocab_.ids(tokens), train, rng);
  }

  /// [T x d]: mean-pooled formula token states.
  Tensor formula_matrix(const logic::KnowledgeBase& kb, bool train = false, Rng* rng = nullptr) const {
    std::vector<Tensor> rows;
    rows.reserve(kb.size());
    for (const auto& f : kb.formulas()) {
      rows.push_back(nn::mean_pool(encoder_.encode(vocab_.ids(f.surface_tokens()), train, rng)));
    }
    return nn::stack_rows(rows);
  }

  LogicContext prepare(const Tensor& problem_states, const Tensor& formula_matrix) const {
    return {attention_.prepare(problem_states), scorer_.prepare(formula_matrix)};
  }

  /// c^L: attention of q over the problem token states.
  Tensor logic_context(const Tensor& q, const LogicContext& ctx) const { return attention_.attend(q, ctx.problem).first; }

  /// One unnormalised score per formula: v_L^T tanh(W_L [q; c^L; f_i]).
  Tensor logic_scores(const Tensor& q, const Tensor& c_l, const LogicContext& ctx) const {
    return scorer_.scores(nn::concat({q, c_l}), ctx.formulas);
  }

  /// Summed negative log-likelihood of the gold ids, one goal per operator.
  Tensor logicgen_loss(const std::vector<Tensor>& operator_goals, const std::vector<std::size_t>& gold_ids,
                       const LogicContext& ctx) const {
    if (operator_goals.size() != gold_ids.size()) {
      throw Error(Errc::LengthMismatch, std::to_string(operator_goals.size()) + " operator goals for " +
                                            std::to_string(gold_ids.size()) + " formula ids");
    }
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < gold_ids.size(); ++i) {
      const Tensor& q = operator_goals[i];
      Tensor lp = nn::log_softmax(logic_scores(q, logic_context(q, ctx), ctx));
      if (gold_ids[i] >= lp.size()) throw Error(Errc::UnknownFormulaId, "formula id " + std::to_string(gold_ids[i]));
      terms.push_back(nn::scale(nn::pick(lp, gold_ids[i]), -1.0));
    }
    return nn::sum_scalars(terms);
  }

  /// Selected formula per operator goal.
  std::vector<std::size_t> select_all(const std::vector<Tensor>& operator_goals, const LogicContext& ctx) const;

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const nn::Vocabulary& vocab() const { return vocab_; }
  const LogicGenConfig& config() const { return config_; }

 private:
  nn::ParamStore store_;
  nn::Vocabulary vocab_;
  LogicGenConfig config_;
  nn::TextEncoder encoder_;
  nn::AdditiveAttention attention_;
  nn::PairScorer scorer_;
};

/// Argmax, ties to the lowest id.
inline std::size_t logic_select(const std::vector<double>& scores) {
  if (scores.empty()) throw Error(Errc::EmptyInput, "logic_select needs at least one score");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

inline std::vector<std::size_t> LogicGenModel::select_all(const std::vector<Tensor>& operator_goals,
                                                          const LogicContext& ctx) const {
  nn::NoGradGuard guard;
  std::vector<std::size_t> out;
  out.reserve(operator_goals.size());
  for (const auto& q : operator_goals) out.push_back(logic_select(logic_scores(q, logic_context(q, ctx), ctx).to_vector()));
  return out;
}

/// Goal vectors at operator positions of a prefix sequence.
template <typename T>
std::vector<T> operator_positions(const std::vector<expr::Token>& prefix, const std::vector<T>& per_token) {
  if (prefix.size() != per_token.size()) {
    throw Error(Errc::LengthMismatch, "goal count differs from token count");
  }
  std::vector<T> out;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (prefix[i].is_operator()) out.push_back(per_token[i]);
  }
  return out;
}

struct ExplanationLine {
  std::size_t node_index = 0;  // operator position in prefix order
  std::string subtree_infix;
  std::size_t formula_id = 0;
  std::string formula_text;
  logic::NodeSemantics semantics;

  nlohmann::ordered_json to_json() const {
    return {{"node_index", node_index},
            {"subtree_infix", subtree_infix},
            {"formula_id", formula_id},
            {"formula_text", formula_text},
            {"semantics", {{"lhs", semantics.lhs}, {"left", semantics.left}, {"right", semantics.right}}}};
  }
  std::string render() const { return subtree_infix + "  <-  " + formula_text; }
};

/// One line per operator node pairing the subtree with its formula.
inline std::vector<ExplanationLine> explain(const expr::Tree& tree, const std::vector<std::size_t>& selections,
                                            const logic::KnowledgeBase& kb) {
  auto ops = logic::operator_nodes(tree);
  if (ops.size() != selections.size()) {
    throw Error(Errc::LengthMismatch, std::to_string(selections.size()) + " selections for " +
                                          std::to_string(ops.size()) + " operator nodes");
  }
  std::vector<ExplanationLine> out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto& f = kb.at(selections[i]);
    out.push_back({i, expr::print_infix(*ops[i]), f.id, f.surface_text(), logic::node_semantics(f)});
  }
  return out;
}

}  // namespace logicsolver::logicgen
