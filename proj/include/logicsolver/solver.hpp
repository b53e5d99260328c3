#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/expr.hpp"
#include "logicsolver/nn/layers.hpp"
#include "logicsolver/nn/optim.hpp"
#include "logicsolver/nn/tensor.hpp"
#include "logicsolver/rational.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::solver {

using nn::Tensor;

struct SolverConfig {
  std::size_t hidden = 64;
  double dropout = 0.5;
  std::vector<std::string> constants{"1", "2", "3.14"};
  std::size_t beam = 5;
  std::size_t max_len = 0;  // 0: set from the training corpus

  nlohmann::ordered_json to_json() const {
    return {{"hidden", hidden}, {"dropout", dropout}, {"constants", constants}, {"beam", beam}, {"max_len", max_len}};
  }
  static SolverConfig from_json(const nlohmann::json& j) {
    SolverConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.constants = j.value("constants", c.constants);
    c.beam = j.value("beam", c.beam);
    c.max_len = j.value("max_len", c.max_len);
    return c;
  }
};

struct EncoderOutput {
  Tensor c;                                 // [n x d]
  Tensor q_root;                            // c[0]
  std::vector<std::size_t> number_positions;  // token position of N0, N1, ...
};

/// Per-problem tensors reused at every decoding step.
struct DecodeContext {
  EncoderOutput enc;
  nn::AdditiveAttention::Prepared keys;
  Tensor candidates;  // [V x d]: operators, constants, then number states
  nn::PairScorer::Prepared scored;
  std::size_t vocab_size = 0;
};

struct OpenNode {
  Tensor q;
  Tensor op_embedding;
  std::optional<Tensor> left;
};

struct Hypothesis {
  std::vector<expr::Token> tokens;
  std::vector<Tensor> goals;
  std::vector<OpenNode> open;
  Tensor next_goal;
  double log_prob = 0.0;
  bool finished = false;
  bool truncated = false;
};

class SolverModel {
 public:
  SolverModel(nn::Vocabulary vocab, SolverConfig config, std::uint64_t seed)
      : vocab_(std::move(vocab)), config_(std::move(config)) {
    for (const auto& c : config_.constants) constants_.push_back(parse_rational(c));
    Rng rng(seed);
    const std::size_t d = config_.hidden;
    encoder_ = nn::TextEncoder(store_, "solver.encoder", vocab_.size(), d, config_.dropout, rng);
    token_embedding_ = store_.add_uniform("solver.token_embedding", {fixed_vocab_size(), d}, rng);
    attention_ = nn::AdditiveAttention(store_, "solver.attention", d, d, d, rng);
    token_scorer_ = nn::PairScorer(store_, "solver.predict", 2 * d, d, d, rng);
    w_left_ = store_.add_uniform("solver.W_l", {d, 3 * d}, rng);
    w_right_ = store_.add_uniform("solver.W_r", {d, 3 * d}, rng);
    w_merge_ = store_.add_uniform("solver.W_m", {d, 3 * d}, rng);
  }

  /// Operators then constants; number slots follow per problem.
  std::size_t fixed_vocab_size() const { return std::size(expr::kAllOps) + constants_.size(); }

  std::size_t token_index(const expr::Token& t) const {
    switch (t.kind()) {
      case expr::TokenKind::Operator: return static_cast<std::size_t>(t.op());
      case expr::TokenKind::Constant:
        for (std::size_t i = 0; i < constants_.size(); ++i) {
          if (constants_[i] == t.value()) return std::size(expr::kAllOps) + i;
        }
        throw Error(Errc::ConfigError, "constant " + format_rational(t.value()) + " is not in the output vocabulary");
      case expr::TokenKind::NumberSlot: return fixed_vocab_size() + t.slot();
    }
    return 0;
  }

  expr::Token token_at(std::size_t index) const {
    const std::size_t ops = std::size(expr::kAllOps);
    if (index < ops) return expr::Token::op(expr::kAllOps[index]);
    if (index < fixed_vocab_size()) return expr::Token::constant(constants_[index - ops]);
    return expr::Token::slot(index - fixed_vocab_size());
  }

  /// Bidirectional encoding; q_root is the sentinel's state.
  EncoderOutput encode(const std::vector<std::string>& prompt, std::size_t num_numbers, bool train = false,
                       Rng* rng = nullptr) const {
    if (prompt.empty() || prompt.front() != nn::Vocabulary::kSentToken) {
      throw Error(Errc::SchemaError, "solver input must begin with " + std::string(nn::Vocabulary::kSentToken));
    }
    EncoderOutput out;
    for (std::size_t i = 0; i < num_numbers; ++i) {
      const std::string slot = "N" + std::to_string(i);
      auto it = std::find(prompt.begin(), prompt.end(), slot);
      if (it == prompt.end()) throw Error(Errc::SchemaError, "number slot " + slot + " missing from the input");
      out.number_positions.push_back(static_cast<std::size_t>(it - prompt.begin()));
    }
    out.c = encoder_.encode(vocab_.ids(prompt), train, rng);
    out.q_root = nn::row(out.c, 0);
    return out;
  }

  DecodeContext prepare(EncoderOutput enc) const {
    DecodeContext ctx;
    ctx.keys = attention_.prepare(enc.c);
    ctx.candidates = enc.number_positions.empty()
                         ? token_embedding_
                         : nn::stack_rows({token_embedding_, nn::embedding_lookup(enc.c, enc.number_positions)});
    ctx.scored = token_scorer_.prepare(ctx.candidates);
    ctx.vocab_size = ctx.candidates.dim(0);
    ctx.enc = std::move(enc);
    return ctx;
  }

  /// Attention context for goal q.
  Tensor context(const DecodeContext& ctx, const Tensor& q) const { return attention_.attend(q, ctx.keys).first; }

  /// Unnormalised scores over operators, constants and number slots.
  Tensor token_scores(const DecodeContext& ctx, const Tensor& q, const Tensor& context) const {
    return token_scorer_.scores(nn::concat({q, context}), ctx.scored);
  }

  /// Probability distribution over the candidate tokens.
  Tensor predict_token(const DecodeContext& ctx, const Tensor& q) const {
    return nn::softmax(token_scores(ctx, q, context(ctx, q)));
  }

  Tensor decompose_goal(const Tensor& q, const Tensor& op_embedding, const Tensor& context) const {
    return nn::tanh(nn::matmul(w_left_, nn::concat({q, op_embedding, context})));
  }

  Tensor resume_right(const Tensor& q, const Tensor& op_embedding, const Tensor& left_embedding) const {
    return nn::tanh(nn::matmul(w_right_, nn::concat({q, op_embedding, left_embedding})));
  }

  /// Leaf: the token embedding itself; operator: tanh(W_m [token; left; right]).
  Tensor subtree_embed(const Tensor& token_embedding, const std::optional<Tensor>& left,
                       const std::optional<Tensor>& right) const {
    if (left.has_value() != right.has_value()) {
      throw Error(Errc::ArityError, "subtree_embed needs both children or neither");
    }
    if (!left) return token_embedding;
    return nn::tanh(nn::matmul(w_merge_, nn::concat({token_embedding, *left, *right})));
  }

  /// Teacher-forced negative log-likelihood of the gold tree and the goal
  /// vector used at each gold token, in prefix order.
  std::pair<Tensor, std::vector<Tensor>> solver_loss(const DecodeContext& ctx, const expr::Tree& gold) const {
    std::vector<Tensor> terms;
    std::vector<Tensor> goals;
    teacher_force(ctx, gold, ctx.enc.q_root, terms, goals);
    return {nn::sum_scalars(terms), std::move(goals)};
  }

  Hypothesis start(const DecodeContext& ctx) const {
    Hypothesis h;
    h.next_goal = ctx.enc.q_root;
    return h;
  }

  /// Log-probabilities for the hypothesis' pending goal, and that goal's context.
  std::pair<std::vector<double>, Tensor> step_log_probs(const DecodeContext& ctx, const Hypothesis& h) const {
    Tensor c = context(ctx, h.next_goal);
    return {nn::log_softmax(token_scores(ctx, h.next_goal, c)).to_vector(), c};
  }

  /// Emits token `index` and moves to the next pending goal.
  void advance(const DecodeContext& ctx, Hypothesis& h, std::size_t index, const Tensor& context,
               double log_prob) const {
    const expr::Token token = token_at(index);
    const Tensor q = h.next_goal;
    h.tokens.push_back(token);
    h.goals.push_back(q);
    h.log_prob += log_prob;
    Tensor emb = nn::row(ctx.candidates, index);
    if (token.is_operator()) {
      h.open.push_back({q, emb, std::nullopt});
      h.next_goal = decompose_goal(q, emb, context);
      return;
    }
    while (true) {
      if (h.open.empty()) {
        h.finished = true;
        h.next_goal = Tensor();
        return;
      }
      OpenNode& top = h.open.back();
      if (!top.left) {
        top.left = emb;
        h.next_goal = resume_right(top.q, top.op_embedding, emb);
        return;
      }
      emb = subtree_embed(top.op_embedding, top.left, emb);
      h.open.pop_back();
    }
  }

  /// Argmax decoding, ties to the lowest vocabulary index.
  Hypothesis decode_greedy(const DecodeContext& ctx, std::size_t max_len) const {
    nn::NoGradGuard guard;
    Hypothesis h = start(ctx);
    while (!h.finished) {
      if (h.tokens.size() >= max_len) {
        h.truncated = true;
        break;
      }
      auto [lp, c] = step_log_probs(ctx, h);
      std::size_t best = 0;
      for (std::size_t i = 1; i < lp.size(); ++i) {
        if (lp[i] > lp[best]) best = i;
      }
      advance(ctx, h, best, c, lp[best]);
    }
    return h;
  }

  /// Beam search over token choices; hypotheses ranked by total log-prob.
  /// Ties go to the earlier parent, then the likelier token, then the lower
  /// index, so width 1 reproduces greedy decoding.
  std::vector<Hypothesis> decode_beam(const DecodeContext& ctx, std::size_t width, std::size_t max_len) const {
    if (width == 0) throw Error(Errc::ConfigError, "beam width must be at least 1");
    nn::NoGradGuard guard;
    struct Candidate {
      double total;
      std::size_t parent;
      double local;
      std::size_t index;  // token index, or npos for a finished parent carried over
    };
    constexpr std::size_t kCarry = std::numeric_limits<std::size_t>::max();
    std::vector<Hypothesis> beam{start(ctx)};
    while (true) {
      bool any_open = false;
      for (const auto& h : beam) any_open |= !h.finished && !h.truncated;
      if (!any_open) break;
      std::vector<Candidate> cands;
      std::vector<Tensor> contexts(beam.size());
      for (std::size_t b = 0; b < beam.size(); ++b) {
        const Hypothesis& h = beam[b];
        if (h.finished || h.truncated) {
          cands.push_back({h.log_prob, b, 0.0, kCarry});
          continue;
        }
        if (h.tokens.size() >= max_len) {
          beam[b].truncated = true;
          cands.push_back({h.log_prob, b, 0.0, kCarry});
          continue;
        }
        auto [lp, c] = step_log_probs(ctx, h);
        contexts[b] = c;
        for (std::size_t i = 0; i < lp.size(); ++i) cands.push_back({h.log_prob + lp[i], b, lp[i], i});
      }
      std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.total != b.total) return a.total > b.total;
        if (a.parent != b.parent) return a.parent < b.parent;
        if (a.local != b.local) return a.local > b.local;
        return a.index < b.index;
      });
      if (cands.size() > width) cands.resize(width);
      std::vector<Hypothesis> next;
      next.reserve(cands.size());
      for (const auto& c : cands) {
        Hypothesis h = beam[c.parent];
        if (c.index != kCarry) advance(ctx, h, c.index, contexts[c.parent], c.local);
        next.push_back(std::move(h));
      }
      beam = std::move(next);
    }
    std::stable_sort(beam.begin(), beam.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.truncated != b.truncated) return !a.truncated;
      return a.log_prob > b.log_prob;
    });
    return beam;
  }

  /// Total log-prob of a given prefix under the model.
  double sequence_log_prob(const DecodeContext& ctx, const std::vector<expr::Token>& prefix) const {
    nn::NoGradGuard guard;
    Hypothesis h = start(ctx);
    for (const auto& t : prefix) {
      if (h.finished) throw Error(Errc::MalformedPrefix, "tokens after a complete expression");
      auto [lp, c] = step_log_probs(ctx, h);
      const std::size_t i = token_index(t);
      if (i >= lp.size()) throw Error(Errc::UnboundSlot, "slot " + expr::to_text(t) + " has no number");
      advance(ctx, h, i, c, lp[i]);
    }
    return h.log_prob;
  }

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const nn::Vocabulary& vocab() const { return vocab_; }
  const SolverConfig& config() const { return config_; }
  SolverConfig& mutable_config() { return config_; }
  const Tensor& token_embedding() const { return token_embedding_; }

 private:
  Tensor teacher_force(const DecodeContext& ctx, const expr::Tree& node, const Tensor& q, std::vector<Tensor>& terms,
                       std::vector<Tensor>& goals) const {
    const std::size_t index = token_index(node.token);
    if (index >= ctx.vocab_size) throw Error(Errc::UnboundSlot, "slot " + expr::to_text(node.token) + " has no number");
    goals.push_back(q);
    Tensor c = context(ctx, q);
    terms.push_back(nn::scale(nn::pick(nn::log_softmax(token_scores(ctx, q, c)), index), -1.0));
    Tensor emb = nn::row(ctx.candidates, index);
    if (node.is_leaf()) return subtree_embed(emb, std::nullopt, std::nullopt);
    Tensor left = teacher_force(ctx, node.left(), decompose_goal(q, emb, c), terms, goals);
    Tensor right = teacher_force(ctx, node.right(), resume_right(q, emb, left), terms, goals);
    return subtree_embed(emb, left, right);
  }

  nn::ParamStore store_;
  nn::Vocabulary vocab_;
  SolverConfig config_;
  std::vector<Rational> constants_;
  nn::TextEncoder encoder_;
  Tensor token_embedding_;
  nn::AdditiveAttention attention_;
  nn::PairScorer token_scorer_;
  Tensor w_left_;
  Tensor w_right_;
  Tensor w_merge_;
};

/// Largest gold size times two, plus one.
inline std::size_t default_max_len(std::size_t max_gold_size) { return 2 * max_gold_size + 1; }

}  // namespace logicsolver::solver
