#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "logicsolver/corpus.hpp"
#include "logicsolver/error.hpp"
#include "logicsolver/logic.hpp"
#include "logicsolver/nn/layers.hpp"
#include "logicsolver/nn/optim.hpp"
#include "logicsolver/nn/tensor.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::retriever {

using nn::Tensor;

struct RetrieverConfig {
  std::size_t hidden = 64;
  double dropout = 0.5;
  // Use the loss with e^{+s} on positives and e^{-s} on negatives.
  bool printed_sign = false;

  nlohmann::ordered_json to_json() const {
    return {{"hidden", hidden}, {"dropout", dropout}, {"printed_sign", printed_sign}};
  }
  static RetrieverConfig from_json(const nlohmann::json& j) {
    RetrieverConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.printed_sign = j.value("printed_sign", c.printed_sign);
    return c;
  }
};

/// Text encoder plus the scorer s_i = v_s^T tanh(W_s [p; f_i]).
class RetrieverModel {
 public:
  RetrieverModel(nn::Vocabulary vocab, RetrieverConfig config, std::uint64_t seed)
      : vocab_(std::move(vocab)), config_(config) {
    Rng rng(seed);
    encoder_ = nn::TextEncoder(store_, "retriever.encoder", vocab_.size(), config_.hidden, config_.dropout, rng);
    scorer_ = nn::PairScorer(store_, "retriever.score", config_.hidden, config_.hidden, config_.hidden, rng);
  }

  /// Mean of the encoder token states.
  Tensor embed_text(const std::vector<std::string>& tokens, bool train = false, Rng* rng = nullptr) const {
    if (tokens.empty()) throw Error(Errc::EmptyInput, "cannot embed empty text");
    return nn::mean_pool(encoder_.encode(vocab_.ids(tokens), train, rng));
  }

  /// [T x d] formula embeddings, row i for formula id i.
  Tensor formula_matrix(const logic::KnowledgeBase& kb, bool train = false, Rng* rng = nullptr) const {
    if (kb.size() == 0) throw Error(Errc::EmptyInput, "knowledge base is empty");
    std::vector<Tensor> rows;
    rows.reserve(kb.size());
    for (const auto& f : kb.formulas()) rows.push_back(embed_text(f.surface_tokens(), train, rng));
    return nn::stack_rows(rows);
  }

  Tensor score(const Tensor& problem_embedding, const nn::PairScorer::Prepared& formulas) const {
    return scorer_.scores(problem_embedding, formulas);
  }
  nn::PairScorer::Prepared prepare_formulas(const Tensor& formula_matrix) const {
    return scorer_.prepare(formula_matrix);
  }

  /// One score per formula.
  std::vector<double> score_all(const std::vector<std::string>& problem_tokens, const logic::KnowledgeBase& kb) const {
    nn::NoGradGuard guard;
    auto prepared = prepare_formulas(formula_matrix(kb));
    return score(embed_text(problem_tokens), prepared).to_vector();
  }

  /// Scores for many problems, encoding the knowledge base once.
  std::vector<std::vector<double>> score_many(const std::vector<corpus::Problem>& problems,
                                              const logic::KnowledgeBase& kb) const {
    nn::NoGradGuard guard;
    auto prepared = prepare_formulas(formula_matrix(kb));
    std::vector<std::vector<double>> out;
    out.reserve(problems.size());
    for (const auto& p : problems) out.push_back(score(embed_text(p.text_tokens), prepared).to_vector());
    return out;
  }

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const nn::Vocabulary& vocab() const { return vocab_; }
  const RetrieverConfig& config() const { return config_; }
  const nn::PairScorer& scorer() const { return scorer_; }

 private:
  nn::ParamStore store_;
  nn::Vocabulary vocab_;
  RetrieverConfig config_;
  nn::TextEncoder encoder_;
  nn::PairScorer scorer_;
};

/// log(1 + sum_pos e^{-s_i}) + log(1 + sum_neg e^{s_j}); `printed_sign`
/// flips both exponents.
inline Tensor retriever_loss(const Tensor& scores, const logic::LogicLabelVector& labels, bool printed_sign = false) {
  if (scores.rank() != 1 || scores.size() != labels.bits.size()) {
    throw Error(Errc::LengthMismatch, "retriever_loss: " + std::to_string(scores.size()) + " scores for " +
                                          std::to_string(labels.bits.size()) + " labels");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.bits.size(); ++i) (labels.bits[i] ? pos : neg).push_back(i);
  const double pos_sign = printed_sign ? 1.0 : -1.0;
  const Tensor zero = Tensor::vector({0.0});
  // log(1 + sum e^{x}) = logsumexp([0, x...])
  auto term = [&](const std::vector<std::size_t>& idx, double sign) {
    if (idx.empty()) return Tensor::scalar(0.0);
    return nn::logsumexp(nn::concat({zero, nn::scale(nn::gather(scores, idx), sign)}));
  };
  return nn::add(term(pos, pos_sign), term(neg, -pos_sign));
}

/// K ids by descending score, ties to the lower id.
inline std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  if (k > scores.size()) {
    throw Error(Errc::ConfigError, "top_k: K=" + std::to_string(k) + " exceeds " + std::to_string(scores.size()));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

/// All ids, best first.
inline std::vector<std::size_t> rank_all(const std::vector<double>& scores) { return top_k(scores, scores.size()); }

enum class Placement { Ahead, Behind };
enum class Selection { Retrieved, Random };

inline std::string_view placement_name(Placement p) { return p == Placement::Ahead ? "ahead" : "behind"; }
inline Placement placement_from_name(std::string_view s) {
  if (s == "ahead") return Placement::Ahead;
  if (s == "behind") return Placement::Behind;
  throw Error(Errc::ConfigError, "placement must be 'ahead' or 'behind', got '" + std::string(s) + "'");
}
inline std::string_view selection_name(Selection s) { return s == Selection::Random ? "random" : "retrieved"; }
inline Selection selection_from_name(std::string_view s) {
  if (s == "retrieved") return Selection::Retrieved;
  if (s == "random") return Selection::Random;
  throw Error(Errc::ConfigError, "selection must be 'retrieved' or 'random', got '" + std::string(s) + "'");
}

struct PromptConfig {
  std::size_t k = 3;
  Placement placement = Placement::Behind;
  Selection selection = Selection::Retrieved;
  std::uint64_t seed = 0;  // random selection only

  nlohmann::ordered_json to_json() const {
    return {{"K", k},
            {"placement", std::string(placement_name(placement))},
            {"selection", std::string(selection_name(selection))},
            {"seed", seed}};
  }
  static PromptConfig from_json(const nlohmann::json& j) {
    PromptConfig c;
    c.k = j.value("K", c.k);
    c.placement = placement_from_name(j.value("placement", std::string("behind")));
    c.selection = selection_from_name(j.value("selection", std::string("retrieved")));
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

/// K distinct ids drawn uniformly.
inline std::vector<std::size_t> random_selection(std::size_t num_formulas, std::size_t k, Rng& rng) {
  if (k > num_formulas) throw Error(Errc::ConfigError, "random selection: K exceeds knowledge base size");
  return rng.sample_without_replacement(num_formulas, k);
}

/// Behind: [SENT] P [SEP] f1 [SEP] f2 ...; Ahead: [SENT] f1 [SEP] ... fK [SEP] P.
inline std::vector<std::string> assemble_prompt(const std::vector<std::string>& problem_tokens,
                                                const std::vector<std::size_t>& formula_ids,
                                                const logic::KnowledgeBase& kb, Placement placement) {
  const std::string sent(nn::Vocabulary::kSentToken);
  const std::string sep(nn::Vocabulary::kSepToken);
  std::vector<std::string> out{sent};
  if (placement == Placement::Behind) {
    out.insert(out.end(), problem_tokens.begin(), problem_tokens.end());
    for (std::size_t id : formula_ids) {
      out.push_back(sep);
      auto f = kb.at(id).surface_tokens();
      out.insert(out.end(), f.begin(), f.end());
    }
  } else {
    for (std::size_t id : formula_ids) {
      auto f = kb.at(id).surface_tokens();
      out.insert(out.end(), f.begin(), f.end());
      out.push_back(sep);
    }
    out.insert(out.end(), problem_tokens.begin(), problem_tokens.end());
  }
  return out;
}

/// F_beta = (1 + b^2) P R / (b^2 P + R); 0 when P = R = 0.
inline double f_beta(double precision, double recall, double beta = 10.0) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / denom;
}

struct RetrievalMetrics {
  double recall = 0.0;
  double precision = 0.0;
  double f_beta = 0.0;

  nlohmann::ordered_json to_json() const {
    return {{"recall", recall}, {"precision", precision}, {"f_beta", f_beta}};
  }
};

/// Micro-averaged over problems: hits / gold positives and hits / retrieved.
inline RetrievalMetrics eval_retriever(const std::vector<std::vector<std::size_t>>& ranked,
                                       const std::vector<logic::LogicLabelVector>& gold, std::size_t k,
                                       double beta = 10.0) {
  if (k == 0) throw Error(Errc::ConfigError, "eval_retriever: K must be at least 1");
  if (ranked.size() != gold.size()) {
    throw Error(Errc::LengthMismatch, "eval_retriever: rankings and labels differ in count");
  }
  std::size_t hits = 0, positives = 0, retrieved = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const std::size_t n = std::min(k, ranked[i].size());
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t id = ranked[i][j];
      if (id < gold[i].bits.size() && gold[i].bits[id]) ++hits;
    }
    retrieved += n;
    positives += gold[i].popcount();
  }
  RetrievalMetrics m;
  m.recall = positives ? static_cast<double>(hits) / static_cast<double>(positives) : 0.0;
  m.precision = retrieved ? static_cast<double>(hits) / static_cast<double>(retrieved) : 0.0;
  m.f_beta = f_beta(m.precision, m.recall, beta);
  return m;
}

}  // namespace logicsolver::retriever
