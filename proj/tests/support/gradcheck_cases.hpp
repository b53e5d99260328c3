#pragma once

#include <functional>
#include <string>
#include <vector>

#include "support/test_support.hpp"

namespace testsupport {

struct GradCase {
  std::string name;
  std::function<GradcheckResult()> run;
};

namespace detail {

namespace nn = logicsolver::nn;
using nn::Tensor;

// Reduces any tensor to a scalar with fixed random weights so every output
// entry contributes a distinct coefficient.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
  logicsolver::Rng rng(seed);
  std::vector<double> w(t.size());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return nn::sum(nn::mul(t, Tensor::from_values(t.shape(), std::move(w))));
}

inline std::vector<Tensor> params(logicsolver::nn::ParamStore& store) {
  std::vector<Tensor> out;
  for (auto& [_, t] : store.entries()) out.push_back(t);
  return out;
}

inline logicsolver::corpus::Problem tiny_problem() {
  logicsolver::corpus::Problem p;
  p.id = "tiny";
  p.text_tokens = {"the", "price", "is", "N0", ".", "the", "quantity", "is", "N1", ".", "expenses", "?"};
  p.numbers = {12, 5};
  p.gold_prefix = logicsolver::expr::tokens_from_text("* N0 + N1 1");
  p.answer = 72;
  p.logic.formula_ids = {21, 0};
  return p;
}

}  // namespace detail

/// Every differentiable operation and composite loss used by the models.
inline std::vector<GradCase> gradcheck_cases() {
  namespace ls = logicsolver;
  namespace nn = ls::nn;
  using nn::Tensor;
  using detail::weighted_sum;
  std::vector<GradCase> cases;

  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> f, double lo = -1.0, double hi = 1.0) {
    cases.push_back({name, [f, lo, hi] {
                       ls::Rng rng(11);
                       Tensor a = random_tensor({3, 4}, rng, lo, hi);
                       return gradcheck([&] { return weighted_sum(f(a), 1); }, {a});
                     }});
  };
  auto binary = [&](std::string name, nn::Shape sa, nn::Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> f) {
    cases.push_back({name, [f, sa, sb] {
                       ls::Rng rng(12);
                       Tensor a = random_tensor(sa, rng);
                       Tensor b = random_tensor(sb, rng);
                       return gradcheck([&] { return weighted_sum(f(a, b), 2); }, {a, b});
                     }});
  };

  binary("matmul", {3, 4}, {4, 2}, [](auto& a, auto& b) { return nn::matmul(a, b); });
  binary("matmul_vector", {3, 4}, {4}, [](auto& a, auto& b) { return nn::matmul(a, b); });
  binary("matmul_row_vector", {4}, {4, 3}, [](auto& a, auto& b) { return nn::matmul(a, b); });
  binary("matmul_nt", {3, 4}, {5, 4}, [](auto& a, auto& b) { return nn::matmul_nt(a, b); });
  binary("dot", {5}, {5}, [](auto& a, auto& b) { return nn::dot(a, b); });
  binary("add", {3, 4}, {3, 4}, [](auto& a, auto& b) { return nn::add(a, b); });
  binary("add_row_broadcast", {3, 4}, {4}, [](auto& a, auto& b) { return nn::add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](auto& a, auto& b) { return nn::sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](auto& a, auto& b) { return nn::mul(a, b); });
  binary("concat", {3}, {4}, [](auto& a, auto& b) { return nn::concat({a, b, a}); });
  binary("stack_rows", {4}, {4}, [](auto& a, auto& b) { return nn::stack_rows({a, b, a}); });
  binary("stack_blocks", {2, 3}, {3}, [](auto& a, auto& b) { return nn::stack_rows({a, b}); });

  unary("affine", [](auto& a) { return nn::affine(a, -1.7, 0.3); });
  unary("tanh", [](auto& a) { return nn::tanh(a); }, -2.0, 2.0);
  unary("sigmoid", [](auto& a) { return nn::sigmoid(a); }, -3.0, 3.0);
  unary("exp", [](auto& a) { return nn::exp(a); });
  unary("log", [](auto& a) { return nn::log(a); }, 0.5, 2.0);
  unary("row", [](auto& a) { return nn::row(a, 1); });
  unary("slice_cols", [](auto& a) { return nn::slice_cols(a, 1, 3); });
  unary("slice", [](auto& a) { return nn::slice(nn::row(a, 2), 1, 4); });
  unary("gather", [](auto& a) { return nn::gather(nn::row(a, 0), {3, 0, 3, 1}); });
  unary("pick", [](auto& a) { return nn::pick(nn::row(a, 1), 2); });
  unary("embedding_lookup", [](auto& a) { return nn::embedding_lookup(a, {2, 0, 2}); });
  unary("sum", [](auto& a) { return nn::sum(nn::mul(a, a)); });
  unary("sum_scalars", [](auto& a) { return nn::sum_scalars({nn::pick(nn::row(a, 0), 1), nn::sum(a)}); });
  unary("mean_pool_rows", [](auto& a) { return nn::mean_pool(a, 0); });
  unary("mean_pool_cols", [](auto& a) { return nn::mean_pool(a, 1); });
  unary("softmax_axis0", [](auto& a) { return nn::softmax(a, 0); }, -2.0, 2.0);
  unary("softmax_axis1", [](auto& a) { return nn::softmax(a, 1); }, -2.0, 2.0);
  unary("softmax_vector", [](auto& a) { return nn::softmax(nn::row(a, 0)); }, -2.0, 2.0);
  unary("log_softmax", [](auto& a) { return nn::log_softmax(nn::row(a, 1)); }, -2.0, 2.0);
  unary("logsumexp", [](auto& a) { return nn::logsumexp(nn::row(a, 2)); }, -2.0, 2.0);
  unary("dropout_train", [](auto& a) {
    ls::Rng rng(5);
    return nn::dropout(a, 0.5, rng, true);
  });
  unary("dropout_eval", [](auto& a) {
    ls::Rng rng(5);
    return nn::dropout(a, 0.5, rng, false);
  });

  cases.push_back({"gru_gates", [] {
                     ls::Rng rng(13);
                     Tensor xp = random_tensor({9}, rng, -2.0, 2.0);
                     Tensor hp = random_tensor({9}, rng, -2.0, 2.0);
                     Tensor h = random_tensor({3}, rng);
                     return gradcheck([&] { return weighted_sum(nn::gru_gates(xp, hp, h), 3); }, {xp, hp, h});
                   }});

  cases.push_back({"text_encoder", [] {
                     ls::Rng rng(14);
                     nn::ParamStore store;
                     nn::TextEncoder enc(store, "enc", 6, 3, 0.5, rng);
                     const std::vector<std::size_t> ids{2, 4, 1, 5};
                     return gradcheck(
                         [&] {
                           ls::Rng drop(3);
                           return weighted_sum(enc.encode(ids, true, &drop), 4);
                         },
                         detail::params(store));
                   }});

  cases.push_back({"pair_scorer", [] {
                     ls::Rng rng(15);
                     nn::ParamStore store;
                     nn::PairScorer scorer(store, "s", 3, 4, 5, rng);
                     Tensor a = random_tensor({3}, rng);
                     Tensor b = random_tensor({6, 4}, rng);
                     auto inputs = detail::params(store);
                     inputs.push_back(a);
                     inputs.push_back(b);
                     return gradcheck([&] { return weighted_sum(scorer.scores(a, b), 5); }, inputs);
                   }});

  cases.push_back({"attention", [] {
                     ls::Rng rng(16);
                     nn::ParamStore store;
                     nn::AdditiveAttention att(store, "a", 3, 3, 4, rng);
                     Tensor q = random_tensor({3}, rng);
                     Tensor keys = random_tensor({5, 3}, rng);
                     auto inputs = detail::params(store);
                     inputs.push_back(q);
                     inputs.push_back(keys);
                     return gradcheck(
                         [&] {
                           auto [ctx, w] = att.attend(q, keys);
                           return nn::add(weighted_sum(ctx, 6), weighted_sum(w, 7));
                         },
                         inputs);
                   }});

  for (bool printed : {false, true}) {
    cases.push_back({printed ? "retriever_loss_printed_sign" : "retriever_loss", [printed] {
                       ls::Rng rng(17);
                       Tensor s = random_tensor({7}, rng, -2.0, 2.0);
                       ls::logic::LogicLabelVector labels{{1, 0, 0, 1, 0, 1, 0}};
                       return gradcheck([&] { return ls::retriever::retriever_loss(s, labels, printed); }, {s});
                     }});
  }

  cases.push_back({"retriever_model_loss", [] {
                     auto p = detail::tiny_problem();
                     const auto& kb = testsupport::kb();
                     std::vector<std::vector<std::string>> docs{p.text_tokens};
                     for (const auto& f : kb.formulas()) docs.push_back(f.surface_tokens());
                     ls::retriever::RetrieverConfig cfg;
                     cfg.hidden = 3;
                     ls::retriever::RetrieverModel model(nn::Vocabulary::build(docs), cfg, 3);
                     auto labels = ls::logic::to_label_vector(p.logic, kb);
                     return gradcheck(
                         [&] {
                           ls::Rng drop(4);
                           auto prepared = model.prepare_formulas(model.formula_matrix(kb, true, &drop));
                           auto s = model.score(model.embed_text(p.text_tokens, true, &drop), prepared);
                           return ls::retriever::retriever_loss(s, labels);
                         },
                         detail::params(model.store()));
                   }});

  cases.push_back({"solver_loss", [] {
                     auto p = detail::tiny_problem();
                     auto prompt = ls::retriever::assemble_prompt(p.text_tokens, {21, 0}, testsupport::kb(),
                                                                  ls::retriever::Placement::Behind);
                     ls::solver::SolverConfig cfg;
                     cfg.hidden = 3;
                     ls::solver::SolverModel model(nn::Vocabulary::build({prompt}), cfg, 5);
                     const auto gold = p.gold_tree();
                     return gradcheck(
                         [&] {
                           ls::Rng drop(6);
                           auto ctx = model.prepare(model.encode(prompt, p.numbers.size(), true, &drop));
                           auto [loss, goals] = model.solver_loss(ctx, gold);
                           return nn::add(loss, weighted_sum(goals.back(), 8));
                         },
                         detail::params(model.store()));
                   }});

  cases.push_back({"logicgen_loss", [] {
                     auto p = detail::tiny_problem();
                     const auto& kb = testsupport::kb();
                     std::vector<std::vector<std::string>> docs{p.text_tokens};
                     for (const auto& f : kb.formulas()) docs.push_back(f.surface_tokens());
                     ls::logicgen::LogicGenConfig cfg;
                     cfg.hidden = 3;
                     ls::logicgen::LogicGenModel model(nn::Vocabulary::build(docs), cfg, 7);
                     ls::Rng rng(8);
                     std::vector<Tensor> goals{random_tensor({3}, rng), random_tensor({3}, rng)};
                     auto inputs = detail::params(model.store());
                     inputs.insert(inputs.end(), goals.begin(), goals.end());
                     return gradcheck(
                         [&] {
                           ls::Rng drop(9);
                           auto ctx = model.prepare(model.encode_problem(p.text_tokens, true, &drop),
                                                    model.formula_matrix(kb, true, &drop));
                           return model.logicgen_loss(goals, p.logic.formula_ids, ctx);
                         },
                         inputs);
                   }});
  return cases;
}

}  // namespace testsupport
