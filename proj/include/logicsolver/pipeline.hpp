#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "logicsolver/corpus.hpp"
#include "logicsolver/error.hpp"
#include "logicsolver/expr.hpp"
#include "logicsolver/logic.hpp"
#include "logicsolver/logicgen.hpp"
#include "logicsolver/metrics.hpp"
#include "logicsolver/nn/layers.hpp"
#include "logicsolver/nn/optim.hpp"
#include "logicsolver/retriever.hpp"
#include "logicsolver/rng.hpp"
#include "logicsolver/solver.hpp"

namespace logicsolver::pipeline {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 32;
  double lr = 1e-4;          // decoder-side and scoring parameters
  double encoder_lr = 1e-5;  // text encoders
  double weight_decay = 1e-5;
  std::uint64_t seed = 1;
  // Stop once the stage's training metric reaches this value (0 disables).
  double target = 0.0;
  std::size_t eval_every = 5;

  nlohmann::ordered_json to_json() const {
    return {{"epochs", epochs}, {"batch", batch},     {"lr", lr},         {"encoder_lr", encoder_lr},
            {"weight_decay", weight_decay}, {"seed", seed}, {"target", target}, {"eval_every", eval_every}};
  }
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig c) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.encoder_lr = j.value("encoder_lr", c.encoder_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.target = j.value("target", c.target);
    c.eval_every = j.value("eval_every", c.eval_every);
    return c;
  }
  void validate() const {
    if (batch == 0) throw Error(Errc::ConfigError, "batch size must be at least 1");
    if (lr < 0 || encoder_lr < 0 || weight_decay < 0) throw Error(Errc::ConfigError, "negative optimizer setting");
    if (eval_every == 0) throw Error(Errc::ConfigError, "eval_every must be at least 1");
  }
};

/// Default optimiser settings per stage.
inline TrainConfig retriever_defaults() {
  TrainConfig c;
  c.epochs = 20;
  c.lr = 1e-5;
  return c;
}
inline TrainConfig solver_defaults() { return TrainConfig{}; }
inline TrainConfig logicgen_defaults() {
  TrainConfig c;
  c.lr = 1e-5;
  return c;
}

using Logger = std::function<void(const std::string&)>;

struct TrainSummary {
  std::size_t epochs_run = 0;
  double final_loss = 0.0;
  std::optional<double> final_metric;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j{{"epochs_run", epochs_run}, {"final_loss", final_loss}};
    if (final_metric) j["final_metric"] = *final_metric;
    return j;
  }
};

namespace detail {

inline std::function<double(const std::string&)> lr_groups(double lr, double encoder_lr) {
  return [lr, encoder_lr](const std::string& name) {
    return name.find(".encoder.") != std::string::npos ? encoder_lr : lr;
  };
}

/// Runs minibatch epochs: `batch_loss` builds the summed loss of a batch.
/// `metric` (if given) is checked every eval_every epochs against target.
inline TrainSummary run_epochs(nn::ParamStore& store, std::size_t n, const TrainConfig& tc, Rng& rng,
                               const std::function<nn::Tensor(const std::vector<std::size_t>&)>& batch_loss,
                               const std::function<double()>& metric, const std::string& stage, const Logger& log) {
  tc.validate();
  nn::AdamState adam;
  TrainSummary s;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double scale = nn::lr_schedule(epoch, 1.0);
    auto lr_of = lr_groups(tc.lr * scale, tc.encoder_lr * scale);
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch) {
      const std::size_t end = std::min(n, start + tc.batch);
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      nn::Tensor loss = nn::scale(batch_loss(batch), 1.0 / static_cast<double>(batch.size()));
      total += loss.item() * static_cast<double>(batch.size());
      nn::backward(loss);
      nn::adam_step(store, adam, lr_of, tc.weight_decay);
    }
    s.epochs_run = epoch + 1;
    s.final_loss = n ? total / static_cast<double>(n) : 0.0;
    const bool check = metric && ((epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs);
    if (check) s.final_metric = metric();
    if (log) {
      std::string line = stage + " epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(s.final_loss);
      if (check) line += " metric " + std::to_string(*s.final_metric);
      log(line);
    }
    if (check && tc.target > 0.0 && *s.final_metric >= tc.target) break;
  }
  return s;
}

inline void add_tokens(std::vector<std::vector<std::string>>& docs, const logic::KnowledgeBase& kb) {
  for (const auto& f : kb.formulas()) docs.push_back(f.surface_tokens());
}

inline const std::string& kind_of(const nlohmann::json& manifest, const std::string& path) {
  if (!manifest.contains("kind") || !manifest["kind"].is_string()) {
    throw Error(Errc::SchemaError, path + ".json: manifest has no 'kind'");
  }
  return manifest["kind"].get_ref<const std::string&>();
}

inline void expect_kind(const nlohmann::json& manifest, const std::string& path, const std::string& kind) {
  if (kind_of(manifest, path) != kind) {
    throw Error(Errc::SchemaError, path + ": expected a " + kind + " checkpoint, found " + kind_of(manifest, path));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Retriever stage
// ---------------------------------------------------------------------------

inline nn::Vocabulary retriever_vocab(const std::vector<corpus::Problem>& problems, const logic::KnowledgeBase& kb) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& p : problems) docs.push_back(p.text_tokens);
  detail::add_tokens(docs, kb);
  return nn::Vocabulary::build(docs);
}

/// Micro recall of the top-K retrieved formulas against gold formula sets.
inline retriever::RetrievalMetrics retrieval_quality(const retriever::RetrieverModel& model,
                                                     const std::vector<corpus::Problem>& problems,
                                                     const logic::KnowledgeBase& kb, std::size_t k) {
  auto scores = model.score_many(problems, kb);
  std::vector<std::vector<std::size_t>> ranked;
  std::vector<logic::LogicLabelVector> gold;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    ranked.push_back(retriever::rank_all(scores[i]));
    gold.push_back(logic::to_label_vector(problems[i].logic, kb));
  }
  return retriever::eval_retriever(ranked, gold, k);
}

/// Early stopping (if enabled) watches top-3 recall on the training set.
inline std::pair<std::unique_ptr<retriever::RetrieverModel>, TrainSummary> train_retriever(
    const std::vector<corpus::Problem>& problems, const logic::KnowledgeBase& kb,
    const retriever::RetrieverConfig& config, const TrainConfig& tc, const Logger& log = {}) {
  if (problems.empty()) throw Error(Errc::EmptyInput, "no training problems");
  auto model = std::make_unique<retriever::RetrieverModel>(retriever_vocab(problems, kb), config, tc.seed);
  std::vector<logic::LogicLabelVector> labels;
  for (const auto& p : problems) labels.push_back(logic::to_label_vector(p.logic, kb));
  Rng rng(tc.seed + 1);
  auto batch_loss = [&](const std::vector<std::size_t>& batch) {
    auto prepared = model->prepare_formulas(model->formula_matrix(kb, true, &rng));
    std::vector<nn::Tensor> terms;
    for (std::size_t i : batch) {
      auto s = model->score(model->embed_text(problems[i].text_tokens, true, &rng), prepared);
      terms.push_back(retriever::retriever_loss(s, labels[i], config.printed_sign));
    }
    return nn::sum_scalars(terms);
  };
  auto metric = [&] { return retrieval_quality(*model, problems, kb, std::min<std::size_t>(3, kb.size())).recall; };
  auto summary = detail::run_epochs(model->store(), problems.size(), tc, rng, batch_loss, metric, "retriever", log);
  return {std::move(model), summary};
}

inline void save_retriever(const std::string& path, const retriever::RetrieverModel& model, const TrainConfig& tc,
                           const TrainSummary& summary, nlohmann::ordered_json command = {}) {
  nlohmann::ordered_json m;
  m["kind"] = "retriever";
  m["seed"] = tc.seed;
  m["config"] = model.config().to_json();
  m["train"] = tc.to_json();
  m["summary"] = summary.to_json();
  m["command"] = std::move(command);
  m["vocab"] = model.vocab().to_json();
  nn::save_checkpoint(path, model.store(), std::move(m));
}

inline std::unique_ptr<retriever::RetrieverModel> load_retriever(const std::string& path) {
  auto m = nn::load_manifest(path);
  detail::expect_kind(m, path, "retriever");
  auto model = std::make_unique<retriever::RetrieverModel>(
      nn::Vocabulary::from_json(m.at("vocab")), retriever::RetrieverConfig::from_json(m.at("config")),
      m.at("seed").get<std::uint64_t>());
  nn::restore_tensors(model->store(), nn::deserialize_tensors(nn::read_file(path)));
  return model;
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

/// Selected formula ids per problem. Random selection is seeded per problem
/// id so a problem always receives the same prompt.
inline std::vector<std::vector<std::size_t>> select_prompts(const std::vector<corpus::Problem>& problems,
                                                            const logic::KnowledgeBase& kb,
                                                            const retriever::PromptConfig& prompt,
                                                            const retriever::RetrieverModel* model) {
  std::vector<std::vector<std::size_t>> out;
  if (prompt.k == 0) return std::vector<std::vector<std::size_t>>(problems.size());
  if (prompt.selection == retriever::Selection::Random) {
    for (const auto& p : problems) {
      Rng rng(prompt.seed ^ fnv1a(p.id));
      out.push_back(retriever::random_selection(kb.size(), prompt.k, rng));
    }
    return out;
  }
  if (!model) throw Error(Errc::ConfigError, "retrieved prompts need a retriever checkpoint");
  for (const auto& s : model->score_many(problems, kb)) out.push_back(retriever::top_k(s, prompt.k));
  return out;
}

inline std::vector<std::vector<std::string>> build_prompts(const std::vector<corpus::Problem>& problems,
                                                           const std::vector<std::vector<std::size_t>>& selected,
                                                           const logic::KnowledgeBase& kb,
                                                           retriever::Placement placement) {
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    out.push_back(retriever::assemble_prompt(problems[i].text_tokens, selected[i], kb, placement));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Solver stage
// ---------------------------------------------------------------------------

inline double solver_answer_accuracy(const solver::SolverModel& model, const std::vector<corpus::Problem>& problems,
                                     const std::vector<std::vector<std::string>>& prompts) {
  if (problems.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    nn::NoGradGuard guard;
    auto ctx = model.prepare(model.encode(prompts[i], problems[i].numbers.size()));
    auto h = model.decode_greedy(ctx, model.config().max_len);
    metrics::Prediction pred{problems[i].id, expr::tokens_to_text(h.tokens), std::nullopt, h.truncated};
    correct += metrics::answer_correct(pred, problems[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(problems.size());
}

/// Early stopping (if enabled) watches greedy answer accuracy on the
/// training set.
inline std::pair<std::unique_ptr<solver::SolverModel>, TrainSummary> train_solver(
    const std::vector<corpus::Problem>& problems, const std::vector<std::vector<std::string>>& prompts,
    const logic::KnowledgeBase& kb, solver::SolverConfig config, const TrainConfig& tc, const Logger& log = {}) {
  if (problems.empty()) throw Error(Errc::EmptyInput, "no training problems");
  std::vector<std::vector<std::string>> docs = prompts;
  detail::add_tokens(docs, kb);
  std::vector<expr::Tree> gold;
  std::size_t max_size = 1;
  for (const auto& p : problems) {
    gold.push_back(p.gold_tree());
    max_size = std::max(max_size, p.gold_prefix.size());
  }
  if (config.max_len == 0) config.max_len = solver::default_max_len(max_size);
  auto model = std::make_unique<solver::SolverModel>(nn::Vocabulary::build(docs), config, tc.seed);
  for (const auto& p : problems) {
    for (const auto& t : p.gold_prefix) model->token_index(t);
  }
  Rng rng(tc.seed + 1);
  auto batch_loss = [&](const std::vector<std::size_t>& batch) {
    std::vector<nn::Tensor> terms;
    for (std::size_t i : batch) {
      auto ctx = model->prepare(model->encode(prompts[i], problems[i].numbers.size(), true, &rng));
      terms.push_back(model->solver_loss(ctx, gold[i]).first);
    }
    return nn::sum_scalars(terms);
  };
  auto metric = [&] { return solver_answer_accuracy(*model, problems, prompts); };
  auto summary = detail::run_epochs(model->store(), problems.size(), tc, rng, batch_loss, metric, "solver", log);
  return {std::move(model), summary};
}

inline void save_solver(const std::string& path, const solver::SolverModel& model, const TrainConfig& tc,
                        const TrainSummary& summary, const retriever::PromptConfig& prompt,
                        const std::string& retriever_ckpt, nlohmann::ordered_json command = {}) {
  nlohmann::ordered_json m;
  m["kind"] = "solver";
  m["seed"] = tc.seed;
  m["config"] = model.config().to_json();
  m["prompt"] = prompt.to_json();
  m["retriever_ckpt"] = retriever_ckpt;
  m["train"] = tc.to_json();
  m["summary"] = summary.to_json();
  m["command"] = std::move(command);
  m["vocab"] = model.vocab().to_json();
  nn::save_checkpoint(path, model.store(), std::move(m));
}

struct LoadedSolver {
  std::unique_ptr<solver::SolverModel> model;
  retriever::PromptConfig prompt;
  std::string retriever_ckpt;
};

inline LoadedSolver load_solver(const std::string& path) {
  auto m = nn::load_manifest(path);
  detail::expect_kind(m, path, "solver");
  LoadedSolver out;
  out.model = std::make_unique<solver::SolverModel>(nn::Vocabulary::from_json(m.at("vocab")),
                                                    solver::SolverConfig::from_json(m.at("config")),
                                                    m.at("seed").get<std::uint64_t>());
  nn::restore_tensors(out.model->store(), nn::deserialize_tensors(nn::read_file(path)));
  out.prompt = retriever::PromptConfig::from_json(m.at("prompt"));
  out.retriever_ckpt = m.value("retriever_ckpt", std::string());
  return out;
}

// ---------------------------------------------------------------------------
// Logic generator stage
// ---------------------------------------------------------------------------

/// Teacher-forced goal vectors at the gold tree's operator nodes.
inline std::vector<nn::Tensor> gold_operator_goals(const solver::SolverModel& model, const corpus::Problem& p,
                                                   const std::vector<std::string>& prompt) {
  nn::NoGradGuard guard;
  auto ctx = model.prepare(model.encode(prompt, p.numbers.size()));
  auto goals = model.solver_loss(ctx, p.gold_tree()).second;
  std::vector<nn::Tensor> detached;
  for (const auto& g : logicgen::operator_positions(p.gold_prefix, goals)) detached.push_back(g.detach());
  return detached;
}

/// Problems whose greedy decode reproduces the gold prefix exactly.
inline std::vector<std::size_t> fitted_problems(const solver::SolverModel& model,
                                                const std::vector<corpus::Problem>& problems,
                                                const std::vector<std::vector<std::string>>& prompts) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    nn::NoGradGuard guard;
    auto ctx = model.prepare(model.encode(prompts[i], problems[i].numbers.size()));
    auto h = model.decode_greedy(ctx, model.config().max_len);
    if (!h.truncated && h.tokens == problems[i].gold_prefix) out.push_back(i);
  }
  return out;
}

inline nn::Vocabulary logicgen_vocab(const std::vector<corpus::Problem>& problems, const logic::KnowledgeBase& kb) {
  return retriever_vocab(problems, kb);
}

/// Fraction of problems whose every operator gets its gold formula, using
/// teacher-forced goals on the gold trees.
inline double logic_accuracy_on_gold(const logicgen::LogicGenModel& model,
                                     const std::vector<corpus::Problem>& problems,
                                     const std::vector<std::vector<nn::Tensor>>& goals,
                                     const logic::KnowledgeBase& kb) {
  if (problems.empty()) return 0.0;
  nn::NoGradGuard guard;
  const nn::Tensor formulas = model.formula_matrix(kb);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto ctx = model.prepare(model.encode_problem(problems[i].text_tokens), formulas);
    correct += model.select_all(goals[i], ctx) == problems[i].logic.formula_ids;
  }
  return static_cast<double>(correct) / static_cast<double>(problems.size());
}

struct LogicGenTrainResult {
  std::unique_ptr<logicgen::LogicGenModel> model;
  TrainSummary summary;
  std::size_t problems_used = 0;
};

/// Trains on teacher-forced goals of fitted problems, or of every problem
/// when `all_gold` is set.
inline LogicGenTrainResult train_logicgen(const std::vector<corpus::Problem>& problems,
                                          const std::vector<std::vector<std::string>>& prompts,
                                          const solver::SolverModel& solver_model, const logic::KnowledgeBase& kb,
                                          logicgen::LogicGenConfig config, const TrainConfig& tc, bool all_gold,
                                          const Logger& log = {}) {
  std::vector<std::size_t> chosen;
  if (all_gold) {
    for (std::size_t i = 0; i < problems.size(); ++i) chosen.push_back(i);
  } else {
    chosen = fitted_problems(solver_model, problems, prompts);
  }
  if (chosen.empty()) throw Error(Errc::EmptyInput, "no problems available for logic generator training");
  config.hidden = solver_model.config().hidden;
  std::vector<corpus::Problem> used;
  std::vector<std::vector<nn::Tensor>> goals;
  for (std::size_t i : chosen) {
    used.push_back(problems[i]);
    goals.push_back(gold_operator_goals(solver_model, problems[i], prompts[i]));
  }
  LogicGenTrainResult out;
  out.problems_used = used.size();
  out.model = std::make_unique<logicgen::LogicGenModel>(logicgen_vocab(problems, kb), config, tc.seed);
  auto& model = *out.model;
  Rng rng(tc.seed + 1);
  auto batch_loss = [&](const std::vector<std::size_t>& batch) {
    const nn::Tensor formulas = model.formula_matrix(kb, true, &rng);
    std::vector<nn::Tensor> terms;
    for (std::size_t i : batch) {
      auto ctx = model.prepare(model.encode_problem(used[i].text_tokens, true, &rng), formulas);
      terms.push_back(model.logicgen_loss(goals[i], used[i].logic.formula_ids, ctx));
    }
    return nn::sum_scalars(terms);
  };
  auto metric = [&] { return logic_accuracy_on_gold(model, used, goals, kb); };
  out.summary = detail::run_epochs(model.store(), used.size(), tc, rng, batch_loss, metric, "logicgen", log);
  return out;
}

inline void save_logicgen(const std::string& path, const logicgen::LogicGenModel& model, const TrainConfig& tc,
                          const TrainSummary& summary, const std::string& solver_ckpt, bool all_gold,
                          std::size_t problems_used, nlohmann::ordered_json command = {}) {
  nlohmann::ordered_json m;
  m["kind"] = "logicgen";
  m["seed"] = tc.seed;
  m["config"] = model.config().to_json();
  m["solver_ckpt"] = solver_ckpt;
  m["all_gold"] = all_gold;
  m["problems_used"] = problems_used;
  m["train"] = tc.to_json();
  m["summary"] = summary.to_json();
  m["command"] = std::move(command);
  m["vocab"] = model.vocab().to_json();
  nn::save_checkpoint(path, model.store(), std::move(m));
}

inline std::unique_ptr<logicgen::LogicGenModel> load_logicgen(const std::string& path) {
  auto m = nn::load_manifest(path);
  detail::expect_kind(m, path, "logicgen");
  auto model = std::make_unique<logicgen::LogicGenModel>(nn::Vocabulary::from_json(m.at("vocab")),
                                                         logicgen::LogicGenConfig::from_json(m.at("config")),
                                                         m.at("seed").get<std::uint64_t>());
  nn::restore_tensors(model->store(), nn::deserialize_tensors(nn::read_file(path)));
  return model;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct SolveResult {
  std::string problem_id;
  std::vector<std::size_t> prompt_ids;
  std::vector<expr::Token> prefix;
  bool truncated = false;
  double log_prob = 0.0;
  std::optional<Rational> value;
  std::optional<std::vector<std::size_t>> logic;
  std::vector<logicgen::ExplanationLine> explanation;

  metrics::Prediction prediction() const {
    return {problem_id, expr::tokens_to_text(prefix), logic, truncated};
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["id"] = problem_id;
    j["prompt_ids"] = prompt_ids;
    j["prefix"] = expr::tokens_to_text(prefix);
    j["truncated"] = truncated;
    std::optional<expr::Tree> tree;
    if (!truncated) {
      try {
        tree = expr::parse_prefix(prefix);
      } catch (const Error&) {
      }
    }
    j["infix"] = tree ? nlohmann::ordered_json(expr::print_infix(*tree)) : nlohmann::ordered_json(nullptr);
    j["value"] = value ? nlohmann::ordered_json(format_rational(*value)) : nlohmann::ordered_json(nullptr);
    if (logic) j["logic"] = *logic;
    auto lines = nlohmann::ordered_json::array();
    for (const auto& l : explanation) lines.push_back(l.to_json());
    j["explanations"] = std::move(lines);
    return j;
  }
};

class Solver {
 public:
  Solver(logic::KnowledgeBase kb, LoadedSolver solver, std::unique_ptr<retriever::RetrieverModel> retriever,
         std::unique_ptr<logicgen::LogicGenModel> logic_model)
      : kb_(std::move(kb)),
        solver_(std::move(solver)),
        retriever_(std::move(retriever)),
        logicgen_(std::move(logic_model)) {
    if (logicgen_) formulas_ = logicgen_->formula_matrix(kb_);
  }

  /// Loads the retriever named by the solver manifest when one is needed.
  static Solver load(logic::KnowledgeBase kb, const std::string& solver_ckpt,
                     const std::optional<std::string>& logicgen_ckpt,
                     const std::optional<std::string>& retriever_override = std::nullopt) {
    LoadedSolver s = load_solver(solver_ckpt);
    std::unique_ptr<retriever::RetrieverModel> r;
    if (s.prompt.k > 0 && s.prompt.selection == retriever::Selection::Retrieved) {
      const std::string path = retriever_override.value_or(s.retriever_ckpt);
      if (path.empty()) throw Error(Errc::ConfigError, "solver checkpoint needs a retriever checkpoint");
      r = load_retriever(path);
    }
    std::unique_ptr<logicgen::LogicGenModel> lg;
    if (logicgen_ckpt) lg = load_logicgen(*logicgen_ckpt);
    return Solver(std::move(kb), std::move(s), std::move(r), std::move(lg));
  }

  std::vector<SolveResult> solve_all(const std::vector<corpus::Problem>& problems, std::size_t beam) const {
    auto selected = select_prompts(problems, kb_, solver_.prompt, retriever_.get());
    auto prompts = build_prompts(problems, selected, kb_, solver_.prompt.placement);
    std::vector<SolveResult> out;
    for (std::size_t i = 0; i < problems.size(); ++i) out.push_back(solve_one(problems[i], selected[i], prompts[i], beam));
    return out;
  }

  const logic::KnowledgeBase& kb() const { return kb_; }
  const solver::SolverModel& solver_model() const { return *solver_.model; }

 private:
  SolveResult solve_one(const corpus::Problem& p, const std::vector<std::size_t>& selected,
                        const std::vector<std::string>& prompt, std::size_t beam) const {
    nn::NoGradGuard guard;
    const auto& model = *solver_.model;
    auto ctx = model.prepare(model.encode(prompt, p.numbers.size()));
    solver::Hypothesis h = beam <= 1 ? model.decode_greedy(ctx, model.config().max_len)
                                     : model.decode_beam(ctx, beam, model.config().max_len).front();
    SolveResult r;
    r.problem_id = p.id;
    r.prompt_ids = selected;
    r.prefix = h.tokens;
    r.truncated = h.truncated;
    r.log_prob = h.log_prob;
    if (h.truncated) return r;
    expr::Tree tree = expr::parse_prefix(h.tokens);
    try {
      r.value = expr::evaluate(tree, p.numbers);
    } catch (const Error&) {
    }
    if (logicgen_) {
      auto lctx = logicgen_->prepare(logicgen_->encode_problem(p.text_tokens), formulas_);
      auto ids = logicgen_->select_all(logicgen::operator_positions(h.tokens, h.goals), lctx);
      r.explanation = logicgen::explain(tree, ids, kb_);
      r.logic = std::move(ids);
    }
    return r;
  }

  logic::KnowledgeBase kb_;
  LoadedSolver solver_;
  std::unique_ptr<retriever::RetrieverModel> retriever_;
  std::unique_ptr<logicgen::LogicGenModel> logicgen_;
  nn::Tensor formulas_;
};

// ---------------------------------------------------------------------------
// Prompt ablation
// ---------------------------------------------------------------------------

struct AblationConfig {
  std::vector<std::size_t> ks{1, 2, 3, 4};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  retriever::RetrieverConfig retriever;
  solver::SolverConfig solver;
  TrainConfig retriever_train = retriever_defaults();
  TrainConfig solver_train = solver_defaults();
  std::size_t beam = 1;

  nlohmann::ordered_json to_json() const {
    return {{"K", ks},
            {"seeds", seeds},
            {"retriever", retriever.to_json()},
            {"solver", solver.to_json()},
            {"retriever_train", retriever_train.to_json()},
            {"solver_train", solver_train.to_json()},
            {"beam", beam}};
  }
};

struct AblationCell {
  std::string strategy;
  std::size_t k = 0;
  std::vector<double> per_seed;
  double mean = 0.0;
};

struct AblationReport {
  std::vector<AblationCell> cells;  // strategy-major, then K
  std::map<std::string, double> strategy_mean;
  nlohmann::ordered_json config;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["config"] = config;
    nlohmann::ordered_json grid = nlohmann::ordered_json::object();
    for (const auto& c : cells) {
      grid[c.strategy][std::to_string(c.k)] = {{"answer_acc", c.mean}, {"per_seed", c.per_seed}};
    }
    j["grid"] = std::move(grid);
    nlohmann::ordered_json means = nlohmann::ordered_json::object();
    for (const auto& s : {"random_selection", "retrieve_ahead", "retrieve_behind"}) means[s] = strategy_mean.at(s);
    j["strategy_mean"] = std::move(means);
    return j;
  }
};

/// Answer accuracy on `test` for random selection, retrieve+ahead and
/// retrieve+behind prompts at each K, averaged over seeds. One retriever is
/// trained per seed and shared by the retrieved strategies.
inline AblationReport ablate_prompts(const std::vector<corpus::Problem>& train, const std::vector<corpus::Problem>& test,
                                     const logic::KnowledgeBase& kb, const AblationConfig& cfg, const Logger& log = {}) {
  struct Strategy {
    const char* name;
    retriever::Selection selection;
    retriever::Placement placement;
  };
  const Strategy strategies[] = {{"random_selection", retriever::Selection::Random, retriever::Placement::Behind},
                                 {"retrieve_ahead", retriever::Selection::Retrieved, retriever::Placement::Ahead},
                                 {"retrieve_behind", retriever::Selection::Retrieved, retriever::Placement::Behind}};
  AblationReport report;
  report.config = cfg.to_json();
  for (const auto& s : strategies) {
    for (std::size_t k : cfg.ks) report.cells.push_back({s.name, k, {}, 0.0});
  }
  for (std::uint64_t seed : cfg.seeds) {
    TrainConfig rt = cfg.retriever_train;
    rt.seed = seed;
    auto [retr, _] = train_retriever(train, kb, cfg.retriever, rt);
    std::size_t cell = 0;
    for (const auto& s : strategies) {
      for (std::size_t k : cfg.ks) {
        retriever::PromptConfig pc{k, s.placement, s.selection, seed};
        auto train_prompts = build_prompts(train, select_prompts(train, kb, pc, retr.get()), kb, pc.placement);
        auto test_sel = select_prompts(test, kb, pc, retr.get());
        auto test_prompts = build_prompts(test, test_sel, kb, pc.placement);
        TrainConfig st = cfg.solver_train;
        st.seed = seed;
        auto [model, summary] = train_solver(train, train_prompts, kb, cfg.solver, st);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
          nn::NoGradGuard guard;
          auto ctx = model->prepare(model->encode(test_prompts[i], test[i].numbers.size()));
          auto h = cfg.beam <= 1 ? model->decode_greedy(ctx, model->config().max_len)
                                 : model->decode_beam(ctx, cfg.beam, model->config().max_len).front();
          correct += metrics::answer_correct({test[i].id, expr::tokens_to_text(h.tokens), std::nullopt, h.truncated},
                                             test[i]);
        }
        const double acc = test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
        report.cells[cell++].per_seed.push_back(acc);
        if (log) {
          log(std::string(s.name) + " K=" + std::to_string(k) + " seed " + std::to_string(seed) + " answer_acc " +
              std::to_string(acc));
        }
      }
    }
  }
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (auto& c : report.cells) {
    double t = 0.0;
    for (double v : c.per_seed) t += v;
    c.mean = c.per_seed.empty() ? 0.0 : t / static_cast<double>(c.per_seed.size());
    sums[c.strategy].first += c.mean;
    ++sums[c.strategy].second;
  }
  for (const auto& [name, s] : sums) report.strategy_mean[name] = s.first / static_cast<double>(s.second);
  return report;
}

}  // namespace logicsolver::pipeline
