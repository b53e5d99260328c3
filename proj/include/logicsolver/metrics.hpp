#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "logicsolver/corpus.hpp"
#include "logicsolver/error.hpp"
#include "logicsolver/expr.hpp"

namespace logicsolver::metrics {

struct Prediction {
  std::string problem_id;
  std::string prefix;  // prefix text as emitted; may be malformed
  std::optional<std::vector<std::size_t>> logic;
  bool truncated = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["id"] = problem_id;
    j["prefix"] = prefix;
    if (logic) j["logic"] = *logic;
    j["truncated"] = truncated;
    return j;
  }
  static Prediction from_json(const nlohmann::json& j) {
    Prediction p;
    p.problem_id = j.at("id").get<std::string>();
    p.prefix = j.value("prefix", std::string());
    if (j.contains("logic") && !j["logic"].is_null()) p.logic = j["logic"].get<std::vector<std::size_t>>();
    p.truncated = j.value("truncated", false);
    return p;
  }
};

namespace detail {

inline std::optional<expr::Tree> parsed(const Prediction& pred) {
  if (pred.truncated) return std::nullopt;
  try {
    return expr::parse_prefix(pred.prefix);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline std::optional<expr::Tree> canonical(const expr::Tree& t) {
  try {
    return expr::canonicalize(t);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// |value - answer| <= 1e-4 * max(1, |answer|); false on any failure.
inline bool answer_correct(const Prediction& pred, const corpus::Problem& problem) {
  auto tree = detail::parsed(pred);
  if (!tree) return false;
  try {
    const Rational v = expr::evaluate(*tree, problem.numbers);
    const Rational a = abs(problem.answer);
    const Rational tol = Rational(1, 10000) * (a > 1 ? a : Rational(1));
    return abs(v - problem.answer) <= tol;
  } catch (const Error&) {
    return false;
  }
}

/// Member of the solution set, literally or after canonicalisation.
inline bool formula_correct(const Prediction& pred, const corpus::Problem& problem) {
  if (!problem.solution_set) {
    throw Error(Errc::MissingSolutionSet, "problem '" + problem.id + "' has no solution set");
  }
  auto tree = detail::parsed(pred);
  if (!tree) return false;
  const auto tokens = expr::print_prefix(*tree);
  if (problem.solution_set->contains(tokens)) return true;
  auto canon = detail::canonical(*tree);
  if (!canon) return false;
  for (const auto& member : problem.solution_set->members) {
    auto m = detail::canonical(expr::parse_prefix(member));
    if (m && *m == *canon) return true;
  }
  return false;
}

/// Exact gold prefix and exact formula-id sequence.
inline bool logic_correct(const Prediction& pred, const corpus::Problem& problem) {
  auto tree = detail::parsed(pred);
  if (!tree || !pred.logic) return false;
  return expr::print_prefix(*tree) == problem.gold_prefix && *pred.logic == problem.logic.formula_ids;
}

struct Bucket {
  std::size_t count = 0;
  std::size_t answer = 0;
  std::size_t formula = 0;
  std::size_t logic = 0;

  nlohmann::ordered_json to_json() const {
    auto frac = [&](std::size_t k) { return count ? static_cast<double>(k) / static_cast<double>(count) : 0.0; };
    return {{"count", count},
            {"answer_acc", frac(answer)},
            {"formula_acc", frac(formula)},
            {"logic_acc", frac(logic)}};
  }
};

struct ProblemOutcome {
  bool answer = false;
  bool formula = false;
  bool logic = false;
};

struct EvalReport {
  Bucket total;
  double answer_acc = 0.0;
  double formula_acc = 0.0;
  double logic_acc = 0.0;
  std::size_t missing_predictions = 0;
  std::map<std::size_t, Bucket> per_size;     // shortest solution size
  std::map<std::size_t, Bucket> per_formula;  // problems using the formula
  std::map<std::string, ProblemOutcome> outcomes;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["answer_acc"] = answer_acc;
    j["formula_acc"] = formula_acc;
    j["logic_acc"] = logic_acc;
    j["counts"] = {{"problems", total.count},
                   {"answer_correct", total.answer},
                   {"formula_correct", total.formula},
                   {"logic_correct", total.logic},
                   {"missing_predictions", missing_predictions}};
    nlohmann::ordered_json sizes = nlohmann::ordered_json::object();
    for (const auto& [k, b] : per_size) sizes[std::to_string(k)] = b.to_json();
    j["per_size"] = std::move(sizes);
    nlohmann::ordered_json formulas = nlohmann::ordered_json::object();
    for (const auto& [k, b] : per_formula) formulas[std::to_string(k)] = b.to_json();
    j["per_formula"] = std::move(formulas);
    return j;
  }

  /// "table,key,count,answer_acc,formula_acc,logic_acc" rows.
  std::string to_csv() const {
    std::ostringstream out;
    out << "table,key,count,answer_acc,formula_acc,logic_acc\n";
    auto rows = [&](const char* table, const std::map<std::size_t, Bucket>& m) {
      for (const auto& [k, b] : m) {
        auto j = b.to_json();
        out << table << ',' << k << ',' << b.count << ',' << j["answer_acc"].get<double>() << ','
            << j["formula_acc"].get<double>() << ',' << j["logic_acc"].get<double>() << '\n';
      }
    };
    rows("size", per_size);
    rows("formula", per_formula);
    return out.str();
  }
};

/// Scores one prediction per problem; problems without a prediction count
/// as wrong on all three metrics. A problem without a solution set is
/// judged against the commutative expansion of its gold tree.
inline EvalReport evaluate_all(const std::vector<Prediction>& preds, const std::vector<corpus::Problem>& problems) {
  std::map<std::string, const corpus::Problem*> by_id;
  for (const auto& p : problems) by_id[p.id] = &p;
  std::map<std::string, const Prediction*> pred_by_id;
  for (const auto& pr : preds) {
    if (!by_id.count(pr.problem_id)) {
      throw Error(Errc::IdMismatch, "prediction for unknown problem '" + pr.problem_id + "'");
    }
    if (!pred_by_id.emplace(pr.problem_id, &pr).second) {
      throw Error(Errc::IdMismatch, "duplicate prediction for problem '" + pr.problem_id + "'");
    }
  }
  EvalReport r;
  for (const auto& p : problems) {
    ProblemOutcome o;
    auto it = pred_by_id.find(p.id);
    if (it == pred_by_id.end()) {
      ++r.missing_predictions;
    } else {
      const Prediction& pred = *it->second;
      o.answer = answer_correct(pred, p);
      if (p.solution_set) {
        o.formula = formula_correct(pred, p);
      } else {
        corpus::Problem expanded = p;
        expanded.solution_set = expr::expand_solution_set(p.gold_tree());
        o.formula = formula_correct(pred, expanded);
      }
      o.logic = logic_correct(pred, p);
    }
    r.outcomes[p.id] = o;
    auto tally = [&](Bucket& b) {
      ++b.count;
      b.answer += o.answer;
      b.formula += o.formula;
      b.logic += o.logic;
    };
    tally(r.total);
    tally(r.per_size[corpus::shortest_solution_size(p)]);
    std::set<std::size_t> used(p.logic.formula_ids.begin(), p.logic.formula_ids.end());
    for (std::size_t id : used) tally(r.per_formula[id]);
  }
  if (r.total.count) {
    const double n = static_cast<double>(r.total.count);
    r.answer_acc = static_cast<double>(r.total.answer) / n;
    r.formula_acc = static_cast<double>(r.total.formula) / n;
    r.logic_acc = static_cast<double>(r.total.logic) / n;
  }
  return r;
}

inline std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open predictions '" + path + "'");
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Prediction::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::SchemaError, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void save_predictions(const std::string& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write predictions '" + path + "'");
  for (const auto& p : preds) out << p.to_json().dump() << '\n';
}

}  // namespace logicsolver::metrics
