#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/expr.hpp"
#include "logicsolver/logic.hpp"
#include "logicsolver/rational.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::corpus {

/// |computed - recorded| <= 1e-4 * max(1, |recorded|).
inline bool answers_match(const Rational& computed, const Rational& recorded) {
  const double c = to_double(computed);
  const double r = to_double(recorded);
  return std::abs(c - r) <= 1e-4 * std::max(1.0, std::abs(r));
}

inline bool is_slot_token(std::string_view w) {
  return w.size() >= 2 && w.front() == 'N' && detail::all_digits(w.substr(1));
}

inline std::size_t slot_index(std::string_view w) { return std::stoul(std::string(w.substr(1))); }

struct MappedText {
  std::vector<std::string> tokens;
  std::vector<Rational> numbers;
};

/// Lowercases, splits punctuation off words, and replaces every numeric
/// literal (integer, decimal, a/b, n%) with the next slot token N0, N1, ...
inline MappedText map_numbers(std::string_view raw) {
  MappedText out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.tokens.push_back(std::move(word));
    word.clear();
  };
  auto is_digit = [&](std::size_t i) {
    return i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]));
  };
  std::size_t i = 0;
  while (i < raw.size()) {
    const char c = raw[i];
    if (is_digit(i) && word.empty()) {
      std::size_t start = i;
      while (is_digit(i)) ++i;
      if (i < raw.size() && raw[i] == '.' && is_digit(i + 1)) {
        ++i;
        while (is_digit(i)) ++i;
      }
      if (i < raw.size() && raw[i] == '/' && is_digit(i + 1)) {
        ++i;
        while (is_digit(i)) ++i;
        if (i < raw.size() && raw[i] == '.' && is_digit(i + 1)) {
          ++i;
          while (is_digit(i)) ++i;
        }
      } else if (i < raw.size() && raw[i] == '%') {
        ++i;
      }
      out.tokens.push_back("N" + std::to_string(out.numbers.size()));
      out.numbers.push_back(parse_rational(raw.substr(start, i - start)));
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (std::string_view(".,?!;:()\"").find(c) != std::string_view::npos) {
      flush();
      out.tokens.emplace_back(1, c);
    } else {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    ++i;
  }
  flush();
  return out;
}

struct Problem {
  std::string id;
  std::vector<std::string> text_tokens;
  std::vector<Rational> numbers;
  std::vector<expr::Token> gold_prefix;
  Rational answer;
  logic::LogicAnnotation logic;
  std::optional<expr::SolutionSet> solution_set;

  expr::Tree gold_tree() const { return expr::parse_prefix(gold_prefix); }
};

/// Shortest member of the solution set, or the gold tree size.
inline std::size_t shortest_solution_size(const Problem& p) {
  std::size_t best = p.gold_prefix.size();
  if (p.solution_set) {
    for (const auto& m : p.solution_set->members) best = std::min(best, m.size());
  }
  return best;
}

/// Throws on the first broken Problem invariant. `kb` adds annotation checks.
inline void validate_problem(const Problem& p, const logic::KnowledgeBase* kb = nullptr) {
  const std::string where = "problem '" + p.id + "'";
  expr::Tree tree;
  try {
    tree = p.gold_tree();
  } catch (const Error& e) {
    throw Error(Errc::SchemaError, where + ": gold prefix: " + e.what());
  }
  if (expr::slot_arity(tree) > p.numbers.size()) {
    throw Error(Errc::SchemaError, where + ": prefix references a slot beyond the number list");
  }
  for (const auto& w : p.text_tokens) {
    if (is_slot_token(w) && slot_index(w) >= p.numbers.size()) {
      throw Error(Errc::SchemaError, where + ": text slot " + w + " has no number");
    }
  }
  Rational value;
  try {
    value = expr::evaluate(tree, p.numbers);
  } catch (const Error& e) {
    throw Error(Errc::AnswerMismatch, where + ": gold prefix does not evaluate: " + e.what());
  }
  if (!answers_match(value, p.answer)) {
    throw Error(Errc::AnswerMismatch, where + ": gold prefix evaluates to " + format_rational(value) +
                                          ", recorded answer is " + format_rational(p.answer));
  }
  if (p.logic.formula_ids.size() != expr::operator_count(tree)) {
    throw Error(Errc::SchemaError, where + ": logic annotation length does not match operator count");
  }
  if (kb) {
    auto violations = logic::validate_annotation(tree, p.logic, *kb);
    if (!violations.empty()) throw Error(Errc::SchemaError, where + ": " + violations.front().message);
  }
  if (p.solution_set) {
    if (!p.solution_set->contains(p.gold_prefix)) {
      throw Error(Errc::SchemaError, where + ": gold prefix missing from its solution set");
    }
    for (const auto& m : p.solution_set->members) {
      Rational v;
      try {
        v = expr::evaluate(expr::parse_prefix(m), p.numbers);
      } catch (const Error& e) {
        throw Error(Errc::SchemaError, where + ": solution member '" + expr::tokens_to_text(m) + "': " + e.what());
      }
      if (!answers_match(v, p.answer)) {
        throw Error(Errc::AnswerMismatch, where + ": solution member '" + expr::tokens_to_text(m) +
                                              "' evaluates to " + format_rational(v));
      }
    }
  }
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

inline nlohmann::ordered_json problem_to_json(const Problem& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["text"] = join_tokens(p.text_tokens);
  auto nums = nlohmann::ordered_json::array();
  for (const auto& n : p.numbers) nums.push_back(format_rational(n));
  j["numbers"] = std::move(nums);
  j["prefix"] = expr::tokens_to_text(p.gold_prefix);
  j["answer"] = format_rational(p.answer);
  j["logic"] = p.logic.formula_ids;
  if (p.solution_set) {
    auto sols = nlohmann::ordered_json::array();
    for (const auto& m : p.solution_set->members) sols.push_back(expr::tokens_to_text(m));
    j["solutions"] = std::move(sols);
  }
  return j;
}

namespace detail {

inline Rational rational_field(const nlohmann::json& v, const std::string& what) {
  if (v.is_string()) return parse_rational(v.get<std::string>());
  if (v.is_number_integer()) return Rational(v.get<long long>());
  if (v.is_number()) {
    std::ostringstream s;
    s.precision(15);
    s << v.get<double>();
    std::string text = s.str();
    if (text.find_first_of("eE") != std::string::npos) {
      throw Error(Errc::SchemaError, what + ": exponent notation is not supported");
    }
    return parse_rational(text);
  }
  throw Error(Errc::SchemaError, what + " must be a number or numeric string");
}

}  // namespace detail

/// Parses one record. A record without "numbers" has raw text and is mapped.
inline Problem problem_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::SchemaError, "record is not a JSON object");
  Problem p;
  auto need = [&](const char* f) -> const nlohmann::json& {
    auto it = j.find(f);
    if (it == j.end()) throw Error(Errc::SchemaError, std::string("missing field '") + f + "'");
    return *it;
  };
  const auto& id = need("id");
  p.id = id.is_string() ? id.get<std::string>() : id.dump();
  const auto& text = need("text");
  if (!text.is_string()) throw Error(Errc::SchemaError, "field 'text' must be a string");
  if (auto nums = j.find("numbers"); nums != j.end()) {
    if (!nums->is_array()) throw Error(Errc::SchemaError, "field 'numbers' must be an array");
    std::istringstream in(text.get<std::string>());
    std::string w;
    while (in >> w) p.text_tokens.push_back(w);
    for (const auto& n : *nums) p.numbers.push_back(detail::rational_field(n, "numbers entry"));
  } else {
    auto mapped = map_numbers(text.get<std::string>());
    p.text_tokens = std::move(mapped.tokens);
    p.numbers = std::move(mapped.numbers);
  }
  if (auto prefix = j.find("prefix"); prefix != j.end()) {
    if (!prefix->is_string()) throw Error(Errc::SchemaError, "field 'prefix' must be a string");
    p.gold_prefix = expr::tokens_from_text(prefix->get<std::string>());
  }
  if (auto ans = j.find("answer"); ans != j.end()) p.answer = detail::rational_field(*ans, "answer");
  if (auto lg = j.find("logic"); lg != j.end()) {
    if (!lg->is_array()) throw Error(Errc::SchemaError, "field 'logic' must be an array");
    for (const auto& v : *lg) {
      if (!v.is_number_unsigned()) throw Error(Errc::SchemaError, "logic ids must be nonnegative integers");
      p.logic.formula_ids.push_back(v.get<std::size_t>());
    }
  }
  if (auto sols = j.find("solutions"); sols != j.end() && !sols->is_null()) {
    if (!sols->is_array()) throw Error(Errc::SchemaError, "field 'solutions' must be an array");
    expr::SolutionSet set;
    for (const auto& s : *sols) {
      if (!s.is_string()) throw Error(Errc::SchemaError, "solutions must be prefix strings");
      set.members.push_back(expr::tokens_from_text(s.get<std::string>()));
    }
    p.solution_set = std::move(set);
  }
  return p;
}

/// JSONL, one problem per line; every record is validated eagerly.
inline std::vector<Problem> load_corpus(const std::string& path, const logic::KnowledgeBase* kb = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open corpus '" + path + "'");
  std::vector<Problem> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    Problem p;
    try {
      p = problem_from_json(nlohmann::json::parse(line));
      if (p.gold_prefix.empty()) throw Error(Errc::SchemaError, "missing field 'prefix'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::SchemaError, where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code() == Errc::MalformedPrefix ? Errc::SchemaError : e.code(), where + ": " + e.what());
    }
    try {
      validate_problem(p, kb);
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
    if (!ids.insert(p.id).second) throw Error(Errc::SchemaError, where + ": duplicate id '" + p.id + "'");
    out.push_back(std::move(p));
  }
  return out;
}

inline void save_corpus(const std::string& path, const std::vector<Problem>& problems) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write corpus '" + path + "'");
  for (const auto& p : problems) out << problem_to_json(p).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct CorpusSplit {
  std::vector<Problem> train;
  std::vector<Problem> valid;
  std::vector<Problem> test;
  std::size_t unassigned = 0;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

/// Exact sizes after a seeded shuffle; problems beyond the three counts are
/// left unassigned.
inline CorpusSplit split_corpus_counts(std::vector<Problem> problems, SplitCounts counts, std::uint64_t seed) {
  if (counts.train + counts.valid + counts.test > problems.size()) {
    throw Error(Errc::ConfigError, "split counts exceed corpus size " + std::to_string(problems.size()));
  }
  Rng rng(seed);
  rng.shuffle(problems);
  CorpusSplit s;
  auto it = problems.begin();
  s.train.assign(std::make_move_iterator(it), std::make_move_iterator(it + counts.train));
  it += counts.train;
  s.valid.assign(std::make_move_iterator(it), std::make_move_iterator(it + counts.valid));
  it += counts.valid;
  s.test.assign(std::make_move_iterator(it), std::make_move_iterator(it + counts.test));
  it += counts.test;
  s.unassigned = static_cast<std::size_t>(problems.end() - it);
  return s;
}

/// valid/test get floor(ratio * n); train takes the remainder.
inline CorpusSplit split_corpus(std::vector<Problem> problems, double train, double valid, double test,
                                std::uint64_t seed) {
  if (train < 0 || valid < 0 || test < 0 || std::abs(train + valid + test - 1.0) > 1e-9) {
    throw Error(Errc::ConfigError, "split ratios must be nonnegative and sum to 1");
  }
  const std::size_t n = problems.size();
  SplitCounts c;
  c.valid = static_cast<std::size_t>(std::floor(valid * static_cast<double>(n) + 1e-9));
  c.test = static_cast<std::size_t>(std::floor(test * static_cast<double>(n) + 1e-9));
  c.train = n - c.valid - c.test;
  return split_corpus_counts(std::move(problems), c, seed);
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct StatReport {
  std::size_t problems = 0;
  std::size_t operator_nodes = 0;
  std::map<std::size_t, std::size_t> token_length;
  std::map<std::size_t, std::size_t> tree_size;
  std::map<std::size_t, std::size_t> formulas_used;
  std::map<std::size_t, std::size_t> formula_frequency;

  nlohmann::ordered_json to_json(const logic::KnowledgeBase* kb = nullptr) const {
    auto hist = [](const std::map<std::size_t, std::size_t>& h) {
      nlohmann::ordered_json j = nlohmann::ordered_json::object();
      for (const auto& [k, v] : h) j[std::to_string(k)] = v;
      return j;
    };
    nlohmann::ordered_json j;
    j["problems"] = problems;
    j["operator_nodes"] = operator_nodes;
    j["token_length"] = hist(token_length);
    j["tree_size"] = hist(tree_size);
    j["formulas_used"] = hist(formulas_used);
    auto freq = nlohmann::ordered_json::array();
    for (const auto& [id, count] : formula_frequency) {
      nlohmann::ordered_json e;
      e["id"] = id;
      if (kb && kb->contains(id)) e["formula"] = kb->at(id).surface_text();
      e["count"] = count;
      e["percent"] = operator_nodes ? 100.0 * static_cast<double>(count) / static_cast<double>(operator_nodes) : 0.0;
      freq.push_back(std::move(e));
    }
    j["formula_frequency"] = std::move(freq);
    return j;
  }
};

inline StatReport corpus_stats(const std::vector<Problem>& problems) {
  StatReport r;
  for (const auto& p : problems) {
    ++r.problems;
    ++r.token_length[p.text_tokens.size()];
    ++r.tree_size[shortest_solution_size(p)];
    std::set<std::size_t> distinct(p.logic.formula_ids.begin(), p.logic.formula_ids.end());
    ++r.formulas_used[distinct.size()];
    for (std::size_t id : p.logic.formula_ids) ++r.formula_frequency[id];
    r.operator_nodes += p.logic.formula_ids.size();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t count = 100;
  std::map<std::size_t, double> size_weights{{3, 0.4}, {5, 0.4}, {7, 0.2}};
  long long number_min = 2;
  long long number_max = 60;
  double decimal_probability = 0.1;
  double common_sense_probability = 0.25;
  double solution_set_fraction = 1.0;
  std::string id_prefix = "syn";
  // Single-formula override: surface text or id, plus operand values by label.
  std::optional<std::string> force_formula;
  std::map<std::string, std::string> force_values;

  static SynthConfig from_json(const nlohmann::json& j) {
    SynthConfig c;
    try {
      c.count = j.value("count", c.count);
      if (auto it = j.find("size_weights"); it != j.end()) {
        c.size_weights.clear();
        for (auto& [k, v] : it->items()) c.size_weights[std::stoul(k)] = v.get<double>();
      }
      c.number_min = j.value("number_min", c.number_min);
      c.number_max = j.value("number_max", c.number_max);
      c.decimal_probability = j.value("decimal_probability", c.decimal_probability);
      c.common_sense_probability = j.value("common_sense_probability", c.common_sense_probability);
      c.solution_set_fraction = j.value("solution_set_fraction", c.solution_set_fraction);
      c.id_prefix = j.value("id_prefix", c.id_prefix);
      if (auto it = j.find("force"); it != j.end()) {
        const auto& f = it->at("formula");
        c.force_formula = f.is_string() ? f.get<std::string>() : f.dump();
        if (auto vals = it->find("values"); vals != it->end()) {
          for (auto& [k, v] : vals->items()) c.force_values[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ConfigError, std::string("generator config: ") + e.what());
    }
    return c;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["count"] = count;
    nlohmann::ordered_json w = nlohmann::ordered_json::object();
    for (const auto& [k, v] : size_weights) w[std::to_string(k)] = v;
    j["size_weights"] = w;
    j["number_min"] = number_min;
    j["number_max"] = number_max;
    j["decimal_probability"] = decimal_probability;
    j["common_sense_probability"] = common_sense_probability;
    j["solution_set_fraction"] = solution_set_fraction;
    j["id_prefix"] = id_prefix;
    return j;
  }
};

namespace detail {

// Operand labels that denote constants rather than numbers from the text.
inline std::optional<Rational> constant_label(const std::string& label) {
  if (label == "PI" || label == "pi") return Rational(157, 50);
  if (label == "1") return Rational(1);
  if (label == "2") return Rational(2);
  return std::nullopt;
}

inline bool is_rate_label(const std::string& label) { return label.find("rate") != std::string::npos; }

struct SynthOperand {
  std::string label;
  std::optional<std::size_t> child;     // index of the formula node feeding this operand
  std::optional<Rational> constant;
  Rational value;
  std::string literal;
  std::size_t literal_index = 0;        // reading-order number slot, set while rendering
};

struct SynthNode {
  std::size_t formula_id = 0;
  expr::Op op = expr::Op::Add;
  std::string lhs;
  SynthOperand operands[2];
  bool shared_operand = false;          // same label on both sides: one number used twice
};

inline const char* op_word(expr::Op op) {
  switch (op) {
    case expr::Op::Add: return "plus";
    case expr::Op::Sub: return "minus";
    case expr::Op::Mul: return "times";
    case expr::Op::Div: return "divided by";
    case expr::Op::Pow: return "to the power of";
  }
  return "";
}

inline const char* result_word(expr::Op op) {
  switch (op) {
    case expr::Op::Add: return "sum";
    case expr::Op::Sub: return "difference";
    case expr::Op::Mul: return "product";
    case expr::Op::Div: return "quotient";
    case expr::Op::Pow: return "power";
  }
  return "";
}

inline const char* kLetters[] = {"a", "b", "c", "d", "e", "f", "g", "h"};
inline const char* kOpeners[] = {"", "in a math class ,", "here is a question .", "a student works on a problem .",
                                 "consider the following ."};

class Generator {
 public:
  Generator(const logic::KnowledgeBase& kb, const SynthConfig& cfg, std::uint64_t seed)
      : kb_(kb), cfg_(cfg), rng_(seed) {
    if (cfg.size_weights.empty()) throw Error(Errc::ConfigError, "size_weights is empty");
    for (const auto& [size, w] : cfg.size_weights) {
      if (size < 3 || size % 2 == 0) {
        throw Error(Errc::ConfigError, "tree sizes must be odd and at least 3 (got " + std::to_string(size) + ")");
      }
      if (w < 0) throw Error(Errc::ConfigError, "size weights must be nonnegative");
      sizes_.push_back(size);
      weights_.push_back(w);
    }
    if (cfg.number_min < 1 || cfg.number_max < cfg.number_min) {
      throw Error(Errc::ConfigError, "number range must satisfy 1 <= number_min <= number_max");
    }
    for (const auto& f : kb.formulas()) {
      if (!f.common_sense) domain_.push_back(f.id);
    }
    if (domain_.empty()) throw Error(Errc::ConfigError, "knowledge base has no domain formulas");
  }

  Problem make(std::size_t index) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      if (auto p = try_make(index)) return std::move(*p);
    }
    throw Error(Errc::ConfigError, "could not generate a valid problem; check number ranges");
  }

 private:
  SynthNode new_node(std::size_t formula_id) {
    const auto& f = kb_.at(formula_id);
    SynthNode n;
    n.formula_id = formula_id;
    if (f.common_sense) {
      static constexpr expr::Op kOps[] = {expr::Op::Add, expr::Op::Sub, expr::Op::Mul, expr::Op::Div};
      n.op = kOps[rng_.index(4)];
      const std::size_t k = 2 * (common_count_++ % 4);
      n.operands[0].label = std::string("amount ") + kLetters[k];
      n.operands[1].label = std::string("amount ") + kLetters[k + 1];
      n.lhs = std::string(result_word(n.op)) + " of " + kLetters[k] + " and " + kLetters[k + 1];
    } else {
      n.op = f.op;
      n.lhs = f.lhs_label;
      n.operands[0].label = f.left_label;
      n.operands[1].label = f.right_label;
      n.shared_operand = f.left_label == f.right_label;
    }
    for (auto& o : n.operands) o.constant = constant_label(o.label);
    return n;
  }

  std::size_t pick_formula() {
    if (rng_.bernoulli(cfg_.common_sense_probability)) return kb_.common_sense_id();
    return domain_[rng_.index(domain_.size())];
  }

  void assign_value(SynthOperand& o) {
    if (is_rate_label(o.label)) {
      long long pct = rng_.integer(1, 30);
      o.value = Rational(pct, 100);
      o.literal = std::to_string(pct) + "%";
    } else if (rng_.bernoulli(cfg_.decimal_probability)) {
      long long whole = rng_.integer(cfg_.number_min, cfg_.number_max);
      o.value = Rational(2 * whole + 1, 2);
      o.literal = format_rational(o.value);
    } else {
      long long v = rng_.integer(cfg_.number_min, cfg_.number_max);
      o.value = Rational(v);
      o.literal = std::to_string(v);
    }
  }

  std::optional<Problem> try_make(std::size_t index) {
    nodes_.clear();
    common_count_ = 0;
    if (cfg_.force_formula) {
      nodes_.push_back(new_node(resolve_forced()));
    } else {
      const std::size_t size = sizes_[rng_.categorical(weights_)];
      const std::size_t formulas = (size - 1) / 2;
      nodes_.push_back(new_node(pick_formula()));
      while (nodes_.size() < formulas) {
        // Attach the next formula at a random numeric, unshared operand.
        std::vector<std::pair<std::size_t, int>> sites;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
          if (nodes_[i].shared_operand) continue;
          for (int s = 0; s < 2; ++s) {
            const auto& o = nodes_[i].operands[s];
            if (!o.child && !o.constant) sites.emplace_back(i, s);
          }
        }
        if (sites.empty()) return std::nullopt;
        auto [parent, side] = sites[rng_.index(sites.size())];
        nodes_.push_back(new_node(pick_formula()));
        nodes_[parent].operands[side].child = nodes_.size() - 1;
      }
    }

    for (auto& n : nodes_) {
      for (auto& o : n.operands) {
        if (!o.child && !o.constant) assign_value(o);
      }
      if (n.shared_operand) n.operands[1] = n.operands[0];
    }
    if (cfg_.force_formula) apply_forced_values();

    // Every intermediate result must be a positive, defined value.
    std::vector<Rational> values(nodes_.size());
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Rational operand_values[2];
      for (int s = 0; s < 2; ++s) {
        const auto& o = nodes_[i].operands[s];
        operand_values[s] = o.child ? values[*o.child] : (o.constant ? *o.constant : o.value);
      }
      try {
        values[i] = expr::apply(nodes_[i].op, operand_values[0], operand_values[1]);
      } catch (const Error&) {
        return std::nullopt;
      }
      if (values[i] <= 0 && !cfg_.force_formula) return std::nullopt;
    }

    std::vector<std::string> sentences;
    const std::size_t opener = rng_.index(std::size(kOpeners));
    if (*kOpeners[opener]) sentences.emplace_back(kOpeners[opener]);
    std::size_t literal_counter = 0;
    render(0, sentences, literal_counter);
    sentences.push_back("what is the " + nodes_[0].lhs + " ?");
    std::string raw;
    for (const auto& s : sentences) raw += (raw.empty() ? "" : " ") + s;

    Problem p;
    p.id = cfg_.id_prefix + "-" + std::to_string(index);
    auto mapped = map_numbers(raw);
    p.text_tokens = std::move(mapped.tokens);
    p.numbers = std::move(mapped.numbers);
    if (p.numbers.size() != literal_counter) return std::nullopt;

    emit(0, p.gold_prefix, p.logic.formula_ids);
    expr::Tree tree = expr::parse_prefix(p.gold_prefix);
    p.answer = expr::evaluate(tree, p.numbers);
    if (rng_.uniform() < cfg_.solution_set_fraction) p.solution_set = expr::expand_solution_set(tree);
    return p;
  }

  void render(std::size_t i, std::vector<std::string>& out, std::size_t& literal_counter) {
    auto& n = nodes_[i];
    int order[2] = {0, 1};
    if (rng_.bernoulli(0.5)) std::swap(order[0], order[1]);
    const int sides = n.shared_operand ? 1 : 2;
    for (int k = 0; k < sides; ++k) {
      auto& o = n.operands[n.shared_operand ? 0 : order[k]];
      if (o.child) {
        render(*o.child, out, literal_counter);
        out.push_back("the " + o.label + " is the " + nodes_[*o.child].lhs + " .");
      } else if (!o.constant) {
        o.literal_index = literal_counter++;
        out.push_back("the " + o.label + " is " + o.literal + " .");
      }
    }
    if (n.shared_operand) n.operands[1].literal_index = n.operands[0].literal_index;
    if (kb_.at(n.formula_id).common_sense) {
      out.push_back("the " + n.lhs + " is the " + n.operands[0].label + " " + op_word(n.op) + " the " +
                    n.operands[1].label + " .");
    }
  }

  // Prefix tokens and per-operator formula ids, both in prefix order.
  void emit(std::size_t i, std::vector<expr::Token>& prefix, std::vector<std::size_t>& ids) const {
    const auto& n = nodes_[i];
    prefix.push_back(expr::Token::op(n.op));
    ids.push_back(n.formula_id);
    for (const auto& o : n.operands) {
      if (o.child) emit(*o.child, prefix, ids);
      else if (o.constant) prefix.push_back(expr::Token::constant(*o.constant));
      else prefix.push_back(expr::Token::slot(o.literal_index));
    }
  }

  std::size_t resolve_forced() const {
    const std::string& key = *cfg_.force_formula;
    if (auto id = kb_.find_by_text(key)) return *id;
    if (logicsolver::detail::all_digits(key)) {
      std::size_t id = std::stoul(key);
      if (kb_.contains(id)) return id;
    }
    throw Error(Errc::ConfigError, "forced formula '" + key + "' is not in the knowledge base");
  }

  void apply_forced_values() {
    for (auto& o : nodes_[0].operands) {
      auto it = cfg_.force_values.find(o.label);
      if (it == cfg_.force_values.end()) continue;
      o.value = parse_rational(it->second);
      o.literal = it->second;
    }
    if (nodes_[0].shared_operand) nodes_[0].operands[1] = nodes_[0].operands[0];
  }

  const logic::KnowledgeBase& kb_;
  const SynthConfig& cfg_;
  Rng rng_;
  std::vector<std::size_t> sizes_;
  std::vector<double> weights_;
  std::vector<std::size_t> domain_;
  std::vector<SynthNode> nodes_;
  std::size_t common_count_ = 0;
};

}  // namespace detail

/// Template-driven English problems composed from 1..n knowledge-base formulas.
inline std::vector<Problem> synth_generate(const logic::KnowledgeBase& kb, const SynthConfig& cfg,
                                           std::uint64_t seed) {
  detail::Generator gen(kb, cfg, seed);
  std::vector<Problem> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(gen.make(i));
  return out;
}

}  // namespace logicsolver::corpus
