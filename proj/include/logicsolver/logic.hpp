#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/expr.hpp"

namespace logicsolver::logic {

enum class Category { Geometric, Physical, Financial, Commonsense };

inline std::string_view category_name(Category c) {
  switch (c) {
    case Category::Geometric: return "Geometric";
    case Category::Physical: return "Physical";
    case Category::Financial: return "Financial";
    case Category::Commonsense: return "Commonsense";
  }
  return "?";
}

inline std::optional<Category> category_from_name(std::string_view s) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "geometric") return Category::Geometric;
  if (lower == "physical") return Category::Physical;
  if (lower == "financial") return Category::Financial;
  if (lower == "commonsense" || lower == "common-sense") return Category::Commonsense;
  return std::nullopt;
}

/// Lowercased whitespace tokens.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) {
    for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(w);
  }
  return out;
}

/// An algebraic identity "lhs = left op right".
struct LogicFormula {
  std::size_t id = 0;
  std::string lhs_label;
  std::string left_label;
  std::string right_label;
  expr::Op op = expr::Op::Add;
  Category category = Category::Commonsense;
  bool common_sense = false;

  std::string surface_text() const {
    return lhs_label + " = " + left_label + " " + std::string(expr::op_symbol(op)) + " " + right_label;
  }
  std::vector<std::string> surface_tokens() const { return split_words(surface_text()); }
};

class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  /// Checks dense ids, operator vocabulary and the single common-sense entry.
  explicit KnowledgeBase(std::vector<LogicFormula> formulas) : formulas_(std::move(formulas)) {
    std::sort(formulas_.begin(), formulas_.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    std::optional<std::size_t> common;
    for (std::size_t i = 0; i < formulas_.size(); ++i) {
      const auto& f = formulas_[i];
      if (f.id != i) {
        bool dup = i > 0 && formulas_[i - 1].id == f.id;
        throw Error(Errc::SchemaError, dup ? "duplicate formula id " + std::to_string(f.id)
                                           : "formula ids must be dense 0..T-1; missing id " +
                                                 std::to_string(i));
      }
      if (f.op == expr::Op::Pow) {
        throw Error(Errc::SchemaError, "formula " + std::to_string(f.id) + ": operator must be one of + - * /");
      }
      if (f.common_sense) {
        if (common) throw Error(Errc::SchemaError, "more than one common-sense step formula");
        common = f.id;
      }
    }
    if (!common) throw Error(Errc::SchemaError, "knowledge base has no common-sense step formula");
    common_sense_id_ = *common;
  }

  std::size_t size() const { return formulas_.size(); }
  const std::vector<LogicFormula>& formulas() const { return formulas_; }
  const LogicFormula& at(std::size_t id) const {
    if (id >= formulas_.size()) throw Error(Errc::UnknownFormulaId, "formula id " + std::to_string(id));
    return formulas_[id];
  }
  std::size_t common_sense_id() const { return common_sense_id_; }
  bool contains(std::size_t id) const { return id < formulas_.size(); }

  std::optional<std::size_t> find_by_text(std::string_view surface) const {
    for (const auto& f : formulas_) {
      if (f.surface_text() == surface) return f.id;
    }
    return std::nullopt;
  }

  std::map<std::string, std::size_t> category_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& f : formulas_) ++out[std::string(category_name(f.category))];
    return out;
  }

 private:
  std::vector<LogicFormula> formulas_;
  std::size_t common_sense_id_ = 0;
};

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + offset, '\n'));
}

inline std::string require_string(const nlohmann::json& entry, const char* field, std::size_t index) {
  auto it = entry.find(field);
  if (it == entry.end() || !it->is_string() || it->get<std::string>().empty()) {
    throw Error(Errc::SchemaError,
                "entry " + std::to_string(index) + ": field '" + field + "' must be a nonempty string");
  }
  return it->get<std::string>();
}

}  // namespace detail

inline KnowledgeBase kb_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw Error(Errc::SchemaError, "knowledge base must be a JSON array");
  std::vector<LogicFormula> formulas;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    if (!e.is_object()) throw Error(Errc::SchemaError, "entry " + std::to_string(i) + " is not an object");
    LogicFormula f;
    auto id = e.find("id");
    if (id == e.end() || !id->is_number_unsigned()) {
      throw Error(Errc::SchemaError, "entry " + std::to_string(i) + ": field 'id' must be a nonnegative integer");
    }
    f.id = id->get<std::size_t>();
    f.lhs_label = detail::require_string(e, "lhs", i);
    f.left_label = detail::require_string(e, "left", i);
    f.right_label = detail::require_string(e, "right", i);
    auto op = expr::op_from_symbol(detail::require_string(e, "op", i));
    if (!op || *op == expr::Op::Pow) {
      throw Error(Errc::SchemaError, "entry " + std::to_string(i) + ": field 'op' must be one of + - * /");
    }
    f.op = *op;
    auto cat = category_from_name(detail::require_string(e, "category", i));
    if (!cat) throw Error(Errc::SchemaError, "entry " + std::to_string(i) + ": unknown category");
    f.category = *cat;
    f.common_sense = e.value("common_sense", false);
    formulas.push_back(std::move(f));
  }
  return KnowledgeBase(std::move(formulas));
}

inline nlohmann::ordered_json kb_to_json(const KnowledgeBase& kb) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& f : kb.formulas()) {
    nlohmann::ordered_json e;
    e["id"] = f.id;
    e["lhs"] = f.lhs_label;
    e["left"] = f.left_label;
    e["right"] = f.right_label;
    e["op"] = std::string(expr::op_ascii(f.op));
    e["category"] = std::string(category_name(f.category));
    if (f.common_sense) e["common_sense"] = true;
    out.push_back(std::move(e));
  }
  return out;
}

inline KnowledgeBase load_kb(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open knowledge base '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(Errc::SchemaError, path + ": empty file (common-sense step formula missing)");
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::SchemaError,
                path + ":" + std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
  }
  try {
    return kb_from_json(doc);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

/// One formula id per operator node, in prefix order.
struct LogicAnnotation {
  std::vector<std::size_t> formula_ids;
  bool operator==(const LogicAnnotation&) const = default;
};

struct Violation {
  enum class Kind { LengthMismatch, OperatorMismatch, UnknownFormulaId } kind;
  std::size_t position = 0;  // index into the annotation
  std::string message;
};

inline std::vector<const expr::Tree*> operator_nodes(const expr::Tree& t) {
  std::vector<const expr::Tree*> out;
  std::vector<const expr::Tree*> stack{&t};
  while (!stack.empty()) {
    const expr::Tree* n = stack.back();
    stack.pop_back();
    if (n->is_leaf()) continue;
    out.push_back(n);
    stack.push_back(&n->right());
    stack.push_back(&n->left());
  }
  return out;
}

/// Empty iff the annotation has one entry per operator and each formula's
/// operator matches its node (the common-sense step matches any operator).
inline std::vector<Violation> validate_annotation(const expr::Tree& tree, const LogicAnnotation& ann,
                                                  const KnowledgeBase& kb) {
  std::vector<Violation> out;
  auto ops = operator_nodes(tree);
  if (ops.size() != ann.formula_ids.size()) {
    out.push_back({Violation::Kind::LengthMismatch, 0,
                   "annotation has " + std::to_string(ann.formula_ids.size()) + " ids for " +
                       std::to_string(ops.size()) + " operator nodes"});
  }
  const std::size_t n = std::min(ops.size(), ann.formula_ids.size());
  for (std::size_t i = 0; i < ann.formula_ids.size(); ++i) {
    const std::size_t id = ann.formula_ids[i];
    if (!kb.contains(id)) {
      out.push_back({Violation::Kind::UnknownFormulaId, i, "unknown formula id " + std::to_string(id)});
      continue;
    }
    if (i >= n) continue;
    const auto& f = kb.at(id);
    if (!f.common_sense && f.op != ops[i]->token.op()) {
      out.push_back({Violation::Kind::OperatorMismatch, i,
                     "formula '" + f.surface_text() + "' on a '" +
                         std::string(expr::op_symbol(ops[i]->token.op())) + "' node"});
    }
  }
  return out;
}

/// 0/1 entry per formula: used anywhere in the annotation.
struct LogicLabelVector {
  std::vector<std::uint8_t> bits;

  std::size_t popcount() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  std::vector<std::size_t> positives() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) out.push_back(i);
    }
    return out;
  }
};

inline LogicLabelVector to_label_vector(const LogicAnnotation& ann, const KnowledgeBase& kb) {
  LogicLabelVector out{std::vector<std::uint8_t>(kb.size(), 0)};
  for (std::size_t id : ann.formula_ids) {
    if (!kb.contains(id)) throw Error(Errc::UnknownFormulaId, "formula id " + std::to_string(id));
    out.bits[id] = 1;
  }
  return out;
}

struct NodeSemantics {
  std::string lhs;
  std::string left;
  std::string right;
  bool operator==(const NodeSemantics&) const = default;
};

inline NodeSemantics node_semantics(const LogicFormula& f) {
  if (f.common_sense) return {"step", "operand", "operand"};
  return {f.lhs_label, f.left_label, f.right_label};
}

}  // namespace logicsolver::logic
