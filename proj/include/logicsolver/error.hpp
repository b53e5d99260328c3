#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace logicsolver {

enum class Errc {
  MalformedPrefix,
  DivisionByZero,
  UnboundSlot,
  NonIntegerExponent,
  SchemaError,
  AnswerMismatch,
  UnknownFormulaId,
  ConfigError,
  IoError,
  ShapeMismatch,
  GraphError,
  EmptyInput,
  ArityError,
  LengthMismatch,
  MissingSolutionSet,
  IdMismatch,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedPrefix: return "MalformedPrefix";
    case Errc::DivisionByZero: return "DivisionByZero";
    case Errc::UnboundSlot: return "UnboundSlot";
    case Errc::NonIntegerExponent: return "NonIntegerExponent";
    case Errc::SchemaError: return "SchemaError";
    case Errc::AnswerMismatch: return "AnswerMismatch";
    case Errc::UnknownFormulaId: return "UnknownFormulaId";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::GraphError: return "GraphError";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ArityError: return "ArityError";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::MissingSolutionSet: return "MissingSolutionSet";
    case Errc::IdMismatch: return "IdMismatch";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the Errc codes so
/// callers (and tests) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace logicsolver
