#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cctype>
#include <string>
#include <string_view>

#include "logicsolver/error.hpp"

namespace logicsolver {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

namespace detail {

inline bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

// cpp_int reads a leading 0 as an octal prefix.
inline BigInt parse_digits(std::string_view digits) {
  auto first = digits.find_first_not_of('0');
  if (first == std::string_view::npos) return BigInt(0);
  return BigInt(std::string(digits.substr(first)));
}

inline Rational parse_unsigned_decimal(std::string_view s) {
  auto dot = s.find('.');
  if (dot == std::string_view::npos) {
    if (!all_digits(s)) throw Error(Errc::SchemaError, "not a number: '" + std::string(s) + "'");
    return Rational(parse_digits(s));
  }
  std::string_view whole = s.substr(0, dot);
  std::string_view frac = s.substr(dot + 1);
  if ((!whole.empty() && !all_digits(whole)) || !all_digits(frac)) {
    throw Error(Errc::SchemaError, "not a number: '" + std::string(s) + "'");
  }
  BigInt numerator = parse_digits(std::string(whole) + std::string(frac));
  BigInt denominator = boost::multiprecision::pow(BigInt(10), static_cast<unsigned>(frac.size()));
  return Rational(numerator, denominator);
}

}  // namespace detail

/// Accepts "12", "-3", "3.14", "1/4", "25%" (percent divides by 100).
inline Rational parse_rational(std::string_view text) {
  if (text.empty()) throw Error(Errc::SchemaError, "empty number literal");
  bool negative = false;
  if (text.front() == '-' || text.front() == '+') {
    negative = text.front() == '-';
    text.remove_prefix(1);
  }
  Rational value;
  if (!text.empty() && text.back() == '%') {
    value = detail::parse_unsigned_decimal(text.substr(0, text.size() - 1)) / 100;
  } else if (auto slash = text.find('/'); slash != std::string_view::npos) {
    Rational num = detail::parse_unsigned_decimal(text.substr(0, slash));
    Rational den = detail::parse_unsigned_decimal(text.substr(slash + 1));
    if (den == 0) throw Error(Errc::DivisionByZero, "zero denominator in literal");
    value = num / den;
  } else {
    value = detail::parse_unsigned_decimal(text);
  }
  return negative ? Rational(-value) : value;
}

/// Exact decimal when the denominator only has factors 2 and 5, "p/q" otherwise.
inline std::string format_rational(const Rational& r) {
  BigInt num = boost::multiprecision::numerator(r);
  BigInt den = boost::multiprecision::denominator(r);
  if (den == 1) return num.str();

  BigInt rest = den;
  unsigned twos = 0, fives = 0;
  while (rest % 2 == 0) { rest /= 2; ++twos; }
  while (rest % 5 == 0) { rest /= 5; ++fives; }
  if (rest != 1) return num.str() + "/" + den.str();

  unsigned digits = std::max(twos, fives);
  BigInt scaled = num * boost::multiprecision::pow(BigInt(10), digits) / den;
  bool negative = scaled < 0;
  if (negative) scaled = -scaled;
  std::string body = scaled.str();
  if (body.size() <= digits) body.insert(0, digits - body.size() + 1, '0');
  body.insert(body.size() - digits, ".");
  while (body.back() == '0') body.pop_back();
  if (body.back() == '.') body.pop_back();
  return negative ? "-" + body : body;
}

}  // namespace logicsolver
