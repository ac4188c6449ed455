// SPDX-License-Identifier: Apache-2.0
//
// Arithmetic over symbolic problem dimensions. The grammar admits numeric
// literals, identifiers, parentheses, unary +/- and the binary operators
// + - * / **. Everything else (calls, attribute access, comparisons, strings,
// subscripts, floor division, modulo) is rejected when the text is parsed.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>

namespace kopt {

// Integer results stay exact until an operation overflows int64 or divides,
// at which point the value becomes a double (Python-like true division).
struct FormulaValue {
  bool integral = true;
  std::int64_t i = 0;
  double d = 0.0;

  double as_double() const noexcept { return integral ? static_cast<double>(i) : d; }
  static FormulaValue of_int(std::int64_t v) { return {true, v, 0.0}; }
  static FormulaValue of_double(double v) { return {false, 0, v}; }
};

using Bindings = std::map<std::string, std::int64_t, std::less<>>;

class Formula {
 public:
  // Throws FormulaError naming the offending construct.
  static Formula parse(std::string_view text);

  const std::string& text() const noexcept { return text_; }
  const std::set<std::string>& symbols() const noexcept { return symbols_; }

  // Throws FormulaError on an unbound symbol or division by zero.
  FormulaValue evaluate(const Bindings& bindings) const;

  struct Node;

 private:
  std::string text_;
  std::set<std::string> symbols_;
  std::shared_ptr<const Node> root_;
};

inline FormulaValue eval_formula(std::string_view text, const Bindings& bindings) {
  return Formula::parse(text).evaluate(bindings);
}

}  // namespace kopt
