// SPDX-License-Identifier: Apache-2.0
#include "kopt/formula.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <vector>

#include "kopt/error.hpp"

namespace kopt {

struct Formula::Node {
  enum class Kind { Number, Symbol, Neg, Pos, Add, Sub, Mul, Div, Pow } kind;
  FormulaValue number;
  std::string symbol;
  std::unique_ptr<Node> lhs;
  std::unique_ptr<Node> rhs;
};

namespace {

using Node = Formula::Node;
using NodeUP = std::unique_ptr<Node>;

struct Tok {
  enum class Kind { Number, Ident, Op, End } kind;
  std::string text;
  std::size_t pos;
};

[[noreturn]] void reject(std::string_view text, std::size_t pos, const std::string& what) {
  throw FormulaError("formula '" + std::string(text) + "': " + what + " at offset " +
                     std::to_string(pos));
}

std::vector<Tok> lex(std::string_view s) {
  std::vector<Tok> out;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    std::size_t b = i;
    if (std::isdigit(c) || (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
      if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
      }
      if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        std::size_t save = i++;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
        std::size_t digits = i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i == digits) i = save;
      }
      if (i < s.size() && (std::isalpha(static_cast<unsigned char>(s[i])) || s[i] == '_'))
        reject(s, i, "malformed numeric literal");
      out.push_back({Tok::Kind::Number, std::string(s.substr(b, i - b)), b});
      continue;
    }
    if (std::isalpha(c) || c == '_') {
      while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
      out.push_back({Tok::Kind::Ident, std::string(s.substr(b, i - b)), b});
      continue;
    }
    if (s.substr(i, 2) == "**") {
      out.push_back({Tok::Kind::Op, "**", b});
      i += 2;
      continue;
    }
    if (s.substr(i, 2) == "//") reject(s, i, "floor division is not allowed");
    if (c == '+' || c == '-' || c == '*' || c == '/' || c == '(' || c == ')') {
      out.push_back({Tok::Kind::Op, std::string(1, static_cast<char>(c)), b});
      ++i;
      continue;
    }
    if (c == '.') reject(s, i, "attribute access is not allowed");
    if (c == '<' || c == '>' || c == '=' || c == '!') reject(s, i, "comparisons are not allowed");
    if (c == '\'' || c == '"') reject(s, i, "string literals are not allowed");
    if (c == '[' || c == ']') reject(s, i, "subscripts are not allowed");
    if (c == ',') reject(s, i, "tuples and argument lists are not allowed");
    reject(s, i, std::string("disallowed character '") + static_cast<char>(c) + "'");
  }
  out.push_back({Tok::Kind::End, "", s.size()});
  return out;
}

FormulaValue parse_number(std::string_view text, const Tok& t) {
  std::string digits;
  for (char c : t.text)
    if (c != '_') digits.push_back(c);
  if (digits.find_first_of(".eE") == std::string::npos) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec == std::errc() && p == digits.data() + digits.size()) return FormulaValue::of_int(v);
    if (ec == std::errc::result_out_of_range) return FormulaValue::of_double(std::stod(digits));
    reject(text, t.pos, "malformed numeric literal");
  }
  double v = 0.0;
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc() || p != digits.data() + digits.size()) reject(text, t.pos, "malformed numeric literal");
  return FormulaValue::of_double(v);
}

class Parser {
 public:
  Parser(std::string_view text, std::vector<Tok> toks, std::set<std::string>& symbols)
      : text_(text), toks_(std::move(toks)), symbols_(symbols) {}

  NodeUP parse() {
    if (toks_.front().kind == Tok::Kind::End) reject(text_, 0, "empty expression");
    NodeUP n = sum();
    if (cur().kind != Tok::Kind::End) unexpected();
    return n;
  }

 private:
  const Tok& cur() const { return toks_[i_]; }
  bool at(std::string_view op) const { return cur().kind == Tok::Kind::Op && cur().text == op; }

  [[noreturn]] void unexpected() const {
    if (cur().kind == Tok::Kind::End) reject(text_, cur().pos, "unexpected end of expression");
    reject(text_, cur().pos, "unexpected '" + cur().text + "'");
  }

  static NodeUP binary(Node::Kind k, NodeUP l, NodeUP r) {
    auto n = std::make_unique<Node>();
    n->kind = k;
    n->lhs = std::move(l);
    n->rhs = std::move(r);
    return n;
  }

  NodeUP sum() {
    NodeUP l = product();
    while (at("+") || at("-")) {
      Node::Kind k = at("+") ? Node::Kind::Add : Node::Kind::Sub;
      ++i_;
      l = binary(k, std::move(l), product());
    }
    return l;
  }

  NodeUP product() {
    NodeUP l = unary();
    while (at("*") || at("/")) {
      Node::Kind k = at("*") ? Node::Kind::Mul : Node::Kind::Div;
      ++i_;
      l = binary(k, std::move(l), unary());
    }
    return l;
  }

  NodeUP unary() {
    if (at("-") || at("+")) {
      auto n = std::make_unique<Node>();
      n->kind = at("-") ? Node::Kind::Neg : Node::Kind::Pos;
      ++i_;
      n->lhs = unary();
      return n;
    }
    return power();
  }

  // `**` is right-associative and binds tighter than a unary minus on its
  // left, but its right operand may carry a sign: -2**-1 == -(2**(-1)).
  NodeUP power() {
    NodeUP base = atom();
    if (at("**")) {
      ++i_;
      return binary(Node::Kind::Pow, std::move(base), unary());
    }
    return base;
  }

  NodeUP atom() {
    const Tok& t = cur();
    if (t.kind == Tok::Kind::Number) {
      ++i_;
      auto n = std::make_unique<Node>();
      n->kind = Node::Kind::Number;
      n->number = parse_number(text_, t);
      return n;
    }
    if (t.kind == Tok::Kind::Ident) {
      ++i_;
      if (at("(")) reject(text_, t.pos, "function call '" + t.text + "(...)' is not allowed");
      auto n = std::make_unique<Node>();
      n->kind = Node::Kind::Symbol;
      n->symbol = t.text;
      symbols_.insert(t.text);
      return n;
    }
    if (at("(")) {
      ++i_;
      NodeUP inner = sum();
      if (!at(")")) unexpected();
      ++i_;
      return inner;
    }
    unexpected();
  }

  std::string_view text_;
  std::vector<Tok> toks_;
  std::set<std::string>& symbols_;
  std::size_t i_ = 0;
};

FormulaValue checked_int(std::int64_t a, std::int64_t b, Node::Kind k) {
  std::int64_t r = 0;
  bool overflow = false;
  switch (k) {
    case Node::Kind::Add: overflow = __builtin_add_overflow(a, b, &r); break;
    case Node::Kind::Sub: overflow = __builtin_sub_overflow(a, b, &r); break;
    case Node::Kind::Mul: overflow = __builtin_mul_overflow(a, b, &r); break;
    default: break;
  }
  if (!overflow) return FormulaValue::of_int(r);
  double x = static_cast<double>(a);
  double y = static_cast<double>(b);
  return FormulaValue::of_double(k == Node::Kind::Add ? x + y : k == Node::Kind::Sub ? x - y : x * y);
}

FormulaValue int_pow(std::int64_t base, std::int64_t exp) {
  std::int64_t result = 1;
  std::int64_t b = base;
  std::int64_t e = exp;
  while (e > 0) {
    if (e & 1) {
      if (__builtin_mul_overflow(result, b, &result))
        return FormulaValue::of_double(std::pow(static_cast<double>(base), static_cast<double>(exp)));
    }
    e >>= 1;
    if (e > 0 && __builtin_mul_overflow(b, b, &b))
      return FormulaValue::of_double(std::pow(static_cast<double>(base), static_cast<double>(exp)));
  }
  return FormulaValue::of_int(result);
}

FormulaValue eval(const Node& n, const Bindings& env, std::string_view text) {
  switch (n.kind) {
    case Node::Kind::Number:
      return n.number;
    case Node::Kind::Symbol: {
      auto it = env.find(n.symbol);
      if (it == env.end()) throw FormulaError("formula '" + std::string(text) + "': unbound symbol '" + n.symbol + "'");
      return FormulaValue::of_int(it->second);
    }
    case Node::Kind::Pos:
      return eval(*n.lhs, env, text);
    case Node::Kind::Neg: {
      FormulaValue v = eval(*n.lhs, env, text);
      if (v.integral && v.i != INT64_MIN) return FormulaValue::of_int(-v.i);
      return FormulaValue::of_double(-v.as_double());
    }
    default:
      break;
  }
  FormulaValue a = eval(*n.lhs, env, text);
  FormulaValue b = eval(*n.rhs, env, text);
  switch (n.kind) {
    case Node::Kind::Add:
    case Node::Kind::Sub:
    case Node::Kind::Mul:
      if (a.integral && b.integral) return checked_int(a.i, b.i, n.kind);
      if (n.kind == Node::Kind::Add) return FormulaValue::of_double(a.as_double() + b.as_double());
      if (n.kind == Node::Kind::Sub) return FormulaValue::of_double(a.as_double() - b.as_double());
      return FormulaValue::of_double(a.as_double() * b.as_double());
    case Node::Kind::Div:
      if (b.as_double() == 0.0) throw FormulaError("formula '" + std::string(text) + "': division by zero");
      return FormulaValue::of_double(a.as_double() / b.as_double());
    case Node::Kind::Pow:
      if (a.integral && b.integral && b.i >= 0) return int_pow(a.i, b.i);
      if (a.as_double() == 0.0 && b.as_double() < 0.0)
        throw FormulaError("formula '" + std::string(text) + "': zero raised to a negative power");
      return FormulaValue::of_double(std::pow(a.as_double(), b.as_double()));
    default:
      throw FormulaError("formula '" + std::string(text) + "': internal evaluator error");
  }
}

}  // namespace

Formula Formula::parse(std::string_view text) {
  Formula f;
  f.text_ = std::string(text);
  Parser p(text, lex(text), f.symbols_);
  f.root_ = std::shared_ptr<const Node>(p.parse());
  return f;
}

FormulaValue Formula::evaluate(const Bindings& bindings) const {
  return eval(*root_, bindings, text_);
}

}  // namespace kopt
