// SPDX-License-Identifier: Apache-2.0
//
// Tokenizer and recursive-descent parser for the Python subset used by kernel
// modules. Produces a loosely typed syntax tree with byte-accurate spans so
// callers can slice the original source by declaration.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kopt::py {

struct Span {
  std::size_t begin = 0;  // byte offset, inclusive
  std::size_t end = 0;    // byte offset, exclusive
  int first_line = 0;     // 1-based
  int last_line = 0;
};

enum class TokenKind { Name, Number, String, Op, Newline, Indent, Dedent, End };

struct Token {
  TokenKind kind;
  std::string text;
  Span span;
};

enum class NodeKind {
  // statements
  Module, FunctionDef, ClassDef, Import, ImportFrom, Assign, AugAssign,
  AnnAssign, Return, If, For, While, With, Try, ExceptHandler, Raise, Assert,
  Pass, Break, Continue, Delete, Global, Nonlocal, ExprStmt, Arguments, Arg,
  Alias, WithItem,
  // expressions
  Name, Constant, JoinedStr, Attribute, Call, Keyword, Starred, BinOp,
  UnaryOp, BoolOp, Compare, IfExp, Lambda, Subscript, Slice, Tuple, List, Set,
  Dict, DictUnpack, ListComp, SetComp, DictComp, GeneratorExp, Comprehension,
  NamedExpr, Yield, YieldFrom, Await,
};

enum class ConstKind { None, Bool, Int, Float, Imaginary, Str, Bytes, Ellipsis };

// One node type for statements and expressions. The meaning of `value` and
// the layout of `children` depend on `kind`:
//   FunctionDef/ClassDef: value=name, children=body; decorators separate;
//                         FunctionDef keeps its Arguments node in `extra`.
//   ClassDef:             `extra` holds bases and keywords.
//   Import/ImportFrom:    value=module ("" for plain import), children=Alias.
//   Alias:                value=dotted name, as_name=alias.
//   Name:                 value=identifier.
//   Attribute:            value=attribute name, children[0]=object.
//   Call:                 children[0]=callee, rest=args (Starred/Keyword too).
//   Keyword:              value=arg name ("" for **), children[0]=value.
//   Constant:             value=raw token text, const_kind, str_value/int_value.
//   BinOp/UnaryOp/BoolOp: value=operator.
//   Assign:               children=targets..., value expr last.
struct Node {
  NodeKind kind;
  Span span;
  std::string value;
  std::string as_name;
  ConstKind const_kind = ConstKind::None;
  std::string str_value;
  std::optional<std::int64_t> int_value;
  std::vector<std::unique_ptr<Node>> children;
  std::vector<std::unique_ptr<Node>> decorators;
  std::vector<std::unique_ptr<Node>> extra;
};

using NodePtr = std::unique_ptr<Node>;

struct SyntaxError {
  std::string type;  // "SyntaxError", "IndentationError"
  std::string message;
  int line = 0;
  int column = 0;
  std::string line_text;

  std::string format() const;
};

struct ParseResult {
  NodePtr module;                     // set on success
  std::optional<SyntaxError> error;   // set on failure

  bool ok() const { return error == std::nullopt; }
};

// Tokenizes the whole source. Throws nothing; lexical errors are reported
// through the returned error.
struct TokenizeResult {
  std::vector<Token> tokens;
  std::optional<SyntaxError> error;
};
TokenizeResult tokenize(std::string_view source);

ParseResult parse(std::string_view source);

// Depth-first pre-order walk over children, decorators and extra.
template <typename F>
void walk(const Node& n, F&& visit) {
  visit(n);
  for (const auto& d : n.decorators) walk(*d, visit);
  for (const auto& e : n.extra) walk(*e, visit);
  for (const auto& c : n.children) walk(*c, visit);
}

// "a.b.c" for Name/Attribute chains, nullopt otherwise.
std::optional<std::string> dotted_name(const Node& n);

// Source text covered by a span.
inline std::string_view slice(std::string_view source, const Span& s) {
  return source.substr(s.begin, s.end - s.begin);
}

}  // namespace kopt::py
