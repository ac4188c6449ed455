// SPDX-License-Identifier: Apache-2.0
#include "kopt/pysyntax.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <unordered_set>

namespace kopt::py {
namespace {

// Thrown inside the parser and converted to a SyntaxError result at the API
// boundary.
struct Failure {
  SyntaxError error;
};

const std::unordered_set<std::string_view> kKeywords = {
    "False", "None",   "True",    "and",      "as",     "assert", "async",
    "await", "break",  "class",   "continue", "def",    "del",    "elif",
    "else",  "except", "finally", "for",      "from",   "global", "if",
    "import", "in",    "is",      "lambda",   "nonlocal", "not",  "or",
    "pass",  "raise",  "return",  "try",      "while",  "with",   "yield",
};

constexpr std::array<std::string_view, 5> kOps3 = {"**=", "//=", ">>=", "<<=", "..."};
constexpr std::array<std::string_view, 19> kOps2 = {
    "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<", ">>",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@="};
constexpr std::string_view kOps1 = "+-*/%@&|^~<>()[]{},:;.=";

bool is_ident_start(unsigned char c) {
  return std::isalpha(c) || c == '_' || c >= 0x80;
}
bool is_ident_char(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

bool is_string_prefix(std::string_view s) {
  if (s.empty() || s.size() > 2) return false;
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "r" || lower == "u" || lower == "b" || lower == "f" ||
         lower == "br" || lower == "rb" || lower == "fr" || lower == "rf";
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {
    line_starts_.push_back(0);
    for (std::size_t i = 0; i < src_.size(); ++i)
      if (src_[i] == '\n') line_starts_.push_back(i + 1);
  }

  std::string line_text(int line) const {
    if (line < 1 || static_cast<std::size_t>(line) > line_starts_.size()) return {};
    std::size_t b = line_starts_[line - 1];
    std::size_t e = src_.find('\n', b);
    if (e == std::string_view::npos) e = src_.size();
    std::string text(src_.substr(b, e - b));
    if (!text.empty() && text.back() == '\r') text.pop_back();
    return text;
  }

  [[noreturn]] void fail(const std::string& type, const std::string& msg,
                         std::size_t offset) const {
    int line = line_of(offset);
    int col = static_cast<int>(offset - line_starts_[line - 1]) + 1;
    throw Failure{SyntaxError{type, msg, line, col, line_text(line)}};
  }

  std::size_t line_start(int line) const { return line_starts_[line - 1]; }

  int line_of(std::size_t offset) const {
    auto it = std::upper_bound(line_starts_.begin(), line_starts_.end(), offset);
    return static_cast<int>(it - line_starts_.begin());
  }

  std::vector<Token> run() {
    std::vector<int> indents = {0};
    std::vector<std::pair<char, std::size_t>> brackets;
    bool line_start = true;
    bool line_has_tokens = false;

    while (pos_ < src_.size()) {
      if (line_start && brackets.empty()) {
        int col = 0;
        std::size_t p = pos_;
        while (p < src_.size()) {
          char c = src_[p];
          if (c == ' ') {
            ++col;
          } else if (c == '\t') {
            col = (col / 8 + 1) * 8;
          } else if (c == '\f') {
            col = 0;
          } else {
            break;
          }
          ++p;
        }
        // Blank and comment-only lines carry no indentation meaning.
        if (p >= src_.size() || src_[p] == '\n' || src_[p] == '\r' || src_[p] == '#') {
          while (p < src_.size() && src_[p] != '\n') ++p;
          pos_ = p < src_.size() ? p + 1 : p;
          continue;
        }
        pos_ = p;
        if (col > indents.back()) {
          indents.push_back(col);
          push(TokenKind::Indent, "", pos_, pos_);
        } else {
          while (col < indents.back()) {
            indents.pop_back();
            push(TokenKind::Dedent, "", pos_, pos_);
          }
          if (col != indents.back())
            fail("IndentationError", "unindent does not match any outer indentation level", pos_);
        }
        line_start = false;
      }

      char c = src_[pos_];
      if (c == ' ' || c == '\t' || c == '\f' || c == '\r') {
        ++pos_;
        continue;
      }
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        continue;
      }
      if (c == '\\') {
        std::size_t p = pos_ + 1;
        if (p < src_.size() && src_[p] == '\r') ++p;
        if (p < src_.size() && src_[p] == '\n') {
          pos_ = p + 1;
          continue;
        }
        if (p >= src_.size()) fail("SyntaxError", "unexpected EOF while parsing", pos_);
        fail("SyntaxError", "unexpected character after line continuation character", pos_);
      }
      if (c == '\n') {
        if (brackets.empty()) {
          if (line_has_tokens) push(TokenKind::Newline, "", pos_, pos_ + 1);
          line_has_tokens = false;
          line_start = true;
        }
        ++pos_;
        continue;
      }

      line_has_tokens = true;
      unsigned char uc = static_cast<unsigned char>(c);
      if (is_ident_start(uc)) {
        std::size_t b = pos_;
        while (pos_ < src_.size() && is_ident_char(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        std::string_view word = src_.substr(b, pos_ - b);
        if (pos_ < src_.size() && (src_[pos_] == '"' || src_[pos_] == '\'') &&
            is_string_prefix(word)) {
          lex_string(b);
        } else {
          push(TokenKind::Name, std::string(word), b, pos_);
        }
        continue;
      }
      if (std::isdigit(uc) ||
          (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        lex_number();
        continue;
      }
      if (c == '"' || c == '\'') {
        lex_string(pos_);
        continue;
      }
      if (lex_operator(brackets)) continue;

      char buf[64];
      std::snprintf(buf, sizeof buf, "invalid character '%c' (U+%04X)", c, static_cast<unsigned>(uc));
      fail("SyntaxError", buf, pos_);
    }

    if (!brackets.empty()) {
      std::string msg = "'";
      msg += brackets.back().first;
      msg += "' was never closed";
      fail("SyntaxError", msg, brackets.back().second);
    }
    if (line_has_tokens) push(TokenKind::Newline, "", src_.size(), src_.size());
    while (indents.size() > 1) {
      indents.pop_back();
      push(TokenKind::Dedent, "", src_.size(), src_.size());
    }
    push(TokenKind::End, "", src_.size(), src_.size());
    return std::move(tokens_);
  }

 private:
  void push(TokenKind k, std::string text, std::size_t b, std::size_t e) {
    Span s{b, e, line_of(b), line_of(e > b ? e - 1 : b)};
    tokens_.push_back(Token{k, std::move(text), s});
  }

  void lex_number() {
    std::size_t b = pos_;
    auto digits = [&](auto pred) {
      while (pos_ < src_.size() && (pred(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
    };
    auto is_dec = [](unsigned char ch) { return std::isdigit(ch) != 0; };
    if (src_[pos_] == '0' && pos_ + 1 < src_.size() &&
        std::strchr("xXoObB", src_[pos_ + 1]) != nullptr && src_[pos_ + 1] != '\0') {
      char base = static_cast<char>(std::tolower(static_cast<unsigned char>(src_[pos_ + 1])));
      pos_ += 2;
      std::size_t db = pos_;
      if (base == 'x') digits([](unsigned char ch) { return std::isxdigit(ch) != 0; });
      if (base == 'o') digits([](unsigned char ch) { return ch >= '0' && ch <= '7'; });
      if (base == 'b') digits([](unsigned char ch) { return ch == '0' || ch == '1'; });
      if (pos_ == db) fail("SyntaxError", "invalid number literal", b);
    } else {
      digits(is_dec);
      if (pos_ < src_.size() && src_[pos_] == '.') {
        ++pos_;
        digits(is_dec);
      }
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        std::size_t save = pos_;
        ++pos_;
        if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
        std::size_t db = pos_;
        digits(is_dec);
        if (pos_ == db) pos_ = save;
      }
      if (pos_ < src_.size() && (src_[pos_] == 'j' || src_[pos_] == 'J')) ++pos_;
    }
    if (pos_ < src_.size() && is_ident_char(static_cast<unsigned char>(src_[pos_])))
      fail("SyntaxError", "invalid decimal literal", pos_);
    push(TokenKind::Number, std::string(src_.substr(b, pos_ - b)), b, pos_);
  }

  void lex_string(std::size_t begin) {
    char q = src_[pos_];
    bool triple = pos_ + 2 < src_.size() && src_[pos_ + 1] == q && src_[pos_ + 2] == q;
    pos_ += triple ? 3 : 1;
    for (;;) {
      if (pos_ >= src_.size()) {
        fail("SyntaxError",
             triple ? "unterminated triple-quoted string literal" : "unterminated string literal",
             begin);
      }
      char c = src_[pos_];
      if (c == '\\') {
        pos_ += 2;
        continue;
      }
      if (!triple && c == '\n') fail("SyntaxError", "unterminated string literal", begin);
      if (c == q) {
        if (!triple) {
          ++pos_;
          break;
        }
        if (pos_ + 2 < src_.size() && src_[pos_ + 1] == q && src_[pos_ + 2] == q) {
          pos_ += 3;
          break;
        }
      }
      ++pos_;
    }
    push(TokenKind::String, std::string(src_.substr(begin, pos_ - begin)), begin, pos_);
  }

  bool lex_operator(std::vector<std::pair<char, std::size_t>>& brackets) {
    std::string_view rest = src_.substr(pos_);
    for (auto op : kOps3) {
      if (rest.substr(0, 3) == op) {
        push(TokenKind::Op, std::string(op), pos_, pos_ + 3);
        pos_ += 3;
        return true;
      }
    }
    for (auto op : kOps2) {
      if (rest.substr(0, 2) == op) {
        push(TokenKind::Op, std::string(op), pos_, pos_ + 2);
        pos_ += 2;
        return true;
      }
    }
    char c = src_[pos_];
    if (kOps1.find(c) == std::string_view::npos) return false;
    if (c == '(' || c == '[' || c == '{') {
      brackets.emplace_back(c, pos_);
    } else if (c == ')' || c == ']' || c == '}') {
      char open = c == ')' ? '(' : c == ']' ? '[' : '{';
      if (brackets.empty()) fail("SyntaxError", std::string("unmatched '") + c + "'", pos_);
      if (brackets.back().first != open) {
        std::string msg = "closing parenthesis '";
        msg += c;
        msg += "' does not match opening parenthesis '";
        msg += brackets.back().first;
        msg += "'";
        fail("SyntaxError", msg, pos_);
      }
      brackets.pop_back();
    }
    push(TokenKind::Op, std::string(1, c), pos_, pos_ + 1);
    ++pos_;
    return true;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::vector<std::size_t> line_starts_;
  std::vector<Token> tokens_;
};

// Strips prefix and quotes; decodes common escapes unless raw.
std::string decode_string_token(const std::string& raw, bool* is_bytes, bool* is_fstring) {
  std::size_t i = 0;
  bool is_raw = false;
  while (i < raw.size() && raw[i] != '"' && raw[i] != '\'') {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw[i])));
    if (c == 'r') is_raw = true;
    if (c == 'b') *is_bytes = true;
    if (c == 'f') *is_fstring = true;
    ++i;
  }
  char q = raw[i];
  std::size_t qlen = (i + 2 < raw.size() && raw[i + 1] == q && raw[i + 2] == q) ? 3 : 1;
  std::string_view body(raw.data() + i + qlen, raw.size() - i - 2 * qlen);
  if (is_raw) return std::string(body);
  std::string out;
  for (std::size_t k = 0; k < body.size(); ++k) {
    if (body[k] != '\\' || k + 1 >= body.size()) {
      out.push_back(body[k]);
      continue;
    }
    char e = body[++k];
    switch (e) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case '0': out.push_back('\0'); break;
      case '\\': out.push_back('\\'); break;
      case '\'': out.push_back('\''); break;
      case '"': out.push_back('"'); break;
      case '\n': break;
      default:
        out.push_back('\\');
        out.push_back(e);
    }
  }
  return out;
}

std::optional<std::int64_t> parse_int_literal(const std::string& text) {
  std::string digits;
  for (char c : text)
    if (c != '_') digits.push_back(c);
  int base = 10;
  std::size_t start = 0;
  if (digits.size() > 2 && digits[0] == '0') {
    char b = static_cast<char>(std::tolower(static_cast<unsigned char>(digits[1])));
    if (b == 'x') base = 16;
    if (b == 'o') base = 8;
    if (b == 'b') base = 2;
    if (base != 10) start = 2;
  }
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(digits.data() + start, digits.data() + digits.size(), v, base);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return v;
}

class Parser {
 public:
  Parser(const Lexer& lexer, std::vector<Token> tokens)
      : lexer_(lexer), toks_(std::move(tokens)) {}

  NodePtr parse_module() {
    auto mod = make(NodeKind::Module, 0);
    while (!at(TokenKind::End)) {
      if (at(TokenKind::Newline)) {
        ++i_;
        continue;
      }
      if (at(TokenKind::Indent)) fail_indent("unexpected indent");
      parse_statement(mod->children);
    }
    mod->span = Span{0, toks_.back().span.end, 1, toks_.back().span.last_line};
    return mod;
  }

 private:
  // ---- token helpers ----------------------------------------------------
  const Token& cur() const { return toks_[i_]; }
  bool at(TokenKind k) const { return cur().kind == k; }
  bool at_op(std::string_view op) const { return cur().kind == TokenKind::Op && cur().text == op; }
  bool at_kw(std::string_view kw) const { return cur().kind == TokenKind::Name && cur().text == kw; }
  bool peek_kw(std::size_t ahead, std::string_view kw) const {
    std::size_t j = std::min(i_ + ahead, toks_.size() - 1);
    return toks_[j].kind == TokenKind::Name && toks_[j].text == kw;
  }

  const Token& advance() {
    const Token& t = toks_[i_];
    if (t.kind != TokenKind::Newline && t.kind != TokenKind::Indent &&
        t.kind != TokenKind::Dedent && t.kind != TokenKind::End) {
      last_end_ = t.span.end;
      last_line_ = t.span.last_line;
    }
    ++i_;
    return t;
  }

  [[noreturn]] void fail_at(const Token& t, const std::string& msg,
                            const std::string& type = "SyntaxError") const {
    if (t.kind == TokenKind::End) {
      int line = std::max(1, last_line_);
      std::string message = msg == "invalid syntax" ? "unexpected EOF while parsing" : msg;
      throw Failure{SyntaxError{type, message, line, 1, lexer_.line_text(line)}};
    }
    int line = t.span.first_line;
    int col = static_cast<int>(t.span.begin - lexer_.line_start(line)) + 1;
    throw Failure{SyntaxError{type, msg, line, col, lexer_.line_text(line)}};
  }
  [[noreturn]] void fail_here(const std::string& msg = "invalid syntax") const { fail_at(cur(), msg); }
  [[noreturn]] void fail_indent(const std::string& msg) const { fail_at(cur(), msg, "IndentationError"); }

  void expect_op(std::string_view op) {
    if (!at_op(op)) fail_here();
    advance();
  }
  void expect_kw(std::string_view kw) {
    if (!at_kw(kw)) fail_here();
    advance();
  }
  std::string expect_name() {
    if (!at(TokenKind::Name) || kKeywords.count(cur().text)) fail_here();
    return advance().text;
  }

  NodePtr make(NodeKind k, std::size_t begin_tok) {
    auto n = std::make_unique<Node>();
    n->kind = k;
    const Token& t = toks_[std::min(begin_tok, toks_.size() - 1)];
    n->span.begin = t.span.begin;
    n->span.first_line = t.span.first_line;
    return n;
  }
  NodePtr finish(NodePtr n) {
    n->span.end = std::max(last_end_, n->span.begin);
    n->span.last_line = std::max(last_line_, n->span.first_line);
    return n;
  }
  NodePtr wrap(NodeKind k, NodePtr first) {
    auto n = std::make_unique<Node>();
    n->kind = k;
    n->span.begin = first->span.begin;
    n->span.first_line = first->span.first_line;
    n->children.push_back(std::move(first));
    return n;
  }

  // ---- statements -------------------------------------------------------
  void parse_statement(std::vector<NodePtr>& out) {
    if (at_op("@")) {
      out.push_back(parse_decorated());
      return;
    }
    if (at_kw("def")) {
      out.push_back(parse_funcdef(i_));
      return;
    }
    if (at_kw("class")) {
      out.push_back(parse_classdef(i_));
      return;
    }
    if (at_kw("async") && (peek_kw(1, "def") || peek_kw(1, "for") || peek_kw(1, "with"))) {
      std::size_t b = i_;
      advance();
      if (at_kw("def")) out.push_back(parse_funcdef(b));
      else if (at_kw("for")) out.push_back(parse_for(b));
      else out.push_back(parse_with(b));
      return;
    }
    if (at_kw("if")) {
      out.push_back(parse_if());
      return;
    }
    if (at_kw("while")) {
      out.push_back(parse_while());
      return;
    }
    if (at_kw("for")) {
      out.push_back(parse_for(i_));
      return;
    }
    if (at_kw("try")) {
      out.push_back(parse_try());
      return;
    }
    if (at_kw("with")) {
      out.push_back(parse_with(i_));
      return;
    }
    parse_simple_statements(out);
  }

  void parse_simple_statements(std::vector<NodePtr>& out) {
    out.push_back(parse_small_statement());
    while (at_op(";")) {
      advance();
      if (at(TokenKind::Newline)) break;
      out.push_back(parse_small_statement());
    }
    if (!at(TokenKind::Newline)) fail_here();
    advance();
  }

  void parse_block(std::vector<NodePtr>& body, const char* what, int header_line) {
    expect_op(":");
    if (at(TokenKind::Newline)) {
      advance();
      if (!at(TokenKind::Indent)) {
        fail_indent(std::string("expected an indented block after ") + what + " on line " +
                    std::to_string(header_line));
      }
      advance();
      while (!at(TokenKind::Dedent) && !at(TokenKind::End)) {
        if (at(TokenKind::Indent)) fail_indent("unexpected indent");
        parse_statement(body);
      }
      if (at(TokenKind::Dedent)) advance();
    } else {
      parse_simple_statements(body);
    }
  }

  NodePtr parse_decorated() {
    std::size_t b = i_;
    std::vector<NodePtr> decos;
    while (at_op("@")) {
      advance();
      decos.push_back(parse_namedexpr());
      if (!at(TokenKind::Newline)) fail_here();
      advance();
    }
    NodePtr def;
    if (at_kw("def")) {
      def = parse_funcdef(i_);
    } else if (at_kw("class")) {
      def = parse_classdef(i_);
    } else if (at_kw("async") && peek_kw(1, "def")) {
      std::size_t ab = i_;
      advance();
      def = parse_funcdef(ab);
    } else {
      fail_here();
    }
    def->decorators = std::move(decos);
    def->span.begin = toks_[b].span.begin;
    def->span.first_line = toks_[b].span.first_line;
    return def;
  }

  NodePtr parse_funcdef(std::size_t b) {
    int header_line = cur().span.first_line;
    expect_kw("def");
    auto n = make(NodeKind::FunctionDef, b);
    n->value = expect_name();
    expect_op("(");
    n->extra.push_back(parse_parameters(")", true));
    expect_op(")");
    if (at_op("->")) {
      advance();
      n->extra.push_back(parse_test());
    }
    parse_block(n->children, "function definition", header_line);
    return finish(std::move(n));
  }

  // Parameters up to (not including) `closer`.
  NodePtr parse_parameters(std::string_view closer, bool annotations) {
    auto args = make(NodeKind::Arguments, i_);
    bool seen_default = false;
    bool seen_star = false;
    bool seen_kwargs = false;
    while (!at_op(closer)) {
      if (seen_kwargs) fail_here();
      auto arg = make(NodeKind::Arg, i_);
      if (at_op("/")) {
        advance();
        arg->value = "/";
      } else if (at_op("*")) {
        if (seen_star) fail_here();
        seen_star = true;
        advance();
        arg->as_name = "*";
        if (at(TokenKind::Name)) {
          arg->value = expect_name();
          if (annotations && at_op(":")) {
            advance();
            arg->children.push_back(parse_test());
          }
        } else {
          arg->value = "*";
        }
      } else if (at_op("**")) {
        advance();
        arg->as_name = "**";
        arg->value = expect_name();
        if (annotations && at_op(":")) {
          advance();
          arg->children.push_back(parse_test());
        }
        seen_kwargs = true;
      } else {
        arg->value = expect_name();
        if (annotations && at_op(":")) {
          advance();
          arg->children.push_back(parse_test());
        }
        if (at_op("=")) {
          advance();
          arg->extra.push_back(parse_test());
          seen_default = true;
        } else if (seen_default && !seen_star) {
          fail_at(toks_[i_ - 1], "non-default argument follows default argument");
        }
      }
      args->children.push_back(finish(std::move(arg)));
      if (!at_op(",")) break;
      advance();
    }
    if (!at_op(closer)) fail_here();
    return finish(std::move(args));
  }

  NodePtr parse_classdef(std::size_t b) {
    int header_line = cur().span.first_line;
    expect_kw("class");
    auto n = make(NodeKind::ClassDef, b);
    n->value = expect_name();
    if (at_op("(")) {
      advance();
      parse_arglist(n->extra, ")");
      expect_op(")");
    }
    parse_block(n->children, "class definition", header_line);
    return finish(std::move(n));
  }

  NodePtr parse_if() {
    std::size_t b = i_;
    int header_line = cur().span.first_line;
    advance();  // if / elif
    auto n = make(NodeKind::If, b);
    n->children.push_back(parse_namedexpr());
    parse_block(n->children, "'if' statement", header_line);
    if (at_kw("elif")) {
      n->extra.push_back(parse_if());
    } else if (at_kw("else")) {
      int line = cur().span.first_line;
      advance();
      parse_block(n->extra, "'else' statement", line);
    }
    return finish(std::move(n));
  }

  NodePtr parse_while() {
    std::size_t b = i_;
    int header_line = cur().span.first_line;
    advance();
    auto n = make(NodeKind::While, b);
    n->children.push_back(parse_namedexpr());
    parse_block(n->children, "'while' statement", header_line);
    if (at_kw("else")) {
      int line = cur().span.first_line;
      advance();
      parse_block(n->extra, "'else' statement", line);
    }
    return finish(std::move(n));
  }

  NodePtr parse_for(std::size_t b) {
    int header_line = cur().span.first_line;
    expect_kw("for");
    auto n = make(NodeKind::For, b);
    auto target = parse_exprlist();
    check_target(*target, toks_[b]);
    n->children.push_back(std::move(target));
    expect_kw("in");
    n->children.push_back(parse_testlist_star());
    parse_block(n->children, "'for' statement", header_line);
    if (at_kw("else")) {
      int line = cur().span.first_line;
      advance();
      parse_block(n->extra, "'else' statement", line);
    }
    return finish(std::move(n));
  }

  NodePtr parse_try() {
    std::size_t b = i_;
    int header_line = cur().span.first_line;
    advance();
    auto n = make(NodeKind::Try, b);
    parse_block(n->children, "'try' statement", header_line);
    bool handlers = false;
    while (at_kw("except")) {
      handlers = true;
      std::size_t hb = i_;
      int line = cur().span.first_line;
      advance();
      if (at_op("*")) advance();
      auto h = make(NodeKind::ExceptHandler, hb);
      if (!at_op(":")) {
        h->extra.push_back(parse_test());
        if (at_kw("as")) {
          advance();
          h->value = expect_name();
        }
      }
      parse_block(h->children, "'except' statement", line);
      n->extra.push_back(finish(std::move(h)));
    }
    if (handlers && at_kw("else")) {
      int line = cur().span.first_line;
      advance();
      parse_block(n->extra, "'else' statement", line);
    }
    bool fin = false;
    if (at_kw("finally")) {
      fin = true;
      int line = cur().span.first_line;
      advance();
      parse_block(n->extra, "'finally' statement", line);
    }
    if (!handlers && !fin) fail_here("expected 'except' or 'finally' block");
    return finish(std::move(n));
  }

  NodePtr parse_with(std::size_t b) {
    int header_line = cur().span.first_line;
    expect_kw("with");
    auto n = make(NodeKind::With, b);
    for (;;) {
      auto item = make(NodeKind::WithItem, i_);
      item->children.push_back(parse_test());
      if (at_kw("as")) {
        advance();
        auto target = parse_expr();
        check_target(*target, toks_[i_ - 1]);
        item->children.push_back(std::move(target));
      }
      n->extra.push_back(finish(std::move(item)));
      if (!at_op(",")) break;
      advance();
    }
    parse_block(n->children, "'with' statement", header_line);
    return finish(std::move(n));
  }

  NodePtr parse_small_statement() {
    std::size_t b = i_;
    if (at_kw("pass") || at_kw("break") || at_kw("continue")) {
      NodeKind k = at_kw("pass") ? NodeKind::Pass : at_kw("break") ? NodeKind::Break : NodeKind::Continue;
      auto n = make(k, b);
      advance();
      return finish(std::move(n));
    }
    if (at_kw("return")) {
      auto n = make(NodeKind::Return, b);
      advance();
      if (can_start_expression()) n->children.push_back(parse_testlist_star());
      return finish(std::move(n));
    }
    if (at_kw("raise")) {
      auto n = make(NodeKind::Raise, b);
      advance();
      if (can_start_expression()) {
        n->children.push_back(parse_test());
        if (at_kw("from")) {
          advance();
          n->children.push_back(parse_test());
        }
      }
      return finish(std::move(n));
    }
    if (at_kw("global") || at_kw("nonlocal")) {
      auto n = make(at_kw("global") ? NodeKind::Global : NodeKind::Nonlocal, b);
      advance();
      for (;;) {
        auto name = make(NodeKind::Name, i_);
        name->value = expect_name();
        n->children.push_back(finish(std::move(name)));
        if (!at_op(",")) break;
        advance();
      }
      return finish(std::move(n));
    }
    if (at_kw("del")) {
      auto n = make(NodeKind::Delete, b);
      advance();
      n->children.push_back(parse_exprlist());
      return finish(std::move(n));
    }
    if (at_kw("assert")) {
      auto n = make(NodeKind::Assert, b);
      advance();
      n->children.push_back(parse_test());
      if (at_op(",")) {
        advance();
        n->children.push_back(parse_test());
      }
      return finish(std::move(n));
    }
    if (at_kw("import")) return parse_import();
    if (at_kw("from")) return parse_from_import();
    return parse_expr_statement();
  }

  std::string parse_dotted() {
    std::string name = expect_name();
    while (at_op(".")) {
      advance();
      name += ".";
      name += expect_name();
    }
    return name;
  }

  NodePtr parse_import() {
    auto n = make(NodeKind::Import, i_);
    advance();
    for (;;) {
      auto alias = make(NodeKind::Alias, i_);
      alias->value = parse_dotted();
      if (at_kw("as")) {
        advance();
        alias->as_name = expect_name();
      }
      n->children.push_back(finish(std::move(alias)));
      if (!at_op(",")) break;
      advance();
    }
    return finish(std::move(n));
  }

  NodePtr parse_from_import() {
    auto n = make(NodeKind::ImportFrom, i_);
    advance();
    std::string module;
    while (at_op(".") || at_op("...")) module += advance().text;
    if (!at_kw("import")) module += parse_dotted();
    if (module.empty()) fail_here();
    n->value = module;
    expect_kw("import");
    if (at_op("*")) {
      auto alias = make(NodeKind::Alias, i_);
      advance();
      alias->value = "*";
      n->children.push_back(finish(std::move(alias)));
      return finish(std::move(n));
    }
    bool paren = at_op("(");
    if (paren) advance();
    for (;;) {
      auto alias = make(NodeKind::Alias, i_);
      alias->value = expect_name();
      if (at_kw("as")) {
        advance();
        alias->as_name = expect_name();
      }
      n->children.push_back(finish(std::move(alias)));
      if (!at_op(",")) break;
      advance();
      if (paren && at_op(")")) break;
    }
    if (paren) expect_op(")");
    return finish(std::move(n));
  }

  NodePtr parse_expr_statement() {
    std::size_t b = i_;
    const Token& first = cur();
    NodePtr lhs = at_kw("yield") ? parse_yield() : parse_testlist_star();
    static const std::unordered_set<std::string_view> aug = {
        "+=", "-=", "*=", "/=", "//=", "%=", "@=", "&=", "|=", "^=", ">>=", "<<=", "**="};
    if (cur().kind == TokenKind::Op && aug.count(cur().text)) {
      if (lhs->kind != NodeKind::Name && lhs->kind != NodeKind::Attribute &&
          lhs->kind != NodeKind::Subscript)
        fail_at(first, "'" + describe(*lhs) + "' is an illegal expression for augmented assignment");
      auto n = make(NodeKind::AugAssign, b);
      n->value = advance().text;
      n->children.push_back(std::move(lhs));
      n->children.push_back(at_kw("yield") ? parse_yield() : parse_testlist_star());
      return finish(std::move(n));
    }
    if (at_op(":")) {
      if (lhs->kind != NodeKind::Name && lhs->kind != NodeKind::Attribute &&
          lhs->kind != NodeKind::Subscript)
        fail_at(first, "illegal target for annotation");
      auto n = make(NodeKind::AnnAssign, b);
      advance();
      n->children.push_back(std::move(lhs));
      n->children.push_back(parse_test());
      if (at_op("=")) {
        advance();
        n->children.push_back(at_kw("yield") ? parse_yield() : parse_testlist_star());
      }
      return finish(std::move(n));
    }
    if (at_op("=")) {
      auto n = make(NodeKind::Assign, b);
      NodePtr value = std::move(lhs);
      while (at_op("=")) {
        const Token& eq = cur();
        check_target(*value, eq);
        n->children.push_back(std::move(value));
        advance();
        value = at_kw("yield") ? parse_yield() : parse_testlist_star();
      }
      n->children.push_back(std::move(value));
      return finish(std::move(n));
    }
    auto n = make(NodeKind::ExprStmt, b);
    n->children.push_back(std::move(lhs));
    return finish(std::move(n));
  }

  static std::string describe(const Node& n) {
    switch (n.kind) {
      case NodeKind::Call: return "function call";
      case NodeKind::Constant: return "literal";
      case NodeKind::BinOp:
      case NodeKind::UnaryOp:
      case NodeKind::BoolOp: return "expression";
      case NodeKind::Compare: return "comparison";
      case NodeKind::Lambda: return "lambda";
      case NodeKind::IfExp: return "conditional expression";
      default: return "expression";
    }
  }

  void check_target(const Node& n, const Token& where) {
    switch (n.kind) {
      case NodeKind::Name:
      case NodeKind::Attribute:
      case NodeKind::Subscript:
        return;
      case NodeKind::Starred:
        check_target(*n.children[0], where);
        return;
      case NodeKind::Tuple:
      case NodeKind::List:
        for (const auto& c : n.children) check_target(*c, where);
        return;
      default:
        fail_at(where, "cannot assign to " + describe(n));
    }
  }

  // ---- expressions ------------------------------------------------------
  bool can_start_expression() const {
    const Token& t = cur();
    switch (t.kind) {
      case TokenKind::Name:
        if (!kKeywords.count(t.text)) return true;
        return t.text == "None" || t.text == "True" || t.text == "False" || t.text == "not" ||
               t.text == "lambda" || t.text == "await" || t.text == "yield";
      case TokenKind::Number:
      case TokenKind::String:
        return true;
      case TokenKind::Op:
        return t.text == "(" || t.text == "[" || t.text == "{" || t.text == "-" ||
               t.text == "+" || t.text == "~" || t.text == "*" || t.text == "..." ||
               t.text == "**";
      default:
        return false;
    }
  }

  NodePtr parse_yield() {
    auto n = make(NodeKind::Yield, i_);
    expect_kw("yield");
    if (at_kw("from")) {
      advance();
      n->kind = NodeKind::YieldFrom;
      n->children.push_back(parse_test());
    } else if (can_start_expression()) {
      n->children.push_back(parse_testlist_star());
    }
    return finish(std::move(n));
  }

  NodePtr parse_star_or(NodePtr (Parser::*inner)()) {
    if (at_op("*")) {
      auto n = make(NodeKind::Starred, i_);
      advance();
      n->children.push_back(parse_expr());
      return finish(std::move(n));
    }
    return (this->*inner)();
  }

  // Comma-separated list; builds a Tuple when a comma is present.
  NodePtr parse_tuple_of(NodePtr (Parser::*element)(), bool allow_star) {
    std::size_t b = i_;
    NodePtr first = allow_star ? parse_star_or(element) : (this->*element)();
    if (!at_op(",")) return first;
    auto t = make(NodeKind::Tuple, b);
    t->children.push_back(std::move(first));
    while (at_op(",")) {
      advance();
      if (!can_start_expression() || at_op("**")) break;
      t->children.push_back(allow_star ? parse_star_or(element) : (this->*element)());
    }
    return finish(std::move(t));
  }

  NodePtr parse_testlist_star() { return parse_tuple_of(&Parser::parse_test, true); }
  NodePtr parse_exprlist() { return parse_tuple_of(&Parser::parse_expr, true); }

  NodePtr parse_namedexpr() {
    std::size_t b = i_;
    NodePtr lhs = parse_test();
    if (at_op(":=")) {
      if (lhs->kind != NodeKind::Name) fail_here("cannot use assignment expressions with " + describe(*lhs));
      auto n = make(NodeKind::NamedExpr, b);
      advance();
      n->children.push_back(std::move(lhs));
      n->children.push_back(parse_test());
      return finish(std::move(n));
    }
    return lhs;
  }

  NodePtr parse_test() {
    if (at_kw("lambda")) return parse_lambda(true);
    std::size_t b = i_;
    NodePtr body = parse_or();
    if (at_kw("if")) {
      auto n = make(NodeKind::IfExp, b);
      advance();
      n->children.push_back(std::move(body));
      n->children.push_back(parse_or());
      if (!at_kw("else")) fail_here("expected 'else' after 'if' expression");
      advance();
      n->children.push_back(parse_test());
      return finish(std::move(n));
    }
    return body;
  }

  NodePtr parse_test_nocond() {
    if (at_kw("lambda")) return parse_lambda(false);
    return parse_or();
  }

  NodePtr parse_lambda(bool allow_cond) {
    auto n = make(NodeKind::Lambda, i_);
    advance();
    n->extra.push_back(parse_parameters(":", false));
    expect_op(":");
    n->children.push_back(allow_cond ? parse_test() : parse_test_nocond());
    return finish(std::move(n));
  }

  NodePtr parse_bool(const char* op, NodePtr (Parser::*inner)()) {
    std::size_t b = i_;
    NodePtr lhs = (this->*inner)();
    if (!at_kw(op)) return lhs;
    auto n = make(NodeKind::BoolOp, b);
    n->value = op;
    n->children.push_back(std::move(lhs));
    while (at_kw(op)) {
      advance();
      n->children.push_back((this->*inner)());
    }
    return finish(std::move(n));
  }
  NodePtr parse_or() { return parse_bool("or", &Parser::parse_and); }
  NodePtr parse_and() { return parse_bool("and", &Parser::parse_not); }

  NodePtr parse_not() {
    if (at_kw("not")) {
      auto n = make(NodeKind::UnaryOp, i_);
      advance();
      n->value = "not";
      n->children.push_back(parse_not());
      return finish(std::move(n));
    }
    return parse_comparison();
  }

  std::optional<std::string> comparison_op() {
    if (cur().kind == TokenKind::Op) {
      static const std::unordered_set<std::string_view> ops = {"<", ">", "==", ">=", "<=", "!="};
      if (ops.count(cur().text)) return advance().text;
      return std::nullopt;
    }
    if (at_kw("in")) {
      advance();
      return std::string("in");
    }
    if (at_kw("not") && peek_kw(1, "in")) {
      advance();
      advance();
      return std::string("not in");
    }
    if (at_kw("is")) {
      advance();
      if (at_kw("not")) {
        advance();
        return std::string("is not");
      }
      return std::string("is");
    }
    return std::nullopt;
  }

  NodePtr parse_comparison() {
    std::size_t b = i_;
    NodePtr lhs = parse_expr();
    auto op = comparison_op();
    if (!op) return lhs;
    auto n = make(NodeKind::Compare, b);
    n->children.push_back(std::move(lhs));
    while (op) {
      n->value += (n->value.empty() ? "" : " ") + *op;
      n->children.push_back(parse_expr());
      op = comparison_op();
    }
    return finish(std::move(n));
  }

  NodePtr parse_binary(std::initializer_list<std::string_view> ops, NodePtr (Parser::*inner)()) {
    NodePtr lhs = (this->*inner)();
    for (;;) {
      if (cur().kind != TokenKind::Op) return lhs;
      bool match = false;
      for (auto op : ops) match = match || cur().text == op;
      if (!match) return lhs;
      auto n = wrap(NodeKind::BinOp, std::move(lhs));
      n->value = advance().text;
      n->children.push_back((this->*inner)());
      lhs = finish(std::move(n));
    }
  }
  NodePtr parse_expr() { return parse_binary({"|"}, &Parser::parse_xor); }
  NodePtr parse_xor() { return parse_binary({"^"}, &Parser::parse_band); }
  NodePtr parse_band() { return parse_binary({"&"}, &Parser::parse_shift); }
  NodePtr parse_shift() { return parse_binary({"<<", ">>"}, &Parser::parse_arith); }
  NodePtr parse_arith() { return parse_binary({"+", "-"}, &Parser::parse_term); }
  NodePtr parse_term() { return parse_binary({"*", "/", "//", "%", "@"}, &Parser::parse_factor); }

  NodePtr parse_factor() {
    if (at_op("+") || at_op("-") || at_op("~")) {
      auto n = make(NodeKind::UnaryOp, i_);
      n->value = advance().text;
      n->children.push_back(parse_factor());
      return finish(std::move(n));
    }
    return parse_power();
  }

  NodePtr parse_power() {
    std::size_t b = i_;
    NodePtr base;
    if (at_kw("await")) {
      auto n = make(NodeKind::Await, b);
      advance();
      n->children.push_back(parse_atom_expr());
      base = finish(std::move(n));
    } else {
      base = parse_atom_expr();
    }
    if (at_op("**")) {
      auto n = wrap(NodeKind::BinOp, std::move(base));
      n->value = advance().text;
      n->children.push_back(parse_factor());
      return finish(std::move(n));
    }
    return base;
  }

  NodePtr parse_atom_expr() {
    NodePtr node = parse_atom();
    for (;;) {
      if (at_op("(")) {
        auto call = wrap(NodeKind::Call, std::move(node));
        advance();
        parse_arglist(call->children, ")");
        expect_op(")");
        node = finish(std::move(call));
      } else if (at_op("[")) {
        auto sub = wrap(NodeKind::Subscript, std::move(node));
        advance();
        sub->children.push_back(parse_subscript_list());
        expect_op("]");
        node = finish(std::move(sub));
      } else if (at_op(".")) {
        auto attr = wrap(NodeKind::Attribute, std::move(node));
        advance();
        attr->value = expect_name();
        node = finish(std::move(attr));
      } else {
        return node;
      }
    }
  }

  void parse_arglist(std::vector<NodePtr>& out, std::string_view closer) {
    bool seen_keyword = false;
    while (!at_op(closer)) {
      std::size_t b = i_;
      if (at_op("**")) {
        auto kw = make(NodeKind::Keyword, b);
        advance();
        kw->children.push_back(parse_test());
        out.push_back(finish(std::move(kw)));
        seen_keyword = true;
      } else if (at_op("*")) {
        auto st = make(NodeKind::Starred, b);
        advance();
        st->children.push_back(parse_test());
        out.push_back(finish(std::move(st)));
      } else {
        NodePtr arg = parse_test();
        if (at_op("=")) {
          if (arg->kind != NodeKind::Name) fail_here("expression cannot contain assignment, perhaps you meant \"==\"?");
          auto kw = make(NodeKind::Keyword, b);
          kw->value = arg->value;
          advance();
          kw->children.push_back(parse_test());
          out.push_back(finish(std::move(kw)));
          seen_keyword = true;
        } else if (at_op(":=")) {
          if (arg->kind != NodeKind::Name) fail_here();
          auto n = make(NodeKind::NamedExpr, b);
          advance();
          n->children.push_back(std::move(arg));
          n->children.push_back(parse_test());
          out.push_back(finish(std::move(n)));
        } else if (at_kw("for") || at_kw("async")) {
          auto gen = make(NodeKind::GeneratorExp, b);
          gen->children.push_back(std::move(arg));
          parse_comprehension(gen->extra);
          out.push_back(finish(std::move(gen)));
        } else {
          if (seen_keyword) fail_at(toks_[b], "positional argument follows keyword argument");
          out.push_back(std::move(arg));
        }
      }
      if (!at_op(",")) break;
      advance();
    }
  }

  NodePtr parse_subscript() {
    std::size_t b = i_;
    NodePtr lower;
    if (!at_op(":")) {
      lower = parse_namedexpr();
      if (!at_op(":")) return lower;
    }
    auto s = make(NodeKind::Slice, b);
    advance();  // ':'
    auto maybe = [&]() -> NodePtr {
      if (at_op(":") || at_op(",") || at_op("]")) return nullptr;
      return parse_test();
    };
    auto add = [&](NodePtr p) {
      if (!p) {
        auto empty = make(NodeKind::Constant, i_);
        empty->const_kind = ConstKind::None;
        p = finish(std::move(empty));
      }
      s->children.push_back(std::move(p));
    };
    add(std::move(lower));
    add(maybe());
    if (at_op(":")) {
      advance();
      add(maybe());
    }
    return finish(std::move(s));
  }

  NodePtr parse_subscript_list() {
    std::size_t b = i_;
    NodePtr first = parse_star_or(&Parser::parse_subscript);
    if (!at_op(",")) return first;
    auto t = make(NodeKind::Tuple, b);
    t->children.push_back(std::move(first));
    while (at_op(",")) {
      advance();
      if (at_op("]")) break;
      t->children.push_back(parse_star_or(&Parser::parse_subscript));
    }
    return finish(std::move(t));
  }

  void parse_comprehension(std::vector<NodePtr>& out) {
    while (at_kw("for") || at_kw("async")) {
      auto c = make(NodeKind::Comprehension, i_);
      if (at_kw("async")) advance();
      expect_kw("for");
      auto target = parse_exprlist();
      check_target(*target, toks_[i_ - 1]);
      c->children.push_back(std::move(target));
      expect_kw("in");
      c->children.push_back(parse_or());
      while (at_kw("if")) {
        advance();
        c->children.push_back(parse_test_nocond());
      }
      out.push_back(finish(std::move(c)));
    }
  }

  NodePtr parse_atom() {
    std::size_t b = i_;
    const Token& t = cur();
    if (t.kind == TokenKind::Name) {
      if (t.text == "None" || t.text == "True" || t.text == "False") {
        auto n = make(NodeKind::Constant, b);
        n->value = t.text;
        n->const_kind = t.text == "None" ? ConstKind::None : ConstKind::Bool;
        advance();
        return finish(std::move(n));
      }
      if (kKeywords.count(t.text)) fail_here();
      auto n = make(NodeKind::Name, b);
      n->value = advance().text;
      return finish(std::move(n));
    }
    if (t.kind == TokenKind::Number) {
      auto n = make(NodeKind::Constant, b);
      n->value = advance().text;
      char last = static_cast<char>(std::tolower(static_cast<unsigned char>(n->value.back())));
      bool hex = n->value.size() > 1 && (n->value[1] == 'x' || n->value[1] == 'X');
      if (last == 'j') {
        n->const_kind = ConstKind::Imaginary;
      } else if (!hex && n->value.find_first_of(".eE") != std::string::npos) {
        n->const_kind = ConstKind::Float;
      } else {
        n->const_kind = ConstKind::Int;
        n->int_value = parse_int_literal(n->value);
      }
      return finish(std::move(n));
    }
    if (t.kind == TokenKind::String) {
      auto n = make(NodeKind::Constant, b);
      bool bytes = false;
      bool fstr = false;
      bool first = true;
      while (at(TokenKind::String)) {
        bool piece_bytes = false;
        std::string decoded = decode_string_token(cur().text, &piece_bytes, &fstr);
        if (!first && piece_bytes != bytes) fail_at(toks_[b], "cannot mix bytes and nonbytes literals");
        bytes = piece_bytes;
        first = false;
        n->str_value += decoded;
        n->value += advance().text;
      }
      n->const_kind = bytes ? ConstKind::Bytes : ConstKind::Str;
      if (fstr) n->kind = NodeKind::JoinedStr;
      return finish(std::move(n));
    }
    if (at_op("...")) {
      auto n = make(NodeKind::Constant, b);
      n->value = advance().text;
      n->const_kind = ConstKind::Ellipsis;
      return finish(std::move(n));
    }
    if (at_op("(")) {
      advance();
      if (at_op(")")) {
        advance();
        auto n = make(NodeKind::Tuple, b);
        return finish(std::move(n));
      }
      NodePtr inner;
      if (at_kw("yield")) {
        inner = parse_yield();
      } else {
        NodePtr first = parse_star_or(&Parser::parse_namedexpr);
        if (at_kw("for") || at_kw("async")) {
          auto gen = make(NodeKind::GeneratorExp, b);
          gen->children.push_back(std::move(first));
          parse_comprehension(gen->extra);
          inner = std::move(gen);
        } else if (at_op(",")) {
          auto tup = make(NodeKind::Tuple, b);
          tup->children.push_back(std::move(first));
          while (at_op(",")) {
            advance();
            if (at_op(")")) break;
            tup->children.push_back(parse_star_or(&Parser::parse_namedexpr));
          }
          inner = std::move(tup);
        } else {
          inner = std::move(first);
        }
      }
      expect_op(")");
      if (inner->kind == NodeKind::Tuple || inner->kind == NodeKind::GeneratorExp) {
        inner->span.begin = toks_[b].span.begin;
        inner->span.first_line = toks_[b].span.first_line;
        return finish(std::move(inner));
      }
      return inner;
    }
    if (at_op("[")) {
      advance();
      auto n = make(NodeKind::List, b);
      if (!at_op("]")) {
        NodePtr first = parse_star_or(&Parser::parse_namedexpr);
        if (at_kw("for") || at_kw("async")) {
          n->kind = NodeKind::ListComp;
          n->children.push_back(std::move(first));
          parse_comprehension(n->extra);
        } else {
          n->children.push_back(std::move(first));
          while (at_op(",")) {
            advance();
            if (at_op("]")) break;
            n->children.push_back(parse_star_or(&Parser::parse_namedexpr));
          }
        }
      }
      expect_op("]");
      return finish(std::move(n));
    }
    if (at_op("{")) return parse_brace(b);
    fail_here();
  }

  NodePtr parse_brace(std::size_t b) {
    advance();
    auto n = make(NodeKind::Dict, b);
    if (at_op("}")) {
      advance();
      return finish(std::move(n));
    }
    auto dict_item = [&]() {
      if (at_op("**")) {
        auto u = make(NodeKind::DictUnpack, i_);
        advance();
        u->children.push_back(parse_expr());
        n->children.push_back(finish(std::move(u)));
        return;
      }
      n->children.push_back(parse_test());
      expect_op(":");
      n->children.push_back(parse_test());
    };
    bool is_dict = at_op("**");
    NodePtr first;
    if (!is_dict) {
      first = parse_star_or(&Parser::parse_namedexpr);
      is_dict = at_op(":") && first->kind != NodeKind::Starred;
    }
    if (is_dict) {
      if (first) {
        n->children.push_back(std::move(first));
        expect_op(":");
        n->children.push_back(parse_test());
      } else {
        dict_item();
      }
      if (at_kw("for") || at_kw("async")) {
        n->kind = NodeKind::DictComp;
        parse_comprehension(n->extra);
      } else {
        while (at_op(",")) {
          advance();
          if (at_op("}")) break;
          dict_item();
        }
      }
    } else {
      n->kind = NodeKind::Set;
      n->children.push_back(std::move(first));
      if (at_kw("for") || at_kw("async")) {
        n->kind = NodeKind::SetComp;
        parse_comprehension(n->extra);
      } else {
        while (at_op(",")) {
          advance();
          if (at_op("}")) break;
          n->children.push_back(parse_star_or(&Parser::parse_namedexpr));
        }
      }
    }
    expect_op("}");
    return finish(std::move(n));
  }

 private:
  const Lexer& lexer_;
  std::vector<Token> toks_;
  std::size_t i_ = 0;
  std::size_t last_end_ = 0;
  int last_line_ = 1;
};

}  // namespace

std::string SyntaxError::format() const {
  std::string out = type + " at line " + std::to_string(line) + ", column " +
                    std::to_string(column) + ": " + message + "\n";
  out += "    " + std::to_string(line) + " | " + line_text;
  return out;
}

TokenizeResult tokenize(std::string_view source) {
  TokenizeResult r;
  try {
    r.tokens = Lexer(source).run();
  } catch (const Failure& f) {
    r.error = f.error;
  }
  return r;
}

ParseResult parse(std::string_view source) {
  ParseResult r;
  Lexer lexer(source);
  try {
    auto tokens = lexer.run();
    Parser p(lexer, std::move(tokens));
    r.module = p.parse_module();
  } catch (const Failure& f) {
    r.error = f.error;
  }
  return r;
}

std::optional<std::string> dotted_name(const Node& n) {
  if (n.kind == NodeKind::Name) return n.value;
  if (n.kind == NodeKind::Attribute && !n.children.empty()) {
    auto base = dotted_name(*n.children[0]);
    if (!base) return std::nullopt;
    return *base + "." + n.value;
  }
  return std::nullopt;
}

}  // namespace kopt::py
