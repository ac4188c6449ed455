// SPDX-License-Identifier: Apache-2.0
#include "kopt/pysyntax.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace kopt::py {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Validity and error line of every snippet were recorded from CPython's
// ast.parse and frozen into the corpus.
TEST(PySyntax, AgreesWithFrozenCPythonCorpus) {
  auto corpus = nlohmann::json::parse(
      read_file(std::string(KOPT_SOURCE_DIR) + "/tests/fixtures/syntax/corpus.json"));
  ASSERT_GT(corpus.size(), 50u);
  for (const auto& [name, entry] : corpus.items()) {
    auto result = parse(entry["src"].get<std::string>());
    bool valid = entry["valid"].get<bool>();
    EXPECT_EQ(result.ok(), valid) << name << (result.error ? ": " + result.error->format() : "");
    if (!valid && result.error) {
      EXPECT_EQ(result.error->line, entry["line"].get<int>()) << name << ": " << result.error->format();
    }
  }
}

TEST(PySyntax, MalformedDefReportsLineOne) {
  auto r = parse("def f(:");
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->line, 1);
  EXPECT_EQ(r.error->type, "SyntaxError");
  auto text = r.error->format();
  EXPECT_NE(text.find("line 1"), std::string::npos);
  EXPECT_NE(text.find("def f(:"), std::string::npos);
}

TEST(PySyntax, DiagnosticCarriesOffendingLine) {
  std::string src =
      "import triton\n"
      "\n"
      "def f(x):\n"
      "    a = 1\n"
      "    b = 2\n"
      "    c = 3\n"
      "    d = a +* b\n"
      "    return d\n";
  auto r = parse(src);
  ASSERT_FALSE(r.ok());
  auto text = r.error->format();
  EXPECT_NE(text.find("line 7"), std::string::npos) << text;
  EXPECT_NE(text.find("d = a +* b"), std::string::npos) << text;
}

TEST(PySyntax, IndentationErrorType) {
  auto r = parse("def f():\n    a = 1\n  b = 2\n");
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error->type, "IndentationError");
  EXPECT_EQ(r.error->line, 3);
}

TEST(PySyntax, FixtureKernelParsesWithDeclarationSpans) {
  std::string src = read_file(std::string(KOPT_SOURCE_DIR) + "/tests/fixtures/kernels/matmul_relu.py");
  auto r = parse(src);
  ASSERT_TRUE(r.ok()) << r.error->format();
  std::vector<std::string> names;
  for (const auto& stmt : r.module->children) {
    if (stmt->kind == NodeKind::FunctionDef || stmt->kind == NodeKind::ClassDef) {
      names.push_back(stmt->value);
      auto text = slice(src, stmt->span);
      if (!stmt->decorators.empty()) {
        EXPECT_EQ(text.substr(0, 1), "@") << stmt->value;
      }
    }
  }
  EXPECT_EQ(names, (std::vector<std::string>{"matmul_kernel", "relu_kernel", "triton_matmul_relu",
                                             "Model", "get_inputs", "get_init_inputs"}));
  const Node& model = *r.module->children[7];
  ASSERT_EQ(model.kind, NodeKind::ClassDef);
  auto text = slice(src, model.span);
  EXPECT_EQ(text.substr(0, 11), "class Model");
  EXPECT_EQ(text.substr(text.size() - 41), "return triton_matmul_relu(x, self.weight)");
}

TEST(PySyntax, ConstantsAndKeywords) {
  auto r = parse("triton.Config({'BLOCK_M': 0x40}, num_warps=24)\n");
  ASSERT_TRUE(r.ok());
  const Node& call = *r.module->children[0]->children[0];
  ASSERT_EQ(call.kind, NodeKind::Call);
  EXPECT_EQ(dotted_name(*call.children[0]).value(), "triton.Config");
  const Node& dict = *call.children[1];
  ASSERT_EQ(dict.kind, NodeKind::Dict);
  EXPECT_EQ(dict.children[0]->str_value, "BLOCK_M");
  EXPECT_EQ(dict.children[1]->int_value.value(), 64);
  const Node& kw = *call.children[2];
  ASSERT_EQ(kw.kind, NodeKind::Keyword);
  EXPECT_EQ(kw.value, "num_warps");
  EXPECT_EQ(kw.children[0]->int_value.value(), 24);
}

TEST(PySyntax, FStringIsJoinedStr) {
  auto r = parse("x = f'a{b}'\n");
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.module->children[0]->children[1]->kind, NodeKind::JoinedStr);
}

}  // namespace
}  // namespace kopt::py
