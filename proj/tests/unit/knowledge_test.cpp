// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/knowledge.hpp"

using namespace kopt;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int n = 0;
    path_ = fs::temp_directory_path() / ("kopt_kb_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  void write(const std::string& rel, const std::string& text) const {
    fs::create_directories((path_ / rel).parent_path());
    std::ofstream(path_ / rel, std::ios::binary) << text;
  }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kCriticalGpu = R"Y(constraints:
  - id: warps_pow2
    severity: critical
    stages: [gpu_specific]
    description: num_warps must be a power of two.
    wrong_example: "num_warps=24"
    correct_example: "num_warps=32"
)Y";

const char* kTwoPatterns = R"Y(patterns:
  - id: dt_a
    stage: dtype_optimizations
    rationale: Use fp32.
    before: "x.to(tl.float64)"
    after: "x.to(tl.float32)"
    expected_speedup: [2, 4]
    applicability: [gemm]
  - id: gpu_a
    stage: gpu_optimizations
    rationale: Big tiles.
    before: "BLOCK_M=64"
    after: "BLOCK_M=256"
    expected_speedup: [1, 1.5]
)Y";

}  // namespace

TEST(Knowledge, EmptyDirectory) {
  TempDir d;
  KnowledgeBase kb = load_knowledge(d.str());
  EXPECT_TRUE(kb.constraints.empty() && kb.patterns.empty() && kb.examples.empty());
  EXPECT_EQ(kb_counts(kb), "0 constraints, 0 patterns, 0 examples");
  EXPECT_EQ(format_for_llm(kb, "gpu_specific"),
            "## HARD CONSTRAINTS\n\n(none)\n\n## PATTERNS\n\n(none)\n\n## EXAMPLES\n\n(none)\n");
}

TEST(Knowledge, MissingDirectoryIsFatal) { EXPECT_THROW(load_knowledge("/nonexistent/kb/dir"), LoadError); }

TEST(Knowledge, AliasNormalized) {
  TempDir d;
  d.write("m.yaml", R"Y(patterns:
  - id: coalesce
    stage: memory_patterns
    rationale: r
    before: a
    after: b
    expected_speedup: [1, 2]
)Y");
  KnowledgeBase kb = load_knowledge(d.str());
  ASSERT_EQ(kb.patterns.size(), 1u);
  EXPECT_EQ(kb.patterns[0].stage, Stage::memory_access);
}

TEST(Knowledge, UnknownStageSkipped) {
  TempDir d;
  d.write("m.yaml", R"Y(patterns:
  - id: p
    stage: nonexistent_stage
    rationale: r
    before: a
    after: b
    expected_speedup: [1, 2]
)Y");
  KnowledgeBase kb = load_knowledge(d.str());
  EXPECT_TRUE(kb.patterns.empty());
  ASSERT_EQ(kb.diagnostics.size(), 1u);
  EXPECT_NE(kb.diagnostics[0].message.find("nonexistent_stage"), std::string::npos);
}

TEST(Knowledge, BadFilesAndEntriesAreSkipped) {
  TempDir d;
  d.write("a_bad.yaml", "constraints: [ {id: x, \n");
  d.write("b_good.yaml", kCriticalGpu);
  d.write("c_entries.yaml", R"Y(constraints:
  - id: no_wrong
    severity: critical
    description: d
    wrong_example: ""
    correct_example: c
  - id: bad_sev
    severity: warning
    description: d
    wrong_example: w
    correct_example: c
patterns:
  - id: inverted
    stage: fusion
    rationale: r
    before: a
    after: b
    expected_speedup: [3, 2]
)Y");
  KnowledgeBase kb = load_knowledge(d.str());
  EXPECT_EQ(kb_counts(kb), "1 constraints, 0 patterns, 0 examples");
  EXPECT_EQ(kb.diagnostics.size(), 4u);
  EXPECT_EQ(kb.diagnostics[0].file, "a_bad.yaml");
}

TEST(Knowledge, DuplicateIdFirstFileWins) {
  TempDir d;
  d.write("b.yaml", R"Y(constraints:
  - {id: dup, severity: info, description: from b, wrong_example: w, correct_example: c}
)Y");
  d.write("a.yaml", R"Y(constraints:
  - {id: dup, severity: critical, description: from a, wrong_example: w, correct_example: c}
)Y");
  KnowledgeBase kb = load_knowledge(d.str());
  ASSERT_EQ(kb.constraints.size(), 1u);
  EXPECT_EQ(kb.constraints[0].description, "from a");
  ASSERT_EQ(kb.diagnostics.size(), 1u);
  EXPECT_EQ(kb.diagnostics[0].file, "b.yaml");
}

TEST(Knowledge, DataAliases) {
  TempDir d;
  d.write("z.yaml", "stage_aliases:\n  tiling: gpu_specific\n");
  d.write("a.yaml", R"Y(patterns:
  - {id: t, stage: tiling, rationale: r, before: a, after: b, expected_speedup: [1, 2]}
)Y");
  KnowledgeBase kb = load_knowledge(d.str());
  ASSERT_EQ(kb.patterns.size(), 1u);
  EXPECT_EQ(kb.patterns[0].stage, Stage::gpu_specific);
}

TEST(Knowledge, DtypeStageSelection) {
  TempDir d;
  d.write("a.yaml", kCriticalGpu);
  d.write("b.yaml", kTwoPatterns);
  KnowledgeBase kb = load_knowledge(d.str());
  const std::string want =
      "## HARD CONSTRAINTS\n"
      "\n### warps_pow2 [critical]\n"
      "num_warps must be a power of two.\n"
      "Wrong:\n```python\nnum_warps=24\n```\n"
      "Correct:\n```python\nnum_warps=32\n```\n"
      "\n## PATTERNS\n"
      "\n### dt_a (expected speedup 2x-4x; applies to: gemm)\n"
      "Use fp32.\n"
      "Before:\n```python\nx.to(tl.float64)\n```\n"
      "After:\n```python\nx.to(tl.float32)\n```\n"
      "\n## EXAMPLES\n\n(none)\n";
  EXPECT_EQ(format_for_llm(kb, "dtype_fix"), want);
  EXPECT_EQ(format_for_llm(kb, "dtype_fix"), format_for_llm(kb, "dtype_fix"));
  EXPECT_THROW(format_for_llm(kb, "dtype_optimizations"), UsageError);
}

TEST(Knowledge, NormalizeIsIdempotent) {
  std::vector<std::string> names = {"memory_patterns", "gpu", "fusion", "bogus", "", "analysis", "autotuning"};
  for (const auto& [k, _] : builtin_stage_aliases()) names.push_back(k);
  for (const auto& n : names) {
    auto once = normalize_stage(n);
    if (!once) continue;
    EXPECT_EQ(normalize_stage(stage_name(*once)), once) << n;
  }
}

TEST(Knowledge, SampleKbLoadsClean) {
  KnowledgeBase kb = load_knowledge(std::string(KOPT_SOURCE_DIR) + "/knowledge");
  for (const auto& d : kb.diagnostics) ADD_FAILURE() << d.file << ": " << d.message;
  EXPECT_GE(kb.constraints.size(), 10u);
  EXPECT_GE(kb.patterns.size(), 10u);
  EXPECT_EQ(kb.examples.size(), 2u);
}

TEST(Knowledge, SampleKbProperties) {
  KnowledgeBase kb = load_knowledge(std::string(KOPT_SOURCE_DIR) + "/knowledge");
  for (Stage s : kAllStages) {
    const std::string out = format_for_llm(kb, s);
    for (const auto& c : kb.constraints)
      if (c.severity == Severity::critical) EXPECT_NE(out.find("### " + c.id + " [critical]"), std::string::npos);
    for (const auto& p : kb.patterns)
      EXPECT_EQ(out.find("### " + p.id + " ") != std::string::npos, p.stage == s) << p.id << " @ " << stage_name(s);
  }
}

TEST(Knowledge, OrderIndependentUnderRenaming) {
  const fs::path src = fs::path(KOPT_SOURCE_DIR) / "knowledge";
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(src))
    if (e.path().extension() == ".yaml") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::mt19937 rng(3);
  auto content = [](const KnowledgeBase& kb) {
    std::string s;
    for (Stage st : kAllStages) s += format_for_llm(kb, st);
    return s;
  };
  const std::string base = content(load_knowledge(src.string()));
  for (int trial = 0; trial < 5; ++trial) {
    TempDir d;
    std::vector<int> perm(files.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < files.size(); ++i)
      d.write("f" + std::to_string(perm[i]) + ".yaml", slurp(files[i]));
    fs::copy(src / "examples", fs::path(d.str()) / "examples");
    EXPECT_EQ(content(load_knowledge(d.str())), base);
  }
}

TEST(Knowledge, GoldenPrompts) {
  KnowledgeBase kb = load_knowledge(std::string(KOPT_SOURCE_DIR) + "/knowledge");
  const fs::path dir = fs::path(KOPT_SOURCE_DIR) / "tests/fixtures/kb_golden";
  const bool update = std::getenv("KOPT_UPDATE_GOLDEN") != nullptr;
  for (Stage s : kOptimizationStages) {
    const fs::path f = dir / (std::string(stage_name(s)) + ".md");
    const std::string got = format_for_llm(kb, s);
    if (update) {
      fs::create_directories(dir);
      std::ofstream(f, std::ios::binary) << got;
      continue;
    }
    ASSERT_TRUE(fs::exists(f)) << f;
    EXPECT_EQ(got, slurp(f)) << stage_name(s);
  }
}
