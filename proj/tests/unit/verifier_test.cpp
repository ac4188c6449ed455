// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/verifier.hpp"

using namespace kopt;

namespace {

std::string slurp(const std::string& rel) {
  std::ifstream in(std::string(KOPT_SOURCE_DIR) + "/" + rel, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string& base_src() {
  static const std::string s = slurp("tests/fixtures/kernels/matmul_relu.py");
  return s;
}

std::string edit(std::string src, const std::string& from, const std::string& to) {
  auto pos = src.find(from);
  if (pos == std::string::npos) throw std::runtime_error("fixture text not found: " + from);
  return src.replace(pos, from.size(), to);
}

LevelResult structure_of(const std::string& cand) {
  static const KernelModule base = KernelModule::from_source(base_src());
  return verify_structure(KernelModule::from_source(cand), base);
}

struct Cascade {
  std::shared_ptr<MockRunner> mock = std::make_shared<MockRunner>();
  Runner runner{mock, RunnerOptions{.warmup = 1, .iterations = 9}};
  ProblemSpec spec = load_spec_file(std::string(KOPT_SOURCE_DIR) + "/tests/fixtures/specs/matmul_relu.yaml");
  KernelModule ref = KernelModule::from_source(base_src());
  std::string opt = base_src() + "\n# tuned\n";

  Cascade() { mock->script_source(base_src(), "*", MockScenario{.mean_us = 1000}); }

  VerifyContext ctx() {
    VerifyContext c;
    c.runner = &runner;
    c.spec = &spec;
    c.variant = "ci";
    c.reference = &ref;
    return c;
  }
};

}  // namespace

TEST(Structure, FixturePassesAgainstItself) {
  EXPECT_TRUE(verify_syntax(base_src()).passed);
  auto r = structure_of(base_src());
  EXPECT_TRUE(r.passed) << r.diagnostic;
}

TEST(Structure, NumWarpsNotPowerOfTwo) {
  auto r = structure_of(edit(base_src(), "num_warps=16", "num_warps=24"));
  ASSERT_FALSE(r.passed);
  EXPECT_EQ(r.diagnostic, "INVALID num_warps=24: Must be a power of 2. Valid values: 1, 2, 4, 8, 16, 32");
}

TEST(Structure, NumWarpsTooLargeAndOtherForms) {
  auto r = structure_of(edit(base_src(), "num_warps=16", "num_warps=64"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("INVALID num_warps=64: Exceeds the maximum"), std::string::npos);

  r = structure_of(edit(base_src(), "num_warps=8", "num_warps=-4"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("INVALID num_warps=-4"), std::string::npos);

  r = structure_of(edit(base_src(), "'BLOCK_K': 32}, num_warps=8", "'BLOCK_K': 32, 'num_warps': 12}, num_warps=8"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("num_warps=12"), std::string::npos);

  // Symbolic values are left to the runtime.
  EXPECT_TRUE(structure_of(edit(base_src(), "num_warps=8", "num_warps=W")).passed);
}

TEST(Structure, BlockSizes) {
  auto r = structure_of(edit(base_src(), "'BLOCK_M': 128", "'BLOCK_M': 512"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("INVALID BLOCK_M=512: Block dimensions must be powers of 2 and at most 256."),
            std::string::npos);

  r = structure_of(edit(base_src(), "BLOCK_SIZE=256)", "BLOCK_SIZE=96)"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("INVALID BLOCK_SIZE=96"), std::string::npos);

  r = structure_of(edit(base_src(), "BLOCK_SIZE: tl.constexpr)", "BLOCK_SIZE: tl.constexpr = 1000)"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("INVALID BLOCK_SIZE=1000"), std::string::npos);

  r = structure_of(edit(base_src(), "    pid = tl.program_id(axis=0)\n", "    BLOCK_X = 300\n    pid = tl.program_id(axis=0)\n"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("INVALID BLOCK_X=300"), std::string::npos);
}

TEST(Structure, MissingPiecesFailInOrder) {
  auto r = structure_of(edit(base_src(), "import triton.language as tl\n", ""));
  ASSERT_FALSE(r.passed);
  EXPECT_EQ(r.diagnostic.rfind("MISSING IMPORT", 0), 0u) << r.diagnostic;

  std::string no_jit = base_src();
  while (no_jit.find("@triton.jit\n") != std::string::npos) no_jit = edit(no_jit, "@triton.jit\n", "");
  r = structure_of(no_jit);
  ASSERT_FALSE(r.passed);
  EXPECT_EQ(r.diagnostic.rfind("MISSING KERNEL", 0), 0u) << r.diagnostic;

  r = structure_of(edit(base_src(), "class Model(nn.Module)", "class Net(nn.Module)"));
  ASSERT_FALSE(r.passed);
  EXPECT_EQ(r.diagnostic.rfind("MISSING MODEL CLASS", 0), 0u) << r.diagnostic;
}

TEST(Structure, HarnessEdits) {
  for (const auto& [from, to] : std::vector<std::pair<std::string, std::string>>{
           {"return triton_matmul_relu(x, self.weight)", "return torch.relu(x @ self.weight)"},
           {"\"\"\"Matmul followed by ReLU.\"\"\"", "\"\"\"Matmul then ReLU.\"\"\""},
           {"return [torch.randn(M, K)]", "return [torch.randn(M, K) * 0]"},
           {"import torch.nn as nn\n", "import torch.nn as nn\nimport torch.nn.functional as F\n"},
           {"M = 1024\n", "M = 1024\n\n\nclass Helper:\n    pass\n"},
           {"M = 1024\n", "M = 1024\nModel.forward = lambda self, x: x\n"},
           {"M = 1024\n", "M = 1024\n\n\ndef get_inputs():\n    return []\n"},
       }) {
    auto r = structure_of(edit(base_src(), from, to));
    ASSERT_FALSE(r.passed) << to;
    EXPECT_EQ(r.diagnostic.rfind("HARNESS MODIFIED", 0), 0u) << r.diagnostic;
  }
}

TEST(Structure, HarnessSingleByteWhitespace) {
  auto r = structure_of(edit(base_src(), "super().__init__()", "super().__init__() "));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("class Model"), std::string::npos);
}

TEST(Structure, KernelEditsAllowed) {
  std::string c = edit(base_src(), "tl.float64)", "tl.float32)");
  c = edit(c, "acc += tl.dot(a.to(tl.float64), b.to(tl.float64))", "acc += tl.dot(a, b)");
  c = edit(c, "num_warps=16", "num_warps=32");
  c = edit(c, "    y = torch.empty_like(c)\n", "    y = torch.empty_like(c)\n    s = getattr(c, 'stride')\n");
  auto r = structure_of(c);
  EXPECT_TRUE(r.passed) << r.diagnostic;
}

TEST(Structure, EvasionSnippet) {
  const std::string snippet =
      "    _nn = __import__('torch').nn\n"
      "    _fn = getattr(_nn, ''.join(['fu','nctional']))\n"
      "    conv2d = getattr(_fn, ''.join(['con','v2d']))\n";
  auto r = structure_of(edit(base_src(), "    y = torch.empty_like(c)\n", snippet + "    y = torch.empty_like(c)\n"));
  ASSERT_FALSE(r.passed);
  EXPECT_EQ(r.diagnostic.rfind("EVASION DETECTED", 0), 0u) << r.diagnostic;

  for (const std::string line : {"    f = getattr(torch.nn, 'function' + 'al')\n", "    g = eval('torch')\n",
                                 "    h = torch.__dict__['nn']\n", "    import importlib\n",
                                 "    m = sys.modules['torch']\n"}) {
    r = structure_of(edit(base_src(), "    y = torch.empty_like(c)\n", line + "    y = torch.empty_like(c)\n"));
    ASSERT_FALSE(r.passed) << line;
    EXPECT_EQ(r.diagnostic.rfind("EVASION DETECTED", 0), 0u) << line << r.diagnostic;
  }
}

TEST(Cascade, SyntaxFailureSkipsRunner) {
  Cascade c;
  auto rep = verify("def broken(:\n    pass\n", c.ctx());
  EXPECT_FALSE(rep.passed);
  EXPECT_EQ(rep.level_reached, VerifyLevel::syntax);
  EXPECT_EQ(rep.diagnostic.rfind("SYNTAX ERROR", 0), 0u);
  EXPECT_EQ(c.mock->count("compare") + c.mock->count("bench"), 0);
}

TEST(Cascade, StructureFailureSkipsRunner) {
  Cascade c;
  auto rep = verify(edit(base_src(), "num_warps=16", "num_warps=24"), c.ctx());
  EXPECT_EQ(rep.level_reached, VerifyLevel::structure);
  EXPECT_EQ(c.mock->count("compare") + c.mock->count("bench"), 0);
}

TEST(Cascade, SuccessReportsSpeedup) {
  Cascade c;
  c.mock->script_source(c.opt, "*", MockScenario{.mean_us = 800, .jitter_us = 5});
  VerifyTool tool(c.ctx());
  EXPECT_EQ(tool(c.opt), "OPTIMIZATION_VERIFIED_SUCCESS");
  const auto& rep = *tool.last_report();
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.level_reached, VerifyLevel::success);
  EXPECT_DOUBLE_EQ(*rep.speedup, 1.25);
  EXPECT_EQ(c.mock->count("compare"), 1);
  EXPECT_EQ(c.mock->count("bench"), 2);
  // No caching: a second verification benchmarks the baseline again.
  tool(c.opt);
  EXPECT_EQ(c.mock->count("bench"), 4);
}

TEST(Cascade, CorrectnessFailureSkipsPerformance) {
  Cascade c;
  MockScenario bad{.mean_us = 500, .verdict = "mismatch"};
  bad.diff = DiffSummary{0.5, 0.01, 2.0, 12, 1.2, 1000};
  c.mock->script_source(c.opt, "*", bad);
  auto rep = verify(c.opt, c.ctx());
  EXPECT_EQ(rep.level_reached, VerifyLevel::correctness);
  EXPECT_NE(rep.diagnostic.find("CORRECTNESS FAILED"), std::string::npos);
  EXPECT_NE(rep.diagnostic.find(bad.diff.to_text()), std::string::npos);
  EXPECT_NE(rep.diagnostic.find("Likely causes: wrong strides, transposed loads, missing boundary checks"),
            std::string::npos);
  EXPECT_EQ(c.mock->count("compare"), 1);
  EXPECT_EQ(c.mock->count("bench"), 0);
  EXPECT_EQ(observation_for(rep, kDefaultSentinel).rfind("CORRECTNESS CHECK FAILED\n", 0), 0u);
}

TEST(Cascade, NanAndInfDiagnostics) {
  Cascade c;
  c.mock->script_source(c.opt, "*", MockScenario{.verdict = "nan"});
  EXPECT_NE(verify(c.opt, c.ctx()).diagnostic.find("NaN detected in the optimized output"), std::string::npos);
  c.mock->script_source(c.opt, "*", MockScenario{.verdict = "inf"});
  EXPECT_NE(verify(c.opt, c.ctx()).diagnostic.find("where the original has none"), std::string::npos);
}

TEST(Cascade, KernelErrorIsVerbatim) {
  Cascade c;
  c.mock->script_source(c.opt, "*", MockScenario{.message = "RuntimeError: out of resources", .kernel_error = true});
  auto rep = verify(c.opt, c.ctx());
  EXPECT_EQ(rep.level_reached, VerifyLevel::correctness);
  EXPECT_NE(rep.diagnostic.find("RuntimeError: out of resources"), std::string::npos);
}

TEST(Cascade, TieIsNotASpeedup) {
  Cascade c;
  c.mock->script_source(c.opt, "*", MockScenario{.mean_us = 1000, .jitter_us = 30});
  auto rep = verify(c.opt, c.ctx());
  EXPECT_EQ(rep.level_reached, VerifyLevel::performance);
  EXPECT_FALSE(rep.passed);
  EXPECT_NE(rep.diagnostic.find("TFLOPS"), std::string::npos);
  EXPECT_NE(rep.diagnostic.find("strategy"), std::string::npos);
}

TEST(Cascade, CorrectnessWarningWhenNotRequired) {
  Cascade c;
  c.mock->script_source(c.opt, "*", MockScenario{.mean_us = 900, .verdict = "mismatch"});
  auto ctx = c.ctx();
  ctx.require_correctness = false;
  auto rep = verify(c.opt, ctx);
  EXPECT_TRUE(rep.passed);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("CORRECTNESS FAILED"), std::string::npos);
}

TEST(Cascade, PerfBaselineIsTheStageInput) {
  Cascade c;
  std::string stage_in = base_src() + "\n# stage 1\n";
  KernelModule stage_mod = KernelModule::from_source(stage_in);
  c.mock->script_source(stage_in, "*", MockScenario{.mean_us = 700});
  c.mock->script_source(c.opt, "*", MockScenario{.mean_us = 800});
  auto ctx = c.ctx();
  ctx.perf_baseline = &stage_mod;
  auto rep = verify(c.opt, ctx);
  EXPECT_EQ(rep.level_reached, VerifyLevel::performance);
  ASSERT_TRUE(rep.timings);
  EXPECT_DOUBLE_EQ(rep.timings->first, 700);
}

TEST(Structure, HarnessConstants) {
  // Sizes read by get_inputs are part of the harness.
  auto r = structure_of(edit(base_src(), "M = 1024\n", "M = 64\n"));
  ASSERT_FALSE(r.passed);
  EXPECT_NE(r.diagnostic.find("assign M"), std::string::npos) << r.diagnostic;

  r = structure_of(edit(base_src(), "    y = torch.empty_like(c)\n", "    y = torch.empty_like(c)\n") + "M = 64\n");
  ASSERT_FALSE(r.passed);

  r = structure_of(edit(base_src(), "def triton_matmul_relu(a, b):\n", "SCALE = 2\n\n\ndef triton_matmul_relu(a, b):\n"));
  EXPECT_TRUE(r.passed) << r.diagnostic;
}
