// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kopt/cli.hpp"

using namespace kopt;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "kopt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string fixture(const std::string& rel) { return std::string(KOPT_SOURCE_DIR) + "/tests/fixtures/" + rel; }

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("kopt_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, PlanPrintsTopologicalOrder) {
  Result r = cli({"plan", "--issues", "dtype_float64,unfused_kernels"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "[dtype_fix, fusion]");
}

TEST(Cli, UnknownIssueIsAUsageError) {
  Result r = cli({"plan", "--issues", "not_a_type"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("LookupError"), std::string::npos);
}

TEST(Cli, ValidateReportsStructuralDiagnostic) {
  fs::path d = scratch("validate");
  std::string src = slurp(fixture("kernels/matmul_relu.py"));
  src.replace(src.find("num_warps=16"), 12, "num_warps=24");
  std::ofstream(d / "bad.kernel") << src;
  Result r = cli({"validate", (d / "bad.kernel").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("INVALID num_warps=24: Must be a power of 2. Valid values: 1, 2, 4, 8, 16, 32"),
            std::string::npos);
  EXPECT_EQ(cli({"validate", fixture("kernels/matmul_relu.py")}).code, 0);
  fs::remove_all(d);
}

TEST(Cli, KbLintOnEmptyDirectory) {
  fs::path d = scratch("kb");
  Result r = cli({"kb-lint", "--kb-dir", d.string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("0 constraints, 0 patterns, 0 examples"), std::string::npos);
  fs::remove_all(d);
  r = cli({"kb-lint", "--kb-dir", d.string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("LoadError"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"grid", "--m", "64"}).code, kExitUsage);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, GridAndGpuInfo) {
  Result r = cli({"grid", "--m", "4096", "--n", "4096", "--k", "4096", "--gpu-config", fixture("gpu/arc_pro_32core.yaml"),
                  "--python"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("triton.Config"), std::string::npos);
  r = cli({"gpu-info", "--source", "smi_json", "--payload", fixture("gpu/xpu_smi_discovery.json")});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("family="), std::string::npos);
}

TEST(Cli, OptimizeWithScriptedBackendAndMockRunner) {
  fs::path d = scratch("opt");
  Result r = cli({"optimize", fixture("kernels/matmul_relu.py"), "--spec", fixture("specs/matmul_relu.yaml"),
                  "--llm-script", fixture("e2e/llm_script.yaml"), "--mock-script", fixture("e2e/mock.yaml"), "--out",
                  d.string(), "--kb-dir", KOPT_SOURCE_DIR "/knowledge", "--warmup", "1", "--iterations", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("speedup: 1.400x"), std::string::npos);
  EXPECT_EQ(slurp(d / "matmul_relu_optimized.py"), slurp(fixture("kernels/matmul_relu_fused.py")));
  auto report = nlohmann::json::parse(slurp(d / "report.json"));
  EXPECT_NEAR(report["speedup"].get<double>(), 1.4, 1e-9);
  fs::remove_all(d);
}

TEST(Cli, BenchCompare) {
  fs::path d = scratch("cmp");
  Result r = cli({"bench-compare", fixture("kernels/matmul_relu.py"), fixture("kernels/matmul_relu_fp32.py"), "--spec",
                  fixture("specs/matmul_relu.yaml"), "--mock-script", fixture("e2e/mock.yaml"), "--warmup", "1",
                  "--iterations", "5", "--csv", (d / "r.csv").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("speedup 1.250x"), std::string::npos);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1);
  std::string csv = slurp(d / "r.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  fs::remove_all(d);
}

TEST(Cli, InfrastructureFailureExitsOne) {
  fs::path d = scratch("infra");
  Result r = cli({"optimize", fixture("kernels/matmul_relu.py"), "--spec", fixture("specs/matmul_relu.yaml"),
                  "--llm-script", fixture("e2e/llm_script.yaml"), "--runner-cmd", "/nonexistent/harness", "--out",
                  d.string(), "--gpu-config", fixture("gpu/arc_pro_32core.yaml"), "--kb-dir",
                  KOPT_SOURCE_DIR "/knowledge"});
  EXPECT_EQ(r.code, kExitInfrastructure) << r.err;
  EXPECT_FALSE(fs::exists(d / "matmul_relu_optimized.py"));
  fs::remove_all(d);
}
