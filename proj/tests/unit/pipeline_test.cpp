// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "../support/pipeline_fixture.hpp"
#include "kopt/error.hpp"
#include "kopt/pipeline.hpp"

using namespace kopt;
using namespace kopt::fixture;
namespace fs = std::filesystem;

namespace {

struct Rig {
  std::shared_ptr<MockRunner> mock = std::make_shared<MockRunner>();
  Runner runner{mock, RunnerOptions{.warmup = 1, .iterations = 5}};
  KnowledgeBase kb;
  IssueRegistry registry = IssueRegistry::builtin();
  ProblemSpec spec = load_spec_file(spec_path());
  PipelineConfig cfg;
  fs::path out;

  Rig() {
    out = fs::temp_directory_path() / ("kopt_pipe_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::remove_all(out);
    cfg.runner = "mock";
    cfg.output_dir = out.string();
    cfg.max_iterations_per_stage = 2;
    script_times(*mock);
  }
  ~Rig() { fs::remove_all(out); }

  static int& counter() {
    static int n = 0;
    return n;
  }

  OptimizationResult run(ChatBackend& llm) {
    PipelineDeps d;
    d.llm = &llm;
    d.runner = &runner;
    d.kb = &kb;
    d.registry = &registry;
    d.clock = [] { return std::int64_t{1700000000}; };
    return optimize(input_kernel(), spec, "ci", cfg, d);
  }
};

std::vector<Stage> executed(const RunTrace& t) {
  std::vector<Stage> v;
  for (const auto& s : t.stages) v.push_back(s.stage);
  return v;
}

std::string tagged(int i) { return replace_all(dtype_fixed(), "# float32 accumulator", "# variant " + std::to_string(i)); }

}  // namespace

TEST(Pipeline, ReanalysisSkipsStagesWithNothingLeft) {
  Rig rig;
  ScriptedBackend llm(happy_script());
  OptimizationResult r = rig.run(llm);
  ASSERT_EQ(r.runs.size(), 1u);
  const RunTrace& t = r.runs[0];
  EXPECT_EQ(t.plan.provenance, PlanProvenance::llm);
  EXPECT_EQ(executed(t), (std::vector<Stage>{Stage::dtype_fix, Stage::fusion}));
  EXPECT_EQ(t.skipped_after_reanalysis, std::vector<Stage>{Stage::memory_access});
  EXPECT_TRUE(t.stages[0].outcome.succeeded);
  EXPECT_TRUE(t.stages[1].outcome.succeeded);
  ASSERT_TRUE(t.final_gate);
  EXPECT_TRUE(t.final_gate->passed);
  EXPECT_EQ(r.final_code, fused());
  EXPECT_NEAR(r.speedup(), 1.4, 1e-9);
  EXPECT_EQ(llm.remaining(), 0u);
  // One analysis up front plus one per executed stage.
  EXPECT_EQ(t.analyses.size(), t.stages.size() + 1);
  EXPECT_DOUBLE_EQ(r.flop.value(), 2.0 * 64 * 16 * 32);
}

TEST(Pipeline, BestOfKPicksFastestLowestIndexOnTies) {
  Rig rig;
  rig.cfg.best_k = 3;
  const std::vector<double> speedups = {1.1, 1.4, 1.2};
  std::vector<ScriptEntry> script;
  const std::string dtype_only = R"([{"type": "dtype_float64", "severity": 5, "description": "fp64"}])";
  for (int i = 0; i < 3; ++i) {
    rig.mock->script_source(tagged(i), "*", MockScenario{.mean_us = 1000.0 / speedups[i]});
    script.push_back(say(dtype_only));
    script.push_back(say(agent(tagged(i))));
    script.push_back(say("[]"));
  }
  ScriptedBackend llm(script);
  OptimizationResult r = rig.run(llm);
  ASSERT_EQ(r.candidates.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.candidates[i].speedup, speedups[i], 1e-9);
  EXPECT_EQ(r.selected_candidate_index, 1);
  EXPECT_EQ(r.final_code, tagged(1));
  EXPECT_NEAR(r.input_time_us, 1000.0, 1e-9);

  std::vector<Candidate> tie = {{"a", 1, 1.3}, {"b", 1, 1.3}, {"c", 1, 1.2}};
  EXPECT_EQ(select_best(tie), 0);
  EXPECT_THROW(select_best({}), UsageError);
}

TEST(Pipeline, AllFailingStagesReturnTheInputUnchanged) {
  Rig rig;
  const std::string bad = replace_all(input_kernel(), "return [torch.randn(M, K)]", "return [torch.ones(M, K)]");
  std::vector<ScriptEntry> script = {say(R"([{"type": "dtype_float64", "severity": 5, "description": "fp64"}])")};
  for (int i = 0; i < 3; ++i) script.push_back(say(agent(bad)));
  script.push_back(say(R"([{"type": "dtype_float64", "severity": 5, "description": "fp64"}])"));
  ScriptedBackend llm(script);
  OptimizationResult r = rig.run(llm);
  EXPECT_EQ(r.final_code, input_kernel());
  EXPECT_FALSE(r.runs[0].stages[0].outcome.succeeded);
  EXPECT_FALSE(r.runs[0].final_gate);
  ASSERT_TRUE(r.runs[0].stages[0].outcome.dump_path);
  EXPECT_TRUE(fs::exists(*r.runs[0].stages[0].outcome.dump_path));
  EXPECT_NEAR(r.speedup(), 1.0, 1e-12);
}

TEST(Pipeline, ReanalysisInsertsNewStagesInDependencyOrder) {
  Rig rig;
  ScriptedBackend llm({say(R"([{"type": "dtype_float64", "severity": 5, "description": "fp64"}])"),
                       say(agent(dtype_fixed())), say(kIssuesFusion), say(agent(fused())), say("[]")});
  OptimizationResult r = rig.run(llm);
  EXPECT_EQ(executed(r.runs[0]), (std::vector<Stage>{Stage::dtype_fix, Stage::fusion}));
  EXPECT_EQ(r.runs[0].plan.provenance, PlanProvenance::fallback_default);
  EXPECT_EQ(r.final_code, fused());
}

TEST(Pipeline, UnparseableAnalysisPlansEveryStage) {
  Rig rig;
  rig.cfg.plan_with_llm = false;
  rig.cfg.max_iterations_per_stage = 1;
  // Initial analysis fails twice; each stage then gets T+1 replies and a
  // re-analysis that fails twice again, so the plan is kept.
  std::vector<ScriptEntry> script = {say("no idea"), say("still no idea")};
  for (int s = 0; s < 9; ++s) {
    script.push_back(say("THOUGHT: nothing"));
    script.push_back(say("THOUGHT: nothing"));
    script.push_back(say("?"));
    script.push_back(say("?"));
  }
  ScriptedBackend llm(script);
  OptimizationResult r = rig.run(llm);
  EXPECT_TRUE(r.runs[0].analyses[0].parse_failed);
  EXPECT_EQ(executed(r.runs[0]), std::vector<Stage>(kOptimizationStages.begin(), kOptimizationStages.end()));
  EXPECT_EQ(r.final_code, input_kernel());
  EXPECT_EQ(llm.remaining(), 0u);
}

TEST(Pipeline, DeterministicReport) {
  std::string first;
  for (int i = 0; i < 2; ++i) {
    Rig rig;
    ScriptedBackend llm(happy_script());
    OptimizationResult r = rig.run(llm);
    std::string dumped = result_json(r, rig.spec, "ci", rig.cfg, GpuProfile{}).dump();
    if (i == 0) first = dumped;
    else EXPECT_EQ(dumped, first);
  }
}

TEST(Pipeline, WritesReportKernelLogAndCsv) {
  Rig rig;
  ScriptedBackend llm(happy_script());
  OptimizationResult r = rig.run(llm);
  ::setenv("AIBENCH_CARD", "b580", 1);
  WrittenOutputs w = write_outputs(r, rig.spec, "ci", rig.cfg, GpuProfile{}, "matmul_relu", "");
  ::unsetenv("AIBENCH_CARD");
  EXPECT_EQ(slurp(w.kernel_path), fused());
  auto report = nlohmann::json::parse(slurp(w.report_path));
  EXPECT_NEAR(report["speedup"].get<double>(), 1.4, 1e-9);
  EXPECT_EQ(report["runs"][0]["skipped_after_reanalysis"], nlohmann::json::array({"memory_access"}));
  EXPECT_TRUE(report["improved"].get<bool>());
  const std::string csv = slurp(w.csv_path);
  EXPECT_NE(csv.find("AIBENCH_CARD"), std::string::npos);
  EXPECT_NE(csv.find("b580"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(slurp(w.log_path).find("memory_access: skipped"), std::string::npos);
}

TEST(Pipeline, InsertStageKeepsOrderValid) {
  std::vector<Stage> order = {Stage::dtype_fix, Stage::gpu_specific};
  EXPECT_TRUE(insert_stage(order, Stage::fusion));
  EXPECT_EQ(order, (std::vector<Stage>{Stage::dtype_fix, Stage::fusion, Stage::gpu_specific}));
  EXPECT_TRUE(insert_stage(order, Stage::algorithmic));
  EXPECT_EQ(order.front(), Stage::algorithmic);
  EXPECT_TRUE(insert_stage(order, Stage::autotune));
  EXPECT_EQ(order.back(), Stage::autotune);
  EXPECT_TRUE(validate_order(order).ok);
}

TEST(PipelineConfig, Environment) {
  std::map<std::string, std::string> e;
  auto get = [&](const char* k) -> const char* {
    auto it = e.find(k);
    return it == e.end() ? nullptr : it->second.c_str();
  };
  PipelineConfig c = PipelineConfig::from_env(get);
  EXPECT_EQ(c.max_iterations_per_stage, 5);
  EXPECT_EQ(c.best_k, 1);
  EXPECT_TRUE(c.require_correctness);

  e = {{"AGENT_MAX_ITERATIONS", "7"}, {"BEST_K", "3"}, {"REQUIRE_CORRECTNESS", "false"},
       {"CORRECTNESS_RTOL", "0.05"}, {"CORRECTNESS_ATOL", "1e-3"}, {"XPU_DEVICE", "xpu:1"}};
  c = PipelineConfig::from_env(get);
  EXPECT_EQ(c.max_iterations_per_stage, 7);
  EXPECT_EQ(c.best_k, 3);
  EXPECT_FALSE(c.require_correctness);
  EXPECT_DOUBLE_EQ(c.rtol, 0.05);
  EXPECT_DOUBLE_EQ(c.atol, 1e-3);
  EXPECT_EQ(c.device_name, "xpu:1");

  e["MAX_ATTEMPTS_PER_STAGE"] = "4";
  EXPECT_EQ(PipelineConfig::from_env(get).max_iterations_per_stage, 4);

  e["BEST_K"] = "three";
  EXPECT_THROW(PipelineConfig::from_env(get), UsageError);
  e["BEST_K"] = "0";
  c = PipelineConfig::from_env(get);
  EXPECT_THROW(c.validate(), UsageError);
}
