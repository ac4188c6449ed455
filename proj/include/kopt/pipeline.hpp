// SPDX-License-Identifier: Apache-2.0
//
// End-to-end optimization: analyze, plan, run each stage through CoVeR with
// re-analysis in between, gate the result, then pick the fastest of k runs.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kopt/analysis.hpp"
#include "kopt/cover.hpp"
#include "kopt/hardware.hpp"
#include "kopt/knowledge.hpp"
#include "kopt/llm.hpp"
#include "kopt/planner.hpp"
#include "kopt/runner.hpp"
#include "kopt/spec.hpp"
#include "kopt/verifier.hpp"

namespace kopt {

struct PipelineConfig {
  int max_iterations_per_stage = 5;
  int best_k = 1;
  double rtol = 1e-2;
  double atol = 1e-5;
  bool require_correctness = true;
  std::string kb_dir = "knowledge";
  std::string output_dir = "kopt_out";
  std::string runner = "subprocess";  // or "mock"
  std::string device_name = "xpu";
  bool plan_with_llm = true;
  std::string sentinel = std::string(kDefaultSentinel);

  // MAX_ATTEMPTS_PER_STAGE (AGENT_MAX_ITERATIONS when unset),
  // REQUIRE_CORRECTNESS, CORRECTNESS_RTOL, CORRECTNESS_ATOL, BEST_K,
  // XPU_DEVICE. Throws UsageError on malformed values.
  static PipelineConfig from_env(const std::function<const char*(const char*)>& getenv_fn);
  void validate() const;
};

struct PipelineDeps {
  ChatBackend* llm = nullptr;
  Runner* runner = nullptr;
  const KnowledgeBase* kb = nullptr;
  const IssueRegistry* registry = nullptr;
  GpuProfile gpu;
  std::optional<std::string> reference_source;  // PyTorch reference for the analyzer
  std::function<std::int64_t()> clock;           // for failure dumps
};

struct StageRun {
  Stage stage;
  std::vector<Issue> issues;
  CoverOutcome outcome;
  std::optional<VerificationReport> last_report;
};

struct RunTrace {
  StagePlan plan;
  std::vector<StageRun> stages;
  std::vector<AnalysisReport> analyses;
  // Planned stages dropped because re-analysis found nothing left for them.
  std::vector<Stage> skipped_after_reanalysis;
  std::vector<std::string> events;
  std::optional<VerificationReport> final_gate;
  std::string code;
};

struct Candidate {
  std::string code;
  double time_us = 0.0;
  double speedup = 0.0;
};

struct OptimizationResult {
  std::string final_code;
  std::vector<StageRun> per_stage;  // of the selected run
  std::vector<RunTrace> runs;
  std::vector<Candidate> candidates;
  int selected_candidate_index = 0;
  double input_time_us = 0.0;
  std::optional<double> flop;
  std::optional<double> bytes;
  bool flop_estimated = false;

  double speedup() const { return candidates.at(selected_candidate_index).speedup; }
};

// Index of the largest speedup; the lowest index wins ties.
int select_best(const std::vector<Candidate>& candidates);

// Inserts `stage` into `order` at the first position that keeps every edge
// satisfied, or returns false.
bool insert_stage(std::vector<Stage>& order, Stage stage);

// Infrastructure failures propagate; nothing is written to disk here except
// failed-candidate dumps under config.output_dir.
OptimizationResult optimize(const std::string& kernel_source, const ProblemSpec& spec, const std::string& variant,
                            const PipelineConfig& config, const PipelineDeps& deps);

nlohmann::json verification_json(const VerificationReport& r);
nlohmann::json result_json(const OptimizationResult& r, const ProblemSpec& spec, const std::string& variant,
                           const PipelineConfig& config, const GpuProfile& gpu);

struct WrittenOutputs {
  std::string report_path;
  std::string kernel_path;
  std::string log_path;
  std::string csv_path;
};

// Writes report.json, the optimized kernel, run.log and two CSV rows (input
// and selected candidate) with any AIBENCH_* environment columns.
WrittenOutputs write_outputs(const OptimizationResult& r, const ProblemSpec& spec, const std::string& variant,
                             const PipelineConfig& config, const GpuProfile& gpu, const std::string& kernel_stem,
                             const std::string& csv_path);

}  // namespace kopt
