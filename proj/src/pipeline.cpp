// SPDX-License-Identifier: Apache-2.0
#include "kopt/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "kopt/csv_log.hpp"
#include "kopt/error.hpp"
#include "kopt/metrics.hpp"

namespace kopt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<std::string> env(const std::function<const char*(const char*)>& getenv_fn, const char* key) {
  const char* v = getenv_fn(key);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

int env_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    int n = std::stoi(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw UsageError(key + " must be an integer, got '" + v + "'");
}

double env_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw UsageError(key + " must be a number, got '" + v + "'");
}

bool env_bool(const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError(key + " must be a boolean, got '" + v + "'");
}

std::string names(const std::vector<Stage>& stages) { return format_order(stages); }

bool precedes_executed(Stage s, const std::vector<Stage>& executed) {
  for (const auto& e : dependency_edges())
    if (e.before == s && std::find(executed.begin(), executed.end(), e.after) != executed.end()) return true;
  return false;
}

class Orchestrator {
 public:
  Orchestrator(const std::string& input, const ProblemSpec& spec, const std::string& variant,
               const PipelineConfig& cfg, const PipelineDeps& deps)
      : input_(KernelModule::from_source(input)),
        spec_(spec),
        variant_(variant),
        cfg_(cfg),
        deps_(deps),
        context_(ProblemContext::from_variant(spec.resolve(variant))) {}

  const KernelModule& input() const { return input_; }

  VerifyContext verify_context(const KernelModule* perf_baseline) const {
    VerifyContext c;
    c.runner = deps_.runner;
    c.spec = &spec_;
    c.variant = variant_;
    c.rtol = cfg_.rtol;
    c.atol = cfg_.atol;
    c.require_correctness = cfg_.require_correctness;
    c.reference = &input_;
    c.perf_baseline = perf_baseline;
    return c;
  }

  AnalysisReport analyze_code(const std::string& code, RunTrace& trace) const {
    AnalysisReport rep = analyze(KernelModule::from_source(code), deps_.reference_source, *deps_.kb, context_,
                                 *deps_.llm, *deps_.registry);
    for (const auto& w : rep.warnings) trace.events.push_back("analysis: " + w);
    for (const auto& d : rep.diagnostics) trace.events.push_back("analysis: " + d);
    trace.analyses.push_back(rep);
    return rep;
  }

  RunTrace run_once(int k) const {
    RunTrace t;
    std::string current = input_.source();
    AnalysisReport rep = analyze_code(current, t);
    std::vector<Issue> issues = rep.issues;
    StageSet active = active_stages(issues);
    if (rep.parse_failed) {
      for (Stage s : kOptimizationStages) active.insert(s);
      t.events.push_back("analysis unusable; planning every stage");
    }
    t.plan = plan(active, issues, cfg_.plan_with_llm ? deps_.llm : nullptr);
    t.events.push_back("run " + std::to_string(k) + " plan " + names(t.plan.ordered_stages) + " (" +
                       std::string(provenance_name(t.plan.provenance)) + ")" +
                       (t.plan.note.empty() ? "" : ": " + t.plan.note));

    std::vector<Stage> remaining = t.plan.ordered_stages;
    std::vector<Stage> executed;
    while (!remaining.empty()) {
      const Stage s = remaining.front();
      remaining.erase(remaining.begin());

      KernelModule stage_input = KernelModule::from_source(current);
      VerifyTool tool(verify_context(&stage_input), cfg_.sentinel);
      CoverTask task;
      task.original_code = input_.source();
      task.current_code = current;
      task.stage = s;
      task.issues = issues_for_stage(issues, s);
      task.knowledge = format_for_llm(*deps_.kb, s);
      task.gpu = deps_.gpu;
      task.max_iterations = cfg_.max_iterations_per_stage;
      task.success_sentinel = cfg_.sentinel;
      CoverOptions opt;
      opt.dump_dir = cfg_.output_dir;
      opt.clock = deps_.clock;

      StageRun sr{s, task.issues, run_cover(task, *deps_.llm, {verify_tool(tool)}, opt), tool.last_report()};
      executed.push_back(s);
      current = sr.outcome.code;
      t.events.push_back(std::string(stage_name(s)) + ": " +
                         (sr.outcome.succeeded ? (sr.outcome.via_fallback ? "verified via fallback" : "verified")
                                               : "no verified candidate, kept stage input") +
                         " after " + std::to_string(sr.outcome.iterations_used) + " iteration(s)");
      t.stages.push_back(std::move(sr));

      AnalysisReport again = analyze_code(current, t);
      if (again.parse_failed) {
        t.events.push_back("re-analysis unusable; keeping the remaining plan " + names(remaining));
        continue;
      }
      issues = again.issues;
      const StageSet now = active_stages(issues);
      std::vector<Stage> kept;
      for (Stage r : remaining) {
        if (now.contains(r)) {
          kept.push_back(r);
        } else {
          t.skipped_after_reanalysis.push_back(r);
          t.events.push_back(std::string(stage_name(r)) + ": skipped, re-analysis found no remaining issues");
        }
      }
      remaining = std::move(kept);
      for (Stage n : kOptimizationStages) {
        if (!now.contains(n) || std::find(executed.begin(), executed.end(), n) != executed.end() ||
            std::find(remaining.begin(), remaining.end(), n) != remaining.end())
          continue;
        if (precedes_executed(n, executed)) {
          t.events.push_back(std::string(stage_name(n)) + ": new issues ignored, stage must precede one already run");
          continue;
        }
        if (insert_stage(remaining, n)) {
          t.events.push_back(std::string(stage_name(n)) + ": added after re-analysis, remaining " + names(remaining));
        }
      }
    }

    if (current != input_.source()) {
      VerificationReport gate = verify(current, verify_context(&input_));
      t.final_gate = gate;
      if (!gate.passed) {
        t.events.push_back("final gate failed at " + std::string(level_name(gate.level_reached)) +
                           "; returning the input kernel");
        current = input_.source();
      }
    }
    t.code = current;
    return t;
  }

 private:
  KernelModule input_;
  const ProblemSpec& spec_;
  std::string variant_;
  const PipelineConfig& cfg_;
  const PipelineDeps& deps_;
  ProblemContext context_;
};

}  // namespace

PipelineConfig PipelineConfig::from_env(const std::function<const char*(const char*)>& getenv_fn) {
  PipelineConfig c;
  if (auto v = env(getenv_fn, "MAX_ATTEMPTS_PER_STAGE")) {
    c.max_iterations_per_stage = env_int("MAX_ATTEMPTS_PER_STAGE", *v);
  } else if (auto a = env(getenv_fn, "AGENT_MAX_ITERATIONS")) {
    c.max_iterations_per_stage = env_int("AGENT_MAX_ITERATIONS", *a);
  }
  if (auto v = env(getenv_fn, "REQUIRE_CORRECTNESS")) c.require_correctness = env_bool("REQUIRE_CORRECTNESS", *v);
  if (auto v = env(getenv_fn, "CORRECTNESS_RTOL")) c.rtol = env_double("CORRECTNESS_RTOL", *v);
  if (auto v = env(getenv_fn, "CORRECTNESS_ATOL")) c.atol = env_double("CORRECTNESS_ATOL", *v);
  if (auto v = env(getenv_fn, "BEST_K")) c.best_k = env_int("BEST_K", *v);
  if (auto v = env(getenv_fn, "XPU_DEVICE")) c.device_name = *v;
  return c;
}

void PipelineConfig::validate() const {
  if (max_iterations_per_stage < 1) throw UsageError("max iterations per stage must be at least 1");
  if (best_k < 1) throw UsageError("best_k must be at least 1");
  if (!(rtol > 0) || !(atol > 0)) throw UsageError("rtol and atol must be positive");
  if (runner != "mock" && runner != "subprocess") throw UsageError("runner must be mock or subprocess");
}

int select_best(const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw UsageError("no candidates to select from");
  int best = 0;
  for (int i = 1; i < static_cast<int>(candidates.size()); ++i)
    if (candidates[i].speedup > candidates[best].speedup) best = i;
  return best;
}

bool insert_stage(std::vector<Stage>& order, Stage stage) {
  for (std::size_t pos = 0; pos <= order.size(); ++pos) {
    std::vector<Stage> trial = order;
    trial.insert(trial.begin() + static_cast<std::ptrdiff_t>(pos), stage);
    if (validate_order(trial).ok) {
      order = std::move(trial);
      return true;
    }
  }
  return false;
}

OptimizationResult optimize(const std::string& kernel_source, const ProblemSpec& spec, const std::string& variant,
                            const PipelineConfig& config, const PipelineDeps& deps) {
  config.validate();
  if (!deps.llm || !deps.runner || !deps.kb || !deps.registry) throw UsageError("pipeline dependencies are incomplete");
  Orchestrator orch(kernel_source, spec, variant, config, deps);
  if (!orch.input().ok()) throw UsageError("input kernel does not parse: " + orch.input().syntax_error());

  OptimizationResult res;
  for (int k = 0; k < config.best_k; ++k) res.runs.push_back(orch.run_once(k));

  // Every candidate is timed against the input in one device session.
  DeviceLease lease = deps.runner->acquire();
  BenchReply base = deps.runner->bench(lease, orch.input(), spec, variant);
  res.input_time_us = trim_mean(base.times_us);
  res.flop = spec.resolve(variant).flop;
  res.bytes = spec.resolve(variant).bytes;
  if (!res.flop && base.flop) {
    res.flop = base.flop;
    res.flop_estimated = base.estimated;
  }
  if (!res.bytes && base.bytes) res.bytes = base.bytes;
  for (const auto& run : res.runs) {
    Candidate c;
    c.code = run.code;
    c.time_us = trim_mean(deps.runner->bench(lease, KernelModule::from_source(run.code), spec, variant).times_us);
    c.speedup = res.input_time_us / c.time_us;
    res.candidates.push_back(std::move(c));
  }
  res.selected_candidate_index = select_best(res.candidates);
  res.final_code = res.candidates[res.selected_candidate_index].code;
  res.per_stage = res.runs[res.selected_candidate_index].stages;
  return res;
}

json verification_json(const VerificationReport& r) {
  json j = {{"level_reached", level_name(r.level_reached)}, {"passed", r.passed}, {"diagnostic", r.diagnostic}};
  if (r.timings) j["timings_us"] = {{"original", r.timings->first}, {"optimized", r.timings->second}};
  if (r.speedup) j["speedup"] = *r.speedup;
  j["warnings"] = r.warnings;
  return j;
}

json result_json(const OptimizationResult& r, const ProblemSpec& spec, const std::string& variant,
                 const PipelineConfig& config, const GpuProfile& gpu) {
  auto stage_list = [](const std::vector<Stage>& v) {
    json a = json::array();
    for (Stage s : v) a.push_back(stage_name(s));
    return a;
  };
  json runs = json::array();
  for (const auto& run : r.runs) {
    json stages = json::array();
    for (const auto& s : run.stages) {
      json issues = json::array();
      for (const auto& i : s.issues) issues.push_back({{"type", i.type}, {"severity", i.severity}});
      json st = {{"stage", stage_name(s.stage)},
                 {"issues", issues},
                 {"succeeded", s.outcome.succeeded},
                 {"via_fallback", s.outcome.via_fallback},
                 {"iterations_used", s.outcome.iterations_used},
                 {"llm_calls", s.outcome.llm_calls},
                 {"overflow_retries", s.outcome.overflow_retries},
                 {"last_observation", s.outcome.last_observation},
                 {"output_fingerprint", fingerprint(s.outcome.code)}};
      if (s.outcome.dump_path) st["failed_dump"] = *s.outcome.dump_path;
      if (s.last_report) st["verification"] = verification_json(*s.last_report);
      stages.push_back(st);
    }
    json j = {{"plan",
               {{"ordered_stages", stage_list(run.plan.ordered_stages)},
                {"provenance", provenance_name(run.plan.provenance)},
                {"note", run.plan.note}}},
              {"stages", stages},
              {"skipped_after_reanalysis", stage_list(run.skipped_after_reanalysis)},
              {"analyzer_invocations", run.analyses.size()},
              {"events", run.events},
              {"output_fingerprint", fingerprint(run.code)}};
    json skipped = json::array();
    for (Stage s : kOptimizationStages)
      if (run.plan.skipped_stages.contains(s)) skipped.push_back(stage_name(s));
    j["plan"]["skipped_stages"] = skipped;
    if (run.final_gate) j["final_gate"] = verification_json(*run.final_gate);
    runs.push_back(j);
  }
  json cands = json::array();
  for (std::size_t i = 0; i < r.candidates.size(); ++i)
    cands.push_back({{"index", i},
                     {"time_us", r.candidates[i].time_us},
                     {"speedup", r.candidates[i].speedup},
                     {"fingerprint", fingerprint(r.candidates[i].code)}});
  return json{{"kernel", spec.name},
              {"variant", variant},
              {"config",
               {{"max_iterations_per_stage", config.max_iterations_per_stage},
                {"best_k", config.best_k},
                {"rtol", config.rtol},
                {"atol", config.atol},
                {"require_correctness", config.require_correctness},
                {"runner", config.runner},
                {"device", config.device_name}}},
              {"gpu", {{"family", family_name(gpu.family)}, {"name", gpu.name}, {"summary", profile_summary(gpu)}}},
              {"runs", runs},
              {"candidates", cands},
              {"selected_candidate_index", r.selected_candidate_index},
              {"input_time_us", r.input_time_us},
              {"speedup", r.speedup()},
              {"improved", fingerprint(r.final_code) != r.runs.front().analyses.front().kernel_fingerprint},
              {"final_fingerprint", fingerprint(r.final_code)}};
}

WrittenOutputs write_outputs(const OptimizationResult& r, const ProblemSpec& spec, const std::string& variant,
                             const PipelineConfig& config, const GpuProfile& gpu, const std::string& kernel_stem,
                             const std::string& csv_path) {
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  WrittenOutputs w;
  w.report_path = (dir / "report.json").string();
  w.kernel_path = (dir / (kernel_stem + "_optimized.py")).string();
  w.log_path = (dir / "run.log").string();
  w.csv_path = csv_path.empty() ? (dir / "results.csv").string() : csv_path;

  auto write = [](const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write '" + path + "'");
    out << text;
  };
  write(w.report_path, result_json(r, spec, variant, config, gpu).dump(2) + "\n");
  write(w.kernel_path, r.final_code);
  std::string log;
  for (std::size_t k = 0; k < r.runs.size(); ++k)
    for (const auto& e : r.runs[k].events) log += "[run " + std::to_string(k) + "] " + e + "\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "selected candidate %d: %.1f us -> %.1f us, speedup %.3fx\n",
                r.selected_candidate_index, r.input_time_us, r.candidates[r.selected_candidate_index].time_us,
                r.speedup());
  write(w.log_path, log + buf);

  const ResolvedVariant rv = spec.resolve(variant);
  const auto aibench = capture_aibench_env();
  auto row = [&](double t, std::string note) {
    BenchRecord rec = make_record(spec.name, Backend::triton, spec.level, r.flop.value_or(0.0), r.bytes.value_or(0.0),
                                  t, rv.dims, std::move(note));
    rec.flop_estimated = r.flop_estimated;
    rec.env_columns = aibench;
    log_record(rec, w.csv_path);
  };
  row(r.input_time_us, "original");
  char note[64];
  std::snprintf(note, sizeof note, "optimized speedup=%.4g", r.speedup());
  row(r.candidates[r.selected_candidate_index].time_us, note);
  return w;
}

}  // namespace kopt
