// SPDX-License-Identifier: Apache-2.0
#include "kopt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "kopt/analysis.hpp"
#include "kopt/csv_log.hpp"
#include "kopt/error.hpp"
#include "kopt/hardware.hpp"
#include "kopt/knowledge.hpp"
#include "kopt/llm.hpp"
#include "kopt/pipeline.hpp"
#include "kopt/planner.hpp"
#include "kopt/runner.hpp"
#include "kopt/spec.hpp"
#include "kopt/verifier.hpp"

namespace kopt {

namespace fs = std::filesystem;

namespace {

const char* getenv_fn(const char* k) { return std::getenv(k); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

struct LlmOpts {
  std::string script;
  std::string model, api_base;
  std::optional<double> temperature;
  std::optional<int> max_tokens;

  void add(CLI::App* app) {
    app->add_option("--llm-script", script, "Replay LLM replies from a YAML script instead of calling an endpoint");
    app->add_option("--model", model, "Model name (LLM_MODEL)");
    app->add_option("--api-base", api_base, "OpenAI-compatible base URL (OPENAI_API_BASE)");
    app->add_option("--temperature", temperature, "Sampling temperature (LLM_TEMPERATURE)");
    app->add_option("--max-tokens", max_tokens, "Completion token limit (LLM_MAX_TOKENS)");
  }

  std::shared_ptr<ChatBackend> make() const {
    if (!script.empty()) return ScriptedBackend::from_file(script);
    EndpointConfig c = EndpointConfig::from_env(getenv_fn);
    if (!model.empty()) c.model = model;
    if (!api_base.empty()) c.base_url = api_base;
    if (temperature) c.temperature = temperature;
    if (max_tokens) c.max_tokens = max_tokens;
    return std::make_shared<HttpChatBackend>(c);
  }
};

struct RunnerOpts {
  std::string mock_script;
  std::string runner_cmd = "python3 -m xpu_harness";
  std::string device;
  int warmup = 200;
  int iterations = 100;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--mock-script", mock_script, "Use the in-process mock runner with this scenario table");
    app->add_option("--runner-cmd", runner_cmd, "Harness command line, split on whitespace")->capture_default_str();
    app->add_option("--device", device, "Device name (XPU_DEVICE)");
    app->add_option("--warmup", warmup, "Warmup iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
    app->add_option("--iterations", iterations, "Timed iterations")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Input generation seed")->capture_default_str();
  }

  bool mock() const { return !mock_script.empty(); }

  std::unique_ptr<Runner> make(const std::string& device_name) const {
    std::shared_ptr<RunnerTransport> t;
    if (mock()) {
      t = MockRunner::from_yaml_file(mock_script);
    } else {
      auto argv = split_words(runner_cmd);
      if (argv.empty()) throw UsageError("--runner-cmd is empty");
      t = std::make_shared<SubprocessTransport>(argv);
    }
    RunnerOptions o;
    o.device = device_name;
    o.seed = seed;
    o.warmup = warmup;
    o.iterations = iterations;
    return std::make_unique<Runner>(t, o);
  }
};

// Config file first; otherwise probe the device, then xpu-smi, unless told not to.
GpuProfile resolve_gpu(const std::string& config_path, bool probe, std::ostream& err) {
  if (!config_path.empty()) return detect_gpu(DetectSource::config_file, read_file(config_path));
  if (!probe) return GpuProfile{};
  for (DetectSource s : {DetectSource::device_query, DetectSource::smi_json}) {
    try {
      return detect_gpu(s, std::nullopt);
    } catch (const Error&) {
    }
  }
  err << "warning: no GPU profile found; using generic defaults\n";
  return GpuProfile{};
}

void print_issues(std::ostream& out, const AnalysisReport& r) {
  out << format_issues(r.issues);
  out << "active stages: " << format_order(default_order(active_stages(r.issues))) << "\n";
  for (const auto& d : r.diagnostics) out << "dropped: " << d << "\n";
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
}

void print_plan(std::ostream& out, const StagePlan& p) {
  out << format_order(p.ordered_stages) << "\n";
  std::string skipped;
  for (Stage s : kOptimizationStages)
    if (p.skipped_stages.contains(s)) skipped += (skipped.empty() ? "" : ", ") + std::string(stage_name(s));
  out << "skipped: " << (skipped.empty() ? "(none)" : skipped) << "\n";
  out << "provenance: " << provenance_name(p.provenance) << "\n";
  if (!p.note.empty()) out << "note: " << p.note << "\n";
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const LookupError*>(&e) ||
      dynamic_cast<const SpecError*>(&e) || dynamic_cast<const LoadError*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const RegistrationError*>(&e))
    return kExitUsage;
  return kExitInfrastructure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Staged, verified Triton kernel optimization for Intel XPU", "kopt"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  // optimize
  auto* opt = app.add_subcommand("optimize", "Run the full pipeline on a kernel");
  std::string kernel_path, spec_path, variant = "ci", reference_path, out_dir = "kopt_out", csv_path, gpu_config;
  std::string kb_dir = "knowledge";
  std::optional<int> max_iter, best_k;
  std::optional<double> rtol, atol;
  bool no_correctness = false, no_llm_plan = false;
  LlmOpts llm;
  RunnerOpts run;
  opt->add_option("kernel", kernel_path, "Kernel module (.py)")->required()->check(CLI::ExistingFile);
  opt->add_option("--spec", spec_path, "Problem spec (YAML)")->required()->check(CLI::ExistingFile);
  opt->add_option("--variant", variant, "Spec variant")->capture_default_str();
  opt->add_option("--reference", reference_path, "PyTorch reference shown to the analyzer")->check(CLI::ExistingFile);
  opt->add_option("--kb-dir", kb_dir, "Knowledge base directory")->capture_default_str();
  opt->add_option("--out", out_dir, "Output directory")->capture_default_str();
  opt->add_option("--csv", csv_path, "CSV results file (default <out>/results.csv)");
  opt->add_option("--gpu-config", gpu_config, "GPU profile YAML")->check(CLI::ExistingFile);
  opt->add_option("--max-iterations", max_iter, "CoVeR iterations per stage (MAX_ATTEMPTS_PER_STAGE)");
  opt->add_option("--best-k", best_k, "Independent runs to pick from (BEST_K)");
  opt->add_option("--rtol", rtol, "Correctness rtol (CORRECTNESS_RTOL)");
  opt->add_option("--atol", atol, "Correctness atol (CORRECTNESS_ATOL)");
  opt->add_flag("--no-require-correctness", no_correctness, "Demote correctness failures to warnings");
  opt->add_flag("--no-llm-plan", no_llm_plan, "Order stages without asking the LLM");
  llm.add(opt);
  run.add(opt);

  // analyze
  auto* ana = app.add_subcommand("analyze", "Classify a kernel's performance issues");
  ana->add_option("kernel", kernel_path, "Kernel module (.py)")->required()->check(CLI::ExistingFile);
  ana->add_option("--spec", spec_path, "Problem spec (YAML)")->required()->check(CLI::ExistingFile);
  ana->add_option("--variant", variant, "Spec variant")->capture_default_str();
  ana->add_option("--reference", reference_path, "PyTorch reference")->check(CLI::ExistingFile);
  ana->add_option("--kb-dir", kb_dir, "Knowledge base directory")->capture_default_str();
  llm.add(ana);

  // plan
  auto* pln = app.add_subcommand("plan", "Order the stages for a set of issue types");
  std::vector<std::string> issue_types;
  bool plan_llm = false;
  pln->add_option("--issues", issue_types, "Issue types")->required()->delimiter(',');
  pln->add_flag("--llm", plan_llm, "Ask the configured LLM for the order");
  llm.add(pln);

  // validate
  auto* val = app.add_subcommand("validate", "Syntax and structure checks only");
  std::string baseline_path;
  val->add_option("kernel", kernel_path, "Candidate kernel module")->required()->check(CLI::ExistingFile);
  val->add_option("--baseline", baseline_path, "Baseline whose harness must be preserved")->check(CLI::ExistingFile);

  // bench-compare
  auto* cmp = app.add_subcommand("bench-compare", "Time two kernels and check they agree");
  std::string optimized_path;
  cmp->add_option("original", kernel_path, "Original kernel")->required()->check(CLI::ExistingFile);
  cmp->add_option("optimized", optimized_path, "Optimized kernel")->required()->check(CLI::ExistingFile);
  cmp->add_option("--spec", spec_path, "Problem spec (YAML)")->required()->check(CLI::ExistingFile);
  cmp->add_option("--variant", variant, "Spec variant")->capture_default_str();
  cmp->add_option("--csv", csv_path, "Append both timings to this CSV");
  cmp->add_option("--rtol", rtol, "Correctness rtol");
  cmp->add_option("--atol", atol, "Correctness atol");
  run.add(cmp);

  // kb-lint / kb-format
  auto* lint = app.add_subcommand("kb-lint", "Load the knowledge base and report problems");
  lint->add_option("--kb-dir", kb_dir, "Knowledge base directory")->capture_default_str();
  auto* kbf = app.add_subcommand("kb-format", "Print the knowledge injected for one stage");
  std::string stage_arg;
  kbf->add_option("stage", stage_arg, "Stage name or alias")->required();
  kbf->add_option("--kb-dir", kb_dir, "Knowledge base directory")->capture_default_str();

  // grid
  auto* grd = app.add_subcommand("grid", "Print the autotune grid for a GEMM shape");
  std::int64_t m = 0, n = 0, k = 0;
  int bpe = 2;
  std::string family;
  bool python = false;
  grd->add_option("--m", m)->required()->check(CLI::PositiveNumber);
  grd->add_option("--n", n)->required()->check(CLI::PositiveNumber);
  grd->add_option("--k", k)->required()->check(CLI::PositiveNumber);
  grd->add_option("--dtype-bytes", bpe, "Bytes per element")->capture_default_str()->check(CLI::IsMember({1, 2, 4, 8}));
  grd->add_option("--gpu-config", gpu_config, "GPU profile YAML")->check(CLI::ExistingFile);
  grd->add_option("--family", family, "GPU family when no config is given");
  grd->add_flag("--python", python, "Emit a triton.autotune configs list");

  // gpu-info
  auto* gpu = app.add_subcommand("gpu-info", "Detect the GPU and print its profile");
  std::string source = "device_query", payload_path;
  gpu->add_option("--source", source, "device_query, smi_json or config_file")->capture_default_str();
  gpu->add_option("--payload", payload_path, "Read the payload from a file instead of probing")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << e.get_name() << ": " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const auto env = PipelineConfig::from_env(getenv_fn);

    if (*opt) {
      PipelineConfig cfg = env;
      if (max_iter) cfg.max_iterations_per_stage = *max_iter;
      if (best_k) cfg.best_k = *best_k;
      if (rtol) cfg.rtol = *rtol;
      if (atol) cfg.atol = *atol;
      if (no_correctness) cfg.require_correctness = false;
      if (!run.device.empty()) cfg.device_name = run.device;
      cfg.plan_with_llm = !no_llm_plan;
      cfg.kb_dir = kb_dir;
      cfg.output_dir = out_dir;
      cfg.runner = run.mock() ? "mock" : "subprocess";
      cfg.validate();

      const std::string source = read_file(kernel_path);
      const ProblemSpec spec = load_spec_file(spec_path);
      spec.resolve(variant);
      const KnowledgeBase kb = load_knowledge(kb_dir);
      for (const auto& d : kb.diagnostics) err << "kb: " << d.file << ": " << d.message << "\n";
      const IssueRegistry registry = IssueRegistry::builtin();
      auto backend = llm.make();
      auto runner = run.make(cfg.device_name);

      PipelineDeps deps;
      deps.llm = backend.get();
      deps.runner = runner.get();
      deps.kb = &kb;
      deps.registry = &registry;
      deps.gpu = resolve_gpu(gpu_config, !run.mock(), err);
      if (!reference_path.empty()) deps.reference_source = read_file(reference_path);

      OptimizationResult r = optimize(source, spec, variant, cfg, deps);
      WrittenOutputs w = write_outputs(r, spec, variant, cfg, deps.gpu, fs::path(kernel_path).stem().string(), csv_path);

      const RunTrace& t = r.runs[r.selected_candidate_index];
      out << "plan: " << format_order(t.plan.ordered_stages) << " (" << provenance_name(t.plan.provenance) << ")\n";
      for (const auto& s : t.stages)
        out << "  " << stage_name(s.stage) << ": "
            << (s.outcome.succeeded ? (s.outcome.via_fallback ? "verified (fallback)" : "verified") : "unchanged")
            << ", " << s.outcome.iterations_used << " iteration(s)\n";
      for (Stage s : t.skipped_after_reanalysis) out << "  " << stage_name(s) << ": skipped after re-analysis\n";
      char line[128];
      std::snprintf(line, sizeof line, "speedup: %.3fx (candidate %d of %zu)\n", r.speedup(), r.selected_candidate_index,
                    r.candidates.size());
      out << line;
      out << "kernel: " << w.kernel_path << "\nreport: " << w.report_path << "\ncsv: " << w.csv_path << "\n";
      return kExitOk;
    }

    if (*ana) {
      const KernelModule kernel = KernelModule::from_source(read_file(kernel_path));
      const ProblemSpec spec = load_spec_file(spec_path);
      const KnowledgeBase kb = load_knowledge(kb_dir);
      auto backend = llm.make();
      std::optional<std::string> ref;
      if (!reference_path.empty()) ref = read_file(reference_path);
      AnalysisReport r = analyze(kernel, ref, kb, ProblemContext::from_variant(spec.resolve(variant)), *backend);
      print_issues(out, r);
      return kExitOk;
    }

    if (*pln) {
      const IssueRegistry& registry = IssueRegistry::builtin();
      std::vector<Issue> issues;
      for (const auto& t : issue_types) {
        Issue i;
        i.type = t;
        i.stage = registry.route(t);
        issues.push_back(i);
      }
      std::shared_ptr<ChatBackend> backend;
      if (plan_llm || !llm.script.empty()) backend = llm.make();
      print_plan(out, plan(active_stages(issues), issues, backend.get()));
      return kExitOk;
    }

    if (*val) {
      const std::string source = read_file(kernel_path);
      VerificationReport rep;
      LevelResult s = verify_syntax(source);
      if (!s.passed) {
        rep.level_reached = VerifyLevel::syntax;
        rep.diagnostic = s.diagnostic;
      } else {
        const KernelModule cand = KernelModule::from_source(source);
        const KernelModule base =
            baseline_path.empty() ? cand : KernelModule::from_source(read_file(baseline_path));
        if (!base.ok()) throw UsageError("baseline does not parse: " + base.syntax_error());
        LevelResult st = verify_structure(cand, base);
        rep.level_reached = st.passed ? VerifyLevel::success : VerifyLevel::structure;
        rep.passed = st.passed;
        rep.diagnostic = st.diagnostic;
      }
      if (rep.passed) {
        out << "ok: syntax and structure checks passed\n";
        return kExitOk;
      }
      err << observation_for(rep, kDefaultSentinel) << "\n";
      return kExitRejected;
    }

    if (*cmp) {
      const ProblemSpec spec = load_spec_file(spec_path);
      const ResolvedVariant rv = spec.resolve(variant);
      auto runner = run.make(run.device.empty() ? env.device_name : run.device);
      const KernelModule a = KernelModule::from_source(read_file(kernel_path));
      const KernelModule b = KernelModule::from_source(read_file(optimized_path));
      if (!a.ok() || !b.ok()) throw UsageError("input kernel does not parse");
      ComparisonResult c = compare_kernels(*runner, a, b, spec, variant, rtol.value_or(env.rtol), atol.value_or(env.atol));
      char line[160];
      std::snprintf(line, sizeof line, "original %.3f us, optimized %.3f us, speedup %.3fx, %s\n", c.original_us,
                    c.optimized_us, c.speedup, c.correct ? "outputs match" : "OUTPUTS DIFFER");
      out << line;
      if (!c.correct) err << c.feedback << "\n";
      if (!csv_path.empty()) {
        const auto aibench = capture_aibench_env();
        for (auto [t, note] : {std::pair{c.original_us, "original"}, std::pair{c.optimized_us, "optimized"}}) {
          BenchRecord rec = make_record(spec.name, Backend::triton, spec.level, rv.flop.value_or(0.0),
                                        rv.bytes.value_or(0.0), t, rv.dims, note);
          rec.env_columns = aibench;
          log_record(rec, csv_path);
        }
      }
      return c.correct ? kExitOk : kExitRejected;
    }

    if (*lint) {
      const KnowledgeBase kb = load_knowledge(kb_dir);
      for (const auto& d : kb.diagnostics) out << d.file << ": " << d.message << "\n";
      out << kb_counts(kb) << "\n";
      return kb.diagnostics.empty() ? kExitOk : kExitRejected;
    }

    if (*kbf) {
      const KnowledgeBase kb = load_knowledge(kb_dir);
      out << format_for_llm(kb, stage_arg);
      return kExitOk;
    }

    if (*grd) {
      GpuProfile p;
      if (!gpu_config.empty()) {
        p = detect_gpu(DetectSource::config_file, read_file(gpu_config));
      } else if (!family.empty()) {
        auto f = family_from_name(family);
        if (!f) throw UsageError("unknown GPU family '" + family + "' (arc, arc_pro, integrated, unknown)");
        p.family = *f;
      }
      const auto grid = generate_autotune_grid(p, m, n, k, bpe);
      if (python) {
        out << format_autotune_configs(grid);
        return kExitOk;
      }
      out << "BLOCK_M BLOCK_N BLOCK_K GROUP_M num_warps num_stages grf\n";
      for (const auto& t : grid)
        out << t.block_m << " " << t.block_n << " " << t.block_k << " " << t.group_size_m << " " << t.num_warps << " "
            << t.num_stages << " " << grf_name(t.grf) << "\n";
      return kExitOk;
    }

    if (*gpu) {
      auto src = detect_source_from_name(source);
      if (!src) throw UsageError("unknown source '" + source + "'");
      std::optional<std::string> payload;
      if (!payload_path.empty()) payload = read_file(payload_path);
      out << profile_summary(detect_gpu(*src, payload)) << "\n";
      return kExitOk;
    }
  } catch (const Error& e) {
    err << e.class_name() << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "InternalError: " << e.what() << "\n";
    return kExitInfrastructure;
  }
  return kExitUsage;
}

}  // namespace kopt
