// SPDX-License-Identifier: Apache-2.0
//
// The four-level cascade: syntax, structure, correctness, performance. Each
// level gates the next; the first failure ends the run with a diagnostic that
// is fed back to the generating agent.
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kopt/kernel_module.hpp"
#include "kopt/runner.hpp"
#include "kopt/spec.hpp"

namespace kopt {

inline constexpr std::string_view kDefaultSentinel = "OPTIMIZATION_VERIFIED_SUCCESS";

enum class VerifyLevel { syntax, structure, correctness, performance, success };
std::string_view level_name(VerifyLevel l);

struct LevelResult {
  bool passed = true;
  std::string diagnostic;

  static LevelResult pass() { return {}; }
  static LevelResult fail(std::string d) { return {false, std::move(d)}; }
};

struct VerificationReport {
  VerifyLevel level_reached = VerifyLevel::syntax;
  bool passed = false;
  std::string diagnostic;
  std::optional<std::pair<double, double>> timings;  // (original_us, optimized_us)
  std::optional<double> speedup;
  std::vector<std::string> warnings;
};

LevelResult verify_syntax(std::string_view candidate);

// Structure checks, in order; the first failure wins.
LevelResult check_imports(const KernelModule& candidate);
LevelResult check_jit_kernel(const KernelModule& candidate);
LevelResult check_model_class(const KernelModule& candidate);
LevelResult check_num_warps(const KernelModule& candidate);
LevelResult check_block_sizes(const KernelModule& candidate);
LevelResult check_harness(const KernelModule& candidate, const KernelModule& baseline);
LevelResult check_evasion(const KernelModule& candidate);

// Candidate must already have parsed.
LevelResult verify_structure(const KernelModule& candidate, const KernelModule& baseline);

struct VerifyContext {
  Runner* runner = nullptr;
  const ProblemSpec* spec = nullptr;
  std::string variant;
  double rtol = 1e-2;
  double atol = 1e-5;
  // When false a correctness failure becomes a warning and the cascade
  // continues to performance.
  bool require_correctness = true;
  // Harness baseline and correctness reference.
  const KernelModule* reference = nullptr;
  // What the candidate has to beat; defaults to `reference`.
  const KernelModule* perf_baseline = nullptr;
};

LevelResult verify_correctness(Runner& runner, const DeviceLease& lease, const KernelModule& candidate,
                               const KernelModule& reference, const ProblemSpec& spec, const std::string& variant,
                               double rtol, double atol);

struct PerformanceResult {
  LevelResult result;
  double original_us = 0.0;
  double optimized_us = 0.0;
};

PerformanceResult verify_performance(Runner& runner, const DeviceLease& lease, const KernelModule& candidate,
                                     const KernelModule& baseline, const ProblemSpec& spec,
                                     const std::string& variant);

// Runs the whole cascade. Runner failures propagate as InfrastructureError.
VerificationReport verify(const std::string& candidate_source, const VerifyContext& ctx);

// The cascade packaged as the agent's compile_and_verify tool: the
// observation is the sentinel on success, a level-tagged diagnostic otherwise.
class VerifyTool {
 public:
  VerifyTool(VerifyContext ctx, std::string sentinel = std::string(kDefaultSentinel))
      : ctx_(std::move(ctx)), sentinel_(std::move(sentinel)) {}

  std::string name() const { return "compile_and_verify"; }
  std::string operator()(const std::string& candidate);
  const std::string& sentinel() const noexcept { return sentinel_; }
  const std::optional<VerificationReport>& last_report() const noexcept { return last_; }
  const VerifyContext& context() const noexcept { return ctx_; }

 private:
  VerifyContext ctx_;
  std::string sentinel_;
  std::optional<VerificationReport> last_;
};

std::string observation_for(const VerificationReport& r, std::string_view sentinel);

}  // namespace kopt
