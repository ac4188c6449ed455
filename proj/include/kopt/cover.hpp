// SPDX-License-Identifier: Apache-2.0
//
// Chain-of-Verification-and-Refinement: one optimization stage run as a
// generate, verify, refine loop. The LLM proposes a candidate, every tool
// checks it, and the observations feed the next attempt. A stage never hands
// back a kernel that failed verification.
#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kopt/analysis.hpp"
#include "kopt/hardware.hpp"
#include "kopt/llm.hpp"
#include "kopt/stage.hpp"
#include "kopt/verifier.hpp"

namespace kopt {

enum class EntryKind { thought, tool_name, tool_args, observation };
std::string_view entry_kind_name(EntryKind k);

struct TrajectoryEntry {
  EntryKind kind;
  int iteration;
  std::string payload;
};

class Trajectory {
 public:
  // Appends one complete group: thought, tool name, tool args, observation.
  void record(int iteration, std::string thought, std::string tool, std::string args, std::string observation);

  const std::vector<TrajectoryEntry>& entries() const noexcept { return entries_; }
  std::size_t groups() const noexcept { return entries_.size() / 4; }
  std::size_t thought_count() const;
  bool empty() const noexcept { return entries_.empty(); }

  // Rendered for the prompt, oldest first.
  std::string render() const;

  friend Trajectory truncate(const Trajectory& t);

 private:
  std::vector<TrajectoryEntry> entries_;
};

// Drops the oldest 4-entry group. Throws TruncationExhaustedError when fewer
// than two groups remain.
Trajectory truncate(const Trajectory& t);

// A tool maps a candidate to an observation.
struct AgentTool {
  std::string name;
  std::function<std::string(const std::string& candidate)> call;
};

// Wraps the verification cascade. The tool keeps a reference to `v`.
AgentTool verify_tool(VerifyTool& v);

struct CoverTask {
  // The pipeline's input kernel; shown to the model as the baseline.
  std::string original_code;
  // The kernel this stage starts from and returns on failure.
  std::string current_code;
  Stage stage = Stage::analysis;
  std::vector<Issue> issues;
  std::string knowledge;
  GpuProfile gpu;
  int max_iterations = 5;
  std::string success_sentinel = std::string(kDefaultSentinel);
};

struct CoverOptions {
  // Failed fallback candidates are dumped under <dump_dir>/failed/. Empty
  // disables dumping.
  std::string dump_dir;
  std::function<std::int64_t()> clock;  // unix seconds; defaults to system time
};

struct CoverOutcome {
  std::string code;
  bool succeeded = false;
  int iterations_used = 0;
  bool via_fallback = false;
  Trajectory trajectory;
  int llm_calls = 0;       // completed responses
  int overflow_retries = 0;
  std::optional<std::string> dump_path;
  std::string last_observation;
};

// Parsed LLM reply: "THOUGHT: ..." then "CODE:" and a ```python block.
struct AgentReply {
  std::string thought;
  std::optional<std::string> code;
};
AgentReply parse_agent_reply(std::string_view text);

std::string cover_system_prompt(const CoverTask& task, const std::vector<AgentTool>& tools);
std::string cover_user_prompt(const CoverTask& task, const Trajectory& traj, bool final_extraction);

// Throws UsageError for max_iterations < 1 or no tools. ScriptExhaustedError,
// TruncationExhaustedError and tool InfrastructureErrors propagate; other LLM
// failures become observations.
CoverOutcome run_cover(const CoverTask& task, ChatBackend& llm, const std::vector<AgentTool>& tools,
                       const CoverOptions& options = {});

}  // namespace kopt
