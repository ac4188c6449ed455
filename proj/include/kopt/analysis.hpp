// SPDX-License-Identifier: Apache-2.0
//
// Issue taxonomy and the LLM analyzer. Every issue type routes to exactly one
// optimization stage; the analyzer turns a kernel into a typed inventory of
// issues drawn from the registry.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kopt/kernel_module.hpp"
#include "kopt/knowledge.hpp"
#include "kopt/llm.hpp"
#include "kopt/spec.hpp"
#include "kopt/stage.hpp"

namespace kopt {

inline constexpr std::string_view kOpenEnded = "open_ended";

// Append-only. Reads may run concurrently; writers must be serialized by the
// caller.
class IssueRegistry {
 public:
  IssueRegistry() = default;
  static IssueRegistry builtin();

  // Throws RegistrationError on a duplicate name, an empty name or a stage
  // that cannot be planned.
  void register_issue_type(std::string name, Stage stage);
  void register_issue_type(std::string name, std::string_view stage);

  // Throws LookupError naming the registry.
  Stage route(std::string_view issue_type) const;
  bool contains(std::string_view issue_type) const;
  std::size_t size() const noexcept { return routes_.size(); }
  const std::map<std::string, Stage, std::less<>>& routes() const noexcept { return routes_; }

 private:
  std::map<std::string, Stage, std::less<>> routes_;
};

struct Proposal {
  std::string what_changes;
  std::string why_valid;
  std::string sketch;
  std::string speedup_reasoning;

  bool complete() const;
};

struct Issue {
  std::string type;
  Stage stage = Stage::analysis;
  int severity = 3;
  std::string description;
  std::string suggested_fix;
  SpeedupRange estimated_speedup;
  std::optional<Proposal> proposal;
};

struct ProblemContext {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> shapes;
  std::optional<double> flop;
  std::string target_dtype;

  static ProblemContext from_variant(const ResolvedVariant& v);
  std::string to_text() const;
};

struct AnalysisReport {
  std::vector<Issue> issues;
  std::string kernel_fingerprint;
  ProblemContext context;
  std::vector<std::string> diagnostics;  // dropped or repaired records
  std::vector<std::string> warnings;
  bool parse_failed = false;  // both the first reply and the re-ask were unusable
  int llm_calls = 0;
};

// Stages with at least one issue in `issues`.
StageSet active_stages(const std::vector<Issue>& issues);

// Issues routed to `stage`, most severe first. Ties keep report order.
std::vector<Issue> issues_for_stage(const std::vector<Issue>& issues, Stage stage);

std::string format_issues(const std::vector<Issue>& issues);

struct ParsedIssues {
  bool ok = false;
  std::string error;  // why the reply was unusable
  std::vector<Issue> issues;
  std::vector<std::string> diagnostics;
};

// Parses one analyzer reply: a JSON array of issue records, optionally inside
// a ```json fence.
ParsedIssues parse_issue_reply(std::string_view reply, const IssueRegistry& registry);

std::string analyzer_system_prompt(const IssueRegistry& registry);
std::string analyzer_user_prompt(const KernelModule& kernel, const std::optional<std::string>& reference,
                                 const KnowledgeBase& kb, const ProblemContext& context);

// Throws UsageError when the kernel does not parse; backend failures
// propagate as LlmError.
AnalysisReport analyze(const KernelModule& kernel, const std::optional<std::string>& reference,
                       const KnowledgeBase& kb, const ProblemContext& context, ChatBackend& llm,
                       const IssueRegistry& registry = IssueRegistry::builtin());

}  // namespace kopt
