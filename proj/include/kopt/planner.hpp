// SPDX-License-Identifier: Apache-2.0
//
// Orders the active optimization stages under the hard dependency edges. An
// LLM may propose the order; any flaw in the proposal falls back to the
// default sequence filtered to the active set.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kopt/analysis.hpp"
#include "kopt/llm.hpp"
#include "kopt/stage.hpp"

namespace kopt {

struct DependencyEdge {
  Stage before;
  Stage after;
};

const std::array<DependencyEdge, 9>& dependency_edges();

enum class PlanProvenance { llm, fallback_default };
std::string_view provenance_name(PlanProvenance p);

struct StagePlan {
  std::vector<Stage> ordered_stages;
  StageSet skipped_stages;
  PlanProvenance provenance = PlanProvenance::fallback_default;
  std::string note;  // why the LLM proposal was not used, when it was not
};

struct OrderCheck {
  bool ok = true;
  std::string violation;  // "dtype_fix->fusion", "duplicate stage fusion", ...
};

OrderCheck validate_order(const std::vector<Stage>& order);
// Same, over raw names as an LLM would produce them.
OrderCheck validate_order(const std::vector<std::string>& order);

// The default sequence restricted to `active`.
std::vector<Stage> default_order(StageSet active);

// A JSON array of stage names, optionally fenced. nullopt when the reply is
// not exactly that.
std::optional<std::vector<std::string>> parse_order_proposal(std::string_view reply);

std::string planner_prompt(StageSet active, const std::vector<Issue>& issues);

// Throws UsageError when `active` contains analysis. LLM failures of any
// kind degrade to the fallback; the LLM is not consulted for fewer than two
// stages.
StagePlan plan(StageSet active, const std::vector<Issue>& issues, ChatBackend* llm);

// "[dtype_fix, fusion]"
std::string format_order(const std::vector<Stage>& order);

}  // namespace kopt
