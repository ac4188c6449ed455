// SPDX-License-Identifier: Apache-2.0
#include "kopt/planner.hpp"

#include <algorithm>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "kopt/error.hpp"

namespace kopt {

using nlohmann::json;

const std::array<DependencyEdge, 9>& dependency_edges() {
  static const std::array<DependencyEdge, 9> edges = {{
      {Stage::algorithmic, Stage::dtype_fix},
      {Stage::algorithmic, Stage::fusion},
      {Stage::discovery, Stage::dtype_fix},
      {Stage::discovery, Stage::fusion},
      {Stage::dtype_fix, Stage::fusion},
      {Stage::memory_access, Stage::block_pointers},
      {Stage::fusion, Stage::gpu_specific},
      {Stage::block_pointers, Stage::gpu_specific},
      {Stage::gpu_specific, Stage::autotune},
  }};
  return edges;
}

std::string_view provenance_name(PlanProvenance p) {
  return p == PlanProvenance::llm ? "llm" : "fallback_default";
}

OrderCheck validate_order(const std::vector<Stage>& order) {
  StageSet seen;
  for (Stage s : order) {
    if (s == Stage::analysis) return {false, "analysis is not an optimization stage"};
    if (seen.contains(s)) return {false, "duplicate stage " + std::string(stage_name(s))};
    seen.insert(s);
  }
  auto index = [&](Stage s) { return std::find(order.begin(), order.end(), s) - order.begin(); };
  // Report the violated edge whose later-placed stage appears first.
  std::optional<std::pair<std::ptrdiff_t, DependencyEdge>> first;
  for (const auto& e : dependency_edges()) {
    if (!seen.contains(e.before) || !seen.contains(e.after)) continue;
    auto ib = index(e.before), ia = index(e.after);
    if (ib > ia && (!first || ia < first->first)) first = {ia, e};
  }
  if (first)
    return {false, std::string(stage_name(first->second.before)) + "->" + std::string(stage_name(first->second.after))};
  return {};
}

OrderCheck validate_order(const std::vector<std::string>& order) {
  std::vector<Stage> stages;
  for (const auto& n : order) {
    auto s = stage_from_name(n);
    if (!s) return {false, "unknown stage '" + n + "'"};
    stages.push_back(*s);
  }
  return validate_order(stages);
}

std::vector<Stage> default_order(StageSet active) {
  std::vector<Stage> out;
  for (Stage s : kOptimizationStages)
    if (active.contains(s)) out.push_back(s);
  return out;
}

std::optional<std::vector<std::string>> parse_order_proposal(std::string_view reply) {
  std::string_view body = reply;
  if (auto f = body.find("```"); f != std::string_view::npos) {
    auto nl = body.find('\n', f);
    auto close = nl == std::string_view::npos ? nl : body.find("```", nl);
    if (close == std::string_view::npos) return std::nullopt;
    body = body.substr(nl + 1, close - nl - 1);
  }
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_array()) return std::nullopt;
  std::vector<std::string> out;
  for (const auto& x : j) {
    if (!x.is_string()) return std::nullopt;
    out.push_back(x.get<std::string>());
  }
  return out;
}

std::string planner_prompt(StageSet active, const std::vector<Issue>& issues) {
  std::ostringstream o;
  o << "Order these optimization stages for one Triton kernel:";
  for (Stage s : default_order(active)) o << " " << stage_name(s);
  o << "\n\nHard constraints (left stage must run before right stage when both are present):\n";
  for (const auto& e : dependency_edges()) o << "  " << stage_name(e.before) << " -> " << stage_name(e.after) << "\n";
  o << "\nIssues found:\n" << format_issues(issues);
  o << "\nReply with only a JSON array of stage names containing each listed stage exactly once.\n";
  return o.str();
}

StagePlan plan(StageSet active, const std::vector<Issue>& issues, ChatBackend* llm) {
  if (active.contains(Stage::analysis)) throw UsageError("analysis cannot be planned as an optimization stage");
  StagePlan p;
  for (Stage s : kOptimizationStages)
    if (!active.contains(s)) p.skipped_stages.insert(s);
  p.ordered_stages = default_order(active);
  if (!llm || active.size() <= 1) return p;

  auto fallback = [&](std::string why) {
    p.ordered_stages = default_order(active);
    p.provenance = PlanProvenance::fallback_default;
    p.note = std::move(why);
    return p;
  };

  ChatRequest req;
  req.system = "You plan the stage order of a GPU kernel optimization pipeline.";
  req.messages.push_back({"user", planner_prompt(active, issues)});
  std::string text;
  try {
    text = llm->complete(req).text;
  } catch (const LlmError& e) {
    return fallback(std::string(e.class_name()) + ": " + e.what());
  }
  auto names = parse_order_proposal(text);
  if (!names) return fallback("proposal is not a JSON array of stage names");
  OrderCheck chk = validate_order(*names);
  if (!chk.ok) return fallback("proposal rejected: " + chk.violation);
  std::vector<Stage> order;
  for (const auto& n : *names) order.push_back(*stage_from_name(n));
  StageSet proposed;
  for (Stage s : order) proposed.insert(s);
  if (proposed != active) return fallback("proposal is not a permutation of the active stages");
  p.ordered_stages = std::move(order);
  p.provenance = PlanProvenance::llm;
  return p;
}

std::string format_order(const std::vector<Stage>& order) {
  std::string s = "[";
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) s += ", ";
    s += stage_name(order[i]);
  }
  return s + "]";
}

}  // namespace kopt
