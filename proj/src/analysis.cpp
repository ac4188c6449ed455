// SPDX-License-Identifier: Apache-2.0
#include "kopt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "kopt/error.hpp"

namespace kopt {

using nlohmann::json;

namespace {

struct Seed {
  const char* name;
  Stage stage;
};

constexpr Seed kBuiltinTaxonomy[] = {
    {"algorithmic_restructuring", Stage::algorithmic},
    {"open_ended", Stage::discovery},
    {"dtype_float64", Stage::dtype_fix},
    {"dtype_precision", Stage::dtype_fix},
    {"dtype_input_conversion", Stage::dtype_fix},
    {"unfused_kernels", Stage::fusion},
    {"fusion_register_pressure", Stage::fusion},
    {"fusion_replaces_vendor", Stage::fusion},
    {"fusion_noop", Stage::fusion},
    {"uncoalesced_access", Stage::memory_access},
    {"missing_boundary_check", Stage::memory_access},
    {"device_host_sync", Stage::memory_access},
    {"non_contiguous_input", Stage::memory_access},
    {"long_liveness", Stage::memory_access},
    {"high_register_pressure", Stage::memory_access},
    {"manual_pointer_arithmetic", Stage::block_pointers},
    {"missing_block_pointers", Stage::block_pointers},
    {"block_ptr_boundary_wrong", Stage::block_pointers},
    {"block_ptr_multiple_of_misuse", Stage::block_pointers},
    {"missing_persistent", Stage::persistent_kernel},
    {"persistent_num_progs_hardcoded", Stage::persistent_kernel},
    {"suboptimal_warps", Stage::gpu_specific},
    {"missing_grf_mode", Stage::gpu_specific},
    {"suboptimal_tile_size", Stage::gpu_specific},
    {"no_swizzling", Stage::gpu_specific},
    {"repack_in_forward", Stage::gpu_specific},
    {"missing_packed_transpose", Stage::gpu_specific},
    {"serialized_n_tiles", Stage::gpu_specific},
    {"sigmoid_slow_exp", Stage::gpu_specific},
    {"missing_autotune", Stage::autotune},
};

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

std::string text_field(const json& o, const char* key) {
  auto it = o.find(key);
  if (it == o.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  return it->dump();
}

std::optional<double> number_field(const json& o, const char* key) {
  auto it = o.find(key);
  if (it == o.end()) return std::nullopt;
  if (it->is_number()) return it->get<double>();
  if (it->is_string()) {
    try {
      std::size_t used = 0;
      std::string s = it->get<std::string>();
      double v = std::stod(s, &used);
      if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

// The JSON text inside a reply: the first fenced block if there is one,
// otherwise the span from the first '[' to the last ']'.
std::optional<std::string> json_payload(std::string_view reply) {
  auto fence = reply.find("```");
  if (fence != std::string_view::npos) {
    auto body = reply.find('\n', fence);
    auto close = body == std::string_view::npos ? body : reply.find("```", body);
    if (close != std::string_view::npos) return std::string(reply.substr(body + 1, close - body - 1));
  }
  auto a = reply.find('[');
  auto b = reply.rfind(']');
  if (a == std::string_view::npos || b == std::string_view::npos || b < a) return std::nullopt;
  return std::string(reply.substr(a, b - a + 1));
}

std::string proposal_text(const Proposal& p) {
  return "  what changes: " + p.what_changes + "\n  why valid: " + p.why_valid + "\n  sketch:\n" + p.sketch +
         "\n  speedup reasoning: " + p.speedup_reasoning + "\n";
}

}  // namespace

// ---------------------------------------------------------------------------

IssueRegistry IssueRegistry::builtin() {
  IssueRegistry r;
  for (const auto& s : kBuiltinTaxonomy) r.register_issue_type(s.name, s.stage);
  return r;
}

void IssueRegistry::register_issue_type(std::string name, Stage stage) {
  if (name.empty()) throw RegistrationError("issue type name is empty");
  if (stage == Stage::analysis)
    throw RegistrationError("issue type '" + name + "' cannot route to analysis; it is not an optimization stage");
  if (routes_.count(name))
    throw RegistrationError("issue type '" + name + "' is already registered (routes to " +
                            std::string(stage_name(routes_.find(name)->second)) + ")");
  routes_.emplace(std::move(name), stage);
}

void IssueRegistry::register_issue_type(std::string name, std::string_view stage) {
  auto s = stage_from_name(stage);
  if (!s) throw RegistrationError("unknown stage '" + std::string(stage) + "' for issue type '" + name + "'");
  register_issue_type(std::move(name), *s);
}

Stage IssueRegistry::route(std::string_view issue_type) const {
  auto it = routes_.find(issue_type);
  if (it == routes_.end())
    throw LookupError("unknown issue type '" + std::string(issue_type) + "' in the issue type registry (" +
                      std::to_string(routes_.size()) + " registered types)");
  return it->second;
}

bool IssueRegistry::contains(std::string_view issue_type) const { return routes_.find(issue_type) != routes_.end(); }

bool Proposal::complete() const {
  return !blank(what_changes) && !blank(why_valid) && !blank(sketch) && !blank(speedup_reasoning);
}

ProblemContext ProblemContext::from_variant(const ResolvedVariant& v) {
  ProblemContext c;
  for (const auto& in : v.inputs) c.shapes.emplace_back(in.name, in.shape);
  c.flop = v.flop;
  c.target_dtype = v.dtype;
  return c;
}

std::string ProblemContext::to_text() const {
  std::ostringstream o;
  o << "Input shapes:";
  if (shapes.empty()) o << " (unknown)";
  for (const auto& [name, dims] : shapes) {
    o << "\n  " << name << ": [";
    for (std::size_t i = 0; i < dims.size(); ++i) o << (i ? ", " : "") << dims[i];
    o << "]";
  }
  o << "\nFLOP count: ";
  if (flop) {
    o << json(*flop).dump();
  } else {
    o << "(unknown)";
  }
  o << "\nTarget dtype: " << (target_dtype.empty() ? "(unspecified)" : target_dtype) << "\n";
  return o.str();
}

StageSet active_stages(const std::vector<Issue>& issues) {
  StageSet s;
  for (const auto& i : issues) s.insert(i.stage);
  return s;
}

std::vector<Issue> issues_for_stage(const std::vector<Issue>& issues, Stage stage) {
  std::vector<Issue> out;
  for (const auto& i : issues)
    if (i.stage == stage) out.push_back(i);
  std::stable_sort(out.begin(), out.end(), [](const Issue& a, const Issue& b) { return a.severity > b.severity; });
  return out;
}

std::string format_issues(const std::vector<Issue>& issues) {
  if (issues.empty()) return "(no issues)\n";
  std::ostringstream o;
  for (const auto& i : issues) {
    o << "- " << i.type << " [severity " << i.severity << ", expected " << json(i.estimated_speedup.low).dump()
      << "x-" << json(i.estimated_speedup.high).dump() << "x]: " << i.description << "\n";
    if (!i.suggested_fix.empty()) o << "  fix: " << i.suggested_fix << "\n";
    if (i.proposal) o << proposal_text(*i.proposal);
  }
  return o.str();
}

ParsedIssues parse_issue_reply(std::string_view reply, const IssueRegistry& registry) {
  ParsedIssues out;
  auto payload = json_payload(reply);
  if (!payload) {
    out.error = "no JSON array found in the reply";
    return out;
  }
  json arr = json::parse(*payload, nullptr, false);
  if (arr.is_discarded()) {
    out.error = "the JSON array does not parse";
    return out;
  }
  if (!arr.is_array()) {
    out.error = "expected a JSON array of issue records";
    return out;
  }
  out.ok = true;
  for (std::size_t n = 0; n < arr.size(); ++n) {
    const json& rec = arr[n];
    const std::string at = "record " + std::to_string(n);
    if (!rec.is_object() || !rec.contains("type") || !rec["type"].is_string()) {
      out.diagnostics.push_back(at + ": not an object with a string 'type'; dropped");
      continue;
    }
    Issue is;
    is.type = rec["type"].get<std::string>();
    if (!registry.contains(is.type)) {
      out.diagnostics.push_back(at + ": unknown issue type '" + is.type + "'; dropped");
      continue;
    }
    is.stage = registry.route(is.type);
    if (auto sev = number_field(rec, "severity")) {
      long v = std::lround(*sev);
      is.severity = static_cast<int>(std::clamp(v, 1L, 5L));
      if (is.severity != *sev) out.diagnostics.push_back(at + ": severity " + json(*sev).dump() + " clamped to " +
                                                         std::to_string(is.severity));
    } else {
      out.diagnostics.push_back(at + ": missing severity, using 3");
    }
    is.description = text_field(rec, "description");
    is.suggested_fix = text_field(rec, "suggested_fix");
    auto lo = number_field(rec, "speedup_low");
    auto hi = number_field(rec, "speedup_high");
    if (auto it = rec.find("estimated_speedup"); it != rec.end() && it->is_array() && it->size() == 2 &&
                                                 (*it)[0].is_number() && (*it)[1].is_number()) {
      lo = (*it)[0].get<double>();
      hi = (*it)[1].get<double>();
    }
    is.estimated_speedup.low = lo.value_or(hi.value_or(1.0));
    is.estimated_speedup.high = hi.value_or(is.estimated_speedup.low);
    if (is.estimated_speedup.low > is.estimated_speedup.high)
      std::swap(is.estimated_speedup.low, is.estimated_speedup.high);
    if (auto it = rec.find("proposal"); it != rec.end() && it->is_object()) {
      Proposal p;
      p.what_changes = text_field(*it, "what_changes");
      p.why_valid = text_field(*it, "why_valid");
      p.sketch = text_field(*it, "sketch");
      p.speedup_reasoning = text_field(*it, "speedup_reasoning");
      is.proposal = p;
    }
    if (is.type == kOpenEnded && !(is.proposal && is.proposal->complete())) {
      out.diagnostics.push_back(at + ": open_ended issue without a complete proposal; dropped");
      continue;
    }
    out.issues.push_back(std::move(is));
  }
  return out;
}

std::string analyzer_system_prompt(const IssueRegistry& registry) {
  std::ostringstream o;
  o << "You analyze Triton GPU kernels for Intel XPU and list optimization opportunities.\n"
       "Do not rewrite the kernel. Report only issues present in the CURRENT kernel.\n\n"
       "Issue types, grouped by the stage that fixes them:\n";
  for (Stage s : kOptimizationStages) {
    std::vector<std::string> names;
    for (const auto& [name, st] : registry.routes())
      if (st == s) names.push_back(name);
    if (names.empty()) continue;
    o << "  " << stage_name(s) << ":";
    for (const auto& n : names) o << " " << n;
    o << "\n";
  }
  o << "\nReply with one JSON array and nothing else. Each element:\n"
       "  {\"type\": <issue type>, \"severity\": <1-5>, \"description\": <text>, \"suggested_fix\": <text>,\n"
       "   \"speedup_low\": <number>, \"speedup_high\": <number>}\n"
       "An open_ended issue must also carry \"proposal\": {\"what_changes\", \"why_valid\", \"sketch\","
       " \"speedup_reasoning\"}, all non-empty.\n"
       "Reply with [] when the kernel has no issues.\n";
  return o.str();
}

std::string analyzer_user_prompt(const KernelModule& kernel, const std::optional<std::string>& reference,
                                 const KnowledgeBase& kb, const ProblemContext& context) {
  std::ostringstream o;
  o << "## PROBLEM\n\n" << context.to_text();
  o << "\n## CURRENT KERNEL\n\n```python\n" << kernel.source();
  if (!kernel.source().empty() && kernel.source().back() != '\n') o << "\n";
  o << "```\n";
  if (reference) o << "\n## PYTORCH REFERENCE\n\n```python\n" << *reference << "\n```\n";
  o << "\n## KNOWN PATTERNS\n\n";
  if (kb.patterns.empty()) o << "(none)\n";
  for (const auto& p : kb.patterns) o << "- " << p.id << " (" << stage_name(p.stage) << "): " << p.rationale << "\n";
  return o.str();
}

AnalysisReport analyze(const KernelModule& kernel, const std::optional<std::string>& reference,
                       const KnowledgeBase& kb, const ProblemContext& context, ChatBackend& llm,
                       const IssueRegistry& registry) {
  if (!kernel.ok()) throw UsageError("cannot analyze a kernel that does not parse: " + kernel.syntax_error());
  AnalysisReport rep;
  rep.kernel_fingerprint = kernel.fingerprint();
  rep.context = context;

  ChatRequest req;
  req.system = analyzer_system_prompt(registry);
  req.messages.push_back({"user", analyzer_user_prompt(kernel, reference, kb, context)});

  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatResponse resp = llm.complete(req);
    ++rep.llm_calls;
    ParsedIssues parsed = parse_issue_reply(resp.text, registry);
    if (parsed.ok) {
      rep.issues = std::move(parsed.issues);
      rep.diagnostics = std::move(parsed.diagnostics);
      return rep;
    }
    if (attempt == 0) {
      req.messages.push_back({"assistant", resp.text});
      req.messages.push_back({"user", "Your reply could not be used: " + parsed.error +
                                          ". Reply again with only the JSON array of issue records."});
    } else {
      rep.warnings.push_back("analyzer reply unusable after one re-ask (" + parsed.error + "); no issues recorded");
    }
  }
  rep.parse_failed = true;
  return rep;
}

}  // namespace kopt
