// SPDX-License-Identifier: Apache-2.0
#include "kopt/cover.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kopt/error.hpp"

namespace kopt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string_view::npos) return {};
  auto b = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(a, b - a + 1));
}

// Start of the line containing `pos`.
std::size_t line_start(std::string_view s, std::size_t pos) {
  auto nl = s.rfind('\n', pos == 0 ? 0 : pos - 1);
  return (pos == 0 || nl == std::string_view::npos) ? 0 : nl + 1;
}

struct Fence {
  std::size_t open;   // first backtick
  std::size_t body;   // first byte of the code
  std::size_t close;  // first backtick of the closing run, or npos
};

// First fenced block starting at or after `from` whose info string is empty
// or names python.
std::optional<Fence> find_code_fence(std::string_view s, std::size_t from) {
  for (std::size_t p = s.find("```", from); p != std::string_view::npos; p = s.find("```", p + 3)) {
    if (line_start(s, p) != p && trim(s.substr(line_start(s, p), p - line_start(s, p))).size()) continue;
    std::size_t n = 0;
    while (p + n < s.size() && s[p + n] == '`') ++n;
    auto eol = s.find('\n', p);
    if (eol == std::string_view::npos) return std::nullopt;
    std::string info = trim(s.substr(p + n, eol - p - n));
    const std::string closing(n, '`');
    std::size_t close = std::string_view::npos;
    for (std::size_t q = s.find(closing, eol); q != std::string_view::npos; q = s.find(closing, q + n)) {
      if (line_start(s, q) == q) {
        close = q;
        break;
      }
    }
    if (info.empty() || info == "python" || info == "py" || info == "python3") return Fence{p, eol + 1, close};
    if (close == std::string_view::npos) return std::nullopt;
    p = close + n - 3;  // resume after this block
  }
  return std::nullopt;
}

std::string joined(const std::vector<AgentTool>& tools) {
  std::string s;
  for (const auto& t : tools) s += (s.empty() ? "" : ", ") + t.name;
  return s;
}

std::string kernel_block(std::string_view title, const std::string& code) {
  std::string s = "## " + std::string(title) + "\n\n```python\n" + code;
  if (!code.empty() && code.back() != '\n') s += "\n";
  return s + "```\n\n";
}

struct Generation {
  std::optional<std::string> text;
  std::string error;  // set when the call failed with a non-fatal LLM error
};

}  // namespace

std::string_view entry_kind_name(EntryKind k) {
  switch (k) {
    case EntryKind::thought: return "thought";
    case EntryKind::tool_name: return "tool_name";
    case EntryKind::tool_args: return "tool_args";
    case EntryKind::observation: return "observation";
  }
  return "?";
}

void Trajectory::record(int iteration, std::string thought, std::string tool, std::string args,
                        std::string observation) {
  entries_.push_back({EntryKind::thought, iteration, std::move(thought)});
  entries_.push_back({EntryKind::tool_name, iteration, std::move(tool)});
  entries_.push_back({EntryKind::tool_args, iteration, std::move(args)});
  entries_.push_back({EntryKind::observation, iteration, std::move(observation)});
}

std::size_t Trajectory::thought_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.kind == EntryKind::thought;
  return n;
}

std::string Trajectory::render() const {
  if (entries_.empty()) return "(empty)\n";
  std::ostringstream o;
  for (const auto& e : entries_) {
    o << "[[ " << entry_kind_name(e.kind) << "_" << e.iteration << " ]]\n";
    if (e.kind == EntryKind::tool_args) {
      o << "```python\n" << e.payload << (e.payload.empty() || e.payload.back() != '\n' ? "\n" : "") << "```\n";
    } else {
      o << e.payload << "\n";
    }
  }
  return o.str();
}

Trajectory truncate(const Trajectory& t) {
  if (t.groups() < 2)
    throw TruncationExhaustedError("context overflow with " + std::to_string(t.groups()) +
                                   " tool call(s) left in the trajectory; refusing to continue without feedback");
  Trajectory out;
  out.entries_.assign(t.entries_.begin() + 4, t.entries_.end());
  return out;
}

AgentTool verify_tool(VerifyTool& v) {
  return AgentTool{v.name(), [&v](const std::string& candidate) { return v(candidate); }};
}

AgentReply parse_agent_reply(std::string_view text) {
  AgentReply r;
  auto code_tag = text.find("CODE:");
  auto fence = find_code_fence(text, code_tag == std::string_view::npos ? 0 : code_tag);
  if (!fence && code_tag != std::string_view::npos) fence = find_code_fence(text, 0);

  auto th = text.find("THOUGHT:");
  std::size_t th_begin = th == std::string_view::npos ? 0 : th + 8;
  std::size_t th_end = text.size();
  if (code_tag != std::string_view::npos && code_tag >= th_begin) th_end = code_tag;
  if (fence && fence->open >= th_begin) th_end = std::min(th_end, fence->open);
  r.thought = trim(text.substr(th_begin, th_end - th_begin));

  if (fence && fence->close != std::string_view::npos) r.code = std::string(text.substr(fence->body, fence->close - fence->body));
  return r;
}

std::string cover_system_prompt(const CoverTask& task, const std::vector<AgentTool>& tools) {
  std::ostringstream o;
  o << "You optimize Triton kernels for Intel XPU GPUs. Current stage: " << stage_name(task.stage) << ".\n"
    << "Change only the @triton.jit kernels and their launch code. The Model class, imports, get_inputs and\n"
    << "get_init_inputs are the benchmark harness and must stay byte-identical.\n\n"
    << "Every reply has exactly this form:\n"
    << "THOUGHT: <your reasoning about the last observation and what you change>\n"
    << "CODE:\n```python\n<the complete kernel module>\n```\n\n"
    << "Your code is passed to: " << joined(tools) << ". A tool answers " << task.success_sentinel
    << " when the candidate parses, keeps the harness, matches the original outputs and runs faster.\n"
    << "Otherwise it answers with the first failed check.\n\n"
    << "## TARGET GPU\n\n" << profile_summary(task.gpu) << "\n\n"
    << "## KNOWLEDGE\n\n" << task.knowledge;
  return o.str();
}

std::string cover_user_prompt(const CoverTask& task, const Trajectory& traj, bool final_extraction) {
  std::ostringstream o;
  o << kernel_block("ORIGINAL CODE", task.original_code);
  o << kernel_block("CURRENT CODE", task.current_code);
  o << "## ISSUES FOR THIS STAGE\n\n" << format_issues(task.issues) << "\n";
  o << "## TRAJECTORY\n\n" << traj.render() << "\n";
  if (final_extraction) {
    o << "The iteration budget is spent. Using everything in the trajectory, emit your single best candidate.\n";
  } else {
    o << "Produce the next candidate.\n";
  }
  return o.str();
}

CoverOutcome run_cover(const CoverTask& task, ChatBackend& llm, const std::vector<AgentTool>& tools,
                       const CoverOptions& options) {
  if (task.max_iterations < 1) throw UsageError("max_iterations must be at least 1");
  if (tools.empty()) throw UsageError("CoVeR needs at least one tool");

  CoverOutcome out;
  out.code = task.current_code;
  Trajectory& traj = out.trajectory;
  const std::string system = cover_system_prompt(task, tools);
  const std::string tool_names = joined(tools);

  auto generate = [&](bool final_extraction) {
    for (;;) {
      ChatRequest req;
      req.system = system;
      req.messages.push_back({"user", cover_user_prompt(task, traj, final_extraction)});
      try {
        ChatResponse r = llm.complete(req);
        ++out.llm_calls;
        return Generation{std::move(r.text), {}};
      } catch (const ContextOverflowError&) {
        traj = truncate(traj);
        ++out.overflow_retries;
      } catch (const ScriptExhaustedError&) {
        throw;
      } catch (const LlmError& e) {
        return Generation{std::nullopt, std::string(e.class_name()) + ": " + e.what()};
      }
    }
  };

  // Runs every tool; true when one of them answers the sentinel.
  auto check = [&](const std::string& code, std::string& observation) {
    observation.clear();
    for (const auto& t : tools) {
      std::string obs = t.call(code);
      if (obs == task.success_sentinel) {
        observation = obs;
        return true;
      }
      if (!observation.empty()) observation += "\n\n";
      observation += tools.size() > 1 ? "[" + t.name + "] " + obs : obs;
    }
    return false;
  };

  std::optional<std::string> last_candidate;
  for (int i = 0; i < task.max_iterations; ++i) {
    out.iterations_used = i + 1;
    Generation g = generate(false);
    if (!g.text) {
      out.last_observation = "LLM ERROR: " + g.error;
      traj.record(i, "(no reply)", tool_names, "", out.last_observation);
      continue;
    }
    AgentReply reply = parse_agent_reply(*g.text);
    if (!reply.code) {
      out.last_observation =
          "FORMAT ERROR: no code block found. Reply with THOUGHT: then CODE: followed by one ```python block "
          "holding the complete module.";
      traj.record(i, reply.thought, tool_names, "", out.last_observation);
      continue;
    }
    last_candidate = reply.code;
    std::string obs;
    const bool ok = check(*reply.code, obs);
    out.last_observation = obs;
    traj.record(i, reply.thought, tool_names, *reply.code, obs);
    if (ok) {
      out.code = *reply.code;
      out.succeeded = true;
      return out;
    }
  }

  std::optional<std::string> candidate;
  Generation g = generate(true);
  if (g.text) candidate = parse_agent_reply(*g.text).code;
  if (candidate) {
    std::string obs;
    if (check(*candidate, obs)) {
      out.code = *candidate;
      out.succeeded = true;
      out.via_fallback = true;
      out.last_observation = obs;
      return out;
    }
    out.last_observation = obs;
  } else {
    out.last_observation = g.text ? "FORMAT ERROR: fallback extraction produced no code block" : "LLM ERROR: " + g.error;
  }

  const std::optional<std::string> failed = candidate ? candidate : last_candidate;
  if (!options.dump_dir.empty() && failed) {
    const std::int64_t ts = options.clock ? options.clock()
                                          : std::chrono::duration_cast<std::chrono::seconds>(
                                                std::chrono::system_clock::now().time_since_epoch())
                                                .count();
    const fs::path dir = fs::path(options.dump_dir) / "failed";
    fs::create_directories(dir);
    std::string stem = std::string(stage_name(task.stage)) + "_" + std::to_string(ts);
    for (int n = 1; fs::exists(dir / (stem + ".kernel")); ++n)
      stem = std::string(stage_name(task.stage)) + "_" + std::to_string(ts) + "_" + std::to_string(n);
    std::ofstream(dir / (stem + ".kernel"), std::ios::binary) << *failed;
    json meta = {{"stage", stage_name(task.stage)},
                 {"timestamp", ts},
                 {"iterations_used", out.iterations_used},
                 {"from_fallback_extractor", candidate.has_value()},
                 {"last_observation", out.last_observation},
                 {"fingerprint", fingerprint(*failed)}};
    json issues = json::array();
    for (const auto& is : task.issues) issues.push_back(is.type);
    meta["issues"] = issues;
    std::ofstream(dir / (stem + ".json"), std::ios::binary) << meta.dump(2) << "\n";
    out.dump_path = (dir / (stem + ".kernel")).string();
  }
  out.code = task.current_code;
  return out;
}

}  // namespace kopt
