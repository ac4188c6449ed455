// SPDX-License-Identifier: Apache-2.0
#include "kopt/knowledge.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/pysyntax.hpp"

namespace kopt {

namespace fs = std::filesystem;

namespace {

using AliasMap = std::map<std::string, Stage, std::less<>>;

struct EntryError {
  std::string message;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw EntryError{"cannot read '" + p.string() + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string req_str(const YAML::Node& n, const char* key) {
  const YAML::Node v = n[key];
  if (!v || !v.IsScalar()) throw EntryError{std::string("missing or non-text field '") + key + "'"};
  std::string s = v.as<std::string>();
  if (s.find_first_not_of(" \t\r\n") == std::string::npos) throw EntryError{std::string("field '") + key + "' is empty"};
  return s;
}

std::vector<std::string> str_list(const YAML::Node& n, const char* key) {
  const YAML::Node v = n[key];
  std::vector<std::string> out;
  if (!v || v.IsNull()) return out;
  if (v.IsScalar()) return {v.as<std::string>()};
  if (!v.IsSequence()) throw EntryError{std::string("field '") + key + "' must be a list"};
  for (const auto& x : v) {
    if (!x.IsScalar()) throw EntryError{std::string("field '") + key + "' must hold plain strings"};
    out.push_back(x.as<std::string>());
  }
  return out;
}

Stage stage_of(const std::string& name, const AliasMap& aliases) {
  if (auto s = normalize_stage(name, aliases)) return *s;
  throw EntryError{"unknown stage '" + name + "' (valid: " + valid_stage_list() + ")"};
}

std::vector<Stage> stage_list(const YAML::Node& n, const char* key, const AliasMap& aliases) {
  std::vector<Stage> out;
  for (const auto& s : str_list(n, key)) {
    Stage st = stage_of(s, aliases);
    if (std::find(out.begin(), out.end(), st) == out.end()) out.push_back(st);
  }
  return out;
}

SpeedupRange speedup(const YAML::Node& n) {
  const YAML::Node v = n["expected_speedup"];
  if (!v) throw EntryError{"missing field 'expected_speedup'"};
  SpeedupRange r;
  try {
    if (v.IsSequence() && v.size() == 2) {
      r = {v[0].as<double>(), v[1].as<double>()};
    } else if (v.IsMap() && v["low"] && v["high"]) {
      r = {v["low"].as<double>(), v["high"].as<double>()};
    } else if (v.IsScalar()) {
      r.low = r.high = v.as<double>();
    } else {
      throw EntryError{"expected_speedup must be [low, high]"};
    }
  } catch (const YAML::Exception&) {
    throw EntryError{"expected_speedup must be numeric"};
  }
  if (!(r.low > 0) || !(r.high > 0)) throw EntryError{"expected_speedup bounds must be positive"};
  if (r.low > r.high) throw EntryError{"expected_speedup low exceeds high"};
  return r;
}

Constraint parse_constraint(const YAML::Node& n, const AliasMap& aliases) {
  Constraint c;
  c.id = req_str(n, "id");
  const std::string sev = req_str(n, "severity");
  if (sev == "critical") c.severity = Severity::critical;
  else if (sev == "info") c.severity = Severity::info;
  else throw EntryError{"severity must be critical or info, got '" + sev + "'"};
  c.description = req_str(n, "description");
  c.wrong_example = req_str(n, "wrong_example");
  c.correct_example = req_str(n, "correct_example");
  c.stages = stage_list(n, "stages", aliases);
  return c;
}

Pattern parse_pattern(const YAML::Node& n, const AliasMap& aliases) {
  Pattern p;
  p.id = req_str(n, "id");
  p.stage = stage_of(req_str(n, "stage"), aliases);
  p.rationale = req_str(n, "rationale");
  p.before = req_str(n, "before");
  p.after = req_str(n, "after");
  p.expected_speedup = speedup(n);
  p.applicability = str_list(n, "applicability");
  return p;
}

CodeExample parse_example(const YAML::Node& n, const fs::path& dir, const AliasMap& aliases) {
  CodeExample e;
  e.id = req_str(n, "id");
  e.optimizations_applied = str_list(n, "optimizations_applied");
  e.expected_speedup = speedup(n);
  e.stages = stage_list(n, "stages", aliases);
  if (e.stages.empty()) throw EntryError{"example lists no stages"};
  for (auto [field, dst] : {std::pair{"unoptimized", &e.unoptimized}, std::pair{"optimized", &e.optimized}}) {
    const fs::path p = dir / req_str(n, field);
    *dst = read_text(p);
    auto parsed = py::parse(*dst);
    if (!parsed.ok()) throw EntryError{std::string(field) + " source does not parse: " + parsed.error->format()};
  }
  return e;
}

template <typename T>
bool sort_by_id(const T& a, const T& b) {
  return a.id < b.id;
}

std::string fence_for(std::string_view code) {
  std::string f = "```";
  while (code.find(f) != std::string_view::npos) f += '`';
  return f;
}

void code_block(std::ostringstream& o, std::string_view label, std::string_view code) {
  const std::string f = fence_for(code);
  o << label << ":\n" << f << "python\n" << code;
  if (!code.empty() && code.back() != '\n') o << '\n';
  o << f << "\n";
}

std::string num(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ", ") + x;
  return out;
}

std::string stage_names(const std::vector<Stage>& s) {
  std::vector<std::string> names;
  for (Stage x : s) names.emplace_back(stage_name(x));
  return join(names);
}

}  // namespace

const AliasMap& builtin_stage_aliases() {
  static const AliasMap m = {
      {"memory_patterns", Stage::memory_access},   {"memory", Stage::memory_access},
      {"gpu_optimizations", Stage::gpu_specific},  {"gpu", Stage::gpu_specific},
      {"dtype_optimizations", Stage::dtype_fix},   {"dtype", Stage::dtype_fix},
      {"fusion_patterns", Stage::fusion},          {"block_pointer", Stage::block_pointers},
      {"block_ptr", Stage::block_pointers},        {"persistent", Stage::persistent_kernel},
      {"autotuning", Stage::autotune},             {"algorithmic_restructuring", Stage::algorithmic},
  };
  return m;
}

std::optional<Stage> normalize_stage(std::string_view name, const AliasMap& aliases) {
  if (auto s = stage_from_name(name)) return s;
  auto it = aliases.find(name);
  if (it != aliases.end()) return it->second;
  return std::nullopt;
}

KnowledgeBase load_knowledge(const std::string& dir_str) {
  const fs::path dir(dir_str);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw LoadError("knowledge directory '" + dir_str + "' does not exist or is not a directory");

  std::vector<fs::path> files;
  fs::directory_iterator it(dir, ec);
  if (ec) throw LoadError("cannot read knowledge directory '" + dir_str + "': " + ec.message());
  for (const auto& entry : it) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".yaml" || ext == ".yml")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  KnowledgeBase kb;
  kb.aliases = builtin_stage_aliases();
  auto diag = [&](const fs::path& f, std::string msg) {
    kb.diagnostics.push_back({f.lexically_relative(dir).generic_string(), std::move(msg)});
  };

  std::vector<std::pair<fs::path, YAML::Node>> docs;
  for (const auto& f : files) {
    try {
      YAML::Node root = YAML::LoadFile(f.string());
      if (root.IsNull()) {
        kb.source_files.push_back(f.filename().string());
        continue;
      }
      if (!root.IsMap()) {
        diag(f, "top level must be a map; file skipped");
        continue;
      }
      docs.emplace_back(f, root);
      kb.source_files.push_back(f.filename().string());
    } catch (const YAML::Exception& e) {
      diag(f, std::string("malformed YAML, file skipped: ") + e.what());
    }
  }

  // Aliases from every file apply to entries in every file.
  std::map<std::string, std::string> alias_origin;
  for (const auto& [f, root] : docs) {
    const YAML::Node a = root["stage_aliases"];
    if (!a) continue;
    if (!a.IsMap()) {
      diag(f, "stage_aliases must be a map; ignored");
      continue;
    }
    for (const auto& kv : a) {
      const std::string from = kv.first.as<std::string>();
      const std::string to = kv.second.IsScalar() ? kv.second.as<std::string>() : "";
      auto target = stage_from_name(to);
      if (!target) {
        diag(f, "alias '" + from + "' targets unknown stage '" + to + "'; ignored");
      } else if (stage_from_name(from)) {
        if (*target != *stage_from_name(from)) diag(f, "alias '" + from + "' shadows a stage name; ignored");
      } else if (auto prev = kb.aliases.find(from); prev != kb.aliases.end() && prev->second != *target) {
        diag(f, "alias '" + from + "' already maps to " + std::string(stage_name(prev->second)) + "; keeping that");
      } else {
        kb.aliases[from] = *target;
      }
    }
  }

  std::set<std::string> c_ids, p_ids, e_ids;
  auto each = [&](const fs::path& f, const YAML::Node& root, const char* key, auto&& parse, auto& out, auto& ids) {
    const YAML::Node list = root[key];
    if (!list) return;
    if (!list.IsSequence()) {
      diag(f, std::string(key) + " must be a list; ignored");
      return;
    }
    std::size_t idx = 0;
    for (const auto& n : list) {
      ++idx;
      const std::string label = std::string(key) + "[" + std::to_string(idx) + "]";
      if (!n.IsMap()) {
        diag(f, label + ": entry must be a map; skipped");
        continue;
      }
      try {
        auto entry = parse(n);
        if (!ids.insert(entry.id).second) {
          diag(f, label + " '" + entry.id + "': duplicate id, keeping the first definition");
          continue;
        }
        entry.source_file = f.filename().string();
        out.push_back(std::move(entry));
      } catch (const EntryError& e) {
        diag(f, label + ": " + e.message + "; skipped");
      } catch (const YAML::Exception& e) {
        diag(f, label + ": " + e.what() + "; skipped");
      }
    }
  };

  for (const auto& [f, root] : docs) {
    each(f, root, "constraints", [&](const YAML::Node& n) { return parse_constraint(n, kb.aliases); }, kb.constraints, c_ids);
    each(f, root, "patterns", [&](const YAML::Node& n) { return parse_pattern(n, kb.aliases); }, kb.patterns, p_ids);
    if (root["examples"]) diag(f, "examples belong in examples/index.yaml; ignored here");
  }

  const fs::path index = dir / "examples" / "index.yaml";
  if (fs::exists(index, ec)) {
    try {
      YAML::Node root = YAML::LoadFile(index.string());
      kb.source_files.push_back("examples/index.yaml");
      if (root.IsMap()) {
        each(index, root, "examples", [&](const YAML::Node& n) { return parse_example(n, index.parent_path(), kb.aliases); },
             kb.examples, e_ids);
      } else if (!root.IsNull()) {
        diag(index, "top level must be a map with an 'examples' list");
      }
    } catch (const YAML::Exception& e) {
      diag(index, std::string("malformed YAML, file skipped: ") + e.what());
    }
  }

  std::sort(kb.constraints.begin(), kb.constraints.end(), sort_by_id<Constraint>);
  std::sort(kb.patterns.begin(), kb.patterns.end(), sort_by_id<Pattern>);
  std::sort(kb.examples.begin(), kb.examples.end(), sort_by_id<CodeExample>);
  return kb;
}

std::string format_for_llm(const KnowledgeBase& kb, std::string_view stage) {
  auto s = stage_from_name(stage);
  if (!s) throw UsageError("unknown stage '" + std::string(stage) + "'; valid stages: " + valid_stage_list());
  return format_for_llm(kb, *s);
}

std::string format_for_llm(const KnowledgeBase& kb, Stage stage) {
  auto tagged = [&](const std::vector<Stage>& v) { return std::find(v.begin(), v.end(), stage) != v.end(); };
  std::ostringstream o;

  o << "## HARD CONSTRAINTS\n";
  bool any = false;
  for (const auto& c : kb.constraints) {
    if (c.severity != Severity::critical && !c.stages.empty() && !tagged(c.stages)) continue;
    any = true;
    o << "\n### " << c.id << " [" << (c.severity == Severity::critical ? "critical" : "info") << "]\n";
    o << c.description;
    if (c.description.back() != '\n') o << '\n';
    code_block(o, "Wrong", c.wrong_example);
    code_block(o, "Correct", c.correct_example);
  }
  if (!any) o << "\n(none)\n";

  o << "\n## PATTERNS\n";
  any = false;
  for (const auto& p : kb.patterns) {
    if (p.stage != stage) continue;
    any = true;
    o << "\n### " << p.id << " (expected speedup " << num(p.expected_speedup.low) << "x-" << num(p.expected_speedup.high)
      << "x";
    if (!p.applicability.empty()) o << "; applies to: " << join(p.applicability);
    o << ")\n" << p.rationale;
    if (p.rationale.back() != '\n') o << '\n';
    code_block(o, "Before", p.before);
    code_block(o, "After", p.after);
  }
  if (!any) o << "\n(none)\n";

  o << "\n## EXAMPLES\n";
  any = false;
  for (const auto& e : kb.examples) {
    if (!tagged(e.stages)) continue;
    any = true;
    o << "\n### " << e.id << " (expected speedup " << num(e.expected_speedup.low) << "x-" << num(e.expected_speedup.high)
      << "x; stages: " << stage_names(e.stages) << ")\n";
    if (!e.optimizations_applied.empty()) o << "Optimizations applied: " << join(e.optimizations_applied) << "\n";
    code_block(o, "Unoptimized", e.unoptimized);
    code_block(o, "Optimized", e.optimized);
  }
  if (!any) o << "\n(none)\n";
  return o.str();
}

std::string kb_counts(const KnowledgeBase& kb) {
  return std::to_string(kb.constraints.size()) + " constraints, " + std::to_string(kb.patterns.size()) + " patterns, " +
         std::to_string(kb.examples.size()) + " examples";
}

}  // namespace kopt
