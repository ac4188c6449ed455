// SPDX-License-Identifier: Apache-2.0
//
// YAML knowledge base: constraints, before/after patterns and full kernel
// examples, filtered per stage for prompt injection.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kopt/stage.hpp"

namespace kopt {

enum class Severity { critical, info };

struct SpeedupRange {
  double low = 1.0;
  double high = 1.0;
  friend bool operator==(const SpeedupRange&, const SpeedupRange&) = default;
};

struct Constraint {
  std::string id;
  Severity severity = Severity::info;
  std::string description;
  std::string wrong_example;
  std::string correct_example;
  std::vector<Stage> stages;  // empty: applies to every stage
  std::string source_file;
};

struct Pattern {
  std::string id;
  Stage stage = Stage::analysis;
  std::string rationale;
  std::string before;
  std::string after;
  SpeedupRange expected_speedup;
  std::vector<std::string> applicability;
  std::string source_file;
};

struct CodeExample {
  std::string id;
  std::vector<std::string> optimizations_applied;
  SpeedupRange expected_speedup;
  std::string unoptimized;
  std::string optimized;
  std::vector<Stage> stages;
  std::string source_file;
};

struct KbDiagnostic {
  std::string file;
  std::string message;
};

struct KnowledgeBase {
  std::vector<Constraint> constraints;
  std::vector<Pattern> patterns;
  std::vector<CodeExample> examples;
  std::vector<std::string> source_files;
  std::map<std::string, Stage, std::less<>> aliases;
  std::vector<KbDiagnostic> diagnostics;
};

// Aliases every KB starts with.
const std::map<std::string, Stage, std::less<>>& builtin_stage_aliases();

// Canonical name, alias or nothing. Canonical names map to themselves, so
// normalizing twice is the same as once.
std::optional<Stage> normalize_stage(std::string_view name,
                                     const std::map<std::string, Stage, std::less<>>& aliases = builtin_stage_aliases());

// Throws LoadError if `dir` is missing or unreadable. Bad files and entries
// are skipped with a diagnostic.
KnowledgeBase load_knowledge(const std::string& dir);

// Throws UsageError naming the valid stages when `stage` is unknown.
std::string format_for_llm(const KnowledgeBase& kb, std::string_view stage);
std::string format_for_llm(const KnowledgeBase& kb, Stage stage);

// "N constraints, M patterns, K examples"
std::string kb_counts(const KnowledgeBase& kb);

}  // namespace kopt
