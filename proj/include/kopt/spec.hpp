// SPDX-License-Identifier: Apache-2.0
//
// YAML problem specifications: named inputs with symbolic shapes, optional
// constructor arguments, and variants that bind the symbols.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kopt/formula.hpp"

namespace kopt {

enum class VariantGroup { ci, bench_cpu, bench_gpu };
std::string_view group_name(VariantGroup g);

// The ten initialization transforms a harness knows how to apply.
bool is_known_transform(std::string_view name);
const std::vector<std::string>& known_transforms();

bool is_known_dtype(std::string_view name);
// Storage size of a dtype in bytes, e.g. 2 for float16.
int dtype_size(std::string_view name);

struct Transform {
  std::string name;
  std::optional<double> arg;  // `- scale: 0.5`
};

struct InputDescriptor {
  std::string name;
  std::vector<Formula> shape;
  std::string dtype;  // a concrete dtype name or "inherit"
  std::optional<std::pair<std::int64_t, std::int64_t>> range;
  std::vector<Transform> transforms;
};

struct VariantSpec {
  std::string name;
  VariantGroup group = VariantGroup::ci;
  Bindings dims;
  std::string dtype;
  std::optional<Formula> flops;
  std::optional<Formula> bytes;
};

struct ResolvedInput {
  std::string name;
  std::vector<std::int64_t> shape;
  std::string dtype;
};

// A variant with every symbol substituted. flop/bytes are absent when the
// spec declares no formula; the runner then estimates them.
struct ResolvedVariant {
  std::string name;
  VariantGroup group;
  Bindings dims;
  std::string dtype;
  std::vector<ResolvedInput> inputs;
  std::map<std::string, FormulaValue> inits;
  std::optional<double> flop;
  std::optional<double> bytes;
};

struct ProblemSpec {
  std::string name;
  int level = 1;
  std::vector<InputDescriptor> inputs;
  std::vector<std::pair<std::string, Formula>> inits;
  std::map<std::string, VariantSpec> variants;
  std::string source_yaml;

  const VariantSpec& variant(std::string_view name) const;
  ResolvedVariant resolve(std::string_view variant_name) const;
};

// Throws SpecError (or FormulaError) naming the offending field.
ProblemSpec parse_spec(std::string_view yaml);
ProblemSpec load_spec_file(const std::string& path);

}  // namespace kopt
