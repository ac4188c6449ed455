// SPDX-License-Identifier: Apache-2.0
#include "kopt/spec.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "kopt/error.hpp"

namespace kopt {

namespace {

const std::vector<std::string> kTransforms = {"scale",     "softmax", "abs",  "normalize", "symmetric",
                                              "triu",      "tril",    "transpose", "uniform", "rademacher"};

struct DtypeInfo {
  const char* name;
  int size;
};
constexpr DtypeInfo kDtypes[] = {{"float16", 2}, {"bfloat16", 2}, {"float32", 4}, {"float64", 8},
                                 {"int8", 1},    {"uint8", 1},    {"int16", 2},   {"int32", 4},
                                 {"int64", 8},   {"bool", 1}};

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw SpecError("spec field '" + field + "': " + msg);
}

std::string scalar(const YAML::Node& n, const std::string& field) {
  if (!n || !n.IsScalar()) fail(field, "expected a scalar");
  return n.Scalar();
}

std::int64_t integer(const YAML::Node& n, const std::string& field) {
  std::string s = scalar(n, field);
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(field, "expected an integer, got '" + s + "'");
}

Formula formula(const YAML::Node& n, const std::string& field) {
  std::string s = scalar(n, field);
  try {
    return Formula::parse(s);
  } catch (const FormulaError& e) {
    throw FormulaError("spec field '" + field + "': " + e.what());
  }
}

VariantGroup parse_group(const std::string& s, const std::string& field) {
  if (s == "ci") return VariantGroup::ci;
  if (s == "bench_cpu" || s == "bench-cpu") return VariantGroup::bench_cpu;
  if (s == "bench_gpu" || s == "bench-gpu") return VariantGroup::bench_gpu;
  fail(field, "unknown variant group '" + s + "' (expected ci, bench_cpu or bench_gpu)");
}

Transform parse_transform(const YAML::Node& n, const std::string& field) {
  Transform t;
  if (n.IsScalar()) {
    t.name = n.Scalar();
  } else if (n.IsMap() && n.size() == 1) {
    auto it = n.begin();
    t.name = it->first.as<std::string>();
    std::string arg = scalar(it->second, field + "." + t.name);
    try {
      t.arg = std::stod(arg);
    } catch (const std::exception&) {
      fail(field, "transform argument '" + arg + "' is not a number");
    }
  } else {
    fail(field, "expected a transform name or a one-entry map");
  }
  if (!is_known_transform(t.name)) {
    std::string valid;
    for (const auto& k : kTransforms) valid += (valid.empty() ? "" : ", ") + k;
    fail(field, "unknown transform '" + t.name + "' (valid: " + valid + ")");
  }
  return t;
}

void require_bound(const std::set<std::string>& symbols, const VariantSpec& v, const std::string& field) {
  for (const auto& s : symbols)
    if (!v.dims.count(s)) fail(field, "symbol '" + s + "' is not bound by variant '" + v.name + "'");
}

}  // namespace

std::string_view group_name(VariantGroup g) {
  switch (g) {
    case VariantGroup::ci: return "ci";
    case VariantGroup::bench_cpu: return "bench_cpu";
    case VariantGroup::bench_gpu: return "bench_gpu";
  }
  return "ci";
}

bool is_known_transform(std::string_view name) {
  return std::find(kTransforms.begin(), kTransforms.end(), name) != kTransforms.end();
}

const std::vector<std::string>& known_transforms() { return kTransforms; }

bool is_known_dtype(std::string_view name) { return dtype_size(name) > 0; }

int dtype_size(std::string_view name) {
  for (const auto& d : kDtypes)
    if (name == d.name) return d.size;
  return 0;
}

const VariantSpec& ProblemSpec::variant(std::string_view name) const {
  auto it = variants.find(std::string(name));
  if (it == variants.end()) {
    std::string known;
    for (const auto& [k, _] : variants) known += (known.empty() ? "" : ", ") + k;
    throw SpecError("spec '" + this->name + "' has no variant '" + std::string(name) + "' (variants: " + known + ")");
  }
  return it->second;
}

ResolvedVariant ProblemSpec::resolve(std::string_view variant_name) const {
  const VariantSpec& v = variant(variant_name);
  ResolvedVariant r;
  r.name = v.name;
  r.group = v.group;
  r.dims = v.dims;
  r.dtype = v.dtype;
  for (const auto& in : inputs) {
    ResolvedInput ri;
    ri.name = in.name;
    ri.dtype = in.dtype == "inherit" ? v.dtype : in.dtype;
    for (const auto& f : in.shape) {
      FormulaValue fv = f.evaluate(v.dims);
      if (!fv.integral || fv.i < 0)
        throw SpecError("input '" + in.name + "': dimension '" + f.text() + "' is not a non-negative integer");
      ri.shape.push_back(fv.i);
    }
    r.inputs.push_back(std::move(ri));
  }
  for (const auto& [k, f] : inits) r.inits.emplace(k, f.evaluate(v.dims));
  if (v.flops) r.flop = v.flops->evaluate(v.dims).as_double();
  if (v.bytes) r.bytes = v.bytes->evaluate(v.dims).as_double();
  return r;
}

ProblemSpec parse_spec(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw SpecError(std::string("malformed spec YAML: ") + e.what());
  }
  if (!root.IsMap()) throw SpecError("spec must be a YAML mapping");

  ProblemSpec spec;
  spec.source_yaml = std::string(text);
  spec.name = scalar(root["name"], "name");
  if (root["level"]) spec.level = static_cast<int>(integer(root["level"], "level"));

  const YAML::Node inputs = root["inputs"];
  if (!inputs || !inputs.IsSequence()) fail("inputs", "expected a list of input descriptors");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const YAML::Node n = inputs[i];
    std::string base = "inputs[" + std::to_string(i) + "]";
    InputDescriptor d;
    d.name = scalar(n["name"], base + ".name");
    base = "inputs." + d.name;
    const YAML::Node shape = n["shape"];
    if (!shape || !shape.IsSequence()) fail(base + ".shape", "expected a list of dimensions");
    for (std::size_t j = 0; j < shape.size(); ++j)
      d.shape.push_back(formula(shape[j], base + ".shape[" + std::to_string(j) + "]"));
    d.dtype = n["dtype"] ? scalar(n["dtype"], base + ".dtype") : "inherit";
    if (d.dtype != "inherit" && !is_known_dtype(d.dtype)) fail(base + ".dtype", "unknown dtype '" + d.dtype + "'");
    if (const YAML::Node range = n["range"]) {
      if (!range.IsSequence() || range.size() != 2) fail(base + ".range", "expected [low, high]");
      auto lo = integer(range[0], base + ".range");
      auto hi = integer(range[1], base + ".range");
      if (lo > hi) fail(base + ".range", "low exceeds high");
      d.range = {lo, hi};
    }
    if (const YAML::Node tr = n["transforms"]) {
      if (!tr.IsSequence()) fail(base + ".transforms", "expected a list");
      for (std::size_t j = 0; j < tr.size(); ++j) d.transforms.push_back(parse_transform(tr[j], base + ".transforms"));
    }
    for (const auto& other : spec.inputs)
      if (other.name == d.name) fail(base, "duplicate input name");
    spec.inputs.push_back(std::move(d));
  }

  if (const YAML::Node inits = root["inits"]) {
    if (!inits.IsMap()) fail("inits", "expected a mapping of constructor arguments");
    for (const auto& kv : inits) {
      std::string key = kv.first.as<std::string>();
      spec.inits.emplace_back(key, formula(kv.second, "inits." + key));
    }
  }

  const YAML::Node variants = root["variants"];
  if (!variants || !variants.IsMap() || variants.size() == 0) fail("variants", "expected a non-empty mapping");
  for (const auto& kv : variants) {
    VariantSpec v;
    v.name = kv.first.as<std::string>();
    const std::string base = "variants." + v.name;
    const YAML::Node n = kv.second;
    if (!n.IsMap()) fail(base, "expected a mapping");
    v.group = parse_group(n["group"] ? scalar(n["group"], base + ".group") : "ci", base + ".group");
    const YAML::Node dims = n["dims"];
    if (dims) {
      if (!dims.IsMap()) fail(base + ".dims", "expected a mapping of symbol to integer");
      for (const auto& d : dims) {
        std::string sym = d.first.as<std::string>();
        v.dims[sym] = integer(d.second, base + ".dims." + sym);
      }
    }
    v.dtype = scalar(n["dtype"], base + ".dtype");
    if (!is_known_dtype(v.dtype)) fail(base + ".dtype", "unknown dtype '" + v.dtype + "'");
    if (n["flops"]) v.flops = formula(n["flops"], base + ".flops");
    if (n["bytes"]) v.bytes = formula(n["bytes"], base + ".bytes");

    for (const auto& in : spec.inputs)
      for (std::size_t j = 0; j < in.shape.size(); ++j)
        require_bound(in.shape[j].symbols(), v, "inputs." + in.name + ".shape[" + std::to_string(j) + "]");
    for (const auto& [k, f] : spec.inits) require_bound(f.symbols(), v, "inits." + k);
    if (v.flops) require_bound(v.flops->symbols(), v, base + ".flops");
    if (v.bytes) require_bound(v.bytes->symbols(), v, base + ".bytes");
    spec.variants.emplace(v.name, std::move(v));
  }
  return spec;
}

ProblemSpec load_spec_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot read spec file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str());
}

}  // namespace kopt
