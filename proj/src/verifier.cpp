// SPDX-License-Identifier: Apache-2.0
#include "kopt/verifier.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <set>
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/metrics.hpp"

namespace kopt {

namespace {

using py::Node;
using py::NodeKind;

constexpr std::string_view kValidWarps = "1, 2, 4, 8, 16, 32";

std::optional<std::int64_t> literal_int(const Node& n) {
  if (n.kind == NodeKind::Constant && n.const_kind == py::ConstKind::Int && n.int_value) return n.int_value;
  if (n.kind == NodeKind::UnaryOp && (n.value == "-" || n.value == "+") && n.children.size() == 1) {
    auto inner = literal_int(*n.children[0]);
    if (inner) return n.value == "-" ? -*inner : *inner;
  }
  return std::nullopt;
}

bool is_str_literal(const Node& n) { return n.kind == NodeKind::Constant && n.const_kind == py::ConstKind::Str; }

bool is_pow2(std::int64_t v) { return v > 0 && std::has_single_bit(static_cast<std::uint64_t>(v)); }

bool is_block_name(std::string_view s) { return s == "BLOCK" || s.rfind("BLOCK_", 0) == 0; }

// Every literal assigned to `want(name)` through a keyword argument, a string
// dict key, a plain name assignment or a parameter default, in tree order.
template <typename Pred>
std::vector<std::pair<std::string, const Node*>> literal_bindings(const Node& root, Pred want) {
  std::vector<std::pair<std::string, const Node*>> out;
  py::walk(root, [&](const Node& n) {
    switch (n.kind) {
      case NodeKind::Keyword:
        if (want(n.value) && !n.children.empty()) out.emplace_back(n.value, n.children[0].get());
        break;
      case NodeKind::Dict:
        for (std::size_t i = 0; i < n.children.size();) {
          const Node& k = *n.children[i];
          if (k.kind == NodeKind::DictUnpack) {  // one slot, no value
            ++i;
            continue;
          }
          if (i + 1 < n.children.size() && is_str_literal(k) && want(k.str_value))
            out.emplace_back(k.str_value, n.children[i + 1].get());
          i += 2;
        }
        break;
      case NodeKind::Assign:
        for (std::size_t i = 0; i + 1 < n.children.size(); ++i) {
          const Node& t = *n.children[i];
          if (t.kind == NodeKind::Name && want(t.value)) out.emplace_back(t.value, n.children.back().get());
        }
        break;
      case NodeKind::AnnAssign:
        if (n.children.size() >= 3 && n.children[0]->kind == NodeKind::Name && want(n.children[0]->value))
          out.emplace_back(n.children[0]->value, n.children.back().get());
        break;
      case NodeKind::Arg:
        if (want(n.value) && !n.extra.empty()) out.emplace_back(n.value, n.extra[0].get());
        break;
      default:
        break;
    }
  });
  return out;
}

std::string at_line(const Node& n) { return " (line " + std::to_string(n.span.first_line) + ")"; }

std::string root_name(const Node& n) {
  const Node* cur = &n;
  while (cur->kind == NodeKind::Attribute || cur->kind == NodeKind::Subscript || cur->kind == NodeKind::Call) {
    if (cur->children.empty()) return {};
    cur = cur->children[0].get();
  }
  return cur->kind == NodeKind::Name ? cur->value : std::string();
}

// Names a module's harness binds at top level: imported names, class names,
// input helper names.
std::set<std::string> harness_bound_names(const KernelModule& m) {
  std::set<std::string> names;
  for (const Region* r : m.harness_regions()) {
    if (r->key.rfind("assign ", 0) != 0) continue;
    std::string list = r->key.substr(7, r->key.find('#') - 7);
    for (std::size_t b = 0, e; b <= list.size(); b = e + 1) {
      e = std::min(list.find(',', b), list.size());
      names.insert(list.substr(b, e - b));
    }
  }
  for (const auto& stmt : m.tree()->children) {
    if (stmt->kind == NodeKind::Import || stmt->kind == NodeKind::ImportFrom) {
      for (const auto& a : stmt->children) {
        if (!a->as_name.empty()) names.insert(a->as_name);
        else if (stmt->kind == NodeKind::Import) names.insert(a->value.substr(0, a->value.find('.')));
        else names.insert(a->value);
      }
    } else if (stmt->kind == NodeKind::ClassDef) {
      names.insert(stmt->value);
    } else if (stmt->kind == NodeKind::FunctionDef && is_input_helper_name(stmt->value)) {
      names.insert(stmt->value);
    }
  }
  return names;
}

std::vector<std::string_view> import_texts(const KernelModule& m) {
  std::vector<std::string_view> out;
  for (const auto& r : m.regions())
    if (r.key.rfind("import#", 0) == 0) out.push_back(m.text(r));
  return out;
}

const std::set<std::string> kForbiddenCalls = {"__import__", "eval", "exec", "compile", "globals",
                                               "locals",     "vars", "breakpoint", "import_module"};
const std::set<std::string> kReflectiveAttrCalls = {"getattr", "setattr", "hasattr", "delattr"};
const std::set<std::string> kForbiddenAttrs = {"__dict__",         "__builtins__",   "__globals__", "__getattribute__",
                                               "__subclasses__",   "__import__",     "__code__",    "__loader__",
                                               "__spec__"};

std::string fmt_us(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

}  // namespace

std::string_view level_name(VerifyLevel l) {
  switch (l) {
    case VerifyLevel::syntax: return "syntax";
    case VerifyLevel::structure: return "structure";
    case VerifyLevel::correctness: return "correctness";
    case VerifyLevel::performance: return "performance";
    case VerifyLevel::success: return "success";
  }
  return "syntax";
}

LevelResult verify_syntax(std::string_view candidate) {
  auto parsed = py::parse(candidate);
  if (parsed.ok()) return LevelResult::pass();
  return LevelResult::fail("SYNTAX ERROR: " + parsed.error->format());
}

LevelResult check_imports(const KernelModule& m) {
  bool triton = false;
  bool language = false;
  py::walk(*m.tree(), [&](const Node& n) {
    if (n.kind == NodeKind::Import) {
      for (const auto& a : n.children) {
        if (a->value == "triton" || a->value.rfind("triton.", 0) == 0) triton = true;
        if (a->value == "triton.language" || a->value.rfind("triton.language.", 0) == 0) language = true;
      }
    } else if (n.kind == NodeKind::ImportFrom) {
      if (n.value == "triton" || n.value.rfind("triton.", 0) == 0) triton = true;
      if (n.value == "triton.language" || n.value.rfind("triton.language.", 0) == 0) language = true;
      if (n.value == "triton")
        for (const auto& a : n.children)
          if (a->value == "language") language = true;
    }
  });
  if (!triton)
    return LevelResult::fail(
        "MISSING IMPORT: the module does not import triton. Add `import triton` and "
        "`import triton.language as tl` at the top of the module.");
  if (!language)
    return LevelResult::fail(
        "MISSING IMPORT: the module does not import triton.language. Add `import triton.language as tl`.");
  return LevelResult::pass();
}

LevelResult check_jit_kernel(const KernelModule& m) {
  if (!m.kernel_regions().empty()) return LevelResult::pass();
  return LevelResult::fail(
      "MISSING KERNEL: no @triton.jit-decorated function at module level. The optimized computation must live in "
      "a @triton.jit kernel.");
}

LevelResult check_model_class(const KernelModule& m) {
  for (const auto& stmt : m.tree()->children)
    if (stmt->kind == NodeKind::ClassDef && stmt->value == "Model") return LevelResult::pass();
  return LevelResult::fail(
      "MISSING MODEL CLASS: no `class Model` at module level. Keep the original Model(nn.Module) wrapper unchanged.");
}

LevelResult check_num_warps(const KernelModule& m) {
  for (const auto& [name, value] : literal_bindings(*m.tree(), [](std::string_view s) { return s == "num_warps"; })) {
    auto v = literal_int(*value);
    if (!v) continue;  // symbolic values are not evaluated
    if (!is_pow2(*v))
      return LevelResult::fail("INVALID num_warps=" + std::to_string(*v) +
                               ": Must be a power of 2. Valid values: " + std::string(kValidWarps));
    if (*v > 32)
      return LevelResult::fail("INVALID num_warps=" + std::to_string(*v) +
                               ": Exceeds the maximum of 32. Valid values: " + std::string(kValidWarps));
  }
  return LevelResult::pass();
}

LevelResult check_block_sizes(const KernelModule& m) {
  for (const auto& [name, value] : literal_bindings(*m.tree(), is_block_name)) {
    auto v = literal_int(*value);
    if (!v) continue;
    if (!is_pow2(*v) || *v > 256)
      return LevelResult::fail("INVALID " + name + "=" + std::to_string(*v) +
                               ": Block dimensions must be powers of 2 and at most 256. Valid values: 1, 2, 4, 8, "
                               "16, 32, 64, 128, 256" +
                               at_line(*value));
  }
  return LevelResult::pass();
}

LevelResult check_harness(const KernelModule& candidate, const KernelModule& baseline) {
  constexpr std::string_view kRule =
      " The Model wrapper, the imports and the input helpers are a fixed harness and must stay byte-identical; only "
      "@triton.jit kernels, their autotune configs and host-side launch code may change.";
  if (!candidate.ok()) return LevelResult::fail("HARNESS MODIFIED: the candidate does not parse, so its harness cannot be checked.");
  if (!baseline.ok()) throw UsageError("harness baseline does not parse: " + baseline.syntax_error());

  auto want_imports = import_texts(baseline);
  auto got_imports = import_texts(candidate);
  if (want_imports != got_imports) {
    std::string block;
    for (auto t : want_imports) block += "\n    " + std::string(t);
    return LevelResult::fail("HARNESS MODIFIED: the import block differs from the original. Restore it exactly:" +
                             block + "\n" + std::string(kRule.substr(1)));
  }

  std::map<std::string, std::string_view> want;
  for (const Region* r : baseline.harness_regions())
    if (r->key.rfind("import#", 0) != 0) want.emplace(r->key, baseline.text(*r));
  std::set<std::string> seen;
  for (const Region* r : candidate.harness_regions()) {
    if (r->key.rfind("import#", 0) == 0) continue;
    auto it = want.find(r->key);
    if (it == want.end())
      return LevelResult::fail("HARNESS MODIFIED: `" + r->key + "` is a new harness declaration." + std::string(kRule));
    if (!seen.insert(r->key).second)
      return LevelResult::fail("HARNESS MODIFIED: `" + r->key + "` is declared more than once." + std::string(kRule));
    if (candidate.text(*r) != it->second)
      return LevelResult::fail("HARNESS MODIFIED: `" + r->key + "` differs from the original." + std::string(kRule));
  }
  for (const auto& [key, _] : want)
    if (!seen.count(key)) return LevelResult::fail("HARNESS MODIFIED: `" + key + "` was removed or renamed." + std::string(kRule));

  // Code outside the harness may not rebind or patch names the harness owns.
  const std::set<std::string> owned = harness_bound_names(baseline);
  std::set<std::size_t> harness_starts;
  for (const Region* r : candidate.harness_regions()) harness_starts.insert(r->span.begin);
  for (const auto& stmt : candidate.tree()->children) {
    NodeKind k = stmt->kind;
    if (k == NodeKind::Import || k == NodeKind::ImportFrom || k == NodeKind::ClassDef) continue;
    if (harness_starts.count(stmt->span.begin)) continue;
    if (k == NodeKind::FunctionDef && is_input_helper_name(stmt->value)) continue;
    std::string hit;
    if (k == NodeKind::FunctionDef && owned.count(stmt->value)) hit = stmt->value;
    py::walk(*stmt, [&](const Node& n) {
      if (!hit.empty()) return;
      if (n.kind == NodeKind::Global || n.kind == NodeKind::Nonlocal) {
        for (const auto& c : n.children)
          if (owned.count(c->value)) hit = c->value;
        if (hit.empty() && owned.count(n.value)) hit = n.value;
      }
      if (&n == stmt.get() && (k == NodeKind::Assign || k == NodeKind::AugAssign || k == NodeKind::AnnAssign)) {
        std::size_t targets = k == NodeKind::Assign ? n.children.size() - 1 : 1;
        for (std::size_t i = 0; i < targets && i < n.children.size(); ++i) {
          std::string r = root_name(*n.children[i]);
          if (owned.count(r)) hit = r;
        }
      }
    });
    if (!hit.empty())
      return LevelResult::fail("HARNESS MODIFIED: top-level code rebinds or patches harness name `" + hit + "`" +
                               at_line(*stmt) + "." + std::string(kRule));
  }
  return LevelResult::pass();
}

LevelResult check_evasion(const KernelModule& m) {
  std::set<const Node*> harness;
  for (const auto& stmt : m.tree()->children) {
    NodeKind k = stmt->kind;
    if (k == NodeKind::Import || k == NodeKind::ImportFrom || k == NodeKind::ClassDef ||
        (k == NodeKind::FunctionDef && is_input_helper_name(stmt->value)))
      harness.insert(stmt.get());
  }
  constexpr std::string_view kAdvice =
      " Dynamic imports and reflective attribute access are not allowed outside the harness; implement the "
      "computation in Triton instead of dispatching to the host framework.";
  std::string found;
  const Node* where = nullptr;
  auto flag = [&](const Node& n, std::string what) {
    if (found.empty()) {
      found = std::move(what);
      where = &n;
    }
  };
  for (const auto& stmt : m.tree()->children) {
    if (harness.count(stmt.get())) continue;
    py::walk(*stmt, [&](const Node& n) {
      if (!found.empty()) return;
      switch (n.kind) {
        case NodeKind::Import:
        case NodeKind::ImportFrom:
          flag(n, "import statement outside the harness import block");
          break;
        case NodeKind::Call: {
          const Node& callee = *n.children[0];
          std::string name = callee.kind == NodeKind::Name ? callee.value
                             : callee.kind == NodeKind::Attribute ? callee.value
                                                                   : std::string();
          if (kForbiddenCalls.count(name)) flag(n, "call to `" + name + "`");
          if (callee.kind == NodeKind::Name && kReflectiveAttrCalls.count(name)) {
            const Node* attr = n.children.size() > 2 ? n.children[2].get() : nullptr;
            if (!attr || attr->kind == NodeKind::Keyword || attr->kind == NodeKind::Starred || !is_str_literal(*attr))
              flag(n, "`" + name + "` with a computed attribute name");
            else if (kForbiddenAttrs.count(attr->str_value))
              flag(n, "`" + name + "` of `" + attr->str_value + "`");
          }
          break;
        }
        case NodeKind::Attribute: {
          if (kForbiddenAttrs.count(n.value)) flag(n, "access to `" + n.value + "`");
          auto dotted = py::dotted_name(n);
          if (dotted && (*dotted == "sys.modules" || dotted->rfind("importlib.", 0) == 0))
            flag(n, "access to `" + *dotted + "`");
          break;
        }
        case NodeKind::Name:
          if (n.value == "importlib" || n.value == "__builtins__") flag(n, "use of `" + n.value + "`");
          break;
        default:
          break;
      }
    });
    if (!found.empty()) break;
  }
  if (found.empty()) return LevelResult::pass();
  return LevelResult::fail("EVASION DETECTED" + at_line(*where) + ": " + found + "." + std::string(kAdvice));
}

LevelResult verify_structure(const KernelModule& candidate, const KernelModule& baseline) {
  if (!candidate.ok()) return LevelResult::fail("SYNTAX ERROR: " + candidate.syntax_error());
  for (auto check : {check_imports, check_jit_kernel, check_model_class, check_num_warps, check_block_sizes}) {
    LevelResult r = check(candidate);
    if (!r.passed) return r;
  }
  LevelResult h = check_harness(candidate, baseline);
  if (!h.passed) return h;
  return check_evasion(candidate);
}

LevelResult verify_correctness(Runner& runner, const DeviceLease& lease, const KernelModule& candidate,
                               const KernelModule& reference, const ProblemSpec& spec, const std::string& variant,
                               double rtol, double atol) {
  CompareReply c;
  try {
    c = runner.compare(lease, reference, candidate, spec, variant, rtol, atol, 0);
  } catch (const KernelExecutionError& e) {
    return LevelResult::fail(std::string("CORRECTNESS FAILED: the kernel raised an error while executing:\n") + e.what());
  }
  if (c.correct) return LevelResult::pass();
  std::ostringstream d;
  d << "CORRECTNESS FAILED: ";
  if (c.verdict == "nan") {
    d << "NaN detected in the optimized output. Likely causes: uninitialized accumulators, division by zero, "
         "overflow in a reduced-precision dtype.";
  } else if (c.verdict == "inf") {
    d << "Inf in the optimized output where the original has none. Likely causes: overflow after a dtype change, "
         "missing max-subtraction in softmax.";
  } else if (c.verdict == "shape_mismatch") {
    d << "the optimized output shape differs from the original. Likely causes: wrong grid, wrong output "
         "allocation.";
  } else {
    d << "outputs differ beyond rtol=" << rtol << ", atol=" << atol
      << ". Likely causes: wrong strides, transposed loads, missing boundary checks.";
  }
  d << "\n" << c.diff.to_text();
  if (!c.message.empty()) d << "\n" << c.message;
  return LevelResult::fail(d.str());
}

PerformanceResult verify_performance(Runner& runner, const DeviceLease& lease, const KernelModule& candidate,
                                     const KernelModule& baseline, const ProblemSpec& spec,
                                     const std::string& variant) {
  PerformanceResult out;
  BenchReply base;
  BenchReply cand;
  try {
    base = runner.bench(lease, baseline, spec, variant);
    cand = runner.bench(lease, candidate, spec, variant);
  } catch (const KernelExecutionError& e) {
    out.result = LevelResult::fail(std::string("PERFORMANCE FAILED: the kernel raised an error while benchmarking:\n") +
                                   e.what());
    return out;
  }
  out.original_us = trim_mean(base.times_us);
  out.optimized_us = trim_mean(cand.times_us);
  if (out.optimized_us < out.original_us) return out;

  std::optional<double> flop = spec.resolve(variant).flop;
  if (!flop) flop = base.flop;
  std::ostringstream d;
  d << "PERFORMANCE FAILED: optimized " << fmt_us(out.optimized_us) << " us vs original " << fmt_us(out.original_us)
    << " us (speedup " << fmt_us(out.original_us / out.optimized_us) << "x); the candidate must be strictly faster.";
  if (flop) {
    d << "\nTFLOPS: original " << fmt_us(derive_metrics(*flop, 0, out.original_us).tflops) << ", optimized "
      << fmt_us(derive_metrics(*flop, 0, out.optimized_us).tflops) << ".";
  }
  d << "\nTry a different strategy: larger or better-shaped tiles, fewer global memory round trips, a different "
       "num_warps/num_stages, or GRF mode and swizzling changes.";
  out.result = LevelResult::fail(d.str());
  return out;
}

VerificationReport verify(const std::string& candidate_source, const VerifyContext& ctx) {
  if (!ctx.reference) throw UsageError("verification needs a reference module");
  VerificationReport rep;
  auto fail_at = [&](VerifyLevel lvl, std::string diag) {
    rep.level_reached = lvl;
    rep.passed = false;
    rep.diagnostic = std::move(diag);
    return rep;
  };

  LevelResult s = verify_syntax(candidate_source);
  if (!s.passed) return fail_at(VerifyLevel::syntax, s.diagnostic);

  KernelModule cand = KernelModule::from_source(candidate_source);
  LevelResult st = verify_structure(cand, *ctx.reference);
  if (!st.passed) return fail_at(VerifyLevel::structure, st.diagnostic);

  if (!ctx.runner || !ctx.spec) throw UsageError("verification past structure needs a runner and a spec");
  DeviceLease lease = ctx.runner->acquire();
  LevelResult c = verify_correctness(*ctx.runner, lease, cand, *ctx.reference, *ctx.spec, ctx.variant, ctx.rtol,
                                     ctx.atol);
  if (!c.passed) {
    if (ctx.require_correctness) return fail_at(VerifyLevel::correctness, c.diagnostic);
    rep.warnings.push_back("correctness not enforced: " + c.diagnostic);
  }

  const KernelModule& baseline = ctx.perf_baseline ? *ctx.perf_baseline : *ctx.reference;
  PerformanceResult p = verify_performance(*ctx.runner, lease, cand, baseline, *ctx.spec, ctx.variant);
  if (p.original_us > 0 && p.optimized_us > 0) {
    rep.timings = std::make_pair(p.original_us, p.optimized_us);
    rep.speedup = p.original_us / p.optimized_us;
  }
  if (!p.result.passed) return fail_at(VerifyLevel::performance, p.result.diagnostic);
  rep.level_reached = VerifyLevel::success;
  rep.passed = true;
  return rep;
}

std::string observation_for(const VerificationReport& r, std::string_view sentinel) {
  if (r.passed) return std::string(sentinel);
  std::string level(level_name(r.level_reached));
  std::transform(level.begin(), level.end(), level.begin(), [](unsigned char c) { return std::toupper(c); });
  return level + " CHECK FAILED\n" + r.diagnostic;
}

std::string VerifyTool::operator()(const std::string& candidate) {
  last_ = verify(candidate, ctx_);
  return observation_for(*last_, sentinel_);
}

}  // namespace kopt
