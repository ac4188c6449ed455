// SPDX-License-Identifier: Apache-2.0
#include "kopt/kernel_module.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <algorithm>
#include <map>
#include <memory>
#include <set>

namespace kopt {

std::string fingerprint(std::string_view source) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx.get(), source.data(), source.size());
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::string hex;
  hex.reserve(len * 2);
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

bool is_input_helper_name(std::string_view name) {
  return name == "get_inputs" || name == "get_init_inputs";
}

bool is_jit_decorator(const py::Node& decorator) {
  const py::Node* target = &decorator;
  if (target->kind == py::NodeKind::Call) target = target->children[0].get();
  auto name = py::dotted_name(*target);
  return name && (*name == "triton.jit" || *name == "jit");
}

KernelModule KernelModule::from_source(std::string source) {
  KernelModule m;
  m.source_ = std::move(source);
  m.fingerprint_ = kopt::fingerprint(m.source_);
  auto parsed = py::parse(m.source_);
  if (!parsed.ok()) {
    m.syntax_error_ = parsed.error->format();
    return m;
  }
  int import_index = 0;
  for (const auto& stmt : parsed.module->children) {
    switch (stmt->kind) {
      case py::NodeKind::Import:
      case py::NodeKind::ImportFrom:
        m.regions_.push_back({RegionRole::harness, "import#" + std::to_string(import_index++), stmt->span});
        break;
      case py::NodeKind::ClassDef:
        m.regions_.push_back({RegionRole::harness, "class " + stmt->value, stmt->span});
        break;
      case py::NodeKind::FunctionDef: {
        bool jit = false;
        for (const auto& d : stmt->decorators) jit = jit || is_jit_decorator(*d);
        if (jit) {
          m.regions_.push_back({RegionRole::kernel, "def " + stmt->value, stmt->span});
        } else if (is_input_helper_name(stmt->value)) {
          m.regions_.push_back({RegionRole::harness, "def " + stmt->value, stmt->span});
        }
        break;
      }
      default:
        break;
    }
  }

  // Top-level constants the harness reads (problem sizes for get_inputs and
  // the like) belong to it too.
  std::set<std::string> harness_reads;
  for (const auto& stmt : parsed.module->children) {
    const bool harness = stmt->kind == py::NodeKind::ClassDef ||
                         (stmt->kind == py::NodeKind::FunctionDef && is_input_helper_name(stmt->value));
    if (harness)
      py::walk(*stmt, [&](const py::Node& n) {
        if (n.kind == py::NodeKind::Name) harness_reads.insert(n.value);
      });
  }
  std::map<std::string, int> seen;
  for (const auto& stmt : parsed.module->children) {
    if (stmt->kind != py::NodeKind::Assign && stmt->kind != py::NodeKind::AnnAssign) continue;
    const std::size_t targets = stmt->kind == py::NodeKind::Assign ? stmt->children.size() - 1 : 1;
    std::string names;
    bool read = false;
    for (std::size_t i = 0; i < targets && i < stmt->children.size(); ++i) {
      const py::Node& t = *stmt->children[i];
      if (t.kind != py::NodeKind::Name) continue;
      names += (names.empty() ? "" : ",") + t.value;
      read = read || harness_reads.count(t.value);
    }
    if (!read) continue;
    const std::string key = "assign " + names;
    m.regions_.push_back({RegionRole::harness, key + "#" + std::to_string(seen[key]++), stmt->span});
  }
  std::stable_sort(m.regions_.begin(), m.regions_.end(),
                   [](const Region& a, const Region& b) { return a.span.begin < b.span.begin; });

  m.tree_ = std::shared_ptr<const py::Node>(std::move(parsed.module));
  return m;
}

std::vector<const Region*> KernelModule::harness_regions() const {
  std::vector<const Region*> out;
  for (const auto& r : regions_)
    if (r.role == RegionRole::harness) out.push_back(&r);
  return out;
}

std::vector<const Region*> KernelModule::kernel_regions() const {
  std::vector<const Region*> out;
  for (const auto& r : regions_)
    if (r.role == RegionRole::kernel) out.push_back(&r);
  return out;
}

}  // namespace kopt
