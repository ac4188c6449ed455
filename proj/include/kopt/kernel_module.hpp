// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "kopt/pysyntax.hpp"

namespace kopt {

// Hex SHA-256 of the raw bytes. Whitespace changes alter the fingerprint.
std::string fingerprint(std::string_view source);

enum class RegionRole { harness, kernel };

// A top-level declaration owned by one side of the harness/kernel split.
// `key` identifies the declaration across two versions of a module: the class
// or function name, "import#<n>" for the n-th top-level import statement.
struct Region {
  RegionRole role;
  std::string key;
  py::Span span;
};

// A kernel source artifact split into the immutable harness (Model wrapper
// class and other classes, imports, input-generation helpers and the top-level
// assignments they read) and the mutable
// kernel regions (jit-decorated functions with their decorators). Top-level
// code outside both sets is unowned.
class KernelModule {
 public:
  // Never throws; a parse failure yields a module with ok() == false.
  static KernelModule from_source(std::string source);

  const std::string& source() const noexcept { return source_; }
  const std::string& fingerprint() const noexcept { return fingerprint_; }
  bool ok() const noexcept { return syntax_error_.empty(); }
  const std::string& syntax_error() const noexcept { return syntax_error_; }

  const std::vector<Region>& regions() const noexcept { return regions_; }
  std::vector<const Region*> harness_regions() const;
  std::vector<const Region*> kernel_regions() const;

  std::string_view text(const Region& r) const { return py::slice(source_, r.span); }
  const py::Node* tree() const noexcept { return tree_.get(); }

 private:
  std::string source_;
  std::string fingerprint_;
  std::string syntax_error_;
  std::shared_ptr<const py::Node> tree_;
  std::vector<Region> regions_;
};

// Names of top-level functions treated as input-generation helpers.
bool is_input_helper_name(std::string_view name);

// True for `@triton.jit`, `@jit`, `@triton.jit(...)`.
bool is_jit_decorator(const py::Node& decorator);

}  // namespace kopt
