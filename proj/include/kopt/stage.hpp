// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace kopt {

enum class Stage : std::uint8_t {
  analysis,
  algorithmic,
  discovery,
  dtype_fix,
  fusion,
  memory_access,
  block_pointers,
  persistent_kernel,
  gpu_specific,
  autotune,
};

inline constexpr std::array<Stage, 10> kAllStages = {
    Stage::analysis,       Stage::algorithmic,       Stage::discovery,
    Stage::dtype_fix,      Stage::fusion,            Stage::memory_access,
    Stage::block_pointers, Stage::persistent_kernel, Stage::gpu_specific,
    Stage::autotune,
};

// The nine plannable stages in default execution order.
inline constexpr std::array<Stage, 9> kOptimizationStages = {
    Stage::algorithmic,    Stage::discovery,         Stage::dtype_fix,
    Stage::fusion,         Stage::memory_access,     Stage::block_pointers,
    Stage::persistent_kernel, Stage::gpu_specific,   Stage::autotune,
};

constexpr std::string_view stage_name(Stage s) noexcept {
  switch (s) {
    case Stage::analysis: return "analysis";
    case Stage::algorithmic: return "algorithmic";
    case Stage::discovery: return "discovery";
    case Stage::dtype_fix: return "dtype_fix";
    case Stage::fusion: return "fusion";
    case Stage::memory_access: return "memory_access";
    case Stage::block_pointers: return "block_pointers";
    case Stage::persistent_kernel: return "persistent_kernel";
    case Stage::gpu_specific: return "gpu_specific";
    case Stage::autotune: return "autotune";
  }
  return "unknown";
}

// Exact canonical-name lookup; no alias handling.
constexpr std::optional<Stage> stage_from_name(std::string_view name) noexcept {
  for (Stage s : kAllStages)
    if (stage_name(s) == name) return s;
  return std::nullopt;
}

// Comma-separated canonical names, for error messages.
std::string valid_stage_list();

// Small bitset over the ten stages.
class StageSet {
 public:
  constexpr StageSet() = default;
  constexpr void insert(Stage s) noexcept { bits_ |= bit(s); }
  constexpr void erase(Stage s) noexcept { bits_ &= static_cast<std::uint16_t>(~bit(s)); }
  constexpr bool contains(Stage s) const noexcept { return (bits_ & bit(s)) != 0; }
  constexpr bool empty() const noexcept { return bits_ == 0; }
  constexpr std::uint16_t bits() const noexcept { return bits_; }
  int size() const noexcept;
  friend constexpr bool operator==(StageSet, StageSet) = default;

  static StageSet from_mask(std::uint16_t mask) noexcept {
    StageSet s;
    s.bits_ = mask;
    return s;
  }

 private:
  static constexpr std::uint16_t bit(Stage s) noexcept {
    return static_cast<std::uint16_t>(1u << static_cast<unsigned>(s));
  }
  std::uint16_t bits_ = 0;
};

}  // namespace kopt
