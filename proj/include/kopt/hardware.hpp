// SPDX-License-Identifier: Apache-2.0
//
// Target GPU model, shape-aware launch parameters and the autotune grid.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kopt {

enum class GpuFamily { arc, arc_pro, integrated, unknown };
std::string_view family_name(GpuFamily f);
std::optional<GpuFamily> family_from_name(std::string_view s);

struct GpuProfile {
  GpuFamily family = GpuFamily::unknown;
  std::string name;
  std::int64_t eu_count = 0;
  std::int64_t subslice_count = 0;
  std::int64_t slice_count = 0;
  std::int64_t max_compute_units = 0;
  std::int64_t max_work_group_size = 0;
  std::int64_t subgroup_size = 0;
  std::int64_t global_memory_bytes = 0;
  std::int64_t slm_bytes = 0;
  bool fp16 = false;
  bool bf16 = false;
  bool fp64 = false;
  // Overrides the family's base tile (m, n, k) when set.
  std::optional<std::array<int, 3>> base_tile;
  // Defaults filled in and how the family was chosen.
  std::vector<std::string> notes;
};

enum class GrfMode { large, small };
std::string_view grf_name(GrfMode g);
constexpr int grf_registers(GrfMode g) { return g == GrfMode::large ? 256 : 128; }
constexpr std::int64_t grf_capacity_bytes(GrfMode g) { return g == GrfMode::large ? 65536 : 32768; }

// Large GRF on discrete parts, small elsewhere.
GrfMode default_grf(GpuFamily f);
std::array<int, 3> base_tile(const GpuProfile& p);

struct TuningParams {
  int block_m = 64;
  int block_n = 64;
  int block_k = 32;
  int group_size_m = 1;
  int num_warps = 8;
  int num_stages = 2;
  GrfMode grf = GrfMode::large;

  friend bool operator==(const TuningParams&, const TuningParams&) = default;
};

std::int64_t tile_bytes(const TuningParams& t, int bytes_per_element);
// Structural validity plus the tile-memory inequality for t.grf.
bool tuning_valid(const TuningParams& t, int bytes_per_element);

// Largest power of two <= v, at least 1.
std::int64_t floor_pow2(std::int64_t v);

TuningParams get_optimal_params(const GpuProfile& profile, GrfMode grf, std::int64_t m, std::int64_t n,
                                std::int64_t k, int bytes_per_element);

inline constexpr std::size_t kMaxAutotuneConfigs = 12;
std::vector<TuningParams> generate_autotune_grid(const GpuProfile& profile, std::int64_t m, std::int64_t n,
                                                 std::int64_t k, int bytes_per_element);

// Python source for a triton.autotune configs list.
std::string format_autotune_configs(const std::vector<TuningParams>& grid);

enum class DetectSource { device_query, smi_json, config_file };
std::optional<DetectSource> detect_source_from_name(std::string_view s);

// Environment probes. device_query returns a flat JSON object of GpuProfile
// field names, or nullopt when no device API is reachable.
struct DetectHooks {
  std::function<std::optional<std::string>()> device_query;
  std::function<std::optional<std::string>()> smi_capture;
};
DetectHooks default_detect_hooks();

// Throws ParseError for empty or malformed payloads. A payload that parses but
// lacks required fields yields an unknown-family profile with defaults.
GpuProfile detect_gpu(DetectSource source, const std::optional<std::string>& payload,
                      const DetectHooks& hooks = default_detect_hooks());

GpuProfile profile_from_smi_json(std::string_view json_text);
GpuProfile profile_from_config_yaml(std::string_view yaml_text);

std::string profile_summary(const GpuProfile& p);

}  // namespace kopt
