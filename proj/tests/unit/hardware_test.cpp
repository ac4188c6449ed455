// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/hardware.hpp"

using namespace kopt;

namespace {

std::string slurp(const std::string& rel) {
  std::ifstream in(std::string(KOPT_SOURCE_DIR) + "/" + rel, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GpuProfile profile(GpuFamily f, std::int64_t cu = 32) {
  GpuProfile p;
  p.family = f;
  p.eu_count = cu * 8;
  p.subslice_count = cu;
  p.slice_count = 4;
  p.max_compute_units = cu;
  p.global_memory_bytes = 16LL << 30;
  return p;
}

// Largest power of two <= v by repeated doubling.
std::int64_t oracle_floor_pow2(std::int64_t v) {
  std::int64_t p = 1;
  while (p * 2 <= v) p *= 2;
  return p;
}

DetectHooks no_hooks() {
  DetectHooks h;
  h.device_query = [] { return std::optional<std::string>(); };
  h.smi_capture = [] { return std::optional<std::string>(); };
  return h;
}

}  // namespace

TEST(Detect, ConfigFileArcPro) {
  GpuProfile p = detect_gpu(DetectSource::config_file, slurp("tests/fixtures/gpu/arc_pro_32core.yaml"));
  EXPECT_EQ(p.family, GpuFamily::arc_pro);
  EXPECT_EQ(p.max_compute_units, 32);
  EXPECT_EQ(p.global_memory_bytes, 34359738368LL);
  EXPECT_TRUE(p.bf16);
}

TEST(Detect, SmiJson) {
  GpuProfile p = detect_gpu(DetectSource::smi_json, slurp("tests/fixtures/gpu/xpu_smi_discovery.json"));
  EXPECT_EQ(p.family, GpuFamily::arc_pro);
  EXPECT_EQ(p.eu_count, 256);
  EXPECT_EQ(p.subslice_count, 32);
  EXPECT_EQ(p.subgroup_size, 16);
  EXPECT_EQ(p.global_memory_bytes, 34359738368LL);
}

TEST(Detect, Errors) {
  EXPECT_THROW(detect_gpu(DetectSource::smi_json, std::string("")), ParseError);
  EXPECT_THROW(detect_gpu(DetectSource::smi_json, std::string("{not json")), ParseError);
  EXPECT_THROW(detect_gpu(DetectSource::config_file, std::string("eu_count: [1, 2]\n")), ParseError);
  EXPECT_THROW(detect_gpu(DetectSource::config_file, std::string("eu_cuont: 8\n")), ParseError);
  EXPECT_THROW(detect_gpu(DetectSource::smi_json, std::nullopt), UsageError);

  GpuProfile p = detect_gpu(DetectSource::smi_json, std::string(R"({"device_list":[{"device_name":"Intel(R) Arc(TM) A770"}]})"));
  EXPECT_EQ(p.family, GpuFamily::unknown);
  EXPECT_GT(p.max_work_group_size, 0);
  EXPECT_FALSE(p.notes.empty());
}

TEST(Detect, DeviceQueryFallsThroughToSmi) {
  GpuProfile p = detect_gpu(DetectSource::device_query, slurp("tests/fixtures/gpu/xpu_smi_discovery.json"), no_hooks());
  EXPECT_EQ(p.family, GpuFamily::arc_pro);
  EXPECT_NE(p.notes.front().find("xpu-smi"), std::string::npos);

  DetectHooks h = no_hooks();
  h.device_query = [] {
    return std::optional<std::string>(R"({"name":"Intel(R) Arc(TM) B580 Graphics","eu_count":160,"subslice_count":20,
      "slice_count":1,"max_compute_units":20,"global_memory_bytes":12884901888})");
  };
  EXPECT_EQ(detect_gpu(DetectSource::device_query, std::nullopt, h).family, GpuFamily::arc);

  EXPECT_EQ(detect_gpu(DetectSource::device_query, std::nullopt, no_hooks()).family, GpuFamily::unknown);
}

TEST(Tuning, ClampsToPowerOfTwoBelowDim) {
  auto t = get_optimal_params(profile(GpuFamily::arc), GrfMode::large, 100, 100, 512, 2);
  EXPECT_EQ(t.block_m, 64);
  EXPECT_EQ(t.block_n, 64);
}

TEST(Tuning, GrfFitHalvesBlockK) {
  GpuProfile p = profile(GpuFamily::arc_pro);
  p.base_tile = std::array<int, 3>{256, 256, 128};
  auto t = get_optimal_params(p, GrfMode::large, 4096, 4096, 4096, 2);
  EXPECT_EQ(t.block_m, 256);
  EXPECT_EQ(t.block_n, 256);
  EXPECT_EQ(t.block_k, 64);
  EXPECT_EQ(tile_bytes(t, 2), 65536);
}

TEST(Tuning, SmallProblemsDoNotSwizzle) {
  auto t = get_optimal_params(profile(GpuFamily::integrated), GrfMode::small, 64, 64, 64, 2);
  EXPECT_EQ(t.block_m, 64);
  EXPECT_EQ(t.block_n, 64);
  EXPECT_EQ(t.group_size_m, 1);
}

TEST(Tuning, SkinnyShapesGetAsymmetricTiles) {
  auto tall = get_optimal_params(profile(GpuFamily::arc), GrfMode::large, 8192, 512, 512, 2);
  EXPECT_GT(tall.block_m, tall.block_n);
  auto wide = get_optimal_params(profile(GpuFamily::arc), GrfMode::large, 512, 8192, 512, 2);
  EXPECT_GT(wide.block_n, wide.block_m);
}

TEST(Tuning, RandomShapeProperties) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> dim(1, 20000);
  const int bpes[] = {1, 2, 4, 8};
  const GpuFamily fams[] = {GpuFamily::arc, GpuFamily::arc_pro, GpuFamily::integrated, GpuFamily::unknown};
  for (int i = 0; i < 2000; ++i) {
    const std::int64_t m = dim(rng), n = dim(rng), k = dim(rng);
    const int bpe = bpes[rng() % 4];
    const GpuProfile p = profile(fams[rng() % 4], 1 + static_cast<std::int64_t>(rng() % 64));
    for (GrfMode g : {GrfMode::large, GrfMode::small}) {
      auto t = get_optimal_params(p, g, m, n, k, bpe);
      const std::int64_t cap = g == GrfMode::large ? 65536 : 32768;
      ASSERT_LE((t.block_m * t.block_k + t.block_k * t.block_n) * bpe, cap);
      ASSERT_LE(t.block_m, oracle_floor_pow2(m));
      ASSERT_LE(t.block_n, oracle_floor_pow2(n));
      ASSERT_LE(t.block_k, oracle_floor_pow2(k));
      ASSERT_TRUE(tuning_valid(t, bpe));
      ASSERT_EQ(t, get_optimal_params(p, g, m, n, k, bpe));

      const std::int64_t mt = (m + t.block_m - 1) / t.block_m, nt = (n + t.block_n - 1) / t.block_n;
      std::int64_t want = 1;
      if (mt * nt >= 16) {
        const double target = std::ceil(static_cast<double>(mt * nt) / (4.0 * std::max<std::int64_t>(1, p.max_compute_units)));
        want = std::min(oracle_floor_pow2(static_cast<std::int64_t>(target)), mt);
      }
      ASSERT_EQ(t.group_size_m, want) << m << "x" << n;
      ASSERT_EQ(t.num_stages, k <= 256 ? 2 : 3);
    }
  }
}

TEST(Grid, Properties) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::int64_t> dim(1, 8192);
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t m = dim(rng), n = dim(rng), k = dim(rng);
    const int bpe = 1 << (rng() % 4);
    const GpuProfile p = profile(static_cast<GpuFamily>(rng() % 4));
    auto grid = generate_autotune_grid(p, m, n, k, bpe);
    ASSERT_GE(grid.size(), 2u);
    ASSERT_LE(grid.size(), 12u);
    ASSERT_EQ(grid.front(), get_optimal_params(p, default_grf(p.family), m, n, k, bpe));
    bool large = false, small = false;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      ASSERT_TRUE(tuning_valid(grid[a], bpe));
      ASSERT_TRUE(std::set<int>({1, 2, 4, 8, 16, 32}).count(grid[a].num_warps));
      for (std::size_t b = a + 1; b < grid.size(); ++b) ASSERT_FALSE(grid[a] == grid[b]);
      (grid[a].grf == GrfMode::large ? large : small) = true;
    }
    ASSERT_TRUE(large && small);
    ASSERT_EQ(grid, generate_autotune_grid(p, m, n, k, bpe));
  }
}

TEST(Grid, TinyProblemStaysTiny) {
  for (auto f : {GpuFamily::arc, GpuFamily::arc_pro, GpuFamily::integrated}) {
    auto grid = generate_autotune_grid(profile(f), 16, 16, 16, 2);
    for (const auto& t : grid) {
      EXPECT_LE(t.block_m, 16);
      EXPECT_LE(t.block_n, 16);
      EXPECT_LE(t.block_k, 16);
    }
  }
}

TEST(Grid, FormatsAsTritonConfigs) {
  auto text = format_autotune_configs(generate_autotune_grid(profile(GpuFamily::arc), 1024, 1024, 1024, 2));
  EXPECT_EQ(text.rfind("[\n    triton.Config({'BLOCK_M': 128, 'BLOCK_N': 128, 'BLOCK_K': 32, 'GROUP_SIZE_M': ", 0), 0u) << text;
  EXPECT_NE(text.find("'grf_mode': 'small'"), std::string::npos);
}
