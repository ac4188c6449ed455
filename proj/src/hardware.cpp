// SPDX-License-Identifier: Apache-2.0
#include "kopt/hardware.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdio>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kopt/error.hpp"

namespace kopt {

using nlohmann::json;

namespace {

constexpr int kMaxBlock = 256;
constexpr int kMinBlockK = 16;
constexpr std::int64_t kGiB = 1024LL * 1024 * 1024;

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<GpuFamily> family_from_device_name(std::string_view name) {
  std::string n = lower(name);
  if (n.find("arc") != std::string::npos) return n.find("pro") != std::string::npos ? GpuFamily::arc_pro : GpuFamily::arc;
  for (const char* tag : {"iris", "uhd", "integrated"})
    if (n.find(tag) != std::string::npos) return GpuFamily::integrated;
  return std::nullopt;
}

// Picks the family and fills conservative defaults for fields the source did
// not report.
void finalize(GpuProfile& p, std::optional<GpuFamily> explicit_family) {
  const bool complete = p.eu_count > 0 && p.subslice_count > 0 && p.slice_count > 0 && p.max_compute_units > 0 &&
                        p.global_memory_bytes > 0;
  if (!complete) {
    p.family = GpuFamily::unknown;
    p.notes.push_back("required counts missing; family set to unknown");
  } else if (explicit_family) {
    p.family = *explicit_family;
    p.notes.push_back("family given explicitly");
  } else if (auto by_name = family_from_device_name(p.name)) {
    p.family = *by_name;
    p.notes.push_back("family from device name");
  } else if (p.max_compute_units <= 8) {
    p.family = GpuFamily::integrated;
    p.notes.push_back("family from properties: <= 8 compute units");
  } else if (p.global_memory_bytes >= 24 * kGiB) {
    p.family = GpuFamily::arc_pro;
    p.notes.push_back("family from properties: >= 24 GiB device memory");
  } else {
    p.family = GpuFamily::arc;
    p.notes.push_back("family from properties: discrete");
  }
  auto fill = [&](std::int64_t& field, std::int64_t value, const char* what) {
    if (field > 0) return;
    field = value;
    p.notes.push_back(std::string(what) + " defaulted to " + std::to_string(value));
  };
  fill(p.max_work_group_size, p.family == GpuFamily::unknown ? 256 : 1024, "max_work_group_size");
  fill(p.subgroup_size, 16, "subgroup_size");
  fill(p.slm_bytes, 64 * 1024, "slm_bytes");
}

std::int64_t json_int(const json& obj, const char* key) {
  if (!obj.contains(key)) return 0;
  const json& v = obj[key];
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number()) return static_cast<std::int64_t>(v.get<double>());
  if (v.is_string()) {
    try {
      return std::stoll(v.get<std::string>());
    } catch (const std::exception&) {
      throw ParseError(std::string("field '") + key + "' is not an integer: " + v.get<std::string>());
    }
  }
  throw ParseError(std::string("field '") + key + "' is not an integer");
}

std::optional<bool> json_bool(const json& obj, const char* key) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj[key];
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) return v.get<int>() != 0;
  if (v.is_string()) {
    std::string s = lower(v.get<std::string>());
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
  }
  throw ParseError(std::string("field '") + key + "' is not a boolean");
}

json parse_json(std::string_view text, const char* what) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ParseError(std::string(what) + " payload is empty");
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + " payload is not valid JSON: " + e.what());
  }
}

const std::set<std::string> kProfileKeys = {
    "family",        "name",         "eu_count",     "subslice_count",  "slice_count",  "max_compute_units",
    "max_work_group_size", "subgroup_size", "global_memory_bytes", "slm_bytes", "fp16", "bf16", "fp64",
    "base_block_m",  "base_block_n", "base_block_k"};

// Flat key/value map in GpuProfile field names; used by both the config file
// and the device query hook.
GpuProfile profile_from_flat(const json& obj, const char* what) {
  if (!obj.is_object()) throw ParseError(std::string(what) + " must be a flat key/value map");
  for (const auto& [k, v] : obj.items()) {
    if (!kProfileKeys.count(k)) throw ParseError(std::string(what) + ": unknown key '" + k + "'");
    if (v.is_object() || v.is_array()) throw ParseError(std::string(what) + ": key '" + k + "' must be a scalar");
  }
  GpuProfile p;
  std::optional<GpuFamily> fam;
  if (obj.contains("family")) {
    std::string f = obj["family"].is_string() ? obj["family"].get<std::string>() : "";
    fam = family_from_name(f);
    if (!fam) throw ParseError(std::string(what) + ": unknown family '" + f + "'");
    if (*fam == GpuFamily::unknown) fam.reset();
  }
  if (obj.contains("name")) p.name = obj["name"].is_string() ? obj["name"].get<std::string>() : obj["name"].dump();
  p.eu_count = json_int(obj, "eu_count");
  p.subslice_count = json_int(obj, "subslice_count");
  p.slice_count = json_int(obj, "slice_count");
  p.max_compute_units = json_int(obj, "max_compute_units");
  p.max_work_group_size = json_int(obj, "max_work_group_size");
  p.subgroup_size = json_int(obj, "subgroup_size");
  p.global_memory_bytes = json_int(obj, "global_memory_bytes");
  p.slm_bytes = json_int(obj, "slm_bytes");
  p.fp16 = json_bool(obj, "fp16").value_or(true);
  p.bf16 = json_bool(obj, "bf16").value_or(false);
  p.fp64 = json_bool(obj, "fp64").value_or(false);
  if (obj.contains("base_block_m") || obj.contains("base_block_n") || obj.contains("base_block_k")) {
    std::array<int, 3> t{static_cast<int>(json_int(obj, "base_block_m")), static_cast<int>(json_int(obj, "base_block_n")),
                         static_cast<int>(json_int(obj, "base_block_k"))};
    for (int d : t)
      if (d < 1 || d > kMaxBlock || !std::has_single_bit(static_cast<unsigned>(d)))
        throw ParseError(std::string(what) + ": base tile dims must all be given as powers of two <= 256");
    p.base_tile = t;
  }
  finalize(p, fam);
  return p;
}

json yaml_to_flat_json(const YAML::Node& n) {
  if (!n.IsMap()) throw ParseError("GPU config file must be a flat key/value map");
  json out = json::object();
  for (const auto& kv : n) {
    const std::string key = kv.first.as<std::string>();
    if (!kv.second.IsScalar()) throw ParseError("GPU config file: key '" + key + "' must be a scalar");
    const std::string s = kv.second.as<std::string>();
    bool b;
    std::int64_t i;
    if (YAML::convert<std::int64_t>::decode(kv.second, i)) out[key] = i;
    else if (YAML::convert<bool>::decode(kv.second, b)) out[key] = b;
    else out[key] = s;
  }
  return out;
}

std::optional<std::string> capture(const char* cmd) {
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(::popen(cmd, "r"), ::pclose);
  if (!pipe) return std::nullopt;
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe.get())) out.append(buf, n);
  int rc = ::pclose(pipe.release());
  if (rc != 0 || out.find_first_not_of(" \t\r\n") == std::string::npos) return std::nullopt;
  return out;
}

int warps_for(int bm, int bn) {
  const int area = bm * bn;
  if (area >= 128 * 128) return 32;
  if (area >= 64 * 64) return 16;
  return 8;
}

int group_size_for(const GpuProfile& p, std::int64_t m, std::int64_t n, int bm, int bn) {
  const std::int64_t m_tiles = (m + bm - 1) / bm;
  const std::int64_t n_tiles = (n + bn - 1) / bn;
  const std::int64_t tiles = m_tiles * n_tiles;
  if (tiles < 16) return 1;
  const std::int64_t per = 4 * std::max<std::int64_t>(1, p.max_compute_units);
  const std::int64_t g = floor_pow2((tiles + per - 1) / per);
  return static_cast<int>(std::clamp<std::int64_t>(g, 1, m_tiles));
}

// Fills the derived fields for a fixed tile.
TuningParams finish(const GpuProfile& p, TuningParams t, std::int64_t m, std::int64_t n, std::int64_t k) {
  t.group_size_m = group_size_for(p, m, n, t.block_m, t.block_n);
  t.num_warps = warps_for(t.block_m, t.block_n);
  t.num_stages = k <= 256 ? 2 : 3;
  return t;
}

void check_bpe(int bpe) {
  if (bpe != 1 && bpe != 2 && bpe != 4 && bpe != 8)
    throw UsageError("bytes_per_element must be 1, 2, 4 or 8, got " + std::to_string(bpe));
}

}  // namespace

std::string_view family_name(GpuFamily f) {
  switch (f) {
    case GpuFamily::arc: return "arc";
    case GpuFamily::arc_pro: return "arc_pro";
    case GpuFamily::integrated: return "integrated";
    case GpuFamily::unknown: return "unknown";
  }
  return "unknown";
}

std::optional<GpuFamily> family_from_name(std::string_view s) {
  for (GpuFamily f : {GpuFamily::arc, GpuFamily::arc_pro, GpuFamily::integrated, GpuFamily::unknown})
    if (family_name(f) == s) return f;
  return std::nullopt;
}

std::string_view grf_name(GrfMode g) { return g == GrfMode::large ? "large" : "small"; }

GrfMode default_grf(GpuFamily f) {
  return f == GpuFamily::arc || f == GpuFamily::arc_pro ? GrfMode::large : GrfMode::small;
}

std::array<int, 3> base_tile(const GpuProfile& p) {
  if (p.base_tile) return *p.base_tile;
  switch (p.family) {
    case GpuFamily::arc_pro: return {256, 256, 32};
    case GpuFamily::arc: return {128, 128, 32};
    default: return {64, 64, 32};
  }
}

std::int64_t floor_pow2(std::int64_t v) {
  if (v < 1) return 1;
  return static_cast<std::int64_t>(std::bit_floor(static_cast<std::uint64_t>(v)));
}

std::int64_t tile_bytes(const TuningParams& t, int bpe) {
  return (static_cast<std::int64_t>(t.block_m) * t.block_k + static_cast<std::int64_t>(t.block_k) * t.block_n) * bpe;
}

bool tuning_valid(const TuningParams& t, int bpe) {
  auto pow2 = [](int v) { return v >= 1 && std::has_single_bit(static_cast<unsigned>(v)); };
  return pow2(t.block_m) && pow2(t.block_n) && pow2(t.block_k) && t.block_m <= kMaxBlock && t.block_n <= kMaxBlock &&
         t.block_k <= kMaxBlock && t.group_size_m >= 1 && pow2(t.num_warps) && t.num_warps <= 32 &&
         t.num_stages >= 1 && tile_bytes(t, bpe) <= grf_capacity_bytes(t.grf);
}

TuningParams get_optimal_params(const GpuProfile& profile, GrfMode grf, std::int64_t m, std::int64_t n,
                                std::int64_t k, int bpe) {
  check_bpe(bpe);
  m = std::max<std::int64_t>(m, 1);
  n = std::max<std::int64_t>(n, 1);
  k = std::max<std::int64_t>(k, 1);
  const auto lim_m = static_cast<int>(std::min<std::int64_t>(floor_pow2(m), kMaxBlock));
  const auto lim_n = static_cast<int>(std::min<std::int64_t>(floor_pow2(n), kMaxBlock));
  const auto lim_k = static_cast<int>(std::min<std::int64_t>(floor_pow2(k), kMaxBlock));

  auto [bm, bn, bk] = base_tile(profile);
  bm = std::min(bm, lim_m);
  bn = std::min(bn, lim_n);
  bk = std::min(bk, lim_k);

  const double aspect = static_cast<double>(m) / static_cast<double>(n);
  if (aspect >= 4.0) {
    bm = std::min(bm * 2, lim_m);
    if (bn > 16) bn /= 2;
  } else if (aspect <= 0.25) {
    bn = std::min(bn * 2, lim_n);
    if (bm > 16) bm /= 2;
  }

  TuningParams t{bm, bn, bk, 1, 8, 2, grf};
  while (tile_bytes(t, bpe) > grf_capacity_bytes(grf)) {
    if (t.block_k > kMinBlockK) t.block_k /= 2;
    else if (t.block_m > t.block_n) t.block_m /= 2;
    else if (t.block_n > 1) t.block_n /= 2;
    else break;
  }
  return finish(profile, t, m, n, k);
}

std::vector<TuningParams> generate_autotune_grid(const GpuProfile& profile, std::int64_t m, std::int64_t n,
                                                 std::int64_t k, int bpe) {
  check_bpe(bpe);
  m = std::max<std::int64_t>(m, 1);
  n = std::max<std::int64_t>(n, 1);
  k = std::max<std::int64_t>(k, 1);
  const std::int64_t lim_m = std::min<std::int64_t>(floor_pow2(m), kMaxBlock);
  const std::int64_t lim_n = std::min<std::int64_t>(floor_pow2(n), kMaxBlock);
  const std::int64_t lim_k = std::min<std::int64_t>(floor_pow2(k), kMaxBlock);

  std::vector<TuningParams> grid;
  auto add = [&](const TuningParams& t) {
    if (grid.size() >= kMaxAutotuneConfigs || !tuning_valid(t, bpe)) return;
    if (t.block_m > lim_m || t.block_n > lim_n || t.block_k > lim_k) return;
    if (std::find(grid.begin(), grid.end(), t) == grid.end()) grid.push_back(t);
  };

  const GrfMode primary = default_grf(profile.family);
  const GrfMode other = primary == GrfMode::large ? GrfMode::small : GrfMode::large;
  const TuningParams heads[2] = {get_optimal_params(profile, primary, m, n, k, bpe),
                                 get_optimal_params(profile, other, m, n, k, bpe)};
  add(heads[0]);
  add(heads[1]);

  static constexpr std::array<std::array<int, 3>, 8> kMoves = {{
      {1, 0, 0}, {0, 1, 0}, {-1, 0, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}, {1, -1, 0}, {-1, 1, 0},
  }};
  auto scale = [](int v, int dir) { return dir > 0 ? v * 2 : dir < 0 ? v / 2 : v; };
  for (const TuningParams& h : heads) {
    for (const auto& mv : kMoves) {
      TuningParams t = h;
      t.block_m = scale(h.block_m, mv[0]);
      t.block_n = scale(h.block_n, mv[1]);
      t.block_k = scale(h.block_k, mv[2]);
      if (t.block_m < 1 || t.block_n < 1 || t.block_k < 1) continue;
      add(finish(profile, t, m, n, k));
    }
  }
  // Warp-count neighbors of the head, for tiles where the area rule is a guess.
  for (int w : {heads[0].num_warps / 2, heads[0].num_warps * 2}) {
    TuningParams t = heads[0];
    t.num_warps = w;
    add(t);
  }
  return grid;
}

std::string format_autotune_configs(const std::vector<TuningParams>& grid) {
  std::ostringstream o;
  o << "[\n";
  for (const auto& t : grid) {
    o << "    triton.Config({'BLOCK_M': " << t.block_m << ", 'BLOCK_N': " << t.block_n << ", 'BLOCK_K': " << t.block_k
      << ", 'GROUP_SIZE_M': " << t.group_size_m << ", 'grf_mode': '" << grf_name(t.grf) << "'}, num_warps="
      << t.num_warps << ", num_stages=" << t.num_stages << "),\n";
  }
  o << "]";
  return o.str();
}

std::optional<DetectSource> detect_source_from_name(std::string_view s) {
  if (s == "device_query") return DetectSource::device_query;
  if (s == "smi_json") return DetectSource::smi_json;
  if (s == "config_file") return DetectSource::config_file;
  return std::nullopt;
}

DetectHooks default_detect_hooks() {
  DetectHooks h;
  h.device_query = [] {
    // torch.xpu reports no slice count; one slice is assumed.
    return capture(
        "python3 -c \"import json,torch\n"
        "if not torch.xpu.is_available(): raise SystemExit(1)\n"
        "p=torch.xpu.get_device_properties(0)\n"
        "g=lambda n: getattr(p,n,0)\n"
        "print(json.dumps({'name':p.name,'eu_count':g('gpu_eu_count'),'subslice_count':g('gpu_subslice_count'),"
        "'slice_count':1,'max_compute_units':g('max_compute_units'),'max_work_group_size':g('max_work_group_size'),"
        "'subgroup_size':max(getattr(p,'sub_group_sizes',[16])),'global_memory_bytes':p.total_memory,"
        "'fp16':bool(g('has_fp16')),'bf16':bool(g('has_bfloat16_conversions')),'fp64':bool(g('has_fp64'))}))\" "
        "2>/dev/null");
  };
  h.smi_capture = [] { return capture("xpu-smi discovery -d 0 -j 2>/dev/null"); };
  return h;
}

GpuProfile profile_from_smi_json(std::string_view text) {
  json root = parse_json(text, "xpu-smi");
  json dev = root;
  if (root.is_object() && root.contains("device_list")) {
    if (!root["device_list"].is_array() || root["device_list"].empty()) throw ParseError("xpu-smi: device_list is empty");
    dev = root["device_list"][0];
  }
  if (!dev.is_object()) throw ParseError("xpu-smi: expected a device object");
  GpuProfile p;
  p.name = dev.value("device_name", "");
  p.eu_count = json_int(dev, "number_of_eus");
  p.slice_count = json_int(dev, "number_of_slices");
  p.subslice_count = json_int(dev, "number_of_sub_slices");
  if (p.subslice_count == 0 && p.slice_count > 0)
    p.subslice_count = json_int(dev, "number_of_sub_slices_per_slice") * p.slice_count;
  p.max_compute_units = json_int(dev, "max_compute_units");
  if (p.max_compute_units == 0) p.max_compute_units = p.subslice_count;
  p.global_memory_bytes = json_int(dev, "memory_physical_size_byte");
  p.max_work_group_size = json_int(dev, "max_work_group_size");
  p.subgroup_size = json_int(dev, "physical_eu_simd_width");
  p.slm_bytes = json_int(dev, "max_shared_local_memory");
  p.fp16 = json_bool(dev, "fp16").value_or(true);
  p.bf16 = json_bool(dev, "bf16").value_or(true);
  p.fp64 = json_bool(dev, "fp64").value_or(false);
  finalize(p, std::nullopt);
  return p;
}

GpuProfile profile_from_config_yaml(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ParseError("GPU config payload is empty");
  YAML::Node n;
  try {
    n = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string("GPU config file is not valid YAML: ") + e.what());
  }
  return profile_from_flat(yaml_to_flat_json(n), "GPU config file");
}

GpuProfile detect_gpu(DetectSource source, const std::optional<std::string>& payload, const DetectHooks& hooks) {
  switch (source) {
    case DetectSource::config_file:
      if (!payload) throw UsageError("config_file detection needs a payload");
      return profile_from_config_yaml(*payload);
    case DetectSource::smi_json:
      if (!payload) throw UsageError("smi_json detection needs a payload");
      return profile_from_smi_json(*payload);
    case DetectSource::device_query: {
      if (hooks.device_query) {
        if (auto props = hooks.device_query()) return profile_from_flat(parse_json(*props, "device query"), "device query");
      }
      std::optional<std::string> smi = payload;
      if (!smi && hooks.smi_capture) smi = hooks.smi_capture();
      if (smi) {
        GpuProfile p = profile_from_smi_json(*smi);
        p.notes.insert(p.notes.begin(), "device query unavailable; used xpu-smi JSON");
        return p;
      }
      GpuProfile p;
      p.notes.push_back("device query and xpu-smi both unavailable");
      finalize(p, std::nullopt);
      return p;
    }
  }
  throw UsageError("unknown detection source");
}

std::string profile_summary(const GpuProfile& p) {
  std::ostringstream o;
  o << "family=" << family_name(p.family);
  if (!p.name.empty()) o << " name=\"" << p.name << "\"";
  o << " eus=" << p.eu_count << " subslices=" << p.subslice_count << " slices=" << p.slice_count
    << " compute_units=" << p.max_compute_units << " max_work_group=" << p.max_work_group_size
    << " subgroup=" << p.subgroup_size << " global_mem=" << p.global_memory_bytes << " slm=" << p.slm_bytes
    << " fp16=" << p.fp16 << " bf16=" << p.bf16 << " fp64=" << p.fp64;
  return o.str();
}

}  // namespace kopt
