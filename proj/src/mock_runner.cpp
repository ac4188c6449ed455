// SPDX-License-Identifier: Apache-2.0
#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/runner.hpp"

namespace kopt {

using nlohmann::json;

namespace {

json error_reply(const json& req, const std::string& cls, const std::string& msg) {
  return {{"protocol_version", kProtocolVersion},
          {"id", req.value("id", json())},
          {"ok", false},
          {"error", {{"class", cls}, {"message", msg}}}};
}

json diff_json(const DiffSummary& d) {
  return {{"max_abs_diff", d.max_abs_diff}, {"mean_diff", d.mean_diff},           {"max_rel_diff", d.max_rel_diff},
          {"count_exceeding", d.count_exceeding}, {"pct_exceeding", d.pct_exceeding}, {"total", d.total}};
}

std::string payload_fingerprint(const json& module) {
  if (!module.is_object() || !module.contains("source") || !module["source"].is_string())
    throw InfrastructureError("request module payload lacks a source");
  return fingerprint(module["source"].get<std::string>());
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MockScenario scenario_from_yaml(const YAML::Node& n) {
  MockScenario s;
  if (n["mean_us"]) s.mean_us = n["mean_us"].as<double>();
  if (n["jitter_us"]) s.jitter_us = n["jitter_us"].as<double>();
  if (n["verdict"]) s.verdict = n["verdict"].as<std::string>();
  if (n["message"]) s.message = n["message"].as<std::string>();
  if (n["flop"]) s.flop = n["flop"].as<double>();
  if (n["bytes"]) s.bytes = n["bytes"].as<double>();
  if (n["estimated"]) s.estimated = n["estimated"].as<bool>();
  if (n["kernel_error"]) s.kernel_error = n["kernel_error"].as<bool>();
  if (const YAML::Node d = n["diff"]) {
    if (d["max_abs_diff"]) s.diff.max_abs_diff = d["max_abs_diff"].as<double>();
    if (d["mean_diff"]) s.diff.mean_diff = d["mean_diff"].as<double>();
    if (d["max_rel_diff"]) s.diff.max_rel_diff = d["max_rel_diff"].as<double>();
    if (d["count_exceeding"]) s.diff.count_exceeding = d["count_exceeding"].as<std::int64_t>();
    if (d["pct_exceeding"]) s.diff.pct_exceeding = d["pct_exceeding"].as<double>();
    if (d["total"]) s.diff.total = d["total"].as<std::int64_t>();
  }
  return s;
}

}  // namespace

std::vector<double> scripted_samples(const MockScenario& s, int n) {
  // Pairs of mean+j and mean-j with a lone mean for odd n, so both the plain
  // and the trimmed mean equal mean_us exactly.
  std::vector<double> out;
  out.reserve(n);
  for (int i = 0; i + 1 < n; i += 2) {
    out.push_back(s.mean_us + s.jitter_us);
    out.push_back(s.mean_us - s.jitter_us);
  }
  if (n % 2) out.push_back(s.mean_us);
  return out;
}

void MockRunner::script(const std::string& fp, const std::string& variant, MockScenario s) {
  std::lock_guard<std::mutex> g(mu_);
  table_[{fp, variant}] = std::move(s);
}

void MockRunner::script_source(const std::string& source, const std::string& variant, MockScenario s) {
  script(fingerprint(source), variant, std::move(s));
}

const MockScenario* MockRunner::find(const std::string& fp, const std::string& variant) const {
  auto it = table_.find({fp, variant});
  if (it == table_.end()) it = table_.find({fp, "*"});
  return it == table_.end() ? nullptr : &it->second;
}

const MockScenario& MockRunner::lookup(const std::string& fp, const std::string& variant) const {
  if (const MockScenario* s = find(fp, variant)) return *s;
  throw ScriptedMissError("no scripted outcome for module " + fp.substr(0, 16) + " variant '" + variant + "'");
}

int MockRunner::count(const std::string& kind) const {
  std::lock_guard<std::mutex> g(mu_);
  auto it = counts_.find(kind);
  return it == counts_.end() ? 0 : it->second;
}

void MockRunner::reset_counts() {
  std::lock_guard<std::mutex> g(mu_);
  counts_.clear();
}

json MockRunner::roundtrip(const json& req) {
  std::lock_guard<std::mutex> g(mu_);
  if (!req.is_object() || req.value("protocol_version", -1) != kProtocolVersion)
    return error_reply(req, "ProtocolError", "unsupported protocol_version");
  const std::string kind = req.value("kind", "");
  ++counts_[kind];
  const std::string variant = req.value("variant", "");
  json ok = {{"protocol_version", kProtocolVersion}, {"id", req.value("id", json())}, {"ok", true}, {"kind", kind}};
  try {
    if (kind == "run_ci") {
      const MockScenario& s = lookup(payload_fingerprint(req.value("module", json())), variant);
      if (s.kernel_error) return error_reply(req, "KernelError", s.message);
      return ok;
    }
    if (kind == "bench") {
      const MockScenario& s = lookup(payload_fingerprint(req.value("module", json())), variant);
      if (s.kernel_error) return error_reply(req, "KernelError", s.message);
      ok["times_us"] = scripted_samples(s, req.value("iterations", 0));
      if (s.flop) ok["flop"] = *s.flop;
      if (s.bytes) ok["bytes"] = *s.bytes;
      ok["estimated"] = s.estimated;
      return ok;
    }
    if (kind == "compare") {
      const int n = req.value("iterations", 0);
      const std::string ref_fp = payload_fingerprint(req.value("reference", json()));
      const std::string cand_fp = payload_fingerprint(req.value("candidate", json()));
      if (ref_fp == cand_fp && echo_) {
        const MockScenario* s = find(ref_fp, variant);
        const MockScenario& use = s ? *s : *echo_;
        ok["correct"] = true;
        ok["verdict"] = "ok";
        ok["diff"] = diff_json(DiffSummary{});
        ok["reference_times_us"] = scripted_samples(use, n);
        ok["candidate_times_us"] = scripted_samples(use, n);
        return ok;
      }
      const MockScenario& ref = lookup(ref_fp, variant);
      const MockScenario& cand = lookup(cand_fp, variant);
      if (ref.kernel_error) return error_reply(req, "KernelError", "reference: " + ref.message);
      if (cand.kernel_error) return error_reply(req, "KernelError", cand.message);
      ok["correct"] = cand.verdict == "ok";
      ok["verdict"] = cand.verdict;
      if (!cand.message.empty()) ok["message"] = cand.message;
      ok["diff"] = diff_json(cand.diff);
      ok["reference_times_us"] = scripted_samples(ref, n);
      ok["candidate_times_us"] = scripted_samples(cand, n);
      return ok;
    }
    return error_reply(req, "UnknownKind", "unknown request kind '" + kind + "'");
  } catch (const ScriptedMissError& e) {
    return error_reply(req, "ScriptedMissError", e.what());
  } catch (const InfrastructureError& e) {
    return error_reply(req, "ProtocolError", e.what());
  }
}

std::shared_ptr<MockRunner> MockRunner::from_yaml_file(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::Exception& e) {
    throw LoadError("mock scenario file '" + path + "': " + e.what());
  }
  auto mock = std::make_shared<MockRunner>();
  const auto base = std::filesystem::path(path).parent_path();
  try {
    if (root["echo"]) mock->set_echo(scenario_from_yaml(root["echo"]));
    for (const auto& entry : root["scenarios"]) {
      std::string fp;
      if (entry["fingerprint"]) {
        fp = entry["fingerprint"].as<std::string>();
      } else if (entry["source_file"]) {
        fp = fingerprint(read_file(base / entry["source_file"].as<std::string>()));
      } else {
        throw LoadError("mock scenario in '" + path + "' has neither fingerprint nor source_file");
      }
      std::string variant = entry["variant"] ? entry["variant"].as<std::string>() : "*";
      mock->script(fp, variant, scenario_from_yaml(entry));
    }
  } catch (const YAML::Exception& e) {
    throw LoadError("mock scenario file '" + path + "': " + e.what());
  }
  return mock;
}

}  // namespace kopt
