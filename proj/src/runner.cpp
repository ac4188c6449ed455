// SPDX-License-Identifier: Apache-2.0
#include "kopt/runner.hpp"

#include <cmath>
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/metrics.hpp"

namespace kopt {

using nlohmann::json;

namespace {

DiffSummary diff_from_json(const json& j) {
  DiffSummary d;
  if (!j.is_object()) return d;
  d.max_abs_diff = j.value("max_abs_diff", 0.0);
  d.mean_diff = j.value("mean_diff", 0.0);
  d.max_rel_diff = j.value("max_rel_diff", 0.0);
  d.count_exceeding = j.value("count_exceeding", std::int64_t{0});
  d.pct_exceeding = j.value("pct_exceeding", 0.0);
  d.total = j.value("total", std::int64_t{0});
  return d;
}

std::vector<double> times_from(const json& j, const char* key) {
  std::vector<double> out;
  if (!j.contains(key)) return out;
  const json& arr = j.at(key);
  if (!arr.is_array()) throw InfrastructureError(std::string("reply field '") + key + "' is not a list");
  for (const auto& v : arr) {
    if (!v.is_number()) throw InfrastructureError(std::string("reply field '") + key + "' holds a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

}  // namespace

std::string DiffSummary::to_text() const {
  std::ostringstream ss;
  ss.precision(6);
  ss << "max_abs_diff=" << max_abs_diff << " mean_diff=" << mean_diff << " max_rel_diff=" << max_rel_diff
     << " exceeding=" << count_exceeding << "/" << total << " (" << pct_exceeding << "%)";
  return ss.str();
}

json module_payload(const KernelModule& m) { return {{"source", m.source()}, {"fingerprint", m.fingerprint()}}; }

Runner::Runner(std::shared_ptr<RunnerTransport> transport, RunnerOptions options)
    : transport_(std::move(transport)), options_(std::move(options)) {
  if (!transport_) throw InfrastructureError("runner has no transport");
}

DeviceLease Runner::acquire() { return DeviceLease(std::unique_lock<std::mutex>(device_)); }

json Runner::send(json request) {
  std::lock_guard<std::mutex> g(io_);
  const std::int64_t id = next_id_++;
  request["protocol_version"] = kProtocolVersion;
  request["id"] = id;
  request["device"] = options_.device;
  request["seed"] = options_.seed;
  json reply = transport_->roundtrip(request);
  if (!reply.is_object()) throw InfrastructureError("runner reply is not an object");
  if (reply.value("protocol_version", -1) != kProtocolVersion)
    throw InfrastructureError("runner reply has protocol_version " + reply.value("protocol_version", json()).dump() +
                              ", expected " + std::to_string(kProtocolVersion));
  if (!reply.contains("id") || reply["id"] != id)
    throw InfrastructureError("runner reply id " + reply.value("id", json()).dump() + " does not match request id " +
                              std::to_string(id));
  if (!reply.value("ok", false)) {
    json err = reply.value("error", json::object());
    std::string cls = err.is_object() ? err.value("class", "RunnerError") : "RunnerError";
    std::string msg = err.is_object() ? err.value("message", "") : err.dump();
    if (cls == "ScriptedMissError") throw ScriptedMissError(msg);
    if (cls == "KernelError") throw KernelExecutionError(msg);
    throw InfrastructureError(cls + ": " + msg);
  }
  return reply;
}

void Runner::run_ci(const KernelModule& module, const ProblemSpec& spec, const std::string& variant) {
  send({{"kind", "run_ci"}, {"module", module_payload(module)}, {"spec_yaml", spec.source_yaml}, {"variant", variant}});
}

BenchReply Runner::bench(const DeviceLease& lease, const KernelModule& module, const ProblemSpec& spec,
                         const std::string& variant, std::optional<int> iterations) {
  if (!lease.held()) throw InfrastructureError("bench requires the device lease");
  int n = iterations.value_or(options_.iterations);
  json reply = send({{"kind", "bench"},
                     {"module", module_payload(module)},
                     {"spec_yaml", spec.source_yaml},
                     {"variant", variant},
                     {"iterations", n},
                     {"warmup", options_.warmup}});
  BenchReply r;
  r.times_us = times_from(reply, "times_us");
  if (static_cast<int>(r.times_us.size()) != n)
    throw InfrastructureError("bench reply carries " + std::to_string(r.times_us.size()) + " samples, requested " +
                              std::to_string(n));
  if (reply.contains("flop") && reply["flop"].is_number()) r.flop = reply["flop"].get<double>();
  if (reply.contains("bytes") && reply["bytes"].is_number()) r.bytes = reply["bytes"].get<double>();
  r.estimated = reply.value("estimated", false);
  return r;
}

CompareReply Runner::compare(const DeviceLease& lease, const KernelModule& reference, const KernelModule& candidate,
                             const ProblemSpec& spec, const std::string& variant, double rtol, double atol,
                             std::optional<int> iterations) {
  if (!lease.held()) throw InfrastructureError("compare requires the device lease");
  int n = iterations.value_or(options_.iterations);
  json reply = send({{"kind", "compare"},
                     {"reference", module_payload(reference)},
                     {"candidate", module_payload(candidate)},
                     {"spec_yaml", spec.source_yaml},
                     {"variant", variant},
                     {"rtol", rtol},
                     {"atol", atol},
                     {"iterations", n},
                     {"warmup", n == 0 ? 0 : options_.warmup}});
  CompareReply r;
  r.verdict = reply.value("verdict", "");
  if (r.verdict.empty()) throw InfrastructureError("compare reply has no verdict");
  r.correct = reply.value("correct", false);
  if (r.correct != (r.verdict == "ok"))
    throw InfrastructureError("compare reply is inconsistent: correct=" + std::string(r.correct ? "true" : "false") +
                              " with verdict '" + r.verdict + "'");
  r.message = reply.value("message", "");
  r.diff = diff_from_json(reply.value("diff", json::object()));
  r.reference_times_us = times_from(reply, "reference_times_us");
  r.candidate_times_us = times_from(reply, "candidate_times_us");
  return r;
}

ComparisonResult compare_kernels(Runner& runner, const KernelModule& original, const KernelModule& optimized,
                                 const ProblemSpec& spec, const std::string& variant, double rtol, double atol) {
  DeviceLease lease = runner.acquire();
  ComparisonResult out;
  out.raw = runner.compare(lease, original, optimized, spec, variant, rtol, atol);
  out.correct = out.raw.correct;
  if (out.raw.reference_times_us.size() >= 3 && out.raw.candidate_times_us.size() >= 3) {
    out.original_us = trim_mean(out.raw.reference_times_us);
    out.optimized_us = trim_mean(out.raw.candidate_times_us);
    if (out.original_us > 0 && out.optimized_us > 0) out.speedup = out.original_us / out.optimized_us;
  }
  std::ostringstream fb;
  if (!out.correct) {
    fb << "INCORRECT (" << out.raw.verdict << "): " << out.raw.diff.to_text();
    if (!out.raw.message.empty()) fb << "; " << out.raw.message;
  } else {
    fb << "correct; original " << fmt(out.original_us) << " us, optimized " << fmt(out.optimized_us)
       << " us, speedup " << fmt(out.speedup) << "x";
  }
  out.feedback = fb.str();
  return out;
}

}  // namespace kopt
