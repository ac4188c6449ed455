// SPDX-License-Identifier: Apache-2.0
//
// Client side of the execution runner. Requests and replies are single-line
// JSON objects tagged with protocol_version 1 and a request id that the reply
// echoes. The field-by-field schema lives in docs/protocol.md.
#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kopt/kernel_module.hpp"
#include "kopt/spec.hpp"

namespace kopt {

inline constexpr int kProtocolVersion = 1;

// Carries one request line to the runner and returns the reply line parsed.
// Throws InfrastructureError when the channel itself fails.
class RunnerTransport {
 public:
  virtual ~RunnerTransport() = default;
  virtual nlohmann::json roundtrip(const nlohmann::json& request) = 0;
};

struct DiffSummary {
  double max_abs_diff = 0.0;
  double mean_diff = 0.0;
  double max_rel_diff = 0.0;
  std::int64_t count_exceeding = 0;
  double pct_exceeding = 0.0;
  std::int64_t total = 0;

  std::string to_text() const;
};

// ok | mismatch | nan | inf | shape_mismatch
struct CompareReply {
  bool correct = false;
  std::string verdict;
  std::string message;
  DiffSummary diff;
  std::vector<double> reference_times_us;
  std::vector<double> candidate_times_us;
};

struct BenchReply {
  std::vector<double> times_us;
  std::optional<double> flop;
  std::optional<double> bytes;
  bool estimated = false;
};

struct RunnerOptions {
  std::string device = "xpu";
  std::uint64_t seed = 0;
  int warmup = 200;
  int iterations = 100;
};

// Holding a lease is the right to run timed or comparing work on the device.
class DeviceLease {
 public:
  explicit DeviceLease(std::unique_lock<std::mutex> lock) : lock_(std::move(lock)) {}
  bool held() const noexcept { return lock_.owns_lock(); }

 private:
  std::unique_lock<std::mutex> lock_;
};

class Runner {
 public:
  Runner(std::shared_ptr<RunnerTransport> transport, RunnerOptions options = {});

  DeviceLease acquire();

  void run_ci(const KernelModule& module, const ProblemSpec& spec, const std::string& variant);
  BenchReply bench(const DeviceLease& lease, const KernelModule& module, const ProblemSpec& spec,
                   const std::string& variant, std::optional<int> iterations = std::nullopt);
  CompareReply compare(const DeviceLease& lease, const KernelModule& reference, const KernelModule& candidate,
                       const ProblemSpec& spec, const std::string& variant, double rtol, double atol,
                       std::optional<int> iterations = std::nullopt);

  const RunnerOptions& options() const noexcept { return options_; }

 private:
  nlohmann::json send(nlohmann::json request);

  std::shared_ptr<RunnerTransport> transport_;
  RunnerOptions options_;
  std::mutex device_;
  std::mutex io_;
  std::int64_t next_id_ = 1;
};

struct ComparisonResult {
  double original_us = 0.0;
  double optimized_us = 0.0;
  double speedup = 0.0;
  bool correct = false;
  std::string feedback;
  CompareReply raw;
};

// One timed compare of two modules through the runner. Speedup is
// original/optimized over trimmed means.
ComparisonResult compare_kernels(Runner& runner, const KernelModule& original, const KernelModule& optimized,
                                 const ProblemSpec& spec, const std::string& variant, double rtol, double atol);

nlohmann::json module_payload(const KernelModule& m);

// ---------------------------------------------------------------------------
// Deterministic stand-in for the device runner, keyed by module fingerprint.

struct MockScenario {
  double mean_us = 1000.0;
  double jitter_us = 0.0;  // samples alternate mean+j, mean-j
  std::string verdict = "ok";
  std::string message;
  DiffSummary diff;
  std::optional<double> flop;
  std::optional<double> bytes;
  bool estimated = false;
  bool kernel_error = false;  // reply with a KernelError for every request
};

class MockRunner : public RunnerTransport {
 public:
  // `variant` may be "*" to match any variant.
  void script(const std::string& fingerprint, const std::string& variant, MockScenario s);
  void script_source(const std::string& source, const std::string& variant, MockScenario s);

  // Modules compared against themselves: correct, zero diffs, times drawn from
  // the module's scenario or, if unscripted, from this fallback.
  void set_echo(std::optional<MockScenario> fallback) { echo_ = std::move(fallback); }

  nlohmann::json roundtrip(const nlohmann::json& request) override;

  int count(const std::string& kind) const;
  void reset_counts();

  // Loads a YAML scenario table; `source_file:` paths resolve against the
  // table's directory.
  static std::shared_ptr<MockRunner> from_yaml_file(const std::string& path);

 private:
  const MockScenario* find(const std::string& fingerprint, const std::string& variant) const;
  const MockScenario& lookup(const std::string& fingerprint, const std::string& variant) const;

  std::map<std::pair<std::string, std::string>, MockScenario> table_;
  std::optional<MockScenario> echo_;
  std::map<std::string, int> counts_;
  mutable std::mutex mu_;
};

std::vector<double> scripted_samples(const MockScenario& s, int n);

// ---------------------------------------------------------------------------
// A child process speaking the protocol over stdin/stdout.

class SubprocessTransport : public RunnerTransport {
 public:
  explicit SubprocessTransport(std::vector<std::string> argv,
                               std::chrono::milliseconds reply_timeout = std::chrono::minutes(10));
  ~SubprocessTransport() override;
  SubprocessTransport(const SubprocessTransport&) = delete;
  SubprocessTransport& operator=(const SubprocessTransport&) = delete;

  nlohmann::json roundtrip(const nlohmann::json& request) override;
  int pid() const noexcept { return pid_; }

 private:
  void start();
  void stop();
  std::string read_line();

  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

}  // namespace kopt
