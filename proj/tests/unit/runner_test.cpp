// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <atomic>

#include "kopt/error.hpp"
#include "kopt/metrics.hpp"
#include "kopt/runner.hpp"

using namespace kopt;
using nlohmann::json;

namespace {

std::string slurp(const std::string& rel) {
  std::ifstream in(std::string(KOPT_SOURCE_DIR) + "/" + rel, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fixture {
  ProblemSpec spec = load_spec_file(std::string(KOPT_SOURCE_DIR) + "/tests/fixtures/specs/matmul_relu.yaml");
  KernelModule orig = KernelModule::from_source(slurp("tests/fixtures/kernels/matmul_relu.py"));
  KernelModule opt = KernelModule::from_source(slurp("tests/fixtures/kernels/matmul_relu.py") + "\n# tuned\n");
};

// Records every request and forwards to an inner transport.
class Recorder : public RunnerTransport {
 public:
  explicit Recorder(std::shared_ptr<RunnerTransport> inner) : inner_(std::move(inner)) {}
  json roundtrip(const json& r) override {
    requests.push_back(r);
    json reply = inner_->roundtrip(r);
    replies.push_back(reply);
    return reply;
  }
  std::vector<json> requests, replies;

 private:
  std::shared_ptr<RunnerTransport> inner_;
};

class Canned : public RunnerTransport {
 public:
  explicit Canned(json reply) : reply_(std::move(reply)) {}
  json roundtrip(const json&) override { return reply_; }

 private:
  json reply_;
};

}  // namespace

TEST(MockRunner, CompareKernelsSpeedup) {
  Fixture f;
  auto mock = std::make_shared<MockRunner>();
  mock->script(f.orig.fingerprint(), "ci", {.mean_us = 1000, .jitter_us = 7});
  mock->script(f.opt.fingerprint(), "ci", {.mean_us = 500, .jitter_us = 3});
  Runner runner(mock);
  ComparisonResult r = compare_kernels(runner, f.orig, f.opt, f.spec, "ci", 1e-2, 1e-5);
  EXPECT_TRUE(r.correct);
  EXPECT_EQ(r.original_us, 1000.0);
  EXPECT_EQ(r.optimized_us, 500.0);
  EXPECT_EQ(r.speedup, 2.0);
  EXPECT_NEAR(r.speedup * r.optimized_us, r.original_us, 1e-9);
  EXPECT_NE(r.feedback.find("speedup 2x"), std::string::npos) << r.feedback;
}

TEST(MockRunner, IncorrectCarriesDiffSummary) {
  Fixture f;
  auto mock = std::make_shared<MockRunner>();
  mock->script(f.orig.fingerprint(), "*", {});
  MockScenario bad;
  bad.verdict = "mismatch";
  bad.diff = {.max_abs_diff = 0.25, .mean_diff = 0.01, .max_rel_diff = 0.5, .count_exceeding = 30, .pct_exceeding = 3.0,
              .total = 1000};
  mock->script(f.opt.fingerprint(), "*", bad);
  Runner runner(mock);
  ComparisonResult r = compare_kernels(runner, f.orig, f.opt, f.spec, "ci", 1e-2, 1e-5);
  EXPECT_FALSE(r.correct);
  EXPECT_NE(r.feedback.find("max_abs_diff=0.25"), std::string::npos) << r.feedback;
  EXPECT_NE(r.feedback.find("30/1000 (3%)"), std::string::npos) << r.feedback;
}

TEST(MockRunner, EchoModeSelfComparison) {
  Fixture f;
  auto mock = std::make_shared<MockRunner>();
  mock->set_echo(MockScenario{.mean_us = 800, .jitter_us = 4});
  Runner runner(mock);
  ComparisonResult r = compare_kernels(runner, f.orig, f.orig, f.spec, "ci", 1e-2, 1e-5);
  EXPECT_TRUE(r.correct);
  EXPECT_EQ(r.speedup, 1.0);
  EXPECT_EQ(r.raw.diff.max_abs_diff, 0.0);
}

TEST(MockRunner, EmptyScriptMissesEverything) {
  Fixture f;
  auto mock = std::make_shared<MockRunner>();
  Runner runner(mock);
  auto lease = runner.acquire();
  EXPECT_THROW(runner.run_ci(f.orig, f.spec, "ci"), ScriptedMissError);
  EXPECT_THROW(runner.bench(lease, f.orig, f.spec, "ci"), ScriptedMissError);
  EXPECT_THROW(runner.compare(lease, f.orig, f.opt, f.spec, "ci", 1e-2, 1e-5), ScriptedMissError);
  EXPECT_EQ(mock->count("bench"), 1);
  EXPECT_EQ(mock->count("compare"), 1);
}

TEST(MockRunner, FingerprintIsWhitespaceSensitive) {
  Fixture f;
  auto mock = std::make_shared<MockRunner>();
  mock->script_source(f.orig.source(), "ci", {});
  Runner runner(mock);
  EXPECT_NO_THROW(runner.run_ci(f.orig, f.spec, "ci"));
  auto spaced = KernelModule::from_source(f.orig.source() + " ");
  EXPECT_THROW(runner.run_ci(spaced, f.spec, "ci"), ScriptedMissError);
}

TEST(MockRunner, KernelErrorIsNotInfrastructure) {
  Fixture f;
  auto mock = std::make_shared<MockRunner>();
  mock->script_source(f.orig.source(), "*", MockScenario{.message = "CompilationError: bad", .kernel_error = true});
  Runner runner(mock);
  try {
    runner.run_ci(f.orig, f.spec, "ci");
    FAIL();
  } catch (const InfrastructureError&) {
    FAIL() << "kernel failure reported as infrastructure";
  } catch (const KernelExecutionError& e) {
    EXPECT_NE(std::string(e.what()).find("CompilationError"), std::string::npos);
  }
}

TEST(MockRunner, SamplesKeepTrimmedMeanExact) {
  for (int n : {3, 4, 5, 100, 101}) {
    auto s = scripted_samples({.mean_us = 1234.5, .jitter_us = 17.25}, n);
    ASSERT_EQ(static_cast<int>(s.size()), n);
    EXPECT_EQ(trim_mean(s), 1234.5) << n;
  }
}

TEST(MockRunner, YamlScenarioFile) {
  auto dir = std::filesystem::temp_directory_path() / ("kopt_mock_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  Fixture f;
  std::ofstream(dir / "k.py") << f.orig.source();
  std::ofstream(dir / "mock.yaml") << "scenarios:\n"
                                      "  - source_file: k.py\n"
                                      "    variant: ci\n"
                                      "    mean_us: 250\n"
                                      "    verdict: nan\n"
                                      "    message: NaN in output\n";
  auto mock = MockRunner::from_yaml_file((dir / "mock.yaml").string());
  Runner runner(mock);
  auto lease = runner.acquire();
  auto b = runner.bench(lease, f.orig, f.spec, "ci", 10);
  EXPECT_EQ(trim_mean(b.times_us), 250.0);
  auto c = runner.compare(lease, f.orig, f.orig, f.spec, "ci", 1e-2, 1e-5, 0);
  EXPECT_EQ(c.verdict, "nan");
  EXPECT_FALSE(c.correct);
  std::filesystem::remove_all(dir);
}

TEST(Runner, RequestsCarryProtocolFields) {
  Fixture f;
  auto mock = std::make_shared<MockRunner>();
  mock->script(f.orig.fingerprint(), "*", {});
  auto rec = std::make_shared<Recorder>(mock);
  Runner runner(rec, {.device = "cpu", .seed = 42, .warmup = 5, .iterations = 7});
  runner.run_ci(f.orig, f.spec, "ci");
  {
    auto lease = runner.acquire();
    runner.bench(lease, f.orig, f.spec, "ci");
  }
  ASSERT_EQ(rec->requests.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const json& r = rec->requests[i];
    EXPECT_EQ(r["protocol_version"], 1);
    EXPECT_EQ(r["id"], rec->replies[i]["id"]);
    EXPECT_EQ(r["device"], "cpu");
    EXPECT_EQ(r["seed"], 42);
    EXPECT_EQ(r["spec_yaml"], f.spec.source_yaml);
    EXPECT_EQ(r["module"]["fingerprint"], f.orig.fingerprint());
  }
  EXPECT_NE(rec->requests[0]["id"], rec->requests[1]["id"]);
  EXPECT_EQ(rec->requests[1]["iterations"], 7);
  EXPECT_EQ(rec->requests[1]["warmup"], 5);
  EXPECT_EQ(rec->replies[1]["times_us"].size(), 7u);
}

TEST(Runner, RejectsMalformedReplies) {
  Fixture f;
  auto lease_run = [&](json reply) {
    Runner runner(std::make_shared<Canned>(std::move(reply)));
    runner.run_ci(f.orig, f.spec, "ci");
  };
  EXPECT_THROW(lease_run({{"protocol_version", 2}, {"id", 1}, {"ok", true}}), InfrastructureError);
  EXPECT_THROW(lease_run({{"protocol_version", 1}, {"id", 99}, {"ok", true}}), InfrastructureError);
  EXPECT_THROW(lease_run(json::array()), InfrastructureError);
  EXPECT_NO_THROW(lease_run({{"protocol_version", 1}, {"id", 1}, {"ok", true}}));
  try {
    lease_run({{"protocol_version", 1}, {"id", 1}, {"ok", false}, {"error", {{"class", "DeviceLost"}, {"message", "gone"}}}});
    FAIL();
  } catch (const InfrastructureError& e) {
    EXPECT_NE(std::string(e.what()).find("DeviceLost: gone"), std::string::npos);
  }
  Runner short_bench(std::make_shared<Canned>(json{{"protocol_version", 1}, {"id", 1}, {"ok", true}, {"times_us", {1, 2}}}));
  auto lease = short_bench.acquire();
  EXPECT_THROW(short_bench.bench(lease, f.orig, f.spec, "ci", 5), InfrastructureError);
}

TEST(Runner, DeviceLeaseSerializes) {
  auto mock = std::make_shared<MockRunner>();
  Runner runner(mock);
  auto lease = runner.acquire();
  EXPECT_TRUE(lease.held());
  std::atomic<bool> got{false};
  std::thread t([&] {
    auto l2 = runner.acquire();
    got = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_FALSE(got.load());
  { auto drop = std::move(lease); }
  t.join();
  EXPECT_TRUE(got.load());
}

TEST(Subprocess, SpeaksProtocolWithChild) {
  Fixture f;
  auto t = std::make_shared<SubprocessTransport>(std::vector<std::string>{FAKE_HARNESS});
  Runner runner(t, {.iterations = 9});
  runner.run_ci(f.orig, f.spec, "ci");
  auto lease = runner.acquire();
  auto b = runner.bench(lease, f.orig, f.spec, "ci");
  EXPECT_EQ(b.times_us.size(), 9u);
  EXPECT_TRUE(b.estimated);
  auto same = runner.compare(lease, f.orig, f.orig, f.spec, "ci", 1e-2, 1e-5);
  EXPECT_TRUE(same.correct);
  auto diff = runner.compare(lease, f.orig, f.opt, f.spec, "ci", 1e-2, 1e-5, 0);
  EXPECT_FALSE(diff.correct);
  EXPECT_EQ(diff.diff.count_exceeding, 3);
  EXPECT_TRUE(diff.candidate_times_us.empty());
}

TEST(Subprocess, UnknownKindIsAnErrorReplyAndSessionContinues) {
  Fixture f;
  SubprocessTransport t({FAKE_HARNESS});
  json reply = t.roundtrip({{"protocol_version", 1}, {"id", 5}, {"kind", "explode"}});
  EXPECT_EQ(reply["ok"], false);
  EXPECT_EQ(reply["id"], 5);
  EXPECT_NE(reply["error"]["message"].get<std::string>().find("explode"), std::string::npos);
  json again = t.roundtrip({{"protocol_version", 1}, {"id", 6}, {"kind", "run_ci"}});
  EXPECT_EQ(again["ok"], true);
}

TEST(Subprocess, ChildFailuresAreInfrastructureErrors) {
  Fixture f;
  auto crash = KernelModule::from_source(f.orig.source() + "#CRASH\n");
  auto badid = KernelModule::from_source(f.orig.source() + "#BADID\n");
  auto slow = KernelModule::from_source(f.orig.source() + "#SLOW\n");
  {
    Runner r(std::make_shared<SubprocessTransport>(std::vector<std::string>{FAKE_HARNESS}));
    EXPECT_THROW(r.run_ci(crash, f.spec, "ci"), InfrastructureError);
  }
  {
    Runner r(std::make_shared<SubprocessTransport>(std::vector<std::string>{FAKE_HARNESS}));
    EXPECT_THROW(r.run_ci(badid, f.spec, "ci"), InfrastructureError);
  }
  {
    Runner r(std::make_shared<SubprocessTransport>(std::vector<std::string>{FAKE_HARNESS},
                                                   std::chrono::milliseconds(200)));
    EXPECT_THROW(r.run_ci(slow, f.spec, "ci"), InfrastructureError);
  }
  {
    Runner r(std::make_shared<SubprocessTransport>(std::vector<std::string>{"/nonexistent/harness"}));
    EXPECT_THROW(r.run_ci(f.orig, f.spec, "ci"), InfrastructureError);
  }
}
