// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace kopt {

struct Throughput {
  double tflops = 0.0;
  double bandwidth_gbps = 0.0;
};

// tflops = flop / (t_us * 1e6), GB/s = bytes / (t_us * 1e3).
// Throws MetricError when time_us is not positive.
Throughput derive_metrics(double flop_count, double bytes, double time_us);

// Mean after dropping one minimum and one maximum sample. Needs >= 3 samples.
double trim_mean(const std::vector<double>& times_us);

}  // namespace kopt
