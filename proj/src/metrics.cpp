// SPDX-License-Identifier: Apache-2.0
#include "kopt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kopt/error.hpp"

namespace kopt {

Throughput derive_metrics(double flop_count, double bytes, double time_us) {
  if (!(time_us > 0.0) || !std::isfinite(time_us))
    throw MetricError("time must be positive, got " + std::to_string(time_us) + " us");
  return {flop_count / (time_us * 1e6), bytes / (time_us * 1e3)};
}

double trim_mean(const std::vector<double>& times_us) {
  if (times_us.size() < 3)
    throw MetricError("trim_mean needs at least 3 samples, got " + std::to_string(times_us.size()));
  std::vector<double> sorted(times_us);
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (std::size_t i = 1; i + 1 < sorted.size(); ++i) sum += sorted[i];
  return sum / static_cast<double>(sorted.size() - 2);
}

}  // namespace kopt
