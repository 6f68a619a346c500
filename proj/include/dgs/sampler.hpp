#pragma once

#include <optional>

#include "dgs/common.hpp"

namespace dgs {

enum class SweepDirection { Ascending, Descending };

// Sliding metric window: at iteration k the window is
// [B_lower + k*T, B_upper + k*T]. Descending sweeps apply the window to the
// mirrored metric 1 - m.
struct IncrementalSamplerConfig {
  std::string metric;
  double lower = 0.0;        // B_lower
  double upper = 0.15;       // B_upper
  double step = 0.0;         // T, per iteration
  long cadence = 5;          // K: applied when k % K == 0
  SweepDirection direction = SweepDirection::Ascending;

  void validate() const {
    require(lower <= upper, "IncrementalSamplerConfig: B_lower > B_upper");
    require(step >= 0.0, "IncrementalSamplerConfig: negative step");
    require(cadence >= 1, "IncrementalSamplerConfig: cadence must be >= 1");
  }

  std::pair<double, double> window_at(long k) const {
    return {lower + double(k) * step, upper + double(k) * step};
  }

  bool member(double metric_value, long k) const {
    const auto [lo, hi] = window_at(k);
    const double m = direction == SweepDirection::Ascending ? metric_value : 1.0 - metric_value;
    return m >= lo && m <= hi;
  }
};

// Uniformly random frame whose metric lies in the window at iteration k;
// nullopt when the window is empty (the caller falls back to uniform sampling).
inline std::optional<size_t> incremental_sample(const std::vector<double>& metrics, long k,
                                                const IncrementalSamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<size_t> eligible;
  for (size_t j = 0; j < metrics.size(); ++j)
    if (cfg.member(metrics[j], k)) eligible.push_back(j);
  if (eligible.empty()) return std::nullopt;
  std::uniform_int_distribution<size_t> pick(0, eligible.size() - 1);
  return eligible[pick(rng)];
}

}  // namespace dgs
