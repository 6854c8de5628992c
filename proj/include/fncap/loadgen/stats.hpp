#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fncap/common.hpp"

namespace fncap::loadgen {

/// Nearest-rank percentile: the value at 1-based rank ceil(p * n) of the
/// sorted samples. `p` in (0, 1].
inline double nearest_rank(std::vector<double> samples, double p) {
  if (samples.empty()) throw Error("percentile of an empty window");
  if (!(p > 0 && p <= 1)) throw ValidationError("percentile must lie in (0, 1]");
  const auto n = samples.size();
  // The epsilon absorbs representation error in p * n (0.95 * 100 etc).
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(rank - 1), samples.end());
  return samples[rank - 1];
}

inline double mean(const std::vector<double>& samples) {
  if (samples.empty()) throw Error("mean of an empty window");
  double sum = 0;
  for (double v : samples) sum += v;
  return sum / static_cast<double>(samples.size());
}

}  // namespace fncap::loadgen
