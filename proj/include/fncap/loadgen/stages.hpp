#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "fncap/common.hpp"

namespace fncap::loadgen {

struct LoadStage {
  double duration_s = 0.0;
  int target_vus = 0;
};

struct LoadOptions {
  int start_vus = 0;
  // Pause before the next iteration when a response took no time at all
  // (e.g. unknown function) or the connection failed.
  double empty_response_backoff_ms = 10.0;
};

/// Piecewise-linear VU schedule. Each stage interpolates from the previous
/// stage's target (or `start_vus`) to its own target; VU i is active while the
/// interpolated count exceeds i.
class VuSchedule {
 public:
  explicit VuSchedule(std::vector<LoadStage> stages, int start_vus = 0)
      : stages_(std::move(stages)), start_vus_(start_vus) {
    if (stages_.empty()) throw ValidationError("load needs at least one stage");
    for (const auto& s : stages_) {
      if (!(s.duration_s > 0)) throw ValidationError("stage duration must be > 0");
      if (s.target_vus < 0) throw ValidationError("stage target_vus must be >= 0");
    }
  }

  double total_ms() const {
    double sum = 0;
    for (const auto& s : stages_) sum += s.duration_s * 1000.0;
    return sum;
  }

  int max_vus() const {
    int m = start_vus_;
    for (const auto& s : stages_) m = std::max(m, s.target_vus);
    return m;
  }

  /// Interpolated VU count at `t_ms` after the start; 0 past the end.
  double vus_at(double t_ms) const {
    double begin = 0;
    double from = start_vus_;
    for (const auto& s : stages_) {
      const double len = s.duration_s * 1000.0;
      if (t_ms < begin + len) return from + (s.target_vus - from) * (t_ms - begin) / len;
      begin += len;
      from = s.target_vus;
    }
    return 0.0;
  }

  int active_at(double t_ms) const { return static_cast<int>(std::ceil(vus_at(t_ms) - 1e-12)); }

  /// Earliest time >= from_ms at which VU `index` is active, if any.
  std::optional<double> activation(int index, double from_ms) const {
    if (vus_at(from_ms) > index && from_ms < total_ms()) return from_ms;
    double begin = 0;
    double from = start_vus_;
    for (const auto& s : stages_) {
      const double len = s.duration_s * 1000.0;
      const double end = begin + len;
      if (end > from_ms && s.target_vus > index) {
        // Crossing of the line from -> target through `index`.
        const double cross = from >= s.target_vus ? begin : begin + (index - from) * len / (s.target_vus - from);
        double t = std::max(std::max(cross, begin), from_ms);
        t = std::nextafter(t, std::numeric_limits<double>::infinity());
        while (t < end && !(vus_at(t) > index)) t = std::nextafter(t + 1e-9, std::numeric_limits<double>::infinity());
        if (t < end) return t;
      }
      begin = end;
      from = s.target_vus;
    }
    return std::nullopt;
  }

  const std::vector<LoadStage>& stages() const { return stages_; }
  int start_vus() const { return start_vus_; }

 private:
  std::vector<LoadStage> stages_;
  int start_vus_;
};

/// Ramp to `vus` over `ramp_fraction` of the duration, then hold.
inline std::vector<LoadStage> ramp_and_hold(double duration_s, int vus, double ramp_fraction = 0.1) {
  return {{duration_s * ramp_fraction, vus}, {duration_s * (1 - ramp_fraction), vus}};
}

}  // namespace fncap::loadgen
