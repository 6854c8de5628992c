#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "fncap/loadgen/request_log.hpp"
#include "fncap/loadgen/stages.hpp"
#include "fncap/sim/platform.hpp"

namespace fncap::loadgen {

/// Closed-loop virtual users against a function on the simulated platform.
/// Runs in virtual time starting at `platform.now()`; log timestamps are
/// relative to that start. Returns once every VU has stopped and its last
/// request completed.
inline RequestLog run_load(sim::Platform& platform, sim::FunctionHandle target,
                           const std::vector<LoadStage>& stages, const std::string& payload,
                           const LoadOptions& options = {}) {
  const VuSchedule schedule(stages, options.start_vus);
  RequestLog log;
  const double origin = platform.now();
  const double end = schedule.total_ms();
  const int vus = schedule.max_vus();

  struct State {
    int running = 0;
    int active = 0;
  };
  auto state = std::make_shared<State>();
  auto note_active = [&log, state](double t, int delta) {
    state->active += delta;
    log.vu_trace().emplace_back(t, state->active);
  };

  // iterate(i, t): VU i decides at relative time t whether to send or sleep.
  std::function<void(int, double)> iterate = [&](int vu, double t) {
    if (t >= end) {
      --state->running;
      return;
    }
    if (!(schedule.vus_at(t) > vu)) {
      note_active(t, -1);
      const auto wake = schedule.activation(vu, t);
      if (!wake || *wake >= end) {
        --state->running;
        return;
      }
      platform.schedule(std::max(origin + *wake, platform.now()), [&, vu, w = *wake] {
        note_active(w, +1);
        iterate(vu, w);
      });
      return;
    }
    // origin + t can round below the clock after a long run.
    platform.submit(target, payload, std::max(origin + t, platform.now()), [&, vu, t](const sim::InvocationOutcome& o) {
      log.append({t, o.status, o.execution_ms, o.total_ms, o.cold, o.instance_id, vu});
      const double pause = o.total_ms > 0 ? 0.0 : options.empty_response_backoff_ms;
      iterate(vu, t + o.total_ms + pause);
    });
  };

  for (int vu = 0; vu < vus; ++vu) {
    const auto first = schedule.activation(vu, 0.0);
    if (!first || *first >= end) continue;
    ++state->running;
    platform.schedule(origin + *first, [&, vu, w = *first] {
      note_active(w, +1);
      iterate(vu, w);
    });
  }
  while (state->running > 0 && platform.step()) {
  }
  auto& trace = log.vu_trace();
  std::stable_sort(trace.begin(), trace.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return log;
}

}  // namespace fncap::loadgen
