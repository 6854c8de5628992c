#pragma once

#include <json.hpp>

#include <algorithm>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fncap/format.hpp"
#include "fncap/loadgen/request_log.hpp"
#include "fncap/loadgen/stats.hpp"
#include "fncap/sim/platform.hpp"

namespace fncap::metrics {

using loadgen::Window;

/// One sampling window of one function.
struct MetricsSample {
  std::string function;
  double window_start_ms = 0.0;
  int concurrent_instances = 0;  // max over the window
  std::size_t invocations = 0;   // ok requests that arrived in the window
  std::optional<double> exec_mean_ms;
  std::optional<double> exec_p50_ms;
  std::optional<double> exec_p95_ms;
  double memory_usage_mib = 0.0;
  int allocated_memory_mib = 0;
  int function_concurrency = 0;

  bool operator==(const MetricsSample&) const = default;
};

struct SamplingOptions {
  std::uint64_t seed = 1;
  double memory_noise = 0.02;  // relative sigma of the synthetic memory_usage
};

inline constexpr const char* kMemoryUsageModel =
    "memory_usage = allocated_memory * profile.memory_utilization * (1 + N(0, memory_noise)), "
    "clamped to [0, allocated_memory]; 0 for windows without invocations";

/// Highest instance count of the trace inside [start, end), including the
/// count carried into the window.
inline int max_instances(const std::vector<std::pair<double, int>>& trace, const Window& w) {
  int best = 0;
  for (const auto& [t, n] : trace) {
    if (t >= w.end_ms) break;
    best = t <= w.start_ms ? n : std::max(best, n);
  }
  return best;
}

inline double synthetic_memory_usage(const FunctionProfile& profile, int allocated_mib, double window_start_ms,
                                     const SamplingOptions& options) {
  std::uint64_t h = fnv1a64(profile.name, options.seed ^ 0x9e3779b97f4a7c15ULL);
  h = fnv1a64(format_double(window_start_ms), h);
  std::mt19937_64 rng(h);
  std::normal_distribution<double> normal(0.0, options.memory_noise);
  const double usage = allocated_mib * profile.memory_utilization * (1.0 + normal(rng));
  return std::clamp(usage, 0.0, static_cast<double>(allocated_mib));
}

/// Aggregates the platform's records of requests arriving in the window.
/// The window must already be closed.
inline MetricsSample sample(const sim::Platform& platform, sim::FunctionHandle h, const Window& window,
                            const SamplingOptions& options = {}) {
  if (!(window.end_ms > window.start_ms)) throw ValidationError("sampling window must have positive length");
  if (window.end_ms > platform.now())
    throw Error("window [" + format_double(window.start_ms) + ", " + format_double(window.end_ms) +
                ") is still open at " + format_double(platform.now()));
  const auto& profile = platform.profile(h);
  const auto& config = platform.config(h);
  MetricsSample s;
  s.function = profile.name;
  s.window_start_ms = window.start_ms;
  s.allocated_memory_mib = config.memory_mib;
  s.function_concurrency = config.concurrency;
  s.concurrent_instances = max_instances(platform.instance_trace(h), window);

  std::vector<double> exec;
  for (const auto& r : platform.history(h)) {
    if (!window.contains(r.arrival_ms) || r.status != sim::Status::ok || !r.execution_ms) continue;
    exec.push_back(*r.execution_ms);
  }
  s.invocations = exec.size();
  if (!exec.empty()) {
    s.exec_mean_ms = loadgen::mean(exec);
    s.exec_p50_ms = loadgen::nearest_rank(exec, 0.5);
    s.exec_p95_ms = loadgen::nearest_rank(exec, 0.95);
    s.memory_usage_mib = synthetic_memory_usage(profile, config.memory_mib, window.start_ms, options);
  }
  return s;
}

/// Consecutive windows of `interval_ms` tiling [start_ms, start_ms + count * interval_ms).
inline std::vector<MetricsSample> sample_series(const sim::Platform& platform, sim::FunctionHandle h,
                                                double start_ms, double interval_ms, std::size_t count,
                                                const SamplingOptions& options = {}) {
  if (!(interval_ms > 0)) throw ValidationError("sampling interval must be > 0");
  std::vector<MetricsSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double begin = start_ms + static_cast<double>(i) * interval_ms;
    out.push_back(sample(platform, h, {begin, begin + interval_ms}, options));
  }
  return out;
}

inline constexpr const char* kCsvHeader =
    "fn,window_start_ms,conc_instances,invocations,exec_mean_ms,exec_p50_ms,exec_p95_ms,mem_usage_mib,alloc_mib,"
    "fn_concurrency";

inline void write_csv(std::ostream& out, const std::vector<MetricsSample>& series) {
  out << kCsvHeader << '\n';
  for (const auto& s : series) {
    if (s.function.find_first_of(",\n\"") != std::string::npos)
      throw ValidationError("function name '" + s.function + "' cannot be written to CSV");
    out << s.function << ',' << format_double(s.window_start_ms) << ',' << s.concurrent_instances << ','
        << s.invocations << ',' << format_optional(s.exec_mean_ms) << ',' << format_optional(s.exec_p50_ms) << ','
        << format_optional(s.exec_p95_ms) << ',' << format_double(s.memory_usage_mib) << ','
        << s.allocated_memory_mib << ',' << s.function_concurrency << '\n';
  }
  if (!out) throw Error("failed writing metrics CSV");
}

inline std::string to_csv(const std::vector<MetricsSample>& series) {
  std::ostringstream os;
  write_csv(os, series);
  return os.str();
}

inline std::vector<MetricsSample> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("metrics CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw ParseError("metrics CSV header mismatch", 1, 1);
  std::vector<MetricsSample> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 10) throw ParseError("metrics row has " + std::to_string(cols.size()) + " columns", row, 1);
    try {
      MetricsSample s;
      s.function = std::string(cols[0]);
      s.window_start_ms = parse_double(cols[1]);
      s.concurrent_instances = parse_integer<int>(cols[2]);
      s.invocations = parse_integer<std::size_t>(cols[3]);
      s.exec_mean_ms = parse_optional(cols[4]);
      s.exec_p50_ms = parse_optional(cols[5]);
      s.exec_p95_ms = parse_optional(cols[6]);
      s.memory_usage_mib = parse_double(cols[7]);
      s.allocated_memory_mib = parse_integer<int>(cols[8]);
      s.function_concurrency = parse_integer<int>(cols[9]);
      out.push_back(std::move(s));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), row, 1);
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const std::vector<MetricsSample>& series) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (const auto& s : series) {
    samples.push_back({{"fn", s.function},
                       {"window_start_ms", s.window_start_ms},
                       {"conc_instances", s.concurrent_instances},
                       {"invocations", s.invocations},
                       {"exec_mean_ms", opt(s.exec_mean_ms)},
                       {"exec_p50_ms", opt(s.exec_p50_ms)},
                       {"exec_p95_ms", opt(s.exec_p95_ms)},
                       {"mem_usage_mib", s.memory_usage_mib},
                       {"alloc_mib", s.allocated_memory_mib},
                       {"fn_concurrency", s.function_concurrency}});
  }
  return {{"memory_usage_model", kMemoryUsageModel}, {"samples", std::move(samples)}};
}

}  // namespace fncap::metrics
