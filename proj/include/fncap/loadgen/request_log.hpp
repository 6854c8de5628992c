#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fncap/format.hpp"
#include "fncap/loadgen/stats.hpp"
#include "fncap/sim/platform.hpp"

namespace fncap::loadgen {

using sim::Status;

struct RequestEntry {
  double ts_ms = 0.0;  // send time
  Status status = Status::error;
  std::optional<double> exec_ms;
  double total_ms = 0.0;
  bool cold = false;
  std::uint64_t instance = 0;
  int vu = 0;

  bool operator==(const RequestEntry&) const = default;
};

/// Half-open time window [start_ms, end_ms).
struct Window {
  double start_ms = 0.0;
  double end_ms = 0.0;

  bool contains(double t) const { return t >= start_ms && t < end_ms; }
  double seconds() const { return (end_ms - start_ms) / 1000.0; }
};

/// Append-only request log. Appends may come from several threads; readers
/// see entries ordered by send time (stable for equal timestamps).
class RequestLog {
 public:
  RequestLog() = default;
  RequestLog(const RequestLog& other) : entries_(other.entries()), vu_trace_(other.vu_trace_) {}
  RequestLog& operator=(const RequestLog& other) {
    if (this != &other) {
      auto copy = other.entries();
      std::lock_guard lock(mutex_);
      entries_ = std::move(copy);
      vu_trace_ = other.vu_trace_;
    }
    return *this;
  }

  void append(const RequestEntry& e) {
    std::lock_guard lock(mutex_);
    entries_.push_back(e);
  }

  std::vector<RequestEntry> entries() const {
    std::lock_guard lock(mutex_);
    auto out = entries_;
    std::stable_sort(out.begin(), out.end(),
                     [](const RequestEntry& a, const RequestEntry& b) { return a.ts_ms < b.ts_ms; });
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }
  bool empty() const { return size() == 0; }

  /// (time, active VU count) at every change.
  std::vector<std::pair<double, int>>& vu_trace() { return vu_trace_; }
  const std::vector<std::pair<double, int>>& vu_trace() const { return vu_trace_; }

  static constexpr const char* kCsvHeader = "ts_ms,status,exec_ms,total_ms,cold,instance";

  void write_csv(std::ostream& out) const {
    out << kCsvHeader << '\n';
    for (const auto& e : entries())
      out << format_double(e.ts_ms) << ',' << to_string(e.status) << ',' << format_optional(e.exec_ms) << ','
          << format_double(e.total_ms) << ',' << (e.cold ? 1 : 0) << ',' << e.instance << '\n';
  }

  std::string to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }

  static RequestLog read_csv(std::istream& in) {
    RequestLog log;
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw ParseError("request log CSV header mismatch");
    int row = 1;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty()) continue;
      const auto cols = split(line, ',');
      if (cols.size() != 6) throw ParseError("request log row has " + std::to_string(cols.size()) + " columns", row, 1);
      RequestEntry e;
      e.ts_ms = parse_double(cols[0]);
      e.status = sim::status_from_string(std::string(cols[1]));
      e.exec_ms = parse_optional(cols[2]);
      e.total_ms = parse_double(cols[3]);
      e.cold = cols[4] == "1";
      e.instance = parse_integer<std::uint64_t>(cols[5]);
      log.entries_.push_back(e);
    }
    return log;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<RequestEntry> entries_;
  std::vector<std::pair<double, int>> vu_trace_;
};

inline std::vector<double> ok_durations(const RequestLog& log, std::optional<Window> window = std::nullopt) {
  std::vector<double> out;
  for (const auto& e : log.entries())
    if (e.status == Status::ok && e.exec_ms && (!window || window->contains(e.ts_ms))) out.push_back(*e.exec_ms);
  return out;
}

/// Nearest-rank percentile of execution_duration over ok requests.
inline double percentile(const RequestLog& log, double p, std::optional<Window> window = std::nullopt) {
  return nearest_rank(ok_durations(log, window), p);
}

struct Throughput {
  double ok_rps = 0.0;
  double throttle_fraction = 0.0;  // throttled / total
  double failure_fraction = 0.0;   // (total - ok) / total; errors and timeouts included
  std::size_t total = 0;
  std::size_t ok = 0;
};

inline Throughput throughput(const RequestLog& log, const Window& window) {
  Throughput t;
  std::size_t throttled = 0;
  for (const auto& e : log.entries()) {
    if (!window.contains(e.ts_ms)) continue;
    ++t.total;
    if (e.status == Status::ok) ++t.ok;
    if (e.status == Status::throttled) ++throttled;
  }
  if (window.seconds() > 0) t.ok_rps = static_cast<double>(t.ok) / window.seconds();
  if (t.total > 0) {
    t.throttle_fraction = static_cast<double>(throttled) / static_cast<double>(t.total);
    t.failure_fraction = static_cast<double>(t.total - t.ok) / static_cast<double>(t.total);
  }
  return t;
}

}  // namespace fncap::loadgen
