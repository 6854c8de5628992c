#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fncap {

/// Execution-time objective: the `percentile` of execution_duration must stay
/// at or below `max_ms`.
struct Slo {
  double percentile = 0.95;
  double max_ms = 0.0;

  bool operator==(const Slo&) const = default;
};

struct DeploymentConfig {
  int memory_mib = 256;
  int concurrency = 1;  // hard cap on concurrently existing instances
  double timeout_ms = 60'000.0;

  bool operator==(const DeploymentConfig&) const = default;
};

/// Synthetic behaviour of one function on the simulated platform.
struct FunctionProfile {
  std::string name;
  double base_duration_ms = 100.0;  // mean service time at saturation_memory_mib
  int saturation_memory_mib = 2048;
  double cold_start_ms = 250.0;
  double noise_sigma = 0.05;  // lognormal sigma of multiplicative service noise
  double idle_timeout_s = 300.0;
  std::size_t response_size = 256;
  double memory_utilization = 0.6;  // fraction of allocated memory reported as used

  bool operator==(const FunctionProfile&) const = default;
};

enum class CallMode { sync, async };

inline const char* to_string(CallMode mode) { return mode == CallMode::sync ? "sync" : "async"; }

/// A call from `caller` to `callee`. Edges of one caller sharing a position
/// are issued together and awaited together; positions run in ascending order.
struct Edge {
  std::string caller;
  std::string callee;
  CallMode mode = CallMode::sync;
  int position = 0;

  bool operator==(const Edge&) const = default;
};

struct ApplicationGraph {
  std::vector<FunctionProfile> functions;
  std::vector<Edge> edges;

  bool operator==(const ApplicationGraph&) const = default;

  const FunctionProfile* find(const std::string& name) const {
    auto it = std::find_if(functions.begin(), functions.end(),
                           [&](const FunctionProfile& f) { return f.name == name; });
    return it == functions.end() ? nullptr : &*it;
  }

  /// Outgoing edges of `name`, ordered by position then declaration order.
  std::vector<Edge> callees(const std::string& name) const {
    std::vector<Edge> out;
    for (const auto& e : edges)
      if (e.caller == name) out.push_back(e);
    std::stable_sort(out.begin(), out.end(),
                     [](const Edge& a, const Edge& b) { return a.position < b.position; });
    return out;
  }

  /// The function with no incoming edges, when exactly one exists.
  std::optional<std::string> entry() const {
    std::optional<std::string> root;
    for (const auto& f : functions) {
      bool has_incoming = std::any_of(edges.begin(), edges.end(),
                                      [&](const Edge& e) { return e.callee == f.name; });
      if (has_incoming) continue;
      if (root) return std::nullopt;
      root = f.name;
    }
    return root;
  }
};

struct VuRange {
  int min = 5;
  int max = 500;

  bool operator==(const VuRange&) const = default;
};

struct TestPlan {
  std::vector<int> memory_grid;
  std::vector<int> concurrency_grid;
  double duration_s = 120.0;
  VuRange vus;
  Slo slo;
  std::uint64_t seed = 1;
  double sampling_interval_s = 60.0;
  double timeout_ms = 60'000.0;
  ApplicationGraph app;

  bool operator==(const TestPlan&) const = default;
};

/// The eight-function sample application: an HTTP entry (nodeinfo) fanning
/// out to a compute chain and a web chain.
inline ApplicationGraph default_application() {
  auto fn = [](std::string name, double base_ms, double cold_ms, std::size_t response,
               double utilization) {
    FunctionProfile p;
    p.name = std::move(name);
    p.base_duration_ms = base_ms;
    p.cold_start_ms = cold_ms;
    p.response_size = response;
    p.memory_utilization = utilization;
    return p;
  };
  ApplicationGraph g;
  g.functions = {
      fn("nodeinfo", 40.0, 180.0, 512, 0.35),
      fn("primes-python", 400.0, 300.0, 256, 0.55),
      fn("linpack", 150.0, 350.0, 128, 0.7),
      fn("dd", 250.0, 250.0, 128, 0.5),
      fn("gzip-compression", 700.0, 300.0, 1024, 0.8),
      fn("lr-prediction", 1000.0, 450.0, 256, 0.75),
      fn("nodejs-endpoint", 30.0, 150.0, 128, 0.3),
      fn("sentiment-analysis", 120.0, 400.0, 256, 0.6),
  };
  g.edges = {
      {"nodeinfo", "primes-python", CallMode::sync, 0},
      {"primes-python", "linpack", CallMode::async, 0},
      {"primes-python", "dd", CallMode::async, 0},
      {"dd", "gzip-compression", CallMode::sync, 0},
      {"gzip-compression", "lr-prediction", CallMode::sync, 0},
      {"nodeinfo", "nodejs-endpoint", CallMode::sync, 1},
      {"nodejs-endpoint", "sentiment-analysis", CallMode::sync, 0},
  };
  return g;
}

}  // namespace fncap
