#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "fncap/core/types.hpp"

namespace fncap {

struct GraphDiagnostic {
  enum class Kind { empty_graph, duplicate_function, invalid_profile, unknown_caller, unknown_callee, cycle, entry_count };

  Kind kind;
  std::string subject;  // function name or "caller->callee"
  std::string message;
};

inline const char* to_string(GraphDiagnostic::Kind kind) {
  switch (kind) {
    case GraphDiagnostic::Kind::empty_graph: return "empty-graph";
    case GraphDiagnostic::Kind::duplicate_function: return "duplicate-function";
    case GraphDiagnostic::Kind::invalid_profile: return "invalid-profile";
    case GraphDiagnostic::Kind::unknown_caller: return "unknown-caller";
    case GraphDiagnostic::Kind::unknown_callee: return "unknown-callee";
    case GraphDiagnostic::Kind::cycle: return "cycle";
    case GraphDiagnostic::Kind::entry_count: return "entry-count";
  }
  return "unknown";
}

/// Checks profile invariants, name resolution, acyclicity and the single-entry
/// rule. An empty result means the graph is usable.
inline std::vector<GraphDiagnostic> validate_graph(const ApplicationGraph& g) {
  using Kind = GraphDiagnostic::Kind;
  std::vector<GraphDiagnostic> out;
  if (g.functions.empty()) {
    out.push_back({Kind::empty_graph, "", "application declares no functions"});
    return out;
  }

  std::set<std::string> names;
  for (const auto& f : g.functions) {
    if (!names.insert(f.name).second)
      out.push_back({Kind::duplicate_function, f.name, "function '" + f.name + "' declared twice"});
    if (f.name.empty()) out.push_back({Kind::invalid_profile, f.name, "function name is empty"});
    if (!(f.base_duration_ms > 0))
      out.push_back({Kind::invalid_profile, f.name, "base_duration_ms must be > 0"});
    if (f.saturation_memory_mib < 128)
      out.push_back({Kind::invalid_profile, f.name, "saturation_memory_mib must be >= 128"});
    if (!(f.noise_sigma >= 0))
      out.push_back({Kind::invalid_profile, f.name, "noise_sigma must be >= 0"});
    if (!(f.cold_start_ms >= 0))
      out.push_back({Kind::invalid_profile, f.name, "cold_start_ms must be >= 0"});
    if (!(f.idle_timeout_s >= 0))
      out.push_back({Kind::invalid_profile, f.name, "idle_timeout_s must be >= 0"});
    if (!(f.memory_utilization >= 0 && f.memory_utilization <= 1))
      out.push_back({Kind::invalid_profile, f.name, "memory_utilization must lie in [0, 1]"});
  }

  std::map<std::string, std::vector<std::string>> adjacency;
  for (const auto& e : g.edges) {
    std::string subject = e.caller + "->" + e.callee;
    bool ok = true;
    if (!names.count(e.caller)) {
      out.push_back({Kind::unknown_caller, subject, "edge caller '" + e.caller + "' is not declared"});
      ok = false;
    }
    if (!names.count(e.callee)) {
      out.push_back({Kind::unknown_callee, subject, "edge callee '" + e.callee + "' is not declared"});
      ok = false;
    }
    if (e.caller == e.callee) {
      out.push_back({Kind::cycle, subject, "self-edge on '" + e.caller + "'"});
      ok = false;
    }
    if (ok) adjacency[e.caller].push_back(e.callee);
  }

  // Three-colour DFS; report each back edge once.
  std::map<std::string, int> colour;
  std::set<std::string> reported;
  auto dfs = [&](auto&& self, const std::string& node) -> void {
    colour[node] = 1;
    for (const auto& next : adjacency[node]) {
      if (colour[next] == 1) {
        std::string subject = node + "->" + next;
        if (reported.insert(subject).second)
          out.push_back({Kind::cycle, subject, "edge " + subject + " closes a cycle"});
      } else if (colour[next] == 0) {
        self(self, next);
      }
    }
    colour[node] = 2;
  };
  for (const auto& name : names)
    if (colour[name] == 0) dfs(dfs, name);

  std::set<std::string> has_incoming;
  for (const auto& e : g.edges)
    if (names.count(e.callee)) has_incoming.insert(e.callee);
  std::vector<std::string> roots;
  for (const auto& name : names)
    if (!has_incoming.count(name)) roots.push_back(name);
  if (roots.size() != 1) {
    std::string list;
    for (const auto& r : roots) list += (list.empty() ? "" : ", ") + r;
    out.push_back({Kind::entry_count, list,
                   "expected exactly one entry function, found " + std::to_string(roots.size()) +
                       (list.empty() ? "" : " (" + list + ")")});
  }
  return out;
}

}  // namespace fncap
