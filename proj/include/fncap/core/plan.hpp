#pragma once

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "fncap/common.hpp"
#include "fncap/core/graph.hpp"
#include "fncap/core/types.hpp"

namespace fncap {

namespace detail {

inline ValidationError invalid_at(const YAML::Node& node, const std::string& what) {
  const auto mark = node.Mark();
  if (mark.line >= 0)
    return ValidationError(what + " (line " + std::to_string(mark.line + 1) + ", column " +
                           std::to_string(mark.column + 1) + ")");
  return ValidationError(what);
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) throw invalid_at(node, "'" + key + "' must be a scalar");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw invalid_at(node, "'" + key + "' has the wrong type");
  }
}

template <typename T>
T scalar_or(const YAML::Node& map, const std::string& key, T fallback) {
  const YAML::Node node = map[key];
  if (!node || node.IsNull()) return fallback;
  return scalar<T>(node, key);
}

inline void reject_unknown_keys(const YAML::Node& map, const std::string& where,
                                std::initializer_list<const char*> allowed) {
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw invalid_at(kv.first, "unknown key '" + key + "' in " + where);
  }
}

inline std::vector<int> int_list(const YAML::Node& map, const std::string& key) {
  const YAML::Node node = map[key];
  if (!node) throw ValidationError("missing required key '" + key + "'");
  if (!node.IsSequence()) throw invalid_at(node, "'" + key + "' must be a list");
  std::vector<int> out;
  for (const auto& item : node) out.push_back(scalar<int>(item, key));
  return out;
}

inline FunctionProfile parse_profile(const YAML::Node& node) {
  if (!node.IsMap()) throw invalid_at(node, "function entry must be a mapping");
  reject_unknown_keys(node, "function",
                      {"name", "base_duration_ms", "saturation_memory_mib", "cold_start_ms",
                       "noise_sigma", "idle_timeout_s", "response_size", "memory_utilization"});
  FunctionProfile p;
  if (!node["name"]) throw invalid_at(node, "function entry lacks 'name'");
  p.name = scalar<std::string>(node["name"], "name");
  p.base_duration_ms = scalar_or(node, "base_duration_ms", p.base_duration_ms);
  p.saturation_memory_mib = scalar_or(node, "saturation_memory_mib", p.saturation_memory_mib);
  p.cold_start_ms = scalar_or(node, "cold_start_ms", p.cold_start_ms);
  p.noise_sigma = scalar_or(node, "noise_sigma", p.noise_sigma);
  p.idle_timeout_s = scalar_or(node, "idle_timeout_s", p.idle_timeout_s);
  p.response_size = scalar_or(node, "response_size", p.response_size);
  p.memory_utilization = scalar_or(node, "memory_utilization", p.memory_utilization);
  return p;
}

inline Edge parse_edge(const YAML::Node& node) {
  if (!node.IsMap()) throw invalid_at(node, "edge entry must be a mapping");
  reject_unknown_keys(node, "edge", {"caller", "callee", "mode", "position"});
  if (!node["caller"] || !node["callee"]) throw invalid_at(node, "edge needs 'caller' and 'callee'");
  Edge e;
  e.caller = scalar<std::string>(node["caller"], "caller");
  e.callee = scalar<std::string>(node["callee"], "callee");
  const auto mode = scalar_or<std::string>(node, "mode", "sync");
  if (mode == "sync") e.mode = CallMode::sync;
  else if (mode == "async") e.mode = CallMode::async;
  else throw invalid_at(node["mode"], "edge mode must be 'sync' or 'async'");
  e.position = scalar_or(node, "position", 0);
  return e;
}

inline ApplicationGraph parse_app(const YAML::Node& node) {
  if (!node.IsMap()) throw invalid_at(node, "'app' must be a mapping");
  reject_unknown_keys(node, "app", {"functions", "edges"});
  ApplicationGraph g;
  if (const auto fns = node["functions"]) {
    if (!fns.IsSequence()) throw invalid_at(fns, "'app.functions' must be a list");
    for (const auto& f : fns) g.functions.push_back(parse_profile(f));
  }
  if (const auto edges = node["edges"]) {
    if (!edges.IsSequence()) throw invalid_at(edges, "'app.edges' must be a list");
    for (const auto& e : edges) g.edges.push_back(parse_edge(e));
  }
  return g;
}

}  // namespace detail

/// Throws ValidationError naming the first violated invariant.
inline void validate_plan(const TestPlan& plan) {
  if (plan.memory_grid.empty()) throw ValidationError("memory_mib grid must not be empty");
  if (plan.concurrency_grid.empty()) throw ValidationError("concurrency grid must not be empty");
  for (int m : plan.memory_grid)
    if (m < 128) throw ValidationError("memory_mib entries must be >= 128, got " + std::to_string(m));
  for (int c : plan.concurrency_grid)
    if (c < 1) throw ValidationError("concurrency entries must be >= 1, got " + std::to_string(c));
  if (plan.vus.min < 0) throw ValidationError("vus.min must be >= 0");
  if (plan.vus.max < 1) throw ValidationError("vus.max must be >= 1");
  if (plan.vus.min > plan.vus.max) throw ValidationError("vus.min must not exceed vus.max");
  if (!(plan.slo.percentile > 0 && plan.slo.percentile <= 1))
    throw ValidationError("slo.percentile must lie in (0, 1]");
  if (!(plan.slo.max_ms > 0)) throw ValidationError("slo.max_ms must be > 0");
  if (!(plan.sampling_interval_s > 0)) throw ValidationError("sampling_interval_s must be > 0");
  if (!(plan.duration_s >= 2 * plan.sampling_interval_s))
    throw ValidationError("duration_s must be at least twice sampling_interval_s");
  if (!(plan.timeout_ms > 0)) throw ValidationError("timeout_ms must be > 0");
  const auto diagnostics = validate_graph(plan.app);
  if (!diagnostics.empty()) {
    std::string msg = "invalid application graph:";
    for (const auto& d : diagnostics) msg += std::string("\n  [") + to_string(d.kind) + "] " + d.message;
    throw ValidationError(msg);
  }
}

/// Parses and validates a YAML test plan. When `app` is absent the built-in
/// eight-function sample application is used.
inline TestPlan parse_test_plan(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ParseError("YAML syntax error: " + e.msg, e.mark.line + 1, e.mark.column + 1);
  }
  if (!root.IsMap()) throw ValidationError("test plan must be a YAML mapping");
  detail::reject_unknown_keys(root, "test plan",
                              {"memory_mib", "concurrency", "duration_s", "sampling_interval_s",
                               "timeout_ms", "vus", "slo", "seed", "app"});

  TestPlan plan;
  plan.memory_grid = detail::int_list(root, "memory_mib");
  plan.concurrency_grid = detail::int_list(root, "concurrency");
  plan.duration_s = detail::scalar_or(root, "duration_s", plan.duration_s);
  plan.sampling_interval_s = detail::scalar_or(root, "sampling_interval_s", plan.sampling_interval_s);
  plan.timeout_ms = detail::scalar_or(root, "timeout_ms", plan.timeout_ms);
  plan.seed = detail::scalar_or<std::uint64_t>(root, "seed", plan.seed);

  if (const auto vus = root["vus"]) {
    if (!vus.IsMap()) throw detail::invalid_at(vus, "'vus' must be a mapping");
    detail::reject_unknown_keys(vus, "vus", {"min", "max"});
    plan.vus.min = detail::scalar_or(vus, "min", plan.vus.min);
    plan.vus.max = detail::scalar_or(vus, "max", plan.vus.max);
  }

  const auto slo = root["slo"];
  if (!slo) throw ValidationError("missing required key 'slo'");
  if (!slo.IsMap()) throw detail::invalid_at(slo, "'slo' must be a mapping");
  detail::reject_unknown_keys(slo, "slo", {"percentile", "max_ms"});
  if (!slo["max_ms"]) throw detail::invalid_at(slo, "missing required key 'slo.max_ms'");
  plan.slo.percentile = detail::scalar_or(slo, "percentile", plan.slo.percentile);
  plan.slo.max_ms = detail::scalar<double>(slo["max_ms"], "max_ms");

  if (const auto app = root["app"]) plan.app = detail::parse_app(app);
  else plan.app = default_application();

  validate_plan(plan);
  return plan;
}

/// Emits every field explicitly, so parse(serialize(plan)) == plan.
inline std::string serialize_test_plan(const TestPlan& plan) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "memory_mib" << YAML::Value << YAML::Flow << plan.memory_grid;
  out << YAML::Key << "concurrency" << YAML::Value << YAML::Flow << plan.concurrency_grid;
  out << YAML::Key << "duration_s" << YAML::Value << plan.duration_s;
  out << YAML::Key << "sampling_interval_s" << YAML::Value << plan.sampling_interval_s;
  out << YAML::Key << "timeout_ms" << YAML::Value << plan.timeout_ms;
  out << YAML::Key << "vus" << YAML::Value << YAML::Flow << YAML::BeginMap
      << YAML::Key << "min" << YAML::Value << plan.vus.min
      << YAML::Key << "max" << YAML::Value << plan.vus.max << YAML::EndMap;
  out << YAML::Key << "slo" << YAML::Value << YAML::Flow << YAML::BeginMap
      << YAML::Key << "percentile" << YAML::Value << plan.slo.percentile
      << YAML::Key << "max_ms" << YAML::Value << plan.slo.max_ms << YAML::EndMap;
  out << YAML::Key << "seed" << YAML::Value << plan.seed;
  out << YAML::Key << "app" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "functions" << YAML::Value << YAML::BeginSeq;
  for (const auto& f : plan.app.functions) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << f.name;
    out << YAML::Key << "base_duration_ms" << YAML::Value << f.base_duration_ms;
    out << YAML::Key << "saturation_memory_mib" << YAML::Value << f.saturation_memory_mib;
    out << YAML::Key << "cold_start_ms" << YAML::Value << f.cold_start_ms;
    out << YAML::Key << "noise_sigma" << YAML::Value << f.noise_sigma;
    out << YAML::Key << "idle_timeout_s" << YAML::Value << f.idle_timeout_s;
    out << YAML::Key << "response_size" << YAML::Value << f.response_size;
    out << YAML::Key << "memory_utilization" << YAML::Value << f.memory_utilization;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "edges" << YAML::Value << YAML::BeginSeq;
  for (const auto& e : plan.app.edges) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "caller" << YAML::Value << e.caller;
    out << YAML::Key << "callee" << YAML::Value << e.callee;
    out << YAML::Key << "mode" << YAML::Value << to_string(e.mode);
    out << YAML::Key << "position" << YAML::Value << e.position;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

/// Cartesian product of the grids, memory-major, both axes ascending.
inline std::vector<DeploymentConfig> expand_grid(const TestPlan& plan) {
  auto memory = plan.memory_grid;
  auto concurrency = plan.concurrency_grid;
  std::sort(memory.begin(), memory.end());
  std::sort(concurrency.begin(), concurrency.end());
  std::vector<DeploymentConfig> out;
  out.reserve(memory.size() * concurrency.size());
  for (int m : memory)
    for (int c : concurrency) out.push_back({m, c, plan.timeout_ms});
  return out;
}

}  // namespace fncap
