#pragma once

#include <json.hpp>

#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fncap/core/graph.hpp"
#include "fncap/sandbox/exchange_store.hpp"
#include "fncap/sim/platform.hpp"

namespace fncap::sandbox {

inline constexpr const char* kProxyName = "fncap-proxy";
inline constexpr double kMockServiceMs = 1.0;
inline constexpr int kAuxConcurrency = 100'000;

/// The recording intermediary. Unwraps {"caller","callee","payload_b64"},
/// forwards the payload to the callee and stores the callee's response.
class ProxyHandler : public sim::FunctionHandler {
 public:
  using EdgeKey = std::pair<std::string, std::string>;

  explicit ProxyHandler(std::shared_ptr<ExchangeStore> store) : store_(std::move(store)) {}

  sim::ExecutionPlan plan(const sim::InvocationContext& ctx, std::mt19937_64&) override {
    sim::ExecutionPlan plan;
    auto env = nlohmann::json::parse(ctx.payload, nullptr, false);
    if (env.is_discarded() || !env.is_object() || !env.contains("callee") || !env.contains("payload_b64")) {
      plan.failed = true;
      return plan;
    }
    std::string callee = env["callee"].get<std::string>();
    std::string caller = env.value("caller", std::string{});
    std::string payload;
    try {
      payload = base64_decode(env["payload_b64"].get<std::string>());
    } catch (const Error&) {
      plan.failed = true;
      return plan;
    }
    plan.stages.push_back({{callee, payload}});
    const double at = ctx.now_ms;
    plan.respond = [this, caller, callee, payload, at](const std::vector<sim::CallResult>& results) {
      if (results.empty()) return std::string{};
      const auto& r = results.front();
      if (r.status == sim::Status::ok) {
        store_->record(callee, payload, r.response, at);
        ++edges_[{caller, callee}];
      }
      return r.response;
    };
    return plan;
  }

  const std::map<EdgeKey, std::size_t>& edge_counts() const { return edges_; }

 private:
  std::shared_ptr<ExchangeStore> store_;
  std::map<EdgeKey, std::size_t> edges_;
};

/// Stand-in for a neighbor: answers from the store after a constant
/// kMockServiceMs. Unknown callees fail the invocation.
class MockHandler : public sim::FunctionHandler {
 public:
  MockHandler(std::string callee, std::shared_ptr<const ExchangeStore> store)
      : callee_(std::move(callee)), store_(std::move(store)) {}

  sim::ExecutionPlan plan(const sim::InvocationContext& ctx, std::mt19937_64&) override {
    sim::ExecutionPlan plan;
    plan.compute_ms = kMockServiceMs;
    try {
      plan.respond = [response = mock_lookup(*store_, callee_, ctx.payload)](const auto&) { return response; };
    } catch (const Error&) {
      plan.failed = true;
    }
    return plan;
  }

 private:
  std::string callee_;
  std::shared_ptr<const ExchangeStore> store_;
};

inline void require_valid(const ApplicationGraph& graph) {
  const auto diags = validate_graph(graph);
  if (!diags.empty()) throw ValidationError("invalid application graph: " + diags.front().message);
}

inline FunctionProfile auxiliary_profile(const std::string& name) {
  FunctionProfile p;
  p.name = name;
  p.base_duration_ms = kMockServiceMs;
  p.cold_start_ms = 0.0;
  p.noise_sigma = 0.0;
  p.response_size = 0;
  return p;
}

struct RecordingDeployment {
  std::map<std::string, sim::FunctionHandle> functions;
  sim::FunctionHandle proxy;
  std::shared_ptr<ProxyHandler> proxy_handler;
  std::shared_ptr<ExchangeStore> store;
};

/// Deploys every function of the graph with its calls redirected through a
/// recording proxy, which is itself a function on the same platform.
inline RecordingDeployment deploy_application(sim::Platform& platform, const ApplicationGraph& graph,
                                              const DeploymentConfig& config) {
  require_valid(graph);
  if (graph.find(kProxyName)) throw ValidationError(std::string("function name '") + kProxyName + "' is reserved");
  RecordingDeployment out;
  out.store = std::make_shared<ExchangeStore>();
  out.proxy_handler = std::make_shared<ProxyHandler>(out.store);
  DeploymentConfig proxy_config = config;
  proxy_config.concurrency = kAuxConcurrency;
  out.proxy = platform.deploy(auxiliary_profile(kProxyName), proxy_config, out.proxy_handler);
  for (const auto& fn : graph.functions) {
    auto handler = std::make_shared<sim::SyntheticHandler>(fn, graph.callees(fn.name), kProxyName);
    out.functions[fn.name] = platform.deploy(fn, config, handler);
  }
  return out;
}

struct RecordResult {
  std::shared_ptr<ExchangeStore> store;
  std::vector<Edge> unexercised;  // edges that produced no recording
  std::vector<std::string> warnings;
};

/// Sends the entry payloads one at a time through the recording deployment.
inline RecordResult record_run(sim::Platform& platform, const ApplicationGraph& graph,
                               const RecordingDeployment& deployment, const std::vector<std::string>& payloads) {
  const auto entry = graph.entry();
  if (!entry) throw ValidationError("application graph has no entry function");
  const auto handle = deployment.functions.at(*entry);
  for (const auto& payload : payloads) {
    platform.invoke(handle, payload, platform.now());
  }
  RecordResult result;
  result.store = deployment.store;
  const auto& counts = deployment.proxy_handler->edge_counts();
  for (const auto& e : graph.edges) {
    if (counts.count({e.caller, e.callee})) continue;
    result.unexercised.push_back(e);
    result.warnings.push_back("edge " + e.caller + " -> " + e.callee + " has no recorded exchange");
  }
  return result;
}

/// Convenience: deploy the application on `platform` and record it.
inline RecordResult record_run(sim::Platform& platform, const ApplicationGraph& graph,
                               const std::vector<std::string>& payloads, const DeploymentConfig& config = {}) {
  const auto deployment = deploy_application(platform, graph, config);
  return record_run(platform, graph, deployment, payloads);
}

struct SandboxPlan {
  std::string target;
  std::set<std::string> mocked_neighbors;
  std::shared_ptr<const ExchangeStore> store;  // only the mocked neighbors' exchanges
};

inline SandboxPlan build_sandbox(const ApplicationGraph& graph, const std::string& target,
                                 const ExchangeStore& store) {
  require_valid(graph);
  if (!graph.find(target)) throw ValidationError("unknown function '" + target + "'");
  SandboxPlan plan;
  plan.target = target;
  for (const auto& e : graph.callees(target)) plan.mocked_neighbors.insert(e.callee);
  auto subset = std::make_shared<ExchangeStore>();
  for (const auto& callee : plan.mocked_neighbors) {
    if (!store.covers(callee)) throw Error("no recording for callee '" + callee + "' of '" + target + "'");
  }
  for (const auto& ex : store.snapshot()) {
    if (plan.mocked_neighbors.count(ex.callee)) subset->insert(ex);
  }
  plan.store = std::move(subset);
  return plan;
}

struct SandboxDeployment {
  sim::FunctionHandle target;
  std::map<std::string, sim::FunctionHandle> mocks;
};

/// Deploys the target unchanged (calls go straight to the mocks) and one mock
/// per direct callee.
inline SandboxDeployment deploy_sandbox(sim::Platform& platform, const ApplicationGraph& graph,
                                        const SandboxPlan& plan, const DeploymentConfig& config) {
  const auto* profile = graph.find(plan.target);
  if (!profile) throw ValidationError("unknown function '" + plan.target + "'");
  SandboxDeployment out;
  DeploymentConfig mock_config = config;
  mock_config.concurrency = kAuxConcurrency;
  for (const auto& callee : plan.mocked_neighbors) {
    out.mocks[callee] =
        platform.deploy(auxiliary_profile(callee), mock_config, std::make_shared<MockHandler>(callee, plan.store));
  }
  out.target = platform.deploy(*profile, config,
                               std::make_shared<sim::SyntheticHandler>(*profile, graph.callees(plan.target)));
  return out;
}

}  // namespace fncap::sandbox
