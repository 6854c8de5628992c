#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fncap/common.hpp"
#include "fncap/core/types.hpp"

namespace fncap::sim {

/// Mean service time at `memory_mib`: inversely proportional to memory up to
/// the profile's saturation point, constant beyond it.
inline double duration_model(const FunctionProfile& profile, int memory_mib) {
  if (memory_mib < 128) throw ValidationError("memory must be >= 128 MiB");
  const double effective = std::min<double>(memory_mib, profile.saturation_memory_mib);
  return profile.base_duration_ms * profile.saturation_memory_mib / effective;
}

enum class Status { ok, throttled, timeout, error };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::throttled: return "throttled";
    case Status::timeout: return "timeout";
    case Status::error: return "error";
  }
  return "error";
}

inline Status status_from_string(const std::string& s) {
  if (s == "ok") return Status::ok;
  if (s == "throttled") return Status::throttled;
  if (s == "timeout") return Status::timeout;
  if (s == "error") return Status::error;
  throw ParseError("unknown status '" + s + "'");
}

struct InvocationOutcome {
  Status status = Status::error;
  std::optional<double> execution_ms;  // service time, present only when ok
  double total_ms = 0.0;               // queue wait + cold start + service
  std::uint64_t instance_id = 0;       // 0 when no instance served the request
  bool cold = false;
  std::string response;
};

/// Platform-side record of one finished request (no response bytes).
struct InvocationRecord {
  double arrival_ms = 0.0;
  Status status = Status::error;
  std::optional<double> execution_ms;
  double total_ms = 0.0;
  std::uint64_t instance_id = 0;
  bool cold = false;
};

struct CallRequest {
  std::string callee;
  std::string payload;
};

struct CallResult {
  std::string callee;
  Status status = Status::error;
  std::string response;
};

struct InvocationContext {
  const std::string& function;
  const std::string& payload;
  const DeploymentConfig& config;
  double now_ms;
};

/// What an instance does for one event: compute, then the call stages in
/// order (calls of a stage are issued together and all awaited), then respond.
struct ExecutionPlan {
  double compute_ms = 0.0;
  std::vector<std::vector<CallRequest>> stages;
  std::function<std::string(const std::vector<CallResult>&)> respond;
  bool failed = false;  // the handler could not serve the event; ends as error after compute
};

class FunctionHandler {
 public:
  virtual ~FunctionHandler() = default;
  virtual ExecutionPlan plan(const InvocationContext& ctx, std::mt19937_64& rng) = 0;
};

/// Service time from the profile's duration model with lognormal jitter, then
/// the profile's outgoing calls. Sync edges of a position run one after the
/// other; async edges of that position are issued with the first of them.
/// When `proxy` is set every outgoing call is redirected through it.
class SyntheticHandler : public FunctionHandler {
 public:
  SyntheticHandler(FunctionProfile profile, std::vector<Edge> calls, std::string proxy = {})
      : profile_(std::move(profile)), calls_(std::move(calls)), proxy_(std::move(proxy)) {}

  ExecutionPlan plan(const InvocationContext& ctx, std::mt19937_64& rng) override {
    ExecutionPlan plan;
    double jitter = 1.0;
    if (profile_.noise_sigma > 0) {
      std::normal_distribution<double> normal(0.0, profile_.noise_sigma);
      jitter = std::exp(normal(rng));
    }
    plan.compute_ms = duration_model(profile_, ctx.config.memory_mib) * jitter;

    const std::string input = to_hex(fnv1a64(ctx.payload));
    std::map<int, std::vector<const Edge*>> by_position;
    for (const auto& e : calls_) by_position[e.position].push_back(&e);
    for (const auto& [position, edges] : by_position) {
      std::vector<CallRequest> async_calls;
      std::vector<CallRequest> sync_calls;
      for (const Edge* e : edges) {
        CallRequest call{e->callee, "{\"caller\":\"" + profile_.name + "\",\"input\":\"" + input + "\"}"};
        (e->mode == CallMode::async ? async_calls : sync_calls).push_back(std::move(call));
      }
      std::vector<CallRequest> first = std::move(async_calls);
      std::size_t next_sync = 0;
      if (!sync_calls.empty()) first.push_back(sync_calls[next_sync++]);
      plan.stages.push_back(std::move(first));
      for (; next_sync < sync_calls.size(); ++next_sync) plan.stages.push_back({sync_calls[next_sync]});
    }
    if (!proxy_.empty())
      for (auto& stage : plan.stages)
        for (auto& call : stage) call = wrap_for_proxy(proxy_, profile_.name, call);

    plan.respond = [name = profile_.name, size = profile_.response_size,
                    payload = ctx.payload](const std::vector<CallResult>& results) {
      std::uint64_t h = fnv1a64(payload);
      for (const auto& r : results) h = fnv1a64(r.response, h);
      std::string body = "{\"fn\":\"" + name + "\",\"digest\":\"" + to_hex(h) + "\",\"pad\":\"";
      const std::string tail = "\"}";
      if (body.size() + tail.size() < size) body.append(size - body.size() - tail.size(), 'x');
      return body + tail;
    };
    return plan;
  }

  /// Envelope understood by the proxy function.
  static CallRequest wrap_for_proxy(const std::string& proxy, const std::string& caller, const CallRequest& call) {
    return {proxy, "{\"caller\":\"" + caller + "\",\"callee\":\"" + call.callee + "\",\"payload_b64\":\"" +
                       base64_encode(call.payload) + "\"}"};
  }

  const FunctionProfile& profile() const { return profile_; }

 private:
  FunctionProfile profile_;
  std::vector<Edge> calls_;
  std::string proxy_;
};

struct FunctionHandle {
  std::size_t index = 0;
  bool operator==(const FunctionHandle&) const = default;
};

struct InstanceState {
  std::uint64_t id = 0;
  double created_at = 0.0;
  double last_used_at = 0.0;
  bool busy = false;
  bool cold = true;  // first invocation not yet completed
  bool retiring = false;
  std::uint64_t idle_epoch = 0;
};

/// Event-driven FaaS platform on a virtual millisecond clock.
///
/// Routing for an arriving event: reuse the most recently used idle instance;
/// otherwise create one (cold start) while below the concurrency cap;
/// otherwise wait in a FIFO queue for at most `queue_timeout_ms`, or be
/// throttled immediately when that is 0. One in-flight event per instance.
class Platform {
 public:
  struct Options {
    std::uint64_t seed = 1;
    double queue_timeout_ms = 0.0;
    std::size_t queue_capacity = 1'000'000;
    double reject_latency_ms = 10.0;  // response time of a throttled request
    bool auto_reap = true;            // retire instances exactly at idle timeout
  };

  using Callback = std::function<void(const InvocationOutcome&)>;

  Platform() : Platform(Options{}) {}
  explicit Platform(Options options) : options_(options), rng_(options.seed) {}

  Platform(const Platform&) = delete;
  Platform& operator=(const Platform&) = delete;

  const Options& options() const { return options_; }
  double now() const { return clock_; }

  FunctionHandle deploy(const FunctionProfile& profile, const DeploymentConfig& config,
                        std::shared_ptr<FunctionHandler> handler = nullptr) {
    validate_config(config);
    if (by_name_.count(profile.name))
      throw ValidationError("function '" + profile.name + "' is already deployed");
    auto d = std::make_unique<Deployment>();
    d->profile = profile;
    d->config = config;
    d->handler = handler ? std::move(handler) : std::make_shared<SyntheticHandler>(profile, std::vector<Edge>{});
    d->instance_trace.emplace_back(clock_, 0);
    FunctionHandle h{deployments_.size()};
    deployments_.push_back(std::move(d));
    by_name_[profile.name] = h.index;
    return h;
  }

  /// Applies a new configuration; every existing instance is retired so the
  /// next invocations start cold.
  void update(FunctionHandle h, const DeploymentConfig& config) {
    validate_config(config);
    auto& d = live(h);
    d.config = config;
    std::vector<std::uint64_t> idle;
    for (auto& [id, inst] : d.instances) {
      if (inst.busy) inst.retiring = true;
      else idle.push_back(id);
    }
    for (auto id : idle) retire(d, id);
  }

  void destroy(FunctionHandle h) {
    auto& d = live(h);
    std::vector<std::uint64_t> ids;
    for (auto& [id, inst] : d.instances) {
      if (inst.busy) inst.retiring = true;
      else ids.push_back(id);
    }
    for (auto id : ids) retire(d, id);
    d.destroyed = true;
    by_name_.erase(d.profile.name);
  }

  std::optional<FunctionHandle> find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return FunctionHandle{it->second};
  }

  void set_handler(FunctionHandle h, std::shared_ptr<FunctionHandler> handler) {
    live(h).handler = std::move(handler);
  }

  /// Queues an event arriving at `at_ms` (>= now). The callback fires when
  /// the outcome is known during event processing.
  void submit(FunctionHandle h, std::string payload, double at_ms, Callback done) {
    check_time(at_ms);
    live(h);
    const std::uint64_t id = next_request_++;
    Request r;
    r.function = h.index;
    r.payload = std::move(payload);
    r.arrival = at_ms;
    r.done = std::move(done);
    requests_.emplace(id, std::move(r));
    schedule(at_ms, [this, id] { on_arrival(id); });
  }

  /// Submit by name; unknown names produce an immediate error outcome.
  void submit(const std::string& name, std::string payload, double at_ms, Callback done) {
    if (auto h = find(name)) {
      submit(*h, std::move(payload), at_ms, std::move(done));
      return;
    }
    check_time(at_ms);
    ++unknown_pending_;
    schedule(at_ms, [this, done = std::move(done)] {
      --unknown_pending_;
      InvocationOutcome out;
      out.status = Status::error;
      out.response = "unknown function";
      if (done) done(out);
    });
  }

  /// Submits and runs the simulation until this request has an outcome.
  InvocationOutcome invoke(FunctionHandle h, std::string payload, double at_ms) {
    std::optional<InvocationOutcome> result;
    submit(h, std::move(payload), at_ms, [&result](const InvocationOutcome& o) { result = o; });
    while (!result && step()) {
    }
    if (!result) throw Error("simulation drained without an outcome");
    return *result;
  }

  /// Runs `fn` at virtual time `at_ms`.
  void schedule(double at_ms, std::function<void()> fn) {
    check_time(at_ms);
    events_.push(Event{at_ms, next_seq_++, std::move(fn)});
  }

  /// Processes one event; false when none remain.
  bool step() {
    if (events_.empty()) return false;
    Event ev = std::move(const_cast<Event&>(events_.top()));
    events_.pop();
    clock_ = std::max(clock_, ev.time);
    ev.fn();
    return true;
  }

  /// Processes every event with time <= t and leaves the clock at t.
  void run_until(double t) {
    while (!events_.empty() && events_.top().time <= t) step();
    clock_ = std::max(clock_, t);
  }

  /// Processes events until every submitted request has an outcome; idle
  /// reaping timers may remain queued.
  void drain() {
    while (outstanding() > 0 && step()) {
    }
  }

  std::size_t outstanding() const { return requests_.size() + unknown_pending_; }

  void run() {
    while (step()) {
    }
  }

  std::size_t pending_events() const { return events_.size(); }
  std::size_t in_flight() const { return in_flight_; }

  /// Retires every idle instance whose idle time exceeds its profile's
  /// idle timeout at `now_ms`; returns how many were retired.
  std::size_t reap_idle(double now_ms) {
    run_until(now_ms);
    std::size_t retired = 0;
    for (auto& dp : deployments_) {
      auto& d = *dp;
      std::vector<std::uint64_t> victims;
      for (const auto& [id, inst] : d.instances)
        if (!inst.busy && now_ms - inst.last_used_at > d.profile.idle_timeout_s * 1000.0)
          victims.push_back(id);
      std::sort(victims.begin(), victims.end());
      for (auto id : victims) retire(d, id);
      retired += victims.size();
    }
    return retired;
  }

  // Observers.

  const FunctionProfile& profile(FunctionHandle h) const { return at(h).profile; }
  const DeploymentConfig& config(FunctionHandle h) const { return at(h).config; }
  std::size_t instance_count(FunctionHandle h) const { return at(h).instances.size(); }
  std::size_t queue_length(FunctionHandle h) const { return at(h).queue.size(); }

  std::vector<InstanceState> instances(FunctionHandle h) const {
    std::vector<InstanceState> out;
    for (const auto& [id, inst] : at(h).instances) out.push_back(inst);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
  }

  /// Completed requests in completion order.
  const std::vector<InvocationRecord>& history(FunctionHandle h) const { return at(h).history; }

  /// (time, instance count after the change) for every creation/retirement.
  const std::vector<std::pair<double, int>>& instance_trace(FunctionHandle h) const {
    return at(h).instance_trace;
  }

  struct Counters {
    std::uint64_t invocations = 0;  // events that reached an instance
    std::uint64_t ok = 0;
    std::uint64_t throttles = 0;
    std::uint64_t timeouts = 0;
    std::uint64_t cold_starts = 0;
    int peak_instances = 0;
  };
  const Counters& counters(FunctionHandle h) const { return at(h).counters; }

 private:
  struct Event {
    double time;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };

  struct Request {
    std::size_t function = 0;
    std::string payload;
    double arrival = 0.0;
    double service_start = 0.0;
    std::uint64_t instance = 0;
    bool cold = false;
    bool queued = false;
    ExecutionPlan plan;
    std::size_t stage = 0;
    std::size_t pending_calls = 0;
    std::vector<CallResult> results;
    Callback done;
  };

  struct Deployment {
    FunctionProfile profile;
    DeploymentConfig config;
    std::shared_ptr<FunctionHandler> handler;
    std::unordered_map<std::uint64_t, InstanceState> instances;
    std::vector<std::uint64_t> idle_stack;  // most recently used at the back
    std::deque<std::uint64_t> queue;
    std::vector<InvocationRecord> history;
    std::vector<std::pair<double, int>> instance_trace;
    Counters counters;
    bool destroyed = false;
  };

  static void validate_config(const DeploymentConfig& c) {
    if (c.memory_mib < 128) throw ValidationError("allocated memory must be >= 128 MiB");
    if (c.concurrency < 1) throw ValidationError("function concurrency must be >= 1");
    if (!(c.timeout_ms > 0)) throw ValidationError("timeout must be > 0");
  }

  void check_time(double t) const {
    if (!(t >= clock_)) throw ValidationError("event time precedes the simulation clock");
  }

  Deployment& live(FunctionHandle h) {
    if (h.index >= deployments_.size() || deployments_[h.index]->destroyed)
      throw ValidationError("invalid deployment handle");
    return *deployments_[h.index];
  }
  const Deployment& at(FunctionHandle h) const {
    if (h.index >= deployments_.size()) throw ValidationError("invalid deployment handle");
    return *deployments_[h.index];
  }

  void trace(Deployment& d) {
    const int n = static_cast<int>(d.instances.size());
    d.instance_trace.emplace_back(clock_, n);
    d.counters.peak_instances = std::max(d.counters.peak_instances, n);
  }

  void retire(Deployment& d, std::uint64_t id) {
    d.instances.erase(id);
    auto it = std::find(d.idle_stack.begin(), d.idle_stack.end(), id);
    if (it != d.idle_stack.end()) d.idle_stack.erase(it);
    trace(d);
  }

  void on_arrival(std::uint64_t id) {
    auto& r = requests_.at(id);
    auto& d = *deployments_[r.function];
    if (d.destroyed) {
      finish_without_service(id, Status::error, 0.0);
      return;
    }
    if (!d.idle_stack.empty()) {
      const auto inst = d.idle_stack.back();
      d.idle_stack.pop_back();
      start(id, inst);
      return;
    }
    if (static_cast<int>(d.instances.size()) < d.config.concurrency) {
      InstanceState inst;
      inst.id = next_instance_++;
      inst.created_at = clock_;
      inst.last_used_at = clock_;
      d.instances.emplace(inst.id, inst);
      trace(d);
      start(id, inst.id);
      return;
    }
    if (options_.queue_timeout_ms > 0 && d.queue.size() < options_.queue_capacity) {
      r.queued = true;
      d.queue.push_back(id);
      schedule(clock_ + options_.queue_timeout_ms, [this, id] { on_queue_timeout(id); });
      return;
    }
    ++d.counters.throttles;
    finish_without_service(id, Status::throttled, options_.reject_latency_ms);
  }

  void on_queue_timeout(std::uint64_t id) {
    auto it = requests_.find(id);
    if (it == requests_.end() || !it->second.queued) return;
    auto& d = *deployments_[it->second.function];
    d.queue.erase(std::find(d.queue.begin(), d.queue.end(), id));
    it->second.queued = false;
    ++d.counters.throttles;
    finish_without_service(id, Status::throttled, options_.reject_latency_ms);
  }

  void finish_without_service(std::uint64_t id, Status status, double latency) {
    ++in_flight_;
    auto finish = [this, id, status] {
      --in_flight_;
      auto node = requests_.extract(id);
      auto& r = node.mapped();
      auto& d = *deployments_[r.function];
      InvocationOutcome out;
      out.status = status;
      out.total_ms = clock_ - r.arrival;
      d.history.push_back({r.arrival, status, std::nullopt, out.total_ms, 0, false});
      if (r.done) r.done(out);
    };
    if (latency > 0) schedule(clock_ + latency, std::move(finish));
    else finish();
  }

  void start(std::uint64_t id, std::uint64_t instance_id) {
    auto& r = requests_.at(id);
    auto& d = *deployments_[r.function];
    auto& inst = d.instances.at(instance_id);
    inst.busy = true;
    ++inst.idle_epoch;
    r.instance = instance_id;
    r.cold = inst.cold;
    r.service_start = clock_ + (inst.cold ? d.profile.cold_start_ms : 0.0);
    ++d.counters.invocations;
    if (inst.cold) ++d.counters.cold_starts;
    ++in_flight_;
    r.plan = d.handler->plan(InvocationContext{d.profile.name, r.payload, d.config, r.service_start}, rng_);
    const double compute_end = r.service_start + r.plan.compute_ms;
    schedule(compute_end, [this, id] { on_compute_done(id); });
    // Without calls the completion time is already known.
    const double deadline = r.arrival + d.config.timeout_ms;
    const bool has_calls = std::any_of(r.plan.stages.begin(), r.plan.stages.end(),
                                       [](const auto& s) { return !s.empty(); });
    if (has_calls || compute_end > deadline)
      schedule(std::max(deadline, clock_), [this, id] { on_request_timeout(id); });
  }

  void on_compute_done(std::uint64_t id) {
    auto it = requests_.find(id);
    if (it == requests_.end()) return;
    if (it->second.plan.failed) {
      complete(id, Status::error);
      return;
    }
    issue_stage(id);
  }

  void issue_stage(std::uint64_t id) {
    auto& r = requests_.at(id);
    while (r.stage < r.plan.stages.size() && r.plan.stages[r.stage].empty()) ++r.stage;
    if (r.stage >= r.plan.stages.size()) {
      complete(id, Status::ok);
      return;
    }
    const auto calls = r.plan.stages[r.stage];
    r.pending_calls = calls.size();
    for (const auto& call : calls) {
      submit(call.callee, call.payload, clock_, [this, id, callee = call.callee](const InvocationOutcome& o) {
        auto it = requests_.find(id);
        if (it == requests_.end()) return;  // caller already timed out
        auto& req = it->second;
        req.results.push_back({callee, o.status, o.response});
        if (--req.pending_calls == 0) {
          ++req.stage;
          issue_stage(id);
        }
      });
    }
  }

  void on_request_timeout(std::uint64_t id) {
    auto it = requests_.find(id);
    if (it == requests_.end() || it->second.queued) return;
    auto& d = *deployments_[it->second.function];
    ++d.counters.timeouts;
    complete(id, Status::timeout);
  }

  void complete(std::uint64_t id, Status status) {
    auto node = requests_.extract(id);
    auto& r = node.mapped();
    auto& d = *deployments_[r.function];
    --in_flight_;

    InvocationOutcome out;
    out.status = status;
    out.total_ms = clock_ - r.arrival;
    out.instance_id = r.instance;
    out.cold = r.cold;
    if (status == Status::ok) {
      ++d.counters.ok;
      out.execution_ms = clock_ - r.service_start;
      out.response = r.plan.respond ? r.plan.respond(r.results) : std::string{};
    }
    d.history.push_back({r.arrival, status, out.execution_ms, out.total_ms, r.instance, r.cold});

    release(d, r.instance);
    if (r.done) r.done(out);
  }

  void release(Deployment& d, std::uint64_t instance_id) {
    auto it = d.instances.find(instance_id);
    if (it == d.instances.end()) return;
    auto& inst = it->second;
    inst.busy = false;
    inst.cold = false;
    inst.last_used_at = clock_;
    if (inst.retiring || d.destroyed) {
      retire(d, instance_id);
      return;
    }
    while (!d.queue.empty()) {
      const auto next = d.queue.front();
      d.queue.pop_front();
      auto& q = requests_.at(next);
      q.queued = false;
      start(next, instance_id);
      return;
    }
    d.idle_stack.push_back(instance_id);
    const auto epoch = ++inst.idle_epoch;
    if (options_.auto_reap) {
      Deployment* dp = &d;
      schedule(clock_ + d.profile.idle_timeout_s * 1000.0, [this, dp, instance_id, epoch] {
        auto found = dp->instances.find(instance_id);
        if (found == dp->instances.end()) return;
        if (found->second.busy || found->second.idle_epoch != epoch) return;
        retire(*dp, instance_id);
      });
    }
  }

  Options options_;
  std::mt19937_64 rng_;
  double clock_ = 0.0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_request_ = 1;
  std::uint64_t next_instance_ = 1;
  std::size_t in_flight_ = 0;
  std::size_t unknown_pending_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::vector<std::unique_ptr<Deployment>> deployments_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<std::uint64_t, Request> requests_;
};

}  // namespace fncap::sim
