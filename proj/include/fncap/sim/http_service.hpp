#pragma once

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <future>
#include <mutex>
#include <string>
#include <thread>

#include "fncap/format.hpp"
#include "fncap/sim/platform.hpp"

namespace fncap::sim {

/// Header names carrying outcome metadata on /invoke responses.
inline constexpr const char* kExecHeader = "x-exec-ms";
inline constexpr const char* kTotalHeader = "x-total-ms";
inline constexpr const char* kColdHeader = "x-cold";
inline constexpr const char* kInstanceHeader = "x-instance";
inline constexpr const char* kStatusHeader = "x-status";

/// HTTP facade over a Platform. Virtual time follows the wall clock 1:1 from
/// the moment the service starts; a driver thread advances the simulation and
/// all platform access is serialized through one mutex.
///
///   POST /invoke/{function}   body = payload
///   GET  /metrics/{function}  JSON counters
///   PUT  /config/{function}   JSON {memory_mib, concurrency, timeout_ms}
class HttpService {
 public:
  explicit HttpService(Platform& platform, std::size_t worker_threads = 512)
      : platform_(platform) {
    server_.new_task_queue = [worker_threads] { return new httplib::ThreadPool(worker_threads); };
    server_.set_keep_alive_max_count(1'000'000);
    server_.set_tcp_nodelay(true);
    server_.Post(R"(/invoke/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle_invoke(req.matches[1], req.body, res);
    });
    server_.Get(R"(/metrics/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle_metrics(req.matches[1], res);
    });
    server_.Put(R"(/config/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle_config(req.matches[1], req.body, res);
    });
  }

  ~HttpService() { stop(); }

  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds and starts serving in background threads; port 0 picks a free
  /// port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    {
      std::lock_guard lock(mutex_);
      origin_virtual_ = platform_.now();
    }
    origin_wall_ = std::chrono::steady_clock::now();
    running_ = true;
    driver_ = std::thread([this] { drive(); });
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    server_.stop();
    if (listener_.joinable()) listener_.join();
    if (driver_.joinable()) driver_.join();
  }

  /// Blocks the calling thread until stop() is called from elsewhere.
  void wait() {
    if (listener_.joinable()) listener_.join();
  }

 private:
  double virtual_now() const {
    const auto elapsed = std::chrono::steady_clock::now() - origin_wall_;
    return origin_virtual_ + std::chrono::duration<double, std::milli>(elapsed).count();
  }

  void drive() {
    while (running_) {
      {
        std::lock_guard lock(mutex_);
        platform_.run_until(std::max(virtual_now(), platform_.now()));
      }
      std::this_thread::sleep_for(std::chrono::microseconds(500));
    }
  }

  void handle_invoke(const std::string& name, const std::string& body, httplib::Response& res) {
    std::promise<InvocationOutcome> promise;
    auto future = promise.get_future();
    {
      std::lock_guard lock(mutex_);
      const auto h = platform_.find(name);
      if (!h) {
        res.status = 404;
        res.set_content("unknown function '" + name + "'\n", "text/plain");
        return;
      }
      const double at = std::max(virtual_now(), platform_.now());
      platform_.submit(*h, body, at, [&promise](const InvocationOutcome& o) { promise.set_value(o); });
    }
    const auto out = future.get();
    switch (out.status) {
      case Status::ok: res.status = 200; break;
      case Status::throttled: res.status = 429; break;
      case Status::timeout: res.status = 504; break;
      case Status::error: res.status = 500; break;
    }
    res.set_header(kStatusHeader, to_string(out.status));
    if (out.execution_ms) res.set_header(kExecHeader, format_double(*out.execution_ms));
    res.set_header(kTotalHeader, format_double(out.total_ms));
    res.set_header(kColdHeader, out.cold ? "1" : "0");
    res.set_header(kInstanceHeader, std::to_string(out.instance_id));
    res.set_content(out.response, "application/octet-stream");
  }

  void handle_metrics(const std::string& name, httplib::Response& res) {
    std::lock_guard lock(mutex_);
    const auto h = platform_.find(name);
    if (!h) {
      res.status = 404;
      return;
    }
    const auto& c = platform_.counters(*h);
    const auto& cfg = platform_.config(*h);
    nlohmann::json j = {
        {"function", name},
        {"now_ms", platform_.now()},
        {"instances", platform_.instance_count(*h)},
        {"peak_instances", c.peak_instances},
        {"invocations", c.invocations},
        {"ok", c.ok},
        {"throttles", c.throttles},
        {"timeouts", c.timeouts},
        {"cold_starts", c.cold_starts},
        {"allocated_memory_mib", cfg.memory_mib},
        {"function_concurrency", cfg.concurrency},
        {"timeout_ms", cfg.timeout_ms},
    };
    res.set_content(j.dump(), "application/json");
  }

  void handle_config(const std::string& name, const std::string& body, httplib::Response& res) {
    std::lock_guard lock(mutex_);
    const auto h = platform_.find(name);
    if (!h) {
      res.status = 404;
      return;
    }
    try {
      const auto j = nlohmann::json::parse(body);
      DeploymentConfig cfg = platform_.config(*h);
      cfg.memory_mib = j.value("memory_mib", cfg.memory_mib);
      cfg.concurrency = j.value("concurrency", cfg.concurrency);
      cfg.timeout_ms = j.value("timeout_ms", cfg.timeout_ms);
      platform_.update(*h, cfg);
      res.status = 204;
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(std::string(e.what()) + "\n", "text/plain");
    }
  }

  Platform& platform_;
  httplib::Server server_;
  std::mutex mutex_;
  std::atomic<bool> running_{false};
  std::thread driver_;
  std::thread listener_;
  double origin_virtual_ = 0.0;
  std::chrono::steady_clock::time_point origin_wall_;
};

}  // namespace fncap::sim
