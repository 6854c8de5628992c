#pragma once

#include <httplib.h>

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "fncap/loadgen/request_log.hpp"
#include "fncap/loadgen/stages.hpp"
#include "fncap/sim/http_service.hpp"

namespace fncap::loadgen {

struct HttpTarget {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string function;
};

/// Closed-loop virtual users over HTTP, one thread per VU, wall-clock time.
/// Connection failures are logged as `error` entries and never stop the run.
inline RequestLog run_load_http(const HttpTarget& target, const std::vector<LoadStage>& stages,
                                const std::string& payload, const LoadOptions& options = {}) {
  const VuSchedule schedule(stages, options.start_vus);
  RequestLog log;
  const double end = schedule.total_ms();
  const auto origin = std::chrono::steady_clock::now();
  auto elapsed_ms = [origin] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - origin).count();
  };
  auto sleep_until_ms = [origin](double t) {
    std::this_thread::sleep_until(origin + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                               std::chrono::duration<double, std::milli>(t)));
  };
  const std::string path = "/invoke/" + target.function;

  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(schedule.max_vus()));
  for (int vu = 0; vu < schedule.max_vus(); ++vu) {
    workers.emplace_back([&, vu] {
      httplib::Client client(target.host, target.port);
      client.set_keep_alive(true);
      client.set_tcp_nodelay(true);
      client.set_read_timeout(std::chrono::seconds(120));
      while (true) {
        double now = elapsed_ms();
        if (now >= end) return;
        if (!(schedule.vus_at(now) > vu)) {
          const auto wake = schedule.activation(vu, now);
          if (!wake || *wake >= end) return;
          sleep_until_ms(*wake);
          continue;
        }
        const double sent = elapsed_ms();
        auto res = client.Post(path, payload, "application/octet-stream");
        const double took = elapsed_ms() - sent;
        RequestEntry e;
        e.ts_ms = sent;
        e.vu = vu;
        e.total_ms = took;
        if (!res) {
          e.status = Status::error;
          log.append(e);
          sleep_until_ms(elapsed_ms() + options.empty_response_backoff_ms);
          continue;
        }
        switch (res->status) {
          case 200: e.status = Status::ok; break;
          case 429: e.status = Status::throttled; break;
          case 504: e.status = Status::timeout; break;
          default: e.status = Status::error; break;
        }
        if (res->has_header(sim::kExecHeader)) e.exec_ms = parse_double(res->get_header_value(sim::kExecHeader));
        if (res->has_header(sim::kTotalHeader)) e.total_ms = parse_double(res->get_header_value(sim::kTotalHeader));
        e.cold = res->get_header_value(sim::kColdHeader) == "1";
        if (res->has_header(sim::kInstanceHeader))
          e.instance = parse_integer<std::uint64_t>(res->get_header_value(sim::kInstanceHeader));
        log.append(e);
      }
    });
  }
  for (auto& w : workers) w.join();
  return log;
}

}  // namespace fncap::loadgen
