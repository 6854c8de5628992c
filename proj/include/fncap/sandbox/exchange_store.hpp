#pragma once

#include <json.hpp>

#include <atomic>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "fncap/common.hpp"

namespace fncap::sandbox {

inline constexpr int kExchangeFormatVersion = 1;

/// Structured (JSON) payloads are re-serialized with sorted keys so field
/// order does not change the key; anything else is used raw.
inline std::string canonical_payload(const std::string& payload) {
  if (!payload.empty()) {
    auto parsed = nlohmann::json::parse(payload, nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_discarded()) return parsed.dump();
  }
  return payload;
}

inline std::string request_key(const std::string& callee, const std::string& payload) {
  std::uint64_t h = fnv1a64(callee);
  h = fnv1a64(std::string_view("\0", 1), h);
  return to_hex(fnv1a64(canonical_payload(payload), h));
}

struct RecordedExchange {
  std::string callee;
  std::string key;
  std::string response;
  double recorded_at = 0.0;

  bool operator==(const RecordedExchange&) const = default;
};

/// Recorded callee responses keyed by request_key; the latest recording wins
/// per key. Appends are thread safe.
class ExchangeStore {
 public:
  struct LookupStats {
    std::size_t exact_hits = 0;
    std::size_t fallback_hits = 0;
    std::size_t misses = 0;
  };

  ExchangeStore() = default;
  ExchangeStore(const ExchangeStore& other) {
    std::lock_guard lock(other.mutex_);
    by_key_ = other.by_key_;
    latest_ = other.latest_;
    next_order_ = other.next_order_;
  }

  void record(const std::string& callee, const std::string& payload, const std::string& response,
              double at_ms) {
    insert({callee, request_key(callee, payload), response, at_ms});
  }

  void insert(const RecordedExchange& ex) {
    std::lock_guard lock(mutex_);
    const auto order = next_order_++;
    by_key_[ex.key] = Entry{ex, order};
    auto& latest = latest_[ex.callee];
    const bool newer = latest.key.empty() || ex.recorded_at > latest.recorded_at ||
                       (ex.recorded_at == latest.recorded_at && order > latest.order);
    if (newer) latest = Latest{ex.key, ex.recorded_at, order};
  }

  std::optional<RecordedExchange> exact(const std::string& callee, const std::string& payload) const {
    std::lock_guard lock(mutex_);
    auto it = by_key_.find(request_key(callee, payload));
    if (it == by_key_.end() || it->second.exchange.callee != callee) return std::nullopt;
    return it->second.exchange;
  }

  std::optional<RecordedExchange> latest(const std::string& callee) const {
    std::lock_guard lock(mutex_);
    auto it = latest_.find(callee);
    if (it == latest_.end()) return std::nullopt;
    return by_key_.at(it->second.key).exchange;
  }

  bool covers(const std::string& callee) const {
    std::lock_guard lock(mutex_);
    return latest_.count(callee) > 0;
  }

  std::set<std::string> callees() const {
    std::lock_guard lock(mutex_);
    std::set<std::string> out;
    for (const auto& [callee, _] : latest_) out.insert(callee);
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return by_key_.size();
  }

  /// All exchanges ordered by (callee, key).
  std::vector<RecordedExchange> snapshot() const {
    std::lock_guard lock(mutex_);
    std::vector<RecordedExchange> out;
    for (const auto& [key, entry] : by_key_) out.push_back(entry.exchange);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.callee < b.callee; });
    return out;
  }

  LookupStats stats() const {
    return {exact_hits_.load(), fallback_hits_.load(), misses_.load()};
  }

  void count_exact() const { ++exact_hits_; }
  void count_fallback() const { ++fallback_hits_; }
  void count_miss() const { ++misses_; }

  /// One JSON object per line: {"v", "callee", "key", "response_b64", "ts"}.
  void write_ndjson(std::ostream& out) const {
    for (const auto& ex : snapshot()) {
      nlohmann::ordered_json j;
      j["v"] = kExchangeFormatVersion;
      j["callee"] = ex.callee;
      j["key"] = ex.key;
      j["response_b64"] = base64_encode(ex.response);
      j["ts"] = ex.recorded_at;
      out << j.dump() << '\n';
    }
  }

  static ExchangeStore read_ndjson(std::istream& in) {
    ExchangeStore store;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw ParseError("exchange store line is not JSON", row, 1);
      const int version = j.value("v", kExchangeFormatVersion);
      if (version != kExchangeFormatVersion)
        throw ParseError("unsupported exchange store version " + std::to_string(version), row, 1);
      try {
        store.insert({j.at("callee").get<std::string>(), j.at("key").get<std::string>(),
                      base64_decode(j.at("response_b64").get<std::string>()), j.at("ts").get<double>()});
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("exchange store line malformed: ") + e.what(), row, 1);
      }
    }
    return store;
  }

 private:
  struct Entry {
    RecordedExchange exchange;
    std::uint64_t order = 0;
  };
  struct Latest {
    std::string key;
    double recorded_at = 0.0;
    std::uint64_t order = 0;
  };

  mutable std::mutex mutex_;
  std::map<std::string, Entry> by_key_;
  std::map<std::string, Latest> latest_;
  std::uint64_t next_order_ = 0;
  mutable std::atomic<std::size_t> exact_hits_{0};
  mutable std::atomic<std::size_t> fallback_hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

/// Replays a recorded response: exact key first, then the most recent
/// recording for the callee. Throws when the callee was never recorded.
inline std::string mock_lookup(const ExchangeStore& store, const std::string& callee, const std::string& payload) {
  if (auto hit = store.exact(callee, payload)) {
    store.count_exact();
    return hit->response;
  }
  if (auto fallback = store.latest(callee)) {
    store.count_fallback();
    return fallback->response;
  }
  store.count_miss();
  throw Error("no recording for callee '" + callee + "'");
}

}  // namespace fncap::sandbox
