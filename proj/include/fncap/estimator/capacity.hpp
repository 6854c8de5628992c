#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fncap/loadgen/virtual_load.hpp"
#include "fncap/modeler/training.hpp"

namespace fncap::estimator {

using Json = nlohmann::ordered_json;

/// Eq. 1 style bound: whole executions per interval per instance, times C.
inline double ideal_capacity(double exec_ms, int concurrency, double interval_ms) {
  if (!(exec_ms > 0)) throw ValidationError("execution time must be > 0");
  if (concurrency < 0) throw ValidationError("concurrency must be >= 0");
  if (!(interval_ms > 0)) throw ValidationError("interval must be > 0");
  return std::floor(interval_ms / exec_ms) * concurrency;
}

struct CapacityEstimate {
  std::string function;
  DeploymentConfig config;
  Slo slo;
  double fc_rps = 0.0;
  std::string method;                // "ideal", "measured" or "model:<family>"
  std::optional<double> confidence;  // test R^2 of the model
  std::vector<std::string> warnings;
  std::vector<std::string> diagnostics;
};

inline Json to_json(const CapacityEstimate& e) {
  Json j;
  j["function"] = e.function;
  j["config"] = {{"memory_mib", e.config.memory_mib},
                 {"concurrency", e.config.concurrency},
                 {"timeout_ms", e.config.timeout_ms}};
  j["slo"] = {{"percentile", e.slo.percentile}, {"max_ms", e.slo.max_ms}};
  j["fc_rps"] = e.fc_rps;
  j["method"] = e.method;
  j["confidence"] = e.confidence ? Json(*e.confidence) : Json();
  j["warnings"] = e.warnings;
  j["diagnostics"] = e.diagnostics;
  return j;
}

inline CapacityEstimate ideal_estimate(const FunctionProfile& profile, const DeploymentConfig& config,
                                       const Slo& slo) {
  CapacityEstimate e{profile.name, config, slo};
  e.method = "ideal";
  e.fc_rps = ideal_capacity(sim::duration_model(profile, config.memory_mib), config.concurrency, 1000.0);
  return e;
}

/// Deploys the function under test on a fresh platform and returns its handle.
using Deployer = std::function<sim::FunctionHandle(sim::Platform&, const DeploymentConfig&)>;

inline Deployer bare_deployer(const FunctionProfile& profile) {
  return [profile](sim::Platform& p, const DeploymentConfig& c) { return p.deploy(profile, c); };
}

struct MeasureOptions {
  std::uint64_t seed = 1;
  int vu_max = 500;
  int steady_windows = 3;
  double window_s = 0.0;           // 0 = max(10 s, 20 mean executions)
  double max_failure_fraction = 0.01;
  std::string payload = "{}";
};

struct LevelResult {
  int vus = 0;
  bool pass = false;
  double ok_rps = 0.0;
  double worst_p95_ms = 0.0;
  double failure_fraction = 0.0;
};

struct Measurement {
  CapacityEstimate estimate;
  std::vector<LevelResult> levels;  // in the order they were run
  int best_vus = 0;
};

/// Runs one offered VU level for one ramp window plus `steady_windows`
/// windows on a fresh platform. The level passes when every steady window has
/// p95 execution time within the SLO and at most the allowed failure share.
inline LevelResult run_level(const Deployer& deploy, const DeploymentConfig& config, const Slo& slo, int vus,
                             double window_s, const MeasureOptions& options) {
  sim::Platform platform({.seed = options.seed + static_cast<std::uint64_t>(vus)});
  const auto h = deploy(platform, config);
  const int windows = options.steady_windows + 1;
  const double duration = window_s * windows;
  const auto log = loadgen::run_load(platform, h, {{window_s * 0.1, vus}, {duration - window_s * 0.1, vus}},
                                     options.payload);
  LevelResult r;
  r.vus = vus;
  r.pass = true;
  std::size_t ok = 0, total = 0;
  for (int w = 1; w < windows; ++w) {
    const loadgen::Window win{w * window_s * 1000, (w + 1) * window_s * 1000};
    const auto t = loadgen::throughput(log, win);
    ok += t.ok;
    total += t.total;
    const auto exec = loadgen::ok_durations(log, win);
    if (exec.empty()) {
      r.pass = false;
      continue;
    }
    const double p95 = loadgen::nearest_rank(exec, slo.percentile);
    r.worst_p95_ms = std::max(r.worst_p95_ms, p95);
    if (p95 > slo.max_ms || t.failure_fraction > options.max_failure_fraction) r.pass = false;
  }
  r.ok_rps = static_cast<double>(ok) / (window_s * options.steady_windows);
  r.failure_fraction = total ? static_cast<double>(total - ok) / static_cast<double>(total) : 1.0;
  return r;
}

/// Largest sustainable load under the SLO: galloping search from one VU up
/// to vu_max, then bisection between the last passing and first failing level.
inline Measurement measure_capacity(const Deployer& deploy, const FunctionProfile& profile,
                                    const DeploymentConfig& config, const Slo& slo,
                                    const MeasureOptions& options = {}) {
  if (!(slo.max_ms > 0)) throw ValidationError("SLO max_ms must be > 0");
  if (options.vu_max < 1) throw ValidationError("vu_max must be >= 1");
  const double mean_exec_s = sim::duration_model(profile, config.memory_mib) / 1000.0;
  const double window_s = options.window_s > 0 ? options.window_s : std::max(10.0, std::ceil(20 * mean_exec_s));

  Measurement m;
  m.estimate = CapacityEstimate{profile.name, config, slo};
  m.estimate.method = "measured";
  std::map<int, LevelResult> seen;
  auto level = [&](int v) -> const LevelResult& {
    auto it = seen.find(v);
    if (it != seen.end()) return it->second;
    auto r = run_level(deploy, config, slo, v, window_s, options);
    m.levels.push_back(r);
    return seen.emplace(v, r).first->second;
  };

  if (!level(1).pass) {
    const auto& r = seen.at(1);
    m.estimate.diagnostics.push_back("no passing load level: one VU gives p95 " + format_double(r.worst_p95_ms) +
                                     " ms against an SLO of " + format_double(slo.max_ms) + " ms");
    return m;
  }
  int good = 1;
  int bad = 0;
  while (good < options.vu_max) {
    const int next = std::min(good * 2, options.vu_max);
    if (level(next).pass) {
      good = next;
    } else {
      bad = next;
      break;
    }
  }
  if (bad > 0) {
    while (bad - good > 1) {
      const int mid = good + (bad - good) / 2;
      (level(mid).pass ? good : bad) = mid;
    }
  } else {
    m.estimate.warnings.push_back("capacity search reached vu_max without failing");
  }
  m.best_vus = good;
  m.estimate.fc_rps = seen.at(good).ok_rps;
  return m;
}

inline Measurement measure_capacity(const FunctionProfile& profile, const DeploymentConfig& config, const Slo& slo,
                                    const MeasureOptions& options = {}) {
  return measure_capacity(bare_deployer(profile), profile, config, slo, options);
}

/// Fills the features a capacity query does not fix: memory_usage from a
/// least-squares line on allocated memory, execution time per memory from the
/// training means, and the hull of the training grid.
class FeatureImputer {
 public:
  FeatureImputer() = default;

  explicit FeatureImputer(const modeler::Dataset& train) {
    if (train.rows() < 1) throw ValidationError("imputer needs training rows");
    const modeler::VectorXd alloc = train.x.col(2);
    const modeler::VectorXd usage = train.x.col(3);
    const double am = alloc.mean();
    const double um = usage.mean();
    const double var = (alloc.array() - am).square().sum();
    slope_ = var > 0 ? ((alloc.array() - am) * (usage.array() - um)).sum() / var : 0.0;
    intercept_ = um - slope_ * am;
    std::map<int, std::pair<double, int>> per_memory;
    for (Eigen::Index r = 0; r < train.rows(); ++r) {
      auto& [sum, n] = per_memory[static_cast<int>(std::lround(train.x(r, 2)))];
      sum += train.x(r, 1);
      ++n;
    }
    for (const auto& [mem, acc] : per_memory) exec_by_memory_[mem] = acc.first / acc.second;
    memory_range_ = {alloc.minCoeff(), alloc.maxCoeff()};
    concurrency_range_ = {train.x.col(4).minCoeff(), train.x.col(4).maxCoeff()};
    exec_range_ = {train.x.col(1).minCoeff(), train.x.col(1).maxCoeff()};
  }

  double memory_usage(int memory_mib) const {
    return std::clamp(intercept_ + slope_ * memory_mib, 0.0, static_cast<double>(memory_mib));
  }

  /// Training-mean execution time, linearly interpolated between measured
  /// memory sizes and held constant beyond them.
  double execution_ms(int memory_mib) const {
    if (exec_by_memory_.empty()) throw Error("imputer has no execution data");
    auto hi = exec_by_memory_.lower_bound(memory_mib);
    if (hi == exec_by_memory_.end()) return std::prev(hi)->second;
    if (hi->first == memory_mib || hi == exec_by_memory_.begin()) return hi->second;
    auto lo = std::prev(hi);
    const double f = static_cast<double>(memory_mib - lo->first) / (hi->first - lo->first);
    return lo->second + f * (hi->second - lo->second);
  }

  bool inside_grid(const DeploymentConfig& c) const {
    return c.memory_mib >= memory_range_.first && c.memory_mib <= memory_range_.second &&
           c.concurrency >= concurrency_range_.first && c.concurrency <= concurrency_range_.second;
  }

  bool inside_exec_range(double exec_ms) const { return exec_ms >= exec_range_.first && exec_ms <= exec_range_.second; }

  Json to_json() const {
    Json exec = Json::object();
    for (const auto& [mem, v] : exec_by_memory_) exec[std::to_string(mem)] = v;
    return {{"memory_usage_slope", slope_},
            {"memory_usage_intercept", intercept_},
            {"exec_ms_by_memory", exec},
            {"memory_range", {memory_range_.first, memory_range_.second}},
            {"concurrency_range", {concurrency_range_.first, concurrency_range_.second}},
            {"exec_range", {exec_range_.first, exec_range_.second}}};
  }

  static FeatureImputer from_json(const Json& j) {
    try {
      FeatureImputer f;
      f.slope_ = j.at("memory_usage_slope").get<double>();
      f.intercept_ = j.at("memory_usage_intercept").get<double>();
      for (const auto& [mem, v] : j.at("exec_ms_by_memory").items()) f.exec_by_memory_[std::stoi(mem)] = v.get<double>();
      f.memory_range_ = {j.at("memory_range").at(0).get<double>(), j.at("memory_range").at(1).get<double>()};
      f.concurrency_range_ = {j.at("concurrency_range").at(0).get<double>(),
                              j.at("concurrency_range").at(1).get<double>()};
      f.exec_range_ = {j.at("exec_range").at(0).get<double>(), j.at("exec_range").at(1).get<double>()};
      return f;
    } catch (const std::exception& e) {
      throw ParseError(std::string("malformed imputer: ") + e.what());
    }
  }

 private:
  double slope_ = 0.0;
  double intercept_ = 0.0;
  std::map<int, double> exec_by_memory_;
  std::pair<double, double> memory_range_{0, 0};
  std::pair<double, double> concurrency_range_{0, 0};
  std::pair<double, double> exec_range_{0, 0};
};

/// How the execution_duration feature of a capacity query is chosen.
enum class ExecFeature {
  slo,             // the SLO bound itself: capacity at the SLO boundary
  imputed_capped,  // training mean at this memory size, capped at the SLO bound
};

inline ExecFeature exec_feature_from_string(const std::string& s) {
  if (s == "slo") return ExecFeature::slo;
  if (s == "imputed_capped") return ExecFeature::imputed_capped;
  throw ValidationError("unknown execution feature mode '" + s + "' (expected slo or imputed_capped)");
}

inline CapacityEstimate estimate_capacity(const modeler::TrainedModel& model, const DeploymentConfig& config,
                                          const Slo& slo, const FeatureImputer& imputer, double window_s = 60.0,
                                          ExecFeature exec_mode = ExecFeature::slo) {
  if (!(slo.max_ms > 0)) throw ValidationError("SLO max_ms must be > 0");
  if (!(window_s > 0)) throw ValidationError("window must be > 0");
  CapacityEstimate e{model.function, config, slo};
  e.method = std::string("model:") + modeler::to_string(model.family);
  e.confidence = model.test_r2;
  double exec = slo.max_ms;
  if (exec_mode == ExecFeature::imputed_capped) {
    const double imputed = imputer.execution_ms(config.memory_mib);
    if (imputed > slo.max_ms)
      e.warnings.push_back("mean execution time " + format_double(imputed) + " ms at this memory size exceeds the SLO bound");
    exec = std::min(slo.max_ms, imputed);
  }
  modeler::MatrixXd x(1, modeler::kFeatureCount);
  x << config.concurrency, exec, config.memory_mib, imputer.memory_usage(config.memory_mib), config.concurrency;
  const double raw = model.predict(x)(0) / window_s;
  if (!imputer.inside_grid(config))
    e.warnings.push_back("configuration (" + std::to_string(config.memory_mib) + " MiB, C=" +
                         std::to_string(config.concurrency) + ") lies outside the training grid; extrapolating");
  if (!imputer.inside_exec_range(exec))
    e.warnings.push_back("execution_duration feature " + format_double(exec) +
                         " ms lies outside the trained range; extrapolating");
  if (raw < 0) e.warnings.push_back("negative model prediction " + format_double(raw) + " rps clamped to 0");
  e.fc_rps = std::max(0.0, raw);
  return e;
}

}  // namespace fncap::estimator
