#pragma once

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fncap/core/plan.hpp"
#include "fncap/estimator/report.hpp"
#include "fncap/loadgen/virtual_load.hpp"
#include "fncap/metrics/metrics.hpp"
#include "fncap/sandbox/sandboxer.hpp"

namespace fncap::pipeline {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("failed writing " + path.string());
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct LoadedPlan {
  TestPlan plan;
  std::string digest;  // fnv1a64 of the plan file bytes
  std::string path;
};

inline LoadedPlan load_plan(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ValidationError("plan file " + path.string() + " not found");
  const auto text = read_file(path);
  return {parse_test_plan(text), to_hex(fnv1a64(text)), path.string()};
}

/// Merges one command's section into <out>/manifest.json.
inline void update_manifest(const fs::path& out_dir, const LoadedPlan* plan, const std::string& section,
                            Json body) {
  const auto path = out_dir / "manifest.json";
  Json manifest = Json::object();
  if (fs::exists(path)) {
    manifest = Json::parse(read_file(path), nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object()) manifest = Json::object();
  }
  manifest["version"] = 1;
  if (plan) {
    manifest["plan"] = {{"path", plan->path}, {"digest", plan->digest}};
    manifest["seed"] = plan->plan.seed;
  }
  body["finished_at"] = utc_timestamp();
  manifest[section] = std::move(body);
  write_file(path, manifest.dump(2) + "\n");
}

inline std::vector<std::string> recording_payloads(std::size_t n = 3) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("{\"request\":" + std::to_string(i) + "}");
  return out;
}

struct RecordSummary {
  fs::path store_path;
  std::size_t exchanges = 0;
  std::vector<std::string> warnings;
};

/// Deploys the full application behind the recording proxy, sends the
/// recording payloads to the entry function and writes the exchange store.
inline RecordSummary cmd_record(const LoadedPlan& lp, const fs::path& out_dir) {
  const auto& plan = lp.plan;
  const auto grid = expand_grid(plan);
  sim::Platform platform({.seed = plan.seed});
  const auto rec = sandbox::record_run(platform, plan.app, recording_payloads(), grid.front());
  RecordSummary s;
  s.store_path = out_dir / "exchanges.ndjson";
  std::ostringstream os;
  rec.store->write_ndjson(os);
  write_file(s.store_path, os.str());
  s.exchanges = rec.store->size();
  s.warnings = rec.warnings;
  update_manifest(out_dir, &lp, "record",
                  {{"exchange_store", s.store_path.string()}, {"exchanges", s.exchanges}, {"warnings", s.warnings}});
  return s;
}

inline sandbox::ExchangeStore load_or_record(const LoadedPlan& lp, const fs::path& out_dir) {
  const auto path = out_dir / "exchanges.ndjson";
  if (!fs::exists(path)) cmd_record(lp, out_dir);
  std::ifstream in(path);
  return sandbox::ExchangeStore::read_ndjson(in);
}

/// One VU level per sampling window, rising linearly from min(vu_min, C) to
/// min(vu_max, C). Each window opens with a short ramp to its level.
inline std::vector<loadgen::LoadStage> staircase(const TestPlan& plan, int concurrency) {
  const double window = plan.sampling_interval_s;
  const auto windows = static_cast<int>(std::floor(plan.duration_s / window + 1e-9));
  if (windows < 1) throw ValidationError("duration_s must cover at least one sampling interval");
  const int hi = std::max(1, std::min(plan.vus.max, concurrency));
  const int lo = std::max(1, std::min(plan.vus.min, hi));
  const double ramp = std::min(1.0, 0.05 * window);
  std::vector<loadgen::LoadStage> stages;
  for (int i = 0; i < windows; ++i) {
    const double f = windows == 1 ? 1.0 : static_cast<double>(i) / (windows - 1);
    const int level = lo + static_cast<int>(std::lround((hi - lo) * f));
    stages.push_back({ramp, level});
    stages.push_back({window - ramp, level});
  }
  return stages;
}

inline std::string cell_name(const DeploymentConfig& c) {
  return "mem" + std::to_string(c.memory_mib) + "_conc" + std::to_string(c.concurrency);
}

inline std::uint64_t cell_seed(std::uint64_t seed, const std::string& fn, const DeploymentConfig& c) {
  return fnv1a64(fn + "/" + cell_name(c), seed);
}

struct CellResult {
  std::string function;
  DeploymentConfig config;
  fs::path metrics_path;
  fs::path log_path;
  std::size_t windows = 0;
  std::size_t requests = 0;
  std::string error;
};

/// Sandbox -> staircase load -> windowed metrics for one grid cell, on its
/// own platform. Writes the metrics CSV and the request log.
inline CellResult run_cell(const TestPlan& plan, const sandbox::SandboxPlan& sb, const DeploymentConfig& base,
                           const fs::path& out_dir) {
  CellResult r;
  r.function = sb.target;
  r.config = base;
  r.config.timeout_ms = plan.timeout_ms;
  const auto name = cell_name(r.config);
  r.metrics_path = out_dir / "metrics" / sb.target / (name + ".csv");
  r.log_path = out_dir / "logs" / sb.target / (name + ".csv");
  try {
    const auto seed = cell_seed(plan.seed, sb.target, r.config);
    sim::Platform platform({.seed = seed});
    const auto dep = sandbox::deploy_sandbox(platform, plan.app, sb, r.config);
    const auto stages = staircase(plan, r.config.concurrency);
    const auto log = loadgen::run_load(platform, dep.target, stages, "{\"request\":0}");
    const double interval = plan.sampling_interval_s * 1000.0;
    const auto windows = stages.size() / 2;
    platform.run_until(std::max(platform.now(), interval * static_cast<double>(windows)));
    const auto series = metrics::sample_series(platform, dep.target, 0.0, interval, windows, {.seed = seed});
    write_file(r.metrics_path, metrics::to_csv(series));
    write_file(r.log_path, log.to_csv());
    r.windows = series.size();
    r.requests = log.size();
    platform.destroy(dep.target);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

struct ExperimentOptions {
  std::vector<std::string> targets;  // empty = every function of the app
  int parallel = 1;
};

struct ExperimentSummary {
  std::vector<CellResult> cells;
  std::size_t failed() const {
    std::size_t n = 0;
    for (const auto& c : cells) n += !c.error.empty();
    return n;
  }
};

template <class F>
void run_parallel(std::size_t count, int threads, F&& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) fn(i);
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1 || count <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(n, count); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline ExperimentSummary cmd_experiment(const LoadedPlan& lp, const fs::path& out_dir,
                                        const ExperimentOptions& options = {}) {
  const auto& plan = lp.plan;
  std::vector<std::string> targets = options.targets;
  if (targets.empty())
    for (const auto& f : plan.app.functions) targets.push_back(f.name);
  for (const auto& t : targets)
    if (!plan.app.find(t)) throw ValidationError("unknown target function '" + t + "'");

  const auto store = load_or_record(lp, out_dir);
  std::vector<sandbox::SandboxPlan> sandboxes;
  for (const auto& t : targets) sandboxes.push_back(sandbox::build_sandbox(plan.app, t, store));

  const auto grid = expand_grid(plan);
  struct Job {
    std::size_t sandbox;
    DeploymentConfig config;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < sandboxes.size(); ++s)
    for (const auto& c : grid) jobs.push_back({s, c});

  ExperimentSummary summary;
  summary.cells.resize(jobs.size());
  run_parallel(jobs.size(), options.parallel, [&](std::size_t i) {
    summary.cells[i] = run_cell(plan, sandboxes[jobs[i].sandbox], jobs[i].config, out_dir);
  });

  Json cells = Json::array();
  for (const auto& c : summary.cells) {
    Json cell = {{"function", c.function}, {"memory_mib", c.config.memory_mib}, {"concurrency", c.config.concurrency}};
    if (c.error.empty()) {
      cell["metrics"] = c.metrics_path.string();
      cell["log"] = c.log_path.string();
      cell["windows"] = c.windows;
      cell["requests"] = c.requests;
    } else {
      cell["error"] = c.error;
    }
    cells.push_back(std::move(cell));
  }
  update_manifest(out_dir, &lp, "experiment",
                  {{"targets", targets},
                   {"memory_usage_model", metrics::kMemoryUsageModel},
                   {"cells", std::move(cells)},
                   {"failed_cells", summary.failed()}});
  return summary;
}

/// Sampling interval in seconds, from the spacing of consecutive windows of
/// one series. Falls back to 60 s when no series has two windows.
inline double infer_window_s(const std::vector<metrics::MetricsSample>& samples) {
  std::optional<double> step;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const auto& a = samples[i - 1];
    const auto& b = samples[i];
    if (a.allocated_memory_mib != b.allocated_memory_mib || a.function_concurrency != b.function_concurrency) continue;
    const double d = b.window_start_ms - a.window_start_ms;
    if (d <= 0) continue;
    if (step && std::abs(d - *step) > 1e-6)
      throw ValidationError("metrics mix sampling intervals of " + format_double(*step / 1000) + " s and " +
                            format_double(d / 1000) + " s");
    step = d;
  }
  return step ? *step / 1000.0 : 60.0;
}

/// Every metrics CSV of one function, concatenated in file-name order.
inline std::vector<metrics::MetricsSample> read_function_metrics(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<metrics::MetricsSample> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      auto part = metrics::read_csv(in);
      out.insert(out.end(), part.begin(), part.end());
    } catch (const ParseError& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
  }
  return out;
}

struct TrainOptions {
  std::uint64_t seed = 1;
  double window_s = 0.0;  // 0 = infer from window_start spacing
  modeler::DurationStat duration = modeler::DurationStat::mean;
  std::vector<modeler::Family> families{modeler::kFamilies.begin(), modeler::kFamilies.end()};
  std::vector<std::string> functions;  // empty = every directory under metrics/
  int parallel = 1;
};

struct TrainSummary {
  estimator::AccuracyReport report;
  fs::path report_json;
  fs::path report_text;
};

inline TrainSummary cmd_train(const fs::path& metrics_dir, const fs::path& out_dir, const TrainOptions& options = {}) {
  if (!fs::is_directory(metrics_dir)) throw ValidationError("metrics directory " + metrics_dir.string() + " not found");
  std::vector<std::string> functions = options.functions;
  if (functions.empty()) {
    for (const auto& e : fs::directory_iterator(metrics_dir))
      if (e.is_directory()) functions.push_back(e.path().filename().string());
    std::sort(functions.begin(), functions.end());
  }
  if (functions.empty()) throw ValidationError("no metrics found under " + metrics_dir.string());

  TrainSummary summary;
  std::mutex mutex;
  Json artifacts = Json::object();
  struct Job {
    std::string fn;
    modeler::Family family;
  };
  std::map<std::string, modeler::Split> splits;
  for (const auto& fn : functions) {
    try {
      const auto samples = read_function_metrics(metrics_dir / fn);
      const double window_s = options.window_s > 0 ? options.window_s : infer_window_s(samples);
      const auto data = modeler::to_dataset(samples, options.duration);
      auto split = modeler::preprocess(data, {.seed = options.seed});
      const estimator::FeatureImputer imputer(split.train);
      Json features = {{"window_s", window_s},
                       {"duration_stat", options.duration == modeler::DurationStat::mean ? "mean" : "p95"},
                       {"rows", split.input_rows},
                       {"outliers_removed", split.outliers_removed},
                       {"train_rows", split.train.rows()},
                       {"test_rows", split.test.rows()},
                       {"imputer", imputer.to_json()}};
      write_file(out_dir / "models" / fn / "features.json", features.dump(2) + "\n");
      splits.emplace(fn, std::move(split));
    } catch (const Error& e) {
      summary.report.function_errors[fn] = e.what();
    }
  }
  std::vector<Job> jobs;
  for (const auto& [fn, _] : splits)
    for (auto family : options.families) jobs.push_back({fn, family});

  run_parallel(jobs.size(), options.parallel, [&](std::size_t i) {
    const auto& job = jobs[i];
    const auto& split = splits.at(job.fn);
    const auto path = out_dir / "models" / job.fn / (std::string(modeler::to_string(job.family)) + ".json");
    try {
      auto model = modeler::train_family(split.train, split.test, job.family, {}, options.seed);
      model.function = job.fn;
      write_file(path, modeler::to_json(model).dump() + "\n");
      std::lock_guard lock(mutex);
      summary.report.add(job.fn, model);
    } catch (const Error& e) {
      std::lock_guard lock(mutex);
      estimator::FamilyScore failed;
      failed.error = e.what();
      summary.report.rows[job.fn][job.family] = failed;
    }
  });

  for (const auto& [fn, cols] : summary.report.rows) {
    Json files = Json::object();
    for (const auto& [family, score] : cols)
      if (score.error.empty())
        files[modeler::to_string(family)] =
            (out_dir / "models" / fn / (std::string(modeler::to_string(family)) + ".json")).string();
    artifacts[fn] = files;
  }
  summary.report_json = out_dir / "report.json";
  summary.report_text = out_dir / "report.txt";
  write_file(summary.report_json, estimator::to_json(summary.report).dump(2) + "\n");
  write_file(summary.report_text, estimator::to_text(summary.report));
  update_manifest(out_dir, nullptr, "train",
                  {{"metrics_dir", metrics_dir.string()},
                   {"models", artifacts},
                   {"report_json", summary.report_json.string()},
                   {"report_text", summary.report_text.string()},
                   {"seed", options.seed}});
  return summary;
}

struct EstimateRequest {
  std::string function;
  DeploymentConfig config;
  Slo slo;
  std::optional<modeler::Family> family;  // default: best test R^2
  estimator::ExecFeature exec_mode = estimator::ExecFeature::slo;
  bool measure = false;
  std::uint64_t seed = 1;
  int vu_max = 500;
};

struct EstimateResult {
  estimator::CapacityEstimate ideal;
  estimator::CapacityEstimate model;
  std::optional<estimator::CapacityEstimate> measured;
};

inline modeler::TrainedModel load_model(const fs::path& models_dir, const std::string& fn,
                                        std::optional<modeler::Family> family) {
  const auto dir = models_dir / fn;
  if (!fs::is_directory(dir)) throw ValidationError("no models for function '" + fn + "' in " + models_dir.string());
  if (family) {
    const auto path = dir / (std::string(modeler::to_string(*family)) + ".json");
    if (!fs::exists(path)) throw ValidationError("no " + std::string(modeler::to_string(*family)) + " model for '" + fn + "'");
    return modeler::model_from_json(Json::parse(read_file(path)));
  }
  std::optional<modeler::TrainedModel> best;
  for (auto f : modeler::kFamilies) {
    const auto path = dir / (std::string(modeler::to_string(f)) + ".json");
    if (!fs::exists(path)) continue;
    auto m = modeler::model_from_json(Json::parse(read_file(path)));
    if (!best || m.test_r2.value_or(-1e300) > best->test_r2.value_or(-1e300)) best = std::move(m);
  }
  if (!best) throw ValidationError("no model artifacts for '" + fn + "'");
  return *best;
}

inline EstimateResult cmd_estimate(const fs::path& models_dir, const ApplicationGraph& app,
                                   const EstimateRequest& req) {
  const auto* profile = app.find(req.function);
  if (!profile) throw ValidationError("unknown function '" + req.function + "'");
  if (!(req.slo.max_ms > 0)) throw ValidationError("SLO max_ms must be > 0");
  const auto model = load_model(models_dir, req.function, req.family);
  const auto features = Json::parse(read_file(models_dir / req.function / "features.json"));
  const auto imputer = estimator::FeatureImputer::from_json(features.at("imputer"));
  EstimateResult r;
  r.ideal = estimator::ideal_estimate(*profile, req.config, req.slo);
  r.model = estimator::estimate_capacity(model, req.config, req.slo, imputer, features.at("window_s").get<double>(),
                                         req.exec_mode);
  if (req.measure) {
    sim::Platform recorder({.seed = req.seed});
    const auto rec = sandbox::record_run(recorder, app, recording_payloads(), req.config);
    const auto sb = sandbox::build_sandbox(app, req.function, *rec.store);
    estimator::Deployer deploy = [&](sim::Platform& p, const DeploymentConfig& c) {
      return sandbox::deploy_sandbox(p, app, sb, c).target;
    };
    r.measured = estimator::measure_capacity(deploy, *profile, req.config, req.slo,
                                             {.seed = req.seed, .vu_max = req.vu_max})
                     .estimate;
  }
  return r;
}

}  // namespace fncap::pipeline
