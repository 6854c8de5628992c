#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "fncap/pipeline/pipeline.hpp"

using namespace fncap;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kValidation = 2 };

pipeline::LoadedPlan open_plan(const std::string& path, std::optional<std::uint64_t> seed) {
  auto lp = pipeline::load_plan(path);
  if (seed) lp.plan.seed = *seed;
  return lp;
}

void print_estimate(const char* label, const estimator::CapacityEstimate& e) {
  std::printf("%-9s %10.2f rps  [%s]", label, e.fc_rps, e.method.c_str());
  if (e.confidence) std::printf("  test R^2 %.3f", *e.confidence);
  std::printf("\n");
  for (const auto& w : e.warnings) std::printf("  warning: %s\n", w.c_str());
  for (const auto& d : e.diagnostics) std::printf("  note: %s\n", d.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Function capacity estimation on a simulated FaaS platform"};
  app.require_subcommand(1);

  std::string plan_path, out_dir = "out", metrics_dir, models_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> targets;
  int parallel = 1;

  auto* validate = app.add_subcommand("validate", "Check a test plan and print its grid");
  validate->add_option("--plan", plan_path, "Test plan YAML")->required();

  auto* record = app.add_subcommand("record", "Record callee exchanges of the full application");
  record->add_option("--plan", plan_path, "Test plan YAML")->required();
  record->add_option("--out", out_dir, "Output directory");
  record->add_option("--seed", seed, "Override the plan seed");

  auto* experiment = app.add_subcommand("experiment", "Load-test every grid cell of each target in a sandbox");
  experiment->add_option("--plan", plan_path, "Test plan YAML")->required();
  experiment->add_option("--out", out_dir, "Output directory");
  experiment->add_option("--seed", seed, "Override the plan seed");
  experiment->add_option("--target", targets, "Function to test (repeatable; default all)");
  experiment->add_option("--parallel", parallel, "Grid cells run at once")->check(CLI::PositiveNumber);

  std::string stat = "mean";
  std::vector<std::string> family_names;
  auto* train = app.add_subcommand("train", "Fit the five model families per function");
  train->add_option("--metrics", metrics_dir, "Metrics directory (default <out>/metrics)");
  train->add_option("--out", out_dir, "Output directory");
  train->add_option("--seed", seed, "Split and model seed");
  train->add_option("--target", targets, "Function to train (repeatable; default all)");
  train->add_option("--family", family_names, "Family to fit (repeatable; default all)");
  train->add_option("--duration-stat", stat, "Execution feature: mean or p95")
      ->check(CLI::IsMember({"mean", "p95"}));
  train->add_option("--parallel", parallel, "Models fitted at once")->check(CLI::PositiveNumber);

  std::string function, family, exec_mode = "slo";
  int memory = 0, concurrency = 0;
  double slo_ms = 0, slo_percentile = 0.95;
  bool measure = false, json = false;
  auto* estimate = app.add_subcommand("estimate", "Print ideal, model and measured capacity for one config");
  estimate->add_option("--plan", plan_path, "Test plan YAML (application profiles)")->required();
  estimate->add_option("--out", out_dir, "Output directory of a train run");
  estimate->add_option("--models", models_dir, "Models directory (default <out>/models)");
  estimate->add_option("--target,--function", function, "Function")->required();
  estimate->add_option("--memory", memory, "Memory in MiB")->required()->check(CLI::Range(128, 1 << 20));
  estimate->add_option("--concurrency", concurrency, "Concurrency cap")->required()->check(CLI::PositiveNumber);
  estimate->add_option("--slo-ms", slo_ms, "SLO bound in ms (default: plan SLO)");
  estimate->add_option("--slo-percentile", slo_percentile, "SLO percentile")->check(CLI::Range(0.0, 1.0));
  estimate->add_option("--family", family, "Model family (default: best test R^2)");
  estimate->add_option("--exec-mode", exec_mode, "Execution feature: slo or imputed_capped");
  estimate->add_option("--seed", seed, "Seed of the measured run");
  estimate->add_flag("--measure", measure, "Also measure in a sandbox");
  estimate->add_flag("--json", json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (validate->parsed()) {
      const auto lp = open_plan(plan_path, seed);
      const auto grid = expand_grid(lp.plan);
      std::printf("plan %s  digest %s\n", plan_path.c_str(), lp.digest.c_str());
      std::printf("%zu functions, %zu edges, %zu configs, %g s per config\n", lp.plan.app.functions.size(),
                  lp.plan.app.edges.size(), grid.size(), lp.plan.duration_s);
      return kOk;
    }
    if (record->parsed()) {
      const auto s = pipeline::cmd_record(open_plan(plan_path, seed), out_dir);
      std::printf("%zu exchanges -> %s\n", s.exchanges, s.store_path.c_str());
      for (const auto& w : s.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      return kOk;
    }
    if (experiment->parsed()) {
      const auto s = pipeline::cmd_experiment(open_plan(plan_path, seed), out_dir, {targets, parallel});
      for (const auto& c : s.cells) {
        if (c.error.empty()) continue;
        std::fprintf(stderr, "%s %s: %s\n", c.function.c_str(), pipeline::cell_name(c.config).c_str(),
                     c.error.c_str());
      }
      std::printf("%zu cells, %zu failed -> %s\n", s.cells.size(), s.failed(), (fs::path(out_dir) / "manifest.json").c_str());
      return s.failed() ? kRuntime : kOk;
    }
    if (train->parsed()) {
      pipeline::TrainOptions options;
      if (seed) options.seed = *seed;
      options.functions = targets;
      options.parallel = parallel;
      options.duration = stat == "p95" ? modeler::DurationStat::p95 : modeler::DurationStat::mean;
      if (!family_names.empty()) {
        options.families.clear();
        for (const auto& f : family_names) options.families.push_back(modeler::family_from_string(f));
      }
      if (metrics_dir.empty()) metrics_dir = (fs::path(out_dir) / "metrics").string();
      const auto s = pipeline::cmd_train(metrics_dir, out_dir, options);
      std::cout << estimator::to_text(s.report);
      for (const auto& [fn, err] : s.report.function_errors) std::fprintf(stderr, "%s: %s\n", fn.c_str(), err.c_str());
      return s.report.function_errors.empty() ? kOk : kRuntime;
    }
    if (estimate->parsed()) {
      const auto lp = open_plan(plan_path, std::nullopt);
      pipeline::EstimateRequest req;
      req.function = function;
      req.config = {memory, concurrency, lp.plan.timeout_ms};
      req.slo = {slo_percentile, slo_ms > 0 ? slo_ms : lp.plan.slo.max_ms};
      if (!family.empty()) req.family = modeler::family_from_string(family);
      req.exec_mode = estimator::exec_feature_from_string(exec_mode);
      req.measure = measure;
      req.seed = seed.value_or(lp.plan.seed);
      req.vu_max = lp.plan.vus.max;
      if (models_dir.empty()) models_dir = (fs::path(out_dir) / "models").string();
      const auto r = pipeline::cmd_estimate(models_dir, lp.plan.app, req);
      if (json) {
        pipeline::Json j = {{"ideal", estimator::to_json(r.ideal)}, {"model", estimator::to_json(r.model)}};
        if (r.measured) j["measured"] = estimator::to_json(*r.measured);
        std::cout << j.dump(2) << "\n";
      } else {
        std::printf("%s at %d MiB, C=%d, p%g <= %g ms\n", function.c_str(), memory, concurrency,
                    req.slo.percentile * 100, req.slo.max_ms);
        print_estimate("ideal", r.ideal);
        print_estimate("model", r.model);
        if (r.measured) print_estimate("measured", *r.measured);
      }
      return kOk;
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kOk;
}
