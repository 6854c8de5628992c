// Acceptance suite: one PASS/FAIL line per criterion, exit 1 when any fails.
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "fncap/pipeline/pipeline.hpp"

using namespace fncap;
namespace fs = std::filesystem;
using modeler::Dataset;
using modeler::MatrixXd;
using modeler::VectorXd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fncap_acceptance_" + std::to_string(getpid()) + "_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return syy == 0 ? 1.0 : sxy * sxy / (sxx * syy);
}

Outcome ideal_oracle() {
  FunctionProfile p{.name = "f", .base_duration_ms = 100, .saturation_memory_mib = 256, .cold_start_ms = 0,
                    .noise_sigma = 0};
  const auto start = std::chrono::steady_clock::now();
  const auto m = estimator::measure_capacity(p, {256, 10}, {0.95, 150});
  const double secs = seconds_since(start);
  const double ideal = estimator::ideal_capacity(100, 10, 1000);
  const double rel = std::abs(m.estimate.fc_rps - 100.0) / 100.0;
  return {rel <= 0.10 && secs < 5.0,
          fmt("measured %.2f rps, ideal %.0f rps, error %.1f%%, %.2f s", m.estimate.fc_rps, ideal, rel * 100, secs)};
}

Outcome concurrency_linearity() {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<double> cs{10, 20, 30, 40, 50};
  double worst = 1.0;
  std::string worst_fn;
  for (const auto& f : default_application().functions) {
    const double exec = sim::duration_model(f, 256);
    std::vector<double> fc;
    for (double c : cs)
      fc.push_back(estimator::measure_capacity(f, {256, static_cast<int>(c)}, {0.95, 1.5 * exec}).estimate.fc_rps);
    const double r2 = linear_fit_r2(cs, fc);
    if (r2 < worst) worst = r2, worst_fn = f.name;
  }
  const double secs = seconds_since(start);
  return {worst >= 0.95 && secs < 60.0, fmt("lowest R^2 %.4f (%s) over 8 profiles, %.1f s", worst, worst_fn.c_str(), secs)};
}

double mean_execution(const FunctionProfile& f, int memory) {
  sim::Platform p({.seed = 3});
  const auto h = p.deploy(f, {memory, 10});
  const auto log = loadgen::run_load(p, h, {{300, 4}}, "{}", {.start_vus = 4});
  return loadgen::mean(loadgen::ok_durations(log));
}

Outcome memory_saturation() {
  std::vector<std::string> problems;
  double worst_exec_gap = 0, worst_fc_gap = 0;
  for (const auto& f : default_application().functions) {
    std::map<int, double> exec;
    for (int m : {256, 512, 1024, 2048, 4096}) exec[m] = mean_execution(f, m);
    if (!(exec[256] > exec[512] && exec[512] > exec[1024])) problems.push_back(f.name + " not decreasing");
    const double exec_gap = std::abs(exec[4096] - exec[2048]) / exec[2048];
    const Slo slo{0.95, 1.5 * f.base_duration_ms};
    const double fc2 = estimator::measure_capacity(f, {2048, 10}, slo).estimate.fc_rps;
    const double fc4 = estimator::measure_capacity(f, {4096, 10}, slo).estimate.fc_rps;
    const double fc_gap = std::abs(fc4 - fc2) / fc2;
    if (exec_gap > 0.10) problems.push_back(f.name + " execution not flat");
    if (fc_gap > 0.10) problems.push_back(f.name + " capacity not flat");
    worst_exec_gap = std::max(worst_exec_gap, exec_gap);
    worst_fc_gap = std::max(worst_fc_gap, fc_gap);
  }
  std::string detail = fmt("max 2048->4096 change: execution %.1f%%, capacity %.1f%%", worst_exec_gap * 100,
                           worst_fc_gap * 100);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// Time-averaged instance count under an open-loop arrival stream.
double average_instances(const FunctionProfile& f, int memory, double rps, double duration_s) {
  sim::Platform p({.seed = 21});
  const auto h = p.deploy(f, {memory, 1000});
  const double gap = 1000.0 / rps;
  const double end = duration_s * 1000.0;
  for (double t = 0; t < end; t += gap) p.submit(h, "{}", t, nullptr);
  p.run_until(end);
  const auto& trace = p.instance_trace(h);
  double area = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double from = trace[i].first;
    const double to = i + 1 < trace.size() ? std::min(trace[i + 1].first, end) : end;
    if (to > from) area += trace[i].second * (to - from);
  }
  return area / end;
}

Outcome instance_economy() {
  std::vector<std::string> problems;
  std::string sample;
  for (const auto& f : default_application().functions) {
    std::vector<double> avg;
    for (int m : {256, 512, 1024, 2048, 4096}) avg.push_back(average_instances(f, m, 50, 300));
    for (std::size_t i = 1; i < avg.size(); ++i)
      if (avg[i] > avg[i - 1]) problems.push_back(f.name);
    if (f.name == "primes-python")
      sample = fmt("primes-python %.1f/%.1f/%.1f/%.1f/%.1f", avg[0], avg[1], avg[2], avg[3], avg[4]);
  }
  std::string detail = sample;
  for (const auto& p : problems) detail += "; increase for " + p;
  return {problems.empty(), detail};
}

Outcome end_to_end_accuracy() {
  const auto dir = scratch("e2e");
  const auto start = std::chrono::steady_clock::now();
  const auto lp = pipeline::load_plan(fs::path(FNCAP_SOURCE_DIR) / "sample_plans" / "default.yaml");
  const auto exp = pipeline::cmd_experiment(lp, dir);
  const auto train = pipeline::cmd_train(dir / "metrics", dir, {.seed = lp.plan.seed});
  const double secs = seconds_since(start);
  auto score = [&](const std::string& fn, modeler::Family f) {
    const auto row = train.report.rows.find(fn);
    if (row == train.report.rows.end() || !row->second.count(f)) return -1e300;
    return row->second.at(f).test_r2.value_or(-1e300);
  };
  std::size_t both = 0;
  double min_dnn = 1, min_rfr = 1;
  for (const auto& f : lp.plan.app.functions) {
    const double d = score(f.name, modeler::Family::dnn);
    const double r = score(f.name, modeler::Family::rfr);
    both += d >= estimator::kAccuracyThreshold && r >= estimator::kAccuracyThreshold;
    min_dnn = std::min(min_dnn, d);
    min_rfr = std::min(min_rfr, r);
  }
  fs::remove_all(dir);
  return {both >= 6 && exp.failed() == 0 && secs <= 600.0,
          fmt("%zu/8 functions with DNN and RFR >= 0.75 (min DNN %.3f, min RFR %.3f), %zu failed cells, %.0f s", both,
              min_dnn, min_rfr, exp.failed(), secs)};
}

Dataset random_dataset(std::size_t n, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  std::normal_distribution<double> e(0, 0.3);
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), p);
  d.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    for (int c = 0; c < p; ++c) d.x(i, c) = u(rng);
    d.y(i) = d.x.row(i).sum() + d.x(i, 0) * d.x(i, 1) + e(rng);
  }
  return d;
}

double gradient_check() {
  std::mt19937_64 rng(5);
  modeler::Mlp net(4, 2, 8, rng, false);
  for (auto& b : net.biases()) b.setConstant(0.05);
  const auto d = random_dataset(24, 4, 6);
  std::vector<MatrixXd> dw;
  std::vector<VectorXd> db;
  net.mae_gradient(d.x, d.y, dw, db);
  const auto analytic = modeler::Mlp::flatten(dw, db);
  const auto params = net.flat();
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto q = params;
    q[i] += 1e-6;
    net.set_flat(q);
    const double up = (net.forward(d.x) - d.y).cwiseAbs().mean();
    q[i] = params[i] - 1e-6;
    net.set_flat(q);
    const double down = (net.forward(d.x) - d.y).cwiseAbs().mean();
    const double numeric = (up - down) / 2e-6;
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale > 1e-7) worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  return worst;
}

Outcome model_identities() {
  const auto d = random_dataset(150, 5, 4);
  const auto [ols_w, ols_b] = modeler::fit_linear(d).raw_coefficients();
  const auto [ridge_w, ridge_b] = modeler::fit_ridge(d, 0.0).raw_coefficients();
  // The augmented ridge solver itself, driven to a vanishing penalty.
  const auto [tiny_w, tiny_b] = modeler::fit_ridge(d, 1e-12).raw_coefficients();
  const double ridge_gap = std::max({(ols_w - ridge_w).cwiseAbs().maxCoeff(), std::abs(ols_b - ridge_b),
                                     (ols_w - tiny_w).cwiseAbs().maxCoeff(), std::abs(ols_b - tiny_b)});
  const auto lr = modeler::fit_linear(d);
  const auto plr = modeler::fit_polynomial(d, 1);
  const double plr_gap = std::max((lr.coefficients() - plr.coefficients()).cwiseAbs().maxCoeff(),
                                  std::abs(lr.intercept() - plr.intercept()));
  VectorXd y(3), mean(3), half(3);
  y << 1, 2, 3;
  mean << 2, 2, 2;
  half << 1, 2, 2;
  const bool r2_ok = modeler::r2_score(y, y) == 1.0 && modeler::r2_score(y, mean) == 0.0 &&
                     std::abs(modeler::r2_score(y, half) - 0.5) < 1e-15;
  const double grad = gradient_check();
  return {ridge_gap <= 1e-9 && plr_gap <= 1e-9 && r2_ok && grad <= 1e-4,
          fmt("ridge(0)-OLS %.1e, PLR(1)-LR %.1e, r2 identities %s, gradient rel error %.1e", ridge_gap, plr_gap,
              r2_ok ? "ok" : "wrong", grad)};
}

ApplicationGraph neighbor_app(double neighbor_ms) {
  ApplicationGraph g;
  g.functions = {FunctionProfile{.name = "target", .base_duration_ms = 120, .saturation_memory_mib = 512},
                 FunctionProfile{.name = "neighbor", .base_duration_ms = neighbor_ms}};
  g.edges = {{"target", "neighbor", CallMode::sync, 0}};
  return g;
}

double target_p95(sim::Platform& p, sim::FunctionHandle h) {
  std::vector<double> exec;
  for (int i = 0; i < 400; ++i) {
    const auto o = p.invoke(h, "{\"i\":" + std::to_string(i % 20) + "}", p.now());
    if (i > 0 && o.execution_ms) exec.push_back(*o.execution_ms);
  }
  return loadgen::nearest_rank(exec, 0.95);
}

double sandboxed_p95(const ApplicationGraph& g) {
  sim::Platform recorder({.seed = 8});
  std::vector<std::string> payloads;
  for (int i = 0; i < 20; ++i) payloads.push_back("{\"i\":" + std::to_string(i) + "}");
  const auto rec = sandbox::record_run(recorder, g, payloads, {512, 1});
  const auto plan = sandbox::build_sandbox(g, "target", *rec.store);
  sim::Platform box({.seed = 9});
  return target_p95(box, sandbox::deploy_sandbox(box, g, plan, {512, 1}).target);
}

double full_app_p95(const ApplicationGraph& g) {
  sim::Platform p({.seed = 9});
  sim::FunctionHandle target{};
  for (const auto& f : g.functions) {
    const auto h = p.deploy(f, {512, 1}, std::make_shared<sim::SyntheticHandler>(f, g.callees(f.name)));
    if (f.name == "target") target = h;
  }
  return target_p95(p, target);
}

Outcome sandbox_purity() {
  const double box_fast = sandboxed_p95(neighbor_app(200));
  const double box_slow = sandboxed_p95(neighbor_app(2000));
  const double full_fast = full_app_p95(neighbor_app(200));
  const double full_slow = full_app_p95(neighbor_app(2000));
  const double box_change = std::abs(box_slow - box_fast) / box_fast;
  const double full_change = std::abs(full_slow - full_fast) / full_fast;
  return {box_change < 0.02 && full_change > 0.50,
          fmt("p95 change with a 10x slower neighbor: sandboxed %.2f%%, full application %.0f%%", box_change * 100,
              full_change * 100)};
}

std::map<std::string, std::string> metrics_files(const fs::path& out) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(out / "metrics"))
    if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = pipeline::read_file(e.path());
  return files;
}

Outcome determinism() {
  const std::string plan =
      "memory_mib: [256, 2048]\nconcurrency: [10, 30]\nduration_s: 240\nsampling_interval_s: 60\n"
      "vus: {min: 5, max: 500}\nslo: {max_ms: 3000}\nseed: 42\n";
  std::vector<std::map<std::string, std::string>> runs;
  for (int parallel : {1, 1, 4}) {
    const auto dir = scratch("determinism_" + std::to_string(runs.size()));
    pipeline::write_file(dir / "plan.yaml", plan);
    pipeline::cmd_experiment(pipeline::load_plan(dir / "plan.yaml"), dir, {.parallel = parallel});
    runs.push_back(metrics_files(dir));
    fs::remove_all(dir);
  }
  const bool same = runs[0] == runs[1];
  const bool parallel_same = runs[0] == runs[2];
  return {same && parallel_same && runs[0].size() == 32,
          fmt("%zu metrics CSVs; rerun %s, --parallel 4 %s", runs[0].size(), same ? "identical" : "DIFFERS",
              parallel_same ? "identical" : "DIFFERS")};
}

double oracle_nearest_rank(const std::vector<double>& v, double p) {
  // Smallest sample whose share of samples at or below it reaches p.
  double best = std::numeric_limits<double>::infinity();
  for (double c : v) {
    std::size_t at_or_below = 0;
    for (double x : v) at_or_below += x <= c;
    if (at_or_below * 100 >= static_cast<std::size_t>(std::llround(p * 100)) * v.size()) best = std::min(best, c);
  }
  return best;
}

long double oracle_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const long double h = (static_cast<long double>(v.size()) - 1) * q + 1;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo >= v.size()) return v.back();
  return v[lo - 1] + (h - lo) * (static_cast<long double>(v[lo]) - v[lo - 1]);
}

std::vector<std::size_t> oracle_keep(const Dataset& d) {
  std::vector<std::vector<double>> cols;
  for (Eigen::Index c = 0; c < d.x.cols(); ++c) cols.emplace_back(d.x.col(c).data(), d.x.col(c).data() + d.x.rows());
  cols.emplace_back(d.y.data(), d.y.data() + d.y.size());
  std::vector<std::size_t> keep;
  for (Eigen::Index r = 0; r < d.x.rows(); ++r) {
    bool ok = true;
    for (const auto& col : cols) {
      const long double q1 = oracle_quantile(col, 0.25), q3 = oracle_quantile(col, 0.75);
      const long double v = col[static_cast<std::size_t>(r)];
      ok = ok && v >= q1 - 1.5L * (q3 - q1) && v <= q3 + 1.5L * (q3 - q1);
    }
    if (ok) keep.push_back(static_cast<std::size_t>(r));
  }
  return keep;
}

Outcome percentile_iqr_oracles() {
  std::mt19937_64 rng(77);
  int percentile_bad = 0, iqr_bad = 0;
  const double ps[] = {0.5, 0.9, 0.95, 0.99, 1.0, 0.01};
  for (int i = 0; i < 1000; ++i) {
    const auto n = static_cast<std::size_t>(1 + rng() % 200);
    std::lognormal_distribution<double> dist(3, 1);
    std::vector<double> v(n);
    for (auto& x : v) x = std::round(dist(rng) * 2) / 2;
    const double p = ps[i % 6];
    percentile_bad += loadgen::nearest_rank(v, p) != oracle_nearest_rank(v, p);
  }
  for (int i = 0; i < 1000; ++i) {
    const auto n = static_cast<std::size_t>(5 + rng() % 80);
    const int cols = 1 + static_cast<int>(rng() % 5);
    std::lognormal_distribution<double> skew(0, 1 + static_cast<double>(rng() % 3));
    Dataset d;
    d.x.resize(static_cast<Eigen::Index>(n), cols);
    d.y.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index r = 0; r < d.x.rows(); ++r) {
      for (int c = 0; c < cols; ++c) d.x(r, c) = std::round(skew(rng) * 4) / 4;
      d.y(r) = skew(rng) * (rng() % 10 == 0 ? 50 : 1);
    }
    iqr_bad += modeler::iqr_keep(d) != oracle_keep(d);
  }
  return {percentile_bad == 0 && iqr_bad == 0,
          fmt("percentile mismatches %d/1000, IQR mismatches %d/1000", percentile_bad, iqr_bad)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"ideal-capacity-oracle", ideal_oracle},
      {"concurrency-linearity", concurrency_linearity},
      {"memory-saturation", memory_saturation},
      {"instance-economy", instance_economy},
      {"end-to-end-accuracy", end_to_end_accuracy},
      {"model-identities", model_identities},
      {"sandbox-purity", sandbox_purity},
      {"determinism", determinism},
      {"percentile-iqr-oracles", percentile_iqr_oracles},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %-24s %s  [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
