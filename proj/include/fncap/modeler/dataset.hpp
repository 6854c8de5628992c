#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fncap/common.hpp"
#include "fncap/metrics/metrics.hpp"

namespace fncap::modeler {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr std::size_t kFeatureCount = 5;
inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "conc_instances", "execution_duration", "allocated_memory", "memory_usage", "function_concurrency"};

/// Which per-window statistic stands in for execution_duration.
enum class DurationStat { mean, p95 };

struct Dataset {
  MatrixXd x;  // rows x kFeatureCount
  VectorXd y;  // invocations per window

  Eigen::Index rows() const { return x.rows(); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.x.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
    out.y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
      out.y(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
  }
};

/// Rows with a missing duration (windows without ok invocations) are dropped.
inline Dataset to_dataset(const std::vector<metrics::MetricsSample>& samples, DurationStat stat = DurationStat::mean) {
  std::vector<const metrics::MetricsSample*> usable;
  for (const auto& s : samples) {
    const auto& d = stat == DurationStat::mean ? s.exec_mean_ms : s.exec_p95_ms;
    if (d && std::isfinite(*d)) usable.push_back(&s);
  }
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(usable.size()), kFeatureCount);
  out.y.resize(static_cast<Eigen::Index>(usable.size()));
  for (std::size_t i = 0; i < usable.size(); ++i) {
    const auto& s = *usable[i];
    const auto r = static_cast<Eigen::Index>(i);
    out.x(r, 0) = s.concurrent_instances;
    out.x(r, 1) = stat == DurationStat::mean ? *s.exec_mean_ms : *s.exec_p95_ms;
    out.x(r, 2) = s.allocated_memory_mib;
    out.x(r, 3) = s.memory_usage_mib;
    out.x(r, 4) = s.function_concurrency;
    out.y(r) = static_cast<double>(s.invocations);
  }
  return out;
}

/// Linear-interpolation quantile of sorted data (position (n - 1) * q).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Fence {
  double low = 0.0;
  double high = 0.0;
  bool contains(double v) const { return v >= low && v <= high; }
};

inline Fence iqr_fence(std::vector<double> values, double k = 1.5) {
  std::sort(values.begin(), values.end());
  const double q1 = quantile_sorted(values, 0.25);
  const double q3 = quantile_sorted(values, 0.75);
  const double iqr = q3 - q1;
  return {q1 - k * iqr, q3 + k * iqr};
}

/// Indices of rows inside the 1.5 x IQR fence of every feature and the target.
inline std::vector<std::size_t> iqr_keep(const Dataset& d, double k = 1.5) {
  const auto n = static_cast<std::size_t>(d.rows());
  std::vector<bool> keep(n, true);
  auto apply = [&](const VectorXd& col) {
    const Fence f = iqr_fence(std::vector<double>(col.data(), col.data() + col.size()), k);
    for (std::size_t i = 0; i < n; ++i)
      if (!f.contains(col(static_cast<Eigen::Index>(i)))) keep[i] = false;
  };
  for (Eigen::Index c = 0; c < d.x.cols(); ++c) apply(d.x.col(c));
  apply(d.y);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(i);
  return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with our own draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

struct PreprocessOptions {
  std::uint64_t seed = 1;
  double test_fraction = 0.33;
  double iqr_k = 1.5;
  std::size_t min_rows = 30;
};

struct Split {
  Dataset train;
  Dataset test;
  std::size_t input_rows = 0;
  std::size_t outliers_removed = 0;
};

inline Split preprocess(const Dataset& data, const PreprocessOptions& options = {}) {
  if (static_cast<std::size_t>(data.rows()) < options.min_rows)
    throw ValidationError("insufficient data: " + std::to_string(data.rows()) + " usable rows, need at least " +
                          std::to_string(options.min_rows));
  if (!data.x.allFinite() || !data.y.allFinite()) throw ValidationError("dataset contains non-finite values");
  const auto kept = iqr_keep(data, options.iqr_k);
  const Dataset clean = data.subset(kept);
  const auto order = shuffled_indices(kept.size(), options.seed);
  const auto n_test = static_cast<std::size_t>(std::llround(options.test_fraction * static_cast<double>(kept.size())));
  Split s;
  s.input_rows = static_cast<std::size_t>(data.rows());
  s.outliers_removed = s.input_rows - kept.size();
  s.test = clean.subset({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test)});
  s.train = clean.subset({order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end()});
  return s;
}

/// Per-feature standardization; zero spread maps to a divisor of 1.
struct Normalization {
  VectorXd mean;
  VectorXd stddev;

  static Normalization fit(const MatrixXd& x) {
    Normalization n;
    n.mean = x.colwise().mean().transpose();
    n.stddev.resize(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - n.mean(c)).square().sum() / static_cast<double>(x.rows());
      n.stddev(c) = var > 0 ? std::sqrt(var) : 1.0;
    }
    return n;
  }

  MatrixXd apply(const MatrixXd& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array();
  }
};

}  // namespace fncap::modeler
