#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "fncap/modeler/model.hpp"

namespace fncap::modeler {

struct ForestParams {
  int trees = 100;
  int max_depth = 12;  // 0 = unlimited
  int min_split = 4;
  int mtry = 0;        // features tried per split; 0 = ceil(p / 3)
  bool bootstrap = true;
};

/// CART regression tree in flat arrays; leaves have feature == -1.
struct RegressionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  double predict(const MatrixXd& x, Eigen::Index row) const {
    int node = 0;
    while (feature[static_cast<std::size_t>(node)] >= 0) {
      const auto n = static_cast<std::size_t>(node);
      node = x(row, feature[n]) <= threshold[n] ? left[n] : right[n];
    }
    return value[static_cast<std::size_t>(node)];
  }

  std::size_t size() const { return feature.size(); }
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const MatrixXd& x, const VectorXd& y, const ForestParams& params, int mtry, std::mt19937_64& rng)
      : x_(x), y_(y), params_(params), mtry_(mtry), rng_(rng) {}

  RegressionTree build(std::vector<std::size_t> rows) {
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  int add_leaf(double v) {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.value.push_back(v);
    return static_cast<int>(tree_.size() - 1);
  }

  int grow(std::vector<std::size_t>& rows, int depth) {
    double sum = 0;
    for (auto r : rows) sum += y_(static_cast<Eigen::Index>(r));
    const double mean = sum / static_cast<double>(rows.size());
    const bool depth_left = params_.max_depth <= 0 || depth < params_.max_depth;
    if (!depth_left || static_cast<int>(rows.size()) < params_.min_split) return add_leaf(mean);

    // Candidate features for this split.
    const auto p = static_cast<int>(x_.cols());
    std::vector<int> features(static_cast<std::size_t>(p));
    std::iota(features.begin(), features.end(), 0);
    for (int i = 0; i < mtry_; ++i) {
      const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(rng_() % static_cast<std::uint64_t>(p - i));
      std::swap(features[static_cast<std::size_t>(i)], features[j]);
    }

    double parent_sse = 0;
    for (auto r : rows) parent_sse += std::pow(y_(static_cast<Eigen::Index>(r)) - mean, 2);
    double best_sse = parent_sse;
    int best_feature = -1;
    double best_threshold = 0;
    std::vector<std::size_t> sorted = rows;
    for (int k = 0; k < mtry_; ++k) {
      const int f = features[static_cast<std::size_t>(k)];
      std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        return x_(static_cast<Eigen::Index>(a), f) < x_(static_cast<Eigen::Index>(b), f);
      });
      double ls = 0, lq = 0;
      double rs = 0, rq = 0;
      for (auto r : sorted) {
        const double v = y_(static_cast<Eigen::Index>(r));
        rs += v;
        rq += v * v;
      }
      const auto n = sorted.size();
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double v = y_(static_cast<Eigen::Index>(sorted[i]));
        ls += v;
        lq += v * v;
        rs -= v;
        rq -= v * v;
        const double xa = x_(static_cast<Eigen::Index>(sorted[i]), f);
        const double xb = x_(static_cast<Eigen::Index>(sorted[i + 1]), f);
        if (!(xa < xb)) continue;
        const double nl = static_cast<double>(i + 1);
        const double nr = static_cast<double>(n - i - 1);
        const double sse = (lq - ls * ls / nl) + (rq - rs * rs / nr);
        if (sse < best_sse - 1e-12 * std::max(1.0, parent_sse)) {
          best_sse = sse;
          best_feature = f;
          best_threshold = xa + (xb - xa) / 2;
          if (!(best_threshold < xb)) best_threshold = xa;
        }
      }
    }
    if (best_feature < 0) return add_leaf(mean);

    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows)
      (x_(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? left_rows : right_rows).push_back(r);
    const int node = add_leaf(mean);
    tree_.feature[static_cast<std::size_t>(node)] = best_feature;
    tree_.threshold[static_cast<std::size_t>(node)] = best_threshold;
    const int l = grow(left_rows, depth + 1);
    const int r = grow(right_rows, depth + 1);
    tree_.left[static_cast<std::size_t>(node)] = l;
    tree_.right[static_cast<std::size_t>(node)] = r;
    return node;
  }

  const MatrixXd& x_;
  const VectorXd& y_;
  const ForestParams& params_;
  int mtry_;
  std::mt19937_64& rng_;
  RegressionTree tree_;
};

}  // namespace detail

/// Bagged CART trees with per-split feature subsampling. The prediction is
/// the plain mean of the tree predictions.
class RandomForest : public Model {
 public:
  RandomForest(const Dataset& train, ForestParams params, std::uint64_t seed) : params_(params) {
    if (params.trees < 1) throw ValidationError("forest needs at least one tree");
    if (params.min_split < 2) throw ValidationError("min_split must be >= 2");
    if (train.rows() < 1) throw ValidationError("forest needs training rows");
    const auto p = static_cast<int>(train.x.cols());
    mtry_ = params.mtry > 0 ? std::min(params.mtry, p) : std::max(1, (p + 2) / 3);
    norm_ = Normalization::fit(train.x);
    const auto n = static_cast<std::size_t>(train.rows());
    for (int t = 0; t < params.trees; ++t) {
      std::mt19937_64 rng(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(t) + 1);
      std::vector<std::size_t> rows(n);
      if (params.bootstrap) {
        for (auto& r : rows) r = static_cast<std::size_t>(rng() % n);
      } else {
        std::iota(rows.begin(), rows.end(), std::size_t{0});
      }
      trees_.push_back(detail::TreeBuilder(train.x, train.y, params_, mtry_, rng).build(std::move(rows)));
    }
  }

  Family family() const override { return Family::rfr; }
  const Normalization& normalization() const override { return norm_; }

  VectorXd predict(const MatrixXd& x) const override {
    VectorXd out = VectorXd::Zero(x.rows());
    for (const auto& t : trees_)
      for (Eigen::Index r = 0; r < x.rows(); ++r) out(r) += t.predict(x, r);
    return out / static_cast<double>(trees_.size());
  }

  VectorXd predict_tree(std::size_t t, const MatrixXd& x) const {
    VectorXd out(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) out(r) = trees_.at(t).predict(x, r);
    return out;
  }

  const std::vector<RegressionTree>& trees() const { return trees_; }
  int mtry() const { return mtry_; }

  Json parameters() const override {
    Json trees = Json::array();
    for (const auto& t : trees_) {
      std::vector<double> feature(t.feature.begin(), t.feature.end());
      std::vector<double> left(t.left.begin(), t.left.end());
      std::vector<double> right(t.right.begin(), t.right.end());
      trees.push_back({{"feature_b64", encode_doubles(feature)},
                       {"threshold_b64", encode_doubles(t.threshold)},
                       {"left_b64", encode_doubles(left)},
                       {"right_b64", encode_doubles(right)},
                       {"value_b64", encode_doubles(t.value)}});
    }
    return {{"mtry", mtry_}, {"trees", std::move(trees)}};
  }

  static std::unique_ptr<RandomForest> from_json(const Json& params, const Normalization& norm) {
    std::unique_ptr<RandomForest> m(new RandomForest());
    m->norm_ = norm;
    m->mtry_ = params.at("mtry").get<int>();
    auto ints = [](const Json& j, const char* key) {
      std::vector<int> out;
      for (double v : decode_doubles(j.at(key).get<std::string>())) out.push_back(static_cast<int>(v));
      return out;
    };
    for (const auto& j : params.at("trees")) {
      RegressionTree t;
      t.feature = ints(j, "feature_b64");
      t.left = ints(j, "left_b64");
      t.right = ints(j, "right_b64");
      t.threshold = decode_doubles(j.at("threshold_b64").get<std::string>());
      t.value = decode_doubles(j.at("value_b64").get<std::string>());
      const auto n = t.feature.size();
      if (t.left.size() != n || t.right.size() != n || t.threshold.size() != n || t.value.size() != n || n == 0)
        throw ParseError("malformed tree arrays");
      for (std::size_t i = 0; i < n; ++i) {
        if (t.feature[i] < 0) continue;
        if (t.feature[i] >= norm.mean.size() || t.left[i] <= static_cast<int>(i) || t.right[i] <= static_cast<int>(i) ||
            t.left[i] >= static_cast<int>(n) || t.right[i] >= static_cast<int>(n))
          throw ParseError("tree node references are out of range");
      }
      m->trees_.push_back(std::move(t));
    }
    if (m->trees_.empty()) throw ParseError("forest has no trees");
    return m;
  }

 private:
  RandomForest() = default;

  ForestParams params_;
  int mtry_ = 1;
  Normalization norm_;
  std::vector<RegressionTree> trees_;
};

inline RandomForest fit_random_forest(const Dataset& train, const ForestParams& params = {}, std::uint64_t seed = 1) {
  return RandomForest(train, params, seed);
}

}  // namespace fncap::modeler
