#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fncap/modeler/training.hpp"

using namespace fncap;
using namespace fncap::modeler;

namespace {

Dataset make(std::size_t n, int p, std::uint64_t seed, const std::function<double(const VectorXd&)>& f,
             double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-3, 3);
  std::normal_distribution<double> e(0, noise > 0 ? noise : 1);
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(n), p);
  d.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    for (int c = 0; c < p; ++c) d.x(i, c) = u(rng);
    d.y(i) = f(d.x.row(i).transpose()) + (noise > 0 ? e(rng) : 0.0);
  }
  return d;
}

// Quantile by the textbook 1-based rule h = (n - 1) p + 1, in long double.
long double oracle_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const long double h = (static_cast<long double>(v.size()) - 1) * p + 1;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo >= v.size()) return v.back();
  return v[lo - 1] + (h - lo) * (static_cast<long double>(v[lo]) - v[lo - 1]);
}

std::vector<std::size_t> oracle_keep(const Dataset& d) {
  std::vector<std::vector<double>> cols;
  for (Eigen::Index c = 0; c < d.x.cols(); ++c) {
    std::vector<double> col;
    for (Eigen::Index r = 0; r < d.x.rows(); ++r) col.push_back(d.x(r, c));
    cols.push_back(col);
  }
  cols.emplace_back(d.y.data(), d.y.data() + d.y.size());
  std::vector<std::size_t> keep;
  for (Eigen::Index r = 0; r < d.x.rows(); ++r) {
    bool ok = true;
    for (const auto& col : cols) {
      const long double q1 = oracle_quantile(col, 0.25);
      const long double q3 = oracle_quantile(col, 0.75);
      const long double v = col[static_cast<std::size_t>(r)];
      if (v < q1 - 1.5L * (q3 - q1) || v > q3 + 1.5L * (q3 - q1)) ok = false;
    }
    if (ok) keep.push_back(static_cast<std::size_t>(r));
  }
  return keep;
}

// Normal equations with an explicit intercept column, solved by LDLT.
VectorXd normal_equations(const Dataset& d) {
  MatrixXd a(d.x.rows(), d.x.cols() + 1);
  a.leftCols(d.x.cols()) = d.x;
  a.col(d.x.cols()).setOnes();
  return (a.transpose() * a).ldlt().solve(a.transpose() * d.y);
}

}  // namespace

TEST(R2, Identities) {
  VectorXd y(3);
  y << 1, 2, 3;
  EXPECT_DOUBLE_EQ(r2_score(y, y), 1.0);
  EXPECT_DOUBLE_EQ(r2_score(y, VectorXd::Constant(3, 2.0)), 0.0);
  VectorXd yhat(3);
  yhat << 1, 2, 2;
  EXPECT_DOUBLE_EQ(r2_score(y, yhat), 0.5);
}

TEST(R2, Errors) {
  VectorXd c = VectorXd::Constant(4, 1.0);
  EXPECT_THROW(r2_score(c, c), ValidationError);
  VectorXd one(1);
  one << 1;
  EXPECT_THROW(r2_score(one, one), ValidationError);
}

TEST(Preprocess, SingleTargetOutlierRemoved) {
  auto d = make(100, 5, 1, [](const VectorXd& x) { return 50 + x.sum(); });
  std::vector<double> ys(d.y.data(), d.y.data() + d.y.size());
  std::nth_element(ys.begin(), ys.begin() + 50, ys.end());
  d.y(17) = 100 * ys[50];
  EXPECT_EQ(iqr_keep(d).size(), 99u);
  auto s = preprocess(d);
  EXPECT_EQ(s.outliers_removed, 1u);
  EXPECT_EQ(s.train.rows() + s.test.rows(), 99);
  EXPECT_EQ(s.test.rows(), 33);
  EXPECT_EQ(s.train.rows(), 66);
}

TEST(Preprocess, CleanDataKeepsEveryRow) {
  // Uniform columns never leave the 1.5 x IQR fence.
  auto d = make(200, 5, 2, [](const VectorXd& x) { return x(0); });
  EXPECT_EQ(iqr_keep(d).size(), 200u);
}

TEST(Preprocess, TooFewRows) {
  auto d = make(29, 5, 3, [](const VectorXd& x) { return x(0); });
  EXPECT_THROW(preprocess(d), ValidationError);
}

TEST(Preprocess, IqrMatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(2024);
  for (int instance = 0; instance < 1000; ++instance) {
    const auto n = static_cast<std::size_t>(5 + rng() % 80);
    const int p = 1 + static_cast<int>(rng() % 5);
    std::lognormal_distribution<double> skew(0, 1 + static_cast<double>(rng() % 3));
    Dataset d;
    d.x.resize(static_cast<Eigen::Index>(n), p);
    d.y.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index r = 0; r < d.x.rows(); ++r) {
      for (int c = 0; c < p; ++c) d.x(r, c) = std::round(skew(rng) * 4) / 4;  // ties included
      d.y(r) = skew(rng) * (rng() % 10 == 0 ? 50 : 1);
    }
    ASSERT_EQ(iqr_keep(d), oracle_keep(d)) << "instance " << instance;
  }
}

TEST(Preprocess, SplitIsSeeded) {
  auto d = make(90, 5, 4, [](const VectorXd& x) { return x(1); });
  auto a = preprocess(d, {.seed = 7});
  auto b = preprocess(d, {.seed = 7});
  auto c = preprocess(d, {.seed = 8});
  EXPECT_EQ(a.test.y, b.test.y);
  EXPECT_NE(a.test.y, c.test.y);
}

TEST(Dataset, DropsWindowsWithoutDurations) {
  std::vector<metrics::MetricsSample> samples(3);
  samples[0].exec_mean_ms = 10;
  samples[0].exec_p95_ms = 12;
  samples[0].invocations = 5;
  samples[2].exec_mean_ms = 11;
  samples[2].exec_p95_ms = 20;
  auto d = to_dataset(samples);
  ASSERT_EQ(d.rows(), 2);
  EXPECT_EQ(d.y(0), 5);
  EXPECT_EQ(to_dataset(samples, DurationStat::p95).x(1, 1), 20);
}

TEST(Linear, RecoversExactLine) {
  auto d = make(40, 1, 5, [](const VectorXd& x) { return 2 * x(0) + 1; });
  auto m = fit_linear(d);
  auto [slopes, intercept] = m.raw_coefficients();
  EXPECT_NEAR(slopes(0), 2.0, 1e-9);
  EXPECT_NEAR(intercept, 1.0, 1e-9);
  EXPECT_FALSE(m.rank_deficient());
}

TEST(Linear, ConstantTarget) {
  auto d = make(40, 3, 6, [](const VectorXd&) { return 7.5; });
  auto m = fit_linear(d);
  auto [slopes, intercept] = m.raw_coefficients();
  EXPECT_LT(slopes.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(intercept, 7.5, 1e-12);
}

TEST(Linear, NoisyLinearData) {
  auto f = [](const VectorXd& x) { return 3 * x(0) - 2 * x(1) + 0.5 * x(2) + x(3) - x(4) + 4; };
  auto train = make(200, 5, 7, f, 0.01);
  auto test = make(100, 5, 8, f, 0.01);
  EXPECT_GE(r2_score(test.y, fit_linear(train).predict(test.x)), 0.99);
}

TEST(Linear, MatchesNormalEquations) {
  auto d = make(80, 5, 9, [](const VectorXd& x) { return x(0) * x(1) + x(2); }, 0.3);
  auto [slopes, intercept] = fit_linear(d).raw_coefficients();
  const VectorXd ref = normal_equations(d);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(slopes(c), ref(c), 1e-9);
  EXPECT_NEAR(intercept, ref(5), 1e-9);
}

TEST(Linear, RankDeficiencyFallsBackToRidge) {
  auto d = make(50, 2, 10, [](const VectorXd& x) { return x(0); });
  d.x.col(1) = d.x.col(0) * 2.0;
  auto m = fit_linear(d);
  EXPECT_TRUE(m.rank_deficient());
  EXPECT_TRUE(m.coefficients().allFinite());
  EXPECT_GT(r2_score(d.y, m.predict(d.x)), 0.999999);
}

TEST(Ridge, ZeroLambdaEqualsOls) {
  auto d = make(120, 5, 11, [](const VectorXd& x) { return x.sum() + x(0) * x(0); }, 0.5);
  const auto ols = fit_linear(d);
  const auto ridge = fit_ridge(d, 0.0);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(ridge.coefficients()(c), ols.coefficients()(c), 1e-9);
  EXPECT_NEAR(ridge.intercept(), ols.intercept(), 1e-9);
}

TEST(Ridge, MatchesClosedForm) {
  auto d = make(60, 3, 12, [](const VectorXd& x) { return x(0) - x(2); }, 0.2);
  const double lambda = 3.0;
  const auto m = fit_ridge(d, lambda);
  // Independent closed form on standardized, centered data.
  const auto norm = Normalization::fit(d.x);
  MatrixXd z = norm.apply(d.x);
  z = z.rowwise() - z.colwise().mean();
  const VectorXd yc = d.y.array() - d.y.mean();
  const VectorXd beta = (z.transpose() * z + lambda * MatrixXd::Identity(3, 3)).ldlt().solve(z.transpose() * yc);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(m.coefficients()(c), beta(c), 1e-9);
}

TEST(Ridge, HugeLambdaShrinksSlopes) {
  auto d = make(60, 3, 13, [](const VectorXd& x) { return 5 * x(0); });
  auto m = fit_ridge(d, 1e12);
  EXPECT_LT(m.coefficients().cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(m.intercept(), d.y.mean(), 1e-6);
}

TEST(Ridge, CollinearDuplicateStaysFinite) {
  auto d = make(60, 3, 14, [](const VectorXd& x) { return x(0) + x(1); }, 0.1);
  d.x.col(2) = d.x.col(0);
  auto m = fit_ridge(d, 0.1);
  EXPECT_FALSE(m.rank_deficient());
  EXPECT_TRUE(m.coefficients().allFinite());
  EXPECT_LT(m.coefficients().cwiseAbs().maxCoeff(), 1e3);
  EXPECT_NEAR(m.coefficients()(0), m.coefficients()(2), 1e-9);
}

TEST(Polynomial, DegreeOneEqualsLinear) {
  auto d = make(80, 5, 15, [](const VectorXd& x) { return std::sin(x(0)) + x(3); }, 0.1);
  const auto lr = fit_linear(d);
  const auto plr = fit_polynomial(d, 1);
  EXPECT_LT((lr.coefficients() - plr.coefficients()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((lr.predict(d.x) - plr.predict(d.x)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Polynomial, ExactQuadratic) {
  auto d = make(50, 1, 16, [](const VectorXd& x) { return x(0) * x(0); });
  EXPECT_NEAR(r2_score(d.y, fit_polynomial(d, 2).predict(d.x)), 1.0, 1e-9);
}

TEST(Polynomial, TermCounts) {
  EXPECT_EQ(polynomial_terms(5, 2), 21u);
  EXPECT_EQ(monomials(5, 2).size() + 1, 21u);
  for (int p = 1; p <= 6; ++p)
    for (int deg = 1; deg <= 4; ++deg) {
      // C(p + d, d) by Pascal's rule.
      std::vector<std::vector<long>> c(12, std::vector<long>(12, 0));
      for (int i = 0; i < 12; ++i) {
        c[i][0] = 1;
        for (int j = 1; j <= i; ++j) c[i][j] = c[i - 1][j - 1] + c[i - 1][j];
      }
      const auto terms = monomials(p, deg);
      EXPECT_EQ(terms.size() + 1, static_cast<std::size_t>(c[p + deg][deg]));
      std::set<std::vector<int>> unique(terms.begin(), terms.end());
      EXPECT_EQ(unique.size(), terms.size());
    }
}

TEST(Polynomial, ColumnCap) {
  auto d = make(60, 5, 17, [](const VectorXd& x) { return x(0); });
  EXPECT_THROW(fit_polynomial(d, 6), ValidationError);  // C(11, 6) = 462 terms
  EXPECT_THROW(fit_polynomial(d, 0), ValidationError);
}

TEST(Forest, SingleFullTreeMemorizes) {
  auto d = make(60, 3, 18, [](const VectorXd& x) { return std::exp(x(0)) + x(1); });
  auto m = fit_random_forest(d, {.trees = 1, .max_depth = 0, .min_split = 2, .mtry = 3, .bootstrap = false});
  EXPECT_NEAR(r2_score(d.y, m.predict(d.x)), 1.0, 1e-12);
}

TEST(Forest, ConstantTarget) {
  auto d = make(40, 3, 19, [](const VectorXd&) { return 4.25; });
  auto m = fit_random_forest(d, {.trees = 10});
  auto probe = make(20, 3, 20, [](const VectorXd&) { return 0.0; });
  for (double v : m.predict(probe.x)) EXPECT_DOUBLE_EQ(v, 4.25);
}

TEST(Forest, StepFunctionBeatsLinear) {
  auto step = [](const VectorXd& x) { return (x(0) > 0 ? 10.0 : 0.0) + (x(1) > 1 ? 5.0 : 0.0); };
  auto train = make(300, 3, 21, step, 0.1);
  auto test = make(200, 3, 22, step, 0.1);
  const double rfr = r2_score(test.y, fit_random_forest(train).predict(test.x));
  const double lr = r2_score(test.y, fit_linear(train).predict(test.x));
  EXPECT_GT(rfr, lr);
  EXPECT_GT(rfr, 0.9);
}

TEST(Forest, PredictionIsMeanOfTrees) {
  auto d = make(80, 4, 23, [](const VectorXd& x) { return x(0) * x(2); }, 0.2);
  auto m = fit_random_forest(d, {.trees = 17});
  const auto probe = make(30, 4, 24, [](const VectorXd&) { return 0.0; });
  VectorXd sum = VectorXd::Zero(probe.rows());
  for (std::size_t t = 0; t < m.trees().size(); ++t) sum += m.predict_tree(t, probe.x);
  EXPECT_LT((m.predict(probe.x) - sum / 17.0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forest, DeterministicUnderSeed) {
  auto d = make(80, 5, 25, [](const VectorXd& x) { return x(0) + x(4); }, 0.2);
  auto a = fit_random_forest(d, {.trees = 20}, 5);
  auto b = fit_random_forest(d, {.trees = 20}, 5);
  auto c = fit_random_forest(d, {.trees = 20}, 6);
  EXPECT_EQ(a.predict(d.x), b.predict(d.x));
  EXPECT_NE(a.predict(d.x), c.predict(d.x));
  EXPECT_EQ(a.mtry(), 2);
}

TEST(Dnn, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(26);
  Mlp net(3, 2, 6, rng, false);
  for (auto& b : net.biases()) b.setConstant(0.05);
  auto d = make(16, 3, 27, [](const VectorXd& x) { return x(0) - x(1) * x(2); });
  std::vector<MatrixXd> dw;
  std::vector<VectorXd> db;
  net.mae_gradient(d.x, d.y, dw, db);
  const auto analytic = Mlp::flatten(dw, db);
  const auto params = net.flat();
  const double h = 1e-6;
  double worst = 0;
  int checked = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params;
    p[i] = params[i] + h;
    net.set_flat(p);
    const double up = (net.forward(d.x) - d.y).cwiseAbs().mean();
    p[i] = params[i] - h;
    net.set_flat(p);
    const double down = (net.forward(d.x) - d.y).cwiseAbs().mean();
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale < 1e-7) continue;
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
    ++checked;
  }
  net.set_flat(params);
  EXPECT_GT(checked, static_cast<int>(params.size() / 2));
  EXPECT_LE(worst, 1e-4);
}

TEST(Dnn, ZeroInitReducesTrainingLoss) {
  auto d = make(200, 5, 28, [](const VectorXd& x) { return 3 * x(0) + x(1); });
  DnnParams p{.hidden_layers = 2, .width = 16, .max_epochs = 10, .patience = 100, .zero_init = true};
  auto m = fit_dnn(d, p, 3);
  const auto& curve = m.training_curve();
  ASSERT_EQ(curve.size(), 10u);
  // Moving average over 3 epochs never increases.
  for (std::size_t i = 3; i < curve.size(); ++i) {
    const double prev = (curve[i - 3] + curve[i - 2] + curve[i - 1]) / 3;
    const double cur = (curve[i - 2] + curve[i - 1] + curve[i]) / 3;
    EXPECT_LE(cur, prev + 1e-12);
  }
  EXPECT_LT(curve.back(), curve.front());
}

TEST(Dnn, ConstantTarget) {
  auto d = make(80, 5, 29, [](const VectorXd&) { return 250.0; });
  auto m = fit_dnn(d, {.hidden_layers = 3, .width = 16, .max_epochs = 300}, 4);
  auto probe = make(40, 5, 30, [](const VectorXd&) { return 0.0; });
  for (double v : m.predict(probe.x)) EXPECT_NEAR(v, 250.0, 2.5);
}

TEST(Dnn, LearnsSmoothFunction) {
  auto f = [](const VectorXd& x) { return 10 * x(0) * x(1) + 5 * x(2); };
  auto train = make(400, 5, 31, f, 0.1);
  auto test = make(100, 5, 32, f, 0.1);
  auto m = fit_dnn(train, {}, 5);
  EXPECT_GT(r2_score(test.y, m.predict(test.x)), 0.9);
}

TEST(Dnn, DivergenceIsReported) {
  auto d = make(64, 5, 33, [](const VectorXd& x) { return x(0); });
  EXPECT_THROW(fit_dnn(d, {.hidden_layers = 2, .width = 4, .learning_rate = 1e307, .max_epochs = 50}), Error);
}

TEST(KFold, SixFoldsOfTen) {
  const auto folds = kfold_indices(60, 6, 1);
  ASSERT_EQ(folds.size(), 6u);
  std::vector<std::size_t> all;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 10u);
    all.insert(all.end(), f.begin(), f.end());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(KFold, SizesDifferByAtMostOne) {
  for (std::size_t n = 6; n < 80; ++n) {
    const auto folds = kfold_indices(n, 6, n);
    std::size_t lo = n, hi = 0, total = 0;
    for (const auto& f : folds) {
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
      total += f.size();
    }
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(total, n);
  }
  EXPECT_THROW(kfold_indices(5, 6, 1), ValidationError);
}

TEST(KFold, PerfectLinearFolds) {
  auto d = make(60, 5, 34, [](const VectorXd& x) { return x.sum() * 2 - 1; });
  auto cv = kfold_cv(d, Family::lr, Json::object());
  ASSERT_EQ(cv.folds.size(), 6u);
  for (const auto& f : cv.folds) {
    EXPECT_NEAR(f.r2, 1.0, 1e-9);
    EXPECT_EQ(f.train.size() + f.validation.size(), 60u);
    std::set<std::size_t> overlap(f.train.begin(), f.train.end());
    for (auto v : f.validation) EXPECT_EQ(overlap.count(v), 0u);
  }
}

TEST(GridSearch, SinglePoint) {
  auto d = make(60, 2, 35, [](const VectorXd& x) { return x(0); }, 0.1);
  auto g = grid_search(d, Family::rr, {{{"lambda", 0.5}}});
  EXPECT_EQ(g.best["lambda"], 0.5);
}

TEST(GridSearch, PicksQuadraticDegree) {
  auto d = make(120, 2, 36, [](const VectorXd& x) { return x(0) * x(0) - x(1); }, 0.05);
  auto g = grid_search(d, Family::plr, {{{"degree", 1}}, {{"degree", 2}}});
  EXPECT_EQ(g.best["degree"], 2);
}

TEST(GridSearch, TiesGoToSmallestLambda) {
  auto d = make(60, 3, 37, [](const VectorXd& x) { return x(0) + 2 * x(1); });
  auto g = grid_search(d, Family::rr, {{{"lambda", 0.0}}, {{"lambda", 1e-9}}, {{"lambda", 1e-8}}});
  EXPECT_EQ(g.best["lambda"], 0.0);
}

TEST(Training, NormalizationUsesTrainingRowsOnly) {
  auto d = make(90, 5, 38, [](const VectorXd& x) { return x(0) + 10; }, 0.1);
  auto s = preprocess(d, {.seed = 3});
  for (auto family : kFamilies) {
    std::vector<Json> grid{default_grid(family).front()};
    if (family == Family::dnn) grid = {{{"hidden_layers", 2}, {"width", 8}, {"max_epochs", 20}}};
    auto m = train_family(s.train, s.test, family, grid, 3);
    const auto& n = m.model->normalization();
    const VectorXd mean = s.train.x.colwise().mean().transpose();
    EXPECT_LT((n.mean - mean).cwiseAbs().maxCoeff(), 1e-12) << to_string(family);
    EXPECT_GT((n.mean - d.x.colwise().mean().transpose()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(m.fold_scores.size(), 6u);
  }
}

TEST(Artifact, RoundTripPreservesPredictions) {
  auto d = make(90, 5, 39, [](const VectorXd& x) { return x(0) * x(1) + 3; }, 0.1);
  auto s = preprocess(d, {.seed = 5});
  for (auto family : kFamilies) {
    std::vector<Json> grid{default_grid(family).back()};
    if (family == Family::dnn) grid = {{{"hidden_layers", 2}, {"width", 8}, {"max_epochs", 20}}};
    if (family == Family::rfr) grid = {{{"trees", 5}}};
    auto m = train_family(s.train, s.test, family, grid, 5);
    m.function = "dd";
    const auto text = to_json(m).dump();
    auto back = model_from_json(Json::parse(text));
    EXPECT_EQ(back.family, family);
    EXPECT_EQ(back.function, "dd");
    EXPECT_EQ(back.fold_scores, m.fold_scores);
    EXPECT_EQ(back.predict(s.test.x), m.predict(s.test.x)) << to_string(family);
    EXPECT_EQ(to_json(back).dump(), text);
  }
}

TEST(Artifact, RejectsBadInput) {
  EXPECT_THROW(model_from_json(Json{{"version", 99}}), ParseError);
  EXPECT_THROW(model_from_json(Json::object()), ParseError);
  EXPECT_THROW(family_from_string("SVM"), ValidationError);
  EXPECT_EQ(family_from_string("dnn"), Family::dnn);
}
