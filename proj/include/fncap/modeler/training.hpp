#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fncap/modeler/dnn.hpp"
#include "fncap/modeler/forest.hpp"
#include "fncap/modeler/linear.hpp"

namespace fncap::modeler {

inline constexpr int kArtifactVersion = 1;
inline constexpr int kDefaultFolds = 6;

/// Coefficient of determination, 1 - SS_res / SS_tot.
inline double r2_score(const VectorXd& y, const VectorXd& yhat) {
  if (y.size() != yhat.size()) throw ValidationError("r2: length mismatch");
  if (y.size() < 2) throw ValidationError("r2 needs at least two values");
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (!(ss_tot > 0)) throw ValidationError("r2 undefined for a zero-variance target");
  const double ss_res = (y - yhat).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

struct FoldReport {
  int index = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  double r2 = 0.0;
};

/// Seeded partition of 0..n-1 into k folds whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k-fold needs k >= 2");
  if (n < static_cast<std::size_t>(k))
    throw ValidationError("k-fold needs at least k rows (" + std::to_string(n) + " < " + std::to_string(k) + ")");
  const auto order = shuffled_indices(n, seed);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return folds;
}

/// Family-specific hyperparameters as a JSON object; see fit_model.
inline std::unique_ptr<Model> fit_model(Family family, const Json& hyper, const Dataset& train, std::uint64_t seed) {
  switch (family) {
    case Family::lr:
      return std::make_unique<LinearModel>(fit_linear(train));
    case Family::rr:
      return std::make_unique<LinearModel>(fit_ridge(train, hyper.value("lambda", 1.0)));
    case Family::plr:
      return std::make_unique<LinearModel>(fit_polynomial(train, hyper.value("degree", 2)));
    case Family::rfr: {
      ForestParams p;
      p.trees = hyper.value("trees", p.trees);
      p.max_depth = hyper.value("max_depth", p.max_depth);
      p.min_split = hyper.value("min_split", p.min_split);
      p.mtry = hyper.value("mtry", p.mtry);
      p.bootstrap = hyper.value("bootstrap", p.bootstrap);
      return std::make_unique<RandomForest>(train, p, seed);
    }
    case Family::dnn: {
      DnnParams p;
      p.hidden_layers = hyper.value("hidden_layers", p.hidden_layers);
      p.width = hyper.value("width", p.width);
      p.learning_rate = hyper.value("learning_rate", p.learning_rate);
      p.batch_size = hyper.value("batch_size", p.batch_size);
      p.max_epochs = hyper.value("max_epochs", p.max_epochs);
      p.patience = hyper.value("patience", p.patience);
      p.validation_fraction = hyper.value("validation_fraction", p.validation_fraction);
      return std::make_unique<DnnModel>(train, p, seed);
    }
  }
  throw ValidationError("unknown model family");
}

/// Candidate points in order of increasing complexity; ties go to the earlier one.
inline std::vector<Json> default_grid(Family family) {
  switch (family) {
    case Family::lr:
      return {Json::object()};
    case Family::rr: {
      std::vector<Json> g;
      for (double l : {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0}) g.push_back({{"lambda", l}});
      return g;
    }
    case Family::plr:
      return {{{"degree", 1}}, {{"degree", 2}}, {{"degree", 3}}};
    case Family::rfr: {
      std::vector<Json> g;
      for (int trees : {50, 100})
        for (int mtry : {0, 5}) g.push_back({{"trees", trees}, {"max_depth", 12}, {"min_split", 4}, {"mtry", mtry}});
      return g;
    }
    case Family::dnn:
      return {{{"hidden_layers", 12},
               {"width", 64},
               {"learning_rate", 1e-3},
               {"batch_size", 32},
               {"max_epochs", 500},
               {"patience", 25},
               {"validation_fraction", 0.15}}};
  }
  return {};
}

struct CvResult {
  std::vector<FoldReport> folds;
  double mean_r2 = 0.0;

  std::vector<double> scores() const {
    std::vector<double> out;
    for (const auto& f : folds) out.push_back(f.r2);
    return out;
  }
};

/// Refits the model on k - 1 folds and scores the held-out fold, k times.
inline CvResult kfold_cv(const Dataset& train, Family family, const Json& hyper, int k = kDefaultFolds,
                         std::uint64_t seed = 1) {
  const auto folds = kfold_indices(static_cast<std::size_t>(train.rows()), k, seed);
  CvResult out;
  double sum = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldReport rep;
    rep.index = static_cast<int>(f);
    rep.validation = folds[f];
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) rep.train.insert(rep.train.end(), folds[g].begin(), folds[g].end());
    const Dataset tr = train.subset(rep.train);
    const Dataset va = train.subset(rep.validation);
    const auto model = fit_model(family, hyper, tr, seed + f);
    rep.r2 = r2_score(va.y, model->predict(va.x));
    sum += rep.r2;
    out.folds.push_back(std::move(rep));
  }
  out.mean_r2 = sum / static_cast<double>(folds.size());
  return out;
}

struct GridResult {
  Json best;
  CvResult best_cv;
  std::vector<std::pair<Json, double>> scores;  // every point with its mean CV R^2
};

inline constexpr double kGridTieTolerance = 1e-9;

inline GridResult grid_search(const Dataset& train, Family family, const std::vector<Json>& grid,
                              int k = kDefaultFolds, std::uint64_t seed = 1) {
  if (grid.empty()) throw ValidationError("empty hyperparameter grid");
  GridResult out;
  bool have = false;
  for (const auto& point : grid) {
    auto cv = kfold_cv(train, family, point, k, seed);
    out.scores.emplace_back(point, cv.mean_r2);
    if (!have || cv.mean_r2 > out.best_cv.mean_r2 + kGridTieTolerance) {
      out.best = point;
      out.best_cv = std::move(cv);
      have = true;
    }
  }
  return out;
}

struct TrainedModel {
  Family family = Family::lr;
  Json hyperparams = Json::object();
  std::shared_ptr<const Model> model;
  std::vector<double> fold_scores;
  double cv_r2 = 0.0;
  std::optional<double> test_r2;
  std::uint64_t seed = 1;
  std::string function;

  VectorXd predict(const MatrixXd& x) const { return model->predict(x); }
};

/// Grid search with k-fold CV, refit of the best point on all training rows,
/// and scoring on the held-out test rows.
inline TrainedModel train_family(const Dataset& train, const Dataset& test, Family family,
                                 std::vector<Json> grid = {}, std::uint64_t seed = 1, int k = kDefaultFolds) {
  if (grid.empty()) grid = default_grid(family);
  auto search = grid_search(train, family, grid, k, seed);
  TrainedModel out;
  out.family = family;
  out.hyperparams = search.best;
  out.fold_scores = search.best_cv.scores();
  out.cv_r2 = search.best_cv.mean_r2;
  out.seed = seed;
  out.model = fit_model(family, search.best, train, seed);
  if (test.rows() >= 2) out.test_r2 = r2_score(test.y, out.model->predict(test.x));
  return out;
}

inline Json to_json(const TrainedModel& m) {
  Json j;
  j["version"] = kArtifactVersion;
  j["function"] = m.function;
  j["family"] = to_string(m.family);
  j["seed"] = m.seed;
  j["hyperparams"] = m.hyperparams;
  j["features"] = Json(std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end()));
  j["normalization"] = normalization_to_json(m.model->normalization());
  j["fold_scores"] = m.fold_scores;
  j["cv_r2"] = m.cv_r2;
  j["test_r2"] = m.test_r2 ? Json(*m.test_r2) : Json();
  j["parameters"] = m.model->parameters();
  return j;
}

inline TrainedModel model_from_json(const Json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kArtifactVersion) throw ParseError("unsupported model artifact version " + std::to_string(version));
    TrainedModel m;
    m.family = family_from_string(j.at("family").get<std::string>());
    m.function = j.value("function", std::string{});
    m.seed = j.at("seed").get<std::uint64_t>();
    m.hyperparams = j.at("hyperparams");
    m.fold_scores = j.at("fold_scores").get<std::vector<double>>();
    m.cv_r2 = j.at("cv_r2").get<double>();
    if (!j.at("test_r2").is_null()) m.test_r2 = j.at("test_r2").get<double>();
    const auto norm = normalization_from_json(j.at("normalization"));
    const auto& params = j.at("parameters");
    switch (m.family) {
      case Family::lr:
      case Family::rr:
      case Family::plr: m.model = LinearModel::from_json(m.family, params, norm); break;
      case Family::rfr: m.model = RandomForest::from_json(params, norm); break;
      case Family::dnn: m.model = DnnModel::from_json(params, norm); break;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model artifact: ") + e.what());
  }
}

}  // namespace fncap::modeler
