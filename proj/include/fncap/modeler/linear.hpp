#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "fncap/modeler/model.hpp"

namespace fncap::modeler {

inline constexpr std::size_t kDefaultColumnCap = 200;
inline constexpr double kRankFallbackLambda = 1e-8;

/// All monomials of degree 1..degree over p variables, each as a sorted list
/// of variable indices (x0*x0*x2 -> {0,0,2}).
inline std::vector<std::vector<int>> monomials(int p, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> current;
  std::function<void(int, int)> grow = [&](int start, int remaining) {
    if (remaining == 0) {
      out.push_back(current);
      return;
    }
    for (int v = start; v < p; ++v) {
      current.push_back(v);
      grow(v, remaining - 1);
      current.pop_back();
    }
  };
  for (int d = 1; d <= degree; ++d) grow(0, d);
  return out;
}

/// Number of polynomial terms including the intercept: C(p + d, d).
inline std::size_t polynomial_terms(int p, int degree) {
  double c = 1.0;
  for (int i = 1; i <= degree; ++i) c = c * (p + i) / i;
  return static_cast<std::size_t>(std::llround(c));
}

inline MatrixXd expand(const MatrixXd& z, const std::vector<std::vector<int>>& terms) {
  MatrixXd out(z.rows(), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t t = 0; t < terms.size(); ++t) {
    VectorXd col = VectorXd::Ones(z.rows());
    for (int v : terms[t]) col.array() *= z.col(v).array();
    out.col(static_cast<Eigen::Index>(t)) = col;
  }
  return out;
}

/// Least squares on standardized, optionally polynomially expanded features.
/// The intercept is fitted by centering and is never penalized. Covers LR
/// (degree 1, lambda 0), RR (lambda > 0) and PLR (degree > 1).
class LinearModel : public Model {
 public:
  struct Params {
    int degree = 1;
    double lambda = 0.0;
    std::size_t column_cap = kDefaultColumnCap;
  };

  LinearModel(Family family, const Dataset& train, Params params) : family_(family), params_(params) {
    if (params.degree < 1) throw ValidationError("polynomial degree must be >= 1");
    if (params.lambda < 0) throw ValidationError("ridge lambda must be >= 0");
    const auto p = static_cast<int>(train.x.cols());
    if (polynomial_terms(p, params.degree) > params.column_cap)
      throw ValidationError("degree " + std::to_string(params.degree) + " expansion of " + std::to_string(p) +
                            " features has " + std::to_string(polynomial_terms(p, params.degree)) +
                            " terms, above the cap of " + std::to_string(params.column_cap));
    terms_ = monomials(p, params.degree);
    if (train.rows() < 2) throw ValidationError("linear fit needs at least 2 rows");
    norm_ = Normalization::fit(train.x);
    const MatrixXd phi = expand(norm_.apply(train.x), terms_);
    const VectorXd phi_mean = phi.colwise().mean().transpose();
    const double y_mean = train.y.mean();
    const MatrixXd a = phi.rowwise() - phi_mean.transpose();
    const VectorXd b = train.y.array() - y_mean;

    double lambda = params.lambda;
    if (lambda == 0.0) {
      Eigen::ColPivHouseholderQR<MatrixXd> qr(a);
      if (qr.rank() == a.cols()) {
        beta_ = qr.solve(b);
      } else {
        rank_deficient_ = true;
        lambda = kRankFallbackLambda;
      }
    }
    if (lambda > 0.0) beta_ = solve_ridge(a, b, lambda);
    intercept_ = y_mean - phi_mean.dot(beta_);
  }

  Family family() const override { return family_; }
  const Normalization& normalization() const override { return norm_; }

  VectorXd predict(const MatrixXd& x) const override {
    return (expand(norm_.apply(x), terms_) * beta_).array() + intercept_;
  }

  bool rank_deficient() const { return rank_deficient_; }
  const VectorXd& coefficients() const { return beta_; }  // standardized space
  double intercept() const { return intercept_; }

  /// Slopes and intercept on the original feature scale (degree 1 only).
  std::pair<VectorXd, double> raw_coefficients() const {
    if (params_.degree != 1) throw Error("raw coefficients exist only for degree 1");
    VectorXd slopes = beta_.array() / norm_.stddev.array();
    return {slopes, intercept_ - slopes.dot(norm_.mean)};
  }

  Json parameters() const override {
    std::vector<double> beta(beta_.data(), beta_.data() + beta_.size());
    return {{"degree", params_.degree},
            {"lambda", params_.lambda},
            {"rank_deficient", rank_deficient_},
            {"intercept", intercept_},
            {"coefficients_b64", encode_doubles(beta)}};
  }

  static std::unique_ptr<LinearModel> from_json(Family family, const Json& params, const Normalization& norm) {
    std::unique_ptr<LinearModel> m(new LinearModel(family));
    m->params_.degree = params.at("degree").get<int>();
    m->params_.lambda = params.at("lambda").get<double>();
    m->rank_deficient_ = params.at("rank_deficient").get<bool>();
    m->intercept_ = params.at("intercept").get<double>();
    m->beta_ = to_vector(decode_doubles(params.at("coefficients_b64").get<std::string>()));
    m->norm_ = norm;
    m->terms_ = monomials(static_cast<int>(norm.mean.size()), m->params_.degree);
    if (static_cast<std::size_t>(m->beta_.size()) != m->terms_.size())
      throw ParseError("coefficient count does not match the polynomial expansion");
    return m;
  }

 private:
  explicit LinearModel(Family family) : family_(family) {}

  // Penalized least squares as an augmented system [A; sqrt(l) I] b = [y; 0].
  static VectorXd solve_ridge(const MatrixXd& a, const VectorXd& b, double lambda) {
    const auto n = a.rows();
    const auto p = a.cols();
    MatrixXd aug(n + p, p);
    aug.topRows(n) = a;
    aug.bottomRows(p) = std::sqrt(lambda) * MatrixXd::Identity(p, p);
    VectorXd rhs = VectorXd::Zero(n + p);
    rhs.head(n) = b;
    return aug.colPivHouseholderQr().solve(rhs);
  }

  Family family_;
  Params params_;
  std::vector<std::vector<int>> terms_;
  Normalization norm_;
  VectorXd beta_;
  double intercept_ = 0.0;
  bool rank_deficient_ = false;
};

inline LinearModel fit_linear(const Dataset& train) { return LinearModel(Family::lr, train, {}); }

inline LinearModel fit_ridge(const Dataset& train, double lambda) {
  return LinearModel(Family::rr, train, {.degree = 1, .lambda = lambda});
}

inline LinearModel fit_polynomial(const Dataset& train, int degree, std::size_t column_cap = kDefaultColumnCap) {
  return LinearModel(Family::plr, train, {.degree = degree, .lambda = 0.0, .column_cap = column_cap});
}

}  // namespace fncap::modeler
