#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include "fncap/modeler/model.hpp"

namespace fncap::modeler {

struct DnnParams {
  int hidden_layers = 12;
  int width = 64;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 500;
  int patience = 25;
  double validation_fraction = 0.15;
  bool zero_init = false;
};

/// Fully connected ReLU network with a linear scalar output.
class Mlp {
 public:
  Mlp() = default;

  Mlp(int inputs, int hidden_layers, int width, std::mt19937_64& rng, bool zero_init) {
    int fan_in = inputs;
    for (int l = 0; l <= hidden_layers; ++l) {
      const int out = l == hidden_layers ? 1 : width;
      MatrixXd w = MatrixXd::Zero(out, fan_in);
      if (!zero_init) {
        std::normal_distribution<double> he(0.0, std::sqrt(2.0 / fan_in));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = he(rng);
      }
      weights_.push_back(std::move(w));
      biases_.push_back(VectorXd::Zero(out));
      fan_in = out;
    }
  }

  std::size_t layers() const { return weights_.size(); }
  std::vector<MatrixXd>& weights() { return weights_; }
  std::vector<VectorXd>& biases() { return biases_; }
  const std::vector<MatrixXd>& weights() const { return weights_; }
  const std::vector<VectorXd>& biases() const { return biases_; }

  /// x is (samples x inputs); returns one output per sample.
  VectorXd forward(const MatrixXd& x) const {
    MatrixXd a = x.transpose();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      MatrixXd z = weights_[l] * a;
      z.colwise() += biases_[l];
      a = l + 1 < weights_.size() ? MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return a.row(0).transpose();
  }

  /// Mean absolute error over the batch and its gradient w.r.t. every
  /// parameter (same shapes as weights()/biases()).
  double mae_gradient(const MatrixXd& x, const VectorXd& y, std::vector<MatrixXd>& dw,
                      std::vector<VectorXd>& db) const {
    const auto n = x.rows();
    const std::size_t L = weights_.size();
    std::vector<MatrixXd> acts(L + 1);
    acts[0] = x.transpose();
    for (std::size_t l = 0; l < L; ++l) {
      MatrixXd z = weights_[l] * acts[l];
      z.colwise() += biases_[l];
      acts[l + 1] = l + 1 < L ? MatrixXd(z.cwiseMax(0.0)) : z;
    }
    const VectorXd residual = acts[L].row(0).transpose() - y;
    const double loss = residual.cwiseAbs().mean();
    MatrixXd delta(1, n);
    for (Eigen::Index i = 0; i < n; ++i)
      delta(0, i) = (residual(i) > 0 ? 1.0 : residual(i) < 0 ? -1.0 : 0.0) / static_cast<double>(n);
    dw.resize(L);
    db.resize(L);
    for (std::size_t l = L; l-- > 0;) {
      dw[l].noalias() = delta * acts[l].transpose();
      db[l] = delta.rowwise().sum();
      if (l == 0) break;
      MatrixXd back = weights_[l].transpose() * delta;
      delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
    return loss;
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.insert(out.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
      out.insert(out.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
    }
    return out;
  }

  void set_flat(const std::vector<double>& v) {
    std::size_t k = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].size(); ++i) weights_[l].data()[i] = v.at(k++);
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l].data()[i] = v.at(k++);
    }
    if (k != v.size()) throw ParseError("parameter vector length does not match the network");
  }

  static std::vector<double> flatten(const std::vector<MatrixXd>& dw, const std::vector<VectorXd>& db) {
    std::vector<double> out;
    for (std::size_t l = 0; l < dw.size(); ++l) {
      out.insert(out.end(), dw[l].data(), dw[l].data() + dw[l].size());
      out.insert(out.end(), db[l].data(), db[l].data() + db[l].size());
    }
    return out;
  }

 private:
  std::vector<MatrixXd> weights_;
  std::vector<VectorXd> biases_;
};

/// MLP regressor trained with Adam on MAE, early-stopped on a held-back
/// validation slice of the training rows. Inputs and target are standardized.
class DnnModel : public Model {
 public:
  DnnModel(const Dataset& train, DnnParams params, std::uint64_t seed) : params_(params) {
    if (params.hidden_layers < 0 || params.width < 1) throw ValidationError("invalid network shape");
    if (params.batch_size < 1 || params.max_epochs < 1) throw ValidationError("invalid training schedule");
    if (!(params.learning_rate > 0)) throw ValidationError("learning rate must be > 0");
    if (train.rows() < 2) throw ValidationError("network needs at least 2 training rows");
    std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
    norm_ = Normalization::fit(train.x);
    y_mean_ = train.y.mean();
    const double var = (train.y.array() - y_mean_).square().mean();
    y_scale_ = var > 0 ? std::sqrt(var) : 1.0;
    net_ = Mlp(static_cast<int>(train.x.cols()), params.hidden_layers, params.width, rng, params.zero_init);

    const MatrixXd z = norm_.apply(train.x);
    const VectorXd t = (train.y.array() - y_mean_) / y_scale_;
    const auto order = shuffled_indices(static_cast<std::size_t>(train.rows()), rng());
    auto n_val = static_cast<std::size_t>(std::llround(params.validation_fraction * static_cast<double>(order.size())));
    if (order.size() - n_val < 1) n_val = 0;
    std::vector<std::size_t> fit_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::vector<std::size_t> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    const Dataset fit = Dataset{z, t}.subset(fit_rows);
    const Dataset val = n_val > 0 ? Dataset{z, t}.subset(val_rows) : fit;

    Adam adam(net_, params.learning_rate);
    std::vector<MatrixXd> dw;
    std::vector<VectorXd> db;
    double best = std::numeric_limits<double>::infinity();
    auto best_params = net_.flat();
    int since_best = 0;
    const auto n_fit = static_cast<std::size_t>(fit.rows());
    for (int epoch = 0; epoch < params.max_epochs; ++epoch) {
      const auto perm = shuffled_indices(n_fit, rng());
      for (std::size_t start = 0; start < n_fit; start += static_cast<std::size_t>(params.batch_size)) {
        const auto stop = std::min(n_fit, start + static_cast<std::size_t>(params.batch_size));
        const Dataset batch = fit.subset({perm.begin() + static_cast<std::ptrdiff_t>(start),
                                          perm.begin() + static_cast<std::ptrdiff_t>(stop)});
        const double loss = net_.mae_gradient(batch.x, batch.y, dw, db);
        if (!std::isfinite(loss))
          throw Error("DNN training diverged at epoch " + std::to_string(epoch) + " (learning rate " +
                      format_double(params.learning_rate) + ", batch loss " + format_double(loss) + ")");
        adam.step(net_, dw, db);
      }
      for (std::size_t l = 0; l < net_.layers(); ++l)
        if (!net_.weights()[l].allFinite() || !net_.biases()[l].allFinite())
          throw Error("DNN training diverged at epoch " + std::to_string(epoch) + " (learning rate " +
                      format_double(params.learning_rate) + ", weights are not finite)");
      train_curve_.push_back((net_.forward(fit.x) - fit.y).cwiseAbs().mean());
      const double val_mae = (net_.forward(val.x) - val.y).cwiseAbs().mean();
      if (!std::isfinite(val_mae))
        throw Error("DNN training diverged at epoch " + std::to_string(epoch) + " (validation MAE is not finite)");
      validation_curve_.push_back(val_mae);
      if (val_mae < best) {
        best = val_mae;
        best_params = net_.flat();
        since_best = 0;
      } else if (++since_best >= params.patience) {
        break;
      }
    }
    net_.set_flat(best_params);
    epochs_ = train_curve_.size();
  }

  Family family() const override { return Family::dnn; }
  const Normalization& normalization() const override { return norm_; }

  VectorXd predict(const MatrixXd& x) const override {
    return net_.forward(norm_.apply(x)).array() * y_scale_ + y_mean_;
  }

  const std::vector<double>& training_curve() const { return train_curve_; }
  const std::vector<double>& validation_curve() const { return validation_curve_; }
  std::size_t epochs() const { return epochs_; }

  Json parameters() const override {
    Json layers = Json::array();
    for (const auto& w : net_.weights()) layers.push_back({w.rows(), w.cols()});
    return {{"layers", std::move(layers)},
            {"target_mean", y_mean_},
            {"target_scale", y_scale_},
            {"epochs", epochs_},
            {"weights_b64", encode_doubles(net_.flat())}};
  }

  static std::unique_ptr<DnnModel> from_json(const Json& params, const Normalization& norm) {
    std::unique_ptr<DnnModel> m(new DnnModel());
    m->norm_ = norm;
    m->y_mean_ = params.at("target_mean").get<double>();
    m->y_scale_ = params.at("target_scale").get<double>();
    m->epochs_ = params.at("epochs").get<std::size_t>();
    Eigen::Index fan_in = norm.mean.size();
    for (const auto& shape : params.at("layers")) {
      const auto rows = shape.at(0).get<Eigen::Index>();
      const auto cols = shape.at(1).get<Eigen::Index>();
      if (cols != fan_in || rows < 1) throw ParseError("layer shapes do not chain");
      m->net_.weights().push_back(MatrixXd::Zero(rows, cols));
      m->net_.biases().push_back(VectorXd::Zero(rows));
      fan_in = rows;
    }
    if (m->net_.layers() == 0 || fan_in != 1) throw ParseError("network must end in a single output");
    m->net_.set_flat(decode_doubles(params.at("weights_b64").get<std::string>()));
    return m;
  }

 private:
  DnnModel() = default;

  struct Adam {
    Adam(const Mlp& net, double lr) : lr(lr) {
      for (const auto& w : net.weights()) {
        mw.push_back(MatrixXd::Zero(w.rows(), w.cols()));
        vw.push_back(MatrixXd::Zero(w.rows(), w.cols()));
      }
      for (const auto& b : net.biases()) {
        mb.push_back(VectorXd::Zero(b.size()));
        vb.push_back(VectorXd::Zero(b.size()));
      }
    }

    void step(Mlp& net, const std::vector<MatrixXd>& dw, const std::vector<VectorXd>& db) {
      ++t;
      const double c1 = 1.0 - std::pow(beta1, t);
      const double c2 = 1.0 - std::pow(beta2, t);
      for (std::size_t l = 0; l < dw.size(); ++l) {
        mw[l] = beta1 * mw[l] + (1 - beta1) * dw[l];
        vw[l] = beta2 * vw[l] + (1 - beta2) * dw[l].cwiseAbs2();
        net.weights()[l].array() -= lr * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + eps);
        mb[l] = beta1 * mb[l] + (1 - beta1) * db[l];
        vb[l] = beta2 * vb[l] + (1 - beta2) * db[l].cwiseAbs2();
        net.biases()[l].array() -= lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
      }
    }

    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int t = 0;
    std::vector<MatrixXd> mw, vw;
    std::vector<VectorXd> mb, vb;
  };

  DnnParams params_;
  Normalization norm_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  Mlp net_;
  std::vector<double> train_curve_;
  std::vector<double> validation_curve_;
  std::size_t epochs_ = 0;
};

inline DnnModel fit_dnn(const Dataset& train, const DnnParams& params = {}, std::uint64_t seed = 1) {
  return DnnModel(train, params, seed);
}

}  // namespace fncap::modeler
