#pragma once

#include <json.hpp>

#include <string>

#include "fncap/modeler/dataset.hpp"

namespace fncap::modeler {

using Json = nlohmann::ordered_json;

enum class Family { lr, plr, rr, rfr, dnn };

inline constexpr std::array<Family, 5> kFamilies = {Family::lr, Family::plr, Family::rr, Family::rfr, Family::dnn};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::lr: return "LR";
    case Family::plr: return "PLR";
    case Family::rr: return "RR";
    case Family::rfr: return "RFR";
    case Family::dnn: return "DNN";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (auto f : kFamilies)
    if (s == to_string(f)) return f;
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto f : kFamilies)
    if (lower == to_string(f)) return f;
  throw ValidationError("unknown model family '" + s + "'");
}

/// A fitted regressor. Immutable after fitting; predict() is deterministic.
class Model {
 public:
  virtual ~Model() = default;
  virtual Family family() const = 0;
  virtual VectorXd predict(const MatrixXd& x) const = 0;
  virtual const Normalization& normalization() const = 0;
  virtual Json parameters() const = 0;
};

inline Json normalization_to_json(const Normalization& n) {
  std::vector<double> mean(n.mean.data(), n.mean.data() + n.mean.size());
  std::vector<double> sd(n.stddev.data(), n.stddev.data() + n.stddev.size());
  return {{"mean_b64", encode_doubles(mean)}, {"stddev_b64", encode_doubles(sd)}};
}

inline VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Normalization normalization_from_json(const Json& j) {
  Normalization n;
  n.mean = to_vector(decode_doubles(j.at("mean_b64").get<std::string>()));
  n.stddev = to_vector(decode_doubles(j.at("stddev_b64").get<std::string>()));
  if (n.mean.size() != n.stddev.size()) throw ParseError("normalization vectors differ in length");
  return n;
}

}  // namespace fncap::modeler
