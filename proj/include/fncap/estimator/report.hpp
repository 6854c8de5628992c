#pragma once

#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fncap/estimator/capacity.hpp"

namespace fncap::estimator {

inline constexpr double kAccuracyThreshold = 0.75;

struct FamilyScore {
  std::optional<double> test_r2;
  double cv_r2 = 0.0;
  std::vector<double> fold_scores;
  Json hyperparams;
  std::string error;  // set when the family could not be trained
};

/// Test R^2 per function (rows) and family (columns).
struct AccuracyReport {
  std::map<std::string, std::map<modeler::Family, FamilyScore>> rows;
  std::map<std::string, std::string> function_errors;

  void add(const std::string& function, const modeler::TrainedModel& m) {
    rows[function][m.family] = {m.test_r2, m.cv_r2, m.fold_scores, m.hyperparams, {}};
  }

  /// Functions whose family scores at least the threshold.
  std::size_t passing(modeler::Family family, double threshold = kAccuracyThreshold) const {
    std::size_t n = 0;
    for (const auto& [fn, cols] : rows) {
      auto it = cols.find(family);
      if (it != cols.end() && it->second.test_r2 && *it->second.test_r2 >= threshold) ++n;
    }
    return n;
  }

  std::vector<std::string> flags(double threshold = kAccuracyThreshold) const {
    std::vector<std::string> out;
    for (const auto& [fn, cols] : rows)
      for (const auto& [family, s] : cols)
        if (!s.test_r2 || *s.test_r2 < threshold)
          out.push_back(fn + " " + modeler::to_string(family) + " below " + format_double(threshold));
    return out;
  }
};

inline Json to_json(const AccuracyReport& r) {
  Json functions = Json::object();
  for (const auto& [fn, cols] : r.rows) {
    Json row = Json::object();
    for (auto family : modeler::kFamilies) {
      auto it = cols.find(family);
      if (it == cols.end()) continue;
      const auto& s = it->second;
      Json cell;
      cell["test_r2"] = s.test_r2 ? Json(*s.test_r2) : Json();
      cell["cv_r2"] = s.cv_r2;
      cell["fold_scores"] = s.fold_scores;
      cell["hyperparams"] = s.hyperparams;
      cell["below_threshold"] = !s.test_r2 || *s.test_r2 < kAccuracyThreshold;
      if (!s.error.empty()) cell["error"] = s.error;
      row[modeler::to_string(family)] = cell;
    }
    functions[fn] = row;
  }
  Json errors = Json::object();
  for (const auto& [fn, msg] : r.function_errors) errors[fn] = msg;
  Json summary = Json::object();
  for (auto family : modeler::kFamilies) summary[modeler::to_string(family)] = r.passing(family);
  return {{"threshold", kAccuracyThreshold},
          {"functions", functions},
          {"errors", errors},
          {"functions_at_or_above_threshold", summary},
          {"flags", r.flags()}};
}

/// Aligned text table; cells under the threshold carry a trailing '*'.
inline std::string to_text(const AccuracyReport& r) {
  std::size_t name_width = 8;
  for (const auto& [fn, _] : r.rows) name_width = std::max(name_width, fn.size());
  for (const auto& [fn, _] : r.function_errors) name_width = std::max(name_width, fn.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_width)) << "function";
  for (auto family : modeler::kFamilies) os << "  " << std::right << std::setw(8) << modeler::to_string(family);
  os << '\n';
  for (const auto& [fn, cols] : r.rows) {
    os << std::left << std::setw(static_cast<int>(name_width)) << fn;
    for (auto family : modeler::kFamilies) {
      auto it = cols.find(family);
      std::string cell = "-";
      if (it != cols.end() && it->second.test_r2) {
        std::ostringstream v;
        v << std::fixed << std::setprecision(3) << *it->second.test_r2;
        cell = v.str() + (*it->second.test_r2 < kAccuracyThreshold ? "*" : " ");
      }
      os << "  " << std::right << std::setw(8) << cell;
    }
    os << '\n';
  }
  for (const auto& [fn, msg] : r.function_errors)
    os << std::left << std::setw(static_cast<int>(name_width)) << fn << "  error: " << msg << '\n';
  os << "* test R^2 below " << std::fixed << std::setprecision(2) << kAccuracyThreshold << '\n';
  return os.str();
}

struct CapacityTriple {
  std::string function;
  DeploymentConfig config;
  std::optional<double> measured_rps;
  double ideal_rps = 0.0;
  std::optional<double> model_rps;
  std::string model_family;
};

inline void write_triples_csv(std::ostream& out, const std::vector<CapacityTriple>& rows) {
  out << "fn,memory_mib,concurrency,measured_rps,ideal_rps,model_rps,model_family\n";
  for (const auto& t : rows)
    out << t.function << ',' << t.config.memory_mib << ',' << t.config.concurrency << ','
        << format_optional(t.measured_rps) << ',' << format_double(t.ideal_rps) << ','
        << format_optional(t.model_rps) << ',' << t.model_family << '\n';
}

}  // namespace fncap::estimator
