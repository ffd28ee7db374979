#pragma once

#include "alignlab/core.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace alignlab {

/// Regression data: n feature rows x_k in R^d with real labels y_k.
///
/// Rows must be finite and nonzero. The Gram matrix X^T X / n is computed
/// once at construction.
class Dataset {
 public:
  Dataset(Mat features, Vec labels) : features_(std::move(features)), labels_(std::move(labels)) {
    if (features_.rows() < 1 || features_.cols() < 1) {
      throw DataError("dataset needs n >= 1 points and d >= 1 features");
    }
    if (labels_.size() != features_.rows()) {
      throw DataError("dataset has " + std::to_string(features_.rows()) + " feature rows but " +
                      std::to_string(labels_.size()) + " labels");
    }
    for (Eigen::Index k = 0; k < features_.rows(); ++k) {
      if (!features_.row(k).allFinite() || !std::isfinite(labels_[k])) {
        throw DataError("dataset point " + std::to_string(k) + " is not finite");
      }
      if (features_.row(k).squaredNorm() == 0.0) {
        throw DataError("dataset point " + std::to_string(k) + " is the zero vector");
      }
    }
    gram_ = features_.transpose() * features_ / static_cast<double>(features_.rows());
  }

  const Mat& features() const { return features_; }
  const Vec& labels() const { return labels_; }
  const Mat& gram() const { return gram_; }
  int n() const { return static_cast<int>(features_.rows()); }
  int d() const { return static_cast<int>(features_.cols()); }
  Vec x(int k) const { return features_.row(k).transpose(); }
  double y(int k) const { return labels_[k]; }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.features_ == b.features_ && a.labels_ == b.labels_;
  }

 private:
  Mat features_;
  Vec labels_;
  Mat gram_;
};

// File format: {"features": [[...], ...], "labels": [...]}.

inline Dataset dataset_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("features") || !j.contains("labels")) {
    throw DataError("dataset JSON needs \"features\" and \"labels\"");
  }
  const auto& f = j.at("features");
  const auto& l = j.at("labels");
  if (!f.is_array() || !l.is_array() || f.empty()) {
    throw DataError("dataset \"features\" and \"labels\" must be non-empty arrays");
  }
  const auto n = static_cast<Eigen::Index>(f.size());
  if (!f[0].is_array() || f[0].empty()) throw DataError("feature rows must be non-empty arrays");
  const auto d = static_cast<Eigen::Index>(f[0].size());
  Mat x(n, d);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& row = f[static_cast<std::size_t>(k)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d) {
      throw DataError("feature row " + std::to_string(k) + " has the wrong length");
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto& v = row[static_cast<std::size_t>(i)];
      if (!v.is_number()) throw DataError("feature row " + std::to_string(k) + " has a non-numeric entry");
      x(k, i) = v.get<double>();
    }
  }
  if (static_cast<Eigen::Index>(l.size()) != n) {
    throw DataError("dataset has " + std::to_string(n) + " feature rows but " + std::to_string(l.size()) +
                    " labels");
  }
  Vec y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& v = l[static_cast<std::size_t>(k)];
    if (!v.is_number()) throw DataError("label " + std::to_string(k) + " is not numeric");
    y[k] = v.get<double>();
  }
  return Dataset(std::move(x), std::move(y));
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json features = nlohmann::json::array();
  for (int k = 0; k < ds.n(); ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (int i = 0; i < ds.d(); ++i) row.push_back(ds.features()(k, i));
    features.push_back(std::move(row));
  }
  nlohmann::json labels = nlohmann::json::array();
  for (int k = 0; k < ds.n(); ++k) labels.push_back(ds.y(k));
  return {{"features", std::move(features)}, {"labels", std::move(labels)}};
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("dataset file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset file " + path + " is not valid JSON: " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace alignlab
