#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace fairkan {

/// Features (m x n), binary sensitive attributes (m x s), binary labels (m).
struct Dataset {
  Eigen::MatrixXd features;
  Eigen::MatrixXi sensitive;
  Eigen::VectorXi labels;
  std::vector<std::string> feature_names;
  std::vector<std::string> sensitive_names;
  std::string label_name = "label";

  Eigen::Index rows() const noexcept { return features.rows(); }
  Eigen::Index feature_count() const noexcept { return features.cols(); }
  Eigen::Index attribute_count() const noexcept { return sensitive.cols(); }

  Dataset select_rows(const std::vector<Eigen::Index>& indices) const;
  /// Throws DataError when an invariant (finite features, binary columns) fails.
  void validate() const;
};

struct CsvSchema {
  std::vector<std::string> features;
  std::vector<std::string> sensitive;
  std::string label;
};

struct LoadResult {
  Dataset dataset;
  long dropped_rows = 0;
};

/// Comma-separated, header row required. Rows with an empty or non-numeric
/// value in any schema column are dropped and counted.
LoadResult load_csv(const std::filesystem::path& path, const CsvSchema& schema);
/// Header: features, then sensitive columns, then the label.
std::string to_csv(const Dataset& data);
void write_csv(const Dataset& data, const std::filesystem::path& path);

struct Split {
  Dataset train;
  Dataset test;
  std::vector<Eigen::Index> train_indices;
  std::vector<Eigen::Index> test_indices;
  /// Strata that were too small to stratify.
  int fallback_strata = 0;
};

/// Stratified on (joint sensitive pattern, label). Strata with fewer than two
/// rows are pooled into one shuffled remainder.
Split split(const Dataset& data, double test_fraction, std::uint64_t seed);

/// Per-feature min/max from training rows, mapping to [-1, 1].
struct Scaler {
  Eigen::VectorXd min;
  Eigen::VectorXd max;
};

Scaler fit_scaler(const Dataset& train);
/// Constant features map to 0; values outside the fitted range are clamped.
Dataset apply_scaler(const Scaler& scaler, const Dataset& data);

struct SyntheticSpec {
  int rows = 8000;
  int features = 10;
  int attributes = 2;
  /// P(z_j = 1).
  double group_balance = 0.35;
  /// gamma: label logit shift per protected-group membership.
  double bias = 2.0;
  /// Scale of the per-feature group mean shifts.
  double mixing = 1.25;
  /// Euclidean norm of the label weight vector w.
  double signal = 2.5;
  /// Standard deviation of the feature noise.
  double noise = 1.0;
  std::uint64_t seed = 7;
};

/// z_j ~ Bernoulli(balance); x_f = noise * N(0,1) - mixing * a_f * z_{f mod s}
/// with a_f ~ U(0.5, 1.5); y ~ Bernoulli(sigmoid(w.x + b - bias * sum_j z_j))
/// with w = signal * |N(0, I)| / norm and b = bias * balance * s (centres the logit).
Dataset generate_synthetic(const SyntheticSpec& spec);

nlohmann::ordered_json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

}  // namespace fairkan
