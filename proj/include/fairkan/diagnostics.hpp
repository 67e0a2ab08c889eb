#pragma once

// Numerical checks on trained networks: finite-difference gradient checks,
// empirical Lipschitz and smoothness constants, 1-D Wasserstein distances,
// the score-pushforward contraction check and per-group score histograms.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairkan/data.hpp"
#include "fairkan/kan.hpp"

namespace fairkan {

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

struct GradCheckResult {
  double max_relative_error = 0.0;
  /// Index of the worst probe in the checked coordinate space.
  Eigen::Index worst_index = -1;
  int probes = 0;
};

/// Central differences of `objective` at `x` against `analytic` on `probes`
/// random coordinates. A coordinate is drawn from `candidates` when given,
/// otherwise from all of `x`.
GradCheckResult check_gradient(const std::function<double(const Eigen::VectorXd&)>& objective,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, int probes,
                               double step, std::uint64_t seed,
                               const std::vector<Eigen::Index>& candidates = {});

/// Gradient check of backward() on J = sum(W .* f(X)) for a random in-domain
/// batch X and random weights W. Probes are split between parameters and
/// inputs.
GradCheckResult grad_check(const KanNetwork<double>& net, int probes, double step, std::uint64_t seed,
                           int batch = 4);

struct LipschitzResult {
  double estimate = 0.0;
  double bound = 0.0;
  int pairs = 0;
};

/// Layer product of (in_dim * max edge slope bound). Bounds |f(x) - f(x')| /
/// ||x - x'|| in the max norm, and therefore in the Euclidean norm.
double lipschitz_bound(const KanNetwork<double>& net);

/// Max |f(x) - f(x')| / ||x - x'||_2 over random pairs and 1e-3 perturbation
/// pairs. Base points are drawn from `points` rows when non-empty, else
/// uniformly from the first-layer grid box.
LipschitzResult lipschitz_estimate(const KanNetwork<double>& net, const Eigen::MatrixXd& points, int pairs,
                                   std::uint64_t seed);

/// Max |f(x + hu) - 2 f(x) + f(x - hu)| / h^2 over random unit directions u.
/// A probe counts only if x +- hu stay inside the first-layer box and every
/// hidden activation at the three points stays inside its layer's grid.
double smoothness_estimate(const KanNetwork<double>& net, const Eigen::MatrixXd& points, int lines,
                           std::uint64_t seed, double h = 1e-3);

/// Empirical W1 between two samples, via sorted quantile functions.
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

struct ContractionResult {
  double w1_input = 0.0;
  double w1_output = 0.0;
  double lipschitz = 0.0;
  bool ok = true;
  Eigen::Index n0 = 0;
  Eigen::Index n1 = 0;
};

/// Compares W1 of raw classifier scores between z_j = 0 and z_j = 1 with
/// `lipschitz` times the largest W1 of the features projected on
/// `directions` random unit vectors (10% slack).
ContractionResult contraction_check(const KanNetwork<double>& net, const Dataset& data, int attribute,
                                    double lipschitz, int directions, std::uint64_t seed);

struct HistogramRow {
  int attribute = 0;
  int group = 0;
  double bin_lo = 0.0;
  double bin_hi = 0.0;
  long count = 0;
  double density = 0.0;
};

/// Fixed-width histograms of `probabilities` on [0, 1] per (attribute, group).
/// Density is count / group size. Score 1 falls into the last bin.
std::vector<HistogramRow> score_histograms(const Eigen::VectorXd& probabilities, const Eigen::MatrixXi& sensitive,
                                           int bins);
std::vector<HistogramRow> export_score_distributions(const KanNetwork<double>& net, const Dataset& data, int bins);
std::string histograms_to_csv(const std::vector<HistogramRow>& rows);

/// Total-variation distance between the two group histograms of an attribute.
double histogram_tv_distance(const std::vector<HistogramRow>& rows, int attribute);

struct TheoryOptions {
  int lipschitz_pairs = 10000;
  int smoothness_lines = 2000;
  double smoothness_step = 1e-3;
  int directions = 100;
  std::uint64_t seed = 7;
};

struct TheoryReport {
  double lipschitz_estimate = 0.0;
  double lipschitz_bound = 0.0;
  double smoothness_estimate = 0.0;
  /// Same probes at half the step.
  double smoothness_estimate_half_step = 0.0;
  std::vector<ContractionResult> contraction;
  int lipschitz_pairs = 0;
  int smoothness_lines = 0;
  Eigen::Index rows = 0;
};

TheoryReport theory_report(const KanNetwork<double>& net, const Dataset& data, const TheoryOptions& options = {});
nlohmann::ordered_json to_json(const TheoryReport& report);

}  // namespace fairkan
