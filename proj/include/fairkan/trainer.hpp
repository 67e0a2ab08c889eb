#pragma once

// Adversarial debiasing of a KAN classifier against a KAN adversary.
//
// For every grid level of the schedule: build (level 0) or refine (later
// levels) both networks, fit the adversary to predict each sensitive
// attribute from the frozen classifier's probability, then run T epochs
// in which the classifier minimizes
//
//   L_Y(f(x), y) - sum_j lambda_j * L_Z(g_j(sigmoid(f(x))), z_j) + reg(f)
//
// and lambda_j is adapted from the epoch's p%-rule. Level 0 additionally
// pretrains the classifier on L_Y alone.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairkan/data.hpp"
#include "fairkan/fairness.hpp"
#include "fairkan/kan.hpp"
#include "fairkan/optim.hpp"

namespace fairkan {

struct TrainConfig {
  std::vector<int> classifier_widths{10, 16, 8, 1};
  std::vector<int> adversary_widths{1, 32, 2};
  int order = 3;
  std::vector<int> grid_schedule{5, 10};
  bool base_enabled = true;
  OptimizerConfig classifier_optimizer{OptimizerKind::Adam, 0.01};
  OptimizerConfig adversary_optimizer{OptimizerKind::Adam, 0.1};
  /// Debias epochs per grid level (T).
  int epochs = 30;
  int pretrain_classifier_epochs = 50;
  int pretrain_adversary_epochs = 100;
  int batch_size = 128;
  /// Adversary also takes a minimizing step on every debias batch.
  bool alternating = false;
  double l1 = 0.001;
  double l2 = 0.001;
  double eta = 0.04;
  double tau = 90.0;
  double initial_lambda = 0.1;
  /// One lambda shared by all attributes, driven by the mean p%-rule.
  bool scalar_lambda = false;
  std::uint64_t seed = 7;
  /// Log every n-th epoch of each phase (the last epoch is always logged).
  int eval_every = 1;

  /// Throws ConfigError for an inconsistent configuration.
  void validate() const;
};

struct BceResult {
  double loss;
  /// d loss / d score, already divided by the row count.
  Eigen::VectorXd grad;
};

/// Mean binary cross-entropy on raw scores, log-sum-exp stable.
BceResult bce_loss(const Eigen::VectorXd& scores, const Eigen::VectorXi& targets);

/// One metrics log line.
struct EpochRecord {
  std::string phase;
  int grid_level = 0;
  int epoch = 0;
  double loss_y = 0.0;
  std::vector<double> loss_z;
  std::vector<double> lambdas;
  FairnessReport report;
};

nlohmann::ordered_json to_json(const EpochRecord& record);

/// Per-batch losses, for convergence traces.
struct BatchLoss {
  std::string phase;
  int grid_level = 0;
  int epoch = 0;
  long iteration = 0;
  double loss_y = 0.0;
  std::vector<double> loss_z;
  double total = 0.0;
};

struct TrainState {
  KanNetwork<double> classifier;
  KanNetwork<double> adversary;
  OptimizerState classifier_opt;
  OptimizerState adversary_opt;
  LambdaController lambda;
  int grid_level = 0;
  long iteration = 0;
  std::vector<EpochRecord> history;
  std::vector<BatchLoss> loss_trace;
  /// Classifier after level-0 pretraining, before any debiasing.
  std::optional<KanNetwork<double>> pretrained_classifier;
  /// Output-change bounds reported by each grid refinement.
  std::vector<double> refinement_residuals;
};

using MetricsSink = std::function<void(const EpochRecord&)>;

/// Networks at grid level 0 with hidden grid domains fitted on `train`.
TrainState init_state(const TrainConfig& config, const Dataset& train);

/// Classifier and adversary evaluated on a whole dataset.
struct Evaluation {
  Eigen::VectorXd scores;
  Eigen::VectorXd probabilities;
  Eigen::MatrixXd adversary_scores;
  double loss_y = 0.0;
  std::vector<double> loss_z;
  FairnessReport report;
};

Evaluation evaluate(const TrainState& state, const Dataset& data);
Eigen::VectorXd classifier_probabilities(const KanNetwork<double>& classifier, const Eigen::MatrixXd& features);

/// Classifier objective of one debias batch and its gradient with respect to
/// the flattened classifier parameters.
struct CompositeLoss {
  double total = 0.0;
  double loss_y = 0.0;
  std::vector<double> loss_z;
  Eigen::VectorXd grad;
  /// Adversary inputs of the batch (classifier probabilities).
  Eigen::MatrixXd probabilities;
};

CompositeLoss composite_classifier_loss(const TrainState& state, const TrainConfig& config,
                                        const Eigen::MatrixXd& features, const Eigen::VectorXi& labels,
                                        const Eigen::MatrixXi& sensitive);

void pretrain_classifier(TrainState& state, const TrainConfig& config, const Dataset& train, int epochs,
                         const MetricsSink& sink = {});
void pretrain_adversary(TrainState& state, const TrainConfig& config, const Dataset& train, int epochs,
                        const MetricsSink& sink = {});
/// `lambda_data` is the split the p%-rule for the lambda update is measured
/// on; defaults to `train`.
void debias_epoch(TrainState& state, const TrainConfig& config, const Dataset& train, int epoch,
                  const MetricsSink& sink = {}, const Dataset* lambda_data = nullptr);

/// Refine both networks to `intervals` and reset the optimizer moments.
void advance_grid_level(TrainState& state, const TrainConfig& config, int level);

/// Full schedule. Metrics go to `sink` as they are produced.
TrainState train(const TrainConfig& config, const Dataset& train, const MetricsSink& sink = {},
                 const Dataset* lambda_data = nullptr);

}  // namespace fairkan
