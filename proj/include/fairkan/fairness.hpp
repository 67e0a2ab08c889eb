#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "json.hpp"

namespace fairkan {

using Labels = Eigen::VectorXi;

/// Positive-prediction rates of the two groups of one binary attribute.
/// A rate is empty when its group has no members.
struct GroupRates {
  std::optional<double> r0;
  std::optional<double> r1;
  long n0 = 0;
  long n1 = 0;
};

GroupRates group_rates(const Labels& predicted, const Labels& z);

/// |r1 - r0|; empty when either group is empty.
std::optional<double> dp_gap(const Labels& predicted, const Labels& z);

/// 100 * min(r0, r1) / max(r0, r1); 100 when neither group has a positive
/// prediction; empty when either group is empty.
std::optional<double> p_percent_rule(const Labels& predicted, const Labels& z);

/// 1 iff score > cutoff.
Labels threshold(const Eigen::VectorXd& scores, double cutoff = 0.5);

double accuracy(const Labels& predicted, const Labels& y);

/// Mann-Whitney rank statistic with ties counted as 1/2; empty when y has a
/// single class.
std::optional<double> auroc(const Eigen::VectorXd& scores, const Labels& y);

struct AttributeFairness {
  std::optional<double> dp_gap;
  std::optional<double> p_rule;
  GroupRates rates;
};

struct FairnessReport {
  std::vector<AttributeFairness> attributes;
  double accuracy = 0.0;
  std::optional<double> auroc;
};

/// `probabilities` are post-sigmoid scores; `sensitive` is rows x attributes.
FairnessReport evaluate_fairness(const Eigen::VectorXd& probabilities, const Eigen::MatrixXi& sensitive,
                                 const Labels& y, double cutoff = 0.5);

nlohmann::ordered_json to_json(const FairnessReport& report);

/// Per-attribute fairness penalty, adapted once per epoch:
///   delta_j = (tau - p_rule_j) / tau,  lambda_j <- clip(lambda_j + eta delta_j, lo, hi).
struct LambdaController {
  std::vector<double> lambdas;
  double eta = 0.04;
  double tau = 90.0;
  double lo = 0.1;
  double hi = 1.0;

  LambdaController() = default;
  LambdaController(std::size_t attributes, double initial, double eta, double tau);
};

/// Attributes whose p-rule is empty keep their lambda (a warning is logged).
void update_lambda(LambdaController& controller, const std::vector<std::optional<double>>& p_rules);

}  // namespace fairkan
