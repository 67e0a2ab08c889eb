#include "fairkan/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "fairkan/errors.hpp"

namespace fairkan {
namespace {

void require_same_length(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

GroupRates group_rates(const Labels& predicted, const Labels& z) {
  require_same_length(predicted.size(), z.size(), "group_rates");
  GroupRates out;
  long pos0 = 0, pos1 = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] == 1) {
      ++out.n1;
      pos1 += predicted[i] == 1;
    } else {
      ++out.n0;
      pos0 += predicted[i] == 1;
    }
  }
  if (out.n0 > 0) out.r0 = double(pos0) / double(out.n0);
  if (out.n1 > 0) out.r1 = double(pos1) / double(out.n1);
  return out;
}

std::optional<double> dp_gap(const Labels& predicted, const Labels& z) {
  const auto r = group_rates(predicted, z);
  if (!r.r0 || !r.r1) return std::nullopt;
  return std::abs(*r.r1 - *r.r0);
}

std::optional<double> p_percent_rule(const Labels& predicted, const Labels& z) {
  const auto r = group_rates(predicted, z);
  if (!r.r0 || !r.r1) return std::nullopt;
  const double hi = std::max(*r.r0, *r.r1);
  if (hi == 0.0) return 100.0;
  return 100.0 * std::min(*r.r0, *r.r1) / hi;
}

Labels threshold(const Eigen::VectorXd& scores, double cutoff) {
  Labels out(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) out[i] = scores[i] > cutoff ? 1 : 0;
  return out;
}

double accuracy(const Labels& predicted, const Labels& y) {
  require_same_length(predicted.size(), y.size(), "accuracy");
  if (y.size() == 0) return 0.0;
  return double((predicted.array() == y.array()).count()) / double(y.size());
}

std::optional<double> auroc(const Eigen::VectorXd& scores, const Labels& y) {
  require_same_length(scores.size(), y.size(), "auroc");
  const Eigen::Index n = scores.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });

  // Average ranks (1-based) over tie blocks; sum the ranks of the positives.
  double positive_rank_sum = 0.0;
  long positives = 0;
  for (Eigen::Index start = 0; start < n;) {
    Eigen::Index end = start;
    while (end + 1 < n && scores[order[end + 1]] == scores[order[start]]) ++end;
    const double avg_rank = 0.5 * double(start + end) + 1.0;
    for (Eigen::Index t = start; t <= end; ++t) {
      if (y[order[t]] == 1) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    start = end + 1;
  }
  const long negatives = static_cast<long>(n) - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double u = positive_rank_sum - 0.5 * double(positives) * double(positives + 1);
  return u / (double(positives) * double(negatives));
}

FairnessReport evaluate_fairness(const Eigen::VectorXd& probabilities, const Eigen::MatrixXi& sensitive,
                                 const Labels& y, double cutoff) {
  require_same_length(probabilities.size(), y.size(), "evaluate_fairness");
  require_same_length(sensitive.rows(), y.size(), "evaluate_fairness");
  FairnessReport report;
  const Labels predicted = threshold(probabilities, cutoff);
  for (Eigen::Index j = 0; j < sensitive.cols(); ++j) {
    const Labels z = sensitive.col(j);
    AttributeFairness a;
    a.rates = group_rates(predicted, z);
    a.dp_gap = dp_gap(predicted, z);
    a.p_rule = p_percent_rule(predicted, z);
    report.attributes.push_back(a);
  }
  report.accuracy = accuracy(predicted, y);
  report.auroc = auroc(probabilities, y);
  return report;
}

nlohmann::ordered_json to_json(const FairnessReport& report) {
  nlohmann::ordered_json dp = nlohmann::ordered_json::array();
  nlohmann::ordered_json pr = nlohmann::ordered_json::array();
  nlohmann::ordered_json r0 = nlohmann::ordered_json::array();
  nlohmann::ordered_json r1 = nlohmann::ordered_json::array();
  nlohmann::ordered_json sizes = nlohmann::ordered_json::array();
  for (const auto& a : report.attributes) {
    dp.push_back(optional_json(a.dp_gap));
    pr.push_back(optional_json(a.p_rule));
    r0.push_back(optional_json(a.rates.r0));
    r1.push_back(optional_json(a.rates.r1));
    sizes.push_back({a.rates.n0, a.rates.n1});
  }
  nlohmann::ordered_json j;
  j["dp_gap"] = dp;
  j["p_rule"] = pr;
  j["accuracy"] = report.accuracy;
  j["auroc"] = optional_json(report.auroc);
  j["rate_group0"] = r0;
  j["rate_group1"] = r1;
  j["group_sizes"] = sizes;
  return j;
}

LambdaController::LambdaController(std::size_t attributes, double initial, double eta_, double tau_)
    : lambdas(attributes, initial), eta(eta_), tau(tau_) {
  if (!(eta > 0.0)) throw ConfigError("fairness learning rate eta must be positive");
  if (!(tau > 0.0 && tau <= 100.0)) throw ConfigError("p%-rule target tau must lie in (0, 100]");
  if (initial < lo || initial > hi) throw ConfigError("initial lambda must lie in [0.1, 1.0]");
}

void update_lambda(LambdaController& controller, const std::vector<std::optional<double>>& p_rules) {
  if (p_rules.size() != controller.lambdas.size()) {
    throw ShapeError("update_lambda: " + std::to_string(p_rules.size()) + " p-rules for " +
                     std::to_string(controller.lambdas.size()) + " lambdas");
  }
  if (!(controller.tau > 0.0)) throw ConfigError("p%-rule target tau must be positive");
  for (std::size_t j = 0; j < p_rules.size(); ++j) {
    if (!p_rules[j]) {
      std::cerr << "warning: p%-rule undefined for attribute " << j << " (empty group); lambda unchanged\n";
      continue;
    }
    const double delta = (controller.tau - *p_rules[j]) / controller.tau;
    controller.lambdas[j] = std::clamp(controller.lambdas[j] + controller.eta * delta, controller.lo, controller.hi);
  }
}

}  // namespace fairkan
