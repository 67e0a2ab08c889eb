#include "fairkan/optim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "fairkan/errors.hpp"

namespace fairkan {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::OAdam: return "oadam";
    case OptimizerKind::ADOPT: return "adopt";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "adam") return OptimizerKind::Adam;
  if (lower == "oadam") return OptimizerKind::OAdam;
  if (lower == "adopt") return OptimizerKind::ADOPT;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam, oadam or adopt)");
}

OptimizerState::OptimizerState(const OptimizerConfig& cfg, Eigen::Index parameter_count)
    : config(cfg),
      first_moment(Eigen::VectorXd::Zero(parameter_count)),
      second_moment(Eigen::VectorXd::Zero(parameter_count)),
      previous_update(Eigen::VectorXd::Zero(parameter_count)) {
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0 || cfg.adopt_beta2 < 0.0 ||
      cfg.adopt_beta2 >= 1.0) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(cfg.epsilon > 0.0)) throw ConfigError("optimizer epsilon must be positive");
}

void apply_step(OptimizerState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
  const auto n = state.first_moment.size();
  if (params.size() != n || grads.size() != n) {
    throw ShapeError("optimizer tracks " + std::to_string(n) + " parameters, got params " +
                     std::to_string(params.size()) + " and grads " + std::to_string(grads.size()));
  }
  if (!grads.allFinite()) throw NumericError("non-finite gradient passed to optimizer");

  const auto& c = state.config;
  switch (c.kind) {
    case OptimizerKind::Adam:
    case OptimizerKind::OAdam: {
      ++state.step;
      state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
      state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseAbs2();
      const double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
      const double bc2 = 1.0 - std::pow(c.beta2, double(state.step));
      Eigen::VectorXd update =
          (state.first_moment / bc1).array() / ((state.second_moment / bc2).cwiseSqrt().array() + c.epsilon);
      if (c.kind == OptimizerKind::Adam) {
        params -= c.learning_rate * update;
      } else {
        params -= 2.0 * c.learning_rate * update - c.learning_rate * state.previous_update;
        state.previous_update = std::move(update);
      }
      break;
    }
    case OptimizerKind::ADOPT: {
      if (state.step == 0) {
        state.second_moment = grads.cwiseAbs2();
        ++state.step;
        break;
      }
      Eigen::VectorXd normalized = grads.array() / state.second_moment.cwiseSqrt().array().max(c.epsilon);
      if (c.adopt_clip) {
        const double clip = std::pow(double(state.step), 0.25);
        normalized = normalized.cwiseMax(-clip).cwiseMin(clip);
      }
      state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * normalized;
      params -= c.learning_rate * state.first_moment;
      state.second_moment = c.adopt_beta2 * state.second_moment + (1.0 - c.adopt_beta2) * grads.cwiseAbs2();
      ++state.step;
      break;
    }
  }
}

}  // namespace fairkan
