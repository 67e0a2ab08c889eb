#pragma once

#include <Eigen/Dense>

#include <string>

namespace fairkan {

enum class OptimizerKind { Adam, OAdam, ADOPT };

std::string to_string(OptimizerKind kind);
/// Accepts "adam", "oadam", "adopt" (case-insensitive).
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  /// Adam and OAdam.
  double beta2 = 0.999;
  double adopt_beta2 = 0.9999;
  double epsilon = 1e-8;
  /// ADOPT only: clip the normalized gradient to +-step^(1/4).
  bool adopt_clip = false;
};

/// Moments and step counter for one parameter set.
struct OptimizerState {
  OptimizerConfig config;
  long step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  /// OAdam: the previous normalized step m_hat / (sqrt(v_hat) + eps).
  Eigen::VectorXd previous_update;

  OptimizerState() = default;
  OptimizerState(const OptimizerConfig& cfg, Eigen::Index parameter_count);
};

/// Adam:  theta -= lr * m_hat / (sqrt(v_hat) + eps)
/// OAdam: theta -= 2 lr * m_hat_t / (sqrt(v_hat_t) + eps) - lr * m_hat_{t-1} / (sqrt(v_hat_{t-1}) + eps)
/// ADOPT: the first call only sets v = g^2; afterwards
///        m = b1 m + (1 - b1) g / max(sqrt(v), eps); theta -= lr m; v = b2 v + (1 - b2) g^2.
void apply_step(OptimizerState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads);

}  // namespace fairkan
