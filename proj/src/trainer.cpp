#include "fairkan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fairkan/errors.hpp"
#include "fairkan/seed.hpp"

namespace fairkan {
namespace {

constexpr double kDivergenceLimit = 1e6;

void check_finite_loss(double loss, const std::string& phase, int epoch) {
  if (!std::isfinite(loss) || std::abs(loss) > kDivergenceLimit) {
    throw NumericError("training diverged in " + phase + " epoch " + std::to_string(epoch) + " (loss " +
                           std::to_string(loss) + ")",
                       epoch);
  }
}

std::vector<std::vector<Eigen::Index>> minibatches(Eigen::Index rows, int batch_size, std::uint64_t seed) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Eigen::Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += std::size_t(batch_size)) {
    const auto end = std::min(order.size(), start + std::size_t(batch_size));
    batches.emplace_back(order.begin() + long(start), order.begin() + long(end));
  }
  return batches;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(Eigen::Index(r)) = m.row(idx[r]);
  return out;
}

Eigen::MatrixXi gather_rows(const Eigen::MatrixXi& m, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXi out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(Eigen::Index(r)) = m.row(idx[r]);
  return out;
}

Eigen::VectorXi gather(const Eigen::VectorXi& v, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXi out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out[Eigen::Index(r)] = v[idx[r]];
  return out;
}

Eigen::VectorXd sigmoid_vec(const Eigen::VectorXd& s) { return s.unaryExpr([](double v) { return sigmoid(v); }); }

/// Sum_j L_Z,j on adversary outputs, with its gradient per output column.
struct AdversaryLoss {
  std::vector<double> per_attribute;
  Eigen::MatrixXd grad;
};

AdversaryLoss adversary_loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXi& sensitive) {
  AdversaryLoss out;
  out.grad.resize(outputs.rows(), outputs.cols());
  for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
    auto b = bce_loss(outputs.col(j), sensitive.col(j));
    out.per_attribute.push_back(b.loss);
    out.grad.col(j) = b.grad;
  }
  return out;
}

bool should_log(const TrainConfig& config, int epoch, int epochs) {
  return epoch == epochs || epoch % config.eval_every == 0;
}

void log_epoch(TrainState& state, const Dataset& data, const std::string& phase, int epoch,
               const MetricsSink& sink) {
  const auto ev = evaluate(state, data);
  EpochRecord rec;
  rec.phase = phase;
  rec.grid_level = state.grid_level;
  rec.epoch = epoch;
  rec.loss_y = ev.loss_y;
  rec.loss_z = ev.loss_z;
  rec.lambdas = state.lambda.lambdas;
  rec.report = ev.report;
  state.history.push_back(rec);
  if (sink) sink(rec);
}

void check_data(const TrainConfig& config, const Dataset& data) {
  if (data.rows() == 0) throw DataError("training data is empty");
  if (data.feature_count() != config.classifier_widths.front()) {
    throw ConfigError("classifier input width " + std::to_string(config.classifier_widths.front()) +
                      " does not match " + std::to_string(data.feature_count()) + " features");
  }
  if (data.attribute_count() != config.adversary_widths.back()) {
    throw ConfigError("adversary output width " + std::to_string(config.adversary_widths.back()) +
                      " does not match " + std::to_string(data.attribute_count()) + " sensitive attributes");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (classifier_widths.size() < 2 || classifier_widths.back() != 1) {
    throw ConfigError("classifier widths need at least two entries and a final width of 1");
  }
  if (adversary_widths.size() < 2 || adversary_widths.front() != 1) {
    throw ConfigError("adversary widths need at least two entries and an input width of 1");
  }
  for (int w : classifier_widths)
    if (w < 1) throw ConfigError("classifier widths must be positive");
  for (int w : adversary_widths)
    if (w < 1) throw ConfigError("adversary widths must be positive");
  if (grid_schedule.empty()) throw ConfigError("grid schedule is empty");
  for (std::size_t i = 0; i < grid_schedule.size(); ++i) {
    if (grid_schedule[i] < 1) throw ConfigError("grid schedule entries must be positive");
    if (i > 0 && grid_schedule[i] <= grid_schedule[i - 1]) {
      throw ConfigError("grid schedule must be strictly increasing");
    }
  }
  if (order < 0 || order > kMaxOrder) throw ConfigError("spline order out of range");
  if (epochs < 1) throw ConfigError("debias epochs T must be at least 1");
  if (pretrain_classifier_epochs < 0 || pretrain_adversary_epochs < 0) {
    throw ConfigError("pretraining epochs must be non-negative");
  }
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (l1 < 0.0 || l2 < 0.0) throw ConfigError("regularization weights must be non-negative");
  if (!(eta > 0.0)) throw ConfigError("fairness learning rate must be positive");
  if (!(tau > 0.0 && tau <= 100.0)) throw ConfigError("tau must lie in (0, 100]");
  if (initial_lambda < 0.1 || initial_lambda > 1.0) throw ConfigError("initial lambda must lie in [0.1, 1.0]");
  if (eval_every < 1) throw ConfigError("evaluation cadence must be positive");
}

BceResult bce_loss(const Eigen::VectorXd& scores, const Eigen::VectorXi& targets) {
  if (scores.size() != targets.size()) throw ShapeError("bce_loss: scores and targets differ in length");
  const auto n = scores.size();
  BceResult out{0.0, Eigen::VectorXd::Zero(n)};
  if (n == 0) return out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = scores[i];
    const double t = targets[i];
    out.loss += std::max(s, 0.0) - s * t + std::log1p(std::exp(-std::abs(s)));
    out.grad[i] = (sigmoid(s) - t) / double(n);
  }
  out.loss /= double(n);
  return out;
}

nlohmann::ordered_json to_json(const EpochRecord& r) {
  const auto fair = to_json(r.report);
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["grid_level"] = r.grid_level;
  j["epoch"] = r.epoch;
  j["loss_y"] = r.loss_y;
  j["loss_z"] = r.loss_z;
  j["lambda"] = r.lambdas;
  j["dp_gap"] = fair["dp_gap"];
  j["p_rule"] = fair["p_rule"];
  j["accuracy"] = fair["accuracy"];
  j["auroc"] = fair["auroc"];
  return j;
}

Eigen::VectorXd classifier_probabilities(const KanNetwork<double>& classifier, const Eigen::MatrixXd& features) {
  return sigmoid_vec(predict(classifier, features).col(0));
}

TrainState init_state(const TrainConfig& config, const Dataset& train) {
  config.validate();
  check_data(config, train);
  const int g0 = config.grid_schedule.front();
  TrainState state;
  InitOptions clf_opts{-1.0, 1.0, config.base_enabled};
  state.classifier =
      init_network<double>(config.classifier_widths, g0, config.order, derive_seed(config.seed, "classifier"), clf_opts);
  fit_grid_domains(state.classifier, train.features);

  InitOptions adv_opts{0.0, 1.0, config.base_enabled};
  state.adversary =
      init_network<double>(config.adversary_widths, g0, config.order, derive_seed(config.seed, "adversary"), adv_opts);
  Eigen::MatrixXd p = classifier_probabilities(state.classifier, train.features);
  fit_grid_domains(state.adversary, p);

  state.classifier_opt = OptimizerState(config.classifier_optimizer, state.classifier.parameter_count());
  state.adversary_opt = OptimizerState(config.adversary_optimizer, state.adversary.parameter_count());
  state.lambda = LambdaController(static_cast<std::size_t>(train.attribute_count()), config.initial_lambda,
                                  config.eta, config.tau);
  return state;
}

Evaluation evaluate(const TrainState& state, const Dataset& data) {
  Evaluation ev;
  ev.scores = predict(state.classifier, data.features).col(0);
  ev.probabilities = sigmoid_vec(ev.scores);
  ev.adversary_scores = predict(state.adversary, Eigen::MatrixXd(ev.probabilities));
  ev.loss_y = bce_loss(ev.scores, data.labels).loss;
  ev.loss_z = adversary_loss(ev.adversary_scores, data.sensitive).per_attribute;
  ev.report = evaluate_fairness(ev.probabilities, data.sensitive, data.labels);
  return ev;
}

CompositeLoss composite_classifier_loss(const TrainState& state, const TrainConfig& config,
                                        const Eigen::MatrixXd& features, const Eigen::VectorXi& labels,
                                        const Eigen::MatrixXi& sensitive) {
  CompositeLoss out;
  auto clf = forward(state.classifier, features);
  const Eigen::VectorXd scores = clf.outputs.col(0);
  const Eigen::VectorXd p = sigmoid_vec(scores);
  out.probabilities = p;
  auto adv = forward(state.adversary, out.probabilities);
  const auto ly = bce_loss(scores, labels);
  const auto lz = adversary_loss(adv.outputs, sensitive);
  const auto reg = regularization(state.classifier, config.l1, config.l2);

  Eigen::MatrixXd adv_grad = lz.grad;
  out.total = ly.loss + reg.loss;
  for (std::size_t j = 0; j < lz.per_attribute.size(); ++j) {
    const double lam = state.lambda.lambdas[j];
    out.total -= lam * lz.per_attribute[j];
    adv_grad.col(Eigen::Index(j)) *= -lam;
  }
  out.loss_y = ly.loss;
  out.loss_z = lz.per_attribute;

  // Through the frozen adversary back to the classifier scores.
  const auto adv_back = backward(state.adversary, adv.cache, adv_grad);
  Eigen::MatrixXd score_grad(scores.size(), 1);
  score_grad.col(0) = ly.grad.array() + adv_back.input_grad.col(0).array() * p.array() * (1.0 - p.array());
  const auto clf_back = backward(state.classifier, clf.cache, score_grad);
  out.grad = clf_back.flatten() + reg.grads.flatten();
  return out;
}

void pretrain_classifier(TrainState& state, const TrainConfig& config, const Dataset& train, int epochs,
                         const MetricsSink& sink) {
  const std::string phase = "pretrain_classifier";
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto batches = minibatches(train.rows(), config.batch_size,
                                     derive_seed(config.seed, phase, std::uint64_t(state.grid_level), std::uint64_t(epoch)));
    for (const auto& idx : batches) {
      const Eigen::MatrixXd x = gather_rows(train.features, idx);
      const Eigen::VectorXi y = gather(train.labels, idx);
      auto fwd = forward(state.classifier, x);
      const auto ly = bce_loss(fwd.outputs.col(0), y);
      const auto reg = regularization(state.classifier, config.l1, config.l2);
      const double total = ly.loss + reg.loss;
      check_finite_loss(total, phase, epoch);
      Eigen::MatrixXd g(ly.grad.size(), 1);
      g.col(0) = ly.grad;
      Eigen::VectorXd grads = backward(state.classifier, fwd.cache, g).flatten() + reg.grads.flatten();
      Eigen::VectorXd params = state.classifier.parameters();
      apply_step(state.classifier_opt, params, grads);
      state.classifier.set_parameters(params);
      state.loss_trace.push_back({phase, state.grid_level, epoch, ++state.iteration, ly.loss, {}, total});
    }
    if (should_log(config, epoch, epochs)) log_epoch(state, train, phase, epoch, sink);
  }
}

void pretrain_adversary(TrainState& state, const TrainConfig& config, const Dataset& train, int epochs,
                        const MetricsSink& sink) {
  const std::string phase = "pretrain_adversary";
  const Eigen::MatrixXd p = classifier_probabilities(state.classifier, train.features);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto batches = minibatches(train.rows(), config.batch_size,
                                     derive_seed(config.seed, phase, std::uint64_t(state.grid_level), std::uint64_t(epoch)));
    for (const auto& idx : batches) {
      const Eigen::MatrixXd pb = gather_rows(p, idx);
      const Eigen::MatrixXi zb = gather_rows(train.sensitive, idx);
      auto fwd = forward(state.adversary, pb);
      const auto lz = adversary_loss(fwd.outputs, zb);
      const auto reg = regularization(state.adversary, config.l1, config.l2);
      const double total = std::accumulate(lz.per_attribute.begin(), lz.per_attribute.end(), 0.0) + reg.loss;
      check_finite_loss(total, phase, epoch);
      Eigen::VectorXd grads = backward(state.adversary, fwd.cache, lz.grad).flatten() + reg.grads.flatten();
      Eigen::VectorXd params = state.adversary.parameters();
      apply_step(state.adversary_opt, params, grads);
      state.adversary.set_parameters(params);
      state.loss_trace.push_back({phase, state.grid_level, epoch, ++state.iteration, 0.0, lz.per_attribute, total});
    }
    if (should_log(config, epoch, epochs)) log_epoch(state, train, phase, epoch, sink);
  }
}

void debias_epoch(TrainState& state, const TrainConfig& config, const Dataset& train, int epoch,
                  const MetricsSink& sink, const Dataset* lambda_data) {
  const std::string phase = "debias";
  const auto batches = minibatches(train.rows(), config.batch_size,
                                   derive_seed(config.seed, phase, std::uint64_t(state.grid_level), std::uint64_t(epoch)));
  for (const auto& idx : batches) {
    const Eigen::MatrixXd x = gather_rows(train.features, idx);
    const Eigen::VectorXi y = gather(train.labels, idx);
    const Eigen::MatrixXi z = gather_rows(train.sensitive, idx);
    const auto loss = composite_classifier_loss(state, config, x, y, z);
    check_finite_loss(loss.total, phase, epoch);
    Eigen::VectorXd params = state.classifier.parameters();
    apply_step(state.classifier_opt, params, loss.grad);
    state.classifier.set_parameters(params);
    state.loss_trace.push_back({phase, state.grid_level, epoch, ++state.iteration, loss.loss_y, loss.loss_z, loss.total});

    if (config.alternating) {
      auto fwd = forward(state.adversary, loss.probabilities);
      const auto lz = adversary_loss(fwd.outputs, z);
      const auto reg = regularization(state.adversary, config.l1, config.l2);
      Eigen::VectorXd grads = backward(state.adversary, fwd.cache, lz.grad).flatten() + reg.grads.flatten();
      Eigen::VectorXd adv_params = state.adversary.parameters();
      apply_step(state.adversary_opt, adv_params, grads);
      state.adversary.set_parameters(adv_params);
    }
  }

  const Dataset& measured = lambda_data ? *lambda_data : train;
  const Eigen::VectorXd p = classifier_probabilities(state.classifier, measured.features);
  const auto report = evaluate_fairness(p, measured.sensitive, measured.labels);
  std::vector<std::optional<double>> p_rules;
  for (const auto& a : report.attributes) p_rules.push_back(a.p_rule);
  if (config.scalar_lambda) {
    double sum = 0.0;
    int defined = 0;
    for (const auto& pr : p_rules) {
      if (pr) {
        sum += *pr;
        ++defined;
      }
    }
    std::optional<double> mean;
    if (defined > 0) mean = sum / defined;
    LambdaController shared = state.lambda;
    shared.lambdas.assign(1, state.lambda.lambdas.front());
    update_lambda(shared, {mean});
    state.lambda.lambdas.assign(state.lambda.lambdas.size(), shared.lambdas.front());
  } else {
    update_lambda(state.lambda, p_rules);
  }
  if (should_log(config, epoch, config.epochs)) log_epoch(state, train, phase, epoch, sink);
}

void advance_grid_level(TrainState& state, const TrainConfig& config, int level) {
  const int intervals = config.grid_schedule.at(static_cast<std::size_t>(level));
  const double r_clf = refine_network(state.classifier, intervals);
  refine_network(state.adversary, intervals);
  state.refinement_residuals.push_back(r_clf);
  state.grid_level = level;
  state.classifier_opt = OptimizerState(config.classifier_optimizer, state.classifier.parameter_count());
  state.adversary_opt = OptimizerState(config.adversary_optimizer, state.adversary.parameter_count());
}

TrainState train(const TrainConfig& config, const Dataset& train_set, const MetricsSink& sink,
                 const Dataset* lambda_data) {
  TrainState state = init_state(config, train_set);
  for (std::size_t level = 0; level < config.grid_schedule.size(); ++level) {
    if (level == 0) {
      pretrain_classifier(state, config, train_set, config.pretrain_classifier_epochs, sink);
      state.pretrained_classifier = state.classifier;
    } else {
      advance_grid_level(state, config, static_cast<int>(level));
    }
    pretrain_adversary(state, config, train_set, config.pretrain_adversary_epochs, sink);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
      debias_epoch(state, config, train_set, epoch, sink, lambda_data);
    }
  }
  return state;
}

}  // namespace fairkan
