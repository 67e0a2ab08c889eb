#include "doctest.h"

#include <random>
#include <set>

#include "fairkan/errors.hpp"
#include "fairkan/trainer.hpp"
#include "oracles.hpp"

using namespace fairkan;

namespace {

Dataset scaled_synthetic(int rows, std::uint64_t seed, int features = 4) {
  SyntheticSpec s;
  s.rows = rows;
  s.features = features;
  s.seed = seed;
  const auto d = generate_synthetic(s);
  return apply_scaler(fit_scaler(d), d);
}

TrainConfig small_config(int features = 4) {
  TrainConfig c;
  c.classifier_widths = {features, 4, 1};
  c.adversary_widths = {1, 4, 2};
  c.grid_schedule = {3, 5};
  c.epochs = 2;
  c.pretrain_classifier_epochs = 3;
  c.pretrain_adversary_epochs = 3;
  c.batch_size = 64;
  c.l1 = 0.0;
  c.l2 = 0.01;
  c.seed = 5;
  return c;
}

Dataset separable(int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dataset d;
  d.features.resize(rows, 2);
  d.sensitive.resize(rows, 1);
  d.labels.resize(rows);
  for (int r = 0; r < rows; ++r) {
    d.features(r, 0) = u(rng);
    d.features(r, 1) = u(rng);
    d.labels[r] = d.features(r, 0) + 0.5 * d.features(r, 1) > 0.1;
    d.sensitive(r, 0) = r % 3 == 0;
  }
  return d;
}

double accuracy_of(const KanNetwork<double>& net, const Dataset& d) {
  return accuracy(threshold(classifier_probabilities(net, d.features)), d.labels);
}

}  // namespace

TEST_CASE("bce loss") {
  const auto r = bce_loss(Eigen::VectorXd::Zero(1), Eigen::VectorXi::Ones(1));
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(r.grad[0] == doctest::Approx(-0.5).epsilon(1e-15));

  Eigen::VectorXd s(4);
  s << -800.0, 800.0, 2.0, -0.3;
  Eigen::VectorXi t(4);
  t << 1, 0, 1, 0;
  const auto big = bce_loss(s, t);
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss == doctest::Approx((800.0 + 800.0 + std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-0.3))) / 4));

  for (int i = 2; i < 4; ++i) {
    auto f = [&](double v) {
      Eigen::VectorXd ss = s;
      ss[i] = v;
      return bce_loss(ss, t).loss;
    };
    CHECK(std::abs(oracle::central_diff(f, s[i], 1e-6) - big.grad[i]) < 1e-6);
  }
}

TEST_CASE("config validation") {
  auto bad = [](auto mutate) {
    auto c = small_config();
    mutate(c);
    return c;
  };
  CHECK_NOTHROW(small_config().validate());
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.grid_schedule = {5, 5}; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.grid_schedule = {}; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.epochs = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.classifier_widths = {4, 2}; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.adversary_widths = {2, 2}; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.tau = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.initial_lambda = 2.0; }).validate(), ConfigError);

  const auto d = scaled_synthetic(100, 1, 3);
  CHECK_THROWS_AS(init_state(small_config(4), d), ConfigError);
}

TEST_CASE("zero pretraining epochs leave the state unchanged") {
  const auto d = scaled_synthetic(200, 2);
  const auto cfg = small_config();
  auto st = init_state(cfg, d);
  const auto before = st.classifier.parameters();
  pretrain_classifier(st, cfg, d, 0);
  CHECK(st.classifier.parameters() == before);
  CHECK(st.history.empty());
}

TEST_CASE("zero learning rate keeps parameters and loss") {
  const auto d = scaled_synthetic(200, 3);
  auto cfg = small_config();
  cfg.classifier_optimizer.learning_rate = 0.0;
  auto st = init_state(cfg, d);
  const auto before = st.classifier.parameters();
  pretrain_classifier(st, cfg, d, 3);
  CHECK(st.classifier.parameters() == before);
  REQUIRE(st.history.size() == 3);
  CHECK(st.history[0].loss_y == st.history[2].loss_y);
}

TEST_CASE("pretraining learns separable data") {
  const auto d = separable(600, 4);
  TrainConfig cfg = small_config(2);
  cfg.adversary_widths = {1, 4, 1};
  cfg.l2 = 0.0;
  auto st = init_state(cfg, d);
  pretrain_classifier(st, cfg, d, 50);
  CHECK(accuracy_of(st.classifier, d) > 0.95);
}

TEST_CASE("adversary pretraining") {
  SUBCASE("frozen classifier") {
    const auto d = scaled_synthetic(300, 5);
    const auto cfg = small_config();
    auto st = init_state(cfg, d);
    pretrain_classifier(st, cfg, d, 2);
    const auto before = st.classifier.parameters();
    pretrain_adversary(st, cfg, d, 3);
    CHECK(st.classifier.parameters() == before);
  }
  SUBCASE("constant classifier carries no signal") {
    const auto d = scaled_synthetic(1000, 6);
    const auto cfg = small_config();
    auto st = init_state(cfg, d);
    st.classifier.set_parameters(Eigen::VectorXd::Zero(st.classifier.parameter_count()));
    pretrain_adversary(st, cfg, d, 10);
    const auto ev = evaluate(st, d);
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXi zj = d.sensitive.col(j);
      const double prior = zj.cast<double>().mean();
      const Eigen::VectorXd p = (1.0 + (-ev.adversary_scores.col(j).array()).exp()).inverse();
      CHECK(std::abs(*auroc(ev.adversary_scores.col(j), zj) - 0.5) <= 0.05);
      CHECK(accuracy(threshold(p), zj) == doctest::Approx(std::max(prior, 1.0 - prior)).epsilon(0.02));
    }
  }
  SUBCASE("a classifier that leaks z") {
    Dataset d = separable(500, 7);
    d.features.col(0) = d.sensitive.col(0).cast<double>().array() * 2.0 - 1.0;
    TrainConfig cfg = small_config(2);
    cfg.adversary_widths = {1, 4, 1};
    auto st = init_state(cfg, d);
    // classifier score = 6 * x0 through a linear spline on the first edge
    auto p = st.classifier.parameters();
    p.setZero();
    st.classifier.set_parameters(p);
    auto& L0 = st.classifier.mutable_layer(0);
    L0.base_weight(0, 0) = 1.0;
    auto& L1 = st.classifier.mutable_layer(1);
    L1.base_weight(0, 0) = 6.0 / silu(1.0);
    pretrain_adversary(st, cfg, d, 20);
    const auto ev = evaluate(st, d);
    CHECK(*auroc(ev.adversary_scores.col(0), d.sensitive.col(0)) > 0.99);
  }
}

TEST_CASE("composite gradient matches finite differences") {
  const auto d = scaled_synthetic(40, 8, 3);
  auto cfg = small_config(3);
  cfg.classifier_widths = {3, 4, 2, 1};
  auto st = init_state(cfg, d);
  pretrain_classifier(st, cfg, d, 2);
  pretrain_adversary(st, cfg, d, 2);
  st.lambda.lambdas = {0.7, 0.4};

  const Eigen::MatrixXd X = d.features.topRows(16);
  const Eigen::VectorXi y = d.labels.head(16);
  const Eigen::MatrixXi Z = d.sensitive.topRows(16);
  const auto base = composite_classifier_loss(st, cfg, X, y, Z);
  const Eigen::VectorXd p0 = st.classifier.parameters();

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<Eigen::Index> pick(0, p0.size() - 1);
  double worst = 0.0;
  for (int probe = 0; probe < 40; ++probe) {
    const auto i = pick(rng);
    Eigen::VectorXd p = p0;
    p[i] += 1e-4;
    st.classifier.set_parameters(p);
    const double up = composite_classifier_loss(st, cfg, X, y, Z).total;
    p[i] = p0[i] - 1e-4;
    st.classifier.set_parameters(p);
    const double down = composite_classifier_loss(st, cfg, X, y, Z).total;
    st.classifier.set_parameters(p0);
    const double fd = (up - down) / 2e-4;
    worst = std::max(worst, std::abs(fd - base.grad[i]) / std::max({std::abs(fd), std::abs(base.grad[i]), 1e-8}));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("a silent adversary reduces the composite loss to plain classification") {
  const auto d = scaled_synthetic(64, 10);
  const auto cfg = small_config();
  auto st = init_state(cfg, d);
  st.adversary.set_parameters(Eigen::VectorXd::Zero(st.adversary.parameter_count()));
  const auto comp = composite_classifier_loss(st, cfg, d.features, d.labels, d.sensitive);

  const auto fr = forward(st.classifier, d.features);
  const auto bce = bce_loss(fr.outputs.col(0), d.labels);
  auto grads = backward(st.classifier, fr.cache, Eigen::MatrixXd(bce.grad));
  const auto reg = regularization(st.classifier, cfg.l1, cfg.l2);
  const Eigen::VectorXd expected = grads.flatten() + reg.grads.flatten();
  CHECK((comp.grad - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(comp.loss_y == doctest::Approx(bce.loss));
}

TEST_CASE("debias epoch") {
  const auto d = scaled_synthetic(300, 11);
  const auto cfg = small_config();
  auto st = init_state(cfg, d);
  pretrain_classifier(st, cfg, d, 2);
  pretrain_adversary(st, cfg, d, 2);

  SUBCASE("deterministic") {
    auto a = st, b = st;
    debias_epoch(a, cfg, d, 1);
    debias_epoch(b, cfg, d, 1);
    CHECK(a.classifier.parameters() == b.classifier.parameters());
    CHECK(a.lambda.lambdas == b.lambda.lambdas);
  }
  SUBCASE("frozen adversary unless alternating") {
    auto a = st;
    const auto adv = a.adversary.parameters();
    const auto clf = a.classifier.parameters();
    debias_epoch(a, cfg, d, 1);
    CHECK(a.adversary.parameters() == adv);
    CHECK(a.classifier.parameters() != clf);

    auto alt_cfg = cfg;
    alt_cfg.alternating = true;
    auto b = st;
    debias_epoch(b, alt_cfg, d, 1);
    CHECK(b.adversary.parameters() != adv);
  }
  SUBCASE("lambda follows the epoch p-rule") {
    auto a = st;
    const auto before = a.lambda.lambdas;
    debias_epoch(a, cfg, d, 1);
    const auto& rec = a.history.back();
    CHECK(rec.phase == "debias");
    for (std::size_t j = 0; j < before.size(); ++j) {
      const double p = *rec.report.attributes[j].p_rule;
      const double delta = (cfg.tau - p) / cfg.tau;
      CHECK(a.lambda.lambdas[j] == std::clamp(before[j] + cfg.eta * delta, 0.1, 1.0));
    }
  }
}

TEST_CASE("grid refinement keeps outputs within the reported residual") {
  const auto d = scaled_synthetic(300, 12);
  const auto cfg = small_config();
  auto st = init_state(cfg, d);
  pretrain_classifier(st, cfg, d, 3);
  const auto before = predict(st.classifier, d.features);
  advance_grid_level(st, cfg, 1);
  CHECK(st.grid_level == 1);
  CHECK(st.classifier.layer(0).grid.intervals() == 5);
  CHECK(st.adversary.layer(0).grid.intervals() == 5);
  REQUIRE(st.refinement_residuals.size() == 1);
  CHECK((predict(st.classifier, d.features) - before).cwiseAbs().maxCoeff() <= st.refinement_residuals[0]);
  CHECK(st.classifier_opt.step == 0);
}

TEST_CASE("schedule accounting") {
  const auto d = scaled_synthetic(200, 13);
  auto cfg = small_config();
  cfg.grid_schedule = {5};
  cfg.epochs = 1;
  std::vector<std::string> lines;
  const auto st = train(cfg, d, [&](const EpochRecord& r) { lines.push_back(to_json(r).dump()); });
  std::set<std::pair<std::string, int>> phases;
  int debias = 0;
  for (const auto& r : st.history) {
    phases.insert({r.phase, r.grid_level});
    debias += r.phase == "debias";
  }
  CHECK(phases.count({"pretrain_adversary", 0}) == 1);
  CHECK(phases.size() == 3);
  CHECK(debias == 1);
  CHECK(lines.size() == st.history.size());
  CHECK(st.pretrained_classifier.has_value());
}

TEST_CASE("full runs are reproducible and lambda stays in range") {
  const auto d = scaled_synthetic(300, 14);
  const auto cfg = small_config();
  std::string a, b;
  const auto st = train(cfg, d, [&](const EpochRecord& r) { a += to_json(r).dump() + "\n"; });
  train(cfg, d, [&](const EpochRecord& r) { b += to_json(r).dump() + "\n"; });
  CHECK(a == b);
  for (const auto& r : st.history) {
    for (double l : r.lambdas) {
      CHECK(l >= 0.1);
      CHECK(l <= 1.0);
    }
  }
  int levels = 0;
  for (const auto& r : st.history) levels = std::max(levels, r.grid_level + 1);
  CHECK(levels == 2);
  CHECK(!st.loss_trace.empty());
}

TEST_CASE("metrics record keys") {
  const auto d = scaled_synthetic(100, 15);
  auto cfg = small_config();
  auto st = init_state(cfg, d);
  pretrain_classifier(st, cfg, d, 1);
  const auto j = to_json(st.history.back());
  for (const char* key : {"phase", "grid_level", "epoch", "loss_y", "loss_z", "lambda", "dp_gap", "p_rule", "accuracy",
                          "auroc"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["lambda"].size() == 2);
}

TEST_CASE("divergence aborts with the epoch") {
  const auto d = scaled_synthetic(200, 16);
  auto cfg = small_config();
  cfg.classifier_optimizer.learning_rate = 1e9;
  auto st = init_state(cfg, d);
  try {
    pretrain_classifier(st, cfg, d, 5);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(e.epoch() >= 1);
  }
}
