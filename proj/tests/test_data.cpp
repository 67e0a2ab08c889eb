#include "doctest.h"

#include <fstream>
#include <map>
#include <set>

#include "fairkan/data.hpp"
#include "fairkan/errors.hpp"
#include "fairkan/fairness.hpp"
#include "oracles.hpp"

using namespace fairkan;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

const CsvSchema kSchema{{"a", "b"}, {"z"}, "y"};

Dataset small_dataset(int rows, std::uint64_t seed) {
  SyntheticSpec s;
  s.rows = rows;
  s.features = 3;
  s.seed = seed;
  return generate_synthetic(s);
}

}  // namespace

TEST_CASE("csv rows with missing values are dropped") {
  const auto dir = oracle::temp_dir("csv_missing");
  write_text(dir / "d.csv", "a,b,z,y,extra\n1.5,2,0,1,x\n3,,1,0,y\n-1,0.25,1,1,\n");
  const auto r = load_csv(dir / "d.csv", kSchema);
  CHECK(r.dropped_rows == 1);
  REQUIRE(r.dataset.rows() == 2);
  CHECK(r.dataset.features(0, 0) == 1.5);
  CHECK(r.dataset.features(1, 1) == 0.25);
  CHECK(r.dataset.sensitive(1, 0) == 1);
  CHECK(r.dataset.labels[0] == 1);
  CHECK(r.dataset.feature_names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("csv non-binary values cite the row") {
  const auto dir = oracle::temp_dir("csv_nonbinary");
  write_text(dir / "d.csv", "a,b,z,y\n1,2,0,1\n1,2,2,1\n");
  try {
    load_csv(dir / "d.csv", kSchema);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  write_text(dir / "e.csv", "a,b,z,y\n1,2,0,0.5\n");
  CHECK_THROWS_AS(load_csv(dir / "e.csv", kSchema), DataError);
}

TEST_CASE("csv schema errors") {
  const auto dir = oracle::temp_dir("csv_schema");
  write_text(dir / "d.csv", "a,b,z\n1,2,0\n");
  try {
    load_csv(dir / "d.csv", kSchema);
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("'y'") != std::string::npos);
  }
  write_text(dir / "empty.csv", "");
  CHECK_THROWS_AS(load_csv(dir / "empty.csv", kSchema), SchemaError);
  CHECK_THROWS_AS(load_csv(dir / "nope.csv", kSchema), UsageError);
}

TEST_CASE("csv round trip") {
  const auto dir = oracle::temp_dir("csv_roundtrip");
  const auto d = small_dataset(50, 3);
  write_csv(d, dir / "d.csv");
  CsvSchema schema{d.feature_names, d.sensitive_names, d.label_name};
  const auto back = load_csv(dir / "d.csv", schema);
  CHECK(back.dropped_rows == 0);
  CHECK(back.dataset.features == d.features);
  CHECK(back.dataset.sensitive == d.sensitive);
  CHECK(back.dataset.labels == d.labels);
}

TEST_CASE("split sizes and determinism") {
  const auto d = small_dataset(100, 4);
  const auto a = split(d, 0.2, 11);
  const auto b = split(d, 0.2, 11);
  const auto c = split(d, 0.2, 12);
  CHECK(a.train.rows() + a.test.rows() == 100);
  CHECK(std::abs(a.test.rows() - 20) <= 2);
  CHECK(a.train_indices == b.train_indices);
  CHECK(a.test_indices == b.test_indices);
  CHECK(a.test_indices != c.test_indices);

  std::set<Eigen::Index> all(a.train_indices.begin(), a.train_indices.end());
  all.insert(a.test_indices.begin(), a.test_indices.end());
  CHECK(all.size() == 100);

  CHECK_THROWS_AS(split(d, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(d, 1.0, 1), ConfigError);
}

TEST_CASE("split preserves strata") {
  const auto d = small_dataset(4000, 5);
  const auto s = split(d, 0.25, 13);
  auto counts = [](const Dataset& x) {
    std::map<std::vector<int>, long> m;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      std::vector<int> key{x.labels[r]};
      for (Eigen::Index j = 0; j < x.attribute_count(); ++j) key.push_back(x.sensitive(r, j));
      ++m[key];
    }
    return m;
  };
  const auto whole = counts(d), test = counts(s.test);
  for (const auto& [key, n] : whole) {
    const double expected = 0.25 * n;
    CHECK(std::abs(double(test.count(key) ? test.at(key) : 0) - expected) <= 1.0 + 1e-9);
  }
  // per-group base rates within 2 points
  for (Eigen::Index j = 0; j < d.attribute_count(); ++j) {
    for (int g = 0; g < 2; ++g) {
      auto rate = [&](const Dataset& x) {
        long n = 0, pos = 0;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          if (x.sensitive(r, j) != g) continue;
          ++n;
          pos += x.labels[r];
        }
        return double(pos) / n;
      };
      CHECK(std::abs(rate(s.train) - rate(s.test)) < 0.02);
    }
  }
}

TEST_CASE("single-stratum data falls back to a plain shuffle") {
  Dataset d;
  d.features = Eigen::MatrixXd::Random(30, 2);
  d.sensitive = Eigen::MatrixXi::Zero(30, 1);
  d.labels = Eigen::VectorXi::Zero(30);
  d.labels[0] = 1;  // a stratum of one row
  const auto s = split(d, 0.3, 3);
  CHECK(s.fallback_strata == 1);
  CHECK(s.train.rows() + s.test.rows() == 30);
}

TEST_CASE("scaler") {
  Dataset train;
  train.features.resize(3, 2);
  train.features << 0.0, 4.0, 10.0, 4.0, 5.0, 4.0;
  train.sensitive = Eigen::MatrixXi::Zero(3, 1);
  train.labels = Eigen::VectorXi::Zero(3);
  const auto sc = fit_scaler(train);
  const auto t = apply_scaler(sc, train);
  CHECK(t.features(0, 0) == -1.0);
  CHECK(t.features(1, 0) == 1.0);
  CHECK(t.features(2, 0) == 0.0);
  CHECK(t.features.col(1).cwiseAbs().maxCoeff() == 0.0);

  Dataset test = train;
  test.features(0, 0) = 12.0;
  test.features(1, 0) = -3.0;
  const auto u = apply_scaler(sc, test);
  CHECK(u.features(0, 0) == 1.0);
  CHECK(u.features(1, 0) == -1.0);
}

TEST_CASE("scaled synthetic features stay in [-1, 1]") {
  const auto d = small_dataset(500, 6);
  const auto s = split(d, 0.2, 1);
  const auto sc = fit_scaler(s.train);
  CHECK(apply_scaler(sc, s.train).features.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(apply_scaler(sc, s.test).features.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("synthetic generator is deterministic") {
  const auto a = small_dataset(300, 9), b = small_dataset(300, 9), c = small_dataset(300, 10);
  CHECK(a.features == b.features);
  CHECK(a.sensitive == b.sensitive);
  CHECK(a.labels == b.labels);
  CHECK(a.features != c.features);
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("planted bias shows in label rates") {
  SyntheticSpec s;
  s.rows = 10000;
  s.bias = 2.0;
  const auto d = generate_synthetic(s);
  bool e0, e1;
  std::vector<int> y(d.labels.data(), d.labels.data() + d.rows());
  std::vector<int> z(d.rows());
  for (Eigen::Index r = 0; r < d.rows(); ++r) z[r] = d.sensitive(r, 0);
  const double gap = oracle::rate(y, z, 0, e0) - oracle::rate(y, z, 1, e1);
  CHECK(gap > 0.15);
}

TEST_CASE("no bias and no mixing gives a fair fitted classifier") {
  SyntheticSpec s;
  s.rows = 10000;
  s.bias = 0.0;
  s.mixing = 0.0;
  const auto d = generate_synthetic(s);
  // plain logistic regression by full-batch gradient descent
  const Eigen::Index n = d.feature_count();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  double b = 0.0;
  for (int it = 0; it < 300; ++it) {
    const Eigen::VectorXd p = 1.0 / (1.0 + (-((d.features * w).array() + b)).exp());
    const Eigen::VectorXd r = p - d.labels.cast<double>();
    w -= 0.5 * d.features.transpose() * r / double(d.rows());
    b -= 0.5 * r.mean();
  }
  const Eigen::VectorXd p = 1.0 / (1.0 + (-((d.features * w).array() + b)).exp());
  const auto pred = threshold(p);
  CHECK(accuracy(pred, d.labels) > 0.7);
  for (Eigen::Index j = 0; j < d.attribute_count(); ++j) {
    CHECK(*dp_gap(pred, d.sensitive.col(j)) < 0.05);
  }
}

TEST_CASE("synthetic spec validation and manifest round trip") {
  SyntheticSpec s;
  s.rows = 5;
  CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
  s.rows = 100;
  s.features = 1;
  CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
  s.features = 4;
  s.group_balance = 1.0;
  CHECK_THROWS_AS(generate_synthetic(s), ConfigError);

  SyntheticSpec t;
  t.rows = 1234;
  t.bias = 0.75;
  t.seed = 99;
  const auto back = synthetic_spec_from_json(nlohmann::json::parse(to_json(t).dump()));
  CHECK(to_json(back) == to_json(t));
  CHECK_THROWS_AS(synthetic_spec_from_json(nlohmann::json::parse(R"({"rows": "many"})")), FormatError);
}

TEST_CASE("validate rejects bad datasets") {
  auto d = small_dataset(20, 1);
  d.labels[3] = 2;
  CHECK_THROWS_AS(d.validate(), DataError);
  d = small_dataset(20, 1);
  d.features(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(d.validate(), DataError);
}
