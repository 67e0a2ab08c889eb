#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "fairkan/cli.hpp"
#include "fairkan/errors.hpp"
#include "fairkan/model_io.hpp"
#include "oracles.hpp"

using namespace fairkan;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Small, fast run settings.
const std::vector<std::string> kQuick{"--synthetic.rows=400",
                                      "--synthetic.features=4",
                                      "--train.classifier_widths=4,4,1",
                                      "--train.grid_schedule=3,5",
                                      "--train.epochs=2",
                                      "--train.pretrain_classifier_epochs=3",
                                      "--train.pretrain_adversary_epochs=3",
                                      "--diagnostics.lipschitz_pairs=200",
                                      "--diagnostics.smoothness_lines=100",
                                      "--diagnostics.directions=10"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail = kQuick) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("key-value parsing") {
  const auto kv = parse_key_values("# comment\ntrain.epochs = 12\n\n  run.seed=3  # trailing\n");
  CHECK(kv.at("train.epochs") == "12");
  CHECK(kv.at("run.seed") == "3");
  CHECK_THROWS_AS(parse_key_values("train.epochs 12\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values(" = 2\n"), ConfigError);
  try {
    parse_key_values("a = 1\nbroken\n");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("applying config values") {
  RunConfig c = apply_key_values(RunConfig{}, {{"train.epochs", "4"},
                                               {"optim.classifier", "adopt"},
                                               {"optim.adopt_clip", "true"},
                                               {"train.grid_schedule", "4, 8,16"},
                                               {"fairness.tau", "80"}});
  CHECK(c.train.epochs == 4);
  CHECK(c.train.classifier_optimizer.kind == OptimizerKind::ADOPT);
  CHECK(c.train.classifier_optimizer.adopt_clip);
  CHECK(c.train.adversary_optimizer.adopt_clip);
  CHECK(c.train.grid_schedule == std::vector<int>{4, 8, 16});
  CHECK(c.train.tau == 80.0);
  CHECK(c.is_set("train.epochs"));
  CHECK(!c.is_set("train.order"));

  CHECK_THROWS_AS(apply_key_values(RunConfig{}, {{"train.nope", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_key_values(RunConfig{}, {{"train.epochs", "many"}}), ConfigError);
  CHECK_THROWS_AS(apply_key_values(RunConfig{}, {{"run.seed", "-1"}}), ConfigError);
  CHECK_THROWS_AS(apply_key_values(RunConfig{}, {{"train.alternating", "maybe"}}), ConfigError);
}

TEST_CASE("dumped config reads back") {
  RunConfig c = apply_key_values(RunConfig{}, {{"train.l1", "0.25"}, {"synthetic.rows", "321"}});
  const auto again = apply_key_values(RunConfig{}, parse_key_values(dump_config(c)));
  CHECK(dump_config(again) == dump_config(c));
  for (const auto& k : config_keys()) CHECK(dump_config(c).find(k + " = ") != std::string::npos);
}

TEST_CASE("usage errors") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"generate", "--bogus"}).code == kExitUsage);
  CHECK(cli({"generate", "--train.bogus=1"}).code == kExitUsage);
  CHECK(cli({"generate", "--config", "/nonexistent/x.cfg"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"keys"}).out.find("train.epochs") != std::string::npos);
}

TEST_CASE("generate writes data and a manifest that round-trips") {
  const auto dir = oracle::temp_dir("cli_generate");
  const auto r = cli({"generate", "--out", dir.string(), "--seed", "21", "--synthetic.rows=150", "--synthetic.bias=1.5"});
  REQUIRE(r.code == kExitOk);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  const auto spec = synthetic_spec_from_json(manifest["generator"]);
  CHECK(spec.rows == 150);
  CHECK(spec.bias == 1.5);
  CHECK(spec.seed == 21);
  const auto regenerated = generate_synthetic(spec);
  CHECK(slurp(dir / "data.csv") == to_csv(regenerated));

  const auto again = cli({"generate", "--out", dir.string(), "--synthetic.rows=150"});
  CHECK(again.code == kExitUsage);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(cli({"generate", "--out", dir.string(), "--synthetic.rows=150", "--force"}).code == kExitOk);
}

TEST_CASE("train writes its artifacts") {
  const auto dir = oracle::temp_dir("cli_train");
  const auto r = cli(with({"train", "--out", dir.string()}));
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"metrics.jsonl", "model.kan", "pretrained.kan", "adversary.kan", "report.json", "theory.json",
                        "hist_pretrained.csv", "hist_debiased.csv", "loss_trace.csv", "config.txt"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report["train"].contains("pretrained"));
  CHECK(report["test"].contains("debiased"));
  const auto theory = nlohmann::json::parse(slurp(dir / "theory.json"));
  CHECK(theory["debiased"]["lipschitz_within_bound"] == true);

  std::istringstream lines(slurp(dir / "metrics.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("phase"));
    REQUIRE(j.at("lambda").size() == 2);
    for (double l : j.at("lambda")) CHECK((l >= 0.1 && l <= 1.0));
    ++n;
  }
  CHECK(n > 0);
  // no temporary files left behind
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().filename().string().find(".tmp") == std::string::npos);

  CHECK(cli(with({"train", "--out", dir.string()})).code == kExitUsage);
}

TEST_CASE("train twice with one seed gives identical metrics") {
  const auto a = oracle::temp_dir("cli_det_a"), b = oracle::temp_dir("cli_det_b");
  REQUIRE(cli(with({"train", "--out", a.string(), "--seed", "4"})).code == kExitOk);
  REQUIRE(cli(with({"train", "--out", b.string(), "--seed", "4"})).code == kExitOk);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "model.kan") == slurp(b / "model.kan"));
}

TEST_CASE("csv input with a missing label column is a schema error") {
  const auto dir = oracle::temp_dir("cli_schema");
  REQUIRE(cli({"generate", "--out", dir.string(), "--synthetic.rows=100", "--synthetic.features=3"}).code == kExitOk);
  std::ofstream(dir / "run.cfg") << "data.source = csv\n"
                                    "data.csv = " << (dir / "data.csv").string() << "\n"
                                    "data.features = x0,x1,x2\n"
                                    "data.sensitive = z0,z1\n"
                                    "data.label = outcome\n";
  const auto r = cli({"train", "--config", (dir / "run.cfg").string(), "--out", (dir / "run").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("schema") != std::string::npos);
  CHECK(!fs::exists(dir / "run" / "model.kan"));
}

TEST_CASE("evaluate") {
  const auto dir = oracle::temp_dir("cli_evaluate");
  REQUIRE(cli(with({"train", "--out", (dir / "run").string()})).code == kExitOk);
  const auto r = cli(with({"evaluate", "--model", (dir / "run" / "model.kan").string(), "--out", (dir / "ev").string()}));
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(slurp(dir / "ev" / "evaluation.json"));
  CHECK(j.contains("train"));
  CHECK(j.contains("test"));
  CHECK(j["train"]["rows"] != j["test"]["rows"]);
  CHECK(fs::exists(dir / "ev" / "hist_eval_train.csv"));
  CHECK(fs::exists(dir / "ev" / "hist_eval_test.csv"));

  CHECK(cli({"evaluate", "--model", (dir / "missing.kan").string(), "--out", (dir / "x").string()}).code == kExitUsage);
  CHECK(cli({"evaluate", "--out", (dir / "x").string()}).code == kExitUsage);

  const auto one = cli(with({"evaluate", "--model", (dir / "run" / "model.kan").string(), "--out",
                             (dir / "ev_test").string(), "--eval.split=test"}));
  REQUIRE(one.code == kExitOk);
  const auto k = nlohmann::json::parse(slurp(dir / "ev_test" / "evaluation.json"));
  CHECK(!k.contains("train"));
}

TEST_CASE("diagnose") {
  const auto dir = oracle::temp_dir("cli_diagnose");
  REQUIRE(cli(with({"train", "--out", (dir / "run").string()})).code == kExitOk);
  const auto r = cli(with({"diagnose", "--model", (dir / "run" / "model.kan").string(), "--out", (dir / "dg").string()}));
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(slurp(dir / "dg" / "theory.json"));
  CHECK(j["grad_check_max_relative_error"].get<double>() < 1e-3);
  CHECK(j["lipschitz_within_bound"] == true);
}

TEST_CASE("ablate") {
  const auto dir = oracle::temp_dir("cli_ablate");
  const auto r = cli(with({"ablate", "--out", dir.string(), "--ablate.orders=3", "--ablate.optimizers=adam"}));
  REQUIRE(r.code == kExitOk);
  std::istringstream summary(slurp(dir / "ablation_summary.csv"));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(summary, line)) rows.push_back(line);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].rfind("3,adam,ok,", 0) == 0);
  CHECK(fs::exists(dir / "k3_adam" / "metrics.jsonl"));
  CHECK(fs::exists(dir / "k3_adam" / "loss_trace.csv"));
}

TEST_CASE("divergence exits with code 3") {
  const auto dir = oracle::temp_dir("cli_diverge");
  const auto r = cli(with({"train", "--out", dir.string(), "--optim.classifier_lr=1e9"}));
  CHECK(r.code == kExitDivergence);
  CHECK(fs::exists(dir / "metrics.jsonl"));
  CHECK(!fs::exists(dir / "model.kan"));
}

TEST_CASE("a diverged ablation cell keeps the summary rectangular") {
  const auto dir = oracle::temp_dir("cli_ablate_diverge");
  const auto r = cli(with({"ablate", "--out", dir.string(), "--ablate.orders=3", "--ablate.optimizers=adam,oadam",
                           "--optim.classifier_lr=1e9"}));
  CHECK(r.code == kExitDivergence);
  std::istringstream summary(slurp(dir / "ablation_summary.csv"));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(summary, line)) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  const auto commas = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  for (const auto& row : rows) CHECK(commas(row) == commas(rows[0]));
  CHECK(rows[1].find(",diverged,") != std::string::npos);
  CHECK(rows[2].find(",diverged,") != std::string::npos);
}
