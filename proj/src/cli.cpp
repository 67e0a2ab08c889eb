#include "fairkan/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fairkan/diagnostics.hpp"
#include "fairkan/errors.hpp"
#include "fairkan/model_io.hpp"
#include "fairkan/seed.hpp"
#include "fairkan/trainer.hpp"

namespace fs = std::filesystem;

namespace fairkan {
namespace {

using ojson = nlohmann::ordered_json;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "Config file (section.key = value lines)");
  cmd->add_option("--seed", opts.seed, "Root seed");
  cmd->add_option("--out", opts.out, "Output directory");
  cmd->add_flag("--force", opts.force, "Overwrite existing outputs");
}

/// Pulls `--section.key=value` / `--section.key value` pairs out of `args`.
KeyValues extract_overrides(std::vector<std::string>& args) {
  KeyValues overrides;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a.rfind("--", 0) != 0) {
      rest.push_back(a);
      continue;
    }
    const auto eq = a.find('=');
    const std::string name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    if (name.find('.') == std::string::npos) {
      rest.push_back(a);
      continue;
    }
    if (eq != std::string::npos) {
      overrides[name] = a.substr(eq + 1);
    } else if (i + 1 < args.size()) {
      overrides[name] = args[++i];
    } else {
      throw UsageError("option --" + name + " needs a value");
    }
  }
  args = std::move(rest);
  return overrides;
}

RunConfig build_config(const CommonOptions& opts, const KeyValues& overrides) {
  RunConfig cfg;
  if (!opts.config.empty()) cfg = apply_key_values(cfg, load_key_values(opts.config));
  cfg = apply_key_values(cfg, overrides);
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.explicit_keys.push_back("run.seed");
  }
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (!cfg.is_set("synthetic.seed")) cfg.synthetic.seed = cfg.seed;
  return cfg;
}

void guard_outputs(const fs::path& dir, const std::vector<std::string>& names, bool force) {
  if (force) return;
  for (const auto& n : names) {
    if (fs::exists(dir / n)) {
      throw UsageError((dir / n).string() + " already exists; pass --force to overwrite");
    }
  }
}

void write_json(const fs::path& path, const ojson& j) { write_file_atomic(path, j.dump(2) + "\n"); }

std::string loss_trace_csv(const std::vector<BatchLoss>& trace, Eigen::Index attributes) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,phase,grid_level,epoch,loss_y";
  for (Eigen::Index j = 0; j < attributes; ++j) out << ",loss_z_" << j;
  out << ",total\n";
  for (const auto& b : trace) {
    out << b.iteration << ',' << b.phase << ',' << b.grid_level << ',' << b.epoch << ',';
    if (b.phase != "pretrain_adversary") out << b.loss_y;
    for (Eigen::Index j = 0; j < attributes; ++j) {
      out << ',';
      if (std::size_t(j) < b.loss_z.size()) out << b.loss_z[std::size_t(j)];
    }
    out << ',' << b.total << '\n';
  }
  return out.str();
}

ojson report_for(const KanNetwork<double>& net, const Dataset& data) {
  return to_json(evaluate_fairness(classifier_probabilities(net, data.features), data.sensitive, data.labels));
}

struct TrainRun {
  TrainState state;
};

/// Runs the full schedule, streaming metrics to `dir/metrics.jsonl`, then
/// writes the models, loss trace and report.
TrainRun train_into(const RunConfig& cfg, const PreparedData& data, const TrainConfig& tc, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw UsageError("cannot write " + (dir / "metrics.jsonl").string());
  MetricsSink sink = [&metrics](const EpochRecord& r) { metrics << to_json(r).dump() << '\n' << std::flush; };
  const Dataset* lambda_data = cfg.lambda_split == "test" ? &data.test : nullptr;

  TrainRun run{train(tc, data.train, sink, lambda_data)};
  const auto& st = run.state;
  save_model(st.classifier, dir / "model.kan");
  save_model(*st.pretrained_classifier, dir / "pretrained.kan");
  save_model(st.adversary, dir / "adversary.kan");
  write_file_atomic(dir / "loss_trace.csv", loss_trace_csv(st.loss_trace, data.train.attribute_count()));

  ojson report;
  report["lambda"] = st.lambda.lambdas;
  report["refinement_residuals"] = st.refinement_residuals;
  for (const auto& [name, split] : {std::pair<std::string, const Dataset*>{"train", &data.train}, {"test", &data.test}}) {
    report[name]["rows"] = split->rows();
    report[name]["pretrained"] = report_for(*st.pretrained_classifier, *split);
    report[name]["debiased"] = report_for(st.classifier, *split);
  }
  write_json(dir / "report.json", report);
  return run;
}

ojson tv_json(const std::vector<HistogramRow>& hist, Eigen::Index attributes) {
  ojson tv = ojson::array();
  for (Eigen::Index a = 0; a < attributes; ++a) tv.push_back(histogram_tv_distance(hist, int(a)));
  return tv;
}

int cmd_generate(const RunConfig& cfg, bool force, std::ostream& out) {
  guard_outputs(cfg.out_dir, {"data.csv", "manifest.json"}, force);
  fs::create_directories(cfg.out_dir);
  const Dataset data = generate_synthetic(cfg.synthetic);
  write_csv(data, cfg.out_dir / "data.csv");
  ojson manifest;
  manifest["generator"] = to_json(cfg.synthetic);
  manifest["rows"] = data.rows();
  manifest["features"] = data.feature_names;
  manifest["sensitive"] = data.sensitive_names;
  manifest["label"] = data.label_name;
  write_json(cfg.out_dir / "manifest.json", manifest);
  out << "wrote " << (cfg.out_dir / "data.csv").string() << " (" << data.rows() << " rows)\n";
  return kExitOk;
}

const std::vector<std::string> kTrainOutputs{"metrics.jsonl", "model.kan",   "pretrained.kan",       "adversary.kan",
                                             "report.json",   "theory.json", "hist_pretrained.csv",  "hist_debiased.csv",
                                             "loss_trace.csv", "config.txt"};

int cmd_train(const RunConfig& cfg, bool force, std::ostream& out) {
  guard_outputs(cfg.out_dir, kTrainOutputs, force);
  const auto data = prepare_data(cfg);
  const auto tc = resolve_train_config(cfg, data.train);
  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir / "config.txt", dump_config(cfg));

  const auto run = train_into(cfg, data, tc, cfg.out_dir);
  const auto& st = run.state;

  const auto pre_hist = export_score_distributions(*st.pretrained_classifier, data.test, cfg.histogram_bins);
  const auto post_hist = export_score_distributions(st.classifier, data.test, cfg.histogram_bins);
  write_file_atomic(cfg.out_dir / "hist_pretrained.csv", histograms_to_csv(pre_hist));
  write_file_atomic(cfg.out_dir / "hist_debiased.csv", histograms_to_csv(post_hist));

  TheoryOptions topts = cfg.theory;
  topts.seed = derive_seed(cfg.seed, "theory");
  ojson theory;
  theory["split"] = "test";
  theory["pretrained"] = to_json(theory_report(*st.pretrained_classifier, data.test, topts));
  theory["debiased"] = to_json(theory_report(st.classifier, data.test, topts));
  theory["tv_distance"] = {{"pretrained", tv_json(pre_hist, data.test.attribute_count())},
                           {"debiased", tv_json(post_hist, data.test.attribute_count())}};
  write_json(cfg.out_dir / "theory.json", theory);

  const auto post = evaluate_fairness(classifier_probabilities(st.classifier, data.test.features), data.test.sensitive,
                                      data.test.labels);
  out << "trained; test " << to_json(post).dump() << "\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& model_path, bool force, std::ostream& out) {
  std::vector<std::string> splits;
  if (cfg.eval_split == "both") {
    splits = {"train", "test"};
  } else {
    splits = {cfg.eval_split};
  }
  std::vector<std::string> outputs{"evaluation.json"};
  for (const auto& s : splits) outputs.push_back("hist_eval_" + s + ".csv");
  guard_outputs(cfg.out_dir, outputs, force);

  const auto net = load_model(model_path);
  const auto data = prepare_data(cfg);
  if (net.in_dim() != data.train.feature_count()) {
    throw ShapeError("model expects " + std::to_string(net.in_dim()) + " features, data has " +
                     std::to_string(data.train.feature_count()));
  }
  fs::create_directories(cfg.out_dir);
  ojson result;
  result["model"] = model_path;
  for (const auto& s : splits) {
    const Dataset& d = s == "train" ? data.train : data.test;
    result[s] = report_for(net, d);
    result[s]["rows"] = d.rows();
    write_file_atomic(cfg.out_dir / ("hist_eval_" + s + ".csv"),
                      histograms_to_csv(export_score_distributions(net, d, cfg.histogram_bins)));
  }
  write_json(cfg.out_dir / "evaluation.json", result);
  out << result.dump() << "\n";
  return kExitOk;
}

int cmd_diagnose(const RunConfig& cfg, const std::string& model_path, bool force, std::ostream& out) {
  guard_outputs(cfg.out_dir, {"theory.json", "hist_diagnose.csv"}, force);
  const auto net = load_model(model_path);
  const auto data = prepare_data(cfg);
  if (net.in_dim() != data.test.feature_count()) {
    throw ShapeError("model expects " + std::to_string(net.in_dim()) + " features, data has " +
                     std::to_string(data.test.feature_count()));
  }
  fs::create_directories(cfg.out_dir);
  TheoryOptions topts = cfg.theory;
  topts.seed = derive_seed(cfg.seed, "theory");
  ojson theory = to_json(theory_report(net, data.test, topts));
  const auto gc = grad_check(net, 100, 1e-4, derive_seed(cfg.seed, "diagnose_grad_check"));
  theory["grad_check_max_relative_error"] = gc.max_relative_error;
  const auto hist = export_score_distributions(net, data.test, cfg.histogram_bins);
  theory["tv_distance"] = tv_json(hist, data.test.attribute_count());
  write_file_atomic(cfg.out_dir / "hist_diagnose.csv", histograms_to_csv(hist));
  write_json(cfg.out_dir / "theory.json", theory);
  out << theory.dump() << "\n";
  return kExitOk;
}

std::string cell_name(int order, OptimizerKind kind) { return "k" + std::to_string(order) + "_" + to_string(kind); }

int cmd_ablate(const RunConfig& cfg, bool force, std::ostream& out, std::ostream& err) {
  std::vector<std::string> guarded{"ablation_summary.csv"};
  for (int k : cfg.ablate_orders)
    for (auto kind : cfg.ablate_optimizers) guarded.push_back(cell_name(k, kind) + "/metrics.jsonl");
  guard_outputs(cfg.out_dir, guarded, force);

  const auto data = prepare_data(cfg);
  const auto base = resolve_train_config(cfg, data.train);
  const auto attributes = data.train.attribute_count();
  fs::create_directories(cfg.out_dir);

  std::ostringstream summary;
  summary.precision(17);
  summary << "order,optimizer,status,accuracy,auroc";
  for (Eigen::Index j = 0; j < attributes; ++j) summary << ",p_rule_" << j;
  for (Eigen::Index j = 0; j < attributes; ++j) summary << ",dp_gap_" << j;
  summary << ",lambda_min,lambda_max,loss_trace\n";

  bool diverged = false;
  for (int k : cfg.ablate_orders) {
    for (auto kind : cfg.ablate_optimizers) {
      TrainConfig tc = base;
      tc.order = k;
      tc.classifier_optimizer.kind = kind;
      tc.validate();
      const std::string name = cell_name(k, kind);
      const fs::path dir = cfg.out_dir / name;
      summary << k << ',' << to_string(kind) << ',';
      try {
        const auto run = train_into(cfg, data, tc, dir);
        const auto rep = evaluate_fairness(classifier_probabilities(run.state.classifier, data.test.features),
                                           data.test.sensitive, data.test.labels);
        double lo = 1.0, hi = 0.0;
        for (const auto& r : run.state.history) {
          for (double l : r.lambdas) {
            lo = std::min(lo, l);
            hi = std::max(hi, l);
          }
        }
        summary << "ok," << rep.accuracy << ',';
        if (rep.auroc) summary << *rep.auroc;
        for (const auto& a : rep.attributes) {
          summary << ',';
          if (a.p_rule) summary << *a.p_rule;
        }
        for (const auto& a : rep.attributes) {
          summary << ',';
          if (a.dp_gap) summary << *a.dp_gap;
        }
        summary << ',' << lo << ',' << hi << ',' << name << "/loss_trace.csv\n";
        out << name << ": ok\n";
      } catch (const NumericError& e) {
        diverged = true;
        summary << "diverged,,";
        for (Eigen::Index j = 0; j < 2 * attributes; ++j) summary << ',';
        summary << ",,,\n";
        err << name << ": " << e.what() << "\n";
      }
    }
  }
  write_file_atomic(cfg.out_dir / "ablation_summary.csv", summary.str());
  return diverged ? kExitDivergence : kExitOk;
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg) {
  Dataset all;
  PreparedData p;
  if (cfg.csv_path) {
    auto loaded = load_csv(*cfg.csv_path, cfg.schema);
    all = std::move(loaded.dataset);
    p.dropped_rows = loaded.dropped_rows;
  } else {
    all = generate_synthetic(cfg.synthetic);
  }
  auto parts = split(all, cfg.test_fraction, derive_seed(cfg.seed, "split"));
  p.scaler = fit_scaler(parts.train);
  p.train = apply_scaler(p.scaler, parts.train);
  p.test = apply_scaler(p.scaler, parts.test);
  return p;
}

TrainConfig resolve_train_config(const RunConfig& cfg, const Dataset& train) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  if (!cfg.is_set("train.classifier_widths")) tc.classifier_widths.front() = int(train.feature_count());
  if (!cfg.is_set("train.adversary_widths")) tc.adversary_widths.back() = int(train.attribute_count());
  tc.validate();
  if (tc.classifier_widths.front() != train.feature_count()) {
    throw ConfigError("train.classifier_widths starts with " + std::to_string(tc.classifier_widths.front()) +
                      " but the data has " + std::to_string(train.feature_count()) + " features");
  }
  if (tc.adversary_widths.back() != train.attribute_count()) {
    throw ConfigError("train.adversary_widths ends with " + std::to_string(tc.adversary_widths.back()) +
                      " but the data has " + std::to_string(train.attribute_count()) + " sensitive attributes");
  }
  return tc;
}

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fairness-aware adversarial training of Kolmogorov-Arnold networks", "fairkan"};
  app.require_subcommand(1);
  app.footer("Any config key can be overridden as --section.key=value.");

  CommonOptions opts;
  std::string model_path;
  std::string keys_help;
  for (const auto& k : config_keys()) keys_help += "  " + k + "\n";

  auto* gen = app.add_subcommand("generate", "Write a synthetic biased dataset and its manifest");
  auto* trn = app.add_subcommand("train", "Pretrain, debias over the grid schedule, write models and reports");
  auto* evl = app.add_subcommand("evaluate", "Fairness report and score histograms for a saved model");
  auto* abl = app.add_subcommand("ablate", "Train every (spline order, optimizer) cell");
  auto* dia = app.add_subcommand("diagnose", "Theory checks on a saved model");
  auto* keys = app.add_subcommand("keys", "List config keys");
  for (auto* c : {gen, trn, evl, abl, dia}) add_common(c, opts);
  evl->add_option("--model", model_path, "Model file")->required();
  dia->add_option("--model", model_path, "Model file")->required();

  try {
    std::vector<std::string> args = argv;
    const KeyValues overrides = extract_overrides(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);

    if (keys->parsed()) {
      out << keys_help;
      return kExitOk;
    }
    const RunConfig cfg = build_config(opts, overrides);
    if (gen->parsed()) return cmd_generate(cfg, opts.force, out);
    if (trn->parsed()) return cmd_train(cfg, opts.force, out);
    if (evl->parsed()) return cmd_evaluate(cfg, model_path, opts.force, out);
    if (abl->parsed()) return cmd_ablate(cfg, opts.force, out, err);
    if (dia->parsed()) return cmd_diagnose(cfg, model_path, opts.force, out);
    return kExitUsage;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const RefinementError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const Error& e) {
    err << "error (" << e.kind() << "): " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fairkan
