#include "fairkan/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include "fairkan/errors.hpp"

namespace fairkan {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

long long parse_int(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "an integer");
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value, "a number");
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value, "a number");
  } catch (const std::out_of_range&) {
    bad_value(key, value, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  std::string v = value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "a boolean");
}

std::vector<int> parse_ints(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& item : split_list(value)) out.push_back(int(parse_int(key, item)));
  if (out.empty()) bad_value(key, value, "a non-empty integer list");
  return out;
}

std::string ints_to_string(const std::vector<int>& v) {
  std::vector<std::string> s;
  for (int x : v) s.push_back(std::to_string(x));
  return join(s);
}

// shortest form that reads back to the same double
std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string boolean(bool v) { return v ? "true" : "false"; }

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Field>
Entry int_entry(std::string key, Field field) {
  return {std::move(key),
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            using T = std::remove_reference_t<decltype(field(c))>;
            const long long x = parse_int(k, v);
            if (std::is_unsigned_v<T> && x < 0) bad_value(k, v, "a non-negative integer");
            field(c) = static_cast<T>(x);
          },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <typename Field>
Entry double_entry(std::string key, Field field) {
  return {std::move(key), [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_double(k, v); },
          [field](const RunConfig& c) { return num(field(c)); }};
}

template <typename Field>
Entry bool_entry(std::string key, Field field) {
  return {std::move(key), [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_bool(k, v); },
          [field](const RunConfig& c) { return boolean(field(c)); }};
}

template <typename Field>
Entry ints_entry(std::string key, Field field) {
  return {std::move(key), [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_ints(k, v); },
          [field](const RunConfig& c) { return ints_to_string(field(c)); }};
}

template <typename Field>
Entry optimizer_entry(std::string key, Field field) {
  return {std::move(key),
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              field(c) = parse_optimizer_kind(v);
            } catch (const ConfigError&) {
              bad_value(k, v, "adam, oadam or adopt");
            }
          },
          [field](const RunConfig& c) { return to_string(field(c)); }};
}

Entry choice_entry(std::string key, std::string RunConfig::*field, std::vector<std::string> choices) {
  return {std::move(key),
          [field, choices](RunConfig& c, const std::string& k, const std::string& v) {
            if (std::find(choices.begin(), choices.end(), v) == choices.end()) bad_value(k, v, join(choices));
            c.*field = v;
          },
          [field](const RunConfig& c) { return c.*field; }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back(int_entry("run.seed", [](auto& c) -> auto& { return c.seed; }));
    t.push_back({"run.out", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                 [](const RunConfig& c) { return c.out_dir.string(); }});

    t.push_back({"data.source",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "synthetic") {
                     c.csv_path.reset();
                   } else if (v != "csv") {
                     bad_value(k, v, "synthetic or csv");
                   } else if (!c.csv_path) {
                     c.csv_path = std::filesystem::path();
                   }
                 },
                 [](const RunConfig& c) { return std::string(c.csv_path ? "csv" : "synthetic"); }});
    t.push_back({"data.csv", [](RunConfig& c, const std::string&, const std::string& v) { c.csv_path = v; },
                 [](const RunConfig& c) { return c.csv_path ? c.csv_path->string() : std::string(); }});
    t.push_back({"data.features",
                 [](RunConfig& c, const std::string&, const std::string& v) { c.schema.features = split_list(v); },
                 [](const RunConfig& c) { return join(c.schema.features); }});
    t.push_back({"data.sensitive",
                 [](RunConfig& c, const std::string&, const std::string& v) { c.schema.sensitive = split_list(v); },
                 [](const RunConfig& c) { return join(c.schema.sensitive); }});
    t.push_back({"data.label", [](RunConfig& c, const std::string&, const std::string& v) { c.schema.label = v; },
                 [](const RunConfig& c) { return c.schema.label; }});
    t.push_back(double_entry("data.test_fraction", [](auto& c) -> auto& { return c.test_fraction; }));

    t.push_back(int_entry("synthetic.rows", [](auto& c) -> auto& { return c.synthetic.rows; }));
    t.push_back(int_entry("synthetic.features", [](auto& c) -> auto& { return c.synthetic.features; }));
    t.push_back(int_entry("synthetic.attributes", [](auto& c) -> auto& { return c.synthetic.attributes; }));
    t.push_back(double_entry("synthetic.group_balance", [](auto& c) -> auto& { return c.synthetic.group_balance; }));
    t.push_back(double_entry("synthetic.bias", [](auto& c) -> auto& { return c.synthetic.bias; }));
    t.push_back(double_entry("synthetic.mixing", [](auto& c) -> auto& { return c.synthetic.mixing; }));
    t.push_back(double_entry("synthetic.signal", [](auto& c) -> auto& { return c.synthetic.signal; }));
    t.push_back(double_entry("synthetic.noise", [](auto& c) -> auto& { return c.synthetic.noise; }));
    t.push_back(int_entry("synthetic.seed", [](auto& c) -> auto& { return c.synthetic.seed; }));

    t.push_back(ints_entry("train.classifier_widths", [](auto& c) -> auto& { return c.train.classifier_widths; }));
    t.push_back(ints_entry("train.adversary_widths", [](auto& c) -> auto& { return c.train.adversary_widths; }));
    t.push_back(int_entry("train.order", [](auto& c) -> auto& { return c.train.order; }));
    t.push_back(ints_entry("train.grid_schedule", [](auto& c) -> auto& { return c.train.grid_schedule; }));
    t.push_back(bool_entry("train.base", [](auto& c) -> auto& { return c.train.base_enabled; }));
    t.push_back(int_entry("train.epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    t.push_back(int_entry("train.pretrain_classifier_epochs",
                          [](auto& c) -> auto& { return c.train.pretrain_classifier_epochs; }));
    t.push_back(int_entry("train.pretrain_adversary_epochs",
                          [](auto& c) -> auto& { return c.train.pretrain_adversary_epochs; }));
    t.push_back(int_entry("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    t.push_back(bool_entry("train.alternating", [](auto& c) -> auto& { return c.train.alternating; }));
    t.push_back(double_entry("train.l1", [](auto& c) -> auto& { return c.train.l1; }));
    t.push_back(double_entry("train.l2", [](auto& c) -> auto& { return c.train.l2; }));
    t.push_back(int_entry("train.eval_every", [](auto& c) -> auto& { return c.train.eval_every; }));
    t.push_back(choice_entry("train.lambda_split", &RunConfig::lambda_split, {"train", "test"}));

    t.push_back(optimizer_entry("optim.classifier", [](auto& c) -> auto& { return c.train.classifier_optimizer.kind; }));
    t.push_back(optimizer_entry("optim.adversary", [](auto& c) -> auto& { return c.train.adversary_optimizer.kind; }));
    t.push_back(double_entry("optim.classifier_lr",
                             [](auto& c) -> auto& { return c.train.classifier_optimizer.learning_rate; }));
    t.push_back(double_entry("optim.adversary_lr",
                             [](auto& c) -> auto& { return c.train.adversary_optimizer.learning_rate; }));
    // Shared moment settings are stored on both optimizers.
    auto shared_double = [&t](const std::string& key, double OptimizerConfig::*member) {
      t.push_back({key,
                   [member](RunConfig& c, const std::string& k, const std::string& v) {
                     const double x = parse_double(k, v);
                     c.train.classifier_optimizer.*member = x;
                     c.train.adversary_optimizer.*member = x;
                   },
                   [member](const RunConfig& c) { return num(c.train.classifier_optimizer.*member); }});
    };
    shared_double("optim.beta1", &OptimizerConfig::beta1);
    shared_double("optim.beta2", &OptimizerConfig::beta2);
    shared_double("optim.adopt_beta2", &OptimizerConfig::adopt_beta2);
    shared_double("optim.epsilon", &OptimizerConfig::epsilon);
    t.push_back({"optim.adopt_clip",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   const bool on = parse_bool(k, v);
                   c.train.classifier_optimizer.adopt_clip = on;
                   c.train.adversary_optimizer.adopt_clip = on;
                 },
                 [](const RunConfig& c) { return boolean(c.train.classifier_optimizer.adopt_clip); }});

    t.push_back(double_entry("fairness.eta", [](auto& c) -> auto& { return c.train.eta; }));
    t.push_back(double_entry("fairness.tau", [](auto& c) -> auto& { return c.train.tau; }));
    t.push_back(double_entry("fairness.initial_lambda", [](auto& c) -> auto& { return c.train.initial_lambda; }));
    t.push_back(bool_entry("fairness.scalar_lambda", [](auto& c) -> auto& { return c.train.scalar_lambda; }));

    t.push_back(choice_entry("eval.split", &RunConfig::eval_split, {"train", "test", "both"}));
    t.push_back(int_entry("eval.bins", [](auto& c) -> auto& { return c.histogram_bins; }));

    t.push_back(int_entry("diagnostics.lipschitz_pairs", [](auto& c) -> auto& { return c.theory.lipschitz_pairs; }));
    t.push_back(int_entry("diagnostics.smoothness_lines", [](auto& c) -> auto& { return c.theory.smoothness_lines; }));
    t.push_back(double_entry("diagnostics.smoothness_step", [](auto& c) -> auto& { return c.theory.smoothness_step; }));
    t.push_back(int_entry("diagnostics.directions", [](auto& c) -> auto& { return c.theory.directions; }));

    t.push_back(ints_entry("ablate.orders", [](auto& c) -> auto& { return c.ablate_orders; }));
    t.push_back({"ablate.optimizers",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   std::vector<OptimizerKind> kinds;
                   for (const auto& item : split_list(v)) {
                     try {
                       kinds.push_back(parse_optimizer_kind(item));
                     } catch (const ConfigError&) {
                       bad_value(k, item, "adam, oadam or adopt");
                     }
                   }
                   if (kinds.empty()) bad_value(k, v, "a non-empty optimizer list");
                   c.ablate_optimizers = kinds;
                 },
                 [](const RunConfig& c) {
                   std::vector<std::string> s;
                   for (auto k : c.ablate_optimizers) s.push_back(to_string(k));
                   return join(s);
                 }});
    return t;
  }();
  return table;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(number) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(number) + ": key '" + key + "' repeated");
    }
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str());
}

bool RunConfig::is_set(const std::string& key) const {
  return std::find(explicit_keys.begin(), explicit_keys.end(), key) != explicit_keys.end();
}

RunConfig apply_key_values(RunConfig base, const KeyValues& values) {
  const auto& table = entries();
  // data.csv before data.source so "source = synthetic" in the same file wins.
  std::vector<std::pair<std::string, std::string>> ordered(values.begin(), values.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.first == "data.csv" && b.first != "data.csv"; });
  for (const auto& [key, value] : ordered) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return e.key == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(base, key, value);
    if (!base.is_set(key)) base.explicit_keys.push_back(key);
  }
  if (base.csv_path && base.csv_path->empty()) throw ConfigError("data.source = csv needs data.csv");
  return base;
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(config) + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

}  // namespace fairkan
