#pragma once

// Run configuration: flat `section.key = value` text files with `#` comments,
// overridable key by key.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairkan/data.hpp"
#include "fairkan/diagnostics.hpp"
#include "fairkan/trainer.hpp"

namespace fairkan {

using KeyValues = std::map<std::string, std::string>;

/// Throws ConfigError (with the line number) on malformed lines or repeated keys.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& path);

struct RunConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "out";

  /// Exactly one data source: a CSV file (with schema) or the generator.
  std::optional<std::filesystem::path> csv_path;
  CsvSchema schema;
  SyntheticSpec synthetic;
  double test_fraction = 0.2;

  TrainConfig train;
  /// "train" or "test": split whose p%-rule drives the lambda update.
  std::string lambda_split = "train";

  /// "train", "test" or "both".
  std::string eval_split = "both";
  int histogram_bins = 20;
  TheoryOptions theory;

  std::vector<int> ablate_orders{3, 4, 5};
  std::vector<OptimizerKind> ablate_optimizers{OptimizerKind::Adam, OptimizerKind::OAdam, OptimizerKind::ADOPT};

  /// Keys that were set explicitly (file or override).
  std::vector<std::string> explicit_keys;

  bool is_set(const std::string& key) const;
};

/// Applies `values` on top of `base`. Unknown keys and unparsable values
/// throw ConfigError naming the key.
RunConfig apply_key_values(RunConfig base, const KeyValues& values);

/// Every key with its effective value, in `key = value` form.
std::string dump_config(const RunConfig& config);

/// All recognised keys.
const std::vector<std::string>& config_keys();

}  // namespace fairkan
