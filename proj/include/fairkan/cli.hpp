#pragma once

// Command-line front end: generate, train, evaluate, ablate, diagnose.
//
// Exit codes: 0 success, 2 usage / configuration / input error,
// 3 numeric divergence, 1 anything else.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fairkan/config.hpp"
#include "fairkan/data.hpp"

namespace fairkan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Train/test data as the commands see it: loaded or generated, split with the
/// run seed, scaled with train statistics.
struct PreparedData {
  Dataset train;
  Dataset test;
  Scaler scaler;
  long dropped_rows = 0;
};

PreparedData prepare_data(const RunConfig& config);

/// Fills the classifier input width and the adversary output width from the
/// data unless they were set explicitly, then validates.
TrainConfig resolve_train_config(const RunConfig& config, const Dataset& train);

}  // namespace fairkan
