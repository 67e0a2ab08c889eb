#include "fairkan/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "fairkan/errors.hpp"
#include "fairkan/model_io.hpp"

namespace fairkan {
namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  const auto end = s.find_last_not_of(ws);
  s.erase(end == std::string::npos ? 0 : end + 1);
  return s;
}

std::optional<double> parse_number(const std::string& cell) {
  const std::string t = trim(cell);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

Dataset Dataset::select_rows(const std::vector<Eigen::Index>& indices) const {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.sensitive.resize(static_cast<Eigen::Index>(indices.size()), sensitive.cols());
  out.labels.resize(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    const auto rr = static_cast<Eigen::Index>(r);
    out.features.row(rr) = features.row(i);
    out.sensitive.row(rr) = sensitive.row(i);
    out.labels[rr] = labels[i];
  }
  out.feature_names = feature_names;
  out.sensitive_names = sensitive_names;
  out.label_name = label_name;
  return out;
}

void Dataset::validate() const {
  if (sensitive.rows() != features.rows() || labels.size() != features.rows()) {
    throw ShapeError("dataset columns have inconsistent row counts");
  }
  if (!features.allFinite()) throw DataError("dataset features contain non-finite values");
  for (Eigen::Index r = 0; r < rows(); ++r) {
    if (labels[r] != 0 && labels[r] != 1) throw DataError("label in row " + std::to_string(r) + " is not binary");
    for (Eigen::Index j = 0; j < sensitive.cols(); ++j) {
      if (sensitive(r, j) != 0 && sensitive(r, j) != 1) {
        throw DataError("sensitive attribute in row " + std::to_string(r) + " is not binary");
      }
    }
  }
}

LoadResult load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open CSV file " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) throw SchemaError("CSV file " + path.string() + " has no header row");
  const auto header = split_line(header_line);
  std::map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) column[trim(header[c])] = c;
  auto locate = [&](const std::string& name) {
    auto it = column.find(name);
    if (it == column.end()) throw SchemaError("CSV column '" + name + "' not found in " + path.string());
    return it->second;
  };
  if (schema.features.empty()) throw SchemaError("schema lists no feature columns");
  if (schema.label.empty()) throw SchemaError("schema has no label column");
  std::vector<std::size_t> fcols, scols;
  for (const auto& f : schema.features) fcols.push_back(locate(f));
  for (const auto& s : schema.sensitive) scols.push_back(locate(s));
  const std::size_t lcol = locate(schema.label);

  std::vector<std::vector<double>> frows;
  std::vector<std::vector<int>> srows;
  std::vector<int> lrows;
  LoadResult result;
  std::string line;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    auto where = [&] { return "row " + std::to_string(line_no - 1) + " (line " + std::to_string(line_no) + ")"; };
    auto cell = [&](std::size_t c) -> std::optional<double> {
      if (c >= cells.size()) return std::nullopt;
      return parse_number(cells[c]);
    };
    std::vector<double> f;
    std::vector<int> s;
    bool missing = false;
    for (auto c : fcols) {
      auto v = cell(c);
      if (!v) { missing = true; break; }
      f.push_back(*v);
    }
    std::optional<double> label = missing ? std::nullopt : cell(lcol);
    if (!missing && !label) missing = true;
    for (std::size_t k = 0; !missing && k < scols.size(); ++k) {
      auto v = cell(scols[k]);
      if (!v) { missing = true; break; }
      if (*v != 0.0 && *v != 1.0) {
        throw DataError("non-binary value in sensitive column '" + schema.sensitive[k] + "' at " + where());
      }
      s.push_back(static_cast<int>(*v));
    }
    if (missing) {
      ++result.dropped_rows;
      continue;
    }
    if (*label != 0.0 && *label != 1.0) {
      throw DataError("non-binary value in label column '" + schema.label + "' at " + where());
    }
    frows.push_back(std::move(f));
    srows.push_back(std::move(s));
    lrows.push_back(static_cast<int>(*label));
  }

  Dataset& d = result.dataset;
  const auto m = static_cast<Eigen::Index>(frows.size());
  d.features.resize(m, static_cast<Eigen::Index>(fcols.size()));
  d.sensitive.resize(m, static_cast<Eigen::Index>(scols.size()));
  d.labels.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < fcols.size(); ++c) d.features(r, Eigen::Index(c)) = frows[r][c];
    for (std::size_t c = 0; c < scols.size(); ++c) d.sensitive(r, Eigen::Index(c)) = srows[r][c];
    d.labels[r] = lrows[r];
  }
  d.feature_names = schema.features;
  d.sensitive_names = schema.sensitive;
  d.label_name = schema.label;
  return result;
}

std::string to_csv(const Dataset& data) {
  std::ostringstream os;
  os.precision(17);
  std::vector<std::string> names;
  for (Eigen::Index c = 0; c < data.feature_count(); ++c) {
    names.push_back(c < Eigen::Index(data.feature_names.size()) ? data.feature_names[c] : "x" + std::to_string(c));
  }
  for (Eigen::Index c = 0; c < data.attribute_count(); ++c) {
    names.push_back(c < Eigen::Index(data.sensitive_names.size()) ? data.sensitive_names[c]
                                                                   : "z" + std::to_string(c));
  }
  names.push_back(data.label_name);
  for (std::size_t i = 0; i < names.size(); ++i) os << (i ? "," : "") << names[i];
  os << "\n";
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.feature_count(); ++c) os << (c ? "," : "") << data.features(r, c);
    for (Eigen::Index c = 0; c < data.attribute_count(); ++c) os << ',' << data.sensitive(r, c);
    os << ',' << data.labels[r] << "\n";
  }
  return os.str();
}

void write_csv(const Dataset& data, const std::filesystem::path& path) { write_file_atomic(path, to_csv(data)); }

Split split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  std::map<std::vector<int>, std::vector<Eigen::Index>> strata;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    std::vector<int> key;
    for (Eigen::Index j = 0; j < data.attribute_count(); ++j) key.push_back(data.sensitive(r, j));
    key.push_back(data.labels[r]);
    strata[key].push_back(r);
  }
  std::mt19937_64 rng(seed);
  Split out;
  std::vector<Eigen::Index> remainder;
  auto take = [&](std::vector<Eigen::Index>& rows) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(rows.size())));
    out.test_indices.insert(out.test_indices.end(), rows.begin(), rows.begin() + n_test);
    out.train_indices.insert(out.train_indices.end(), rows.begin() + n_test, rows.end());
  };
  for (auto& [key, rows] : strata) {
    if (rows.size() < 2) {
      remainder.insert(remainder.end(), rows.begin(), rows.end());
      ++out.fallback_strata;
      continue;
    }
    take(rows);
  }
  if (out.fallback_strata > 0) {
    std::cerr << "warning: " << out.fallback_strata
              << " stratum/strata with fewer than 2 rows; those rows are split by plain shuffling\n";
    take(remainder);
  }
  if (strata.size() == 1) std::cerr << "warning: data has a single stratum; split is a plain shuffle\n";
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  out.train = data.select_rows(out.train_indices);
  out.test = data.select_rows(out.test_indices);
  return out;
}

Scaler fit_scaler(const Dataset& train) {
  if (train.rows() == 0) throw DataError("cannot fit a scaler on an empty dataset");
  return {train.features.colwise().minCoeff().transpose(), train.features.colwise().maxCoeff().transpose()};
}

Dataset apply_scaler(const Scaler& scaler, const Dataset& data) {
  if (scaler.min.size() != data.feature_count()) throw ShapeError("scaler and dataset feature counts differ");
  Dataset out = data;
  for (Eigen::Index c = 0; c < data.feature_count(); ++c) {
    const double lo = scaler.min[c];
    const double span = scaler.max[c] - lo;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      out.features(r, c) = span > 0.0 ? std::clamp(2.0 * (data.features(r, c) - lo) / span - 1.0, -1.0, 1.0) : 0.0;
    }
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.rows < 10) throw ConfigError("synthetic data needs at least 10 rows");
  if (spec.features < 2) throw ConfigError("synthetic data needs at least 2 features");
  if (spec.attributes < 1) throw ConfigError("synthetic data needs at least 1 sensitive attribute");
  if (!(spec.group_balance > 0.0 && spec.group_balance < 1.0)) throw ConfigError("group balance must lie in (0, 1)");
  if (spec.bias < 0.0 || spec.mixing < 0.0 || !(spec.noise > 0.0) || spec.signal < 0.0) {
    throw ConfigError("synthetic bias, mixing and signal must be non-negative and noise positive");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Eigen::VectorXd loading(spec.features), w(spec.features);
  for (int f = 0; f < spec.features; ++f) loading[f] = 0.5 + uniform(rng);
  for (int f = 0; f < spec.features; ++f) w[f] = std::abs(normal(rng));
  if (w.norm() > 0.0) w *= spec.signal / w.norm();
  const double intercept = spec.bias * spec.group_balance * spec.attributes;

  Dataset d;
  d.features.resize(spec.rows, spec.features);
  d.sensitive.resize(spec.rows, spec.attributes);
  d.labels.resize(spec.rows);
  for (int r = 0; r < spec.rows; ++r) {
    int members = 0;
    for (int j = 0; j < spec.attributes; ++j) {
      d.sensitive(r, j) = uniform(rng) < spec.group_balance ? 1 : 0;
      members += d.sensitive(r, j);
    }
    double logit = intercept - spec.bias * members;
    for (int f = 0; f < spec.features; ++f) {
      d.features(r, f) = spec.noise * normal(rng) - spec.mixing * loading[f] * d.sensitive(r, f % spec.attributes);
      logit += w[f] * d.features(r, f);
    }
    d.labels[r] = uniform(rng) < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;
  }
  for (int f = 0; f < spec.features; ++f) d.feature_names.push_back("x" + std::to_string(f));
  for (int j = 0; j < spec.attributes; ++j) d.sensitive_names.push_back("z" + std::to_string(j));
  d.label_name = "y";
  return d;
}

nlohmann::ordered_json to_json(const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["rows"] = spec.rows;
  j["features"] = spec.features;
  j["attributes"] = spec.attributes;
  j["group_balance"] = spec.group_balance;
  j["bias"] = spec.bias;
  j["mixing"] = spec.mixing;
  j["signal"] = spec.signal;
  j["noise"] = spec.noise;
  j["seed"] = spec.seed;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.rows = j.at("rows").get<int>();
    s.features = j.at("features").get<int>();
    s.attributes = j.at("attributes").get<int>();
    s.group_balance = j.at("group_balance").get<double>();
    s.bias = j.at("bias").get<double>();
    s.mixing = j.at("mixing").get<double>();
    s.signal = j.at("signal").get<double>();
    s.noise = j.at("noise").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad synthetic manifest: ") + e.what());
  }
  return s;
}

}  // namespace fairkan
