#include "fairkan/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fairkan/errors.hpp"
#include "fairkan/seed.hpp"

namespace fairkan {
namespace {

Eigen::VectorXd random_unit(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd u(n);
  do {
    for (Eigen::Index i = 0; i < n; ++i) u[i] = normal(rng);
  } while (u.norm() == 0.0);
  return u / u.norm();
}

/// First-layer input box.
struct Box {
  double lo;
  double hi;
};

Box input_box(const KanNetwork<double>& net) { return {net.layer(0).grid.lo(), net.layer(0).grid.hi()}; }

Eigen::VectorXd base_point(const KanNetwork<double>& net, const Eigen::MatrixXd& points, std::mt19937_64& rng) {
  if (points.rows() > 0) {
    std::uniform_int_distribution<Eigen::Index> pick(0, points.rows() - 1);
    return points.row(pick(rng)).transpose();
  }
  const auto box = input_box(net);
  std::uniform_real_distribution<double> u(box.lo, box.hi);
  Eigen::VectorXd x(net.in_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = u(rng);
  return x;
}

bool all_inside(const KanNetwork<double>& net, const ForwardCache<double>& cache, Eigen::Index row) {
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& g = net.layer(l).grid;
    const auto& in = cache.layer_inputs[l];
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      if (!g.contains(in(row, c))) return false;
    }
  }
  return true;
}

double row_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Eigen::Index r) {
  return (a.row(r) - b.row(r)).cwiseAbs().maxCoeff();
}

}  // namespace

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckResult check_gradient(const std::function<double(const Eigen::VectorXd&)>& objective,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, int probes,
                               double step, std::uint64_t seed, const std::vector<Eigen::Index>& candidates) {
  if (x.size() != analytic.size()) throw ShapeError("check_gradient: point and gradient differ in length");
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  GradCheckResult out;
  const Eigen::Index pool = candidates.empty() ? x.size() : Eigen::Index(candidates.size());
  if (pool == 0 || probes <= 0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, pool - 1);
  Eigen::VectorXd probe = x;
  for (int p = 0; p < probes; ++p) {
    const Eigen::Index i = candidates.empty() ? pick(rng) : candidates[std::size_t(pick(rng))];
    const double saved = probe[i];
    probe[i] = saved + step;
    const double plus = objective(probe);
    probe[i] = saved - step;
    const double minus = objective(probe);
    probe[i] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric);
    if (out.worst_index < 0 || err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst_index = i;
    }
    ++out.probes;
  }
  return out;
}

GradCheckResult grad_check(const KanNetwork<double>& net, int probes, double step, std::uint64_t seed, int batch) {
  if (batch < 1) throw ConfigError("grad_check batch must be positive");
  std::mt19937_64 rng(derive_seed(seed, "grad_check_data"));
  const auto box = input_box(net);
  // Stay a few steps inside the box so the input probes never cross the clamp.
  const double pad = std::min(10.0 * step, 0.25 * (box.hi - box.lo));
  std::uniform_real_distribution<double> in(box.lo + pad, box.hi - pad);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd X(batch, net.in_dim());
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = in(rng);
  Eigen::MatrixXd W(batch, net.out_dim());
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = normal(rng);

  const auto fwd = forward(net, X);
  const auto grads = backward(net, fwd.cache, W);
  const Eigen::VectorXd theta = net.parameters();
  const Eigen::Index np = theta.size();

  // Coordinates 0 .. np-1 are parameters, np .. are inputs (row-major).
  Eigen::VectorXd point(np + X.size());
  Eigen::VectorXd analytic(np + X.size());
  point.head(np) = theta;
  analytic.head(np) = grads.flatten();
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      point[np + r * X.cols() + c] = X(r, c);
      analytic[np + r * X.cols() + c] = grads.input_grad(r, c);
    }
  }

  KanNetwork<double> work = net;
  auto objective = [&](const Eigen::VectorXd& v) {
    work.set_parameters(v.head(np));
    Eigen::MatrixXd x(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      for (Eigen::Index c = 0; c < X.cols(); ++c) x(r, c) = v[np + r * X.cols() + c];
    return (predict(work, x).array() * W.array()).sum();
  };

  std::vector<Eigen::Index> params(static_cast<std::size_t>(np));
  for (Eigen::Index i = 0; i < np; ++i) params[std::size_t(i)] = i;
  std::vector<Eigen::Index> inputs(static_cast<std::size_t>(X.size()));
  for (Eigen::Index i = 0; i < X.size(); ++i) inputs[std::size_t(i)] = np + i;

  const int input_probes = probes / 4;
  auto a = check_gradient(objective, point, analytic, probes - input_probes, step, derive_seed(seed, "grad_check_params"),
                          params);
  auto b = check_gradient(objective, point, analytic, input_probes, step, derive_seed(seed, "grad_check_inputs"), inputs);
  GradCheckResult out = a.max_relative_error >= b.max_relative_error ? a : b;
  out.probes = a.probes + b.probes;
  return out;
}

double lipschitz_bound(const KanNetwork<double>& net) {
  double bound = 1.0;
  for (const auto& L : net.layers()) {
    double edge_max = 0.0;
    for (int i = 0; i < L.in_dim; ++i)
      for (int j = 0; j < L.out_dim; ++j) edge_max = std::max(edge_max, edge_slope_bound(L, net.base_enabled(), i, j));
    bound *= double(L.in_dim) * edge_max;
  }
  return bound;
}

LipschitzResult lipschitz_estimate(const KanNetwork<double>& net, const Eigen::MatrixXd& points, int pairs,
                                   std::uint64_t seed) {
  if (points.rows() > 0 && points.cols() != net.in_dim()) {
    throw ShapeError("lipschitz_estimate: points have the wrong column count");
  }
  LipschitzResult out;
  out.bound = lipschitz_bound(net);
  if (pairs <= 0) return out;
  std::mt19937_64 rng(seed);
  const auto box = input_box(net);
  Eigen::MatrixXd A(pairs, net.in_dim()), B(pairs, net.in_dim());
  for (int p = 0; p < pairs; ++p) {
    const Eigen::VectorXd x = base_point(net, points, rng);
    A.row(p) = x.transpose();
    if (p % 2 == 0) {
      B.row(p) = base_point(net, points, rng).transpose();
    } else {
      const Eigen::VectorXd u = random_unit(rng, net.in_dim());
      B.row(p) = (x + 1e-3 * u).cwiseMax(box.lo).cwiseMin(box.hi).transpose();
    }
  }
  const Eigen::MatrixXd fa = predict(net, A);
  const Eigen::MatrixXd fb = predict(net, B);
  for (int p = 0; p < pairs; ++p) {
    const double dx = (A.row(p) - B.row(p)).norm();
    if (dx <= 0.0) continue;
    out.estimate = std::max(out.estimate, row_gap(fa, fb, p) / dx);
    ++out.pairs;
  }
  return out;
}

double smoothness_estimate(const KanNetwork<double>& net, const Eigen::MatrixXd& points, int lines,
                           std::uint64_t seed, double h) {
  if (!(h > 0.0)) throw ConfigError("smoothness step must be positive");
  if (points.rows() > 0 && points.cols() != net.in_dim()) {
    throw ShapeError("smoothness_estimate: points have the wrong column count");
  }
  if (lines <= 0) return 0.0;
  std::mt19937_64 rng(seed);
  const auto box = input_box(net);
  const Eigen::Index n = net.in_dim();
  Eigen::MatrixXd C(lines, n), P(lines, n), M(lines, n);
  for (int l = 0; l < lines; ++l) {
    const Eigen::VectorXd x = base_point(net, points, rng);
    const Eigen::VectorXd u = random_unit(rng, n);
    C.row(l) = x.transpose();
    P.row(l) = (x + h * u).transpose();
    M.row(l) = (x - h * u).transpose();
  }
  const auto fc = forward(net, C);
  const auto fp = forward(net, P);
  const auto fm = forward(net, M);
  double beta = 0.0;
  for (int l = 0; l < lines; ++l) {
    if (P.row(l).minCoeff() < box.lo || P.row(l).maxCoeff() > box.hi || M.row(l).minCoeff() < box.lo ||
        M.row(l).maxCoeff() > box.hi) {
      continue;
    }
    if (!all_inside(net, fc.cache, l) || !all_inside(net, fp.cache, l) || !all_inside(net, fm.cache, l)) continue;
    const double d2 = (fp.outputs.row(l) - 2.0 * fc.outputs.row(l) + fm.outputs.row(l)).cwiseAbs().maxCoeff();
    beta = std::max(beta, d2 / (h * h));
  }
  return beta;
}

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw UsageError("wasserstein1_1d needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  if (n == m) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::abs(a[i] - b[i]);
    return sum / double(n);
  }
  // Walk the merged breakpoints i/n and j/m of the two quantile functions.
  double total = 0.0, t = 0.0;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    const double next_a = double(i + 1) / double(n);
    const double next_b = double(j + 1) / double(m);
    const double next = std::min(next_a, next_b);
    total += (next - t) * std::abs(a[i] - b[j]);
    t = next;
    // Integer comparison decides ties exactly: (i+1)/n == (j+1)/m.
    const auto lhs = (i + 1) * m, rhs = (j + 1) * n;
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return total;
}

ContractionResult contraction_check(const KanNetwork<double>& net, const Dataset& data, int attribute,
                                    double lipschitz, int directions, std::uint64_t seed) {
  if (attribute < 0 || attribute >= data.attribute_count()) {
    throw UsageError("contraction_check: attribute index " + std::to_string(attribute) + " out of range");
  }
  if (directions < 1) throw ConfigError("contraction_check needs at least one direction");
  ContractionResult out;
  out.lipschitz = lipschitz;
  std::vector<Eigen::Index> g0, g1;
  for (Eigen::Index r = 0; r < data.rows(); ++r) (data.sensitive(r, attribute) ? g1 : g0).push_back(r);
  out.n0 = Eigen::Index(g0.size());
  out.n1 = Eigen::Index(g1.size());
  if (g0.empty() || g1.empty()) throw DataError("contraction_check: attribute has an empty group");

  const Eigen::VectorXd scores = predict(net, data.features).col(0);
  std::vector<double> s0, s1;
  for (auto r : g0) s0.push_back(scores[r]);
  for (auto r : g1) s1.push_back(scores[r]);
  out.w1_output = wasserstein1_1d(s0, s1);

  std::mt19937_64 rng(seed);
  for (int d = 0; d < directions; ++d) {
    const Eigen::VectorXd u = random_unit(rng, data.feature_count());
    const Eigen::VectorXd proj = data.features * u;
    std::vector<double> p0, p1;
    for (auto r : g0) p0.push_back(proj[r]);
    for (auto r : g1) p1.push_back(proj[r]);
    out.w1_input = std::max(out.w1_input, wasserstein1_1d(p0, p1));
  }
  out.ok = out.w1_output <= lipschitz * out.w1_input * 1.1;
  return out;
}

std::vector<HistogramRow> score_histograms(const Eigen::VectorXd& probabilities, const Eigen::MatrixXi& sensitive,
                                           int bins) {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  if (probabilities.size() != sensitive.rows()) throw ShapeError("score_histograms: row counts differ");
  std::vector<HistogramRow> rows;
  for (Eigen::Index a = 0; a < sensitive.cols(); ++a) {
    for (int g = 0; g < 2; ++g) {
      std::vector<long> counts(static_cast<std::size_t>(bins), 0);
      long total = 0;
      for (Eigen::Index r = 0; r < probabilities.size(); ++r) {
        if (sensitive(r, a) != g) continue;
        const double p = std::clamp(probabilities[r], 0.0, 1.0);
        const int b = std::min(bins - 1, static_cast<int>(std::floor(p * bins)));
        ++counts[std::size_t(b)];
        ++total;
      }
      for (int b = 0; b < bins; ++b) {
        HistogramRow row;
        row.attribute = int(a);
        row.group = g;
        row.bin_lo = double(b) / bins;
        row.bin_hi = double(b + 1) / bins;
        row.count = counts[std::size_t(b)];
        row.density = total > 0 ? double(row.count) / double(total) : 0.0;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::vector<HistogramRow> export_score_distributions(const KanNetwork<double>& net, const Dataset& data, int bins) {
  const Eigen::VectorXd p = predict(net, data.features).col(0).unaryExpr([](double s) { return sigmoid(s); });
  return score_histograms(p, data.sensitive, bins);
}

std::string histograms_to_csv(const std::vector<HistogramRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "attribute,group,bin_lo,bin_hi,count,density\n";
  for (const auto& r : rows) {
    out << r.attribute << ',' << r.group << ',' << r.bin_lo << ',' << r.bin_hi << ',' << r.count << ','
        << r.density << '\n';
  }
  return out.str();
}

double histogram_tv_distance(const std::vector<HistogramRow>& rows, int attribute) {
  std::vector<double> d0, d1;
  for (const auto& r : rows) {
    if (r.attribute != attribute) continue;
    (r.group == 0 ? d0 : d1).push_back(r.density);
  }
  if (d0.size() != d1.size() || d0.empty()) throw UsageError("histogram_tv_distance: attribute not present");
  double tv = 0.0;
  for (std::size_t b = 0; b < d0.size(); ++b) tv += std::abs(d0[b] - d1[b]);
  return 0.5 * tv;
}

TheoryReport theory_report(const KanNetwork<double>& net, const Dataset& data, const TheoryOptions& options) {
  TheoryReport report;
  report.rows = data.rows();
  const auto lip = lipschitz_estimate(net, data.features, options.lipschitz_pairs,
                                      derive_seed(options.seed, "lipschitz"));
  report.lipschitz_estimate = lip.estimate;
  report.lipschitz_bound = lip.bound;
  report.lipschitz_pairs = lip.pairs;
  const auto smooth_seed = derive_seed(options.seed, "smoothness");
  report.smoothness_estimate =
      smoothness_estimate(net, data.features, options.smoothness_lines, smooth_seed, options.smoothness_step);
  report.smoothness_estimate_half_step =
      smoothness_estimate(net, data.features, options.smoothness_lines, smooth_seed, 0.5 * options.smoothness_step);
  report.smoothness_lines = options.smoothness_lines;
  for (Eigen::Index a = 0; a < data.attribute_count(); ++a) {
    report.contraction.push_back(contraction_check(net, data, int(a), lip.estimate, options.directions,
                                                   derive_seed(options.seed, "contraction", std::uint64_t(a))));
  }
  return report;
}

nlohmann::ordered_json to_json(const TheoryReport& r) {
  nlohmann::ordered_json j;
  j["lipschitz_estimate"] = r.lipschitz_estimate;
  j["lipschitz_bound"] = r.lipschitz_bound;
  j["lipschitz_within_bound"] = r.lipschitz_estimate <= r.lipschitz_bound;
  j["smoothness_estimate"] = r.smoothness_estimate;
  j["smoothness_estimate_half_step"] = r.smoothness_estimate_half_step;
  nlohmann::ordered_json w_in = nlohmann::ordered_json::array(), w_out = nlohmann::ordered_json::array(),
                         ok = nlohmann::ordered_json::array(), sizes = nlohmann::ordered_json::array();
  for (const auto& c : r.contraction) {
    w_in.push_back(c.w1_input);
    w_out.push_back(c.w1_output);
    ok.push_back(c.ok);
    sizes.push_back({c.n0, c.n1});
  }
  j["w1_input"] = w_in;
  j["w1_output"] = w_out;
  j["contraction_ok"] = ok;
  j["group_sizes"] = sizes;
  j["sample_sizes"] = {{"rows", r.rows}, {"lipschitz_pairs", r.lipschitz_pairs}, {"smoothness_lines", r.smoothness_lines}};
  return j;
}

}  // namespace fairkan
