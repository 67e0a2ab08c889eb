#pragma once

// Kolmogorov-Arnold networks: every edge (i -> j) of a layer carries
//
//   phi_ij(x) = base_weight_ij * silu(x) + spline_scale_ij * h_ij(x)
//
// with h_ij a B-spline on the layer's shared grid. Node j sums its incoming
// edges. Layer inputs are clamped to the grid domain before evaluation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fairkan/errors.hpp"
#include "fairkan/spline.hpp"

namespace fairkan {

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// Base activation x * sigmoid(x).
template <typename Scalar>
Scalar silu(Scalar x) {
  return x * sigmoid(x);
}

template <typename Scalar>
Scalar silu_derivative(Scalar x) {
  const Scalar s = sigmoid(x);
  return s * (Scalar(1) + x * (Scalar(1) - s));
}

/// sup |silu'(x)| over the real line (attained near x = 2.3994).
inline constexpr double kSiluSlopeBound = 1.0998;

/// Copy of a single edge's parameters.
template <typename Scalar = double>
struct KanEdge {
  Vector<Scalar> spline_coeffs;
  Scalar base_weight;
  Scalar spline_scale;
};

template <typename Scalar = double>
struct KanLayer {
  SplineGrid<Scalar> grid;
  int in_dim = 0;
  int out_dim = 0;
  /// Row i * out_dim + j holds the coefficients of edge (i, j).
  Matrix<Scalar> coeffs;
  /// in_dim x out_dim.
  Matrix<Scalar> base_weight;
  Matrix<Scalar> spline_scale;

  KanLayer() = default;
  KanLayer(int in, int out, SplineGrid<Scalar> g)
      : grid(std::move(g)),
        in_dim(in),
        out_dim(out),
        coeffs(Matrix<Scalar>::Zero(Eigen::Index(in) * out, grid.basis_count())),
        base_weight(Matrix<Scalar>::Zero(in, out)),
        spline_scale(Matrix<Scalar>::Zero(in, out)) {}

  int edge_index(int i, int j) const noexcept { return i * out_dim + j; }

  KanEdge<Scalar> edge(int i, int j) const {
    return {coeffs.row(edge_index(i, j)).transpose(), base_weight(i, j), spline_scale(i, j)};
  }

  Eigen::Index parameter_count() const noexcept {
    return coeffs.size() + base_weight.size() + spline_scale.size();
  }
};

/// Per-layer parameter gradients plus the gradient with respect to the network input.
template <typename Scalar = double>
struct GradientSet {
  struct Layer {
    Matrix<Scalar> coeffs;
    Matrix<Scalar> base_weight;
    Matrix<Scalar> spline_scale;
  };
  std::vector<Layer> layers;
  Matrix<Scalar> input_grad;

  /// Flattened in the same order as KanNetwork::parameters().
  Vector<Scalar> flatten() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.coeffs.size() + l.base_weight.size() + l.spline_scale.size();
    Vector<Scalar> out(n);
    Eigen::Index at = 0;
    auto put = [&](const Matrix<Scalar>& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = m(r, c);
    };
    for (const auto& l : layers) {
      put(l.coeffs);
      put(l.base_weight);
      put(l.spline_scale);
    }
    return out;
  }
};

template <typename Scalar = double>
class KanNetwork {
 public:
  KanNetwork() = default;
  KanNetwork(std::vector<KanLayer<Scalar>> layers, bool base_enabled = true)
      : layers_(std::move(layers)), base_enabled_(base_enabled) {
    validate();
  }

  const std::vector<KanLayer<Scalar>>& layers() const noexcept { return layers_; }
  const KanLayer<Scalar>& layer(std::size_t l) const { return layers_.at(l); }

  /// Mutable access invalidates outstanding forward caches.
  KanLayer<Scalar>& mutable_layer(std::size_t l) {
    ++generation_;
    return layers_.at(l);
  }

  std::size_t depth() const noexcept { return layers_.size(); }
  int in_dim() const { return layers_.front().in_dim; }
  int out_dim() const { return layers_.back().out_dim; }
  bool base_enabled() const noexcept { return base_enabled_; }
  void set_base_enabled(bool on) {
    ++generation_;
    base_enabled_ = on;
  }
  std::uint64_t generation() const noexcept { return generation_; }

  std::vector<int> widths() const {
    std::vector<int> w;
    if (layers_.empty()) return w;
    w.push_back(layers_.front().in_dim);
    for (const auto& l : layers_) w.push_back(l.out_dim);
    return w;
  }

  Eigen::Index parameter_count() const noexcept {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
  }

  Vector<Scalar> parameters() const {
    Vector<Scalar> out(parameter_count());
    Eigen::Index at = 0;
    auto put = [&](const Matrix<Scalar>& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = m(r, c);
    };
    for (const auto& l : layers_) {
      put(l.coeffs);
      put(l.base_weight);
      put(l.spline_scale);
    }
    return out;
  }

  void set_parameters(const Vector<Scalar>& p) {
    if (p.size() != parameter_count()) {
      throw ShapeError("parameter vector has " + std::to_string(p.size()) + " entries, network has " +
                       std::to_string(parameter_count()));
    }
    Eigen::Index at = 0;
    auto take = [&](Matrix<Scalar>& m) {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = p[at++];
    };
    for (auto& l : layers_) {
      take(l.coeffs);
      take(l.base_weight);
      take(l.spline_scale);
    }
    ++generation_;
  }

 private:
  void validate() const {
    if (layers_.empty()) throw ConfigError("network needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (L.in_dim < 1 || L.out_dim < 1) throw ConfigError("layer dimensions must be positive");
      if (l > 0 && layers_[l - 1].out_dim != L.in_dim) {
        throw ConfigError("layer " + std::to_string(l) + " input width does not match previous output");
      }
      if (L.coeffs.rows() != Eigen::Index(L.in_dim) * L.out_dim || L.coeffs.cols() != L.grid.basis_count() ||
          L.base_weight.rows() != L.in_dim || L.base_weight.cols() != L.out_dim ||
          L.spline_scale.rows() != L.in_dim || L.spline_scale.cols() != L.out_dim) {
        throw ShapeError("layer " + std::to_string(l) + " parameter shapes do not match its dimensions");
      }
    }
  }

  std::vector<KanLayer<Scalar>> layers_;
  bool base_enabled_ = true;
  std::uint64_t generation_ = 0;
};

struct InitOptions {
  double input_lo = -1.0;
  double input_hi = 1.0;
  bool base_enabled = true;
};

/// Coefficients ~ N(0, (0.1 / sqrt(in_dim))^2), base weights and spline
/// scales 1. All layer grids start on [input_lo, input_hi].
template <typename Scalar = double>
KanNetwork<Scalar> init_network(const std::vector<int>& widths, int grid_intervals, int order,
                                std::uint64_t seed, const InitOptions& options = {}) {
  if (widths.size() < 2) throw ConfigError("network widths need at least two entries");
  for (int w : widths) {
    if (w < 1) throw ConfigError("network widths must be positive");
  }
  std::mt19937_64 rng(seed);
  std::vector<KanLayer<Scalar>> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    SplineGrid<Scalar> grid(order, grid_intervals, Scalar(options.input_lo), Scalar(options.input_hi));
    KanLayer<Scalar> layer(widths[l], widths[l + 1], grid);
    std::normal_distribution<double> normal(0.0, 0.1 / std::sqrt(double(widths[l])));
    for (Eigen::Index r = 0; r < layer.coeffs.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.coeffs.cols(); ++c) layer.coeffs(r, c) = Scalar(normal(rng));
    layer.base_weight.setOnes();
    layer.spline_scale.setOnes();
    layers.push_back(std::move(layer));
  }
  return KanNetwork<Scalar>(std::move(layers), options.base_enabled);
}

/// Layer inputs retained by forward() for backward().
template <typename Scalar = double>
struct ForwardCache {
  std::vector<Matrix<Scalar>> layer_inputs;
  std::vector<int> widths;
  std::uint64_t generation = 0;
};

template <typename Scalar = double>
struct ForwardResult {
  Matrix<Scalar> outputs;
  ForwardCache<Scalar> cache;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> layer_forward(const KanLayer<Scalar>& L, bool base, const Matrix<Scalar>& x) {
  const Eigen::Index batch = x.rows();
  const int k = L.grid.order();
  Matrix<Scalar> y = Matrix<Scalar>::Zero(batch, L.out_dim);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int i = 0; i < L.in_dim; ++i) {
      const Scalar xi = L.grid.clamp(x(b, i));
      const auto local = local_basis(L.grid, xi);
      const Scalar act = base ? silu(xi) : Scalar(0);
      for (int j = 0; j < L.out_dim; ++j) {
        const auto e = L.edge_index(i, j);
        Scalar spl(0);
        for (int r = 0; r <= k; ++r) spl += L.coeffs(e, local.first + r) * local.values[r];
        y(b, j) += L.base_weight(i, j) * act + L.spline_scale(i, j) * spl;
      }
    }
  }
  return y;
}

template <typename Scalar>
void check_inputs(const KanNetwork<Scalar>& net, const Matrix<Scalar>& inputs) {
  if (inputs.cols() != net.in_dim()) {
    throw ShapeError("network expects " + std::to_string(net.in_dim()) + " input columns, got " +
                     std::to_string(inputs.cols()));
  }
  if (!inputs.allFinite()) throw DataError("network inputs contain non-finite values");
}

}  // namespace detail

/// Raw network scores (no final squashing).
template <typename Scalar>
Matrix<Scalar> predict(const KanNetwork<Scalar>& net, const Matrix<Scalar>& inputs) {
  detail::check_inputs(net, inputs);
  Matrix<Scalar> x = inputs;
  for (const auto& L : net.layers()) x = detail::layer_forward(L, net.base_enabled(), x);
  return x;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const KanNetwork<Scalar>& net, const Matrix<Scalar>& inputs) {
  detail::check_inputs(net, inputs);
  ForwardResult<Scalar> result;
  result.cache.widths = net.widths();
  result.cache.generation = net.generation();
  result.cache.layer_inputs.reserve(net.depth());
  Matrix<Scalar> x = inputs;
  for (const auto& L : net.layers()) {
    result.cache.layer_inputs.push_back(x);
    x = detail::layer_forward(L, net.base_enabled(), x);
  }
  result.outputs = std::move(x);
  return result;
}

/// Exact reverse-mode gradients of sum(output_grad .* outputs). Inputs that
/// were clamped receive zero input gradient.
template <typename Scalar>
GradientSet<Scalar> backward(const KanNetwork<Scalar>& net, const ForwardCache<Scalar>& cache,
                             const Matrix<Scalar>& output_grad) {
  if (cache.generation != net.generation() || cache.widths != net.widths() ||
      cache.layer_inputs.size() != net.depth()) {
    throw UsageError("backward called with a stale or mismatched forward cache");
  }
  const Eigen::Index batch = cache.layer_inputs.front().rows();
  if (output_grad.rows() != batch || output_grad.cols() != net.out_dim()) {
    throw ShapeError("output gradient shape does not match the forward batch");
  }

  GradientSet<Scalar> grads;
  grads.layers.resize(net.depth());
  Matrix<Scalar> upstream = output_grad;
  const bool base = net.base_enabled();

  for (std::size_t l = net.depth(); l-- > 0;) {
    const auto& L = net.layer(l);
    const auto& x = cache.layer_inputs[l];
    const int k = L.grid.order();
    auto& g = grads.layers[l];
    g.coeffs = Matrix<Scalar>::Zero(L.coeffs.rows(), L.coeffs.cols());
    g.base_weight = Matrix<Scalar>::Zero(L.in_dim, L.out_dim);
    g.spline_scale = Matrix<Scalar>::Zero(L.in_dim, L.out_dim);
    Matrix<Scalar> down = Matrix<Scalar>::Zero(batch, L.in_dim);

    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int i = 0; i < L.in_dim; ++i) {
        const Scalar raw = x(b, i);
        const Scalar xi = L.grid.clamp(raw);
        const bool clamped = raw < L.grid.lo() || raw > L.grid.hi();
        const auto local = local_basis(L.grid, xi);
        LocalBasis<Scalar> dlocal;
        if (k >= 1 && !clamped) dlocal = local_basis_derivative(L.grid, xi, 1);
        const Scalar act = base ? silu(xi) : Scalar(0);
        const Scalar dact = (base && !clamped) ? silu_derivative(xi) : Scalar(0);
        Scalar dx(0);
        for (int j = 0; j < L.out_dim; ++j) {
          const Scalar up = upstream(b, j);
          if (up == Scalar(0)) continue;
          const auto e = L.edge_index(i, j);
          Scalar spl(0);
          for (int r = 0; r <= k; ++r) spl += L.coeffs(e, local.first + r) * local.values[r];
          g.base_weight(i, j) += up * act;
          g.spline_scale(i, j) += up * spl;
          const Scalar scaled = up * L.spline_scale(i, j);
          for (int r = 0; r <= k; ++r) g.coeffs(e, local.first + r) += scaled * local.values[r];
          if (!clamped) {
            Scalar dspl(0);
            if (k >= 1) {
              for (int r = 0; r <= k; ++r) dspl += L.coeffs(e, dlocal.first + r) * dlocal.values[r];
            }
            dx += up * (L.base_weight(i, j) * dact + L.spline_scale(i, j) * dspl);
          }
        }
        down(b, i) = dx;
      }
    }
    upstream = std::move(down);
  }
  if (!base) {
    for (auto& g : grads.layers) g.base_weight.setZero();
  }
  grads.input_grad = std::move(upstream);
  return grads;
}

template <typename Scalar = double>
struct RegularizationResult {
  Scalar loss;
  GradientSet<Scalar> grads;
};

/// l1 * sum|c| + (l2 / 2) * sum c^2 over spline coefficients only.
template <typename Scalar>
RegularizationResult<Scalar> regularization(const KanNetwork<Scalar>& net, Scalar l1, Scalar l2) {
  if (l1 < Scalar(0) || l2 < Scalar(0)) throw ConfigError("regularization weights must be non-negative");
  RegularizationResult<Scalar> out{Scalar(0), {}};
  out.grads.layers.resize(net.depth());
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& L = net.layer(l);
    auto& g = out.grads.layers[l];
    out.loss += l1 * L.coeffs.cwiseAbs().sum() + Scalar(0.5) * l2 * L.coeffs.squaredNorm();
    g.coeffs = l1 * L.coeffs.unaryExpr([](Scalar c) {
      return c > Scalar(0) ? Scalar(1) : (c < Scalar(0) ? Scalar(-1) : Scalar(0));
    }) + l2 * L.coeffs;
    g.base_weight = Matrix<Scalar>::Zero(L.in_dim, L.out_dim);
    g.spline_scale = Matrix<Scalar>::Zero(L.in_dim, L.out_dim);
  }
  return out;
}

/// Re-fit the grid domain of every layer after the first to the observed
/// activations: [-r, r] with r the `quantile` absolute activation on `inputs`,
/// widened by `margin`. Coefficients are kept.
template <typename Scalar>
void fit_grid_domains(KanNetwork<Scalar>& net, const Matrix<Scalar>& inputs, double quantile = 0.99,
                      double margin = 0.1) {
  detail::check_inputs(net, inputs);
  Matrix<Scalar> x = detail::layer_forward(net.layer(0), net.base_enabled(), inputs);
  for (std::size_t l = 1; l < net.depth(); ++l) {
    std::vector<Scalar> mags(x.data(), x.data() + x.size());
    for (auto& v : mags) v = std::abs(v);
    Scalar r(0);
    if (!mags.empty()) {
      const auto idx = static_cast<std::size_t>(std::floor(quantile * double(mags.size() - 1)));
      std::nth_element(mags.begin(), mags.begin() + idx, mags.end());
      r = mags[idx];
    }
    r *= Scalar(1.0 + margin);
    if (!(r > Scalar(1e-6))) r = Scalar(1);
    auto& L = net.mutable_layer(l);
    L.grid = SplineGrid<Scalar>(L.grid.order(), L.grid.intervals(), -r, r);
    x = detail::layer_forward(L, net.base_enabled(), x);
  }
}

/// Lipschitz bound of edge (i, j) over the layer domain.
template <typename Scalar>
Scalar edge_slope_bound(const KanLayer<Scalar>& L, bool base, int i, int j) {
  const auto e = L.edge_index(i, j);
  Scalar bound = std::abs(L.spline_scale(i, j)) * spline_slope_bound(L.grid, L.coeffs.row(e).transpose());
  if (base) bound += std::abs(L.base_weight(i, j)) * Scalar(kSiluSlopeBound);
  return bound;
}

/// Move every edge spline onto a finer grid. Returns a bound on the change of
/// any network output: per-edge refinement residuals propagated through the
/// downstream layers' slope bounds.
template <typename Scalar>
Scalar refine_network(KanNetwork<Scalar>& net, int new_intervals) {
  Scalar propagated(0);
  const bool base = net.base_enabled();
  for (std::size_t l = 0; l < net.depth(); ++l) {
    auto& L = net.mutable_layer(l);
    SplineGrid<Scalar> fine_grid = L.grid;
    Matrix<Scalar> fine;
    Vector<Scalar> node_error = Vector<Scalar>::Zero(L.out_dim);
    for (int i = 0; i < L.in_dim; ++i) {
      for (int j = 0; j < L.out_dim; ++j) {
        const auto e = L.edge_index(i, j);
        Vector<Scalar> c = L.coeffs.row(e).transpose();
        auto refined = refine_grid(L.grid, c, new_intervals);
        if (e == 0) {
          fine_grid = refined.grid;
          fine.resize(L.coeffs.rows(), refined.grid.basis_count());
        }
        fine.row(e) = refined.coeffs.transpose();
        node_error[j] += refined.residual * std::abs(L.spline_scale(i, j)) +
                         edge_slope_bound(L, base, i, j) * propagated;
      }
    }
    L.grid = fine_grid;
    L.coeffs = std::move(fine);
    propagated = node_error.maxCoeff();
  }
  return propagated;
}

}  // namespace fairkan
