#pragma once

// Uniform B-spline grids and bases.
//
// A grid of order k (polynomial degree) with G intervals on [lo, hi] uses the
// extended knot vector t_j = lo + (j - k) h, j = 0 .. G + 2k, h = (hi - lo) / G.
// Basis function B_i (i = 0 .. G + k - 1) is supported on [t_i, t_{i+k+1}).
// Inputs outside [lo, hi] are clamped; the last interval is closed at hi.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fairkan/errors.hpp"

namespace fairkan {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Highest supported spline order.
inline constexpr int kMaxOrder = 7;

/// Nonzero basis values at one point: entries for basis indices
/// `first .. first + values.size() - 1`. Never heap-allocates.
template <typename Scalar>
struct LocalBasis {
  int first = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1, 0, kMaxOrder + 1, 1> values;
};

template <typename Scalar = double>
class SplineGrid {
 public:
  SplineGrid() : SplineGrid(3, 1, Scalar(-1), Scalar(1)) {}

  SplineGrid(int order, int intervals, Scalar lo, Scalar hi)
      : order_(order), intervals_(intervals), lo_(lo), hi_(hi) {
    if (order < 0 || order > kMaxOrder) {
      throw ConfigError("spline order must be in [0, " + std::to_string(kMaxOrder) +
                        "], got " + std::to_string(order));
    }
    if (intervals < 1) {
      throw ConfigError("spline grid needs at least one interval, got " +
                        std::to_string(intervals));
    }
    if (!(lo < hi) || !std::isfinite(double(lo)) || !std::isfinite(double(hi))) {
      throw ConfigError("spline domain must satisfy lo < hi");
    }
    spacing_ = (hi_ - lo_) / Scalar(intervals_);
  }

  int order() const noexcept { return order_; }
  int intervals() const noexcept { return intervals_; }
  Scalar lo() const noexcept { return lo_; }
  Scalar hi() const noexcept { return hi_; }
  Scalar spacing() const noexcept { return spacing_; }
  int basis_count() const noexcept { return intervals_ + order_; }
  int knot_count() const noexcept { return intervals_ + 2 * order_ + 1; }

  Scalar knot(int j) const noexcept {
    return lo_ + Scalar(j - order_) * (hi_ - lo_) / Scalar(intervals_);
  }

  Vector<Scalar> knots() const {
    Vector<Scalar> t(knot_count());
    for (int j = 0; j < knot_count(); ++j) t[j] = knot(j);
    return t;
  }

  Scalar clamp(Scalar x) const noexcept { return std::clamp(x, lo_, hi_); }
  bool contains(Scalar x) const noexcept { return x >= lo_ && x <= hi_; }

  /// Knot interval index s with t_s <= x < t_{s+1}, in [k, k + G - 1].
  int span(Scalar x) const noexcept {
    const Scalar c = clamp(x);
    int s = order_ + static_cast<int>(std::floor((c - lo_) / spacing_));
    s = std::clamp(s, order_, order_ + intervals_ - 1);
    // floor() can land one interval off next to a knot.
    if (s > order_ && c < knot(s)) --s;
    if (s < order_ + intervals_ - 1 && c >= knot(s + 1)) ++s;
    return s;
  }

  bool operator==(const SplineGrid& o) const noexcept {
    return order_ == o.order_ && intervals_ == o.intervals_ && lo_ == o.lo_ && hi_ == o.hi_;
  }

 private:
  int order_;
  int intervals_;
  Scalar lo_;
  Scalar hi_;
  Scalar spacing_;
};

namespace detail {

// Cox-de Boor triangle: degree-p bases nonzero on knot interval `s`,
// i.e. indices s - p .. s, written to out[0 .. p].
template <typename Scalar, typename Out>
void cox_de_boor(const SplineGrid<Scalar>& grid, Scalar x, int s, int p, Out& out) {
  Scalar left[kMaxOrder + 1];
  Scalar right[kMaxOrder + 1];
  out.resize(p + 1);
  out[0] = Scalar(1);
  for (int j = 1; j <= p; ++j) {
    left[j] = x - grid.knot(s + 1 - j);
    right[j] = grid.knot(s + j) - x;
    Scalar saved(0);
    for (int r = 0; r < j; ++r) {
      const Scalar tmp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    out[j] = saved;
  }
}

inline double binomial(int n, int r) {
  double c = 1.0;
  for (int i = 1; i <= r; ++i) c = c * double(n - r + i) / double(i);
  return c;
}

}  // namespace detail

/// Nonzero basis values at (clamped) x: k + 1 entries starting at span - k.
template <typename Scalar>
LocalBasis<Scalar> local_basis(const SplineGrid<Scalar>& grid, Scalar x) {
  const Scalar c = grid.clamp(x);
  const int s = grid.span(c);
  LocalBasis<Scalar> out;
  out.first = s - grid.order();
  detail::cox_de_boor(grid, c, s, grid.order(), out.values);
  return out;
}

/// r-th derivative of the k + 1 bases that are nonzero at x (same index range
/// as local_basis). Uses the uniform-knot recurrence
///   d^r B_{i,k} = h^{-r} * sum_j (-1)^j C(r,j) B_{i+j,k-r}.
template <typename Scalar>
LocalBasis<Scalar> local_basis_derivative(const SplineGrid<Scalar>& grid, Scalar x, int r) {
  const int k = grid.order();
  if (r < 1 || r > k) {
    throw UnsupportedDerivativeError("derivative order " + std::to_string(r) +
                                     " unsupported for spline order " + std::to_string(k));
  }
  const Scalar c = grid.clamp(x);
  const int s = grid.span(c);
  const int p = k - r;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1, 0, kMaxOrder + 1, 1> lower;
  detail::cox_de_boor(grid, c, s, p, lower);

  const Scalar factor = Scalar(1) / std::pow(grid.spacing(), Scalar(r));

  LocalBasis<Scalar> out;
  out.first = s - k;
  out.values.setZero(k + 1);
  for (int a = 0; a <= k; ++a) {
    const int i = out.first + a;
    Scalar acc(0);
    for (int j = 0; j <= r; ++j) {
      const int m = i + j - (s - p);  // position in `lower`
      if (m < 0 || m > p) continue;
      const Scalar sign = (j % 2 == 0) ? Scalar(1) : Scalar(-1);
      acc += sign * Scalar(detail::binomial(r, j)) * lower[m];
    }
    out.values[a] = factor * acc;
  }
  return out;
}

/// All G + k basis values at x (clamped into the domain).
template <typename Scalar>
Vector<Scalar> basis_eval(const SplineGrid<Scalar>& grid, Scalar x) {
  Vector<Scalar> b = Vector<Scalar>::Zero(grid.basis_count());
  const auto local = local_basis(grid, x);
  b.segment(local.first, local.values.size()) = local.values;
  return b;
}

/// All G + k basis derivatives of order `deriv_order` at x.
template <typename Scalar>
Vector<Scalar> basis_derivative(const SplineGrid<Scalar>& grid, Scalar x, int deriv_order) {
  Vector<Scalar> d = Vector<Scalar>::Zero(grid.basis_count());
  const auto local = local_basis_derivative(grid, x, deriv_order);
  d.segment(local.first, local.values.size()) = local.values;
  return d;
}

template <typename Scalar, typename Derived>
void check_coefficients(const SplineGrid<Scalar>& grid, const Eigen::MatrixBase<Derived>& coeffs) {
  if (coeffs.size() != grid.basis_count()) {
    throw ShapeError("spline has " + std::to_string(coeffs.size()) + " coefficients, grid expects " +
                     std::to_string(grid.basis_count()));
  }
}

/// h(x) = sum_i c_i B_i(x).
template <typename Scalar, typename Derived>
Scalar spline_eval(const SplineGrid<Scalar>& grid, const Eigen::MatrixBase<Derived>& coeffs, Scalar x) {
  check_coefficients(grid, coeffs);
  const auto local = local_basis(grid, x);
  return coeffs.derived().segment(local.first, local.values.size()).dot(local.values);
}

template <typename Scalar, typename Derived>
Scalar spline_derivative(const SplineGrid<Scalar>& grid, const Eigen::MatrixBase<Derived>& coeffs,
                         Scalar x, int deriv_order) {
  check_coefficients(grid, coeffs);
  const auto local = local_basis_derivative(grid, x, deriv_order);
  return coeffs.derived().segment(local.first, local.values.size()).dot(local.values);
}

/// Bound on |h'(x)| over the domain: the derivative of a uniform B-spline is a
/// degree k-1 spline with control values (c_i - c_{i-1}) / h, and a spline
/// stays inside the hull of its control values.
template <typename Scalar, typename Derived>
Scalar spline_slope_bound(const SplineGrid<Scalar>& grid, const Eigen::MatrixBase<Derived>& coeffs) {
  check_coefficients(grid, coeffs);
  if (grid.order() == 0) {
    const Scalar spread = coeffs.maxCoeff() - coeffs.minCoeff();
    return spread == Scalar(0) ? Scalar(0) : std::numeric_limits<Scalar>::infinity();
  }
  const auto n = coeffs.size();
  const auto diffs = coeffs.derived().tail(n - 1) - coeffs.derived().head(n - 1);
  return diffs.cwiseAbs().maxCoeff() / grid.spacing();
}

/// Least-squares coefficients for samples (xs, ys) on `grid`.
template <typename Scalar>
Vector<Scalar> fit_least_squares(const SplineGrid<Scalar>& grid, const Vector<Scalar>& xs,
                                 const Vector<Scalar>& ys) {
  if (xs.size() != ys.size()) throw ShapeError("fit_least_squares: xs and ys differ in length");
  const int nb = grid.basis_count();
  Matrix<Scalar> normal = Matrix<Scalar>::Zero(nb, nb);
  Vector<Scalar> rhs = Vector<Scalar>::Zero(nb);
  for (Eigen::Index m = 0; m < xs.size(); ++m) {
    const auto local = local_basis(grid, xs[m]);
    const int w = static_cast<int>(local.values.size());
    normal.block(local.first, local.first, w, w).noalias() +=
        local.values * local.values.transpose();
    rhs.segment(local.first, w) += ys[m] * local.values;
  }
  Eigen::LLT<Matrix<Scalar>> llt(normal);
  if (llt.info() != Eigen::Success) {
    throw RefinementError("spline least-squares normal equations are singular");
  }
  Vector<Scalar> c = llt.solve(rhs);
  if (!c.allFinite()) throw RefinementError("spline least-squares produced non-finite coefficients");
  return c;
}

template <typename Scalar>
struct RefinedSpline {
  SplineGrid<Scalar> grid;
  Vector<Scalar> coeffs;
  /// Max |old - new| over a dense check grid (16 points per fine interval).
  Scalar residual;
};

/// Transfer a spline onto a finer uniform grid over the same domain by a
/// least-squares fit at 4x oversampling.
template <typename Scalar, typename Derived>
RefinedSpline<Scalar> refine_grid(const SplineGrid<Scalar>& grid, const Eigen::MatrixBase<Derived>& coeffs,
                                  int new_intervals) {
  check_coefficients(grid, coeffs);
  if (new_intervals <= grid.intervals()) {
    throw RefinementError("refine_grid needs more intervals than " + std::to_string(grid.intervals()) +
                          ", got " + std::to_string(new_intervals));
  }
  SplineGrid<Scalar> fine(grid.order(), new_intervals, grid.lo(), grid.hi());
  const int samples = 4 * fine.basis_count();
  Vector<Scalar> xs(samples), ys(samples);
  for (int m = 0; m < samples; ++m) {
    xs[m] = grid.lo() + (grid.hi() - grid.lo()) * Scalar(m) / Scalar(samples - 1);
    ys[m] = spline_eval(grid, coeffs, xs[m]);
  }
  Vector<Scalar> fine_coeffs = fit_least_squares(fine, xs, ys);

  const int checks = 16 * new_intervals;
  Scalar residual(0);
  for (int m = 0; m <= checks; ++m) {
    const Scalar x = grid.lo() + (grid.hi() - grid.lo()) * Scalar(m) / Scalar(checks);
    residual = std::max(residual, std::abs(spline_eval(grid, coeffs, x) - spline_eval(fine, fine_coeffs, x)));
  }
  return {fine, std::move(fine_coeffs), residual};
}

}  // namespace fairkan
