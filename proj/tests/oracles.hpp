#pragma once

// Reference implementations used only as test oracles. They are written
// straight from the textbook definitions and share no code with the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

// Recursive Cox-de Boor on an explicit knot vector, 0/0 := 0.
inline double bspline(const std::vector<double>& t, int i, int p, double x) {
  if (p == 0) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  double a = 0.0, b = 0.0;
  const double d1 = t[i + p] - t[i];
  const double d2 = t[i + p + 1] - t[i + 1];
  if (d1 != 0.0) a = (x - t[i]) / d1 * bspline(t, i, p - 1, x);
  if (d2 != 0.0) b = (t[i + p + 1] - x) / d2 * bspline(t, i + 1, p - 1, x);
  return a + b;
}

inline std::vector<double> uniform_knots(int k, int G, double lo, double hi) {
  std::vector<double> t;
  const double h = (hi - lo) / G;
  for (int j = -k; j <= G + k; ++j) t.push_back(lo + j * h);
  return t;
}

// Central difference of a scalar function.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rate(const std::vector<int>& pred, const std::vector<int>& z, int group, bool& empty) {
  int n = 0, pos = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (z[i] != group) continue;
    ++n;
    pos += pred[i];
  }
  empty = n == 0;
  return n == 0 ? 0.0 : double(pos) / n;
}

// Pairwise Mann-Whitney: fraction of (positive, negative) pairs ordered
// correctly, ties 1/2.
inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / double(pairs);
}

// W1 in one dimension as the integral of |F_a - F_b| over the real line.
inline double w1_cdf(std::vector<double> a, std::vector<double> b) {
  std::vector<double> pts = a;
  pts.insert(pts.end(), b.begin(), b.end());
  std::sort(pts.begin(), pts.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto cdf = [](const std::vector<double>& s, double x) {
    return double(std::upper_bound(s.begin(), s.end(), x) - s.begin()) / double(s.size());
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    total += std::abs(cdf(a, pts[i]) - cdf(b, pts[i])) * (pts[i + 1] - pts[i]);
  }
  return total;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fairkan_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
