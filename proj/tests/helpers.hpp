#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "stochmatch/landmark.hpp"
#include "stochmatch/string_method.hpp"
#include "stochmatch/vec.hpp"

namespace testutil {

using stochmatch::Vec2;

// Deterministic uniform/normal source for test fixtures.
class TestRng {
 public:
  explicit TestRng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) {
    const double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  double normal(double sd = 1.0) {
    double u1 = uniform(1e-16, 1.0);
    double u2 = uniform(0.0, 1.0);
    return sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vec2 vec(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi)}; }

 private:
  std::mt19937_64 eng_;
};

inline Vec2 gradient_fd(const std::function<double(Vec2)>& f, Vec2 x, double h) {
  return {(f({x.x + h, x.y}) - f({x.x - h, x.y})) / (2.0 * h),
          (f({x.x, x.y + h}) - f({x.x, x.y - h})) / (2.0 * h)};
}

inline double rel_err(double got, double want) {
  const double scale = std::max(std::fabs(want), 1e-30);
  return std::fabs(got - want) / scale;
}

inline double rel_err(Vec2 got, Vec2 want) {
  const double scale = std::max(stochmatch::norm(want), 1e-30);
  return stochmatch::norm(got - want) / scale;
}

// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// 10-landmark ellipse fixtures used across the optimizer tests.
inline stochmatch::LandmarkConfig ellipse_config(Vec2 center, double ax, double ay,
                                                 std::size_t n = 10, double phase = 0.0) {
  stochmatch::LandmarkConfig cfg;
  cfg.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double th = phase + 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
    cfg.points.push_back({center.x + ax * std::cos(th), center.y + ay * std::sin(th)});
  }
  return cfg;
}

// The canonical two-ellipse benchmark: 10 landmarks, 4x4 Gaussian noise grid.
// Calibrated step size 0.02 descends monotonically without noise.
inline stochmatch::MatchProblem ellipse_problem(double amplitude = 0.05) {
  stochmatch::MatchProblem prob;
  prob.source = ellipse_config({-0.1, 0.0}, 1.0, 0.5);
  prob.target = ellipse_config({0.4, 0.15}, 0.6, 0.8);
  prob.lambda = 0.5;
  prob.kernel = stochmatch::GaussianKernel(0.5);
  prob.n_t = 20;
  if (amplitude > 0.0)
    prob.basis = stochmatch::make_grid_basis({{-1.2, -0.9}, {1.1, 1.0}}, 4, 0.5,
                                             {amplitude, amplitude},
                                             stochmatch::KernelKind::gaussian);
  return prob;
}

inline constexpr double kEllipseEpsilon = 0.02;

}  // namespace testutil
