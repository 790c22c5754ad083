#pragma once

#include <cmath>
#include <stdexcept>

#include "stochmatch/vec.hpp"

namespace stochmatch {

// Gaussian kernel k_r(x) = exp(-|x|^2 / (2 r^2)); k_r(0) = 1.
// Doubles as the Green's function K of the velocity metric and as a noise
// field profile.
class GaussianKernel {
 public:
  explicit GaussianKernel(double r) : r_(r) {
    if (!(r > 0.0)) throw std::invalid_argument("GaussianKernel: scale must be positive");
  }

  double scale() const { return r_; }

  double eval(Vec2 x) const { return std::exp(-norm2(x) / (2.0 * r_ * r_)); }

  // grad k_r(x) = -(x / r^2) k_r(x)
  Vec2 grad(Vec2 x) const { return (-1.0 / (r_ * r_)) * eval(x) * x; }

 private:
  double r_;
};

// Centered cubic B-spline profile b3(|x|/r), compactly supported on |x| < 2r.
// Uniform cubic B-spline normalization: b3(0) = 2/3, continuous first
// derivative everywhere (values -0.5/r at |x| = r, 0 at 0 and at the support
// edge).
class BSplineKernel {
 public:
  explicit BSplineKernel(double r) : r_(r) {
    if (!(r > 0.0)) throw std::invalid_argument("BSplineKernel: scale must be positive");
  }

  double scale() const { return r_; }

  double eval(Vec2 x) const { return b3(norm(x) / r_); }

  Vec2 grad(Vec2 x) const {
    const double s = norm(x);
    if (s <= 0.0 || s >= 2.0 * r_) return {0.0, 0.0};
    return (db3(s / r_) / (r_ * s)) * x;
  }

 private:
  static double b3(double s) {
    s = std::fabs(s);
    if (s < 1.0) return 2.0 / 3.0 - s * s + 0.5 * s * s * s;
    if (s < 2.0) {
      const double t = 2.0 - s;
      return t * t * t / 6.0;
    }
    return 0.0;
  }

  static double db3(double s) {
    // derivative of b3 for s >= 0
    if (s < 1.0) return -2.0 * s + 1.5 * s * s;
    if (s < 2.0) {
      const double t = 2.0 - s;
      return -0.5 * t * t;
    }
    return 0.0;
  }

  double r_;
};

enum class KernelKind { gaussian, bspline };

template <class K>
double kernel_eval(const K& k, Vec2 x) {
  return k.eval(x);
}

template <class K>
Vec2 kernel_grad(const K& k, Vec2 x) {
  return k.grad(x);
}

}  // namespace stochmatch
