#pragma once

#include <array>
#include <cmath>

namespace stochmatch {

// Plane vector. All shape data in this library is two-dimensional.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2() = default;
  constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

  constexpr Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  constexpr Vec2& operator*=(double s) { x *= s; y *= s; return *this; }

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator-(Vec2 a) { return {-a.x, -a.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator/(Vec2 a, double s) { return {a.x / s, a.y / s}; }
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double norm2(Vec2 a) { return dot(a, a); }
inline double norm(Vec2 a) { return std::sqrt(norm2(a)); }

inline bool is_finite(Vec2 a) { return std::isfinite(a.x) && std::isfinite(a.y); }

// Row-major 2x2 matrix.
struct Mat2 {
  double a = 0.0, b = 0.0;  // row 0
  double c = 0.0, d = 0.0;  // row 1

  constexpr Mat2() = default;
  constexpr Mat2(double a_, double b_, double c_, double d_) : a(a_), b(b_), c(c_), d(d_) {}

  static constexpr Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }

  constexpr Mat2& operator+=(const Mat2& o) { a += o.a; b += o.b; c += o.c; d += o.d; return *this; }
  constexpr Mat2& operator-=(const Mat2& o) { a -= o.a; b -= o.b; c -= o.c; d -= o.d; return *this; }

  friend constexpr Mat2 operator+(const Mat2& m, const Mat2& n) { return {m.a + n.a, m.b + n.b, m.c + n.c, m.d + n.d}; }
  friend constexpr Mat2 operator-(const Mat2& m, const Mat2& n) { return {m.a - n.a, m.b - n.b, m.c - n.c, m.d - n.d}; }
  friend constexpr Mat2 operator*(double s, const Mat2& m) { return {s * m.a, s * m.b, s * m.c, s * m.d}; }
  friend constexpr Mat2 operator*(const Mat2& m, const Mat2& n) {
    return {m.a * n.a + m.b * n.c, m.a * n.b + m.b * n.d,
            m.c * n.a + m.d * n.c, m.c * n.b + m.d * n.d};
  }
  friend constexpr Vec2 operator*(const Mat2& m, Vec2 v) {
    return {m.a * v.x + m.b * v.y, m.c * v.x + m.d * v.y};
  }
};

constexpr double det(const Mat2& m) { return m.a * m.d - m.b * m.c; }
constexpr Mat2 transpose(const Mat2& m) { return {m.a, m.c, m.b, m.d}; }

// outer(u, v) = u v^T
constexpr Mat2 outer(Vec2 u, Vec2 v) { return {u.x * v.x, u.x * v.y, u.y * v.x, u.y * v.y}; }

// Closed-form adjugate inverse. Caller checks det against its own guard.
constexpr Mat2 inverse(const Mat2& m) {
  const double id = 1.0 / det(m);
  return {id * m.d, -id * m.b, -id * m.c, id * m.a};
}

inline Mat2 inverse_transpose(const Mat2& m) { return transpose(inverse(m)); }

inline double max_abs(const Mat2& m) {
  return std::max(std::max(std::fabs(m.a), std::fabs(m.b)),
                  std::max(std::fabs(m.c), std::fabs(m.d)));
}

inline bool is_finite(const Mat2& m) {
  return std::isfinite(m.a) && std::isfinite(m.b) && std::isfinite(m.c) && std::isfinite(m.d);
}

// Axis-aligned rectangle, lo <= hi componentwise.
struct Rect {
  Vec2 lo;
  Vec2 hi;
  constexpr double width() const { return hi.x - lo.x; }
  constexpr double height() const { return hi.y - lo.y; }
};

}  // namespace stochmatch
