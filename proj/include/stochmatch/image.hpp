#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "stochmatch/brownian.hpp"
#include "stochmatch/kernels.hpp"
#include "stochmatch/noise.hpp"
#include "stochmatch/vec.hpp"

namespace stochmatch {

/*
 * Grid conventions: fields are sampled at nodes (ix, iy), ix fastest, with
 * node (0,0) at domain.lo and node (nx-1, ny-1) at domain.hi. Maps and all
 * bilinear lookups work in pixel coordinates so that the identity map and
 * integer translations are exact; velocities and gradients are in domain
 * units.
 */

struct GridShape {
  std::size_t nx = 0, ny = 0;
  Rect domain{{0.0, 0.0}, {1.0, 1.0}};

  double hx() const { return domain.width() / static_cast<double>(nx - 1); }
  double hy() const { return domain.height() / static_cast<double>(ny - 1); }
  Vec2 node(std::size_t ix, std::size_t iy) const {
    return {domain.lo.x + static_cast<double>(ix) * hx(),
            domain.lo.y + static_cast<double>(iy) * hy()};
  }
  bool operator==(const GridShape& o) const {
    return nx == o.nx && ny == o.ny && domain.lo.x == o.domain.lo.x &&
           domain.lo.y == o.domain.lo.y && domain.hi.x == o.domain.hi.x &&
           domain.hi.y == o.domain.hi.y;
  }
};

namespace detail {

struct BilinearWeights {
  std::size_t ix0, iy0, ix1, iy1;
  double fx, fy;
};

inline BilinearWeights clamp_weights(const GridShape& g, double px, double py) {
  const double cx = std::min(std::max(px, 0.0), static_cast<double>(g.nx - 1));
  const double cy = std::min(std::max(py, 0.0), static_cast<double>(g.ny - 1));
  double fx0 = std::floor(cx);
  double fy0 = std::floor(cy);
  if (fx0 > static_cast<double>(g.nx - 2)) fx0 = static_cast<double>(g.nx - 2);
  if (fy0 > static_cast<double>(g.ny - 2)) fy0 = static_cast<double>(g.ny - 2);
  BilinearWeights w;
  w.ix0 = static_cast<std::size_t>(fx0);
  w.iy0 = static_cast<std::size_t>(fy0);
  w.ix1 = w.ix0 + 1;
  w.iy1 = w.iy0 + 1;
  w.fx = cx - fx0;
  w.fy = cy - fy0;
  return w;
}

}  // namespace detail

// Scalar image sampled on a regular grid.
struct ImageField {
  GridShape grid;
  std::vector<double> data;  // iy * nx + ix

  ImageField() = default;
  ImageField(std::size_t nx, std::size_t ny, Rect domain = {{0, 0}, {1, 1}}, double fill = 0.0)
      : grid{nx, ny, domain}, data(nx * ny, fill) {
    if (nx < 2 || ny < 2) throw std::invalid_argument("ImageField: grid must be at least 2x2");
  }

  double& at(std::size_t ix, std::size_t iy) { return data[iy * grid.nx + ix]; }
  double at(std::size_t ix, std::size_t iy) const { return data[iy * grid.nx + ix]; }

  // bilinear sample at pixel coordinates, clamped extension
  double sample(double px, double py) const {
    const auto w = detail::clamp_weights(grid, px, py);
    const double v00 = at(w.ix0, w.iy0), v10 = at(w.ix1, w.iy0);
    const double v01 = at(w.ix0, w.iy1), v11 = at(w.ix1, w.iy1);
    return (1 - w.fy) * ((1 - w.fx) * v00 + w.fx * v10) +
           w.fy * ((1 - w.fx) * v01 + w.fx * v11);
  }
};

// Vector-valued field on the same grid layout.
struct VectorField {
  GridShape grid;
  std::vector<Vec2> data;

  VectorField() = default;
  VectorField(std::size_t nx, std::size_t ny, Rect domain = {{0, 0}, {1, 1}})
      : grid{nx, ny, domain}, data(nx * ny) {
    if (nx < 2 || ny < 2) throw std::invalid_argument("VectorField: grid must be at least 2x2");
  }
  explicit VectorField(const GridShape& g) : grid(g), data(g.nx * g.ny) {}

  Vec2& at(std::size_t ix, std::size_t iy) { return data[iy * grid.nx + ix]; }
  Vec2 at(std::size_t ix, std::size_t iy) const { return data[iy * grid.nx + ix]; }

  Vec2 sample(double px, double py) const {
    const auto w = detail::clamp_weights(grid, px, py);
    const Vec2 v00 = at(w.ix0, w.iy0), v10 = at(w.ix1, w.iy0);
    const Vec2 v01 = at(w.ix0, w.iy1), v11 = at(w.ix1, w.iy1);
    return (1 - w.fy) * ((1 - w.fx) * v00 + w.fx * v10) +
           w.fy * ((1 - w.fx) * v01 + w.fx * v11);
  }
};

// Sampled map: pixel-coordinate target positions per node.
struct MapField {
  GridShape grid;
  std::vector<Vec2> data;  // positions in pixel coordinates

  MapField() = default;
  explicit MapField(const GridShape& g) : grid(g), data(g.nx * g.ny) {}

  static MapField identity(const GridShape& g) {
    MapField m(g);
    for (std::size_t iy = 0; iy < g.ny; ++iy)
      for (std::size_t ix = 0; ix < g.nx; ++ix)
        m.data[iy * g.nx + ix] = {static_cast<double>(ix), static_cast<double>(iy)};
    return m;
  }

  Vec2& at(std::size_t ix, std::size_t iy) { return data[iy * grid.nx + ix]; }
  Vec2 at(std::size_t ix, std::size_t iy) const { return data[iy * grid.nx + ix]; }

  Vec2 sample(double px, double py) const {
    const auto w = detail::clamp_weights(grid, px, py);
    const Vec2 v00 = at(w.ix0, w.iy0), v10 = at(w.ix1, w.iy0);
    const Vec2 v01 = at(w.ix0, w.iy1), v11 = at(w.ix1, w.iy1);
    return (1 - w.fy) * ((1 - w.fx) * v00 + w.fx * v10) +
           w.fy * ((1 - w.fx) * v01 + w.fx * v11);
  }
};

/// Central differences interior, one-sided at the boundary; domain units.
inline VectorField image_gradient(const ImageField& img) {
  const GridShape& g = img.grid;
  VectorField out(g);
  const double ihx = 1.0 / g.hx(), ihy = 1.0 / g.hy();
  for (std::size_t iy = 0; iy < g.ny; ++iy)
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      double gx, gy;
      if (ix == 0) gx = (img.at(1, iy) - img.at(0, iy)) * ihx;
      else if (ix == g.nx - 1) gx = (img.at(g.nx - 1, iy) - img.at(g.nx - 2, iy)) * ihx;
      else gx = 0.5 * (img.at(ix + 1, iy) - img.at(ix - 1, iy)) * ihx;
      if (iy == 0) gy = (img.at(ix, 1) - img.at(ix, 0)) * ihy;
      else if (iy == g.ny - 1) gy = (img.at(ix, g.ny - 1) - img.at(ix, g.ny - 2)) * ihy;
      else gy = 0.5 * (img.at(ix, iy + 1) - img.at(ix, iy - 1)) * ihy;
      out.at(ix, iy) = {gx, gy};
    }
  return out;
}

namespace detail {

// Normalized 1-D Gaussian stencil truncated at 4r, in pixel steps of size h.
inline std::vector<double> gaussian_stencil(double r, double h) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * r / h)));
  std::vector<double> w(2 * radius + 1);
  double total = 0.0;
  for (int j = -radius; j <= radius; ++j) {
    const double x = static_cast<double>(j) * h;
    w[j + radius] = std::exp(-x * x / (2.0 * r * r));
    total += w[j + radius];
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace detail

/**
 * Componentwise separable Gaussian convolution, truncated at 4r with unit
 * stencil mass; near the boundary the in-range partial mass renormalizes the
 * stencil, so constants pass through unchanged.
 */
inline VectorField apply_green_kernel(const VectorField& v, const GaussianKernel& kernel) {
  const GridShape& g = v.grid;
  const std::vector<double> wx = detail::gaussian_stencil(kernel.scale(), g.hx());
  const std::vector<double> wy = detail::gaussian_stencil(kernel.scale(), g.hy());
  const int rx = (static_cast<int>(wx.size()) - 1) / 2;
  const int ry = (static_cast<int>(wy.size()) - 1) / 2;

  VectorField tmp(g), out(g);
  for (std::size_t iy = 0; iy < g.ny; ++iy)
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      Vec2 acc;
      double mass = 0.0;
      for (int j = -rx; j <= rx; ++j) {
        const long x = static_cast<long>(ix) + j;
        if (x < 0 || x >= static_cast<long>(g.nx)) continue;
        const double w = wx[j + rx];
        acc += w * v.at(static_cast<std::size_t>(x), iy);
        mass += w;
      }
      tmp.at(ix, iy) = acc / mass;
    }
  for (std::size_t iy = 0; iy < g.ny; ++iy)
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      Vec2 acc;
      double mass = 0.0;
      for (int j = -ry; j <= ry; ++j) {
        const long y = static_cast<long>(iy) + j;
        if (y < 0 || y >= static_cast<long>(g.ny)) continue;
        const double w = wy[j + ry];
        acc += w * tmp.at(ix, static_cast<std::size_t>(y));
        mass += w;
      }
      out.at(ix, iy) = acc / mass;
    }
  return out;
}

/// I composed with the map: out(x) = I(map(x)), bilinear, clamped.
inline ImageField warp_image(const ImageField& img, const MapField& map) {
  ImageField out(map.grid.nx, map.grid.ny, map.grid.domain);
  for (std::size_t iy = 0; iy < map.grid.ny; ++iy)
    for (std::size_t ix = 0; ix < map.grid.nx; ++ix) {
      const Vec2 p = map.at(ix, iy);
      out.at(ix, iy) = img.sample(p.x, p.y);
    }
  return out;
}

/// |det D(map)| by central differences on the map components.
inline ImageField map_jacobian_det(const MapField& map) {
  const GridShape& g = map.grid;
  ImageField out(g.nx, g.ny, g.domain);
  for (std::size_t iy = 0; iy < g.ny; ++iy)
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      Vec2 dx, dy;
      if (ix == 0) dx = map.at(1, iy) - map.at(0, iy);
      else if (ix == g.nx - 1) dx = map.at(g.nx - 1, iy) - map.at(g.nx - 2, iy);
      else dx = 0.5 * (map.at(ix + 1, iy) - map.at(ix - 1, iy));
      if (iy == 0) dy = map.at(ix, 1) - map.at(ix, 0);
      else if (iy == g.ny - 1) dy = map.at(ix, g.ny - 1) - map.at(ix, g.ny - 2);
      else dy = 0.5 * (map.at(ix, iy + 1) - map.at(ix, iy - 1));
      out.at(ix, iy) = std::fabs(dx.x * dy.y - dy.x * dx.y);
    }
  return out;
}

/**
 * Noise fields sampled at the grid nodes. For image flows the B-spline basis
 * amplitudes can be normalized by the partition-of-unity sum of the profiles,
 * which makes the overall noise amplitude uniform over the domain.
 */
struct GridNoise {
  std::vector<VectorField> fields;

  static GridNoise build(const NoiseBasis& basis, const GridShape& g, bool pou_normalize) {
    GridNoise noise;
    noise.fields.reserve(basis.size());
    for (const NoiseField& f : basis.entries) noise.fields.emplace_back(g);
    for (std::size_t iy = 0; iy < g.ny; ++iy)
      for (std::size_t ix = 0; ix < g.nx; ++ix) {
        const Vec2 x = g.node(ix, iy);
        double pou = 1.0;
        if (pou_normalize) {
          double s = 0.0;
          for (const NoiseField& f : basis.entries) s += f.profile(x);
          pou = s > 1e-12 ? s : 1.0;
        }
        for (std::size_t l = 0; l < basis.size(); ++l)
          noise.fields[l].at(ix, iy) = basis.entries[l].eval(x) / pou;
      }
    return noise;
  }

  /// sum_l sigma_l dW_l as one grid field
  VectorField combine(const double* dw, const GridShape& g) const {
    VectorField out(g);
    for (std::size_t l = 0; l < fields.size(); ++l) {
      const double w = dw[l];
      if (w == 0.0) continue;
      for (std::size_t idx = 0; idx < out.data.size(); ++idx)
        out.data[idx] += w * fields[l].data[idx];
    }
    return out;
  }
};

// Discretized string of velocity fields u(t_k) on the uniform t-grid,
// together with the pre-smoothing momentum fields m(t_k); u = K m holds by
// construction, which keeps the kinetic energy <u, Lu> computable without
// inverting K.
struct VelocityString {
  std::vector<VectorField> velocity;
  std::vector<VectorField> momentum;

  static VelocityString zero(const GridShape& g, std::size_t n_t) {
    if (n_t < 2) throw std::invalid_argument("VelocityString: n_t must be >= 2");
    VelocityString s;
    s.velocity.assign(n_t, VectorField(g));
    s.momentum.assign(n_t, VectorField(g));
    return s;
  }

  std::size_t n_t() const { return velocity.size(); }
};

struct MapPair {
  std::vector<MapField> fwd_inv;  // g_{t_k,0}^{-1}
  std::vector<MapField> bwd;      // g_{t_k,1}^{-1}
};

/**
 * Semi-Lagrangian composition of the perturbed flow maps: each step composes
 * the stored map with the incremental inverse displacement of
 * du = u dt + sum_l sigma_l dW^l, with a Heun predictor-corrector on the map
 * increment and bilinear resampling. fwd_inv accumulates from t = 0, bwd from
 * t = 1 backward.
 */
inline MapPair integrate_maps(const VelocityString& us, const GridNoise& noise,
                              const BrownianPath& path) {
  const std::size_t n_t = us.n_t();
  const std::size_t steps = n_t - 1;
  const GridShape& g = us.velocity.front().grid;
  const double dt = 1.0 / static_cast<double>(steps);
  const std::size_t j = noise.fields.size();
  if (j > 0) {
    if (path.channels != j) throw std::invalid_argument("integrate_maps: channel mismatch");
    if (path.n_steps != steps) throw std::invalid_argument("integrate_maps: step mismatch");
  }
  const double ihx = 1.0 / g.hx(), ihy = 1.0 / g.hy();

  MapPair maps;
  maps.fwd_inv.reserve(n_t);
  maps.bwd.assign(n_t, MapField{});
  maps.fwd_inv.push_back(MapField::identity(g));

  std::vector<VectorField> xi(steps);
  for (std::size_t k = 0; k < steps; ++k)
    if (j > 0) xi[k] = noise.combine(&path.increments[k * j], g);

  // displacement of the perturbed field over step k, in pixel units, at pixel pos
  auto increment = [&](std::size_t k, double px, double py) -> Vec2 {
    Vec2 d = dt * us.velocity[k].sample(px, py);
    if (j > 0) d += xi[k].sample(px, py);
    return {d.x * ihx, d.y * ihy};
  };

  for (std::size_t k = 0; k < steps; ++k) {
    const MapField& prev = maps.fwd_inv.back();
    MapField next(g);
    for (std::size_t iy = 0; iy < g.ny; ++iy)
      for (std::size_t ix = 0; ix < g.nx; ++ix) {
        const Vec2 x{static_cast<double>(ix), static_cast<double>(iy)};
        Vec2 d0 = dt * us.velocity[k].at(ix, iy);
        if (j > 0) d0 += xi[k].at(ix, iy);
        d0 = {d0.x * ihx, d0.y * ihy};
        const Vec2 xs = x - d0;
        Vec2 d1 = dt * us.velocity[k + 1].sample(xs.x, xs.y);
        if (j > 0) d1 += xi[k].sample(xs.x, xs.y);
        d1 = {d1.x * ihx, d1.y * ihy};
        const Vec2 back = x - 0.5 * (d0 + d1);
        next.at(ix, iy) = prev.sample(back.x, back.y);
        if (!is_finite(next.at(ix, iy)))
          throw std::runtime_error("integrate_maps: non-finite map (step size too large?)");
      }
    maps.fwd_inv.push_back(std::move(next));
  }

  maps.bwd[steps] = MapField::identity(g);
  for (std::size_t k = steps; k-- > 0;) {
    const MapField& prev = maps.bwd[k + 1];
    MapField next(g);
    for (std::size_t iy = 0; iy < g.ny; ++iy)
      for (std::size_t ix = 0; ix < g.nx; ++ix) {
        const Vec2 x{static_cast<double>(ix), static_cast<double>(iy)};
        Vec2 d0 = dt * us.velocity[k].at(ix, iy);
        if (j > 0) d0 += xi[k].at(ix, iy);
        d0 = {d0.x * ihx, d0.y * ihy};
        const Vec2 xs = x + d0;
        Vec2 d1 = dt * us.velocity[k + 1].sample(xs.x, xs.y);
        if (j > 0) d1 += xi[k].sample(xs.x, xs.y);
        d1 = {d1.x * ihx, d1.y * ihy};
        const Vec2 fwd = x + 0.5 * (d0 + d1);
        next.at(ix, iy) = prev.sample(fwd.x, fwd.y);
        if (!is_finite(next.at(ix, iy)))
          throw std::runtime_error("integrate_maps: non-finite map (step size too large?)");
      }
    maps.bwd[k] = std::move(next);
  }
  return maps;
}

inline double image_ssd(const ImageField& a, const ImageField& b) {
  double acc = 0.0;
  for (std::size_t idx = 0; idx < a.data.size(); ++idx) {
    const double d = a.data[idx] - b.data[idx];
    acc += d * d;
  }
  return acc;
}

struct ImageStepResult {
  VelocityString next;
  double energy = 0.0;         // kinetic + mismatch of the *input* string
  double ssd = 0.0;            // endpoint SSD of the input string
  double update_norm = 0.0;    // max |(-2u + K force)| over nodes and times
  ImageField warped_endpoint;  // g_1.I_0 of the input string
};

/**
 * One s-update of the image string: with maps from the current perturbed
 * reconstruction, J_t^0 = I_0 o g_{t,0}^{-1}, J_t^1 = I_1 o g_{t,1}^{-1}, and
 *
 *   u(t) <- u(t) + eps (-2 u(t) + K[(2/lambda^2) |det Dg_{t,1}^{-1}| (J_t^0 - J_t^1) grad J_t^0])
 */
inline ImageStepResult image_string_step(const VelocityString& us, const ImageField& i0,
                                         const ImageField& i1, double lambda,
                                         const GaussianKernel& kernel, const GridNoise& noise,
                                         const BrownianPath& path, double epsilon) {
  if (!(lambda > 0.0)) throw std::invalid_argument("image_string_step: lambda must be positive");
  const std::size_t n_t = us.n_t();
  const GridShape& g = us.velocity.front().grid;
  const double dt = 1.0 / static_cast<double>(n_t - 1);
  const double cell = g.hx() * g.hy();
  const MapPair maps = integrate_maps(us, noise, path);

  ImageStepResult result;
  result.next.velocity.resize(n_t);
  result.next.momentum.resize(n_t);

  double kinetic = 0.0;
  for (std::size_t k = 0; k < n_t; ++k) {
    const ImageField j0 = warp_image(i0, maps.fwd_inv[k]);
    const ImageField j1 = warp_image(i1, maps.bwd[k]);
    const ImageField det = map_jacobian_det(maps.bwd[k]);
    const VectorField grad0 = image_gradient(j0);

    VectorField force(g);
    const double scale = 2.0 / (lambda * lambda);
    for (std::size_t idx = 0; idx < force.data.size(); ++idx)
      force.data[idx] = scale * det.data[idx] * (j0.data[idx] - j1.data[idx]) * grad0.data[idx];
    const VectorField smoothed = apply_green_kernel(force, kernel);

    const double w = (k == 0 || k + 1 == n_t) ? 0.5 * dt : dt;
    double pair = 0.0;
    for (std::size_t idx = 0; idx < force.data.size(); ++idx)
      pair += dot(us.velocity[k].data[idx], us.momentum[k].data[idx]);
    kinetic += w * pair * cell;

    VectorField u_next(g), m_next(g);
    for (std::size_t idx = 0; idx < force.data.size(); ++idx) {
      const Vec2 du = -2.0 * us.velocity[k].data[idx] + smoothed.data[idx];
      result.update_norm = std::max(result.update_norm,
                                    std::max(std::fabs(du.x), std::fabs(du.y)));
      u_next.data[idx] = us.velocity[k].data[idx] + epsilon * du;
      m_next.data[idx] =
          us.momentum[k].data[idx] + epsilon * (-2.0 * us.momentum[k].data[idx] + force.data[idx]);
      if (!is_finite(u_next.data[idx]))
        throw std::runtime_error("image_string_step: non-finite velocity");
    }
    result.next.velocity[k] = std::move(u_next);
    result.next.momentum[k] = std::move(m_next);

    if (k + 1 == n_t) {
      result.warped_endpoint = j0;
      result.ssd = image_ssd(j0, i1);
    }
  }
  result.energy = kinetic + result.ssd * cell / (2.0 * lambda * lambda);
  return result;
}

/**
 * Anti-aliased filled polygon rasterizer for synthetic test images
 * (supersampled coverage per pixel, intensities in [0,1]).
 */
inline ImageField make_polygon_image(std::size_t nx, std::size_t ny,
                                     const std::vector<Vec2>& vertices_px, int supersample = 4) {
  ImageField img(nx, ny);
  auto inside = [&](double px, double py) {
    bool in = false;
    const std::size_t n = vertices_px.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Vec2 a = vertices_px[i], b = vertices_px[j];
      if ((a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x)
        in = !in;
    }
    return in;
  };
  const double step = 1.0 / supersample;
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      int hits = 0;
      for (int sy = 0; sy < supersample; ++sy)
        for (int sx = 0; sx < supersample; ++sx)
          if (inside(ix + (sx + 0.5) * step - 0.5, iy + (sy + 0.5) * step - 0.5)) ++hits;
      img.at(ix, iy) = static_cast<double>(hits) / (supersample * supersample);
    }
  return img;
}

/// Small Gaussian blur for scalar images (test fixtures), same stencil rules.
inline ImageField smooth_image(const ImageField& img, double r) {
  VectorField tmp(img.grid);
  for (std::size_t idx = 0; idx < img.data.size(); ++idx) tmp.data[idx] = {img.data[idx], 0.0};
  const VectorField sm = apply_green_kernel(tmp, GaussianKernel(r));
  ImageField out(img.grid.nx, img.grid.ny, img.grid.domain);
  for (std::size_t idx = 0; idx < out.data.size(); ++idx) out.data[idx] = sm.data[idx].x;
  return out;
}

}  // namespace stochmatch
