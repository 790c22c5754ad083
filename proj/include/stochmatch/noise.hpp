#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stochmatch/kernels.hpp"
#include "stochmatch/vec.hpp"

namespace stochmatch {

// One spatial noise field sigma(x) = amplitude * k_scale(|x - center|),
// componentwise in the amplitude vector.
struct NoiseField {
  Vec2 center;
  Vec2 amplitude;
  double scale = 1.0;
  KernelKind kind = KernelKind::gaussian;

  double profile(Vec2 x) const {
    const Vec2 d = x - center;
    if (kind == KernelKind::gaussian) return GaussianKernel(scale).eval(d);
    return BSplineKernel(scale).eval(d);
  }

  Vec2 profile_grad(Vec2 x) const {
    const Vec2 d = x - center;
    if (kind == KernelKind::gaussian) return GaussianKernel(scale).grad(d);
    return BSplineKernel(scale).grad(d);
  }

  Vec2 eval(Vec2 x) const { return profile(x) * amplitude; }

  // D sigma(x) = amplitude (grad k)^T
  Mat2 jacobian(Vec2 x) const { return outer(amplitude, profile_grad(x)); }
};

// Spatial basis sigma_1..sigma_J for the Stratonovich perturbation. Immutable
// value; an empty basis means a deterministic flow.
struct NoiseBasis {
  std::vector<NoiseField> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  void validate() const {
    for (const NoiseField& f : entries)
      if (!(f.scale > 0.0)) throw std::invalid_argument("NoiseBasis: scales must be positive");
  }
};

inline std::vector<Vec2> noise_eval(const NoiseBasis& basis, Vec2 x) {
  std::vector<Vec2> out;
  out.reserve(basis.size());
  for (const NoiseField& f : basis.entries) out.push_back(f.eval(x));
  return out;
}

inline std::vector<Mat2> noise_jacobian(const NoiseBasis& basis, Vec2 x) {
  std::vector<Mat2> out;
  out.reserve(basis.size());
  for (const NoiseField& f : basis.entries) out.push_back(f.jacobian(x));
  return out;
}

// sum_l sigma_l(x) w_l for a weight row (typically Wiener increments)
inline Vec2 noise_combination(const NoiseBasis& basis, Vec2 x, const double* w) {
  Vec2 acc;
  for (std::size_t l = 0; l < basis.entries.size(); ++l)
    acc += w[l] * basis.entries[l].eval(x);
  return acc;
}

inline Mat2 noise_jacobian_combination(const NoiseBasis& basis, Vec2 x, const double* w) {
  Mat2 acc;
  for (std::size_t l = 0; l < basis.entries.size(); ++l)
    acc += w[l] * basis.entries[l].jacobian(x);
  return acc;
}

/**
 * n_per_axis^2 fields with a shared scale and amplitude, centers on the
 * cell-centered uniform grid over bbox (a single field sits at the bbox
 * midpoint).
 */
inline NoiseBasis make_grid_basis(const Rect& bbox, int n_per_axis, double scale,
                                  Vec2 amplitude, KernelKind kind) {
  if (n_per_axis < 1) throw std::invalid_argument("make_grid_basis: n_per_axis must be >= 1");
  if (!(scale > 0.0)) throw std::invalid_argument("make_grid_basis: scale must be positive");
  if (!(bbox.width() > 0.0) || !(bbox.height() > 0.0))
    throw std::invalid_argument("make_grid_basis: degenerate bbox");
  NoiseBasis basis;
  basis.entries.reserve(static_cast<std::size_t>(n_per_axis) * n_per_axis);
  const double hx = bbox.width() / n_per_axis;
  const double hy = bbox.height() / n_per_axis;
  for (int j = 0; j < n_per_axis; ++j)
    for (int i = 0; i < n_per_axis; ++i) {
      NoiseField f;
      f.center = {bbox.lo.x + (i + 0.5) * hx, bbox.lo.y + (j + 0.5) * hy};
      f.amplitude = amplitude;
      f.scale = scale;
      f.kind = kind;
      basis.entries.push_back(f);
    }
  return basis;
}

inline nlohmann::json to_json(const NoiseBasis& basis) {
  nlohmann::json entries = nlohmann::json::array();
  for (const NoiseField& f : basis.entries) {
    entries.push_back({{"center", {f.center.x, f.center.y}},
                       {"amplitude", {f.amplitude.x, f.amplitude.y}},
                       {"scale", f.scale},
                       {"kind", f.kind == KernelKind::gaussian ? "gaussian" : "bspline"}});
  }
  return nlohmann::json{{"entries", entries}};
}

inline NoiseBasis noise_basis_from_json(const nlohmann::json& j) {
  NoiseBasis basis;
  for (const auto& e : j.at("entries")) {
    NoiseField f;
    f.center = {e.at("center").at(0).get<double>(), e.at("center").at(1).get<double>()};
    f.amplitude = {e.at("amplitude").at(0).get<double>(), e.at("amplitude").at(1).get<double>()};
    f.scale = e.at("scale").get<double>();
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "gaussian") f.kind = KernelKind::gaussian;
    else if (kind == "bspline") f.kind = KernelKind::bspline;
    else throw std::invalid_argument("NoiseBasis: unknown kernel kind '" + kind + "'");
    basis.entries.push_back(f);
  }
  basis.validate();
  return basis;
}

}  // namespace stochmatch
