#pragma once

#include <cstdint>
#include <vector>

#include "stochmatch/brownian.hpp"
#include "stochmatch/image.hpp"
#include "stochmatch/string_method.hpp"

namespace stochmatch {

struct ImageMatchConfig {
  double epsilon = 0.1;
  std::size_t n_s = 100;
  double tol = 0.0;  // update-norm stop for zero temperature; 0 disables
  Temperature temperature = Temperature::zero;
  std::uint64_t seed = 0;
  bool pou_normalize = true;
  std::size_t stability_window = 20;
  std::size_t mean_burn_in = 0;  // 0 picks n_s/2; earlier warps are skipped by the running mean
};

struct ImageMatchRun {
  VelocityString final;
  ImageField warped;                    // g_1.I_0 of the final string (dW = 0)
  std::vector<double> ssd;              // endpoint SSD per iterate
  std::vector<double> energy;           // kinetic + mismatch per iterate
  std::vector<double> running_mean_ssd; // SSD of the running-mean warped endpoint
  bool converged = false;
};

namespace detail {

inline BrownianPath image_path(std::size_t n_t, std::size_t channels, std::uint64_t seed,
                               bool zero_noise) {
  const std::size_t steps = n_t - 1;
  const double dt = 1.0 / static_cast<double>(steps);
  if (channels == 0 || zero_noise) {
    BrownianPath p;
    p.n_steps = steps;
    p.channels = channels;
    p.dt = dt;
    p.seed = seed;
    p.increments.assign(steps * channels, 0.0);
    return p;
  }
  return brownian_sample(seed, steps, channels, dt);
}

}  // namespace detail

/**
 * Zero- or finite-temperature string iteration for images, starting from
 * u = 0. Zero temperature keeps one noise realization and stops once the
 * update norm falls below tol; finite temperature draws a fresh realization
 * per iteration (stream derive_seed(seed, k)) and always runs n_s updates.
 * The final string is evaluated with dW = 0.
 */
inline ImageMatchRun run_image_matching(const ImageField& i0, const ImageField& i1, double lambda,
                                        const GaussianKernel& kernel, const NoiseBasis& basis,
                                        const ImageMatchConfig& cfg, std::size_t n_t) {
  if (!(i0.grid == i1.grid))
    throw std::invalid_argument("run_image_matching: images must share one grid");
  const GridShape& g = i0.grid;
  const GridNoise noise = GridNoise::build(basis, g, cfg.pou_normalize);

  ImageMatchRun run;
  VelocityString us = VelocityString::zero(g, n_t);
  ImageField mean_warped(g.nx, g.ny, g.domain);
  std::size_t mean_count = 0;
  const std::size_t burn_in = cfg.mean_burn_in > 0 ? cfg.mean_burn_in : cfg.n_s / 2;

  const BrownianPath fixed_path =
      detail::image_path(n_t, basis.size(), cfg.seed, /*zero_noise=*/false);
  for (std::size_t k = 0; k < cfg.n_s; ++k) {
    const BrownianPath path = cfg.temperature == Temperature::finite
                                  ? detail::image_path(n_t, basis.size(), derive_seed(cfg.seed, k),
                                                       false)
                                  : fixed_path;
    ImageStepResult step = image_string_step(us, i0, i1, lambda, kernel, noise, path, cfg.epsilon);
    run.ssd.push_back(step.ssd);
    run.energy.push_back(step.energy);

    if (k >= burn_in) {
      ++mean_count;
      for (std::size_t idx = 0; idx < mean_warped.data.size(); ++idx)
        mean_warped.data[idx] += (step.warped_endpoint.data[idx] - mean_warped.data[idx]) /
                                 static_cast<double>(mean_count);
    }
    run.running_mean_ssd.push_back(mean_count > 0 ? image_ssd(mean_warped, i1) : step.ssd);

    if (cfg.temperature == Temperature::zero && cfg.tol > 0.0 && step.update_norm < cfg.tol) {
      run.converged = true;
      break;
    }
    us = std::move(step.next);
  }

  // final evaluation of the unperturbed string
  const BrownianPath quiet = detail::image_path(n_t, basis.size(), cfg.seed, /*zero_noise=*/true);
  const ImageStepResult eval =
      image_string_step(us, i0, i1, lambda, kernel, noise, quiet, 0.0);
  run.final = std::move(us);
  run.warped = eval.warped_endpoint;
  return run;
}

/// g_{t_k}.I_0 snapshots of a velocity string with dW = 0 at the given grid indices.
inline std::vector<ImageField> image_string_snapshots(const VelocityString& us,
                                                      const ImageField& i0,
                                                      const std::vector<std::size_t>& t_indices) {
  const GridNoise no_noise;
  const BrownianPath quiet =
      detail::image_path(us.n_t(), 0, 0, true);
  const MapPair maps = integrate_maps(us, no_noise, quiet);
  std::vector<ImageField> out;
  out.reserve(t_indices.size());
  for (std::size_t k : t_indices) out.push_back(warp_image(i0, maps.fwd_inv[k]));
  return out;
}

}  // namespace stochmatch
