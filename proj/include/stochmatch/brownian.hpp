#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace stochmatch {

/**
 * Deterministic RNG plumbing. All randomness in the library flows from a
 * single 64-bit root seed:
 *
 *   - sub-stream seeds come from derive_seed() (one splitmix64 round over
 *     root + GOLDEN * (stream + 1)),
 *   - uniform bits come from std::mt19937_64 (bit-exact per the standard),
 *   - normal variates come from the classic Box-Muller transform, two
 *     uniforms -> two normals, second value cached.
 *
 * std::normal_distribution is avoided on purpose: its output is
 * implementation-defined and would break run-to-run reproducibility across
 * standard libraries.
 */

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline std::uint64_t splitmix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Seed for sub-stream `stream` of the generator rooted at `root`.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root + kGolden * (stream + 1));
}

/// Standard-normal generator with a fixed, documented algorithm.
class NormalRng {
 public:
  explicit NormalRng(std::uint64_t seed) : eng_(seed) {}

  double operator()() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // uniforms in (0,1): top 53 bits of the 64-bit word
    double u1 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_ = radius * std::sin(angle);
    have_cached_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 eng_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

/**
 * Table of Wiener increments over a uniform t-grid: n_steps rows of J
 * channels, each entry i.i.d. Normal(0, dt). A path is a pure function of
 * (seed, n_steps, J, dt); identical arguments reproduce identical tables
 * bit for bit.
 */
struct BrownianPath {
  std::size_t n_steps = 0;
  std::size_t channels = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> increments;  // row-major (step, channel)

  double at(std::size_t step, std::size_t channel) const {
    return increments[step * channels + channel];
  }

  /// Time horizon covered by the table.
  double horizon() const { return dt * static_cast<double>(n_steps); }

  /**
   * Sum consecutive groups of `group` rows into one coarser table with
   * dt' = group * dt. Refinement studies integrate at several resolutions
   * against the same underlying noise by aggregating one fine table.
   */
  BrownianPath aggregate(std::size_t group) const {
    if (group == 0 || n_steps % group != 0)
      throw std::invalid_argument("BrownianPath::aggregate: group must divide n_steps");
    BrownianPath out;
    out.n_steps = n_steps / group;
    out.channels = channels;
    out.dt = dt * static_cast<double>(group);
    out.seed = seed;
    out.increments.assign(out.n_steps * channels, 0.0);
    for (std::size_t k = 0; k < n_steps; ++k) {
      const std::size_t kc = k / group;
      for (std::size_t l = 0; l < channels; ++l)
        out.increments[kc * channels + l] += increments[k * channels + l];
    }
    return out;
  }
};

inline BrownianPath brownian_sample(std::uint64_t seed, std::size_t n_steps,
                                    std::size_t channels, double dt) {
  if (n_steps < 1) throw std::invalid_argument("brownian_sample: n_steps must be >= 1");
  if (!(dt > 0.0)) throw std::invalid_argument("brownian_sample: dt must be positive");
  BrownianPath path;
  path.n_steps = n_steps;
  path.channels = channels;
  path.dt = dt;
  path.seed = seed;
  path.increments.resize(n_steps * channels);
  NormalRng rng(seed);
  const double sd = std::sqrt(dt);
  for (double& w : path.increments) w = sd * rng();
  return path;
}

}  // namespace stochmatch
