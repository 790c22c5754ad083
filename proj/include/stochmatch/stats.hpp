#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochmatch/brownian.hpp"
#include "stochmatch/landmark.hpp"
#include "stochmatch/string_method.hpp"

namespace stochmatch {

// i.i.d. shape observations with a common landmark count.
struct ObservationSet {
  std::vector<LandmarkConfig> configs;

  std::size_t size() const { return configs.size(); }

  void validate() const {
    if (configs.empty()) throw std::invalid_argument("ObservationSet: empty");
    for (const LandmarkConfig& c : configs)
      if (c.size() != configs.front().size())
        throw std::invalid_argument("ObservationSet: inconsistent landmark counts");
  }
};

struct ConfigStatistics {
  std::vector<Vec2> mean;
  std::vector<Mat2> covariance;  // unbiased, per landmark
};

inline ConfigStatistics observation_statistics(const ObservationSet& obs) {
  obs.validate();
  if (obs.size() < 2) throw std::invalid_argument("observation_statistics: need >= 2 samples");
  const std::size_t n = obs.configs.front().size();
  ConfigStatistics st;
  st.mean.assign(n, Vec2{});
  st.covariance.assign(n, Mat2{});
  for (const LandmarkConfig& c : obs.configs)
    for (std::size_t i = 0; i < n; ++i) st.mean[i] += c[i];
  const double inv_m = 1.0 / static_cast<double>(obs.size());
  for (Vec2& v : st.mean) v *= inv_m;
  const double inv_m1 = 1.0 / static_cast<double>(obs.size() - 1);
  for (const LandmarkConfig& c : obs.configs)
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 d = c[i] - st.mean[i];
      st.covariance[i] += inv_m1 * outer(d, d);
    }
  return st;
}

/**
 * Endpoint configurations of n_samples independent runs of the stochastic
 * Hamiltonian landmark flow from (q0, p0) over unit time on an n_t grid.
 * Sample s uses the Brownian stream derive_seed(seed, s).
 */
template <class K>
ObservationSet sample_endpoints(const LandmarkConfig& q0, std::span<const Vec2> p0,
                                const NoiseBasis& basis, std::size_t n_samples,
                                std::uint64_t seed, const K& kernel, std::size_t n_t) {
  if (n_samples < 1) throw std::invalid_argument("sample_endpoints: n_samples must be >= 1");
  if (n_t < 2) throw std::invalid_argument("sample_endpoints: n_t must be >= 2");
  const std::size_t steps = n_t - 1;
  const double dt = 1.0 / static_cast<double>(steps);
  ObservationSet obs;
  obs.configs.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    BrownianPath path;
    if (basis.empty()) {
      path.n_steps = steps;
      path.channels = 0;
      path.dt = dt;
    } else {
      path = brownian_sample(derive_seed(seed, s), steps, basis.size(), dt);
    }
    auto [q, p] = hamiltonian_flow(q0, p0, basis, path, kernel);
    LandmarkConfig endpoint;
    const auto q1 = q.row(q.n_t - 1);
    endpoint.points.assign(q1.begin(), q1.end());
    obs.configs.push_back(std::move(endpoint));
  }
  return obs;
}

// Shared problem geometry for the statistical procedures.
struct StatModel {
  double lambda = 1.0;
  GaussianKernel kernel{1.0};
  NoiseBasis basis;
  std::size_t n_t = 20;
};

struct MeanStringConfig {
  StatModel model;
  OptimizerConfig inner;
  std::size_t draws_per_observation = 1;
};

/**
 * Average of converged strings from `source` to each observation: the zero
 * temperature method is iterated to convergence per observation and per noise
 * draw (stream derive_seed(inner.seed, i * draws + d)); the finite temperature
 * variant contributes its running mean string instead. All strings are then
 * averaged pointwise.
 */
inline Trajectory mean_string(const LandmarkConfig& source, const ObservationSet& obs,
                              const MeanStringConfig& cfg) {
  obs.validate();
  if (obs.configs.front().size() != source.size())
    throw std::invalid_argument("mean_string: observation size mismatch");
  std::vector<Trajectory> strings;
  strings.reserve(obs.size() * cfg.draws_per_observation);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (std::size_t d = 0; d < cfg.draws_per_observation; ++d) {
      MatchProblem problem{source, obs.configs[i], cfg.model.lambda,
                           cfg.model.kernel, cfg.model.basis, cfg.model.n_t};
      OptimizerConfig inner = cfg.inner;
      inner.seed = derive_seed(cfg.inner.seed, i * cfg.draws_per_observation + d);
      if (inner.temperature == Temperature::finite) {
        StringRun run = run_finite_temperature(problem, inner);
        strings.push_back(run.mean_string);
      } else {
        StringRun run = run_zero_temperature(problem, inner);
        strings.push_back(run.final.q);
      }
    }
  }
  return ensemble_average(strings);
}

struct FrechetConfig {
  StatModel model;
  OptimizerConfig inner;       // per-observation matching
  double outer_epsilon = 0.5;
  std::size_t max_outer = 50;
  double outer_tol = 1e-5;     // max-norm of the applied template update
  bool warm_start = true;      // reuse each observation's momentum across outer steps
};

struct FrechetResult {
  LandmarkConfig mean;
  std::vector<LandmarkConfig> iterate_history;  // template after each outer step
  std::vector<double> energies;                 // summed matched energies per outer step
  bool converged = false;
};

/**
 * Alternating scheme for the inexact-matching mean: match the current template
 * to every observation, then move the template down the averaged gradient of
 * the matched energies with respect to the template. The reverse sweep of the
 * converged strings provides that gradient exactly; it equals the negative
 * converged initial momentum up to discretization order (the envelope
 * identity). Per-observation noise streams are fixed across outer iterations,
 * so the outer objective is a deterministic function of the template.
 */
inline FrechetResult frechet_mean(const ObservationSet& obs, const LandmarkConfig& init,
                                  const FrechetConfig& cfg) {
  obs.validate();
  const std::size_t n = init.size();
  if (obs.configs.front().size() != n)
    throw std::invalid_argument("frechet_mean: landmark count mismatch");

  FrechetResult result;
  result.mean = init;
  std::vector<MomentumPath> warm(obs.size());
  for (std::size_t it = 0; it < cfg.max_outer; ++it) {
    std::vector<Vec2> mean_grad(n, Vec2{});
    double energy = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      MatchProblem problem{result.mean, obs.configs[i], cfg.model.lambda,
                           cfg.model.kernel, cfg.model.basis, cfg.model.n_t};
      OptimizerConfig inner = cfg.inner;
      inner.seed = derive_seed(cfg.inner.seed, i);
      if (inner.temperature == Temperature::finite)
        inner.seed = derive_seed(inner.seed, 0xF1BE00ull + it);
      const StringRun run = inner.temperature == Temperature::finite
                                ? run_finite_temperature(problem, inner)
                                : run_zero_temperature(problem, inner,
                                                       cfg.warm_start ? warm[i] : MomentumPath{});
      if (cfg.warm_start) warm[i] = run.final.p;
      energy += run.final.energy;
      const StringGradients grads =
          string_and_source_gradient(run.final, problem.target, problem.lambda, problem.basis,
                                     run.final_path, problem.kernel);
      for (std::size_t l = 0; l < n; ++l) mean_grad[l] += grads.source[l];
    }
    const double inv = 1.0 / static_cast<double>(obs.size());
    double update_norm = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      const Vec2 step = -cfg.outer_epsilon * inv * mean_grad[l];
      result.mean[l] += step;
      update_norm = std::max(update_norm, std::max(std::fabs(step.x), std::fabs(step.y)));
    }
    result.energies.push_back(energy);
    result.iterate_history.push_back(result.mean);
    if (update_norm < cfg.outer_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

enum class InferParam { noise_amplitude, noise_scale, kernel_scale };

struct ParamRange {
  InferParam param = InferParam::noise_amplitude;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t count = 10;
};

struct InferenceSpec {
  std::vector<ParamRange> ranges;   // the free parameter subset
  std::size_t sample_budget = 200;  // simulated endpoints per candidate
  std::uint64_t seed = 0;
  std::size_t n_t = 20;

  void validate() const {
    if (ranges.empty()) throw std::invalid_argument("InferenceSpec: no free parameters");
    for (const ParamRange& r : ranges) {
      if (r.count < 1 || !(r.lo > 0.0) || !(r.hi >= r.lo))
        throw std::invalid_argument("InferenceSpec: invalid search range");
    }
  }
};

struct InferenceCandidate {
  std::vector<double> values;  // one per range entry
  double objective = 0.0;
};

struct InferenceResult {
  std::vector<double> estimate;
  double objective = 0.0;
  std::vector<InferenceCandidate> table;
};

namespace detail {

inline double moment_discrepancy(const ConfigStatistics& a, const ConfigStatistics& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    acc += norm2(a.mean[i] - b.mean[i]);
    const Mat2 d = a.covariance[i] - b.covariance[i];
    acc += d.a * d.a + d.b * d.b + d.c * d.c + d.d * d.d;
  }
  return acc;
}

}  // namespace detail

/**
 * Method-of-moments parameter search: the squared discrepancy between
 * per-landmark sample mean/covariance of the observations and of simulated
 * string endpoints is minimized over a full grid on the declared parameter
 * ranges. All candidates share the same Brownian streams (common random
 * numbers), so the objective surface is deterministic in the parameters.
 */
template <class K>
InferenceResult moment_inference(const ObservationSet& obs, const LandmarkConfig& template_cfg,
                                 std::span<const Vec2> p0, const InferenceSpec& spec,
                                 const NoiseBasis& base_basis, const K& base_kernel) {
  spec.validate();
  obs.validate();
  const ConfigStatistics target_stats = observation_statistics(obs);

  std::vector<std::size_t> idx(spec.ranges.size(), 0);
  InferenceResult result;
  result.objective = std::numeric_limits<double>::infinity();

  for (;;) {
    std::vector<double> values(spec.ranges.size());
    for (std::size_t d = 0; d < spec.ranges.size(); ++d) {
      const ParamRange& r = spec.ranges[d];
      values[d] = r.count == 1
                      ? r.lo
                      : r.lo + (r.hi - r.lo) * static_cast<double>(idx[d]) /
                            static_cast<double>(r.count - 1);
    }

    NoiseBasis basis = base_basis;
    double kernel_scale = base_kernel.scale();
    for (std::size_t d = 0; d < spec.ranges.size(); ++d) {
      switch (spec.ranges[d].param) {
        case InferParam::noise_amplitude:
          for (NoiseField& f : basis.entries) f.amplitude = values[d] * f.amplitude;
          break;
        case InferParam::noise_scale:
          for (NoiseField& f : basis.entries) f.scale = values[d];
          break;
        case InferParam::kernel_scale:
          kernel_scale = values[d];
          break;
      }
    }
    const GaussianKernel kernel(kernel_scale);
    const ObservationSet sim = sample_endpoints(template_cfg, p0, basis, spec.sample_budget,
                                                spec.seed, kernel, spec.n_t);
    const double objective =
        detail::moment_discrepancy(target_stats, observation_statistics(sim));
    result.table.push_back({values, objective});
    if (objective < result.objective) {
      result.objective = objective;
      result.estimate = values;
    }

    std::size_t d = 0;
    while (d < idx.size() && ++idx[d] == spec.ranges[d].count) idx[d++] = 0;
    if (d == idx.size()) break;
  }
  return result;
}

/**
 * Self-normalized importance weights w_k proportional to the observation
 * likelihood exp(-|endpoint_k - target|^2 / (2 lambda^2)). Raw weights are
 * evaluated literally; if every one underflows to zero the conditional
 * expectation is not estimable at this lambda and an error is raised (use a
 * larger lambda or a bridge sampler).
 */
inline std::vector<double> em_weights(const std::vector<LandmarkConfig>& endpoint_samples,
                                      const LandmarkConfig& target, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("em_weights: lambda must be positive");
  if (endpoint_samples.empty()) throw std::invalid_argument("em_weights: no samples");
  std::vector<double> w(endpoint_samples.size());
  double total = 0.0;
  for (std::size_t k = 0; k < endpoint_samples.size(); ++k) {
    const LandmarkConfig& e = endpoint_samples[k];
    if (e.size() != target.size()) throw std::invalid_argument("em_weights: size mismatch");
    double d2 = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) d2 += norm2(e[i] - target[i]);
    w[k] = std::exp(-d2 / (2.0 * lambda * lambda));
    total += w[k];
  }
  if (!(total > 0.0))
    throw std::runtime_error(
        "em_weights: all weights underflowed; increase lambda or use bridge sampling");
  for (double& x : w) x /= total;
  return w;
}

/**
 * One M-step of the stochastic EM iteration: M fresh noise draws (streams
 * derive_seed(cfg.seed, m)), per-draw string gradients combined with the
 * importance weights of the draw endpoints, single momentum update. The
 * returned state is rebuilt under the first drawn realization.
 */
inline StringState em_step(const StringState& state, const MatchProblem& problem,
                           const OptimizerConfig& cfg, std::size_t m_samples) {
  if (m_samples < 1) throw std::invalid_argument("em_step: M must be >= 1");
  problem.validate();

  std::vector<PathGrid> gradients;
  std::vector<LandmarkConfig> endpoints;
  gradients.reserve(m_samples);
  endpoints.reserve(m_samples);
  BrownianPath first_path;
  for (std::size_t m = 0; m < m_samples; ++m) {
    const BrownianPath path = detail::path_for(problem, derive_seed(cfg.seed, m));
    if (m == 0) first_path = path;
    const StringState sampled =
        make_string_state(state.q0, state.p, problem.basis, path, problem.kernel, problem.target,
                          problem.lambda, /*with_jacobians=*/false);
    gradients.push_back(string_gradient(sampled, problem.target, problem.lambda, problem.basis,
                                        path, problem.kernel));
    LandmarkConfig endpoint;
    const auto q1 = sampled.endpoint();
    endpoint.points.assign(q1.begin(), q1.end());
    endpoints.push_back(std::move(endpoint));
  }
  const std::vector<double> w = em_weights(endpoints, problem.target, problem.lambda);

  MomentumPath p = state.p;
  for (std::size_t m = 0; m < m_samples; ++m)
    for (std::size_t idx = 0; idx < p.values.size(); ++idx)
      p.values[idx] -= cfg.epsilon * w[m] * gradients[m].values[idx];
  return make_string_state(state.q0, std::move(p), problem.basis, first_path, problem.kernel,
                           problem.target, problem.lambda);
}

}  // namespace stochmatch
