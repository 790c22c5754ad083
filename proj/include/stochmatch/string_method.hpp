#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "stochmatch/brownian.hpp"
#include "stochmatch/kernels.hpp"
#include "stochmatch/landmark.hpp"
#include "stochmatch/noise.hpp"

namespace stochmatch {

// One inexact landmark matching problem.
struct MatchProblem {
  LandmarkConfig source;
  LandmarkConfig target;
  double lambda = 1.0;
  GaussianKernel kernel{1.0};
  NoiseBasis basis;
  std::size_t n_t = 2;

  void validate() const {
    if (source.size() == 0) throw std::invalid_argument("MatchProblem: empty source");
    if (source.size() != target.size())
      throw std::invalid_argument("MatchProblem: source/target sizes differ");
    if (!(lambda > 0.0)) throw std::invalid_argument("MatchProblem: lambda must be positive");
    if (n_t < 2) throw std::invalid_argument("MatchProblem: n_t must be >= 2");
    basis.validate();
  }
};

enum class Temperature { zero, finite };

struct OptimizerConfig {
  double epsilon = 0.1;
  std::size_t n_s = 100;       // max string iterations
  double tol = 1e-4;           // residual tolerance (zero temperature)
  Temperature temperature = Temperature::zero;
  std::size_t ensemble_size = 1;
  std::uint64_t seed = 0;
  std::size_t avg_window = 0;  // B; 0 picks min(200, n_s/2)

  std::size_t window(std::size_t n_s_actual) const {
    if (avg_window > 0) return std::min(avg_window, n_s_actual);
    return std::max<std::size_t>(1, std::min<std::size_t>(200, n_s_actual / 2));
  }

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("OptimizerConfig: epsilon must be positive");
    if (tol < 0.0) throw std::invalid_argument("OptimizerConfig: tol must be >= 0");
    if (ensemble_size < 1) throw std::invalid_argument("OptimizerConfig: ensemble_size must be >= 1");
  }
};

struct IterateDiagnostics {
  double energy = 0.0;    // descent objective at the iterate
  double residual = 0.0;  // momentum_residual at the iterate
};

struct StringRun {
  std::vector<IterateDiagnostics> iterates;
  StringState final;
  BrownianPath final_path;  // realization the final state was built under
  bool converged = false;
  // finite temperature: trailing window of trajectories and their endpoints
  std::vector<Trajectory> history;
  std::vector<LandmarkConfig> endpoint_samples;
  Trajectory mean_string;       // running mean trajectory over all iterations
  double mean_drift = 0.0;      // relative max-norm change of the running mean
                                // across the trailing window
};

/**
 * One zero-temperature s-update under the noise realization the state was
 * built with: p <- p - epsilon * string_gradient, trajectory/Jacobians/energy
 * recomputed for the new momentum.
 */
inline StringState string_step(const StringState& state, const MatchProblem& problem,
                               const BrownianPath& path, double epsilon) {
  const PathGrid g = string_gradient(state, problem.target, problem.lambda, problem.basis, path,
                                     problem.kernel);
  MomentumPath p = state.p;
  for (std::size_t idx = 0; idx < p.values.size(); ++idx) p.values[idx] -= epsilon * g.values[idx];
  return make_string_state(state.q0, std::move(p), problem.basis, path, problem.kernel,
                           problem.target, problem.lambda);
}

namespace detail {

inline BrownianPath path_for(const MatchProblem& problem, std::uint64_t seed) {
  const std::size_t steps = problem.n_t - 1;
  const double dt = 1.0 / static_cast<double>(steps);
  // Channel-free table for an empty basis keeps the run structure uniform.
  const std::size_t j = problem.basis.size();
  if (j == 0) {
    BrownianPath p;
    p.n_steps = steps;
    p.channels = 0;
    p.dt = dt;
    p.seed = seed;
    return p;
  }
  return brownian_sample(seed, steps, j, dt);
}

}  // namespace detail

/**
 * Algorithm: draw one noise realization, then iterate string_step until the
 * momentum residual drops below tol or n_s updates were taken. The string
 * starts at rest (p = 0, so q(t, s=0) = q0 for all t) unless an explicit
 * initial momentum is supplied. Non-convergence is reported through the flag;
 * the best-energy iterate is returned.
 */
inline StringRun run_zero_temperature(const MatchProblem& problem, const OptimizerConfig& cfg,
                                      MomentumPath initial = {}) {
  problem.validate();
  cfg.validate();
  const BrownianPath path = detail::path_for(problem, cfg.seed);
  if (initial.n_t == 0) initial = MomentumPath(problem.n_t, problem.source.size());

  StringState state = make_string_state(problem.source, std::move(initial), problem.basis, path,
                                        problem.kernel, problem.target, problem.lambda,
                                        /*with_jacobians=*/false);
  StringRun run;
  run.final = state;
  run.final_path = path;
  double best_energy = state.energy;

  for (std::size_t k = 0; k < cfg.n_s; ++k) {
    const PathGrid g =
        string_gradient(state, problem.target, problem.lambda, problem.basis, path, problem.kernel);
    double residual = 0.0;
    for (Vec2 v : g.values) residual = std::max(residual, std::max(std::fabs(v.x), std::fabs(v.y)));
    run.iterates.push_back({state.energy, residual});
    if (residual < cfg.tol) {
      run.converged = true;
      run.final = state;
      break;
    }
    MomentumPath p = state.p;
    for (std::size_t idx = 0; idx < p.values.size(); ++idx)
      p.values[idx] -= cfg.epsilon * g.values[idx];
    state = make_string_state(state.q0, std::move(p), problem.basis, path, problem.kernel,
                              problem.target, problem.lambda, /*with_jacobians=*/false);
    if (state.energy <= best_energy) {
      best_energy = state.energy;
      run.final = state;
    }
  }
  if (!run.converged &&
      momentum_residual(state, problem.target, problem.lambda, problem.basis, path,
                        problem.kernel) < cfg.tol) {
    run.converged = true;
    run.final = state;
  }
  attach_jacobians(run.final, problem.basis, path, problem.kernel);
  return run;
}

/**
 * Algorithm: a fresh noise realization for every iteration (seed derived
 * deterministically from cfg.seed and the iteration index), exactly n_s
 * updates, no convergence test. The trailing window of trajectories and their
 * endpoints is kept for statistics, and a running mean string is maintained.
 * ensemble_size > 1 evolves that many independent strings (disjoint seed
 * streams) and pools their windows; diagnostics are the first member's.
 */
inline StringRun run_finite_temperature(const MatchProblem& problem, const OptimizerConfig& cfg) {
  problem.validate();
  cfg.validate();
  const std::size_t window = cfg.window(cfg.n_s);
  const std::size_t n = problem.source.size();

  StringRun run;
  Trajectory mean_acc(problem.n_t, n);
  std::size_t mean_count = 0;
  Trajectory mean_at_window_start;

  for (std::size_t member = 0; member < cfg.ensemble_size; ++member) {
    const std::uint64_t member_seed =
        cfg.ensemble_size == 1 ? cfg.seed : derive_seed(cfg.seed, 0x4D454D00ull + member);
    StringState state;
    BrownianPath last_path;
    MomentumPath p(problem.n_t, n);
    for (std::size_t k = 0; k < cfg.n_s; ++k) {
      const BrownianPath path = detail::path_for(problem, derive_seed(member_seed, k));
      state = make_string_state(problem.source, std::move(p), problem.basis, path, problem.kernel,
                                problem.target, problem.lambda, /*with_jacobians=*/false);
      last_path = path;
      const PathGrid g = string_gradient(state, problem.target, problem.lambda, problem.basis,
                                         path, problem.kernel);
      if (member == 0) {
        double residual = 0.0;
        for (Vec2 v : g.values)
          residual = std::max(residual, std::max(std::fabs(v.x), std::fabs(v.y)));
        run.iterates.push_back({state.energy, residual});
        for (std::size_t idx = 0; idx < mean_acc.values.size(); ++idx)
          mean_acc.values[idx] += state.q.values[idx];
        ++mean_count;
        if (mean_count == cfg.n_s - window && window < cfg.n_s) {
          mean_at_window_start = mean_acc;
          for (Vec2& v : mean_at_window_start.values) v = v / static_cast<double>(mean_count);
        }
      }
      if (k + window >= cfg.n_s) {
        run.history.push_back(state.q);
        LandmarkConfig endpoint;
        const auto q1 = state.q.row(problem.n_t - 1);
        endpoint.points.assign(q1.begin(), q1.end());
        run.endpoint_samples.push_back(std::move(endpoint));
      }
      p = state.p;
      for (std::size_t idx = 0; idx < p.values.size(); ++idx)
        p.values[idx] -= cfg.epsilon * g.values[idx];
    }
    if (member == 0) {
      run.final = state;
      run.final_path = last_path;
      attach_jacobians(run.final, problem.basis, last_path, problem.kernel);
    }
  }

  run.mean_string = mean_acc;
  for (Vec2& v : run.mean_string.values) v = v / static_cast<double>(mean_count);
  if (mean_at_window_start.n_t > 0) {
    double drift = 0.0, scale = 0.0;
    for (std::size_t idx = 0; idx < run.mean_string.values.size(); ++idx) {
      const Vec2 d = run.mean_string.values[idx] - mean_at_window_start.values[idx];
      drift = std::max(drift, std::max(std::fabs(d.x), std::fabs(d.y)));
      const Vec2 v = run.mean_string.values[idx];
      scale = std::max(scale, std::max(std::fabs(v.x), std::fabs(v.y)));
    }
    run.mean_drift = scale > 0.0 ? drift / scale : drift;
  }
  return run;
}

/// The deterministic Beg iteration: the zero-temperature method with no noise.
inline StringRun deterministic_beg(MatchProblem problem, OptimizerConfig cfg) {
  problem.basis.entries.clear();
  cfg.temperature = Temperature::zero;
  return run_zero_temperature(problem, cfg);
}

/// Pointwise arithmetic mean over an ensemble of equally shaped trajectories.
inline Trajectory ensemble_average(const std::vector<Trajectory>& strings) {
  if (strings.empty()) throw std::invalid_argument("ensemble_average: empty ensemble");
  Trajectory mean(strings.front().n_t, strings.front().n_points);
  for (const Trajectory& s : strings) {
    if (s.n_t != mean.n_t || s.n_points != mean.n_points)
      throw std::invalid_argument("ensemble_average: shape mismatch");
    for (std::size_t idx = 0; idx < mean.values.size(); ++idx) mean.values[idx] += s.values[idx];
  }
  const double inv = 1.0 / static_cast<double>(strings.size());
  for (Vec2& v : mean.values) v *= inv;
  return mean;
}

struct PathStatistics {
  PathGrid mean;           // per (t, landmark) sample mean
  JacobianGrid covariance; // per (t, landmark) unbiased 2x2 sample covariance
};

/// Sample mean and unbiased covariance per (t, landmark) over stored trajectories.
inline PathStatistics trajectory_statistics(const std::vector<Trajectory>& history) {
  if (history.size() < 2)
    throw std::invalid_argument("trajectory_statistics: need at least 2 samples");
  const std::size_t n_t = history.front().n_t;
  const std::size_t n = history.front().n_points;
  PathStatistics stats{PathGrid(n_t, n), JacobianGrid(n_t, n)};
  const double inv_m = 1.0 / static_cast<double>(history.size());
  for (const Trajectory& traj : history)
    for (std::size_t idx = 0; idx < traj.values.size(); ++idx)
      stats.mean.values[idx] += traj.values[idx];
  for (Vec2& v : stats.mean.values) v *= inv_m;
  const double inv_m1 = 1.0 / static_cast<double>(history.size() - 1);
  for (const Trajectory& traj : history)
    for (std::size_t idx = 0; idx < traj.values.size(); ++idx) {
      const Vec2 d = traj.values[idx] - stats.mean.values[idx];
      stats.covariance.values[idx] += inv_m1 * outer(d, d);
    }
  return stats;
}

inline PathStatistics endpoint_statistics(const StringRun& run) {
  return trajectory_statistics(run.history);
}

}  // namespace stochmatch
