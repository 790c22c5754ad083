#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "stochmatch/brownian.hpp"
#include "stochmatch/kernels.hpp"
#include "stochmatch/noise.hpp"
#include "stochmatch/vec.hpp"

namespace stochmatch {

// A set of N labelled points in the plane.
struct LandmarkConfig {
  std::vector<Vec2> points;

  LandmarkConfig() = default;
  explicit LandmarkConfig(std::vector<Vec2> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  Vec2& operator[](std::size_t i) { return points[i]; }
  Vec2 operator[](std::size_t i) const { return points[i]; }
};

// Per-(t, landmark) array of plane vectors on the uniform grid t_k = k/(n_t-1).
// Used for momentum paths p_i(t_k), trajectories q_i(t_k), and gradients.
struct PathGrid {
  std::size_t n_t = 0;
  std::size_t n_points = 0;
  std::vector<Vec2> values;

  PathGrid() = default;
  PathGrid(std::size_t nt, std::size_t n) : n_t(nt), n_points(n), values(nt * n) {}

  Vec2& at(std::size_t k, std::size_t i) { return values[k * n_points + i]; }
  Vec2 at(std::size_t k, std::size_t i) const { return values[k * n_points + i]; }

  std::span<const Vec2> row(std::size_t k) const {
    return {values.data() + k * n_points, n_points};
  }
  std::span<Vec2> row(std::size_t k) {
    return {values.data() + k * n_points, n_points};
  }

  double dt() const { return 1.0 / static_cast<double>(n_t - 1); }
};

using MomentumPath = PathGrid;
using Trajectory = PathGrid;

// Per-(t, landmark) 2x2 matrices: the backward flow Jacobians Dg_{t_k,1}.
struct JacobianGrid {
  std::size_t n_t = 0;
  std::size_t n_points = 0;
  std::vector<Mat2> values;

  JacobianGrid() = default;
  JacobianGrid(std::size_t nt, std::size_t n) : n_t(nt), n_points(n), values(nt * n) {}

  Mat2& at(std::size_t k, std::size_t i) { return values[k * n_points + i]; }
  const Mat2& at(std::size_t k, std::size_t i) const { return values[k * n_points + i]; }
};

namespace detail {

// Checks a Brownian table against a string grid with n_t points on [0,1];
// returns the aggregation factor (table rows per grid step).
inline std::size_t brownian_group(const BrownianPath& path, std::size_t n_t,
                                  const NoiseBasis& basis) {
  if (n_t < 2) throw std::invalid_argument("string grid needs n_t >= 2");
  if (basis.empty()) return 1;
  const std::size_t steps = n_t - 1;
  if (path.channels != basis.size())
    throw std::invalid_argument("BrownianPath channel count does not match noise basis");
  if (path.n_steps % steps != 0)
    throw std::invalid_argument("BrownianPath rows must be a multiple of n_t-1");
  if (std::fabs(path.horizon() - 1.0) > 1e-9)
    throw std::invalid_argument("BrownianPath must cover the unit time horizon");
  return path.n_steps / steps;
}

inline void check_finite(std::span<const Vec2> pts, const char* what) {
  for (Vec2 p : pts)
    if (!is_finite(p))
      throw std::runtime_error(std::string(what) +
                               ": state became non-finite (step size too large?)");
}

}  // namespace detail

/// u(x) = sum_i K(x - q_i) p_i
template <class K>
Vec2 velocity_field(std::span<const Vec2> q, std::span<const Vec2> p, const K& kernel, Vec2 x) {
  Vec2 u;
  for (std::size_t i = 0; i < q.size(); ++i) u += kernel.eval(x - q[i]) * p[i];
  return u;
}

template <class K>
Vec2 velocity_field(const LandmarkConfig& q, std::span<const Vec2> p, const K& kernel, Vec2 x) {
  return velocity_field<K>(std::span<const Vec2>(q.points), p, kernel, x);
}

/// Du(x), rows indexed by the field component: Du^a_g = sum_i d_g K(x-q_i) p_i^a
template <class K>
Mat2 velocity_jacobian(std::span<const Vec2> q, std::span<const Vec2> p, const K& kernel, Vec2 x) {
  Mat2 du;
  for (std::size_t i = 0; i < q.size(); ++i) du += outer(p[i], kernel.grad(x - q[i]));
  return du;
}

/**
 * Stratonovich Heun integration of the perturbed reconstruction flow
 *
 *   dq_i = u_t(q_i) dt + sum_l sigma_l(q_i) o dW^l,   u_t from the momentum
 *
 * on the uniform grid of p. The Brownian table may be stored at a finer dt;
 * increments are then aggregated per grid step.
 */
template <class K>
Trajectory flow_forward(const LandmarkConfig& q0, const MomentumPath& p, const NoiseBasis& basis,
                        const BrownianPath& path, const K& kernel) {
  const std::size_t n_t = p.n_t;
  const std::size_t n = q0.size();
  if (p.n_points != n) throw std::invalid_argument("flow_forward: momentum/config shape mismatch");
  const std::size_t group = detail::brownian_group(path, n_t, basis);
  const double dt = 1.0 / static_cast<double>(n_t - 1);
  const std::size_t j = basis.size();

  Trajectory q(n_t, n);
  for (std::size_t i = 0; i < n; ++i) q.at(0, i) = q0[i];

  std::vector<double> dw(j, 0.0);
  std::vector<Vec2> drift0(n), pred(n), incr(n);
  for (std::size_t k = 0; k + 1 < n_t; ++k) {
    if (j > 0) {
      std::fill(dw.begin(), dw.end(), 0.0);
      for (std::size_t s = 0; s < group; ++s)
        for (std::size_t l = 0; l < j; ++l) dw[l] += path.at(k * group + s, l);
    }
    const auto qk = q.row(k);
    // predictor
    for (std::size_t i = 0; i < n; ++i) {
      drift0[i] = velocity_field(qk, p.row(k), kernel, qk[i]);
      incr[i] = dt * drift0[i];
      if (j > 0) incr[i] += noise_combination(basis, qk[i], dw.data());
      pred[i] = qk[i] + incr[i];
    }
    // corrector: average drift/noise between the step ends
    for (std::size_t i = 0; i < n; ++i) {
      Vec2 incr1 = dt * velocity_field<K>(std::span<const Vec2>(pred), p.row(k + 1), kernel, pred[i]);
      if (j > 0) incr1 += noise_combination(basis, pred[i], dw.data());
      q.at(k + 1, i) = qk[i] + 0.5 * (incr[i] + incr1);
    }
    detail::check_finite(q.row(k + 1), "flow_forward");
  }
  return q;
}

/**
 * Backward Jacobians Dg_{t_k,1}(q_i(1)): the derivative equation of the
 * perturbed flow, integrated in reversed time from the identity at t = 1 with
 * Heun steps, reusing the stored trajectory at the step endpoints and the same
 * Brownian increments (drift and noise negated by the time reversal).
 */
template <class K>
JacobianGrid jacobian_backward(const Trajectory& q, const MomentumPath& p, const NoiseBasis& basis,
                               const BrownianPath& path, const K& kernel) {
  const std::size_t n_t = q.n_t;
  const std::size_t n = q.n_points;
  if (p.n_t != n_t || p.n_points != n)
    throw std::invalid_argument("jacobian_backward: shape mismatch");
  const std::size_t group = detail::brownian_group(path, n_t, basis);
  const double dt = 1.0 / static_cast<double>(n_t - 1);
  const std::size_t j = basis.size();

  JacobianGrid jac(n_t, n);
  for (std::size_t i = 0; i < n; ++i) jac.at(n_t - 1, i) = Mat2::identity();

  std::vector<double> dw(j, 0.0);
  for (std::size_t k = n_t - 1; k-- > 0;) {
    if (j > 0) {
      std::fill(dw.begin(), dw.end(), 0.0);
      for (std::size_t s = 0; s < group; ++s)
        for (std::size_t l = 0; l < j; ++l) dw[l] += path.at(k * group + s, l);
    }
    const auto qk = q.row(k);
    const auto qk1 = q.row(k + 1);
    for (std::size_t i = 0; i < n; ++i) {
      // generator A = Du dt + sum_l D sigma_l dW at each step end
      Mat2 a1 = dt * velocity_jacobian(qk1, p.row(k + 1), kernel, qk1[i]);
      if (j > 0) a1 += noise_jacobian_combination(basis, qk1[i], dw.data());
      Mat2 a0 = dt * velocity_jacobian(qk, p.row(k), kernel, qk[i]);
      if (j > 0) a0 += noise_jacobian_combination(basis, qk[i], dw.data());

      const Mat2& m1 = jac.at(k + 1, i);
      const Mat2 predictor = m1 - a1 * m1;
      jac.at(k, i) = m1 - 0.5 * (a1 * m1 + a0 * predictor);
      if (!is_finite(jac.at(k, i)))
        throw std::runtime_error("jacobian_backward: non-finite Jacobian");
    }
  }
  return jac;
}

/**
 * Stratonovich Heun integration of the stochastic landmark Hamiltonian system
 *
 *   dq_i = sum_j p_j K(q_i - q_j) dt            + sum_l sigma_l(q_i) o dW^l
 *   dp_i = -sum_j (p_i . p_j) dK(q_i - q_j) dt  - sum_l Dsigma_l(q_i)^T p_i o dW^l
 *
 * over the full extent of the Brownian table (n_steps * dt of model time).
 * Used as the generative sampler for observations.
 */
template <class K>
std::pair<Trajectory, Trajectory> hamiltonian_flow(const LandmarkConfig& q0,
                                                   std::span<const Vec2> p0,
                                                   const NoiseBasis& basis,
                                                   const BrownianPath& path, const K& kernel) {
  const std::size_t n = q0.size();
  if (p0.size() != n) throw std::invalid_argument("hamiltonian_flow: shape mismatch");
  if (!basis.empty() && path.channels != basis.size())
    throw std::invalid_argument("hamiltonian_flow: channel mismatch");
  const std::size_t steps = path.n_steps;
  const double dt = path.dt;
  const std::size_t j = basis.size();

  Trajectory q(steps + 1, n), p(steps + 1, n);
  for (std::size_t i = 0; i < n; ++i) {
    q.at(0, i) = q0[i];
    p.at(0, i) = p0[i];
  }

  auto drift = [&](std::span<const Vec2> qs, std::span<const Vec2> ps, std::size_t i,
                   Vec2& dq, Vec2& dp) {
    dq = {0, 0};
    dp = {0, 0};
    for (std::size_t m = 0; m < n; ++m) {
      const Vec2 d = qs[i] - qs[m];
      dq += kernel.eval(d) * ps[m];
      dp -= dot(ps[i], ps[m]) * kernel.grad(d);
    }
  };

  std::vector<Vec2> qp(n), pp(n), incq(n), incp(n);
  for (std::size_t k = 0; k < steps; ++k) {
    const double* dw = j > 0 ? &path.increments[k * j] : nullptr;
    const auto qk = q.row(k);
    const auto pk = p.row(k);
    for (std::size_t i = 0; i < n; ++i) {
      Vec2 dq, dp;
      drift(qk, pk, i, dq, dp);
      incq[i] = dt * dq;
      incp[i] = dt * dp;
      if (j > 0) {
        incq[i] += noise_combination(basis, qk[i], dw);
        incp[i] -= transpose(noise_jacobian_combination(basis, qk[i], dw)) * pk[i];
      }
      qp[i] = qk[i] + incq[i];
      pp[i] = pk[i] + incp[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      Vec2 dq, dp;
      drift(qp, pp, i, dq, dp);
      Vec2 iq = dt * dq;
      Vec2 ip = dt * dp;
      if (j > 0) {
        iq += noise_combination(basis, qp[i], dw);
        ip -= transpose(noise_jacobian_combination(basis, qp[i], dw)) * pp[i];
      }
      q.at(k + 1, i) = qk[i] + 0.5 * (incq[i] + iq);
      p.at(k + 1, i) = pk[i] + 0.5 * (incp[i] + ip);
    }
    detail::check_finite(q.row(k + 1), "hamiltonian_flow");
    detail::check_finite(p.row(k + 1), "hamiltonian_flow");
  }
  return {std::move(q), std::move(p)};
}

/// l(q, p) = sum_ij p_i . p_j K(q_i - q_j); the squared velocity norm |u|^2.
template <class K>
double lagrangian_value(std::span<const Vec2> q, std::span<const Vec2> p, const K& kernel) {
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t m = 0; m < q.size(); ++m)
      acc += dot(p[i], p[m]) * kernel.eval(q[i] - q[m]);
  return acc;
}

/// H = 1/2 sum_ij p_i . p_j K(q_i - q_j); conserved by the deterministic flow.
template <class K>
double hamiltonian_value(std::span<const Vec2> q, std::span<const Vec2> p, const K& kernel) {
  return 0.5 * lagrangian_value(q, p, kernel);
}

// Consistent snapshot of one string: momentum, its trajectory under the
// attached noise realization, backward Jacobians, and the descent objective.
struct StringState {
  LandmarkConfig q0;
  MomentumPath p;
  Trajectory q;
  JacobianGrid jac;
  double energy = 0.0;  // objective of the string update, see descent_energy()

  std::span<const Vec2> endpoint() const { return q.row(q.n_t - 1); }
};

namespace detail {

template <class K>
double kinetic_trapezoid(const Trajectory& q, const MomentumPath& p, const K& kernel) {
  const double dt = 1.0 / static_cast<double>(q.n_t - 1);
  double acc = 0.0;
  for (std::size_t k = 0; k < q.n_t; ++k) {
    const double w = (k == 0 || k + 1 == q.n_t) ? 0.5 * dt : dt;
    acc += w * lagrangian_value(q.row(k), p.row(k), kernel);
  }
  return acc;
}

inline double endpoint_mismatch(const Trajectory& q, const LandmarkConfig& target) {
  double acc = 0.0;
  const auto q1 = q.row(q.n_t - 1);
  for (std::size_t i = 0; i < q1.size(); ++i) acc += norm2(q1[i] - target[i]);
  return acc;
}

}  // namespace detail

/**
 * E = int l(u_t) dt + 1/(2 lambda^2) sum_i |q_i(1) - y_i|^2 with trapezoidal
 * quadrature of the kinetic term along the stored string.
 */
template <class K>
double matching_energy(const StringState& state, const LandmarkConfig& target, double lambda,
                       const K& kernel) {
  if (!(lambda > 0.0)) throw std::invalid_argument("matching_energy: lambda must be positive");
  return detail::kinetic_trapezoid(state.q, state.p, kernel) +
         detail::endpoint_mismatch(state.q, target) / (2.0 * lambda * lambda);
}

/**
 * The objective the string update descends: 1/2 int l(u_t) dt + mismatch.
 * The update direction p + (1/lambda^2) Dg^{-T}(q(1) - y) is its exact
 * kernel-metric gradient; matching_energy carries the unhalved kinetic term
 * and differs only in where constants sit.
 */
template <class K>
double descent_energy(const Trajectory& q, const MomentumPath& p, const LandmarkConfig& target,
                      double lambda, const K& kernel) {
  if (!(lambda > 0.0)) throw std::invalid_argument("descent_energy: lambda must be positive");
  return 0.5 * detail::kinetic_trapezoid(q, p, kernel) +
         detail::endpoint_mismatch(q, target) / (2.0 * lambda * lambda);
}

inline constexpr double kJacobianDetGuard = 1e-12;

/**
 * The endpoint residual transported along the string by the backward flow
 * Jacobians: r_i(t_k) = p_i(t_k) + (1/lambda^2) Dg_{t_k,1}(q_i(1))^{-T}
 * (q_i(1) - y_i). Vanishes along continuum critical strings (the landmark
 * momentum equation); string_gradient is its kernel-paired discrete-exact
 * counterpart and the two agree to the order of the time discretization.
 */
inline PathGrid transport_residual(const StringState& state, const LandmarkConfig& target,
                                   double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("transport_residual: lambda must be positive");
  const std::size_t n_t = state.q.n_t;
  const std::size_t n = state.q.n_points;
  if (state.jac.n_t != n_t || target.size() != n)
    throw std::invalid_argument("transport_residual: shape mismatch");
  const double inv_l2 = 1.0 / (lambda * lambda);
  const auto q1 = state.q.row(n_t - 1);

  PathGrid g(n_t, n);
  for (std::size_t k = 0; k < n_t; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      const Mat2& m = state.jac.at(k, i);
      if (std::fabs(det(m)) < kJacobianDetGuard)
        throw std::runtime_error("transport_residual: degenerate backward Jacobian");
      g.at(k, i) = state.p.at(k, i) + inv_l2 * (inverse_transpose(m) * (q1[i] - target[i]));
    }
  return g;
}

namespace detail {

// (dF/dP)^T a where F_i = sum_j K(q_i - q_j) p_j: the kernel matrix applied
// to the covector (K is symmetric).
template <class K>
void add_drift_p_vjp(std::span<const Vec2> q, std::span<const Vec2> a, const K& kernel,
                     double scale, std::span<Vec2> out) {
  for (std::size_t m = 0; m < q.size(); ++m) {
    Vec2 acc;
    for (std::size_t i = 0; i < q.size(); ++i) acc += kernel.eval(q[i] - q[m]) * a[i];
    out[m] += scale * acc;
  }
}

// (dF/dQ)^T a: result_m = sum_j [(a_m . p_j) + (a_j . p_m)] dK(q_m - q_j)
template <class K>
void add_drift_q_vjp(std::span<const Vec2> q, std::span<const Vec2> p, std::span<const Vec2> a,
                     const K& kernel, double scale, std::span<Vec2> out) {
  for (std::size_t m = 0; m < q.size(); ++m) {
    Vec2 acc;
    for (std::size_t j = 0; j < q.size(); ++j)
      acc += (dot(a[m], p[j]) + dot(a[j], p[m])) * kernel.grad(q[m] - q[j]);
    out[m] += scale * acc;
  }
}

// (dG/dQ)^T a with G_i = sum_l sigma_l(q_i) dw_l (diagonal over landmarks)
inline void add_noise_q_vjp(const NoiseBasis& basis, std::span<const Vec2> q,
                            std::span<const Vec2> a, const double* dw, double scale,
                            std::span<Vec2> out) {
  if (basis.empty()) return;
  for (std::size_t m = 0; m < q.size(); ++m)
    out[m] += scale * (transpose(noise_jacobian_combination(basis, q[m], dw)) * a[m]);
}

// dL/dq_m = sum_j (p_m . p_j) dK(q_m - q_j) for L = 1/2 sum_ij p_i.p_j K
template <class K>
void add_kinetic_q_grad(std::span<const Vec2> q, std::span<const Vec2> p, const K& kernel,
                        double scale, std::span<Vec2> out) {
  for (std::size_t m = 0; m < q.size(); ++m) {
    Vec2 acc;
    for (std::size_t j = 0; j < q.size(); ++j) acc += dot(p[m], p[j]) * kernel.grad(q[m] - q[j]);
    out[m] += scale * acc;
  }
}

}  // namespace detail

// Momentum-path gradient plus the exact derivative of the objective with
// respect to the source points (the reverse sweep produces both).
struct StringGradients {
  PathGrid momentum;
  std::vector<Vec2> source;
};

/**
 * Gradient of the string objective (descent_energy) with respect to the whole
 * momentum path, computed by exact reverse-mode differentiation through the
 * Heun flow steps and the trapezoidal kinetic quadrature, then divided by the
 * quadrature weights (so values stay O(1) as the grid refines). Fixed points
 * of p <- p - eps * g are exactly the critical strings of the discretized
 * energy; on those strings the momentum-equation residual (transport_residual)
 * vanishes to the order of the time discretization.
 */
template <class K>
StringGradients string_and_source_gradient(const StringState& state, const LandmarkConfig& target,
                                           double lambda, const NoiseBasis& basis,
                                           const BrownianPath& path, const K& kernel) {
  if (!(lambda > 0.0)) throw std::invalid_argument("string_gradient: lambda must be positive");
  const std::size_t n_t = state.q.n_t;
  const std::size_t n = state.q.n_points;
  if (target.size() != n || state.p.n_t != n_t)
    throw std::invalid_argument("string_gradient: shape mismatch");
  const std::size_t group = detail::brownian_group(path, n_t, basis);
  const double dt = 1.0 / static_cast<double>(n_t - 1);
  const std::size_t j = basis.size();
  const Trajectory& q = state.q;
  const MomentumPath& p = state.p;

  auto weight = [&](std::size_t k) { return (k == 0 || k + 1 == n_t) ? 0.5 * dt : dt; };

  // direct kinetic term: dL/dp_m = u(q_m)
  PathGrid grad(n_t, n);
  for (std::size_t k = 0; k < n_t; ++k)
    detail::add_drift_p_vjp(q.row(k), p.row(k), kernel, weight(k), grad.row(k));

  // adjoint of the trajectory at the endpoint
  std::vector<Vec2> adj(n);
  const double inv_l2 = 1.0 / (lambda * lambda);
  for (std::size_t i = 0; i < n; ++i) adj[i] = inv_l2 * (q.at(n_t - 1, i) - target[i]);
  detail::add_kinetic_q_grad(q.row(n_t - 1), p.row(n_t - 1), kernel, weight(n_t - 1),
                             std::span<Vec2>(adj));

  std::vector<double> dw(j, 0.0);
  std::vector<Vec2> pred(n), b(n), next_adj(n);
  for (std::size_t k = n_t - 1; k-- > 0;) {
    if (j > 0) {
      std::fill(dw.begin(), dw.end(), 0.0);
      for (std::size_t s = 0; s < group; ++s)
        for (std::size_t l = 0; l < j; ++l) dw[l] += path.at(k * group + s, l);
    }
    const auto qk = q.row(k);
    // recompute the predictor state of step k
    for (std::size_t i = 0; i < n; ++i) {
      Vec2 incr = dt * velocity_field(qk, p.row(k), kernel, qk[i]);
      if (j > 0) incr += noise_combination(basis, qk[i], dw.data());
      pred[i] = qk[i] + incr;
    }
    const std::span<const Vec2> predv(pred);

    // corrector VJP with incoming adjoint `adj` (of Q_{k+1})
    detail::add_drift_p_vjp(predv, std::span<const Vec2>(adj), kernel, 0.5 * dt,
                            grad.row(k + 1));
    std::fill(b.begin(), b.end(), Vec2{});
    detail::add_drift_q_vjp(predv, p.row(k + 1), std::span<const Vec2>(adj), kernel, 0.5 * dt,
                            std::span<Vec2>(b));
    detail::add_noise_q_vjp(basis, predv, std::span<const Vec2>(adj), dw.data(), 0.5,
                            std::span<Vec2>(b));

    // predictor VJP with incoming `b` (of the predictor state)
    for (std::size_t i = 0; i < n; ++i) next_adj[i] = adj[i] + b[i];
    detail::add_drift_p_vjp(qk, std::span<const Vec2>(adj), kernel, 0.5 * dt, grad.row(k));
    detail::add_drift_p_vjp(qk, std::span<const Vec2>(b), kernel, dt, grad.row(k));
    detail::add_drift_q_vjp(qk, p.row(k), std::span<const Vec2>(adj), kernel, 0.5 * dt,
                            std::span<Vec2>(next_adj));
    detail::add_drift_q_vjp(qk, p.row(k), std::span<const Vec2>(b), kernel, dt,
                            std::span<Vec2>(next_adj));
    detail::add_noise_q_vjp(basis, qk, std::span<const Vec2>(adj), dw.data(), 0.5,
                            std::span<Vec2>(next_adj));
    detail::add_noise_q_vjp(basis, qk, std::span<const Vec2>(b), dw.data(), 1.0,
                            std::span<Vec2>(next_adj));

    // kinetic source at grid point k
    detail::add_kinetic_q_grad(qk, p.row(k), kernel, weight(k), std::span<Vec2>(next_adj));
    adj.swap(next_adj);
  }

  for (std::size_t k = 0; k < n_t; ++k) {
    const double inv_w = 1.0 / weight(k);
    for (std::size_t i = 0; i < n; ++i) grad.at(k, i) = inv_w * grad.at(k, i);
  }
  return {std::move(grad), std::move(adj)};
}

template <class K>
PathGrid string_gradient(const StringState& state, const LandmarkConfig& target, double lambda,
                         const NoiseBasis& basis, const BrownianPath& path, const K& kernel) {
  return string_and_source_gradient(state, target, lambda, basis, path, kernel).momentum;
}

/// Max-norm of the string gradient; the convergence diagnostic.
template <class K>
double momentum_residual(const StringState& state, const LandmarkConfig& target, double lambda,
                         const NoiseBasis& basis, const BrownianPath& path, const K& kernel) {
  const PathGrid g = string_gradient(state, target, lambda, basis, path, kernel);
  double r = 0.0;
  for (Vec2 v : g.values) r = std::max(r, std::max(std::fabs(v.x), std::fabs(v.y)));
  return r;
}

/// Builds the consistent StringState for a momentum path under fixed noise.
/// The backward Jacobians are only needed by transport_residual and figure
/// output; optimizer inner loops skip them and attach them to final states.
template <class K>
StringState make_string_state(const LandmarkConfig& q0, MomentumPath p, const NoiseBasis& basis,
                              const BrownianPath& path, const K& kernel,
                              const LandmarkConfig& target, double lambda,
                              bool with_jacobians = true) {
  StringState s;
  s.q0 = q0;
  s.q = flow_forward(q0, p, basis, path, kernel);
  if (with_jacobians) s.jac = jacobian_backward(s.q, p, basis, path, kernel);
  s.energy = descent_energy(s.q, p, target, lambda, kernel);
  s.p = std::move(p);
  return s;
}

template <class K>
void attach_jacobians(StringState& s, const NoiseBasis& basis, const BrownianPath& path,
                      const K& kernel) {
  if (s.jac.n_t != s.q.n_t) s.jac = jacobian_backward(s.q, s.p, basis, path, kernel);
}

}  // namespace stochmatch
