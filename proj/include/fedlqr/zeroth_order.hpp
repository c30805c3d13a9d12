#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "fedlqr/ensemble.hpp"
#include "fedlqr/errors.hpp"
#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/random.hpp"

namespace fedlqr {

struct ZoConfig {
  std::size_t n_s = 5;   // trajectories per estimate
  std::size_t tau = 15;  // rollout length
  double r = 0.1;        // smoothing radius

  void validate() const {
    if (n_s < 1) throw InvalidInput("ZoConfig: n_s must be >= 1");
    if (tau < 1) throw InvalidInput("ZoConfig: tau must be >= 1");
    if (!(r > 0.0)) throw InvalidInput("ZoConfig: r must be positive");
  }
};

struct GradientEstimate {
  MatrixXd grad_hat;
  std::vector<double> per_sample_costs;
  std::size_t diverged_count = 0;
};

// Uniform draw from {U in R^{n_u x n_x} : ||U||_F = r}.
inline MatrixXd sample_frobenius_sphere(Eigen::Index n_x, Eigen::Index n_u, double r, Rng& rng) {
  if (!(r > 0.0)) throw InvalidInput("sample_frobenius_sphere: r must be positive");
  std::normal_distribution<double> n01(0.0, 1.0);
  MatrixXd u(n_u, n_x);
  double nrm = 0.0;
  do {
    for (Eigen::Index j = 0; j < u.cols(); ++j)
      for (Eigen::Index i = 0; i < u.rows(); ++i) u(i, j) = n01(rng);
    nrm = u.norm();
  } while (nrm == 0.0);
  return u * (r / nrm);
}

// Single-point smoothed estimator
//   (1/n_s) sum_s (n_x n_u / r^2) cost(K + U_s, rng_s) U_s
// with an arbitrary cost evaluator. Trajectory s draws U_s and then calls
// `cost_of(perturbed_gain, rng)` using the engine of substream key.child(s).
// The evaluator returns {cost, diverged}.
template <class CostOf>
GradientEstimate estimate_gradient_with(const Gain& g, const ZoConfig& cfg, CostOf&& cost_of,
                                        const StreamKey& key) {
  cfg.validate();
  const Eigen::Index n_u = g.k.rows();
  const Eigen::Index n_x = g.k.cols();
  const double scale = static_cast<double>(n_x * n_u) / (cfg.r * cfg.r);
  GradientEstimate est;
  est.grad_hat = MatrixXd::Zero(n_u, n_x);
  est.per_sample_costs.reserve(cfg.n_s);
  for (std::size_t s = 0; s < cfg.n_s; ++s) {
    Rng rng = key.child(s).engine();
    const MatrixXd u = sample_frobenius_sphere(n_x, n_u, cfg.r, rng);
    const Gain perturbed{g.k + u};
    const auto [c, diverged] = cost_of(perturbed, rng);
    if (diverged) ++est.diverged_count;
    est.per_sample_costs.push_back(c);
    est.grad_hat += (scale * c) * u;
  }
  est.grad_hat /= static_cast<double>(cfg.n_s);
  if (est.diverged_count == cfg.n_s) {
    throw EstimateFailed("estimate_gradient: every rollout diverged");
  }
  return est;
}

// Model-free estimate from truncated rollouts with a fresh x0 per trajectory.
// A diverged rollout contributes its cost capped at the divergence guard.
inline GradientEstimate estimate_gradient(const LinearSystem& sys, const CostSpec& cost,
                                          const Gain& g, const ZoConfig& cfg,
                                          const InitDist& dist, const StreamKey& key) {
  detail::check_dims(sys, g);
  return estimate_gradient_with(
      g, cfg,
      [&](const Gain& perturbed, Rng& rng) -> std::pair<double, bool> {
        const VectorXd x0 = sample_initial_state(dist, rng);
        try {
          return {rollout_cost(sys, cost, perturbed, x0, cfg.tau), false};
        } catch (const TrajectoryDiverged&) {
          return {kDivergenceGuard, true};
        }
      },
      key);
}

// Test hook: same estimator with the infinite-horizon analytic cost in place
// of rollouts (no initial-state sampling).
inline GradientEstimate estimate_gradient_analytic(const LinearSystem& sys, const CostSpec& cost,
                                                   const Gain& g, const ZoConfig& cfg,
                                                   const StreamKey& key) {
  detail::check_dims(sys, g);
  return estimate_gradient_with(
      g, cfg,
      [&](const Gain& perturbed, Rng&) -> std::pair<double, bool> {
        const double c = exact_cost(sys, cost, perturbed);
        if (!std::isfinite(c)) return {kDivergenceGuard, true};
        return {c, false};
      },
      key);
}

struct VarianceProbeAgent {
  LinearSystem sys;
  Gain gain;
};

// Mean over replicates of ||(1/M) sum_i (ghat_i - grad C_i(K_i))||_F.
// Replicate j, agent i uses substream key.child(j).child(i).
inline double empirical_variance_probe(std::span<const VarianceProbeAgent> agents,
                                       const CostSpec& cost, const ZoConfig& cfg,
                                       const InitDist& dist, std::size_t replicates,
                                       const StreamKey& key) {
  if (replicates < 30) throw InvalidInput("empirical_variance_probe: replicates must be >= 30");
  if (agents.empty()) throw InvalidInput("empirical_variance_probe: no agents");
  std::vector<MatrixXd> exact;
  exact.reserve(agents.size());
  for (const auto& a : agents) exact.push_back(solve_lqr(a.sys, cost, a.gain).grad);

  double total = 0.0;
  for (std::size_t j = 0; j < replicates; ++j) {
    MatrixXd err = MatrixXd::Zero(exact[0].rows(), exact[0].cols());
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const GradientEstimate est =
          estimate_gradient(agents[i].sys, cost, agents[i].gain, cfg, dist, key.child(j).child(i));
      err += est.grad_hat - exact[i];
    }
    total += (err / static_cast<double>(agents.size())).norm();
  }
  return total / static_cast<double>(replicates);
}

}  // namespace fedlqr
