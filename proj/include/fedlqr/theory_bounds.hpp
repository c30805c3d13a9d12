#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fedlqr/errors.hpp"
#include "fedlqr/lqr_analytic.hpp"

// Closed-form constants from the convergence analysis. Every "max" quantity
// is a maximum over the agents at a single gain K; suprema over the
// stabilizing set are replaced by maxima over caller-supplied probe gains.

namespace fedlqr {

struct ProblemConstants {
  double c_max = 0.0;        // max_i C_i(K)
  double c_min_opt = 0.0;    // min_i C_i(K_i^*)
  double a_max = 0.0;        // max_i ||A_i||
  double b_max = 0.0;        // max_i ||B_i||
  double abk_max = 0.0;      // max_i ||A_i - B_i K||
  double btpa_max = 0.0;     // max_i ||B_i^T P_K^i A_i||
  double rk_max = 0.0;       // max_i ||R + B_i^T P_K^i B_i||
  double q_norm = 0.0;
  double r_norm = 0.0;
  double sigma0_norm = 0.0;
  double sigma0_trace = 0.0;
  double sigma_min_q = 0.0;
  double sigma_min_r = 0.0;
  double mu = 0.0;
  double k_norm = 0.0;
  Eigen::Index n_x = 0;
  Eigen::Index n_u = 0;

  double nu() const { return static_cast<double>(std::min(n_x, n_u)); }
};

namespace detail {

inline void require_theory_inputs(std::span<const LinearSystem> systems, const CostSpec& cost) {
  if (systems.empty()) throw InvalidInput("theory bounds: no systems");
  if (!(cost.mu > 0.0)) throw InvalidInput("theory bounds: need mu = sigma_min(Sigma0) > 0");
}

}  // namespace detail

// Evaluates the agent-wise maxima at g. Throws UnstableSystem if g fails to
// stabilize some system.
inline ProblemConstants problem_constants(std::span<const LinearSystem> systems,
                                          const CostSpec& cost, const Gain& g) {
  detail::require_theory_inputs(systems, cost);
  ProblemConstants pc;
  pc.c_min_opt = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < systems.size(); ++i) {
    const LinearSystem& s = systems[i];
    detail::check_dims(s, g);
    if (!is_stabilizing(s, g)) {
      throw UnstableSystem("theory bounds: gain destabilizes system " + std::to_string(i), i);
    }
    const LqrSolution sol = solve_lqr(s, cost, g);
    pc.c_max = std::max(pc.c_max, sol.cost);
    pc.a_max = std::max(pc.a_max, spectral_norm(s.a));
    pc.b_max = std::max(pc.b_max, spectral_norm(s.b));
    pc.abk_max = std::max(pc.abk_max, spectral_norm(closed_loop(s, g)));
    pc.btpa_max = std::max(pc.btpa_max, spectral_norm(s.b.transpose() * sol.p_k * s.a));
    pc.rk_max = std::max(pc.rk_max, spectral_norm(cost.r + s.b.transpose() * sol.p_k * s.b));
    const double c_opt = solve_lqr(s, cost, optimal_gain(s, cost)).cost;
    pc.c_min_opt = std::min(pc.c_min_opt, c_opt);
  }
  pc.q_norm = spectral_norm(cost.q);
  pc.r_norm = spectral_norm(cost.r);
  pc.sigma0_norm = spectral_norm(cost.sigma0);
  pc.sigma0_trace = cost.sigma0.trace();
  pc.sigma_min_q = min_singular_value(cost.q);
  pc.sigma_min_r = min_singular_value(cost.r);
  pc.mu = cost.mu;
  pc.k_norm = spectral_norm(g.k);
  pc.n_x = systems[0].state_dim();
  pc.n_u = systems[0].input_dim();
  return pc;
}

struct UniformBounds {
  double h0 = 0.0;
  double h1 = 0.0;  // bound on ||grad C_i(K)||_F
  double h2 = 0.0;  // bound on ||K||
};

// h0 = sqrt(||R_K||_max (C_max(K) - C_min) / mu) with C_min read as the
// smallest optimal cost min_i C_i(K_i^*).
inline UniformBounds uniform_bounds(const ProblemConstants& pc) {
  UniformBounds u;
  u.h0 = std::sqrt(pc.rk_max * std::max(0.0, pc.c_max - pc.c_min_opt) / pc.mu);
  u.h1 = pc.c_max * u.h0 / pc.sigma_min_q;
  u.h2 = (u.h0 + pc.btpa_max) / pc.sigma_min_r;
  return u;
}

inline UniformBounds uniform_bounds(std::span<const LinearSystem> systems, const CostSpec& cost,
                                    const Gain& g) {
  return uniform_bounds(problem_constants(systems, cost, g));
}

struct SmoothnessConstants {
  double h_delta = 0.0;  // admissible perturbation radius
  double h_cost = 0.0;   // cost Lipschitz constant
  double h_grad = 0.0;   // gradient Lipschitz constant
};

inline SmoothnessConstants smoothness_constants(const ProblemConstants& pc) {
  SmoothnessConstants s;
  const double c = pc.c_max;
  const double cq = c / pc.sigma_min_q;            // C_max / sigma_min(Q)
  const double cqm = c / (pc.mu * pc.sigma_min_q);  // C_max / (mu sigma_min(Q))
  s.h_delta = pc.sigma_min_q * pc.mu / (4.0 * pc.b_max * c * (pc.abk_max + 1.0));
  s.h_cost = 4.0 * pc.sigma0_trace * c * pc.r_norm / (pc.mu * pc.sigma_min_q) *
             (pc.k_norm + 0.5 * s.h_delta +
              pc.b_max * pc.k_norm * pc.k_norm * (pc.abk_max + 1.0) * cqm);
  const double h0 = uniform_bounds(pc).h0;
  s.h_grad = 4.0 * cq *
                 (pc.r_norm +
                  pc.b_max * (pc.a_max + pc.b_max * (pc.k_norm + s.h_delta)) *
                      (s.h_cost * c / pc.sigma0_trace) +
                  pc.b_max * pc.b_max * c / pc.mu) +
             8.0 * cq * cq * (pc.b_max * (pc.abk_max + 1.0) / pc.mu) * h0;
  return s;
}

inline SmoothnessConstants smoothness_constants(std::span<const LinearSystem> systems,
                                                const CostSpec& cost, const Gain& g) {
  return smoothness_constants(problem_constants(systems, cost, g));
}

struct HetBound {
  double h1 = 0.0;     // coefficient of eps1
  double h2 = 0.0;     // coefficient of eps2
  double bound = 0.0;  // eps1 h1 + eps2 h2
};

// Gradient-heterogeneity coefficients h1 = h1f + h2f, h2 = h3f + h4f, each
// term evaluated in its closed form (not the recomposed 2(beta1 g1 + beta2 g2)).
inline HetBound het_coefficients(const ProblemConstants& pc) {
  const double c = pc.c_max;
  const double cq = c / pc.sigma_min_q;
  const double cqm = c / (pc.sigma_min_q * pc.mu);
  const double k = pc.k_norm;
  const double bracket =
      1.0 + 4.0 * cqm * pc.abk_max * pc.abk_max * (pc.q_norm + pc.r_norm * k * k);
  const double sigma_term = 4.0 * pc.abk_max * pc.sigma0_norm;
  const double e_bound = pc.r_norm * k + pc.b_max * c / pc.mu * (pc.b_max + pc.a_max);

  const double h1f = 2.0 * pc.b_max * c * c / (pc.sigma_min_q * pc.mu) * bracket;
  const double h2f = 2.0 / pc.mu * cq * cq * cq * sigma_term;
  const double h3f = 2.0 * e_bound * (pc.b_max * k * c / pc.mu * bracket + pc.abk_max);
  const double h4f = 2.0 * e_bound * k * cqm * cqm * sigma_term;
  HetBound hb;
  hb.h1 = h1f + h2f;
  hb.h2 = h3f + h4f;
  return hb;
}

inline HetBound het_bound(std::span<const LinearSystem> systems, const CostSpec& cost,
                          const Gain& g, double eps1, double eps2) {
  if (!(eps1 >= 0.0) || !(eps2 >= 0.0)) throw InvalidInput("het_bound: eps must be >= 0");
  HetBound hb = het_coefficients(problem_constants(systems, cost, g));
  hb.bound = eps1 * hb.h1 + eps2 * hb.h2;
  return hb;
}

// min_j mu^2 sigma_min(R) (C_j(K0) - C_j(K_j^*)) / (4 ||Sigma_{K_j^*}|| min(n_x, n_u)).
inline double admissible_het_threshold(std::span<const LinearSystem> systems,
                                       const CostSpec& cost, const Gain& k0) {
  detail::require_theory_inputs(systems, cost);
  const double nu =
      static_cast<double>(std::min(systems[0].state_dim(), systems[0].input_dim()));
  const double smr = min_singular_value(cost.r);
  double out = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < systems.size(); ++j) {
    detail::check_dims(systems[j], k0);
    if (!is_stabilizing(systems[j], k0)) {
      throw UnstableSystem("admissible_het_threshold: k0 destabilizes system " +
                               std::to_string(j),
                           j);
    }
    const LqrSolution at_star = solve_lqr(systems[j], cost, optimal_gain(systems[j], cost));
    const double gap = std::max(0.0, solve_lqr(systems[j], cost, k0).cost - at_star.cost);
    const double v =
        cost.mu * cost.mu * smr * gap / (4.0 * spectral_norm(at_star.sigma_k) * nu);
    out = std::min(out, v);
  }
  return out;
}

// Probe-set maxima standing in for suprema over the stabilizing set.
struct ProbeSuprema {
  double c_max = 0.0;
  double h_cost = 0.0;
  double h_grad = 0.0;
  double h_delta_min = std::numeric_limits<double>::infinity();
  double h1 = 0.0;      // uniform gradient bound
  double h1_het = 0.0;
  double h2_het = 0.0;
};

inline ProbeSuprema probe_suprema(std::span<const LinearSystem> systems, const CostSpec& cost,
                                  std::span<const Gain> probes) {
  if (probes.empty()) throw InvalidInput("probe set is empty");
  ProbeSuprema s;
  for (const Gain& g : probes) {
    const ProblemConstants pc = problem_constants(systems, cost, g);
    const SmoothnessConstants sm = smoothness_constants(pc);
    const HetBound hb = het_coefficients(pc);
    s.c_max = std::max(s.c_max, pc.c_max);
    s.h_cost = std::max(s.h_cost, sm.h_cost);
    s.h_grad = std::max(s.h_grad, sm.h_grad);
    s.h_delta_min = std::min(s.h_delta_min, sm.h_delta);
    s.h1 = std::max(s.h1, uniform_bounds(pc).h1);
    s.h1_het = std::max(s.h1_het, hb.h1);
    s.h2_het = std::max(s.h2_het, hb.h2);
  }
  return s;
}

// Per-agent bound on C_i(K^*) - C_i(K_i^*):
//   h_cost ||Sigma_{K_i^*}|| / (mu^2 sigma_min(R)) x
//   + nu C_max / (mu^2 sigma_min(R) sigma_min(Q)) x^2,  x = eps1 h1_het + eps2 h2_het.
inline std::vector<double> closeness_bound_per_agent(std::span<const LinearSystem> systems,
                                                     const CostSpec& cost, double eps1,
                                                     double eps2,
                                                     std::span<const Gain> probes) {
  if (probes.empty()) throw InvalidInput("closeness_bound: probe set is empty");
  if (!(eps1 >= 0.0) || !(eps2 >= 0.0)) throw InvalidInput("closeness_bound: eps must be >= 0");
  const ProbeSuprema s = probe_suprema(systems, cost, probes);
  const double nu =
      static_cast<double>(std::min(systems[0].state_dim(), systems[0].input_dim()));
  const double mu2r = cost.mu * cost.mu * min_singular_value(cost.r);
  const double x = eps1 * s.h1_het + eps2 * s.h2_het;
  std::vector<double> out;
  out.reserve(systems.size());
  for (const auto& sys : systems) {
    const double sig_star = spectral_norm(solve_lqr(sys, cost, optimal_gain(sys, cost)).sigma_k);
    out.push_back(s.h_cost * sig_star / mu2r * x +
                  nu * s.c_max / (mu2r * min_singular_value(cost.q)) * x * x);
  }
  return out;
}

inline double closeness_bound(std::span<const LinearSystem> systems, const CostSpec& cost,
                              double eps1, double eps2, std::span<const Gain> probes) {
  const auto per = closeness_bound_per_agent(systems, cost, eps1, eps2, probes);
  return *std::max_element(per.begin(), per.end());
}

// Horizon making the truncated cost eps-accurate:
//   n_x C_max^2 (||Q|| + ||R|| ||K||^2) / (eps mu sigma_min(Q)^2).
inline double horizon_bound(const ProblemConstants& pc, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("horizon_bound: eps must be positive");
  return static_cast<double>(pc.n_x) * pc.c_max * pc.c_max *
         (pc.q_norm + pc.r_norm * pc.k_norm * pc.k_norm) /
         (eps * pc.mu * pc.sigma_min_q * pc.sigma_min_q);
}

namespace detail {

inline std::size_t ceil_at_least_one(double v) {
  if (!(v < 9.0e18)) return static_cast<std::size_t>(9.0e18);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(v)));
}

}  // namespace detail

// Rollout length for ZO estimation at radius r and tolerance eps: the
// horizon bound evaluated at r eps / (4 n_x n_u), ceiled, at least 1.
inline std::size_t horizon_prescription(std::span<const LinearSystem> systems,
                                        const CostSpec& cost, const Gain& g, double r,
                                        double eps) {
  if (!(r > 0.0) || !(eps > 0.0)) {
    throw InvalidInput("horizon_prescription: r and eps must be positive");
  }
  const ProblemConstants pc = problem_constants(systems, cost, g);
  const double nxnu = static_cast<double>(pc.n_x * pc.n_u);
  return detail::ceil_at_least_one(horizon_bound(pc, r * eps / (4.0 * nxnu)));
}

// Smoothing-radius bound min{h_delta, C_max / h_cost, x / h_grad} at one gain.
inline double radius_prescription(std::span<const LinearSystem> systems, const CostSpec& cost,
                                  const Gain& g, double x) {
  const ProblemConstants pc = problem_constants(systems, cost, g);
  const SmoothnessConstants sm = smoothness_constants(pc);
  return std::min({sm.h_delta, pc.c_max / sm.h_cost, x / sm.h_grad});
}

// Same bound tightened by min_i C_i(K0) / h_cost.
inline double radius_prescription_global(std::span<const LinearSystem> systems,
                                         const CostSpec& cost, const Gain& g, const Gain& k0,
                                         double x) {
  const SmoothnessConstants sm = smoothness_constants(systems, cost, g);
  double c0_min = std::numeric_limits<double>::infinity();
  for (const auto& sys : systems) c0_min = std::min(c0_min, exact_cost(sys, cost, k0));
  return std::min({c0_min / sm.h_cost, sm.h_delta, radius_prescription(systems, cost, g, x)});
}

// Infinite-horizon sample bound 8 sigma^2 nu / eps^2 log((n_x + n_u) / delta)
// with sigma^2 = (2 n_x n_u C_max / r)^2 + (eps/2 + h1)^2.
inline double sample_bound(const ProblemConstants& pc, double h1, double r, double eps,
                           double delta) {
  const double nxnu = static_cast<double>(pc.n_x * pc.n_u);
  const double a = 2.0 * nxnu * pc.c_max / r;
  const double b = eps / 2.0 + h1;
  const double sigma2 = a * a + b * b;
  return 8.0 * sigma2 * pc.nu() / (eps * eps) *
         std::log(static_cast<double>(pc.n_x + pc.n_u) / delta);
}

// Per-agent sample count for truncated rollouts:
//   ceil(32 sigma^2 nu / eps^2 log(M L (n_x + n_u) / delta) / (M L))
// with sigma^2 = (2 n_x n_u h^2 C_max / (r mu))^2 + (eps/2 + h1)^2.
inline std::size_t sample_size_prescription(std::span<const LinearSystem> systems,
                                            const CostSpec& cost, const Gain& g, double r,
                                            double eps, double delta, std::size_t m,
                                            std::size_t big_l, double h, double mu) {
  if (!(r > 0.0) || !(eps > 0.0) || !(delta > 0.0 && delta < 1.0) || m < 1 || big_l < 1 ||
      !(h > 0.0) || !(mu > 0.0)) {
    throw InvalidInput("sample_size_prescription: invalid scalar argument");
  }
  const ProblemConstants pc = problem_constants(systems, cost, g);
  const double h1 = uniform_bounds(pc).h1;
  const double nxnu = static_cast<double>(pc.n_x * pc.n_u);
  const double ml = static_cast<double>(m * big_l);
  const double a = 2.0 * nxnu * h * h * pc.c_max / (r * mu);
  const double b = eps / 2.0 + h1;
  const double sigma2 = a * a + b * b;
  const double total = 32.0 * sigma2 * pc.nu() / (eps * eps) *
                       std::log(ml * static_cast<double>(pc.n_x + pc.n_u) / delta);
  return detail::ceil_at_least_one(total / ml);
}

// Per-round contraction 1 - eta mu^2 sigma_min(R) / ||Sigma_{K^*}|| of the
// model-based gap for a single system.
inline double linear_rate_factor(const LinearSystem& sys, const CostSpec& cost, double eta) {
  if (!(cost.mu > 0.0)) throw InvalidInput("linear_rate_factor: need mu > 0");
  const double sig = spectral_norm(solve_lqr(sys, cost, optimal_gain(sys, cost)).sigma_k);
  return 1.0 - eta * cost.mu * cost.mu * min_singular_value(cost.r) / sig;
}

// Advisory model-free step-size: 1/2 min{h_delta mu / (H^2 (h1 + sqrt eps)), 1, 1/(32 h_grad)}
// from probe-set suprema. Not enforced by run().
inline double model_free_step_prescription(std::span<const LinearSystem> systems,
                                           const CostSpec& cost, std::span<const Gain> probes,
                                           double eps) {
  const ProbeSuprema s = probe_suprema(systems, cost, probes);
  const double h2 = cost.h_bound * cost.h_bound;
  return 0.5 * std::min({s.h_delta_min * cost.mu / (h2 * (s.h1 + std::sqrt(eps))), 1.0,
                         1.0 / (32.0 * s.h_grad)});
}

// Advisory model-based local step-size min{h_delta / h1, 1 / (4 h_grad)}.
inline double model_based_local_step_prescription(std::span<const LinearSystem> systems,
                                                  const CostSpec& cost,
                                                  std::span<const Gain> probes) {
  const ProbeSuprema s = probe_suprema(systems, cost, probes);
  return std::min(s.h_delta_min / s.h1, 1.0 / (4.0 * s.h_grad));
}

}  // namespace fedlqr
