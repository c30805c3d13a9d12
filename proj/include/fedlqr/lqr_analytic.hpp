#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedlqr/errors.hpp"
#include "fedlqr/matrix_equations.hpp"

namespace fedlqr {

// One agent's dynamics x_{t+1} = a x_t + b u_t.
struct LinearSystem {
  MatrixXd a;  // n_x x n_x
  MatrixXd b;  // n_x x n_u

  Eigen::Index state_dim() const { return a.rows(); }
  Eigen::Index input_dim() const { return b.cols(); }

  void validate() const {
    if (a.rows() != a.cols() || a.rows() < 1 || b.rows() != a.rows() || b.cols() < 1) {
      throw InvalidInput("LinearSystem: inconsistent dimensions");
    }
    if (!a.allFinite() || !b.allFinite()) {
      throw InvalidInput("LinearSystem: non-finite entries");
    }
  }
};

// Linear state feedback u = -k x.
struct Gain {
  MatrixXd k;  // n_u x n_x

  static Gain zero(Eigen::Index n_u, Eigen::Index n_x) { return {MatrixXd::Zero(n_u, n_x)}; }
};

// Shared quadratic cost and initial-state second moment.
//
// `mu` is sigma_min(sigma0). It is recomputed by make() and may be zero for a
// point-mass initial state; evaluators that divide by it reject mu <= 0.
struct CostSpec {
  MatrixXd q;
  MatrixXd r;
  MatrixXd sigma0;
  double mu = 1.0;
  double h_bound = 1.0;  // a.s. bound on ||x0||, only used by the theory bounds

  static CostSpec make(MatrixXd q, MatrixXd r, MatrixXd sigma0, double h_bound = 1.0) {
    CostSpec c{std::move(q), std::move(r), std::move(sigma0), 0.0, h_bound};
    c.mu = std::max(0.0, min_eigenvalue(c.sigma0));
    c.validate();
    return c;
  }

  // Q = q_scale I, R = r_scale I, Sigma0 = I.
  static CostSpec identity(Eigen::Index n_x, Eigen::Index n_u, double q_scale = 1.0,
                           double r_scale = 1.0, double h_bound = 1.0) {
    return make(q_scale * MatrixXd::Identity(n_x, n_x), r_scale * MatrixXd::Identity(n_u, n_u),
                MatrixXd::Identity(n_x, n_x), h_bound);
  }

  void validate() const {
    if (!is_positive_definite(q)) throw InvalidInput("CostSpec: q must be positive definite");
    if (!is_positive_definite(r)) throw InvalidInput("CostSpec: r must be positive definite");
    if (sigma0.rows() != q.rows() || !is_psd(sigma0)) {
      throw InvalidInput("CostSpec: sigma0 must be PSD with the state dimension");
    }
    if (std::abs(mu - std::max(0.0, min_eigenvalue(sigma0))) > 1e-9 * std::max(1.0, mu)) {
      throw InvalidInput("CostSpec: mu does not match sigma_min(sigma0)");
    }
    if (!(h_bound > 0.0)) throw InvalidInput("CostSpec: h_bound must be positive");
  }
};

// Analytic quantities of one (system, gain) pair.
struct LqrSolution {
  MatrixXd p_k;      // value matrix
  MatrixXd sigma_k;  // sum_t E[x_t x_t^T]
  MatrixXd e_k;      // (R + B^T P B) K - B^T P A
  double cost = 0.0; // tr(P_K Sigma0)
  MatrixXd grad;     // 2 E_K Sigma_K
};

namespace detail {

inline void check_dims(const LinearSystem& sys, const Gain& g) {
  sys.validate();
  if (g.k.rows() != sys.input_dim() || g.k.cols() != sys.state_dim()) {
    throw InvalidInput("gain dimensions do not match the system");
  }
  if (!g.k.allFinite()) throw InvalidInput("gain has non-finite entries");
}

}  // namespace detail

inline MatrixXd closed_loop(const LinearSystem& sys, const Gain& g) {
  return sys.a - sys.b * g.k;
}

inline double closed_loop_spectral_radius(const LinearSystem& sys, const Gain& g) {
  detail::check_dims(sys, g);
  return spectral_radius(closed_loop(sys, g));
}

inline constexpr double kStabilityMargin = 1e-12;

inline bool is_stabilizing(const LinearSystem& sys, const Gain& g) {
  return closed_loop_spectral_radius(sys, g) < 1.0 - kStabilityMargin;
}

inline LqrSolution solve_lqr(const LinearSystem& sys, const CostSpec& cost, const Gain& g) {
  detail::check_dims(sys, g);
  const MatrixXd f = closed_loop(sys, g);
  if (spectral_radius(f) >= 1.0 - kStabilityMargin) {
    throw UnstableSystem("solve_lqr: gain is not stabilizing");
  }
  LqrSolution s;
  const MatrixXd stage = cost.q + g.k.transpose() * cost.r * g.k;
  s.p_k = solve_discrete_lyapunov(f, detail::symmetrized(stage), LyapunovForm::kAdjoint);
  s.sigma_k = solve_discrete_lyapunov(f, cost.sigma0, LyapunovForm::kDual);
  const MatrixXd btp = sys.b.transpose() * s.p_k;
  s.e_k = (cost.r + btp * sys.b) * g.k - btp * sys.a;
  s.cost = (s.p_k * cost.sigma0).trace();
  s.grad = 2.0 * s.e_k * s.sigma_k;
  return s;
}

// C(K) = tr(P_K Sigma0), +infinity when K does not stabilize.
inline double exact_cost(const LinearSystem& sys, const CostSpec& cost, const Gain& g) {
  if (!is_stabilizing(sys, g)) return std::numeric_limits<double>::infinity();
  return solve_lqr(sys, cost, g).cost;
}

// Locally optimal gain K_i^* from the DARE.
inline Gain optimal_gain(const LinearSystem& sys, const CostSpec& cost) {
  sys.validate();
  return {solve_dare(sys.a, sys.b, cost.q, cost.r).k};
}

struct GradientDominationCertificate {
  double lhs = 0.0;  // C(K) - C(K*)
  double rhs = 0.0;  // ||Sigma_{K*}|| / (4 mu^2 sigma_min(R)) ||grad C(K)||_F^2
  bool holds(double slack = 1e-9) const { return lhs <= rhs + slack * (1.0 + std::abs(rhs)); }
};

inline GradientDominationCertificate gradient_domination_certificate(const LinearSystem& sys,
                                                                      const CostSpec& cost,
                                                                      const Gain& g,
                                                                      const Gain& k_star) {
  if (!(cost.mu > 0.0)) throw InvalidInput("gradient domination needs mu > 0");
  const LqrSolution at_k = solve_lqr(sys, cost, g);
  const LqrSolution at_star = solve_lqr(sys, cost, k_star);
  GradientDominationCertificate c;
  c.lhs = at_k.cost - at_star.cost;
  c.rhs = spectral_norm(at_star.sigma_k) /
          (4.0 * cost.mu * cost.mu * min_singular_value(cost.r)) * at_k.grad.squaredNorm();
  return c;
}

struct AverageCostAndGradient {
  double cost = 0.0;
  MatrixXd grad;
};

// (1/M) sum_i C^(i)(K) and (1/M) sum_i grad C^(i)(K), accumulated in index order.
inline AverageCostAndGradient average_cost_and_gradient(std::span<const LinearSystem> systems,
                                                        const CostSpec& cost, const Gain& g) {
  if (systems.empty()) throw InvalidInput("average_cost_and_gradient: no systems");
  AverageCostAndGradient out;
  out.grad = MatrixXd::Zero(g.k.rows(), g.k.cols());
  for (std::size_t i = 0; i < systems.size(); ++i) {
    detail::check_dims(systems[i], g);
    if (!is_stabilizing(systems[i], g)) {
      throw UnstableSystem("gain destabilizes system " + std::to_string(i), i);
    }
    const LqrSolution s = solve_lqr(systems[i], cost, g);
    out.cost += s.cost;
    out.grad += s.grad;
  }
  const double m = static_cast<double>(systems.size());
  out.cost /= m;
  out.grad /= m;
  return out;
}

struct AverageOptimalOptions {
  double tol = -1.0;  // <= 0 selects 1e-10 * (1 + c_avg(k0))
  long max_iterations = 1'000'000;
};

struct AverageOptimalResult {
  Gain gain;
  double cost = 0.0;
  double grad_norm = 0.0;
  long iterations = 0;
};

// Minimizes the average cost by gradient descent with backtracking.
//
// A trial step is rejected (and the step halved) when it destabilizes any
// system or raises c_avg beyond rounding; accepted steps let the step grow
// back toward the caller's `step`, never above it.
inline AverageOptimalResult solve_average_optimal_gain_detailed(
    std::span<const LinearSystem> systems, const CostSpec& cost, const Gain& k0, double step,
    const AverageOptimalOptions& opts = {}) {
  if (!(step > 0.0)) throw InvalidInput("solve_average_optimal_gain: step must be positive");
  for (std::size_t i = 0; i < systems.size(); ++i) {
    if (!is_stabilizing(systems[i], k0)) {
      throw UnstableSystem("k0 destabilizes system " + std::to_string(i), i);
    }
  }
  AverageCostAndGradient cur = average_cost_and_gradient(systems, cost, k0);
  const double tol = opts.tol > 0.0 ? opts.tol : 1e-10 * (1.0 + cur.cost);
  constexpr double kRoundoff = 64.0 * std::numeric_limits<double>::epsilon();
  const double min_step = step * 1e-12;

  Gain k = k0;
  double h = step;
  long it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (cur.grad.norm() <= tol) {
      return {k, cur.cost, cur.grad.norm(), it};
    }
    for (;;) {
      Gain trial{k.k - h * cur.grad};
      bool stable = true;
      for (const auto& sys : systems) {
        if (!is_stabilizing(sys, trial)) {
          stable = false;
          break;
        }
      }
      if (stable) {
        AverageCostAndGradient next = average_cost_and_gradient(systems, cost, trial);
        if (next.cost <= cur.cost * (1.0 + kRoundoff)) {
          k = std::move(trial);
          cur = std::move(next);
          h = std::min(step, 2.0 * h);
          break;
        }
      }
      h *= 0.5;
      if (h < min_step) {
        throw StepTooLarge("solve_average_optimal_gain: backtracking exhausted (step " +
                           std::to_string(step) + " too large for this ensemble)");
      }
    }
  }
  throw SolverFailure("solve_average_optimal_gain: iteration cap reached, ||grad|| = " +
                      std::to_string(cur.grad.norm()));
}

inline Gain solve_average_optimal_gain(std::span<const LinearSystem> systems,
                                       const CostSpec& cost, const Gain& k0, double step,
                                       double tol = -1.0) {
  AverageOptimalOptions opts;
  opts.tol = tol;
  return solve_average_optimal_gain_detailed(systems, cost, k0, step, opts).gain;
}

}  // namespace fedlqr
