#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedlqr/ensemble.hpp"
#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/random.hpp"
#include "fedlqr/theory_bounds.hpp"

// Randomized checks of the analytic inequalities against exact costs and
// gradients. Ensembles follow the generator recipe A_i = A_0 + g1 Z1,
// B_i = B_0 + g2 Z2 around a caller-given nominal system.

namespace fedlqr::oracles {

struct OracleCheck {
  std::string name;
  std::size_t cases = 0;
  std::size_t violations = 0;
  std::size_t skipped = 0;   // draws rejected before checking
  double worst_ratio = 0.0;  // max measured / bound

  bool passed() const { return cases > 0 && violations == 0; }

  void record(double measured, double bound) {
    ++cases;
    const double ratio = bound > 0.0 ? measured / bound : (measured > 0.0 ? INFINITY : 0.0);
    worst_ratio = std::max(worst_ratio, ratio);
    // 1e-9 relative slack absorbs rounding in the exact oracles
    if (measured > bound * (1.0 + 1e-9) + 1e-14) ++violations;
  }
};

struct SuiteOptions {
  std::size_t cases = 50;
  std::size_t systems = 2;   // ensemble size per case
  double eps_max = 0.1;      // eps1, eps2 ~ U(0, eps_max) per case
  double gain_noise = 0.2;   // K = K_nominal^* + gain_noise N(0, 1) entries
  std::uint64_t seed = 0;
  int max_attempts = 1000;   // redraws per case before giving up
};

struct OracleCase {
  Ensemble ensemble;
  HeterogeneityMeasure eps;
  Gain gain;
};

// Draws one case: an ensemble around `nominal` and a gain near the nominal
// optimum that stabilizes every system. Returns false when no stabilizing
// draw was found within the attempt budget.
inline bool draw_case(const LinearSystem& nominal, const CostSpec& cost, const MatrixXd& z1,
                      const MatrixXd& z2, const SuiteOptions& opts, const StreamKey& key,
                      OracleCase& out, std::size_t* rejected = nullptr) {
  Rng rng = key.engine();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Gain k_nom = optimal_gain(nominal, cost);
  for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
    HeterogeneityParams het{opts.eps_max * u01(rng), opts.eps_max * u01(rng), z1, z2};
    const std::uint64_t ens_seed = rng();
    Ensemble e = generate_ensemble(nominal, opts.systems, het, ens_seed);
    Gain g = k_nom;
    for (Eigen::Index i = 0; i < g.k.size(); ++i) g.k.data()[i] += opts.gain_noise * n01(rng);
    if (first_unstabilized(e, g)) {
      if (rejected) ++*rejected;
      continue;
    }
    out.eps = measure_heterogeneity(e);
    out.ensemble = std::move(e);
    out.gain = std::move(g);
    return true;
  }
  return false;
}

// ||grad C_i(K) - grad C_j(K)|| <= eps1 h1_het + eps2 h2_het, all pairs.
inline OracleCheck gradient_heterogeneity_suite(const LinearSystem& nominal, const CostSpec& cost,
                                                const MatrixXd& z1, const MatrixXd& z2,
                                                const SuiteOptions& opts) {
  OracleCheck chk{"gradient heterogeneity"};
  const StreamKey root{opts.seed, 0x4c34};
  for (std::size_t c = 0; c < opts.cases; ++c) {
    OracleCase oc;
    if (!draw_case(nominal, cost, z1, z2, opts, root.child(c), oc, &chk.skipped)) continue;
    const auto& sys = oc.ensemble.systems;
    const HetBound hb = het_bound(sys, cost, oc.gain, oc.eps.eps1, oc.eps.eps2);
    double worst = 0.0;
    for (std::size_t i = 0; i < sys.size(); ++i) {
      const MatrixXd gi = solve_lqr(sys[i], cost, oc.gain).grad;
      for (std::size_t j = i + 1; j < sys.size(); ++j) {
        worst = std::max(worst, spectral_norm(gi - solve_lqr(sys[j], cost, oc.gain).grad));
      }
    }
    chk.record(worst, hb.bound);
  }
  return chk;
}

struct SmoothnessChecks {
  OracleCheck cost{"cost Lipschitz"};
  OracleCheck grad{"gradient Lipschitz"};
};

// For K' with ||K' - K|| <= h_delta(K):
//   |C_i(K') - C_i(K)| <= h_cost ||K' - K||,  ||grad C_i(K') - grad C_i(K)||_F <= h_grad ||K' - K||_F.
inline SmoothnessChecks smoothness_suite(const LinearSystem& nominal, const CostSpec& cost,
                                         const MatrixXd& z1, const MatrixXd& z2,
                                         const SuiteOptions& opts) {
  SmoothnessChecks out;
  const StreamKey root{opts.seed, 0x4c31};
  for (std::size_t c = 0; c < opts.cases; ++c) {
    OracleCase oc;
    if (!draw_case(nominal, cost, z1, z2, opts, root.child(c), oc, &out.cost.skipped)) continue;
    const auto& sys = oc.ensemble.systems;
    const SmoothnessConstants sm = smoothness_constants(sys, cost, oc.gain);
    Rng rng = root.child(c).child(1).engine();
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    MatrixXd d(oc.gain.k.rows(), oc.gain.k.cols());
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = n01(rng);
    d *= sm.h_delta * u01(rng) / spectral_norm(d);
    const Gain kp{oc.gain.k + d};
    double dc = 0.0;
    double dg = 0.0;
    bool unstable = false;
    for (const auto& s : sys) {
      if (!is_stabilizing(s, kp)) {
        unstable = true;
        break;
      }
      const LqrSolution a = solve_lqr(s, cost, oc.gain);
      const LqrSolution b = solve_lqr(s, cost, kp);
      dc = std::max(dc, std::abs(b.cost - a.cost));
      dg = std::max(dg, (b.grad - a.grad).norm());
    }
    if (unstable) {
      out.cost.record(INFINITY, 0.0);
      out.grad.record(INFINITY, 0.0);
      continue;
    }
    out.cost.record(dc, sm.h_cost * spectral_norm(d));
    out.grad.record(dg, sm.h_grad * d.norm());
  }
  out.grad.skipped = out.cost.skipped;
  return out;
}

struct UniformBoundChecks {
  OracleCheck e_sigma{"||E_K Sigma_K||_F <= h1"};
  OracleCheck gain{"||K|| <= h2"};
};

inline UniformBoundChecks uniform_bounds_suite(const LinearSystem& nominal, const CostSpec& cost,
                                               const MatrixXd& z1, const MatrixXd& z2,
                                               const SuiteOptions& opts) {
  UniformBoundChecks out;
  const StreamKey root{opts.seed, 0x5542};
  for (std::size_t c = 0; c < opts.cases; ++c) {
    OracleCase oc;
    if (!draw_case(nominal, cost, z1, z2, opts, root.child(c), oc, &out.e_sigma.skipped)) continue;
    const auto& sys = oc.ensemble.systems;
    const UniformBounds ub = uniform_bounds(sys, cost, oc.gain);
    double es = 0.0;
    for (const auto& s : sys) {
      const LqrSolution sol = solve_lqr(s, cost, oc.gain);
      es = std::max(es, (sol.e_k * sol.sigma_k).norm());
    }
    out.e_sigma.record(es, ub.h1);
    out.gain.record(spectral_norm(oc.gain.k), ub.h2);
  }
  out.gain.skipped = out.e_sigma.skipped;
  return out;
}

// C_i(K) - C_i(K_i^*) <= ||Sigma_{K_i^*}|| / (4 mu^2 sigma_min(R)) ||grad C_i(K)||_F^2.
inline OracleCheck gradient_domination_suite(const LinearSystem& nominal, const CostSpec& cost,
                                             const MatrixXd& z1, const MatrixXd& z2,
                                             const SuiteOptions& opts) {
  OracleCheck chk{"gradient domination"};
  const StreamKey root{opts.seed, 0x4744};
  for (std::size_t c = 0; c < opts.cases; ++c) {
    OracleCase oc;
    if (!draw_case(nominal, cost, z1, z2, opts, root.child(c), oc, &chk.skipped)) continue;
    for (const auto& s : oc.ensemble.systems) {
      const auto cert = gradient_domination_certificate(s, cost, oc.gain, optimal_gain(s, cost));
      chk.record(cert.lhs, cert.rhs);
    }
  }
  return chk;
}

struct ClosenessOptions {
  std::size_t cases = 20;
  std::size_t systems = 5;
  double eps_max = 0.05;
  std::uint64_t seed = 0;
  double step = 1e-2;  // initial step of the average-cost solver
};

// C_i(K^*) - C_i(K_i^*) <= closeness bound, with K^* the minimizer of the
// average cost and probe gains {K0, K^*, K_1^*, ..., K_M^*}.
inline OracleCheck closeness_suite(const LinearSystem& nominal, const CostSpec& cost,
                                   const Gain& k0, const MatrixXd& z1, const MatrixXd& z2,
                                   const ClosenessOptions& opts) {
  OracleCheck chk{"closeness of K* to K_i*"};
  const StreamKey root{opts.seed, 0x5435};
  GenerationOptions gen;
  gen.require_stabilized_by = k0;
  for (std::size_t c = 0; c < opts.cases; ++c) {
    Rng rng = root.child(c).engine();
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    HeterogeneityParams het{opts.eps_max * u01(rng), opts.eps_max * u01(rng), z1, z2};
    const Ensemble e = generate_ensemble(nominal, opts.systems, het, rng(), gen);
    const Gain k_star = solve_average_optimal_gain(e.systems, cost, k0, opts.step);
    std::vector<Gain> probes{k0, k_star};
    for (const auto& s : e.systems) probes.push_back(optimal_gain(s, cost));
    const HeterogeneityMeasure m = measure_heterogeneity(e);
    const auto bound = closeness_bound_per_agent(e.systems, cost, m.eps1, m.eps2, probes);
    for (std::size_t i = 0; i < e.size(); ++i) {
      const double gap = solve_lqr(e.systems[i], cost, k_star).cost -
                         solve_lqr(e.systems[i], cost, probes[2 + i]).cost;
      chk.record(gap, bound[i]);
    }
  }
  return chk;
}

}  // namespace fedlqr::oracles
