#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedlqr/ensemble.hpp"
#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/theory_bounds.hpp"
#include "fixtures.hpp"

using namespace fedlqr;
using namespace fedlqr::testing;

namespace {

CostSpec ones_cost() {
  const VectorXd x0 = VectorXd::Ones(3);
  return CostSpec::make(2.0 * MatrixXd::Identity(3, 3), 0.5 * MatrixXd::Identity(3, 3),
                        x0 * x0.transpose());
}

// Random (system, gain) pair with the gain stabilizing; dims up to (3, 3).
struct Pair {
  LinearSystem sys;
  Gain g;
  CostSpec cost;
};

Pair random_pair(Rng& rng, int c) {
  const Eigen::Index n_x = 1 + c % 3;
  const Eigen::Index n_u = 1 + (c / 3) % 3;
  for (;;) {
    LinearSystem s{gaussian(n_x, n_x, rng, 0.6), gaussian(n_x, n_u, rng)};
    Gain g{gaussian(n_u, n_x, rng, 0.3)};
    if (closed_loop_spectral_radius(s, g) < 0.9) {
      return {s, g, CostSpec::make(random_spd(n_x, rng), random_spd(n_u, rng), random_spd(n_x, rng))};
    }
  }
}

}  // namespace

TEST(IsStabilizing, Examples) {
  EXPECT_TRUE(is_stabilizing(nominal_system(), initial_gain()));
  const LinearSystem unstable{MatrixXd::Constant(1, 1, 2.0), MatrixXd::Zero(1, 1)};
  for (double k : {-10.0, 0.0, 3.0}) EXPECT_FALSE(is_stabilizing(unstable, {MatrixXd::Constant(1, 1, k)}));
  EXPECT_TRUE(is_stabilizing({MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1)}, Gain::zero(1, 1)));
}

TEST(SolveLqr, ReferenceCostsFromOnesInitialState) {
  const LinearSystem s = nominal_system();
  const CostSpec c = ones_cost();
  EXPECT_NEAR(solve_lqr(s, c, initial_gain()).cost, 18.4049, 1e-2);
  EXPECT_NEAR(solve_lqr(s, c, {reference_k_star()}).cost, 9.5220, 1e-2);
  EXPECT_NEAR(solve_lqr(s, c, optimal_gain(s, c)).cost, 9.521978096754758, 1e-9);
}

TEST(SolveLqr, MatchesScipyReference) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const LqrSolution sol = solve_lqr(s, c, initial_gain());
  EXPECT_NEAR(sol.cost, 32.688143992936524, 1e-10);
  MatrixXd grad(3, 3);
  grad << 41.24209221658358, -41.42701414404114, -5.804279305179819,
          -114.07481320052825, 181.05773486591826, -8.621676214479503,
          14.17369839030923, -32.02767731520013, 6.783652888424139;
  EXPECT_LE((sol.grad - grad).norm(), 1e-9 * grad.norm());
}

TEST(SolveLqr, GradientVanishesAtOptimum) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const double g0 = solve_lqr(s, c, initial_gain()).grad.norm();
  EXPECT_LE(solve_lqr(s, c, optimal_gain(s, c)).grad.norm(), 1e-7 * g0);
}

TEST(SolveLqr, UnstableGainThrows) {
  EXPECT_THROW(solve_lqr(nominal_system(), nominal_cost(), Gain::zero(3, 3)), UnstableSystem);
  EXPECT_TRUE(std::isinf(exact_cost(nominal_system(), nominal_cost(), Gain::zero(3, 3))));
}

TEST(SolveLqr, GradientMatchesCentralDifferences) {
  Rng rng = StreamKey{11, 1}.engine();
  for (int c = 0; c < 100; ++c) {
    const Pair p = random_pair(rng, c);
    const MatrixXd g = solve_lqr(p.sys, p.cost, p.g).grad;
    MatrixXd fd(g.rows(), g.cols());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      Gain plus = p.g, minus = p.g;
      plus.k.data()[i] += h;
      minus.k.data()[i] -= h;
      fd.data()[i] = (exact_cost(p.sys, p.cost, plus) - exact_cost(p.sys, p.cost, minus)) / (2 * h);
    }
    EXPECT_LE((g - fd).norm() / std::max(g.norm(), 1e-8), 1e-5) << "case " << c;
  }
}

TEST(SolveLqr, CostEqualsTraceOfValueWithSigma0) {
  Rng rng = StreamKey{11, 2}.engine();
  for (int c = 0; c < 20; ++c) {
    const Pair p = random_pair(rng, c);
    const LqrSolution s = solve_lqr(p.sys, p.cost, p.g);
    // tr(P Sigma0) = tr((Q + K^T R K) Sigma_K)
    const double alt = ((p.cost.q + p.g.k.transpose() * p.cost.r * p.g.k) * s.sigma_k).trace();
    EXPECT_NEAR(s.cost, alt, 1e-9 * s.cost);
  }
}

TEST(GradientDomination, AtOptimumBothSidesVanish) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const Gain ks = optimal_gain(s, c);
  const auto cert = gradient_domination_certificate(s, c, ks, ks);
  EXPECT_NEAR(cert.lhs, 0.0, 1e-9);
  EXPECT_NEAR(cert.rhs, 0.0, 1e-9);
  EXPECT_TRUE(cert.holds());
}

TEST(GradientDomination, NominalAtK0AndNearOptimum) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const Gain ks = optimal_gain(s, c);
  EXPECT_TRUE(gradient_domination_certificate(s, c, initial_gain(), ks).holds());
  Rng rng = StreamKey{11, 3}.engine();
  int checked = 0;
  while (checked < 100) {
    const Gain g{ks.k + gaussian(3, 3, rng, 0.1)};
    if (!is_stabilizing(s, g)) continue;
    const auto cert = gradient_domination_certificate(s, c, g, ks);
    EXPECT_GE(cert.lhs, -1e-9);
    EXPECT_TRUE(cert.holds()) << cert.lhs << " > " << cert.rhs;
    ++checked;
  }
}

TEST(GradientDomination, PointMassRejected) {
  const VectorXd x0 = VectorXd::Ones(3);
  const CostSpec c = ones_cost();
  EXPECT_THROW(gradient_domination_certificate(nominal_system(), c, initial_gain(), initial_gain()),
               InvalidInput);
}

TEST(AverageCost, SingleAndIdenticalSystems) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const LqrSolution one = solve_lqr(s, c, initial_gain());
  for (std::size_t m : {1u, 4u}) {
    const std::vector<LinearSystem> sys(m, s);
    const auto avg = average_cost_and_gradient(sys, c, initial_gain());
    EXPECT_NEAR(avg.cost, one.cost, 1e-12 * one.cost);
    EXPECT_LE((avg.grad - one.grad).norm(), 1e-12 * one.grad.norm());
  }
  EXPECT_THROW(average_cost_and_gradient(std::vector<LinearSystem>{}, c, initial_gain()), InvalidInput);
}

TEST(AverageCost, Fig1EnsembleAtK0) {
  GenerationOptions gen;
  gen.require_stabilized_by = initial_gain();
  gen.max_spectral_radius = 0.9;
  const Ensemble e = generate_ensemble(nominal_system(), 10,
                                       HeterogeneityParams::identity_masks(0.5, 0.5, 3, 3), 0, gen);
  ASSERT_FALSE(first_unstabilized(e, initial_gain()));
  const auto avg = average_cost_and_gradient(e.systems, nominal_cost(), initial_gain());
  EXPECT_TRUE(std::isfinite(avg.cost));
  EXPECT_TRUE(avg.grad.allFinite());
  // seed 0 ensemble; value from scipy solve_discrete_lyapunov on the dumped systems
  EXPECT_NEAR(avg.cost, 21.782520269106886, 1e-9);
}

TEST(AverageOptimal, SingleSystemMatchesDare) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const Gain ks = optimal_gain(s, c);
  const std::vector<LinearSystem> one{s};
  const std::vector<LinearSystem> many(3, s);
  EXPECT_LE((solve_average_optimal_gain(one, c, initial_gain(), 1e-2).k - ks.k).norm(), 1e-6);
  EXPECT_LE((solve_average_optimal_gain(many, c, initial_gain(), 1e-2).k - ks.k).norm(), 1e-6);
}

TEST(AverageOptimal, Fig1EnsembleGapsAreNonnegativeAndBounded) {
  const CostSpec c = nominal_cost();
  GenerationOptions gen;
  gen.require_stabilized_by = initial_gain();
  const Ensemble e = generate_ensemble(nominal_system(), 5,
                                       HeterogeneityParams::identity_masks(0.05, 0.05, 3, 3), 3, gen);
  const Gain k_star = solve_average_optimal_gain(e.systems, c, initial_gain(), 1e-2);
  std::vector<Gain> probes{initial_gain(), k_star};
  for (const auto& s : e.systems) probes.push_back(optimal_gain(s, c));
  const auto m = measure_heterogeneity(e);
  const auto bound = closeness_bound_per_agent(e.systems, c, m.eps1, m.eps2, probes);
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double gap = exact_cost(e.systems[i], c, k_star) - exact_cost(e.systems[i], c, probes[2 + i]);
    EXPECT_GE(gap, -1e-9);
    EXPECT_LE(gap, bound[i]);
  }
}

TEST(AverageOptimal, RejectsBadInputs) {
  const std::vector<LinearSystem> one{nominal_system()};
  EXPECT_THROW(solve_average_optimal_gain(one, nominal_cost(), initial_gain(), 0.0), InvalidInput);
  EXPECT_THROW(solve_average_optimal_gain(one, nominal_cost(), Gain::zero(3, 3), 1e-2), UnstableSystem);
}
