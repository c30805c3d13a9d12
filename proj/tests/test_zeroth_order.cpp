#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedlqr/theory_bounds.hpp"
#include "fedlqr/zeroth_order.hpp"
#include "fixtures.hpp"

using namespace fedlqr;
using namespace fedlqr::testing;

namespace {

// grad C_r(K) = E[grad C(K + V)] for V uniform in the Frobenius ball of
// radius r; exact gradients make this a low-variance reference.
MatrixXd ball_smoothed_gradient(const LinearSystem& s, const CostSpec& c, const Gain& k, double r,
                                int n, const StreamKey& key) {
  Rng rng = key.engine();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double d = static_cast<double>(k.k.size());
  MatrixXd acc = MatrixXd::Zero(k.k.rows(), k.k.cols());
  for (int i = 0; i < n; ++i) {
    const MatrixXd v = sample_frobenius_sphere(k.k.cols(), k.k.rows(), r, rng) *
                       std::pow(u01(rng), 1.0 / d);
    acc += solve_lqr(s, c, {k.k + v}).grad;
  }
  return acc / n;
}

double rel(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(FrobeniusSphere, NormIsExact) {
  Rng rng = StreamKey{21}.engine();
  for (int i = 0; i < 1000; ++i) {
    const double r = 0.01 + 0.1 * (i % 7);
    EXPECT_NEAR(sample_frobenius_sphere(1 + i % 3, 1 + i % 4, r, rng).norm(), r, 1e-14 * r);
  }
  EXPECT_THROW(sample_frobenius_sphere(2, 2, 0.0, rng), InvalidInput);
}

TEST(FrobeniusSphere, MeanIsZero) {
  Rng rng = StreamKey{21, 1}.engine();
  const int n = 100000;
  const double r = 0.1;
  MatrixXd acc = MatrixXd::Zero(2, 3);
  for (int i = 0; i < n; ++i) acc += sample_frobenius_sphere(3, 2, r, rng);
  const double five_sigma = 5.0 * r / std::sqrt(static_cast<double>(n) * 6.0);
  EXPECT_LE((acc / n).cwiseAbs().maxCoeff(), five_sigma);
}

TEST(FrobeniusSphere, ScalarCaseIsFairCoin) {
  Rng rng = StreamKey{21, 2}.engine();
  const int n = 10000;
  int plus = 0;
  for (int i = 0; i < n; ++i) {
    const double u = sample_frobenius_sphere(1, 1, 0.3, rng)(0, 0);
    ASSERT_NEAR(std::abs(u), 0.3, 1e-15);
    plus += u > 0;
  }
  const double e = n / 2.0;
  const double chi2 = ((plus - e) * (plus - e) + (n - plus - e) * (n - plus - e)) / e;
  EXPECT_LT(chi2, 10.83);  // 1 dof, p = 0.001
}

TEST(EstimateGradient, ZeroInitialStateGivesZero) {
  const auto est = estimate_gradient(nominal_system(), nominal_cost(), initial_gain(), ZoConfig{20, 15, 0.1},
                                     InitDist::point_mass(VectorXd::Zero(3)), StreamKey{1});
  for (double c : est.per_sample_costs) EXPECT_EQ(c, 0.0);
  EXPECT_EQ(est.grad_hat.norm(), 0.0);
}

TEST(EstimateGradient, PresetSettingsFiniteAndDeterministic) {
  const ZoConfig z{5, 15, 0.1};
  const auto a = estimate_gradient(nominal_system(), nominal_cost(), initial_gain(), z,
                                   InitDist::standard_normal(3), StreamKey{4, 2});
  const auto b = estimate_gradient(nominal_system(), nominal_cost(), initial_gain(), z,
                                   InitDist::standard_normal(3), StreamKey{4, 2});
  EXPECT_TRUE(a.grad_hat.allFinite());
  EXPECT_EQ(a.diverged_count, 0u);
  EXPECT_EQ(a.per_sample_costs.size(), 5u);
  EXPECT_EQ(a.grad_hat, b.grad_hat);
  EXPECT_EQ(a.per_sample_costs, b.per_sample_costs);
}

TEST(EstimateGradient, SingleSampleFormula) {
  // n_s = 1 reproduces (n_x n_u / r^2) C_hat U with the same substream
  const ZoConfig z{1, 15, 0.1};
  const StreamKey key{4, 3};
  const auto est = estimate_gradient(nominal_system(), nominal_cost(), initial_gain(), z,
                                     InitDist::standard_normal(3), key);
  Rng rng = key.child(0).engine();
  const MatrixXd u = sample_frobenius_sphere(3, 3, 0.1, rng);
  const VectorXd x0 = sample_initial_state(InitDist::standard_normal(3), rng);
  const double c = rollout_cost(nominal_system(), nominal_cost(), {initial_gain().k + u}, x0, 15);
  EXPECT_LE((est.grad_hat - (9.0 / 0.01) * c * u).norm(), 1e-12 * est.grad_hat.norm());
}

TEST(EstimateGradient, AllDivergedThrows) {
  const LinearSystem s{MatrixXd::Constant(1, 1, 1e80), MatrixXd::Ones(1, 1)};
  EXPECT_THROW(estimate_gradient(s, CostSpec::identity(1, 1), Gain::zero(1, 1), ZoConfig{3, 10, 0.1},
                                 InitDist::standard_normal(1), StreamKey{1}),
               EstimateFailed);
}

TEST(EstimateGradient, SmoothingBiasWithinTheoryBound) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const std::vector<LinearSystem> one{s};
  const MatrixXd g = solve_lqr(s, c, initial_gain()).grad;
  const double h_grad = smoothness_constants(one, c, initial_gain()).h_grad;
  for (double r : {0.1, 0.01}) {
    const MatrixXd gr = ball_smoothed_gradient(s, c, initial_gain(), r, 4000, StreamKey{8, 1});
    EXPECT_LE((gr - g).norm(), h_grad * r) << "r = " << r;
  }
}

TEST(EstimateGradient, AnalyticHookIsUnbiasedForSmoothedGradient) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const double r = 0.1;
  const MatrixXd target = ball_smoothed_gradient(s, c, initial_gain(), r, 20000, StreamKey{8, 2});
  // per-sample terms to get entrywise standard errors
  const int n = 50000;
  Rng rng = StreamKey{8, 3}.engine();
  MatrixXd sum = MatrixXd::Zero(3, 3), sq = MatrixXd::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const MatrixXd u = sample_frobenius_sphere(3, 3, r, rng);
    const MatrixXd term = (9.0 / (r * r)) * exact_cost(s, c, {initial_gain().k + u}) * u;
    sum += term;
    sq += term.cwiseProduct(term);
  }
  const MatrixXd mean = sum / n;
  const MatrixXd se = ((sq / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
  for (Eigen::Index i = 0; i < 9; ++i) {
    EXPECT_LE(std::abs(mean.data()[i] - target.data()[i]), 3.0 * se.data()[i]) << "entry " << i;
  }
  // the library hook computes the same estimator
  const auto est = estimate_gradient_analytic(s, c, initial_gain(), ZoConfig{2000, 1, r}, StreamKey{8, 4});
  EXPECT_TRUE(est.grad_hat.allFinite());
  EXPECT_EQ(est.diverged_count, 0u);
}

TEST(EstimateGradient, RolloutEstimatorConvergesToSmoothedGradient) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const double r = 0.1;
  const MatrixXd target = ball_smoothed_gradient(s, c, initial_gain(), r, 20000, StreamKey{8, 2});
  // rho(A - B K0)^100 < 1e-7, so truncation at tau = 50 is negligible
  const auto est = estimate_gradient(s, c, initial_gain(), ZoConfig{400000, 50, r},
                                     InitDist::standard_normal(3), StreamKey{8, 5});
  EXPECT_LE(rel(est.grad_hat, target), 0.05);
}

TEST(EstimateGradient, ErrorShrinksAsInverseSqrtSamples) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const double r = 0.1;
  const MatrixXd target = ball_smoothed_gradient(s, c, initial_gain(), r, 20000, StreamKey{8, 2});
  std::vector<double> logn, loge;
  for (std::size_t ns : {100u, 1000u, 10000u}) {
    double err = 0.0;
    const int reps = 20;
    for (int j = 0; j < reps; ++j) {
      err += (estimate_gradient(s, c, initial_gain(), ZoConfig{ns, 50, r}, InitDist::standard_normal(3),
                                StreamKey{8, 6, ns, static_cast<std::uint64_t>(j)})
                  .grad_hat -
              target)
                 .norm();
    }
    logn.push_back(std::log(static_cast<double>(ns)));
    loge.push_back(std::log(err / reps));
  }
  const double slope = ((loge[2] - loge[0]) / (logn[2] - logn[0]));
  EXPECT_NEAR(slope, -0.5, 0.15);
}

TEST(EstimateGradient, LongerHorizonDoesNotIncreaseError) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const double r = 0.1;
  const MatrixXd target = ball_smoothed_gradient(s, c, initial_gain(), r, 20000, StreamKey{8, 2});
  double prev = INFINITY;
  for (std::size_t tau : {1u, 2u, 5u, 15u}) {
    // common random numbers across horizons
    const double e = rel(estimate_gradient(s, c, initial_gain(), ZoConfig{100000, tau, r},
                                           InitDist::standard_normal(3), StreamKey{8, 7})
                             .grad_hat,
                         target);
    EXPECT_LE(e, prev) << "tau = " << tau;
    prev = e;
  }
}

TEST(VarianceProbe, SixteenAgentsShrinkErrorByAboutFour) {
  const ZoConfig z{5, 15, 0.1};
  const std::vector<VarianceProbeAgent> one{{nominal_system(), initial_gain()}};
  const std::vector<VarianceProbeAgent> sixteen(16, {nominal_system(), initial_gain()});
  const auto dist = InitDist::standard_normal(3);
  const double e1 = empirical_variance_probe(one, nominal_cost(), z, dist, 200, StreamKey{9, 1});
  const double e16 = empirical_variance_probe(sixteen, nominal_cost(), z, dist, 200, StreamKey{9, 2});
  EXPECT_GE(e16 / e1, 1.0 / 6.0);
  EXPECT_LE(e16 / e1, 3.0 / 8.0);
}

TEST(VarianceProbe, DeterministicAndValidated) {
  const ZoConfig z{5, 15, 0.1};
  const std::vector<VarianceProbeAgent> one{{nominal_system(), initial_gain()}};
  const auto dist = InitDist::standard_normal(3);
  EXPECT_EQ(empirical_variance_probe(one, nominal_cost(), z, dist, 30, StreamKey{9, 3}),
            empirical_variance_probe(one, nominal_cost(), z, dist, 30, StreamKey{9, 3}));
  EXPECT_THROW(empirical_variance_probe(one, nominal_cost(), z, dist, 29, StreamKey{9, 3}), InvalidInput);
}

TEST(VarianceProbe, SmallRadiusWithExactCostsIsBiasDominated) {
  // with exact costs the remaining error at small r is the smoothing bias,
  // measured here through the ball-averaged gradient
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const std::vector<LinearSystem> one{s};
  const double h_grad = smoothness_constants(one, c, initial_gain()).h_grad;
  const double r = 1e-3;
  const MatrixXd g = solve_lqr(s, c, initial_gain()).grad;
  const MatrixXd gr = ball_smoothed_gradient(s, c, initial_gain(), r, 2000, StreamKey{9, 4});
  EXPECT_LE((gr - g).norm(), h_grad * r);
}

TEST(ZoConfig, Validation) {
  EXPECT_THROW((ZoConfig{0, 15, 0.1}.validate()), InvalidInput);
  EXPECT_THROW((ZoConfig{5, 0, 0.1}.validate()), InvalidInput);
  EXPECT_THROW((ZoConfig{5, 15, 0.0}.validate()), InvalidInput);
}
