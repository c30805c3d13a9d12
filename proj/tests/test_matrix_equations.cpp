#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/matrix_equations.hpp"
#include "fixtures.hpp"

using namespace fedlqr;
using namespace fedlqr::testing;

TEST(SpectralRadius, IdentityAndZero) {
  for (int n : {1, 2, 5, 9}) {
    EXPECT_NEAR(spectral_radius(MatrixXd::Identity(n, n)), 1.0, 1e-14);
    EXPECT_EQ(spectral_radius(MatrixXd::Zero(n, n)), 0.0);
  }
}

TEST(SpectralRadius, NominalClosedLoopMatchesCharPolyRoots) {
  // roots of the characteristic polynomial, computed independently
  const double expected = 0.8348562015791385;
  const double rho = spectral_radius(nominal_system().a - 1.62 * MatrixXd::Identity(3, 3));
  EXPECT_LT(rho, 1.0);
  EXPECT_NEAR(rho, expected, 1e-12);
}

TEST(SpectralRadius, RejectsNonFinite) {
  MatrixXd m = MatrixXd::Identity(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(spectral_radius(m), InvalidMatrix);
  EXPECT_THROW(spectral_radius(MatrixXd::Zero(2, 3)), InvalidMatrix);
}

TEST(SpectralRadius, SimilarityInvariant) {
  Rng rng = StreamKey{7, 1}.engine();
  for (int c = 0; c < 50; ++c) {
    const int n = 1 + c % 5;
    const MatrixXd m = gaussian(n, n, rng);
    // well-conditioned T: identity plus a small perturbation
    const MatrixXd t = MatrixXd::Identity(n, n) + 0.2 * gaussian(n, n, rng) / std::sqrt(n);
    const double a = spectral_radius(m);
    const double b = spectral_radius(t * m * t.inverse());
    EXPECT_NEAR(b, a, 1e-7 * std::max(1.0, a));
  }
}

TEST(Lyapunov, ZeroDynamicsReturnsW) {
  Rng rng = StreamKey{7, 2}.engine();
  const MatrixXd w = random_spd(3, rng);
  EXPECT_TRUE(solve_discrete_lyapunov(MatrixXd::Zero(3, 3), w).isApprox(w, 1e-15));
}

TEST(Lyapunov, ScalarGeometricSeries) {
  const MatrixXd x = solve_discrete_lyapunov(MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1));
  EXPECT_NEAR(x(0, 0), 4.0 / 3.0, 1e-14);
}

TEST(Lyapunov, ResidualAndSeriesOnRandomStableMatrices) {
  Rng rng = StreamKey{7, 3}.engine();
  std::uniform_real_distribution<double> urho(0.1, 0.95);
  for (int c = 0; c < 100; ++c) {
    const int n = 1 + c % 5;
    const double rho = urho(rng);
    const MatrixXd f = random_stable(n, rho, rng);
    const MatrixXd w = random_spd(n, rng);
    for (auto form : {LyapunovForm::kAdjoint, LyapunovForm::kDual}) {
      const MatrixXd x = solve_discrete_lyapunov(f, w, form);
      EXPECT_LE(lyapunov_residual(f, w, x, form), 1e-10);
      EXPECT_TRUE(is_symmetric(x));
      EXPECT_TRUE(is_psd(x));
    }
    // truncated series of the adjoint form
    const int big_t = 60;
    MatrixXd sum = MatrixXd::Zero(n, n);
    MatrixXd ft = MatrixXd::Identity(n, n);
    for (int t = 0; t <= big_t; ++t) {
      sum += ft.transpose() * w * ft;
      ft = ft * f;
    }
    const MatrixXd x = solve_discrete_lyapunov(f, w);
    // the tail bound uses rho^t; non-normal f can exceed it transiently, so
    // it is scaled by the condition number of the eigenvector basis
    Eigen::EigenSolver<MatrixXd> es(f);
    const Eigen::MatrixXcd v = es.eigenvectors();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(v);
    const double kappa = svd.singularValues()(0) / svd.singularValues()(n - 1);
    const double tail = std::pow(rho, 2 * (big_t + 1)) * spectral_norm(w) * n / (1 - rho * rho);
    EXPECT_LE((x - sum).norm(), kappa * kappa * tail + 1e-12 * x.norm()) << "case " << c;
  }
}

TEST(Lyapunov, UnstableThrows) {
  EXPECT_THROW(solve_discrete_lyapunov(MatrixXd::Constant(1, 1, 1.0), MatrixXd::Ones(1, 1)),
               UnstableSystem);
  EXPECT_THROW(solve_discrete_lyapunov(1.5 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)),
               UnstableSystem);
}

TEST(Lyapunov, NominalOptimalValueMatchesDare) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const DareSolution d = solve_dare(s.a, s.b, c.q, c.r);
  const MatrixXd x = solve_discrete_lyapunov(s.a - s.b * d.k, c.q + d.k.transpose() * c.r * d.k);
  EXPECT_LE((x - d.p).norm() / d.p.norm(), 1e-8);
  EXPECT_NEAR(x.trace(), d.p.trace(), 1e-8 * d.p.trace());
}

TEST(Dare, NominalGain) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const DareSolution d = solve_dare(s.a, s.b, c.q, c.r);
  const MatrixXd rounded = reference_k_star();
  for (Eigen::Index i = 0; i < 9; ++i) EXPECT_NEAR(d.k.data()[i], rounded.data()[i], 5e-5);
  // scipy.linalg.solve_discrete_are reference
  MatrixXd ref(3, 3);
  ref << 1.0055870861376353, 0.42932858346672315, 0.35695139411430643,
         0.0261555707254799, 0.623853126343589, 0.2656745361321691,
         0.10034413214739221, 0.02984272332371563, 1.29599285595297;
  EXPECT_LE((d.k - ref).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE(riccati_residual(s.a, s.b, c.q, c.r, d.p), 1e-10);
  EXPECT_LT(spectral_radius(s.a - s.b * d.k), 1.0);
}

TEST(Dare, ZeroDynamics) {
  const MatrixXd q = 2.0 * MatrixXd::Identity(2, 2);
  const DareSolution d = solve_dare(MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2), q,
                                    MatrixXd::Identity(2, 2));
  EXPECT_TRUE(d.p.isApprox(q, 1e-14));
  EXPECT_LE(d.k.norm(), 1e-14);
}

TEST(Dare, ScalarClosedForm) {
  // p = q + p - p^2 / (r + p)  =>  p^2 - q p - q r = 0
  const double q = 2.0, r = 0.5;
  const double p = 0.5 * (q + std::sqrt(q * q + 4 * q * r));
  const DareSolution d = solve_dare(MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1),
                                    MatrixXd::Constant(1, 1, q), MatrixXd::Constant(1, 1, r));
  EXPECT_NEAR(d.p(0, 0), p, 1e-12);
  EXPECT_NEAR(d.k(0, 0), p / (r + p), 1e-12);
}

TEST(Dare, GainIsLocallyOptimal) {
  const LinearSystem s = nominal_system();
  const CostSpec c = nominal_cost();
  const Gain k{solve_dare(s.a, s.b, c.q, c.r).k};
  const double c_star = exact_cost(s, c, k);
  Rng rng = StreamKey{7, 4}.engine();
  for (int i = 0; i < 50; ++i) {
    MatrixXd d = gaussian(3, 3, rng);
    d *= 1e-3 / d.norm();
    const Gain kp{k.k + d};
    ASSERT_TRUE(is_stabilizing(s, kp));
    EXPECT_LE(c_star, exact_cost(s, c, kp));
  }
}

TEST(Dare, UnstabilizablePairFails) {
  // unstable mode with no input authority
  MatrixXd a(2, 2);
  a << 2.0, 0.0, 0.0, 0.5;
  MatrixXd b(2, 1);
  b << 0.0, 1.0;
  DareOptions opts;
  opts.max_iterations = 2000;
  EXPECT_THROW(solve_dare(a, b, MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1), opts),
               SolverFailure);
}
