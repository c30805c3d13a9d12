#pragma once

#include <random>

#include <Eigen/Dense>

#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/random.hpp"

namespace fedlqr::testing {

inline LinearSystem nominal_system() {
  MatrixXd a(3, 3);
  a << 1.20, 0.50, 0.40,
       0.01, 0.75, 0.30,
       0.10, 0.02, 1.50;
  return {a, MatrixXd::Identity(3, 3)};
}

inline CostSpec nominal_cost() {
  return CostSpec::make(2.0 * MatrixXd::Identity(3, 3), 0.5 * MatrixXd::Identity(3, 3),
                        MatrixXd::Identity(3, 3), std::sqrt(3.0));
}

inline Gain initial_gain() { return {1.62 * MatrixXd::Identity(3, 3)}; }

// Reference optimal gain, four decimals.
inline MatrixXd reference_k_star() {
  MatrixXd k(3, 3);
  k << 1.0056, 0.4293, 0.3570,
       0.0262, 0.6239, 0.2657,
       0.1003, 0.0298, 1.2960;
  return k;
}

inline MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, scale);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

// Random stable matrix with spectral radius `rho`.
inline MatrixXd random_stable(Eigen::Index n, double rho, Rng& rng) {
  MatrixXd m = gaussian(n, n, rng);
  return m * (rho / spectral_radius(m));
}

inline MatrixXd random_spd(Eigen::Index n, Rng& rng) {
  const MatrixXd g = gaussian(n, n, rng);
  return g * g.transpose() + 0.5 * MatrixXd::Identity(n, n);
}

}  // namespace fedlqr::testing
