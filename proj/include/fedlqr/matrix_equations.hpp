#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "fedlqr/errors.hpp"

namespace fedlqr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline void require_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) {
    throw InvalidMatrix(std::string(what) + ": non-finite entries");
  }
}

inline void require_square(const MatrixXd& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() < 1) {
    throw InvalidMatrix(std::string(what) + ": expected a non-empty square matrix");
  }
}

inline MatrixXd symmetrized(const MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

}  // namespace detail

// Relative symmetry check: ||m - m^T||_F <= tol * max(1, ||m||_F).
inline bool is_symmetric(const MatrixXd& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).norm() <= tol * std::max(1.0, m.norm());
}

inline double spectral_norm(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(0);
}

inline double min_singular_value(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(detail::symmetrized(m),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline bool is_psd(const MatrixXd& m, double tol = 1e-10) {
  if (!is_symmetric(m)) return false;
  const double scale = std::max(1.0, std::abs(m.trace()) / m.rows());
  return min_eigenvalue(m) >= -tol * scale;
}

inline bool is_positive_definite(const MatrixXd& m) {
  return is_symmetric(m) && min_eigenvalue(m) > 0.0;
}

inline double spectral_radius(const MatrixXd& m) {
  detail::require_square(m, "spectral_radius");
  detail::require_finite(m, "spectral_radius");
  if (m.rows() == 1) return std::abs(m(0, 0));
  Eigen::EigenSolver<MatrixXd> es(m, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw SolverFailure("spectral_radius: eigenvalue iteration did not converge");
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Which discrete Lyapunov equation to solve for a closed-loop matrix F.
enum class LyapunovForm {
  kAdjoint,   // X = W + F^T X F  (value matrix P_K)
  kDual,      // X = W + F X F^T  (state covariance Sigma_K)
};

struct LyapunovOptions {
  int max_iterations = 10000;
};

// Solves the discrete Lyapunov equation by the doubling iteration
//   X_{k+1} = X_k + G_k^T X_k G_k,  G_{k+1} = G_k^2,
// which after k steps holds sum_{t < 2^k} (G^T)^t W G^t.
inline MatrixXd solve_discrete_lyapunov(const MatrixXd& f, const MatrixXd& w,
                                        LyapunovForm form = LyapunovForm::kAdjoint,
                                        const LyapunovOptions& opts = {}) {
  detail::require_square(f, "solve_discrete_lyapunov(f)");
  detail::require_square(w, "solve_discrete_lyapunov(w)");
  detail::require_finite(f, "solve_discrete_lyapunov(f)");
  detail::require_finite(w, "solve_discrete_lyapunov(w)");
  if (f.rows() != w.rows()) {
    throw InvalidMatrix("solve_discrete_lyapunov: dimension mismatch");
  }
  if (!is_symmetric(w)) {
    throw InvalidMatrix("solve_discrete_lyapunov: w is not symmetric");
  }
  const double rho = spectral_radius(f);
  if (rho >= 1.0) {
    throw UnstableSystem("solve_discrete_lyapunov: spectral radius " +
                         std::to_string(rho) + " >= 1");
  }

  MatrixXd g = (form == LyapunovForm::kAdjoint) ? f : MatrixXd(f.transpose());
  MatrixXd x = detail::symmetrized(w);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const MatrixXd increment = detail::symmetrized(g.transpose() * x * g);
    x += increment;
    if (!x.allFinite()) break;
    const double xn = x.norm();
    if (increment.norm() <= 1e-17 * xn || xn == 0.0) {
      return x;
    }
    g = g * g;
  }
  throw SolverFailure("solve_discrete_lyapunov: no convergence within iteration cap");
}

// ||X - W - F^T X F||_F / ||X||_F (or the dual form residual).
inline double lyapunov_residual(const MatrixXd& f, const MatrixXd& w,
                                const MatrixXd& x,
                                LyapunovForm form = LyapunovForm::kAdjoint) {
  const MatrixXd r = (form == LyapunovForm::kAdjoint)
                         ? MatrixXd(x - w - f.transpose() * x * f)
                         : MatrixXd(x - w - f * x * f.transpose());
  const double xn = x.norm();
  return xn > 0.0 ? r.norm() / xn : r.norm();
}

struct DareSolution {
  MatrixXd p;  // stabilizing solution
  MatrixXd k;  // optimal gain, u = -k x
  int iterations = 0;
};

struct DareOptions {
  double tolerance = 1e-13;
  int max_iterations = 100000;
};

// Stabilizing solution of P = q + a^T P a - a^T P b (r + b^T P b)^{-1} b^T P a
// by the Riccati recursion started at P = q.
inline DareSolution solve_dare(const MatrixXd& a, const MatrixXd& b,
                               const MatrixXd& q, const MatrixXd& r,
                               const DareOptions& opts = {}) {
  detail::require_square(a, "solve_dare(a)");
  detail::require_square(q, "solve_dare(q)");
  detail::require_square(r, "solve_dare(r)");
  for (const MatrixXd* m : {&a, &b, &q, &r}) detail::require_finite(*m, "solve_dare");
  if (b.rows() != a.rows() || q.rows() != a.rows() || r.rows() != b.cols()) {
    throw InvalidMatrix("solve_dare: dimension mismatch");
  }
  if (!is_positive_definite(q) || !is_positive_definite(r)) {
    throw InvalidMatrix("solve_dare: q and r must be symmetric positive definite");
  }

  MatrixXd p = detail::symmetrized(q);
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const MatrixXd btp = b.transpose() * p;
    const MatrixXd s = r + btp * b;
    const MatrixXd gain = s.ldlt().solve(btp * a);
    MatrixXd next = q + a.transpose() * p * a - a.transpose() * btp.transpose() * gain;
    next = detail::symmetrized(next);
    if (!next.allFinite()) break;
    const double change = (next - p).norm();
    p = std::move(next);
    if (change <= opts.tolerance * p.norm()) {
      const MatrixXd btp_final = b.transpose() * p;
      DareSolution sol;
      sol.k = (r + btp_final * b).ldlt().solve(btp_final * a);
      sol.p = p;
      sol.iterations = it;
      if (spectral_radius(a - b * sol.k) >= 1.0) {
        throw SolverFailure("solve_dare: converged gain is not stabilizing");
      }
      return sol;
    }
  }
  throw SolverFailure("solve_dare: Riccati recursion did not converge (pair not stabilizable?)");
}

inline double riccati_residual(const MatrixXd& a, const MatrixXd& b,
                               const MatrixXd& q, const MatrixXd& r,
                               const MatrixXd& p) {
  const MatrixXd btp = b.transpose() * p;
  const MatrixXd res = q + a.transpose() * p * a -
                       a.transpose() * btp.transpose() *
                           (r + btp * b).ldlt().solve(btp * a) -
                       p;
  return res.norm() / std::max(1e-300, p.norm());
}

}  // namespace fedlqr
