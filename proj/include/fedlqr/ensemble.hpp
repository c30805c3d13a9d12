#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedlqr/errors.hpp"
#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/random.hpp"

namespace fedlqr {

struct Ensemble {
  std::vector<LinearSystem> systems;
  std::size_t nominal_index = 0;

  std::size_t size() const { return systems.size(); }
  const LinearSystem& nominal() const { return systems.at(nominal_index); }
};

// Perturbation recipe: A_i = A_0 + gamma1_i z1, B_i = B_0 + gamma2_i z2 with
// gamma1_i ~ U(0, eps1), gamma2_i ~ U(0, eps2).
struct HeterogeneityParams {
  double eps1 = 0.0;
  double eps2 = 0.0;
  MatrixXd z1;
  MatrixXd z2;

  static HeterogeneityParams identity_masks(double eps1, double eps2, Eigen::Index n_x,
                                            Eigen::Index n_u) {
    return {eps1, eps2, MatrixXd::Identity(n_x, n_x), MatrixXd::Identity(n_x, n_u)};
  }
};

struct GenerationOptions {
  // When set, systems 2..M are redrawn from their own substream until this
  // gain gives them a closed-loop spectral radius of at most max_spectral_radius.
  std::optional<Gain> require_stabilized_by;
  double max_spectral_radius = 1.0 - kStabilityMargin;
  int max_redraws = 10000;
};

struct GenerationReport {
  std::vector<int> redraws;  // per system
};

// Systems 2..M draw their gammas from substream (seed, i), so system i does
// not depend on M. System 1 is the unmodified nominal.
inline Ensemble generate_ensemble(const LinearSystem& nominal, std::size_t m,
                                  const HeterogeneityParams& het, std::uint64_t rng_seed,
                                  const GenerationOptions& opts = {},
                                  GenerationReport* report = nullptr) {
  nominal.validate();
  if (m < 1) throw InvalidInput("generate_ensemble: m must be >= 1");
  if (!(het.eps1 >= 0.0) || !(het.eps2 >= 0.0) || !std::isfinite(het.eps1) ||
      !std::isfinite(het.eps2)) {
    throw InvalidInput("generate_ensemble: eps1, eps2 must be finite and nonnegative");
  }
  if (opts.require_stabilized_by && !(opts.max_spectral_radius > 0.0 &&
                                      opts.max_spectral_radius < 1.0)) {
    throw InvalidInput("generate_ensemble: max_spectral_radius must lie in (0, 1)");
  }
  if (het.z1.rows() != nominal.a.rows() || het.z1.cols() != nominal.a.cols() ||
      het.z2.rows() != nominal.b.rows() || het.z2.cols() != nominal.b.cols()) {
    throw InvalidInput("generate_ensemble: mask dimensions do not match the nominal system");
  }

  Ensemble e;
  e.nominal_index = 0;
  e.systems.reserve(m);
  e.systems.push_back(nominal);
  if (report) report->redraws.assign(m, 0);

  const StreamKey root(rng_seed);
  for (std::size_t i = 1; i < m; ++i) {
    Rng rng = root.child(i).engine();
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    int redraws = 0;
    for (;;) {
      const double g1 = het.eps1 * u01(rng);
      const double g2 = het.eps2 * u01(rng);
      LinearSystem sys{nominal.a + g1 * het.z1, nominal.b + g2 * het.z2};
      if (!opts.require_stabilized_by ||
          closed_loop_spectral_radius(sys, *opts.require_stabilized_by) <=
              opts.max_spectral_radius) {
        e.systems.push_back(std::move(sys));
        break;
      }
      if (++redraws > opts.max_redraws) {
        throw PreconditionFailed("generate_ensemble: could not draw system " +
                                 std::to_string(i + 1) +
                                 " stabilized by the required gain");
      }
    }
    if (report) report->redraws[i] = redraws;
  }
  return e;
}

struct HeterogeneityMeasure {
  double eps1 = 0.0;
  double eps2 = 0.0;
};

// Max pairwise spectral-norm distance of the A and B matrices.
inline HeterogeneityMeasure measure_heterogeneity(const Ensemble& e) {
  HeterogeneityMeasure h;
  for (std::size_t i = 0; i < e.size(); ++i) {
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      h.eps1 = std::max(h.eps1, spectral_norm(e.systems[i].a - e.systems[j].a));
      h.eps2 = std::max(h.eps2, spectral_norm(e.systems[i].b - e.systems[j].b));
    }
  }
  return h;
}

// Index of the first system the gain fails to stabilize, if any.
inline std::optional<std::size_t> first_unstabilized(const Ensemble& e, const Gain& g) {
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!is_stabilizing(e.systems[i], g)) return i;
  }
  return std::nullopt;
}

struct InitDist {
  enum class Kind { kStandardNormal, kBoundedSphere, kPointMass };

  Kind kind = Kind::kStandardNormal;
  Eigen::Index dim = 1;
  double radius = 1.0;  // kBoundedSphere
  VectorXd point;       // kPointMass

  static InitDist standard_normal(Eigen::Index dim) { return {Kind::kStandardNormal, dim, 1.0, {}}; }
  static InitDist bounded_sphere(Eigen::Index dim, double radius) {
    if (!(radius > 0.0)) throw InvalidInput("InitDist: sphere radius must be positive");
    return {Kind::kBoundedSphere, dim, radius, {}};
  }
  static InitDist point_mass(VectorXd x0) {
    const Eigen::Index d = x0.size();
    return {Kind::kPointMass, d, 1.0, std::move(x0)};
  }

  // E[x0 x0^T].
  MatrixXd second_moment() const {
    switch (kind) {
      case Kind::kStandardNormal:
        return MatrixXd::Identity(dim, dim);
      case Kind::kBoundedSphere:
        return (radius * radius / static_cast<double>(dim)) * MatrixXd::Identity(dim, dim);
      case Kind::kPointMass:
        return point * point.transpose();
    }
    return {};
  }
};

inline VectorXd sample_initial_state(const InitDist& dist, Rng& rng) {
  switch (dist.kind) {
    case InitDist::Kind::kPointMass:
      return dist.point;
    case InitDist::Kind::kStandardNormal:
    case InitDist::Kind::kBoundedSphere: {
      std::normal_distribution<double> n01(0.0, 1.0);
      VectorXd x(dist.dim);
      for (Eigen::Index i = 0; i < dist.dim; ++i) x(i) = n01(rng);
      if (dist.kind == InitDist::Kind::kBoundedSphere) {
        double nrm = x.norm();
        while (nrm == 0.0) {
          for (Eigen::Index i = 0; i < dist.dim; ++i) x(i) = n01(rng);
          nrm = x.norm();
        }
        x *= dist.radius / nrm;
      }
      return x;
    }
  }
  return {};
}

struct Trajectory {
  std::vector<VectorXd> states;    // tau + 1
  std::vector<VectorXd> inputs;    // tau
  std::vector<double> stage_costs; // tau

  double total_cost() const {
    double c = 0.0;
    for (double s : stage_costs) c += s;
    return c;
  }
};

inline constexpr double kDivergenceGuard = 1e150;

// Closed-loop simulation under u = -K x; stage costs summed over t = 0..tau-1.
inline Trajectory rollout(const LinearSystem& sys, const CostSpec& cost, const Gain& gain,
                          const VectorXd& x0, std::size_t tau) {
  if (tau < 1) throw InvalidInput("rollout: tau must be >= 1");
  detail::check_dims(sys, gain);
  if (x0.size() != sys.state_dim()) throw InvalidInput("rollout: x0 has the wrong dimension");
  Trajectory tr;
  tr.states.reserve(tau + 1);
  tr.inputs.reserve(tau);
  tr.stage_costs.reserve(tau);
  tr.states.push_back(x0);
  double total = 0.0;
  for (std::size_t t = 0; t < tau; ++t) {
    const VectorXd& x = tr.states.back();
    VectorXd u = -gain.k * x;
    const double c = x.dot(cost.q * x) + u.dot(cost.r * u);
    total += c;
    tr.stage_costs.push_back(c);
    VectorXd next = sys.a * x + sys.b * u;
    tr.inputs.push_back(std::move(u));
    if (!(next.norm() <= kDivergenceGuard)) {
      throw TrajectoryDiverged("rollout: state norm exceeded the overflow guard",
                               std::min(total, kDivergenceGuard), t + 1);
    }
    tr.states.push_back(std::move(next));
  }
  return tr;
}

// Truncated cost without storing the trajectory.
inline double rollout_cost(const LinearSystem& sys, const CostSpec& cost, const Gain& gain,
                           const VectorXd& x0, std::size_t tau) {
  if (tau < 1) throw InvalidInput("rollout: tau must be >= 1");
  detail::check_dims(sys, gain);
  if (x0.size() != sys.state_dim()) throw InvalidInput("rollout: x0 has the wrong dimension");
  const MatrixXd f = closed_loop(sys, gain);
  const MatrixXd stage = cost.q + gain.k.transpose() * cost.r * gain.k;
  VectorXd x = x0;
  VectorXd tmp(x0.size());
  double total = 0.0;
  for (std::size_t t = 0; t < tau; ++t) {
    tmp.noalias() = stage * x;
    total += x.dot(tmp);
    tmp.noalias() = f * x;
    x.swap(tmp);
    if (!(x.norm() <= kDivergenceGuard)) {
      throw TrajectoryDiverged("rollout: state norm exceeded the overflow guard",
                               std::min(total, kDivergenceGuard), t + 1);
    }
  }
  return total;
}

// Returns some k with |a_i - b_i k| < 1 for every pair, or nullopt when the
// open intervals have empty intersection.
inline std::optional<double> common_scalar_gain_feasible(
    std::span<const std::pair<double, double>> pairs) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (const auto& [a, b] : pairs) {
    if (b == 0.0) {
      if (!(std::abs(a) < 1.0)) return std::nullopt;
      continue;
    }
    double l = (a - 1.0) / b;
    double h = (a + 1.0) / b;
    if (l > h) std::swap(l, h);
    lo = std::max(lo, l);
    hi = std::min(hi, h);
  }
  if (!(lo < hi)) return std::nullopt;
  double k;
  if (std::isinf(lo) && std::isinf(hi)) {
    k = 0.0;
  } else if (std::isinf(lo)) {
    k = hi - 1.0;
  } else if (std::isinf(hi)) {
    k = lo + 1.0;
  } else {
    k = 0.5 * (lo + hi);
    if (!(k > lo && k < hi)) return std::nullopt;  // interval below resolution
  }
  return k;
}

}  // namespace fedlqr
