#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedlqr/ensemble.hpp"
#include "fedlqr/errors.hpp"
#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/random.hpp"
#include "fedlqr/zeroth_order.hpp"

namespace fedlqr {

enum class GradientMode { kModelBased, kModelFree };

// What run() does when a local step destabilizes an agent.
enum class LocalInstabilityPolicy {
  kSkipAgent,  // drop that agent's delta for the round and record it
  kAbort,      // rethrow LocalInstability
};

struct FedConfig {
  std::size_t m = 1;       // agents
  std::size_t big_l = 1;   // local steps per round
  std::size_t big_n = 1;   // rounds
  double eta_l = 1e-3;     // local step-size
  double eta_g = 1.0;      // global step-size
  double eta_g_decay = 0.0;  // eta_g <- eta_g (1 - decay) after every round
  ZoConfig zo;
  GradientMode mode = GradientMode::kModelBased;
  double beta = 10.0;      // stabilizing-set slack
  std::uint64_t master_seed = 0;
  InitDist init_dist = InitDist::standard_normal(1);
  LocalInstabilityPolicy on_local_instability = LocalInstabilityPolicy::kSkipAgent;

  // Step-size of the equivalent averaged update, L eta_g eta_l.
  double effective_step() const { return static_cast<double>(big_l) * eta_g * eta_l; }

  void validate() const {
    if (m < 1 || big_l < 1) throw InvalidInput("FedConfig: m and big_l must be >= 1");
    if (!(eta_l >= 0.0) || !std::isfinite(eta_l)) throw InvalidInput("FedConfig: eta_l must be >= 0");
    if (!(eta_g > 0.0) || !std::isfinite(eta_g)) throw InvalidInput("FedConfig: eta_g must be > 0");
    if (!(eta_g_decay >= 0.0 && eta_g_decay < 1.0)) {
      throw InvalidInput("FedConfig: eta_g_decay must lie in [0, 1)");
    }
    if (!(beta > 0.0)) throw InvalidInput("FedConfig: beta must be > 0");
    if (mode == GradientMode::kModelFree) zo.validate();
  }
};

struct LocalUpdate {
  Gain k_local;
  MatrixXd delta;  // k_local - k_start
  std::size_t diverged_estimates = 0;
  double max_spectral_radius = 0.0;  // over the local iterates
};

// L local policy-gradient steps from k_start. Local step l draws its ZO
// randomness from key.child(first_step + l).
inline LocalUpdate local_update(const LinearSystem& sys, const CostSpec& cost,
                                const Gain& k_start, const FedConfig& cfg, const StreamKey& key,
                                std::size_t agent = 0, std::size_t first_step = 0) {
  detail::check_dims(sys, k_start);
  const double rho0 = closed_loop_spectral_radius(sys, k_start);
  if (!(rho0 < 1.0 - kStabilityMargin)) {
    throw LocalInstability("local_update: starting gain does not stabilize agent " +
                               std::to_string(agent),
                           agent, 0, rho0);
  }
  LocalUpdate out;
  out.k_local = k_start;
  out.max_spectral_radius = rho0;
  for (std::size_t l = 0; l < cfg.big_l; ++l) {
    MatrixXd grad;
    if (cfg.mode == GradientMode::kModelBased) {
      grad = solve_lqr(sys, cost, out.k_local).grad;
    } else {
      GradientEstimate est = estimate_gradient(sys, cost, out.k_local, cfg.zo, cfg.init_dist,
                                               key.child(first_step + l));
      out.diverged_estimates += est.diverged_count;
      grad = std::move(est.grad_hat);
    }
    out.k_local.k -= cfg.eta_l * grad;
    const double rho = out.k_local.k.allFinite()
                           ? closed_loop_spectral_radius(sys, out.k_local)
                           : std::numeric_limits<double>::infinity();
    out.max_spectral_radius = std::max(out.max_spectral_radius, rho);
    if (!(rho < 1.0 - kStabilityMargin)) {
      throw LocalInstability("local_update: agent " + std::to_string(agent) +
                                 " destabilized at local step " + std::to_string(l + 1),
                             agent, l + 1, rho);
    }
  }
  out.delta = out.k_local.k - k_start.k;
  return out;
}

// K_{n+1} = K_n + (eta_g / M) sum_i delta_i, summed in index order.
inline Gain aggregate(const Gain& k_global, std::span<const MatrixXd> deltas, double eta_g) {
  if (deltas.empty()) throw InvalidInput("aggregate: no deltas");
  MatrixXd sum = MatrixXd::Zero(k_global.k.rows(), k_global.k.cols());
  for (const auto& d : deltas) {
    if (d.rows() != sum.rows() || d.cols() != sum.cols()) {
      throw InvalidInput("aggregate: delta shape mismatch");
    }
    sum += d;
  }
  return {k_global.k + (eta_g / static_cast<double>(deltas.size())) * sum};
}

struct RoundTrace {
  std::size_t round = 0;  // 1-based: state after `round` aggregations
  Gain global_gain;
  double eta_g = 0.0;     // global step-size used in this round
  std::vector<double> per_agent_cost_gap;        // C_i(K_n) - C_i(K_i^*)
  std::vector<double> per_agent_normalized_gap;  // gap / C_i(K_i^*)
  std::vector<double> per_agent_spectral_radius;
  std::vector<std::size_t> per_agent_diverged;
  std::vector<bool> per_agent_local_failure;
  double normalized_gap_nominal = 0.0;
  double max_spectral_radius = 0.0;        // global gain, over agents
  double max_local_spectral_radius = 0.0;  // local iterates, over agents
  bool stab_set_ok = false;
  std::size_t diverged_estimates = 0;
  std::size_t local_failures = 0;
};

struct FedResult {
  std::vector<RoundTrace> traces;
  Gain final_gain;
  std::optional<std::string> terminated_early;
  std::vector<Gain> local_optima;        // K_i^*
  std::vector<double> optimal_costs;     // C_i(K_i^*)
  std::vector<double> initial_gaps;      // C_i(K_0) - C_i(K_i^*)
};

namespace detail {

inline void fill_round_metrics(RoundTrace& tr, const Ensemble& e, const CostSpec& cost,
                               const FedResult& res, double beta) {
  const std::size_t m = e.size();
  tr.per_agent_cost_gap.assign(m, std::numeric_limits<double>::infinity());
  tr.per_agent_normalized_gap.assign(m, std::numeric_limits<double>::infinity());
  tr.per_agent_spectral_radius.assign(m, std::numeric_limits<double>::infinity());
  tr.stab_set_ok = true;
  tr.max_spectral_radius = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double rho = std::numeric_limits<double>::infinity();
    if (tr.global_gain.k.allFinite()) rho = closed_loop_spectral_radius(e.systems[i], tr.global_gain);
    tr.per_agent_spectral_radius[i] = rho;
    tr.max_spectral_radius = std::max(tr.max_spectral_radius, rho);
    if (rho < 1.0 - kStabilityMargin) {
      const double gap = solve_lqr(e.systems[i], cost, tr.global_gain).cost - res.optimal_costs[i];
      tr.per_agent_cost_gap[i] = gap;
      tr.per_agent_normalized_gap[i] = gap / res.optimal_costs[i];
    }
    if (!(tr.per_agent_cost_gap[i] <= beta * res.initial_gaps[i])) tr.stab_set_ok = false;
  }
  tr.normalized_gap_nominal = tr.per_agent_normalized_gap[e.nominal_index];
}

}  // namespace detail

// Federated policy learning: every round broadcasts K_n, runs L local steps
// per agent, averages the deltas and decays eta_g. Agent i in round n draws
// from substream (master_seed, n, i, l, s).
inline FedResult run(const Ensemble& ensemble, const CostSpec& cost, const Gain& k0,
                     const FedConfig& cfg) {
  cfg.validate();
  if (ensemble.size() != cfg.m) {
    throw InvalidInput("run: FedConfig.m does not match the ensemble size");
  }
  if (!k0.k.allFinite()) throw PreconditionFailed("run: k0 has non-finite entries");
  if (auto bad = first_unstabilized(ensemble, k0)) {
    throw PreconditionFailed("run: k0 does not stabilize system " + std::to_string(*bad + 1));
  }
  if (cfg.mode == GradientMode::kModelFree && cfg.init_dist.dim != ensemble.nominal().state_dim()) {
    throw InvalidInput("run: init_dist dimension does not match the state dimension");
  }

  FedResult res;
  for (const auto& sys : ensemble.systems) {
    Gain ks = optimal_gain(sys, cost);
    const double c_star = solve_lqr(sys, cost, ks).cost;
    res.initial_gaps.push_back(solve_lqr(sys, cost, k0).cost - c_star);
    res.optimal_costs.push_back(c_star);
    res.local_optima.push_back(std::move(ks));
  }

  const StreamKey root(cfg.master_seed);
  Gain k = k0;
  double eta_g = cfg.eta_g;
  for (std::size_t n = 0; n < cfg.big_n; ++n) {
    RoundTrace tr;
    tr.round = n + 1;
    tr.eta_g = eta_g;
    tr.per_agent_diverged.assign(cfg.m, 0);
    tr.per_agent_local_failure.assign(cfg.m, false);
    std::vector<MatrixXd> deltas;
    deltas.reserve(cfg.m);
    for (std::size_t i = 0; i < cfg.m; ++i) {
      try {
        LocalUpdate lu = local_update(ensemble.systems[i], cost, k, cfg, root.child(n).child(i), i);
        tr.per_agent_diverged[i] = lu.diverged_estimates;
        tr.max_local_spectral_radius = std::max(tr.max_local_spectral_radius, lu.max_spectral_radius);
        deltas.push_back(std::move(lu.delta));
      } catch (const LocalInstability& ex) {
        if (cfg.on_local_instability == LocalInstabilityPolicy::kAbort) throw;
        tr.per_agent_local_failure[i] = true;
        ++tr.local_failures;
        tr.max_local_spectral_radius = std::max(tr.max_local_spectral_radius, ex.spectral_radius());
      } catch (const EstimateFailed&) {
        if (cfg.on_local_instability == LocalInstabilityPolicy::kAbort) throw;
        tr.per_agent_local_failure[i] = true;
        ++tr.local_failures;
        tr.max_local_spectral_radius = std::numeric_limits<double>::infinity();
      }
    }
    for (auto d : tr.per_agent_diverged) tr.diverged_estimates += d;
    if (!deltas.empty()) k = aggregate(k, deltas, eta_g);
    eta_g *= (1.0 - cfg.eta_g_decay);

    tr.global_gain = k;
    detail::fill_round_metrics(tr, ensemble, cost, res, cfg.beta);
    const bool destabilized = !(tr.max_spectral_radius < 1.0 - kStabilityMargin);
    res.traces.push_back(std::move(tr));
    if (destabilized) {
      res.terminated_early = "global gain destabilized a system at round " + std::to_string(n + 1);
      break;
    }
  }
  res.final_gain = k;
  return res;
}

struct StabilityReport {
  std::size_t rounds = 0;
  std::optional<double> fraction_ok;  // empty for an empty trace
  double max_spectral_radius = 0.0;
  double max_local_spectral_radius = 0.0;
  std::size_t local_failures = 0;
  std::optional<std::size_t> first_violation_round;

  bool all_stable() const {
    return rounds > 0 && !first_violation_round && max_spectral_radius < 1.0 &&
           max_local_spectral_radius < 1.0;
  }
};

// A round violates stability when the global gain leaves the stabilizing set
// or any local iterate destabilized its agent.
inline StabilityReport stability_report(const FedResult& result) {
  StabilityReport rep;
  rep.rounds = result.traces.size();
  if (rep.rounds == 0) return rep;
  std::size_t ok = 0;
  for (const auto& tr : result.traces) {
    if (tr.stab_set_ok) ++ok;
    rep.max_spectral_radius = std::max(rep.max_spectral_radius, tr.max_spectral_radius);
    rep.max_local_spectral_radius = std::max(rep.max_local_spectral_radius, tr.max_local_spectral_radius);
    rep.local_failures += tr.local_failures;
    if ((!tr.stab_set_ok || tr.local_failures > 0) && !rep.first_violation_round) {
      rep.first_violation_round = tr.round;
    }
  }
  rep.fraction_ok = static_cast<double>(ok) / static_cast<double>(rep.rounds);
  return rep;
}

}  // namespace fedlqr
