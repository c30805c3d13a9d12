#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fedlqr/ensemble.hpp"
#include "fedlqr/errors.hpp"
#include "fedlqr/federated.hpp"
#include "fedlqr/io.hpp"
#include "fedlqr/lqr_analytic.hpp"
#include "fedlqr/oracles.hpp"
#include "fedlqr/theory_bounds.hpp"

namespace fedlqr::experiment {

using io::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputDirEnv = "FEDLQR_OUTPUT_DIR";

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 2,
  kExitPreconditionFailed = 3,
  kExitOracleFailure = 4,
};

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// ---- presets ----------------------------------------------------------------

inline LinearSystem paper_nominal_system() {
  MatrixXd a(3, 3);
  a << 1.20, 0.50, 0.40,
       0.01, 0.75, 0.30,
       0.10, 0.02, 1.50;
  return {a, MatrixXd::Identity(3, 3)};
}

inline json preset_json(const std::string& name) {
  json base = {
      {"ensemble",
       {{"nominal", "paper_nominal"},
        {"m", 1},
        {"eps1", 0.0},
        {"eps2", 0.0},
        {"z1", {{"scaled_identity", 1.0}}},
        {"z2", {{"scaled_identity", 1.0}}},
        {"k0", {{"scaled_identity", 1.62}}},
        {"k0_max_spectral_radius", 0.9}}},
      {"cost",
       {{"q", {{"scaled_identity", 2.0}}},
        {"r", {{"scaled_identity", 0.5}}},
        {"init_dist", {{"kind", "standard_normal"}}}}},
      {"fed",
       {{"big_l", 1},
        {"big_n", 1000},
        {"eta_l", 1e-4},
        {"eta_g", 1.0},
        {"eta_g_decay", 5e-4},
        {"eta", 1e-4},
        {"mode", "model_free"},
        {"beta", 1.0},
        {"on_local_instability", "skip"}}},
      {"zo", {{"n_s", 5}, {"tau", 15}, {"r", 0.1}}},
      {"seeds", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}},
  };
  if (name == "paper_nominal") {
    base["name"] = "paper_nominal";
    base["seeds"] = {0};
    return base;
  }
  if (name == "fig1") {
    base["name"] = "fig1";
    base["ensemble"]["eps1"] = 0.5;
    base["ensemble"]["eps2"] = 0.5;
    base["sweep"] = {{"m", {1, 5, 10}}};
    base["output_dir"] = "out/fig1";
    return base;
  }
  if (name == "fig2") {
    base["name"] = "fig2";
    base["ensemble"]["m"] = 10;
    base["ensemble"]["z1"] = {{"diag", {3.5, 1.0, 0.1}}};
    base["ensemble"]["z2"] = {{"diag", {1.5, 0.1, 1.0}}};
    base["sweep"] = {{"eps", {{0.1, 0.1}, {0.5, 0.5}, {1.0, 1.0}}}};
    base["output_dir"] = "out/fig2";
    return base;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

// ---- config -----------------------------------------------------------------

struct SweepPoint {
  std::string label;  // filesystem-safe
  std::size_t m = 1;
  double eps1 = 0.0;
  double eps2 = 0.0;
};

enum class SweepAxis { kNone, kM, kEps };

struct ExperimentConfig {
  json resolved;  // merged config as executed
  std::string name;
  LinearSystem nominal;
  std::size_t m = 1;
  double eps1 = 0.0;
  double eps2 = 0.0;
  MatrixXd z1;
  MatrixXd z2;
  Gain k0;
  std::optional<double> k0_max_spectral_radius;
  CostSpec cost;
  InitDist init_dist;
  FedConfig fed;
  std::optional<double> eta;  // consistency check against L eta_g eta_l
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "out";
  SweepAxis sweep_axis = SweepAxis::kNone;
  std::vector<std::size_t> sweep_m;
  std::vector<std::pair<double, double>> sweep_eps;

  std::vector<SweepPoint> points() const;
};

namespace detail {

inline std::string short_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw Error("short_double: conversion failed");
  return std::string(buf.data(), end);
}

inline void require_keys(const json& j, const std::string& where,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

inline double get_number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw ConfigError(where + "." + key + ": must be finite");
  return v;
}

inline std::size_t get_count(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + ": expected a nonnegative integer");
  }
  return v.get<std::size_t>();
}

inline std::string get_string(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

inline MatrixXd get_matrix(const json& j, const char* key, const std::string& where,
                           Eigen::Index dim) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  try {
    return io::matrix_from_json(j.at(key), where + "." + key, dim);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
}

inline InitDist parse_init_dist(const json& j, Eigen::Index n_x) {
  const std::string where = "cost.init_dist";
  const std::string kind = get_string(j, "kind", where);
  if (kind == "standard_normal") {
    require_keys(j, where, {"kind"});
    return InitDist::standard_normal(n_x);
  }
  if (kind == "bounded_sphere") {
    require_keys(j, where, {"kind", "radius"});
    const double radius = get_number(j, "radius", where);
    if (!(radius > 0.0)) throw ConfigError(where + ".radius must be positive");
    return InitDist::bounded_sphere(n_x, radius);
  }
  if (kind == "point_mass") {
    require_keys(j, where, {"kind", "x0"});
    const json& x = j.at("x0");
    if (!x.is_array() || static_cast<Eigen::Index>(x.size()) != n_x) {
      throw ConfigError(where + ".x0 must have n_x entries");
    }
    VectorXd v(n_x);
    for (Eigen::Index i = 0; i < n_x; ++i) {
      if (!x[static_cast<std::size_t>(i)].is_number()) throw ConfigError(where + ".x0: numbers only");
      v(i) = x[static_cast<std::size_t>(i)].get<double>();
    }
    return InitDist::point_mass(v);
  }
  throw ConfigError(where + ".kind: unknown distribution '" + kind + "'");
}

}  // namespace detail

inline std::vector<SweepPoint> ExperimentConfig::points() const {
  std::vector<SweepPoint> out;
  auto eps_label = [](double a, double b) {
    return "eps" + detail::short_double(a) + "_" + detail::short_double(b);
  };
  switch (sweep_axis) {
    case SweepAxis::kNone:
      out.push_back({"m" + std::to_string(m) + "_" + eps_label(eps1, eps2), m, eps1, eps2});
      break;
    case SweepAxis::kM:
      for (std::size_t mm : sweep_m) out.push_back({"m" + std::to_string(mm), mm, eps1, eps2});
      break;
    case SweepAxis::kEps:
      for (const auto& [a, b] : sweep_eps) out.push_back({eps_label(a, b), m, a, b});
      break;
  }
  return out;
}

// Parses a config document. A top-level "preset" key selects a base document
// which the remaining keys patch (RFC 7396 merge). Unknown keys are errors.
inline ExperimentConfig parse_config(const json& user) {
  if (!user.is_object()) throw ConfigError("config: expected a JSON object");
  json doc;
  if (user.contains("preset")) {
    if (!user.at("preset").is_string()) throw ConfigError("config.preset: expected a string");
    doc = preset_json(user.at("preset").get<std::string>());
    json patch = user;
    patch.erase("preset");
    doc.merge_patch(patch);
  } else {
    doc = user;
  }
  detail::require_keys(doc, "config",
                       {"name", "ensemble", "cost", "fed", "zo", "seeds", "output_dir", "sweep"});

  ExperimentConfig cfg;
  cfg.resolved = doc;
  cfg.name = doc.value("name", std::string("experiment"));

  // ensemble
  if (!doc.contains("ensemble")) throw ConfigError("config: missing 'ensemble'");
  const json& ej = doc.at("ensemble");
  detail::require_keys(ej, "ensemble",
                       {"nominal", "m", "eps1", "eps2", "z1", "z2", "k0", "k0_max_spectral_radius"});
  if (!ej.contains("nominal")) throw ConfigError("ensemble: missing 'nominal'");
  const json& nj = ej.at("nominal");
  if (nj.is_string()) {
    if (nj.get<std::string>() != "paper_nominal") {
      throw ConfigError("ensemble.nominal: unknown preset '" + nj.get<std::string>() + "'");
    }
    cfg.nominal = paper_nominal_system();
  } else {
    detail::require_keys(nj, "ensemble.nominal", {"a", "b"});
    cfg.nominal.a = detail::get_matrix(nj, "a", "ensemble.nominal", -1);
    cfg.nominal.b = detail::get_matrix(nj, "b", "ensemble.nominal", -1);
    try {
      cfg.nominal.validate();
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("ensemble.nominal: ") + e.what());
    }
  }
  const Eigen::Index n_x = cfg.nominal.state_dim();
  const Eigen::Index n_u = cfg.nominal.input_dim();
  cfg.m = detail::get_count(ej, "m", "ensemble");
  if (cfg.m < 1) throw ConfigError("ensemble.m must be >= 1");
  cfg.eps1 = ej.contains("eps1") ? detail::get_number(ej, "eps1", "ensemble") : 0.0;
  cfg.eps2 = ej.contains("eps2") ? detail::get_number(ej, "eps2", "ensemble") : 0.0;
  cfg.z1 = ej.contains("z1") ? detail::get_matrix(ej, "z1", "ensemble", n_x)
                             : MatrixXd(MatrixXd::Identity(n_x, n_x));
  cfg.z2 = ej.contains("z2") ? detail::get_matrix(ej, "z2", "ensemble", n_x)
                             : MatrixXd(MatrixXd::Identity(n_x, n_u));
  if (cfg.z1.rows() != n_x || cfg.z1.cols() != n_x || cfg.z2.rows() != n_x ||
      cfg.z2.cols() != n_u) {
    throw ConfigError("ensemble: mask dimensions do not match the nominal system");
  }
  if (!ej.contains("k0")) throw ConfigError("ensemble: missing 'k0'");
  if (ej.at("k0").is_number()) {
    cfg.k0 = {ej.at("k0").get<double>() * MatrixXd::Identity(n_u, n_x)};
  } else {
    cfg.k0 = {detail::get_matrix(ej, "k0", "ensemble", n_x)};
  }
  if (cfg.k0.k.rows() != n_u || cfg.k0.k.cols() != n_x) {
    throw ConfigError("ensemble.k0: expected an n_u x n_x matrix");
  }
  if (ej.contains("k0_max_spectral_radius") && !ej.at("k0_max_spectral_radius").is_null()) {
    const double v = detail::get_number(ej, "k0_max_spectral_radius", "ensemble");
    if (!(v > 0.0 && v < 1.0)) throw ConfigError("ensemble.k0_max_spectral_radius must lie in (0, 1)");
    cfg.k0_max_spectral_radius = v;
  }

  // cost
  if (!doc.contains("cost")) throw ConfigError("config: missing 'cost'");
  const json& cj = doc.at("cost");
  detail::require_keys(cj, "cost", {"q", "r", "init_dist", "h_bound"});
  const MatrixXd q = detail::get_matrix(cj, "q", "cost", n_x);
  const MatrixXd r = detail::get_matrix(cj, "r", "cost", n_u);
  if (!cj.contains("init_dist")) throw ConfigError("cost: missing 'init_dist'");
  cfg.init_dist = detail::parse_init_dist(cj.at("init_dist"), n_x);
  double h_bound = 0.0;
  if (cj.contains("h_bound")) {
    h_bound = detail::get_number(cj, "h_bound", "cost");
  } else if (cfg.init_dist.kind == InitDist::Kind::kBoundedSphere) {
    h_bound = cfg.init_dist.radius;
  } else if (cfg.init_dist.kind == InitDist::Kind::kPointMass) {
    h_bound = std::max(cfg.init_dist.point.norm(), 1e-300);
  } else {
    // Gaussian x0 has no almost-sure bound; sqrt(n_x) is its typical norm.
    h_bound = std::sqrt(static_cast<double>(n_x));
  }
  try {
    cfg.cost = CostSpec::make(q, r, cfg.init_dist.second_moment(), h_bound);
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("cost: ") + e.what());
  }

  // fed + zo
  if (!doc.contains("fed")) throw ConfigError("config: missing 'fed'");
  const json& fj = doc.at("fed");
  detail::require_keys(fj, "fed",
                       {"big_l", "big_n", "eta_l", "eta_g", "eta_g_decay", "eta", "mode", "beta",
                        "on_local_instability"});
  FedConfig& f = cfg.fed;
  f.big_l = detail::get_count(fj, "big_l", "fed");
  f.big_n = detail::get_count(fj, "big_n", "fed");
  f.eta_l = detail::get_number(fj, "eta_l", "fed");
  f.eta_g = detail::get_number(fj, "eta_g", "fed");
  f.eta_g_decay = fj.contains("eta_g_decay") ? detail::get_number(fj, "eta_g_decay", "fed") : 0.0;
  f.beta = fj.contains("beta") ? detail::get_number(fj, "beta", "fed") : 10.0;
  const std::string mode = fj.contains("mode") ? detail::get_string(fj, "mode", "fed") : "model_free";
  if (mode == "model_free") {
    f.mode = GradientMode::kModelFree;
  } else if (mode == "model_based") {
    f.mode = GradientMode::kModelBased;
  } else {
    throw ConfigError("fed.mode: expected 'model_free' or 'model_based'");
  }
  const std::string policy = fj.contains("on_local_instability")
                                 ? detail::get_string(fj, "on_local_instability", "fed")
                                 : "skip";
  if (policy == "skip") {
    f.on_local_instability = LocalInstabilityPolicy::kSkipAgent;
  } else if (policy == "abort") {
    f.on_local_instability = LocalInstabilityPolicy::kAbort;
  } else {
    throw ConfigError("fed.on_local_instability: expected 'skip' or 'abort'");
  }
  if (fj.contains("eta") && !fj.at("eta").is_null()) {
    cfg.eta = detail::get_number(fj, "eta", "fed");
    if (std::abs(f.effective_step() - *cfg.eta) > 1e-12 * std::abs(*cfg.eta)) {
      throw ConfigError("fed.eta = " + detail::short_double(*cfg.eta) +
                        " does not equal big_l * eta_g * eta_l = " +
                        detail::short_double(f.effective_step()));
    }
  }
  if (doc.contains("zo")) {
    const json& zj = doc.at("zo");
    detail::require_keys(zj, "zo", {"n_s", "tau", "r"});
    f.zo.n_s = detail::get_count(zj, "n_s", "zo");
    f.zo.tau = detail::get_count(zj, "tau", "zo");
    f.zo.r = detail::get_number(zj, "r", "zo");
  }
  f.init_dist = cfg.init_dist;
  f.m = cfg.m;
  try {
    f.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }

  // seeds, output, sweep
  if (!doc.contains("seeds") || !doc.at("seeds").is_array() || doc.at("seeds").empty()) {
    throw ConfigError("config.seeds: expected a nonempty array");
  }
  for (const auto& s : doc.at("seeds")) {
    if (!s.is_number_integer() || s.get<long long>() < 0) {
      throw ConfigError("config.seeds: expected nonnegative integers");
    }
    cfg.seeds.push_back(s.get<std::uint64_t>());
  }
  if (doc.contains("output_dir")) cfg.output_dir = detail::get_string(doc, "output_dir", "config");
  if (doc.contains("sweep") && !doc.at("sweep").is_null()) {
    const json& sj = doc.at("sweep");
    detail::require_keys(sj, "sweep", {"m", "eps"});
    if (sj.size() != 1) throw ConfigError("sweep: exactly one axis allowed");
    if (sj.contains("m")) {
      cfg.sweep_axis = SweepAxis::kM;
      for (const auto& v : sj.at("m")) {
        if (!v.is_number_integer() || v.get<long long>() < 1) {
          throw ConfigError("sweep.m: expected integers >= 1");
        }
        cfg.sweep_m.push_back(v.get<std::size_t>());
      }
      if (cfg.sweep_m.empty()) throw ConfigError("sweep.m: empty");
    } else {
      cfg.sweep_axis = SweepAxis::kEps;
      for (const auto& v : sj.at("eps")) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number() ||
            v[0].get<double>() < 0.0 || v[1].get<double>() < 0.0) {
          throw ConfigError("sweep.eps: expected [eps1, eps2] pairs of nonnegative numbers");
        }
        cfg.sweep_eps.emplace_back(v[0].get<double>(), v[1].get<double>());
      }
      if (cfg.sweep_eps.empty()) throw ConfigError("sweep.eps: empty");
    }
  }
  if (cfg.eps1 < 0.0 || cfg.eps2 < 0.0) throw ConfigError("ensemble: eps must be >= 0");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// The output directory after applying the FEDLQR_OUTPUT_DIR override.
inline std::filesystem::path effective_output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output_dir;
}

// ---- runs ---------------------------------------------------------------------

struct RunOutcome {
  SweepPoint point;
  std::uint64_t seed = 0;
  Ensemble ensemble;
  FedResult result;
  StabilityReport stability;

  // Final nominal normalized gap; +inf when the run halted on instability.
  double final_gap() const {
    if (result.terminated_early) return std::numeric_limits<double>::infinity();
    if (result.traces.empty()) {
      return result.initial_gaps[ensemble.nominal_index] /
             result.optimal_costs[ensemble.nominal_index];
    }
    return result.traces.back().normalized_gap_nominal;
  }
};

// Ensemble draws use the seed directly, so system i is shared by every sweep
// point with the same seed; the federated run uses master_seed = seed.
inline Ensemble build_ensemble(const ExperimentConfig& cfg, const SweepPoint& p,
                               std::uint64_t seed) {
  GenerationOptions gen;
  if (cfg.k0_max_spectral_radius) {
    gen.require_stabilized_by = cfg.k0;
    gen.max_spectral_radius = *cfg.k0_max_spectral_radius;
  }
  return generate_ensemble(cfg.nominal, p.m, HeterogeneityParams{p.eps1, p.eps2, cfg.z1, cfg.z2},
                           seed, gen);
}

inline RunOutcome run_point(const ExperimentConfig& cfg, const SweepPoint& p, std::uint64_t seed) {
  RunOutcome out;
  out.point = p;
  out.seed = seed;
  out.ensemble = build_ensemble(cfg, p, seed);
  FedConfig f = cfg.fed;
  f.m = p.m;
  f.master_seed = seed;
  out.result = run(out.ensemble, cfg.cost, cfg.k0, f);
  out.stability = stability_report(out.result);
  return out;
}

struct SummaryRow {
  std::string point;
  std::size_t m = 0;
  double eps1 = 0.0;
  double eps2 = 0.0;
  std::size_t round = 0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n_seeds = 0;
};

// Mean and sample standard deviation of the nominal normalized gap over
// seeds, per round. A halted run contributes +inf after its last round.
inline std::vector<SummaryRow> summarize(const std::vector<RunOutcome>& runs,
                                         const std::vector<SweepPoint>& points,
                                         std::size_t big_n) {
  std::vector<SummaryRow> rows;
  for (const auto& p : points) {
    std::vector<const RunOutcome*> rs;
    for (const auto& r : runs) {
      if (r.point.label == p.label) rs.push_back(&r);
    }
    if (rs.empty()) continue;
    for (std::size_t n = 1; n <= big_n; ++n) {
      std::vector<double> v;
      v.reserve(rs.size());
      for (const RunOutcome* r : rs) {
        const auto& tr = r->result.traces;
        if (n <= tr.size() && !(r->result.terminated_early && n == tr.size())) {
          v.push_back(tr[n - 1].normalized_gap_nominal);
        } else {
          v.push_back(std::numeric_limits<double>::infinity());
        }
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      if (v.size() > 1) {
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size() - 1);
      }
      rows.push_back({p.label, p.m, p.eps1, p.eps2, n, mean, std::sqrt(var), v.size()});
    }
  }
  return rows;
}

inline constexpr std::string_view kSummaryHeader = "point,m,eps1,eps2,round,mean,std,n_seeds\n";

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out(kSummaryHeader);
  for (const auto& r : rows) {
    out += r.point + ',' + std::to_string(r.m) + ',' + io::format_double(r.eps1) + ',' +
           io::format_double(r.eps2) + ',' + std::to_string(r.round) + ',' +
           io::format_double(r.mean) + ',' + io::format_double(r.std) + ',' +
           std::to_string(r.n_seeds) + '\n';
  }
  return out;
}

inline std::string final_csv(const std::vector<RunOutcome>& runs) {
  std::string out =
      "point,m,eps1,eps2,seed,rounds,final_normalized_gap,terminated_early,local_failures,"
      "diverged_estimates,max_spectral_radius,max_local_spectral_radius\n";
  for (const auto& r : runs) {
    std::size_t diverged = 0;
    for (const auto& t : r.result.traces) diverged += t.diverged_estimates;
    out += r.point.label + ',' + std::to_string(r.point.m) + ',' + io::format_double(r.point.eps1) +
           ',' + io::format_double(r.point.eps2) + ',' + std::to_string(r.seed) + ',' +
           std::to_string(r.result.traces.size()) + ',' + io::format_double(r.final_gap()) + ',' +
           (r.result.terminated_early ? "1" : "0") + ',' +
           std::to_string(r.stability.local_failures) + ',' + std::to_string(diverged) + ',' +
           io::format_double(r.stability.max_spectral_radius) + ',' +
           io::format_double(r.stability.max_local_spectral_radius) + '\n';
  }
  return out;
}

struct ExperimentResult {
  std::vector<SweepPoint> points;
  std::vector<RunOutcome> runs;
  std::vector<SummaryRow> summary;
  std::filesystem::path output_dir;
};

// Runs every (sweep point, seed) pair in order and, when `write` is set,
// persists traces, ensembles, summary.csv, final.csv and manifest.json.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write = true,
                                       std::ostream* log = nullptr) {
  ExperimentResult res;
  res.points = cfg.points();
  res.output_dir = effective_output_dir(cfg);
  json manifest_runs = json::array();
  std::vector<std::pair<std::string, std::string>> files;  // relative path, content

  for (const auto& p : res.points) {
    for (std::uint64_t seed : cfg.seeds) {
      RunOutcome out;
      try {
        out = run_point(cfg, p, seed);
      } catch (const PreconditionFailed& e) {
        throw PreconditionFailed("point " + p.label + ", seed " + std::to_string(seed) + ": " +
                                 e.what());
      }
      if (log) {
        *log << p.label << " seed " << seed << ": final gap " << io::format_double(out.final_gap())
             << ", local failures " << out.stability.local_failures
             << (out.result.terminated_early ? ", halted" : "") << '\n';
      }
      if (write) {
        const std::string stem = p.label + "_seed" + std::to_string(seed);
        const std::string ens_path = "ensembles/" + stem + ".json";
        const std::string trace_path = "runs/" + stem + ".csv";
        std::string ens_text = io::ensemble_to_json(out.ensemble).dump(1) + "\n";
        const std::string ens_hash = io::sha256_hex(ens_text);
        files.emplace_back(ens_path, std::move(ens_text));
        files.emplace_back(trace_path, io::trace_csv(out.result));
        manifest_runs.push_back({{"point", p.label},
                                 {"m", p.m},
                                 {"eps1", p.eps1},
                                 {"eps2", p.eps2},
                                 {"seed", seed},
                                 {"master_seed", seed},
                                 {"ensemble_file", ens_path},
                                 {"ensemble_sha256", ens_hash},
                                 {"trace_file", trace_path},
                                 {"rounds", out.result.traces.size()},
                                 {"terminated_early", out.result.terminated_early
                                                          ? json(*out.result.terminated_early)
                                                          : json(nullptr)}});
      }
      res.runs.push_back(std::move(out));
    }
  }
  res.summary = summarize(res.runs, res.points, cfg.fed.big_n);
  if (!write) return res;

  files.emplace_back("summary.csv", summary_csv(res.summary));
  files.emplace_back("final.csv", final_csv(res.runs));
  json file_list = json::array();
  for (const auto& [rel, content] : files) {
    io::write_file_atomic(res.output_dir / rel, content);
    file_list.push_back({{"path", rel}, {"sha256", io::sha256_hex(content)}, {"bytes", content.size()}});
  }
  json manifest = {{"tool", "fedlqr"},
                   {"version", kVersion},
                   {"config", cfg.resolved},
                   {"runs", manifest_runs},
                   {"files", file_list}};
  io::write_file_atomic(res.output_dir / "manifest.json", manifest.dump(1) + "\n");
  return res;
}

// ---- plot data -----------------------------------------------------------------

// Splits summary.csv into one (x = round, mean, std) CSV per sweep point.
// Returns the written paths.
inline std::vector<std::filesystem::path> emit_plot_data(const std::filesystem::path& summary_path,
                                                         const std::filesystem::path& out_dir) {
  const io::CsvTable t = io::parse_csv(io::read_file(summary_path));
  if (t.rows.empty()) throw InvalidInput("emit-plots: summary has no rows");
  const std::size_t c_point = t.column("point");
  const std::size_t c_round = t.column("round");
  const std::size_t c_mean = t.column("mean");
  const std::size_t c_std = t.column("std");
  std::vector<std::string> order;
  std::map<std::string, std::string> series;
  for (const auto& row : t.rows) {
    const std::string& p = row[c_point];
    if (!series.count(p)) {
      order.push_back(p);
      series[p] = "x,mean,std\n";
    }
    series[p] += row[c_round] + ',' + row[c_mean] + ',' + row[c_std] + '\n';
  }
  std::vector<std::filesystem::path> written;
  for (const auto& p : order) {
    const auto path = out_dir / ("plot_" + p + ".csv");
    io::write_file_atomic(path, series[p]);
    written.push_back(path);
  }
  return written;
}

// ---- verify ----------------------------------------------------------------------

struct VerifyReport {
  std::vector<oracles::OracleCheck> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed(); });
  }
};

// Prints the analytic constants for the first sweep point and seed, then runs
// the randomized inequality suites around the configured nominal system.
inline VerifyReport verify(const ExperimentConfig& cfg, std::ostream& out,
                           std::size_t suite_cases = 50) {
  const SweepPoint p = cfg.points().front();
  const std::uint64_t seed = cfg.seeds.front();
  const Ensemble e = build_ensemble(cfg, p, seed);
  const auto& sys = e.systems;
  if (auto bad = first_unstabilized(e, cfg.k0)) {
    throw PreconditionFailed("verify: k0 does not stabilize system " + std::to_string(*bad + 1));
  }
  auto row = [&out](const std::string& k, const std::string& v) {
    out << "  " << k;
    for (std::size_t i = k.size(); i < 34; ++i) out << ' ';
    out << v << '\n';
  };
  auto num = [](double v) { return io::format_double(v); };

  out << "ensemble " << p.label << " seed " << seed << " (" << sys.size() << " systems)\n";
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const Gain ks = optimal_gain(sys[i], cfg.cost);
    out << "system " << (i + 1) << '\n';
    row("C(K0)", num(exact_cost(sys[i], cfg.cost, cfg.k0)));
    row("C(K*)", num(exact_cost(sys[i], cfg.cost, ks)));
    row("rho(A - B K0)", num(closed_loop_spectral_radius(sys[i], cfg.k0)));
    if (i == e.nominal_index) {
      for (Eigen::Index r = 0; r < ks.k.rows(); ++r) {
        std::string line;
        for (Eigen::Index c = 0; c < ks.k.cols(); ++c) line += num(ks.k(r, c)) + (c + 1 < ks.k.cols() ? "  " : "");
        row("K* row " + std::to_string(r + 1), line);
      }
    }
  }
  const HeterogeneityMeasure m = measure_heterogeneity(e);
  const ProblemConstants pc = problem_constants(sys, cfg.cost, cfg.k0);
  const SmoothnessConstants sm = smoothness_constants(pc);
  const UniformBounds ub = uniform_bounds(pc);
  const HetBound hb = het_bound(sys, cfg.cost, cfg.k0, m.eps1, m.eps2);
  out << "constants at K0\n";
  row("measured eps1, eps2", num(m.eps1) + ", " + num(m.eps2));
  row("C_max(K0)", num(pc.c_max));
  row("h_delta", num(sm.h_delta));
  row("h_cost", num(sm.h_cost));
  row("h_grad", num(sm.h_grad));
  row("h0, h1, h2", num(ub.h0) + ", " + num(ub.h1) + ", " + num(ub.h2));
  row("h_het^1, h_het^2", num(hb.h1) + ", " + num(hb.h2));
  row("het_bound", num(hb.bound));
  row("admissible het threshold", num(admissible_het_threshold(sys, cfg.cost, cfg.k0)));
  row("radius bound (x = 1)", num(radius_prescription(sys, cfg.cost, cfg.k0, 1.0)));
  row("horizon (r, eps = 1)",
      std::to_string(horizon_prescription(sys, cfg.cost, cfg.k0, cfg.fed.zo.r, 1.0)));
  row("samples (eps = 1, delta = 0.1)",
      std::to_string(sample_size_prescription(sys, cfg.cost, cfg.k0, cfg.fed.zo.r, 1.0, 0.1, p.m,
                                              cfg.fed.big_l, cfg.cost.h_bound, cfg.cost.mu)));

  VerifyReport rep;
  oracles::SuiteOptions so;
  so.cases = suite_cases;
  so.seed = seed;
  rep.checks.push_back(oracles::gradient_heterogeneity_suite(cfg.nominal, cfg.cost, cfg.z1, cfg.z2, so));
  const auto smooth = oracles::smoothness_suite(cfg.nominal, cfg.cost, cfg.z1, cfg.z2, so);
  rep.checks.push_back(smooth.cost);
  rep.checks.push_back(smooth.grad);
  const auto uni = oracles::uniform_bounds_suite(cfg.nominal, cfg.cost, cfg.z1, cfg.z2, so);
  rep.checks.push_back(uni.e_sigma);
  rep.checks.push_back(uni.gain);
  rep.checks.push_back(oracles::gradient_domination_suite(cfg.nominal, cfg.cost, cfg.z1, cfg.z2, so));
  oracles::ClosenessOptions co;
  co.cases = std::max<std::size_t>(1, suite_cases / 10);
  co.seed = seed;
  rep.checks.push_back(oracles::closeness_suite(cfg.nominal, cfg.cost, cfg.k0, cfg.z1, cfg.z2, co));

  out << "oracle suites\n";
  for (const auto& c : rep.checks) {
    out << "  " << (c.passed() ? "PASS " : "FAIL ") << c.name << ": " << c.violations << "/"
        << c.cases << " violations, worst ratio " << num(c.worst_ratio) << ", skipped "
        << c.skipped << '\n';
  }
  return rep;
}

}  // namespace fedlqr::experiment
