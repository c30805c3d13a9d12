// fedlqr: run federated LQR experiments, print theory constants, emit plot data.

#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fedlqr/experiment.hpp"

namespace ex = fedlqr::experiment;

namespace {

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ex::kExitConfigError;
  } catch (const fedlqr::PreconditionFailed& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return ex::kExitPreconditionFailed;
  } catch (const fedlqr::LocalInstability& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return ex::kExitPreconditionFailed;
  } catch (const fedlqr::UnstableSystem& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return ex::kExitPreconditionFailed;
  } catch (const fedlqr::InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ex::kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated model-free LQR simulator"};
  app.set_version_flag("--version", ex::kVersion);
  app.require_subcommand(1);

  std::string run_config;
  bool quiet = false;
  auto* run_cmd = app.add_subcommand("run", "Run every (sweep point, seed) pair of a config");
  run_cmd->add_option("config", run_config, "JSON config file")->required();
  run_cmd->add_flag("-q,--quiet", quiet, "Suppress per-run progress lines");

  std::string verify_config;
  std::size_t suite_cases = 50;
  auto* verify_cmd =
      app.add_subcommand("verify", "Print theory constants and run the inequality suites");
  verify_cmd->add_option("config", verify_config, "JSON config file")->required();
  verify_cmd->add_option("--cases", suite_cases, "Cases per randomized suite")
      ->check(CLI::PositiveNumber);

  std::string summary_path;
  std::string plot_dir;
  auto* plots_cmd = app.add_subcommand("emit-plots", "Write one (x, mean, std) CSV per sweep point");
  plots_cmd->add_option("summary", summary_path, "summary.csv from a run")->required();
  plots_cmd->add_option("-o,--out", plot_dir, "Output directory (default: next to summary)");

  CLI11_PARSE(app, argc, argv);

  if (*run_cmd) {
    return guarded([&] {
      const auto cfg = ex::load_config(run_config);
      const auto res = ex::run_experiment(cfg, true, quiet ? nullptr : &std::cerr);
      std::cout << "wrote " << res.runs.size() << " runs to " << res.output_dir.string() << '\n';
      return static_cast<int>(ex::kExitOk);
    });
  }
  if (*verify_cmd) {
    return guarded([&] {
      const auto cfg = ex::load_config(verify_config);
      const auto rep = ex::verify(cfg, std::cout, suite_cases);
      return static_cast<int>(rep.passed() ? ex::kExitOk : ex::kExitOracleFailure);
    });
  }
  return guarded([&] {
    const std::filesystem::path s(summary_path);
    const std::filesystem::path out = plot_dir.empty() ? s.parent_path() : std::filesystem::path(plot_dir);
    for (const auto& p : ex::emit_plot_data(s, out)) std::cout << p.string() << '\n';
    return static_cast<int>(ex::kExitOk);
  });
}
