#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace fedlqr {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidMatrix : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class SolverFailure : public Error {
 public:
  using Error::Error;
};

// A gain does not stabilize a system. `agent` is set when the failing system
// is part of an ensemble.
class UnstableSystem : public Error {
 public:
  explicit UnstableSystem(const std::string& what,
                          std::optional<std::size_t> agent = std::nullopt)
      : Error(what), agent_(agent) {}

  std::optional<std::size_t> agent() const { return agent_; }

 private:
  std::optional<std::size_t> agent_;
};

class StepTooLarge : public Error {
 public:
  using Error::Error;
};

class PreconditionFailed : public Error {
 public:
  using Error::Error;
};

class EstimateFailed : public Error {
 public:
  using Error::Error;
};

// Raised by rollout() when the state norm crosses the overflow guard.
class TrajectoryDiverged : public Error {
 public:
  TrajectoryDiverged(const std::string& what, double partial_cost,
                     std::size_t steps)
      : Error(what), partial_cost_(partial_cost), steps_(steps) {}

  double partial_cost() const { return partial_cost_; }
  std::size_t steps_completed() const { return steps_; }

 private:
  double partial_cost_;
  std::size_t steps_;
};

// A local policy-gradient step left the agent's closed loop unstable.
class LocalInstability : public Error {
 public:
  LocalInstability(const std::string& what, std::size_t agent,
                   std::size_t local_step, double spectral_radius)
      : Error(what),
        agent_(agent),
        local_step_(local_step),
        spectral_radius_(spectral_radius) {}

  std::size_t agent() const { return agent_; }
  std::size_t local_step() const { return local_step_; }
  double spectral_radius() const { return spectral_radius_; }

 private:
  std::size_t agent_;
  std::size_t local_step_;
  double spectral_radius_;
};

}  // namespace fedlqr
