#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace heli {

// Base of every error thrown by the library. The CLI maps subclasses to
// process exit codes (see tools/helisim).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the mathematical domain of an operation (gimbal region,
// negative thrust in the torque law, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (bad gains, singular gain set,
// malformed scenario, missing file reference).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An iterative solver failed to reach its tolerance.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, int iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}

  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

// Requested operating point not reachable within actuator or envelope limits.
class EnvelopeError : public Error {
 public:
  using Error::Error;
};

// Least-squares design matrix too ill-conditioned to solve without
// regularization.
class ConditioningError : public Error {
 public:
  ConditioningError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}

  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

// Malformed text input. line() is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite state derivative during integration.
class IntegrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace heli
