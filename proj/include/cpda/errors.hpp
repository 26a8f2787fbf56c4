#pragma once

#include <stdexcept>
#include <string>

namespace cpda {

/// Thrown when vector/matrix shapes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an ensemble has no spread where spread is required
/// (e.g. scaling a precision operator by the inverse maximum variance).
class DegenerateEnsembleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a constraint Jacobian (or derived system such as G G^T)
/// loses row rank.
class RankDeficiencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Newton projection onto the constraint manifold did not reach the
/// requested tolerance. Carries the last residual so callers can report
/// which member/scheme failed.
class ProjectionFailure : public std::runtime_error {
 public:
  ProjectionFailure(const std::string& what, double residual, int iterations)
      : std::runtime_error(what), residual(residual), iterations(iterations) {}

  double residual = 0.0;
  int iterations = 0;
  int member = -1;           // filled in by ensemble-level callers
  std::string scheme;        // filled in by the SDAE stepper
};

/// Generic numerical failure with diagnostics (non-SPD inner matrix,
/// non-finite drift, solver breakdown).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration; `key` points at the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config error at '" + key + "': " + what), key(key) {}

  std::string key;
};

}  // namespace cpda
