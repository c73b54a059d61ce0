#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dpd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid tuning parameter, boundary, scenario or other configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Empty or mismatched vector / matrix dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function (e.g. b <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Sample carries no information about scale (constant or all-zero data).
class DegenerateSampleError : public Error {
 public:
  using Error::Error;
};

/// Information matrix has an eigenvalue below the floor.
class SingularInformationError : public Error {
 public:
  using Error::Error;
};

/// Optimizer failed to reach the gradient tolerance; carries the best iterate.
class OptimizationFailure : public Error {
 public:
  OptimizationFailure(const std::string& what, std::vector<double> best, double objective,
                      double grad_norm)
      : Error(what), best_(std::move(best)), objective_(objective), grad_norm_(grad_norm) {}

  const std::vector<double>& best_iterate() const noexcept { return best_; }
  double objective() const noexcept { return objective_; }
  double grad_norm() const noexcept { return grad_norm_; }

 private:
  std::vector<double> best_;
  double objective_;
  double grad_norm_;
};

}  // namespace dpd
