#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace saemlogit {

/// Malformed delimited input. Carries the 1-based line number of the offending row.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A value outside the model's support (e.g. a response that is not 0/1).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A covariate column with no observed entry.
class IdentifiabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Covariance block or information matrix that cannot be factorized.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Estimation broke down numerically (non-recoverable covariance, -inf likelihood, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace saemlogit
