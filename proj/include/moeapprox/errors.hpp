#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace moeapprox {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input vector length does not match a network or layer.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed construction input (bad knot sequence, bad chart parameters...).
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Networks that cannot be stacked, concatenated or composed.
class CompositionError : public Error {
 public:
  using Error::Error;
};

/// Active-parameter accounting requires uniform experts within a layer.
class AccountingError : public Error {
 public:
  using Error::Error;
};

/// Point outside every region of a target factor.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Target failed overlap validation; carries the offending point.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::vector<double> witness, double discrepancy)
      : Error(what), witness_(std::move(witness)), discrepancy_(discrepancy) {}

  const std::vector<double>& witness() const noexcept { return witness_; }
  double discrepancy() const noexcept { return discrepancy_; }

 private:
  std::vector<double> witness_;
  double discrepancy_;
};

/// Partition approximators could not reach the routing tolerance.
class CertificationError : public Error {
 public:
  CertificationError(const std::string& what, double best_tol, std::size_t best_width,
                     std::size_t factor = 0)
      : Error(what), best_tol_(best_tol), best_width_(best_width), factor_(factor) {}

  double best_tolerance() const noexcept { return best_tol_; }
  std::size_t best_width() const noexcept { return best_width_; }
  std::size_t factor() const noexcept { return factor_; }

 private:
  double best_tol_;
  std::size_t best_width_;
  std::size_t factor_;
};

/// A fitter produced or received non-finite values, or its solve failed.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value met while evaluating over a grid.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, std::vector<double> witness)
      : Error(what), witness_(std::move(witness)) {}

  const std::vector<double>& witness() const noexcept { return witness_; }

 private:
  std::vector<double> witness_;
};

/// Malformed serialized network or report.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration violates its schema.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace moeapprox
