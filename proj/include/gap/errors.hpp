#pragma once

#include <stdexcept>
#include <string>

namespace gap {

/// Shapes do not compose (operand mismatch, bad axis, wrong rank).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke a documented precondition (e.g. grad of a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A node id or tape handle does not belong to the tape being queried.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Iterative solver exhausted its sweep budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Singular values too close for a stable SVD derivative.
class DegeneracyError : public std::runtime_error {
 public:
  DegeneracyError(const std::string& what, double gap)
      : std::runtime_error(what), gap_(gap) {}
  double relative_gap() const noexcept { return gap_; }

 private:
  double gap_;
};

/// A loss or parameter became NaN/Inf during training.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gap
