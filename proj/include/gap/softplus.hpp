#pragma once

#include <cmath>

#include "gap/errors.hpp"

namespace gap {

/// Sp(x) = ½·log(1 + exp(2x)), evaluated as max(x, 0) + ½·log1p(exp(−2|x|)).
inline double sp(double x) {
  return std::max(x, 0.0) + 0.5 * std::log1p(std::exp(-2.0 * std::abs(x)));
}

/// dSp/dx = 1 / (1 + exp(−2x)).
inline double sp_derivative(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-2.0 * x));
  const double e = std::exp(2.0 * x);
  return e / (1.0 + e);
}

/// Inverse of sp on (0, ∞): ½·log(exp(2y) − 1).
inline double sp_inv(double y) {
  if (!(y > 0.0)) throw DomainError("sp_inv requires y > 0");
  // For large y, ½·log(exp(2y) − 1) = y + ½·log1p(−exp(−2y)).
  if (y > 1.0) return y + 0.5 * std::log1p(-std::exp(-2.0 * y));
  return 0.5 * std::log(std::expm1(2.0 * y));
}

}  // namespace gap
