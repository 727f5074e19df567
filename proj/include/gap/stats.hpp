#pragma once

#include <cmath>
#include <span>

#include "gap/errors.hpp"

namespace gap::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw ContractError("mean of empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n − 1 denominator).
inline double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) throw ContractError("stddev needs at least two values");
  const double mu = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Half-width of the normal-approximation 95% interval: 1.96·s/√n.
inline double ci95(std::span<const double> xs) {
  return 1.96 * sample_stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace gap::stats
