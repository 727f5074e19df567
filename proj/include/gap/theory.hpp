#pragma once

// Monte-Carlo checks of the sphere lemmas and of the asymptotic agreement
// between the GAP transform and its row-scaling approximation.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "gap/errors.hpp"
#include "gap/linalg.hpp"
#include "gap/preconditioners.hpp"
#include "gap/rng.hpp"
#include "gap/tensor.hpp"

namespace gap::theory {

struct SphereSample {
  Tensor v;
};

/// Standard normal vector divided by its norm.
inline SphereSample sample_unit_sphere(std::size_t n, Rng& rng) {
  if (n < 1) throw DomainError("sample_unit_sphere: n must be ≥ 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor v(Shape{n});
  double norm2 = 0.0;
  while (norm2 == 0.0) {
    for (double& x : v.data()) x = normal(rng);
    norm2 = dot(v.data(), v.data());
  }
  if (n == 1) {
    v[0] = v[0] > 0.0 ? 1.0 : -1.0;
    return {std::move(v)};
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v.data()) x *= inv;
  return {std::move(v)};
}

inline Tensor gaussian_matrix(std::size_t m, std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor g(Shape{m, n});
  for (double& x : g.data()) x = normal(rng);
  return g;
}

/// A statistic, the value it is compared against and the allowed slack.
struct CheckResult {
  double statistic = 0.0;
  double reference = 0.0;
  double slack = 0.0;
  bool pass = false;
};

/// Var(X₁) for X uniform on the unit sphere in ℝⁿ, estimated as mean(X₁²)
/// (the mean is zero by symmetry). Passes if within 5 standard errors of 1/n.
inline CheckResult check_variance_lemma(std::size_t n, std::size_t trials, Rng& rng) {
  if (trials < 2) throw ContractError("check_variance_lemma: need at least two trials");
  double s2 = 0.0, s4 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const double x = sample_unit_sphere(n, rng).v[0];
    s2 += x * x;
    s4 += x * x * x * x;
  }
  const double N = static_cast<double>(trials);
  const double var = s2 / N;
  const double se = std::sqrt(std::max(s4 / N - var * var, 0.0) / N);
  CheckResult r{var, 1.0 / static_cast<double>(n), 5.0 * se, false};
  r.pass = std::abs(r.statistic - r.reference) <= r.slack;
  return r;
}

/// Fraction of independent sphere pairs with |⟨x, y⟩| > eps, against the
/// Chebyshev bound 1/(n·eps²) plus three binomial standard errors taken at
/// the bound.
inline CheckResult check_chebyshev_lemma(std::size_t n, double eps, std::size_t trials, Rng& rng) {
  if (!(eps > 0.0)) throw DomainError("check_chebyshev_lemma: eps must be positive");
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor x = sample_unit_sphere(n, rng).v;
    const Tensor y = sample_unit_sphere(n, rng).v;
    if (std::abs(dot(x.data(), y.data())) > eps) ++hits;
  }
  const double N = static_cast<double>(trials);
  const double bound = 1.0 / (static_cast<double>(n) * eps * eps);
  const double b = std::min(bound, 1.0);
  CheckResult r{static_cast<double>(hits) / N, bound, 3.0 * std::sqrt(b * (1.0 - b) / N), false};
  r.pass = r.statistic <= r.reference + r.slack;
  return r;
}

inline double abs_cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() == 1) return (a[0] != 0.0 && b[0] != 0.0) ? 1.0 : 0.0;
  const double denom = std::sqrt(dot(a, a) * dot(b, b));
  return denom > 0.0 ? std::min(1.0, std::abs(dot(a, b)) / denom) : 0.0;
}

/// E|N(0, 1/n)| = √(2/(πn)), the large-n mean |cos| between Gaussian rows.
inline double cosine_reference(std::size_t n) {
  return std::sqrt(2.0 / (std::numbers::pi * static_cast<double>(n)));
}

struct CosinePoint {
  std::size_t n = 0;
  double mean_abs_cos = 0.0;
  double analytic_ref = 0.0;
};

/// Mean |cos| over all row pairs of Gaussian m×n matrices, per n.
inline std::vector<CosinePoint> cosine_decay_sweep(std::size_t m, std::span<const std::size_t> n_grid,
                                                   std::size_t trials, Rng& rng) {
  if (m < 2) throw DomainError("cosine_decay_sweep: m must be ≥ 2");
  std::vector<CosinePoint> out;
  for (std::size_t n : n_grid) {
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const Tensor g = gaussian_matrix(m, n, rng);
      const double* p = g.data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
          acc += abs_cosine({p + i * n, n}, {p + j * n, n});
          ++pairs;
        }
    }
    out.push_back({n, acc / static_cast<double>(pairs), cosine_reference(n)});
  }
  return out;
}

struct ApproxPoint {
  std::size_t n = 0;
  double mean_rel_error = 0.0;
};

/// ‖gap(G) − approx(G)‖_F / ‖gap(G)‖_F for Gaussian m×n G.
inline double approx_relative_error(const Tensor& g, const GapMeta& meta) {
  const Tensor exact = gap_transform(linalg::orient_min_rows(g), meta);
  const Tensor approx = approx_gap_transform(g, meta);
  return relative_error(approx, exact);
}

inline std::vector<ApproxPoint> check_theorem2(std::size_t m, std::span<const std::size_t> n_grid,
                                               const GapMeta& meta, std::size_t trials, Rng& rng) {
  if (meta.size() != m) throw DimensionError("check_theorem2: meta length must equal m");
  std::vector<ApproxPoint> out;
  for (std::size_t n : n_grid) {
    if (n < m) throw DimensionError("check_theorem2: need n ≥ m");
    double acc = 0.0;
    for (std::size_t t = 0; t < trials; ++t) acc += approx_relative_error(gaussian_matrix(m, n, rng), meta);
    out.push_back({n, acc / static_cast<double>(trials)});
  }
  return out;
}

/// Mean ‖sort(σ) − sort(row norms)‖ / ‖σ‖ for Gaussian m×n matrices, per n.
inline std::vector<ApproxPoint> singular_value_row_norm_gap(std::size_t m, std::span<const std::size_t> n_grid,
                                                           std::size_t trials, Rng& rng) {
  std::vector<ApproxPoint> out;
  for (std::size_t n : n_grid) {
    double acc = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const Tensor g = gaussian_matrix(m, n, rng);
      const linalg::SvdResult r = linalg::svd(g);
      std::vector<double> norms(m);
      for (std::size_t i = 0; i < m; ++i) norms[i] = std::sqrt(dot({g.data().data() + i * n, n}, {g.data().data() + i * n, n}));
      std::sort(norms.begin(), norms.end(), std::greater<>());
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        num += (r.sigma[i] - norms[i]) * (r.sigma[i] - norms[i]);
        den += r.sigma[i] * r.sigma[i];
      }
      acc += std::sqrt(num / den);
    }
    out.push_back({n, acc / static_cast<double>(trials)});
  }
  return out;
}

/// m×n matrix with exactly orthogonal rows of norms m, m − 1, …, 1, so the
/// SVD keeps row order and u is the identity up to signs.
inline Tensor orthogonal_rows_matrix(std::size_t m, std::size_t n, Rng& rng) {
  if (m > n) throw DimensionError("orthogonal_rows_matrix: need m ≤ n");
  Tensor g = gaussian_matrix(m, n, rng);
  double* p = g.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = p + i * n;
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < i; ++j) {
        const double* prev = p + j * n;
        const double proj = dot({row, n}, {prev, n});
        for (std::size_t k = 0; k < n; ++k) row[k] -= proj * prev[k];
      }
    const double norm = std::sqrt(dot({row, n}, {row, n}));
    for (std::size_t k = 0; k < n; ++k) row[k] /= norm;
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) p[i * n + k] *= static_cast<double>(m - i);
  return g;
}

}  // namespace gap::theory
