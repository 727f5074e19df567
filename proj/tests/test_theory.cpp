#include <gtest/gtest.h>

#include <cmath>

#include "gap/theory.hpp"
#include "gap/verify.hpp"

using namespace gap;
using namespace gap::theory;

TEST(Sphere, UnitNormAndSignForNEqualOne) {
  Rng rng = make_rng(1, 0);
  for (std::size_t n : {1, 2, 7, 300}) {
    for (int t = 0; t < 20; ++t) {
      const Tensor v = sample_unit_sphere(n, rng).v;
      EXPECT_NEAR(frobenius_norm(v), 1.0, 1e-12);
      if (n == 1) EXPECT_TRUE(v[0] == 1.0 || v[0] == -1.0);
    }
  }
  EXPECT_THROW(sample_unit_sphere(0, rng), DomainError);
}

TEST(Sphere, CoordinateMeansNearZero) {
  Rng rng = make_rng(2, 0);
  const std::size_t trials = 100000;
  double s[3] = {0, 0, 0};
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor v = sample_unit_sphere(3, rng).v;
    for (int k = 0; k < 3; ++k) s[k] += v[k];
  }
  // Var(X_k) = 1/3
  const double se = std::sqrt(1.0 / 3.0 / static_cast<double>(trials));
  for (double x : s) EXPECT_LT(std::abs(x / static_cast<double>(trials)), 3.0 * se);
}

TEST(VarianceLemma, WithinFiveStandardErrors) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, 11);
    for (std::size_t n : {2, 10, 100}) {
      const CheckResult r = check_variance_lemma(n, 10000, rng);
      EXPECT_TRUE(r.pass) << "n=" << n << " stat=" << r.statistic << " slack=" << r.slack;
      EXPECT_DOUBLE_EQ(r.reference, 1.0 / static_cast<double>(n));
    }
  }
}

TEST(VarianceLemma, OneDimensionIsExact) {
  Rng rng = make_rng(3, 0);
  EXPECT_EQ(check_variance_lemma(1, 10000, rng).statistic, 1.0);
}

TEST(ChebyshevLemma, BoundHolds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, 12);
    EXPECT_TRUE(check_chebyshev_lemma(64, 0.3, 10000, rng).pass);
    EXPECT_TRUE(check_chebyshev_lemma(256, 0.25, 10000, rng).pass);
  }
}

TEST(ChebyshevLemma, EpsilonAboveOneNeverHits) {
  Rng rng = make_rng(4, 0);
  const CheckResult r = check_chebyshev_lemma(4, 2.0, 5000, rng);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.reference, 1.0 / 16.0);
  EXPECT_THROW(check_chebyshev_lemma(4, 0.0, 10, rng), DomainError);
}

TEST(ChebyshevLemma, ProbabilityNonincreasingInN) {
  Rng rng = make_rng(5, 0);
  double prev = 1.0;
  for (std::size_t n : {16, 64, 256, 1024}) {
    const double p = check_chebyshev_lemma(n, 0.2, 10000, rng).statistic;
    EXPECT_LE(p, prev) << "n=" << n;
    prev = p;
  }
}

TEST(Cosine, SingleColumnIsCollinear) {
  Rng rng = make_rng(6, 0);
  const std::vector<std::size_t> grid{1};
  EXPECT_EQ(cosine_decay_sweep(4, grid, 10, rng)[0].mean_abs_cos, 1.0);
  EXPECT_THROW(cosine_decay_sweep(1, grid, 10, rng), DomainError);
}

TEST(Cosine, DecaysAndTracksReference) {
  Rng rng = make_rng(7, 0);
  const std::vector<std::size_t> grid{16, 64, 256, 400, 1024, 4096};
  const auto pts = cosine_decay_sweep(8, grid, 100, rng);
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LT(pts[i].mean_abs_cos, pts[i - 1].mean_abs_cos);
  for (const auto& p : pts) EXPECT_DOUBLE_EQ(p.analytic_ref, std::sqrt(2.0 / (M_PI * static_cast<double>(p.n))));
  EXPECT_NEAR(pts[3].mean_abs_cos, std::sqrt(2.0 / (400.0 * M_PI)), 0.2 * std::sqrt(2.0 / (400.0 * M_PI)));
}

TEST(Approximation, SingleRowIsExact) {
  Rng rng = make_rng(8, 0);
  const std::vector<std::size_t> grid{4, 64, 512};
  for (const auto& p : check_theorem2(1, grid, GapMeta{Tensor::vector({0.3})}, 50, rng))
    EXPECT_LT(p.mean_rel_error, 1e-14);
}

TEST(Approximation, ErrorShrinksFromSmallToLargeN) {
  Rng rng = make_rng(9, 0);
  const std::vector<std::size_t> grid{32, 64, 1024};
  const auto pts = check_theorem2(8, grid, verify::spread_meta(8), 100, rng);
  EXPECT_LT(pts[2].mean_rel_error, pts[0].mean_rel_error);
  EXPECT_LT(pts[2].mean_rel_error, pts[1].mean_rel_error);
}

TEST(Approximation, OrthogonalRowsAreExact) {
  Rng rng = make_rng(10, 0);
  for (int t = 0; t < 10; ++t)
    EXPECT_LT(approx_relative_error(orthogonal_rows_matrix(8, 40, rng), verify::spread_meta(8)), 1e-9);
}

TEST(Approximation, SingularValuesApproachRowNorms) {
  Rng rng = make_rng(11, 0);
  const std::vector<std::size_t> grid{32, 1024};
  const auto pts = singular_value_row_norm_gap(8, grid, 100, rng);
  EXPECT_LT(pts[1].mean_rel_error, pts[0].mean_rel_error);
}

TEST(Approximation, ShapeChecks) {
  Rng rng = make_rng(12, 0);
  const std::vector<std::size_t> grid{4};
  EXPECT_THROW(check_theorem2(8, grid, verify::spread_meta(8), 2, rng), DimensionError);
  EXPECT_THROW(check_theorem2(8, grid, verify::spread_meta(3), 2, rng), DimensionError);
}
