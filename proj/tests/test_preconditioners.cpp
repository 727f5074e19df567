#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gap/preconditioners.hpp"
#include "gap/softplus.hpp"
#include "gap/theory.hpp"

using namespace gap;

namespace {

Tensor randn(Shape s, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(std::move(s));
  for (double& x : t.data()) x = n(rng);
  return t;
}

// Independent reference: ½·log(1 + e^{2x}) evaluated in long double.
double sp_reference(double x) { return static_cast<double>(0.5L * std::log1p(std::exp(2.0L * x))); }

}  // namespace

TEST(Softplus, ClosedFormValues) {
  EXPECT_NEAR(sp(0.0), 0.5 * std::log(2.0), 1e-16);
  EXPECT_NEAR(sp(0.0), 0.3465736, 1e-7);
  EXPECT_LT(sp(20.0) - 20.0, 1e-15);
  EXPECT_GE(sp(20.0) - 20.0, 0.0);
  EXPECT_NEAR(sp_inv(1.0), 0.5 * std::log(std::exp(2.0) - 1.0), 1e-15);
  EXPECT_NEAR(sp_inv(1.0), 0.9272933, 1e-7);
  EXPECT_NEAR(sp(sp_inv(1.0)), 1.0, 1e-12);
  EXPECT_NEAR(sp_inv(0.5 * std::log(2.0)), 0.0, 1e-15);
}

TEST(Softplus, StableAndMonotone) {
  double prev = 0.0;
  for (double x = -30.0; x <= 30.0; x += 0.25) {
    const double v = sp(x);
    EXPECT_GT(v, 0.0);
    EXPECT_GT(v, prev);
    EXPECT_NEAR(v, sp_reference(x), 1e-14 * std::max(1.0, v));
    prev = v;
  }
  EXPECT_TRUE(std::isfinite(sp(800.0)));
  EXPECT_GT(sp(-300.0), 0.0);  // e^-600 is still a normal double
}

TEST(Softplus, DerivativeIsSigmoidOfTwoX) {
  for (double x : {-5.0, -0.3, 0.0, 0.7, 4.0}) {
    const double fd = (sp(x + 1e-6) - sp(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(sp_derivative(x), fd, 1e-9);
    EXPECT_NEAR(sp_derivative(x), 1.0 / (1.0 + std::exp(-2.0 * x)), 1e-15);
  }
}

TEST(Softplus, InverseRoundTrip) {
  Rng rng = make_rng(1, 0);
  std::uniform_real_distribution<double> y(1e-6, 10.0);
  for (int i = 0; i < 100; ++i) {
    const double v = y(rng);
    EXPECT_LT(std::abs(sp(sp_inv(v)) - v), 1e-12);
  }
  EXPECT_THROW(sp_inv(0.0), DomainError);
  EXPECT_THROW(sp_inv(-1.0), DomainError);
}

TEST(GapTransform, IdentityMetaIsIdentityMap) {
  Rng rng = make_rng(2, 0);
  const Tensor g = randn({5, 9}, rng);
  EXPECT_LT(max_abs_diff(gap_transform(linalg::orient_min_rows(g), GapMeta::identity(5)), g), 1e-10);
  EXPECT_LT(max_abs_diff(approx_gap_transform(g, GapMeta::identity(5)), g), 1e-10);
  EXPECT_LT(max_abs_diff(meta_sgd_transform(g, Tensor(g.shape(), sp_inv(1.0)), true), g), 1e-10);
  EXPECT_EQ(meta_sgd_transform(g, Tensor(g.shape(), 1.0), false), g);
}

TEST(GapTransform, HandComputedDiagonal) {
  const GapMeta meta{Tensor::vector({sp_inv(2.0), sp_inv(0.5)})};
  const Tensor out = gap_transform(linalg::orient_min_rows(Tensor::matrix(2, 2, {3, 0, 0, 1})), meta);
  EXPECT_LT(max_abs_diff(out, Tensor::matrix(2, 2, {6, 0, 0, 0.5})), 1e-12);
}

TEST(GapTransform, EqualsDTimesG) {
  Rng rng = make_rng(3, 0);
  for (int t = 0; t < 20; ++t) {
    const Tensor g = randn({5, 9}, rng);
    const GapMeta meta{randn({5}, rng)};
    const linalg::SvdResult r = linalg::svd(g);
    Tensor d(Shape{5, 5});
    const Tensor s = meta.scales();
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t k = 0; k < 5; ++k) d(i, j) += r.u(i, k) * s[k] * r.u(j, k);
    EXPECT_LT(max_abs_diff(gap_transform(linalg::orient_min_rows(g), meta), matmul(d, g)), 1e-10);
  }
}

TEST(GapTransform, MetaLengthMustMatchRows) {
  EXPECT_THROW(gap_transform(linalg::orient_min_rows(Tensor(Shape{3, 4}, 1.0)), GapMeta::identity(4)),
               DimensionError);
  EXPECT_THROW(approx_gap_transform(Tensor(Shape{3, 4}, 1.0), GapMeta::identity(2)), DimensionError);
  EXPECT_THROW(meta_sgd_transform(Tensor(Shape{3, 4}), Tensor(Shape{4, 3}), false), DimensionError);
}

TEST(ApproxGap, ScalesRows) {
  const Tensor g = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const GapMeta meta{Tensor::vector({sp_inv(2.0), sp_inv(0.25)})};
  EXPECT_LT(max_abs_diff(approx_gap_transform(g, meta), Tensor::matrix(2, 3, {2, 4, 6, 1, 1.25, 1.5})), 1e-12);
}

TEST(ApproxGap, ExactForOrthogonalRows) {
  Rng rng = make_rng(4, 0);
  for (int t = 0; t < 10; ++t) {
    const Tensor g = theory::orthogonal_rows_matrix(6, 15, rng);
    const GapMeta meta{randn({6}, rng)};
    EXPECT_LT(max_abs_diff(approx_gap_transform(g, meta), gap_transform(linalg::orient_min_rows(g), meta)), 1e-9);
  }
}

TEST(MetaSgd, MatchesScalarLoop) {
  Rng rng = make_rng(5, 0);
  const Tensor g = randn({4, 7}, rng), a = randn({4, 7}, rng);
  const Tensor plain = meta_sgd_transform(g, a, false);
  const Tensor pd = meta_sgd_transform(g, a, true);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_EQ(plain[i], a[i] * g[i]);
    EXPECT_NEAR(pd[i], sp_reference(a[i]) * g[i], 1e-14);
  }
}

TEST(PGap, IdentityUGivesDiagonal) {
  const GapMeta meta{Tensor::vector({0.1, -0.4, 2.0})};
  const PGapOperator p = build_p_gap(Tensor::identity(3), meta, 4);
  const Tensor s = meta.scales();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(p.d(i, j), i == j ? s[i] : 0.0);
  EXPECT_EQ(p.dim(), 12u);
}

TEST(PGap, OperatorEqualsDenseAndVecOfDG) {
  Rng rng = make_rng(6, 0);
  const Tensor g = randn({4, 6}, rng);
  const GapMeta meta{randn({4}, rng)};
  const PGapOperator p = build_p_gap(linalg::svd(g).u, meta, 6);
  const Tensor v = vec(g);
  EXPECT_LT(max_abs_diff(p.apply(v), vec(matmul(p.d, g))), 1e-12);
  const Tensor dense = p.dense();
  EXPECT_LT(max_abs_diff(matmul(dense, v.reshaped({24, 1})).reshaped({24}), p.apply(v)), 1e-12);
  EXPECT_EQ(unvec(v, 4, 6), g);
}

TEST(PGap, SymmetricWithEigenvaluesSp) {
  Rng rng = make_rng(7, 0);
  for (int t = 0; t < 200; ++t) {
    const Tensor g = randn({5, 8}, rng);
    const GapMeta meta{randn({5}, rng, 2.0)};
    const PGapOperator p = build_p_gap(linalg::svd(g).u, meta, 8);
    EXPECT_LT(frobenius_norm(sub(p.d, transpose(p.d))), 1e-12);
    const Tensor eig = linalg::symmetric_eigen(p.d).values;
    Tensor s = meta.scales();
    std::sort(s.data().begin(), s.data().end());
    EXPECT_LT(max_abs_diff(eig, s), 1e-9);
    EXPECT_GT(eig[0], 0.0);
  }
}

TEST(PGap, DependsOnTheGradient) {
  Rng rng = make_rng(8, 0);
  const GapMeta meta{randn({4}, rng)};
  const Tensor d1 = build_p_gap(linalg::svd(randn({4, 7}, rng)).u, meta, 7).d;
  const Tensor d2 = build_p_gap(linalg::svd(randn({4, 7}, rng)).u, meta, 7).d;
  EXPECT_GT(frobenius_norm(sub(d1, d2)), 0.0);
}

TEST(PGap, DescentDirection) {
  Rng rng = make_rng(9, 0);
  for (int t = 0; t < 100; ++t) {
    const Tensor g = randn({3, 5}, rng);
    const PGapOperator p = build_p_gap(linalg::svd(randn({3, 5}, rng)).u, GapMeta{randn({3}, rng, 2.0)}, 5);
    const Tensor v = vec(g);
    EXPECT_GT(dot(v.data(), p.apply(v).data()), 0.0);
  }
}

TEST(PrecondKind, NamesRoundTrip) {
  for (PrecondKind k : {PrecondKind::kIdentity, PrecondKind::kGap, PrecondKind::kApproxGap, PrecondKind::kMetaSgd,
                        PrecondKind::kMetaSgdPd})
    EXPECT_EQ(parse_precond_kind(to_string(k)), k);
  EXPECT_EQ(parse_precond_kind("maml"), PrecondKind::kIdentity);
  EXPECT_FALSE(parse_precond_kind("sgd").has_value());
}

// Frozen-factor tape transform: value equals gap_transform; ∂/∂m exact.
TEST(TapeGap, FrozenModeValueAndMetaGradient) {
  Rng rng = make_rng(10, 0);
  const Tensor g = randn({4, 6}, rng);
  const Tensor m = randn({4}, rng);
  const Tensor w = randn({4, 6}, rng);
  ad::Tape tape;
  const ad::Var gv = tape.leaf(g), mv = tape.leaf(m);
  const ad::Var out = precond::gap(gv, mv, precond::SvdGradient::kFrozen);
  EXPECT_LT(max_abs_diff(out.value(), gap_transform(linalg::orient_min_rows(g), GapMeta{m})), 1e-12);
  const Tensor gm = ad::grad(ad::sum(tape.constant(w) * out), mv);
  const Tensor fd = ad::finite_diff_grad(
      [&](const Tensor& mm) { return dot(w.data(), gap_transform(linalg::orient_min_rows(g), GapMeta{mm}).data()); },
      m, 1e-6);
  EXPECT_LT(frobenius_norm(sub(gm, fd)) / frobenius_norm(fd), 1e-8);
}

TEST(TapeGap, FullModeDifferentiatesThroughSvd) {
  Rng rng = make_rng(11, 0);
  const Tensor g = randn({3, 5}, rng);
  const Tensor m = randn({3}, rng);
  const Tensor w = randn({3, 5}, rng);
  ad::Tape tape;
  const ad::Var gv = tape.leaf(g), mv = tape.leaf(m);
  precond::GapStepInfo info;
  const ad::Var out = precond::gap(gv, mv, precond::SvdGradient::kFull, &info);
  EXPECT_FALSE(info.fell_back);
  const auto grads = ad::grad(ad::sum(tape.constant(w) * out), std::vector<ad::Var>{gv, mv});
  auto f = [&](const Tensor& gg, const Tensor& mm) {
    return dot(w.data(), gap_transform(linalg::orient_min_rows(gg), GapMeta{mm}).data());
  };
  const Tensor fd_g = ad::finite_diff_grad([&](const Tensor& x) { return f(x, m); }, g, 1e-6);
  const Tensor fd_m = ad::finite_diff_grad([&](const Tensor& x) { return f(g, x); }, m, 1e-6);
  EXPECT_LT(frobenius_norm(sub(grads[0], fd_g)) / frobenius_norm(fd_g), 1e-6);
  EXPECT_LT(frobenius_norm(sub(grads[1], fd_m)) / frobenius_norm(fd_m), 1e-6);
}

TEST(TapeGap, FullModeFallsBackOnRankDeficiency) {
  Rng rng = make_rng(12, 0);
  const Tensor g = matmul(randn({4, 1}, rng), randn({1, 6}, rng));
  ad::Tape tape;
  precond::GapStepInfo info;
  const ad::Var out = precond::gap(tape.leaf(g), tape.leaf(Tensor(Shape{4}, 0.3)), precond::SvdGradient::kFull, &info);
  EXPECT_TRUE(info.fell_back);
  EXPECT_TRUE(out.value().all_finite());
}
