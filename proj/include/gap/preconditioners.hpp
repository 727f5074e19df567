#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gap/autodiff.hpp"
#include "gap/errors.hpp"
#include "gap/linalg.hpp"
#include "gap/softplus.hpp"
#include "gap/tensor.hpp"

namespace gap {

enum class PrecondKind { kIdentity, kGap, kApproxGap, kMetaSgd, kMetaSgdPd };

inline std::string to_string(PrecondKind k) {
  switch (k) {
    case PrecondKind::kIdentity:
      return "identity";
    case PrecondKind::kGap:
      return "gap";
    case PrecondKind::kApproxGap:
      return "approx_gap";
    case PrecondKind::kMetaSgd:
      return "meta_sgd";
    case PrecondKind::kMetaSgdPd:
      return "meta_sgd_pd";
  }
  return "?";
}

inline std::optional<PrecondKind> parse_precond_kind(std::string_view s) {
  if (s == "identity" || s == "maml") return PrecondKind::kIdentity;
  if (s == "gap") return PrecondKind::kGap;
  if (s == "approx_gap") return PrecondKind::kApproxGap;
  if (s == "meta_sgd") return PrecondKind::kMetaSgd;
  if (s == "meta_sgd_pd") return PrecondKind::kMetaSgdPd;
  return std::nullopt;
}

/// Display name used in result tables.
inline std::string method_label(PrecondKind k) {
  switch (k) {
    case PrecondKind::kIdentity:
      return "MAML";
    case PrecondKind::kGap:
      return "GAP";
    case PrecondKind::kApproxGap:
      return "ApproxGAP";
    case PrecondKind::kMetaSgd:
      return "Meta-SGD";
    case PrecondKind::kMetaSgdPd:
      return "PD-Meta-SGD";
  }
  return "?";
}

/// Unconstrained diagonal parameters m; the applied scales are Sp(m) > 0.
struct GapMeta {
  Tensor m;

  /// m = sp_inv(1) so that every scale is exactly one.
  static GapMeta identity(std::size_t r) { return {Tensor(Shape{r}, sp_inv(1.0))}; }

  std::size_t size() const { return m.size(); }
  Tensor scales() const { return map(m, sp); }
};

/// U·(diag(Sp(m))·Σ)·Vᵀ for the SVD of the oriented gradient matrix.
inline Tensor gap_transform(const linalg::UnfoldedGrad& g, const GapMeta& meta) {
  const Tensor& mat = g.matrix;
  require_rank(mat, 2, "gap_transform");
  if (meta.size() != mat.rows()) {
    throw DimensionError("gap_transform: meta length " + std::to_string(meta.size()) + " vs " +
                         std::to_string(mat.rows()) + " rows");
  }
  linalg::SvdResult r = linalg::svd(mat);
  const Tensor s = meta.scales();
  for (std::size_t k = 0; k < r.sigma.size(); ++k) r.sigma[k] *= s[k];
  return linalg::reconstruct(r);
}

/// Row i scaled by Sp(m_i); the SVD-free surrogate of gap_transform.
inline Tensor approx_gap_transform(const Tensor& g, const GapMeta& meta) {
  require_rank(g, 2, "approx_gap_transform");
  if (meta.size() != g.rows()) {
    throw DimensionError("approx_gap_transform: meta length " + std::to_string(meta.size()) + " vs " +
                         std::to_string(g.rows()) + " rows");
  }
  return ad::detail::row_scale(meta.scales(), g);
}

/// a⊙g, or Sp(a)⊙g when the positive-definite variant is requested.
inline Tensor meta_sgd_transform(const Tensor& g, const Tensor& a, bool pd) {
  require_same_shape(g, a, "meta_sgd_transform");
  return pd ? hadamard(map(a, sp), g) : hadamard(a, g);
}

/// Column-stacked vectorisation of an m×n matrix.
inline Tensor vec(const Tensor& g) {
  require_rank(g, 2, "vec");
  const std::size_t m = g.rows(), n = g.cols();
  Tensor out(Shape{m * n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) out[j * m + i] = g(i, j);
  return out;
}

inline Tensor unvec(const Tensor& v, std::size_t m, std::size_t n) {
  if (v.size() != m * n) throw DimensionError("unvec: length does not match m×n");
  Tensor out(Shape{m, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) out(i, j) = v[j * m + i];
  return out;
}

/// The preconditioner blkdiag(D, …, D) acting on vec(G), with D = U·diag(Sp(m))·Uᵀ.
struct PGapOperator {
  Tensor d;  // m×m
  std::size_t blocks = 0;

  std::size_t dim() const { return d.rows() * blocks; }

  Tensor apply(const Tensor& v) const {
    const std::size_t m = d.rows();
    if (v.size() != dim()) throw DimensionError("PGapOperator::apply: vector length mismatch");
    Tensor out(Shape{dim()});
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k) acc += d(i, k) * v[b * m + k];
        out[b * m + i] = acc;
      }
    return out;
  }

  /// Explicit (m·blocks)² matrix; only for small verification sizes.
  Tensor dense() const {
    const std::size_t m = d.rows();
    Tensor out(Shape{dim(), dim()});
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < m; ++k) out(b * m + i, b * m + k) = d(i, k);
    return out;
  }
};

inline PGapOperator build_p_gap(const Tensor& u, const GapMeta& meta, std::size_t n) {
  require_rank(u, 2, "build_p_gap");
  const std::size_t m = u.rows();
  if (u.cols() != m || meta.size() != m) throw DimensionError("build_p_gap: u must be m×m with m = meta length");
  if (n == 0) throw DimensionError("build_p_gap: need at least one block");
  const Tensor s = meta.scales();
  Tensor d(Shape{m, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k) acc += u(i, k) * s[k] * u(j, k);
      d(i, j) = acc;
      d(j, i) = acc;
    }
  return {std::move(d), n};
}

// ---- tape-level transforms -------------------------------------------------

namespace precond {

/// How outer-loop gradients treat the SVD inside the GAP transform.
enum class SvdGradient {
  kFrozen,  // U taken as a constant: G̃ = U·diag(Sp(m))·Uᵀ·G
  kFull,    // exact derivative through U, Σ, V (first order only)
};

/// G ↦ U·diag(s)·Σ·Vᵀ with s a separate input; numeric VJP via svd_backward.
class SvdScaleOp final : public ad::CustomOp {
 public:
  std::string name() const override { return "svd_scale"; }

  Tensor forward(std::span<const Tensor* const> in) const override {
    linalg::SvdResult r = linalg::svd(*in[0]);
    const Tensor& s = *in[1];
    for (std::size_t k = 0; k < r.sigma.size(); ++k) r.sigma[k] *= s[k];
    return linalg::reconstruct(r);
  }

  std::vector<Tensor> backward(std::span<const Tensor* const> in, const Tensor&,
                               const Tensor& gy) const override {
    const linalg::SvdResult r = linalg::svd(*in[0]);
    const Tensor& s = *in[1];
    const std::size_t m = r.u.rows();
    const Tensor gy_v = matmul(gy, r.v);             // m×m
    const Tensor ut_gy_v = matmul(transpose(r.u), gy_v);  // m×m
    const Tensor gyt_u = matmul(transpose(gy), r.u);  // n×m

    Tensor gs(Shape{m});
    linalg::SvdCotangent ct{Tensor(Shape{m, m}), Tensor(Shape{m}), Tensor(gyt_u.shape())};
    for (std::size_t k = 0; k < m; ++k) {
      gs[k] = r.sigma[k] * ut_gy_v(k, k);
      ct.dsigma[k] = s[k] * ut_gy_v(k, k);
      const double w = s[k] * r.sigma[k];
      for (std::size_t i = 0; i < m; ++i) ct.du(i, k) = gy_v(i, k) * w;
      for (std::size_t i = 0; i < gyt_u.rows(); ++i) ct.dv(i, k) = gyt_u(i, k) * w;
    }
    return {linalg::svd_backward(r, ct), std::move(gs)};
  }
};

struct GapStepInfo {
  bool fell_back = false;  // full SVD derivative refused, frozen factors used
};

/// GAP transform of an oriented gradient matrix on the tape.
inline ad::Var gap(const ad::Var& g, const ad::Var& m, SvdGradient mode, GapStepInfo* info = nullptr) {
  const Tensor& gv = g.value();
  const linalg::SvdResult r = linalg::svd(gv);
  if (mode == SvdGradient::kFull) {
    if (linalg::min_relative_gap(r) >= linalg::kSingularGapTol) {
      static const auto op = std::make_shared<const SvdScaleOp>();
      return ad::custom(op, g, ad::softplus(m));
    }
    if (info) info->fell_back = true;
  }
  ad::Tape& tape = *g.tape();
  const ad::Var u = tape.constant(r.u);
  const ad::Var ut = tape.constant(transpose(r.u));
  return ad::matmul(u, ad::row_scale(ad::softplus(m), ad::matmul(ut, g)));
}

inline ad::Var approx_gap(const ad::Var& g, const ad::Var& m) { return ad::row_scale(ad::softplus(m), g); }

inline ad::Var meta_sgd(const ad::Var& g, const ad::Var& a, bool pd) {
  return pd ? ad::softplus(a) * g : a * g;
}

}  // namespace precond

}  // namespace gap
