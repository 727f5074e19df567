#pragma once

// Small dense linear algebra: tensor unfolding, one-sided Jacobi SVD and its
// reverse-mode derivative, and a cyclic Jacobi symmetric eigensolver.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gap/errors.hpp"
#include "gap/tensor.hpp"

namespace gap::linalg {

// ---- unfolding -------------------------------------------------------------

/// Mode-n unfolding (n is 1-based): rows index axis n, columns run over the
/// remaining axes in their original order, row-major.
inline Tensor mode_n_unfold(const Tensor& t, std::size_t n) {
  const Shape& shape = t.shape();
  if (n < 1 || n > shape.size()) {
    throw DimensionError("mode_n_unfold: axis " + std::to_string(n) + " out of range for " + shape_str(shape));
  }
  const std::size_t axis = n - 1;
  const std::size_t rows = shape[axis];
  const std::size_t cols = t.size() / rows;
  Tensor out(Shape{rows, cols});
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < t.size(); ++flat) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < shape.size(); ++k) {
      if (k != axis) col = col * shape[k] + idx[k];
    }
    out(idx[axis], col) = t[flat];
    for (std::size_t k = shape.size(); k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

/// Inverse of mode_n_unfold for a tensor of the given shape.
inline Tensor mode_n_refold(const Tensor& m, std::size_t n, const Shape& shape) {
  if (n < 1 || n > shape.size()) {
    throw DimensionError("mode_n_refold: axis " + std::to_string(n) + " out of range for " + shape_str(shape));
  }
  require_rank(m, 2, "mode_n_refold");
  const std::size_t axis = n - 1;
  if (m.rows() != shape[axis] || m.size() != shape_size(shape)) {
    throw DimensionError("mode_n_refold: matrix " + shape_str(m.shape()) + " does not unfold " + shape_str(shape));
  }
  Tensor out(shape);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < shape.size(); ++k) {
      if (k != axis) col = col * shape[k] + idx[k];
    }
    out[flat] = m(idx[axis], col);
    for (std::size_t k = shape.size(); k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

/// Gradient laid out as a matrix with no more rows than columns.
struct UnfoldedGrad {
  Tensor matrix;
  Shape original_shape;
  bool transposed = false;
};

/// Keeps g if rows ≤ cols, otherwise transposes; ties keep the original orientation.
inline UnfoldedGrad orient_min_rows(const Tensor& g) {
  require_rank(g, 2, "orient_min_rows");
  if (g.rows() <= g.cols()) return {g, g.shape(), false};
  return {transpose(g), g.shape(), true};
}

/// Mode-1 unfolding (for rank > 2) followed by orient_min_rows.
inline UnfoldedGrad unfold_gradient(const Tensor& g) {
  if (g.rank() < 2) throw DimensionError("unfold_gradient: need rank ≥ 2, got " + shape_str(g.shape()));
  UnfoldedGrad u = orient_min_rows(g.rank() == 2 ? g : mode_n_unfold(g, 1));
  u.original_shape = g.shape();
  return u;
}

/// Puts a matrix laid out like `layout.matrix` back into the gradient's shape.
inline Tensor refold(const UnfoldedGrad& layout, const Tensor& m) {
  require_same_shape(m, layout.matrix, "refold");
  Tensor mat = layout.transposed ? transpose(m) : m;
  if (layout.original_shape.size() == 2) return mat;
  return mode_n_refold(mat, 1, layout.original_shape);
}

// ---- SVD -------------------------------------------------------------------

/// Thin SVD of an m×n matrix with m ≤ n: input = u·diag(sigma)·vᵀ.
struct SvdResult {
  Tensor u;      // m×m, orthonormal columns
  Tensor sigma;  // length m, nonincreasing, ≥ 0
  Tensor v;      // n×m, orthonormal columns
};

struct SvdOptions {
  double rotation_tol = 1e-12;  // max |cos| between rows before a pair is rotated
  int max_sweeps = 60;
};

namespace detail {

inline void rotate_rows(double* x, double* y, std::size_t len, double c, double s) {
  for (std::size_t k = 0; k < len; ++k) {
    const double xv = x[k], yv = y[k];
    x[k] = c * xv - s * yv;
    y[k] = s * xv + c * yv;
  }
}

inline double row_dot(const double* x, const double* y, std::size_t len) {
  double s = 0.0;
  for (std::size_t k = 0; k < len; ++k) s += x[k] * y[k];
  return s;
}

// Householder reflector v (unit norm) acting on trailing coordinates from
// `offset`: H = I − 2vvᵀ.
struct Reflector {
  std::size_t offset = 0;
  std::vector<double> v;

  void apply(double* x) const {
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * x[offset + i];
    for (std::size_t i = 0; i < v.size(); ++i) x[offset + i] -= 2.0 * d * v[i];
  }
};

// Reflector mapping x to (alpha, 0, …, 0); returns false if x is already zero.
inline bool make_reflector(std::vector<double>& x, double& alpha) {
  double nx = 0.0;
  for (double e : x) nx += e * e;
  nx = std::sqrt(nx);
  if (nx == 0.0) return false;
  alpha = x[0] > 0.0 ? -nx : nx;
  x[0] -= alpha;
  double nv = 0.0;
  for (double e : x) nv += e * e;
  nv = std::sqrt(nv);
  if (nv == 0.0) return false;
  for (double& e : x) e /= nv;
  return true;
}

// Orthonormal basis (n×count) of the complement of the orthonormal columns y
// (n×k), taken from the trailing columns of y's Householder Q.
inline std::vector<std::vector<double>> orthonormal_complement(const std::vector<std::vector<double>>& y,
                                                               std::size_t n, std::size_t count) {
  const std::size_t k = y.size();
  std::vector<double> a(n * k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < n; ++i) a[i * k + j] = y[j][i];
  std::vector<Reflector> hs;
  for (std::size_t j = 0; j < k && j < n; ++j) {
    std::vector<double> x(n - j);
    for (std::size_t i = j; i < n; ++i) x[i - j] = a[i * k + j];
    double alpha = 0.0;
    if (!make_reflector(x, alpha)) continue;
    Reflector h{j, std::move(x)};
    std::vector<double> col(n);
    for (std::size_t c = j; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) col[i] = a[i * k + c];
      h.apply(col.data());
      for (std::size_t i = 0; i < n; ++i) a[i * k + c] = col[i];
    }
    hs.push_back(std::move(h));
  }
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<double> e(n, 0.0);
    e[k + c] = 1.0;
    for (std::size_t h = hs.size(); h-- > 0;) hs[h].apply(e.data());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace detail

/// SVD of g (rows ≤ cols).
///
/// gᵀ is first reduced by column-pivoted Householder QR, which exposes the
/// numerical rank r (trailing norm ≤ n·ε·‖g‖_F is dropped). One-sided
/// Jacobi then orthogonalises the r rows of the triangular factor until every
/// pair has |cos| ≤ rotation_tol. Singular vectors for zero singular values
/// complete u and v to orthonormal sets. In each column of u the entry of
/// largest magnitude is made nonnegative.
inline SvdResult svd(const Tensor& g, const SvdOptions& opt = {}) {
  require_rank(g, 2, "svd");
  const std::size_t m = g.rows(), n = g.cols();
  if (m > n) throw DimensionError("svd: expects rows ≤ cols, got " + shape_str(g.shape()));
  if (!g.all_finite()) throw DomainError("svd: input has non-finite entries");

  // a = gᵀ (n×m), reduced in place to R with column permutation perm.
  std::vector<double> a(n * m);
  const double* pg = g.data().data();
  double fro2 = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      a[j * m + i] = pg[i * n + j];
      fro2 += pg[i * n + j] * pg[i * n + j];
    }
  const double zero_tol = static_cast<double>(n) * DBL_EPSILON * std::sqrt(fro2);
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<detail::Reflector> hs;
  std::vector<double> colnorm2(m);
  std::size_t rank = 0;
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t piv = k;
    for (std::size_t j = k; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < n; ++i) s += a[i * m + j] * a[i * m + j];
      colnorm2[j] = s;
      if (s > colnorm2[piv]) piv = j;
    }
    if (std::sqrt(colnorm2[piv]) <= zero_tol) break;
    if (piv != k) {
      for (std::size_t i = 0; i < n; ++i) std::swap(a[i * m + k], a[i * m + piv]);
      std::swap(perm[k], perm[piv]);
    }
    std::vector<double> x(n - k);
    for (std::size_t i = k; i < n; ++i) x[i - k] = a[i * m + k];
    double alpha = 0.0;
    if (!detail::make_reflector(x, alpha)) break;
    detail::Reflector h{k, std::move(x)};
    a[k * m + k] = alpha;
    for (std::size_t i = k + 1; i < n; ++i) a[i * m + k] = 0.0;
    for (std::size_t j = k + 1; j < m; ++j) {
      double d = 0.0;
      for (std::size_t i = 0; i < h.v.size(); ++i) d += h.v[i] * a[(k + i) * m + j];
      for (std::size_t i = 0; i < h.v.size(); ++i) a[(k + i) * m + j] -= 2.0 * d * h.v[i];
    }
    hs.push_back(std::move(h));
    ++rank;
  }

  // Jacobi on the rows of R₁ (rank×m).
  const std::size_t r = rank;
  std::vector<double> w(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(r * m));
  std::vector<double> rot(r * r, 0.0);
  for (std::size_t i = 0; i < r; ++i) rot[i * r + i] = 1.0;
  std::vector<double> norm2(r);
  for (std::size_t i = 0; i < r; ++i) norm2[i] = detail::row_dot(&w[i * m], &w[i * m], m);

  bool converged = false;
  double residual = 0.0;
  for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
    residual = 0.0;
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < r; ++i) {
      for (std::size_t j = i + 1; j < r; ++j) {
        const double aa = norm2[i], bb = norm2[j];
        if (aa == 0.0 || bb == 0.0) continue;
        double* wi = &w[i * m];
        double* wj = &w[j * m];
        const double c = detail::row_dot(wi, wj, m);
        const double cosine = std::abs(c) / std::sqrt(aa * bb);
        if (cosine <= opt.rotation_tol) continue;
        residual = std::max(residual, cosine);
        rotated = true;
        const double zeta = (bb - aa) / (2.0 * c);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        detail::rotate_rows(wi, wj, m, cs, sn);
        detail::rotate_rows(&rot[i * r], &rot[j * r], r, cs, sn);
        norm2[i] = detail::row_dot(wi, wi, m);
        norm2[j] = detail::row_dot(wj, wj, m);
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw ConvergenceError("svd: no convergence after " + std::to_string(opt.max_sweeps) + " sweeps", residual);
  }

  // g = Π R₁ᵀ Q₁ᵀ and R₁ = rotᵀ W, so u_i = Π w_i/σ_i and v_i = Q₁ rot_i.
  std::vector<double> sig(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double s = std::sqrt(norm2[i]);
    sig[i] = s <= zero_tol ? 0.0 : s;
  }
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  SvdResult res{Tensor(Shape{m, m}), Tensor(Shape{m}), Tensor(Shape{n, m})};
  std::vector<std::vector<double>> ucols, vcols;
  for (std::size_t src : order) {
    if (sig[src] == 0.0) break;
    std::vector<double> u(m);
    for (std::size_t j = 0; j < m; ++j) u[perm[j]] = w[src * m + j] / sig[src];
    std::vector<double> v(n, 0.0);
    for (std::size_t j = 0; j < r; ++j) v[j] = rot[src * r + j];
    for (std::size_t h = hs.size(); h-- > 0;) hs[h].apply(v.data());
    res.sigma[ucols.size()] = sig[src];
    ucols.push_back(std::move(u));
    vcols.push_back(std::move(v));
  }
  const std::size_t nz = ucols.size();
  for (auto& c : detail::orthonormal_complement(ucols, m, m - nz)) ucols.push_back(std::move(c));
  for (auto& c : detail::orthonormal_complement(vcols, n, m - nz)) vcols.push_back(std::move(c));
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < m; ++i) res.u(i, k) = ucols[k][i];
    for (std::size_t i = 0; i < n; ++i) res.v(i, k) = vcols[k][i];
  }

  for (std::size_t k = 0; k < m; ++k) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m; ++i) {
      if (std::abs(res.u(i, k)) > std::abs(res.u(arg, k))) arg = i;
    }
    if (res.u(arg, k) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) res.u(i, k) = -res.u(i, k);
      for (std::size_t i = 0; i < n; ++i) res.v(i, k) = -res.v(i, k);
    }
  }
  return res;
}

/// u·diag(sigma)·vᵀ
inline Tensor reconstruct(const SvdResult& r) {
  const std::size_t m = r.u.rows(), k = r.sigma.size(), n = r.v.rows();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double coef = r.u(i, p) * r.sigma[p];
      if (coef == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += coef * r.v(j, p);
    }
  return out;
}

/// ‖XᵀX − I‖_F for a matrix with orthonormal columns.
inline double orthonormality_residual(const Tensor& x) {
  Tensor gram = matmul(transpose(x), x);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
  return frobenius_norm(gram);
}

/// Cotangents of the three SVD factors.
struct SvdCotangent {
  Tensor du;      // m×m
  Tensor dsigma;  // m
  Tensor dv;      // n×m
};

inline constexpr double kSingularGapTol = 1e-8;

/// Smallest relative spacing between singular values (including the distance
/// of the smallest one to zero when rows < cols), relative to sigma_max.
inline double min_relative_gap(const SvdResult& r) {
  const std::size_t m = r.sigma.size();
  const double smax = r.sigma[0];
  if (smax <= 0.0) return 0.0;
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < m; ++i) gap = std::min(gap, (r.sigma[i] - r.sigma[i + 1]) / smax);
  if (r.v.rows() > m) gap = std::min(gap, r.sigma[m - 1] / smax);
  return gap;
}

/// Reverse-mode derivative of g ↦ (u, sigma, v).
///
/// gA = U[(skew(UᵀgU)/E)Σ + Σ(skew(VᵀgV)/E) + diag(gΣ)]Vᵀ + UΣ⁻¹gVᵀ(I − VVᵀ),
/// skew(X) = X − Xᵀ, E_jk = σ_k² − σ_j². Requires well separated, nonzero
/// singular values; throws DegeneracyError otherwise.
inline Tensor svd_backward(const SvdResult& r, const SvdCotangent& ct, double gap_tol = kSingularGapTol) {
  const std::size_t m = r.u.rows(), n = r.v.rows();
  require_same_shape(ct.du, r.u, "svd_backward du");
  require_same_shape(ct.dsigma, r.sigma, "svd_backward dsigma");
  require_same_shape(ct.dv, r.v, "svd_backward dv");
  const double gap = min_relative_gap(r);
  if (!(gap >= gap_tol)) {
    throw DegeneracyError("svd_backward: singular values not separated (relative gap " + std::to_string(gap) + ")",
                          gap);
  }

  const Tensor ut_du = matmul(transpose(r.u), ct.du);  // m×m
  const Tensor vt_dv = matmul(transpose(r.v), ct.dv);  // m×m
  Tensor inner(Shape{m, m});
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      if (j == k) {
        inner(j, k) = ct.dsigma[j];
        continue;
      }
      const double e = r.sigma[k] * r.sigma[k] - r.sigma[j] * r.sigma[j];
      const double su = (ut_du(j, k) - ut_du(k, j)) / e;
      const double sv = (vt_dv(j, k) - vt_dv(k, j)) / e;
      inner(j, k) = su * r.sigma[k] + r.sigma[j] * sv;
    }
  }
  Tensor ga = matmul(matmul(r.u, inner), transpose(r.v));

  if (n > m) {
    // U Σ⁻¹ dVᵀ (I − V Vᵀ)
    Tensor dvt = transpose(ct.dv);                                   // m×n
    Tensor proj = matmul(matmul(dvt, r.v), transpose(r.v));          // m×n
    Tensor resid = sub(dvt, proj);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < n; ++c) resid(i, c) /= r.sigma[i];
    ga = add(ga, matmul(r.u, resid));
  }
  return ga;
}

// ---- symmetric eigensolver -------------------------------------------------

struct EigenResult {
  Tensor values;   // ascending
  Tensor vectors;  // columns, matching values
};

/// Cyclic two-sided Jacobi for a symmetric matrix.
inline EigenResult symmetric_eigen(const Tensor& sym, int max_sweeps = 100) {
  require_rank(sym, 2, "symmetric_eigen");
  const std::size_t n = sym.rows();
  if (sym.cols() != n) throw DimensionError("symmetric_eigen: matrix must be square");
  Tensor a = sym;
  Tensor v = Tensor::identity(n);
  const double scale2 = std::max(dot(a.data(), a.data()), 1e-300);
  bool done = false;
  for (int sweep = 0; sweep < max_sweeps && !done; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= 1e-32 * scale2) {
      done = true;
      break;
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!done) throw ConvergenceError("symmetric_eigen: no convergence", 0.0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  EigenResult out{Tensor(Shape{n}), Tensor(Shape{n, n})};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

}  // namespace gap::linalg
