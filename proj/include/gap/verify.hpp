#pragma once

// Named verification suites. Each check reports the measured statistic, the
// threshold it was compared against, and a verdict.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gap/autodiff.hpp"
#include "gap/linalg.hpp"
#include "gap/metaloop.hpp"
#include "gap/preconditioners.hpp"
#include "gap/rng.hpp"
#include "gap/theory.hpp"

namespace gap::verify {

struct CheckLine {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct Options {
  std::optional<std::vector<std::size_t>> n_grid;
  std::optional<std::size_t> trials;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"pd",     "similarity", "variance", "chebyshev",
                                                 "cosine", "approx",     "gradcheck"};
  return names;
}

inline bool is_suite(std::string_view s) {
  if (s == "all") return true;
  const auto& n = suite_names();
  return std::find(n.begin(), n.end(), s) != n.end();
}

/// ‖a − b‖ / max(‖a‖, ‖b‖); absolute when both norms are below 1e-9.
inline double rel_diff(const Tensor& a, const Tensor& b) {
  const double d = max_abs_diff(a, b) == 0.0 ? 0.0 : frobenius_norm(sub(a, b));
  const double s = std::max(frobenius_norm(a), frobenius_norm(b));
  return s > 1e-9 ? d / s : d;
}

namespace detail {

inline Rng suite_rng(std::uint64_t seed, std::uint64_t suite) {
  return make_rng(derive_seed(seed, streams::kVerify), suite);
}

struct RandomPreconditioner {
  Tensor g;
  GapMeta meta;
  linalg::SvdResult svd;
  PGapOperator p;
};

// Gaussian m×n gradient (m ≤ n, 1 ≤ m ≤ 8) with m ~ N(0, 1.5²).
inline RandomPreconditioner random_preconditioner(Rng& rng) {
  std::uniform_int_distribution<std::size_t> mdist(1, 8);
  const std::size_t m = mdist(rng);
  std::uniform_int_distribution<std::size_t> ndist(m, 16);
  const std::size_t n = ndist(rng);
  std::normal_distribution<double> normal(0.0, 1.5);
  RandomPreconditioner r{theory::gaussian_matrix(m, n, rng), {Tensor(Shape{m})}, {}, {}};
  for (double& x : r.meta.m.data()) x = normal(rng);
  r.svd = linalg::svd(r.g);
  r.p = build_p_gap(r.svd.u, r.meta, n);
  return r;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng) {
  // magnitudes in [0.2, 1.5] keep relu away from its kink
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape);
  for (double& x : t.data()) x = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

}  // namespace detail

// ---- preconditioner properties --------------------------------------------

/// Positive definiteness of D over random (G, m): smallest eigenvalue,
/// smallest Rayleigh quotient over random directions, and symmetry defect.
inline std::vector<CheckLine> suite_pd(const Options& o) {
  Rng rng = detail::suite_rng(o.seed, 0);
  const std::size_t trials = o.trials.value_or(1000);
  std::normal_distribution<double> normal(0.0, 1.0);
  double min_eig = INFINITY, min_quad = INFINITY, max_asym = 0.0, min_descent = INFINITY;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto r = detail::random_preconditioner(rng);
    const Tensor& d = r.p.d;
    max_asym = std::max(max_asym, frobenius_norm(sub(d, transpose(d))));
    min_eig = std::min(min_eig, linalg::symmetric_eigen(d).values[0]);
    const std::size_t m = d.rows();
    for (int k = 0; k < 100; ++k) {
      Tensor x(Shape{m, 1});
      for (double& v : x.data()) v = normal(rng);
      if (frobenius_norm(x) == 0.0) continue;
      min_quad = std::min(min_quad, sum(hadamard(x, matmul(d, x))) / dot(x.data(), x.data()));
    }
    const Tensor vg = vec(r.g);
    min_descent = std::min(min_descent, dot(vg.data(), r.p.apply(vg).data()));
  }
  return {{"pd.min_eigenvalue", min_eig, 0.0, min_eig > 0.0},
          {"pd.min_rayleigh_quotient", min_quad, 0.0, min_quad > 0.0},
          {"pd.symmetry_defect", max_asym, 1e-12, max_asym < 1e-12},
          {"pd.min_descent_inner_product", min_descent, 0.0, min_descent > 0.0}};
}

/// D is similar to diag(Sp(m)); the GAP transform equals D·G and P_GAP·vec(G).
inline std::vector<CheckLine> suite_similarity(const Options& o) {
  Rng rng = detail::suite_rng(o.seed, 1);
  const std::size_t trials = o.trials.value_or(1000);
  double eig_err = 0.0, dg_err = 0.0, op_err = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto r = detail::random_preconditioner(rng);
    const Tensor eig = linalg::symmetric_eigen(r.p.d).values;
    Tensor s = r.meta.scales();
    std::sort(s.data().begin(), s.data().end());
    eig_err = std::max(eig_err, max_abs_diff(eig, s));
    const Tensor dg = matmul(r.p.d, r.g);
    dg_err = std::max(dg_err, max_abs_diff(gap_transform(linalg::orient_min_rows(r.g), r.meta), dg));
    op_err = std::max(op_err, max_abs_diff(r.p.apply(vec(r.g)), vec(dg)));
  }
  return {{"similarity.eigenvalues_vs_sp", eig_err, 1e-9, eig_err < 1e-9},
          {"similarity.gap_equals_dg", dg_err, 1e-10, dg_err < 1e-10},
          {"similarity.block_operator", op_err, 1e-12, op_err < 1e-12}};
}

// ---- sphere lemmas --------------------------------------------------------

inline std::vector<CheckLine> suite_variance(const Options& o) {
  Rng rng = detail::suite_rng(o.seed, 2);
  const std::vector<std::size_t> grid = o.n_grid.value_or(std::vector<std::size_t>{2, 10, 100});
  const std::size_t trials = o.trials.value_or(10000);
  std::vector<CheckLine> out;
  for (std::size_t n : grid) {
    const auto r = theory::check_variance_lemma(n, trials, rng);
    out.push_back({"variance.n=" + std::to_string(n) + ".abs_dev_from_1/n", std::abs(r.statistic - r.reference),
                   r.slack, r.pass});
  }
  return out;
}

inline std::vector<CheckLine> suite_chebyshev(const Options& o) {
  Rng rng = detail::suite_rng(o.seed, 3);
  const std::size_t trials = o.trials.value_or(10000);
  std::vector<std::pair<std::size_t, double>> cases = {{64, 0.3}, {256, 0.25}};
  if (o.n_grid) {
    cases.clear();
    for (std::size_t n : *o.n_grid) cases.push_back({n, 0.25});
  }
  std::vector<CheckLine> out;
  for (const auto& [n, eps] : cases) {
    const auto r = theory::check_chebyshev_lemma(n, eps, trials, rng);
    char eps_s[16];
    std::snprintf(eps_s, sizeof eps_s, "%g", eps);
    out.push_back({"chebyshev.n=" + std::to_string(n) + ".eps=" + eps_s, r.statistic, r.reference + r.slack, r.pass});
  }
  return out;
}

// ---- row geometry and the SVD-free approximation ---------------------------

inline std::vector<CheckLine> suite_cosine(const Options& o) {
  Rng rng = detail::suite_rng(o.seed, 4);
  const std::vector<std::size_t> grid = o.n_grid.value_or(std::vector<std::size_t>{16, 64, 256, 400, 1024, 4096});
  const std::size_t trials = o.trials.value_or(100);
  const auto pts = theory::cosine_decay_sweep(8, grid, trials, rng);
  std::vector<CheckLine> out;
  double worst_step = -INFINITY;
  for (std::size_t i = 1; i < pts.size(); ++i)
    worst_step = std::max(worst_step, pts[i].mean_abs_cos - pts[i - 1].mean_abs_cos);
  if (pts.size() > 1) out.push_back({"cosine.max_increase_along_grid", worst_step, 0.0, worst_step < 0.0});
  for (const auto& p : pts) {
    const double rel = std::abs(p.mean_abs_cos - p.analytic_ref) / p.analytic_ref;
    if (p.n == 400 || !o.n_grid) {
      if (p.n >= 64) out.push_back({"cosine.n=" + std::to_string(p.n) + ".rel_dev_from_ref", rel, 0.2, rel <= 0.2});
    }
  }
  return out;
}

/// Sp(m) spread evenly over [0.5, 2].
inline GapMeta spread_meta(std::size_t m) {
  GapMeta meta{Tensor(Shape{m})};
  for (std::size_t i = 0; i < m; ++i) {
    const double s = m == 1 ? 1.0 : 0.5 + 1.5 * static_cast<double>(i) / static_cast<double>(m - 1);
    meta.m[i] = sp_inv(s);
  }
  return meta;
}

inline std::vector<CheckLine> suite_approx(const Options& o) {
  Rng rng = detail::suite_rng(o.seed, 5);
  const std::vector<std::size_t> grid = o.n_grid.value_or(std::vector<std::size_t>{32, 128, 512, 1024});
  const std::size_t trials = o.trials.value_or(100);
  const std::size_t m = 8;
  const auto pts = theory::check_theorem2(m, grid, spread_meta(m), trials, rng);
  std::vector<CheckLine> out;
  double worst = -INFINITY;
  for (std::size_t i = 1; i < pts.size(); ++i) worst = std::max(worst, pts[i].mean_rel_error - pts[i - 1].mean_rel_error);
  for (const auto& p : pts)
    out.push_back({"approx.n=" + std::to_string(p.n) + ".mean_rel_error", p.mean_rel_error, 1.0, p.mean_rel_error < 1.0});
  out.push_back({"approx.max_increase_along_grid", worst, 0.0, worst < 0.0});

  const auto sv = theory::singular_value_row_norm_gap(m, grid, trials, rng);
  double sv_worst = -INFINITY;
  for (std::size_t i = 1; i < sv.size(); ++i) sv_worst = std::max(sv_worst, sv[i].mean_rel_error - sv[i - 1].mean_rel_error);
  out.push_back({"approx.sigma_vs_row_norms.max_increase", sv_worst, 0.0, sv_worst < 0.0});

  double ortho = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Tensor g = theory::orthogonal_rows_matrix(m, grid.front(), rng);
    ortho = std::max(ortho, theory::approx_relative_error(g, spread_meta(m)));
  }
  out.push_back({"approx.orthogonal_rows_rel_error", ortho, 1e-9, ortho < 1e-9});
  return out;
}

// ---- gradients --------------------------------------------------------------

struct PrimitiveCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<ad::Var(std::span<const ad::Var>)> op;
  bool second_order = true;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using V = std::span<const ad::Var>;
  static const auto svd_op = std::make_shared<const precond::SvdScaleOp>();
  return {
      {"add", {{3, 4}, {3, 4}}, [](V v) { return v[0] + v[1]; }},
      {"sub", {{3, 4}, {3, 4}}, [](V v) { return v[0] - v[1]; }},
      {"mul", {{3, 4}, {3, 4}}, [](V v) { return v[0] * v[1]; }},
      {"scale", {{3, 4}}, [](V v) { return ad::scale(v[0], -1.7); }},
      {"matmul", {{3, 4}, {4, 2}}, [](V v) { return ad::matmul(v[0], v[1]); }},
      {"transpose", {{3, 4}}, [](V v) { return ad::transpose(v[0]); }},
      {"add_bias", {{3, 4}, {4}}, [](V v) { return ad::add_bias(v[0], v[1]); }},
      {"sum_rows", {{3, 4}}, [](V v) { return ad::sum_rows(v[0]); }},
      {"broadcast_rows", {{4}}, [](V v) { return ad::broadcast_rows(v[0], 3); }},
      {"row_scale", {{3}, {3, 4}}, [](V v) { return ad::row_scale(v[0], v[1]); }},
      {"sum_cols", {{3, 4}}, [](V v) { return ad::sum_cols(v[0]); }},
      {"broadcast_cols", {{3}}, [](V v) { return ad::broadcast_cols(v[0], 4); }},
      {"relu", {{3, 4}}, [](V v) { return ad::relu(v[0]); }},
      {"relu_mask", {{3, 4}}, [](V v) { return ad::relu_mask(v[0]) * v[0]; }},
      {"sum", {{3, 4}}, [](V v) { return ad::sum(v[0]); }},
      {"mean", {{3, 4}}, [](V v) { return ad::mean(v[0]); }},
      {"softplus", {{3, 4}}, [](V v) { return ad::softplus(v[0]); }},
      {"sigmoid2", {{3, 4}}, [](V v) { return ad::sigmoid2(v[0]); }},
      {"fill", {{}}, [](V v) { return ad::fill(v[0], Shape{2, 3}); }},
      {"square_chain", {{3, 4}}, [](V v) { return ad::softplus(v[0] * v[0]); }},
      {"svd_scale", {{4, 6}, {4}}, [](V v) { return ad::custom(svd_op, v[0], v[1]); }, false},
  };
}

/// f = Σ W ⊙ op(x…); checks ∇f and, where the op supports it, ∇(Σ V ⊙ ∇f)
/// against central differences. Returns the worst relative error per order.
inline std::pair<double, double> check_primitive(const PrimitiveCase& c, Rng& rng, double h = 1e-6) {
  std::vector<Tensor> x;
  for (const Shape& s : c.shapes) x.push_back(detail::random_tensor(s, rng));
  Shape out_shape;
  {
    ad::Tape tape;
    std::vector<ad::Var> in;
    for (const Tensor& t : x) in.push_back(tape.leaf(t));
    out_shape = c.op(in).shape();
  }
  const Tensor w = detail::random_tensor(out_shape, rng);
  std::vector<Tensor> vdir;
  for (const Shape& s : c.shapes) vdir.push_back(detail::random_tensor(s, rng));

  // f and its first-order gradient at a point
  auto eval = [&](const std::vector<Tensor>& pt, std::vector<Tensor>* grads) {
    ad::Tape tape;
    std::vector<ad::Var> in;
    for (const Tensor& t : pt) in.push_back(tape.leaf(t));
    const ad::Var f = ad::sum(tape.constant(w) * c.op(in));
    const double val = f.value().item();
    if (grads) *grads = ad::grad(f, in);
    return val;
  };

  double first = 0.0, second = 0.0;
  std::vector<Tensor> g;
  eval(x, &g);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Tensor fd = ad::finite_diff_grad(
        [&](const Tensor& xi) {
          auto pt = x;
          pt[i] = xi;
          return eval(pt, nullptr);
        },
        x[i], h);
    first = std::max(first, rel_diff(g[i], fd));
  }
  if (!c.second_order) return {first, 0.0};

  // h(x) = Σ_i ⟨V_i, ∂f/∂x_i⟩ through the recorded backward pass
  std::vector<Tensor> hg;
  {
    ad::Tape tape;
    std::vector<ad::Var> in;
    for (const Tensor& t : x) in.push_back(tape.leaf(t));
    const ad::Var f = ad::sum(tape.constant(w) * c.op(in));
    const auto gv = ad::grad_graph(f, in);
    ad::Var hsum = ad::sum(tape.constant(vdir[0]) * gv[0]);
    for (std::size_t i = 1; i < in.size(); ++i) hsum = hsum + ad::sum(tape.constant(vdir[i]) * gv[i]);
    hg = ad::grad(hsum, in);
  }
  auto hval = [&](const std::vector<Tensor>& pt) {
    std::vector<Tensor> gg;
    eval(pt, &gg);
    double s = 0.0;
    for (std::size_t i = 0; i < gg.size(); ++i) s += dot(vdir[i].data(), gg[i].data());
    return s;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Tensor fd = ad::finite_diff_grad(
        [&](const Tensor& xi) {
          auto pt = x;
          pt[i] = xi;
          return hval(pt);
        },
        x[i], 1e-5);
    second = std::max(second, rel_diff(hg[i], fd));
  }
  return {first, second};
}

/// Meta-gradient of one task's query loss after K=1 inner step against
/// central differences. `wrt_theta` selects θ (a coordinate sample) or φ.
inline double meta_gradcheck(PrecondKind kind, bool wrt_theta, bool identity_phi, Rng& rng, std::size_t samples = 24) {
  TrainConfig cfg;
  cfg.kind = kind;
  cfg.k_train = 1;
  cfg.batch_size = 1;
  cfg.meta_gradient = MetaGradient::kFactorFrozen;
  MetaState state = init_state(cfg, rng);
  if (!identity_phi) {
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (LayerMeta& m : state.phi)
      for (double& v : m.values.data()) v += jitter(rng);
  }
  const Episode ep = make_episode(sample_task(rng), 5, 5, rng);
  const std::vector<Episode> batch{ep};
  const MetaGradientResult g = meta_gradient(state, batch, cfg);

  auto loss_at = [&](const MetaState& s) { return adapted_query_loss(s, ep, cfg.alpha, 1); };
  const double h = 1e-5;
  if (!wrt_theta) {
    const Tensor fd = ad::finite_diff_grad(
        [&](const Tensor& m) {
          MetaState s = state;
          s.phi[0].values = m;
          return loss_at(s);
        },
        state.phi[0].values, h);
    return rel_diff(g.grad_phi[0], fd);
  }
  // sampled coordinates of every θ tensor
  std::vector<double> ad_v, fd_v;
  for (std::size_t k = 0; k < g.grad_theta.size(); ++k) {
    Layer& l0 = state.theta.layers[k / 2];
    const Tensor& p = k % 2 == 0 ? l0.weight : l0.bias;
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    for (std::size_t s = 0; s < std::max<std::size_t>(1, samples / g.grad_theta.size()); ++s) {
      const std::size_t idx = pick(rng);
      auto at = [&](double delta) {
        MetaState st = state;
        Layer& l = st.theta.layers[k / 2];
        (k % 2 == 0 ? l.weight : l.bias)[idx] += delta;
        return loss_at(st);
      };
      ad_v.push_back(g.grad_theta[k][idx]);
      fd_v.push_back((at(h) - at(-h)) / (2.0 * h));
    }
  }
  return rel_diff(Tensor::vector(ad_v), Tensor::vector(fd_v));
}

inline std::vector<CheckLine> suite_gradcheck(const Options& o) {
  Rng rng = detail::suite_rng(o.seed, 6);
  std::vector<CheckLine> out;
  for (const PrimitiveCase& c : primitive_cases()) {
    const auto [first, second] = check_primitive(c, rng);
    out.push_back({"gradcheck." + c.name, first, 1e-6, first < 1e-6});
    if (c.second_order) out.push_back({"gradcheck." + c.name + ".second_order", second, 1e-6, second < 1e-6});
  }
  const double phi = meta_gradcheck(PrecondKind::kGap, false, false, rng);
  out.push_back({"gradcheck.meta_phi_k1_factor_frozen", phi, 1e-4, phi < 1e-4});
  const double th_id = meta_gradcheck(PrecondKind::kGap, true, true, rng);
  out.push_back({"gradcheck.meta_theta_k1_identity_phi", th_id, 1e-4, th_id < 1e-4});
  const double th_ap = meta_gradcheck(PrecondKind::kApproxGap, true, false, rng);
  out.push_back({"gradcheck.meta_theta_k1_approx_gap", th_ap, 1e-4, th_ap < 1e-4});
  return out;
}

inline std::vector<CheckLine> run_suite(std::string_view suite, const Options& o) {
  if (suite == "pd") return suite_pd(o);
  if (suite == "similarity") return suite_similarity(o);
  if (suite == "variance") return suite_variance(o);
  if (suite == "chebyshev") return suite_chebyshev(o);
  if (suite == "cosine") return suite_cosine(o);
  if (suite == "approx") return suite_approx(o);
  if (suite == "gradcheck") return suite_gradcheck(o);
  if (suite == "all") {
    std::vector<CheckLine> all;
    for (const std::string& s : suite_names()) {
      auto part = run_suite(s, o);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  throw LookupError("unknown verify suite '" + std::string(suite) + "'");
}

}  // namespace gap::verify
