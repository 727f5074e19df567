#pragma once

// Bi-level meta-learning: preconditioned inner-loop adaptation on a task's
// support set, and Adam outer updates of the initial weights (θ) and the
// preconditioner parameters (φ) from summed query losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gap/adam.hpp"
#include "gap/autodiff.hpp"
#include "gap/errors.hpp"
#include "gap/linalg.hpp"
#include "gap/mlp.hpp"
#include "gap/preconditioners.hpp"
#include "gap/rng.hpp"
#include "gap/tasks.hpp"
#include "gap/tensor.hpp"

namespace gap {

/// How the outer gradient traverses the inner loop.
enum class MetaGradient {
  kFirstOrder,    // inner gradients are constants
  kFactorFrozen,  // full unroll; SVD factors constant w.r.t. θ
  kFullSvd,       // full unroll incl. SVD derivative; frozen factors on degeneracy
};

inline std::string to_string(MetaGradient g) {
  switch (g) {
    case MetaGradient::kFirstOrder:
      return "first_order";
    case MetaGradient::kFactorFrozen:
      return "factor_frozen";
    case MetaGradient::kFullSvd:
      return "full_svd";
  }
  return "?";
}

inline std::optional<MetaGradient> parse_meta_gradient(std::string_view s) {
  if (s == "first_order") return MetaGradient::kFirstOrder;
  if (s == "factor_frozen") return MetaGradient::kFactorFrozen;
  if (s == "full_svd") return MetaGradient::kFullSvd;
  return std::nullopt;
}

struct TrainConfig {
  PrecondKind kind = PrecondKind::kGap;
  std::size_t shots = 5;
  std::size_t batch_size = 4;
  std::size_t iterations = 70000;
  double alpha = 1e-2;
  double beta1 = 1e-3;
  double beta2 = 1e-3;
  std::size_t k_train = 5;
  std::size_t k_test = 10;
  MetaGradient meta_gradient = MetaGradient::kFactorFrozen;
  std::uint64_t seed = 0;
  std::size_t query_size_train = 0;  // 0: same as shots
  std::size_t query_size_eval = 100;
  std::vector<std::size_t> hidden = {40, 40};
  std::vector<std::size_t> preconditioned_layers = {1};
  std::size_t log_every = 100;

  std::size_t train_query_size() const { return query_size_train ? query_size_train : shots; }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{1};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw std::invalid_argument(field + ": " + why);
    };
    if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("alpha", "must be > 0");
    if (!(beta1 > 0.0) || !std::isfinite(beta1)) fail("beta1", "must be > 0");
    if (!(beta2 > 0.0) || !std::isfinite(beta2)) fail("beta2", "must be > 0");
    if (k_train < 1) fail("k_train", "must be ≥ 1");
    if (k_test < 1) fail("k_test", "must be ≥ 1");
    if (shots < 1) fail("shots", "must be ≥ 1");
    if (batch_size < 1) fail("batch_size", "must be ≥ 1");
    if (query_size_eval < 1) fail("query_size_eval", "must be ≥ 1");
    if (log_every < 1) fail("log_every", "must be ≥ 1");
    for (std::size_t h : hidden)
      if (h < 1) fail("hidden", "widths must be ≥ 1");
    const std::size_t n_layers = hidden.size() + 1;
    for (std::size_t l : preconditioned_layers)
      if (l >= n_layers) fail("preconditioned_layers", "index " + std::to_string(l) + " ≥ layer count");
  }
};

/// Preconditioner parameters attached to one weight layer.
struct LayerMeta {
  std::size_t layer = 0;
  Tensor values;
};

struct MetaState {
  MlpParams theta;
  std::vector<LayerMeta> phi;  // ordered by layer, one entry per preconditioned layer
  PrecondKind kind = PrecondKind::kIdentity;

  const LayerMeta* meta_for(std::size_t layer) const {
    for (const LayerMeta& m : phi)
      if (m.layer == layer) return &m;
    return nullptr;
  }
};

/// Preconditioner parameters that make every transform the identity map.
inline Tensor identity_meta(PrecondKind kind, const Tensor& weight) {
  switch (kind) {
    case PrecondKind::kGap:
    case PrecondKind::kApproxGap:
      return GapMeta::identity(std::min(weight.rows(), weight.cols())).m;
    case PrecondKind::kMetaSgd:
      return Tensor(weight.shape(), 1.0);
    case PrecondKind::kMetaSgdPd:
      return Tensor(weight.shape(), sp_inv(1.0));
    case PrecondKind::kIdentity:
      break;
  }
  throw ContractError("identity preconditioner has no parameters");
}

inline MetaState init_state(const TrainConfig& cfg, Rng& rng) {
  MetaState s;
  s.kind = cfg.kind;
  const auto widths = cfg.widths();
  s.theta = init_mlp(widths, rng);
  if (cfg.kind != PrecondKind::kIdentity) {
    std::vector<std::size_t> layers = cfg.preconditioned_layers;
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    for (std::size_t l : layers) s.phi.push_back({l, identity_meta(cfg.kind, s.theta.layers.at(l).weight)});
  }
  return s;
}

/// Same weights, preconditioner switched off (every layer takes raw gradients).
inline MetaState without_preconditioner(MetaState s) {
  s.kind = PrecondKind::kIdentity;
  s.phi.clear();
  return s;
}

struct InnerTrace {
  std::vector<MlpParams> params;                 // θ_0 … θ_K
  std::vector<double> losses;                    // support loss at θ_0 … θ_{K−1}
  std::vector<std::vector<Tensor>> transformed;  // per step, per preconditioned layer
  std::size_t svd_fallbacks = 0;
};

namespace detail {

struct PhiVar {
  std::size_t layer;
  ad::Var values;
};

inline ad::Var precondition(const ad::Var& grad, const ad::Var& meta, PrecondKind kind, MetaGradient mode,
                            InnerTrace* trace) {
  switch (kind) {
    case PrecondKind::kIdentity:
      return grad;
    case PrecondKind::kMetaSgd:
      return precond::meta_sgd(grad, meta, false);
    case PrecondKind::kMetaSgdPd:
      return precond::meta_sgd(grad, meta, true);
    case PrecondKind::kGap:
    case PrecondKind::kApproxGap:
      break;
  }
  const Tensor& gv = grad.value();
  const bool flip = gv.rows() > gv.cols();
  const ad::Var oriented = flip ? ad::transpose(grad) : grad;
  ad::Var out;
  if (kind == PrecondKind::kApproxGap) {
    out = precond::approx_gap(oriented, meta);
  } else {
    precond::GapStepInfo info;
    const auto svd_mode = mode == MetaGradient::kFullSvd ? precond::SvdGradient::kFull : precond::SvdGradient::kFrozen;
    out = precond::gap(oriented, meta, svd_mode, &info);
    if (info.fell_back && trace) ++trace->svd_fallbacks;
  }
  return flip ? ad::transpose(out) : out;
}

/// K preconditioned descent steps recorded on `tape`; returns θ_K.
inline std::vector<LayerVars> unroll_inner(ad::Tape& tape, std::span<const LayerVars> theta,
                                           std::span<const PhiVar> phi, PrecondKind kind, const Batch& support,
                                           double alpha, std::size_t k_steps, MetaGradient mode,
                                           InnerTrace* trace) {
  if (support.x.size() == 0) throw ContractError("inner loop needs a non-empty support set");
  const ad::Var x = tape.constant(support.x);
  const ad::Var y = tape.constant(support.y);
  std::vector<LayerVars> cur(theta.begin(), theta.end());
  if (trace) trace->params.push_back(values_of(cur));

  std::vector<ad::Var> wrt;
  for (std::size_t k = 0; k < k_steps; ++k) {
    const ad::Var loss = mse_loss(forward_mlp(cur, x), y);
    if (trace) trace->losses.push_back(loss.value().item());

    wrt.clear();
    for (const LayerVars& l : cur) {
      wrt.push_back(l.weight);
      wrt.push_back(l.bias);
    }
    std::vector<ad::Var> grads;
    if (mode == MetaGradient::kFirstOrder) {
      for (Tensor& g : ad::grad(loss, wrt)) grads.push_back(tape.constant(std::move(g)));
    } else {
      grads = ad::grad_graph(loss, wrt);
    }

    std::vector<Tensor> step_transformed;
    for (std::size_t l = 0; l < cur.size(); ++l) {
      ad::Var gw = grads[2 * l];
      const ad::Var gb = grads[2 * l + 1];
      const auto meta = std::find_if(phi.begin(), phi.end(), [l](const PhiVar& p) { return p.layer == l; });
      if (meta != phi.end()) {
        gw = precondition(gw, meta->values, kind, mode, trace);
        if (trace) step_transformed.push_back(gw.value());
      }
      cur[l].weight = cur[l].weight - ad::scale(gw, alpha);
      cur[l].bias = cur[l].bias - ad::scale(gb, alpha);
    }
    if (trace) {
      trace->transformed.push_back(std::move(step_transformed));
      trace->params.push_back(values_of(cur));
    }
  }
  return cur;
}

inline std::vector<PhiVar> phi_leaves(ad::Tape& tape, const MetaState& state) {
  std::vector<PhiVar> phi;
  if (state.kind == PrecondKind::kIdentity) return phi;
  for (const LayerMeta& m : state.phi) phi.push_back({m.layer, tape.leaf(m.values)});
  return phi;
}

}  // namespace detail

/// Adapts θ to the support set; returns every intermediate parameter set.
inline InnerTrace inner_adapt(const MetaState& state, const Batch& support, double alpha, std::size_t k_steps,
                              MetaGradient mode = MetaGradient::kFirstOrder) {
  ad::Tape tape;
  const auto theta = make_leaves(tape, state.theta);
  const auto phi = detail::phi_leaves(tape, state);
  InnerTrace trace;
  const MetaGradient eval_mode = mode == MetaGradient::kFullSvd ? mode : MetaGradient::kFirstOrder;
  detail::unroll_inner(tape, theta, phi, state.kind, support, alpha, k_steps, eval_mode, &trace);
  return trace;
}

/// Query MSE after adapting on the support set. Pure in `state`.
inline double adapted_query_loss(const MetaState& state, const Episode& ep, double alpha, std::size_t k_steps) {
  const InnerTrace trace = inner_adapt(state, ep.support, alpha, k_steps);
  return mse_loss(forward_mlp(trace.params.back(), ep.query.x), ep.query.y);
}

/// Per-task query MSEs after k_steps of inner adaptation.
inline std::vector<double> meta_test(const MetaState& state, std::span<const Episode> tasks, double alpha,
                                     std::size_t k_steps) {
  std::vector<double> out;
  out.reserve(tasks.size());
  for (const Episode& ep : tasks) out.push_back(adapted_query_loss(state, ep, alpha, k_steps));
  return out;
}

struct MetaGradientResult {
  double loss_sum = 0.0;
  std::vector<double> task_losses;
  std::vector<Tensor> grad_theta;  // weight, bias per layer
  std::vector<Tensor> grad_phi;    // one per LayerMeta
  std::size_t svd_fallbacks = 0;
};

/// ∇ of Σ_τ L_out(θ_τ,K) with respect to θ and φ; tasks reduced in order.
inline MetaGradientResult meta_gradient(const MetaState& state, std::span<const Episode> batch,
                                        const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("meta_gradient: empty task batch");
  MetaGradientResult res;
  ad::Tape tape;
  for (std::size_t t = 0; t < batch.size(); ++t) {
    tape.clear();
    const auto theta = make_leaves(tape, state.theta);
    const auto phi = detail::phi_leaves(tape, state);
    InnerTrace trace;
    const auto adapted = detail::unroll_inner(tape, theta, phi, state.kind, batch[t].support, cfg.alpha,
                                              cfg.k_train, cfg.meta_gradient, &trace);
    const ad::Var pred = forward_mlp(adapted, tape.constant(batch[t].query.x));
    const ad::Var loss = mse_loss(pred, tape.constant(batch[t].query.y));
    const double lv = loss.value().item();
    if (!std::isfinite(lv)) {
      throw NonFiniteError("non-finite query loss on task " + std::to_string(t) + " (inner losses: " +
                           std::to_string(trace.losses.empty() ? 0.0 : trace.losses.back()) + ")");
    }

    std::vector<ad::Var> wrt;
    for (const LayerVars& l : theta) {
      wrt.push_back(l.weight);
      wrt.push_back(l.bias);
    }
    for (const auto& p : phi) wrt.push_back(p.values);
    std::vector<Tensor> g = ad::grad(loss, wrt);

    const std::size_t n_theta = 2 * theta.size();
    if (t == 0) {
      res.grad_theta.assign(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_theta));
      res.grad_phi.assign(g.begin() + static_cast<std::ptrdiff_t>(n_theta), g.end());
    } else {
      for (std::size_t k = 0; k < n_theta; ++k) res.grad_theta[k] = add(res.grad_theta[k], g[k]);
      for (std::size_t k = 0; k < res.grad_phi.size(); ++k) res.grad_phi[k] = add(res.grad_phi[k], g[n_theta + k]);
    }
    res.loss_sum += lv;
    res.task_losses.push_back(lv);
    res.svd_fallbacks += trace.svd_fallbacks;
  }
  return res;
}

/// Adam optimisers for θ (rate β₁) and φ (rate β₂).
struct MetaOptimizer {
  Adam theta;
  Adam phi;

  explicit MetaOptimizer(const TrainConfig& cfg) : theta(cfg.beta1), phi(cfg.beta2) {}
  MetaOptimizer(double beta1, double beta2) : theta(beta1), phi(beta2) {}
};

struct OuterMetrics {
  double loss_sum = 0.0;
  double mean_loss = 0.0;
  std::size_t svd_fallbacks = 0;
};

inline OuterMetrics outer_step(MetaState& state, MetaOptimizer& opt, std::span<const Episode> batch,
                               const TrainConfig& cfg) {
  MetaGradientResult g = meta_gradient(state, batch, cfg);
  for (const Tensor& t : g.grad_theta)
    if (!t.all_finite()) throw NonFiniteError("non-finite meta-gradient for θ");
  for (const Tensor& t : g.grad_phi)
    if (!t.all_finite()) throw NonFiniteError("non-finite meta-gradient for φ");

  std::vector<Tensor*> theta_params;
  for (Layer& l : state.theta.layers) {
    theta_params.push_back(&l.weight);
    theta_params.push_back(&l.bias);
  }
  opt.theta.step(theta_params, g.grad_theta);
  if (!state.phi.empty()) {
    std::vector<Tensor*> phi_params;
    for (LayerMeta& m : state.phi) phi_params.push_back(&m.values);
    opt.phi.step(phi_params, g.grad_phi);
  }
  return {g.loss_sum, g.loss_sum / static_cast<double>(batch.size()), g.svd_fallbacks};
}

/// Produces a fresh episode from a task stream.
using TaskSource = std::function<Episode(Rng&)>;

inline TaskSource sinusoid_source(std::size_t shots, std::size_t query_size) {
  return [shots, query_size](Rng& rng) {
    const SinusoidTask task = sample_task(rng);
    return make_episode(task, shots, query_size, rng);
  };
}

struct LossPoint {
  std::size_t iteration = 0;  // iterations completed
  double mean_outer_loss = 0.0;
};

/// Training outcome. `iteration_losses` holds the per-iteration mean query
/// loss; `curve` averages it over consecutive windows of cfg.log_every.
struct TrainResult {
  MetaState state;
  std::vector<double> iteration_losses;
  std::vector<LossPoint> curve;
  std::size_t svd_fallbacks = 0;
};

/// Raised when an outer step aborts; carries the failing iteration.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t iteration, const std::string& why)
      : std::runtime_error("training aborted at iteration " + std::to_string(iteration) + ": " + why),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

using ProgressFn = std::function<void(std::size_t iteration, double window_mean)>;

inline TrainResult meta_train(const TrainConfig& cfg, const TaskSource& source, const ProgressFn& progress = {}) {
  cfg.validate();
  Rng init_rng = make_rng(cfg.seed, streams::kInit);
  Rng task_rng = make_rng(cfg.seed, streams::kTrainTasks);
  TrainResult out{init_state(cfg, init_rng), {}, {}, 0};
  MetaOptimizer opt(cfg);

  std::vector<Episode> batch(cfg.batch_size);
  double window = 0.0;
  std::size_t in_window = 0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (Episode& ep : batch) ep = source(task_rng);
    OuterMetrics m;
    try {
      m = outer_step(out.state, opt, batch, cfg);
    } catch (const std::exception& e) {
      throw TrainingAborted(it, e.what());
    }
    out.iteration_losses.push_back(m.mean_loss);
    out.svd_fallbacks += m.svd_fallbacks;
    window += m.mean_loss;
    ++in_window;
    if (in_window == cfg.log_every || it + 1 == cfg.iterations) {
      out.curve.push_back({it + 1, window / static_cast<double>(in_window)});
      if (progress) progress(it + 1, out.curve.back().mean_outer_loss);
      window = 0.0;
      in_window = 0;
    }
  }
  return out;
}

inline TrainResult meta_train(const TrainConfig& cfg) {
  return meta_train(cfg, sinusoid_source(cfg.shots, cfg.train_query_size()));
}

}  // namespace gap
