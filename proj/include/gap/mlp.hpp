#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gap/autodiff.hpp"
#include "gap/rng.hpp"
#include "gap/tensor.hpp"

namespace gap {

/// One dense layer: weight is out×in, bias has length out.
struct Layer {
  Tensor weight;
  Tensor bias;
};

struct MlpParams {
  std::vector<Layer> layers;

  std::size_t in_dim() const { return layers.front().weight.cols(); }
  std::size_t out_dim() const { return layers.back().weight.rows(); }

  void validate() const {
    if (layers.empty()) throw DimensionError("MLP needs at least one layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      require_rank(l.weight, 2, "MLP weight");
      require_rank(l.bias, 1, "MLP bias");
      if (l.bias.size() != l.weight.rows()) {
        throw DimensionError("layer " + std::to_string(i) + ": bias length does not match weight rows");
      }
      if (i + 1 < layers.size() && layers[i + 1].weight.cols() != l.weight.rows()) {
        throw DimensionError("layer " + std::to_string(i) + " output does not feed layer " +
                             std::to_string(i + 1));
      }
    }
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      if (!(a.layers[i].weight == b.layers[i].weight) || !(a.layers[i].bias == b.layers[i].bias)) return false;
    }
    return true;
  }
};

/// Widths {in, h1, ..., out}; weights and biases uniform in ±√(1/fan_in).
inline MlpParams init_mlp(std::span<const std::size_t> widths, Rng& rng) {
  if (widths.size() < 2) throw DimensionError("init_mlp needs at least input and output widths");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i], fan_out = widths[i + 1];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer l{Tensor(Shape{fan_out, fan_in}), Tensor(Shape{fan_out})};
    for (double& w : l.weight.data()) w = dist(rng);
    for (double& b : l.bias.data()) b = dist(rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

struct LayerVars {
  ad::Var weight;
  ad::Var bias;
};

inline std::vector<LayerVars> make_leaves(ad::Tape& tape, const MlpParams& params) {
  std::vector<LayerVars> vars;
  vars.reserve(params.layers.size());
  for (const Layer& l : params.layers) vars.push_back({tape.leaf(l.weight), tape.leaf(l.bias)});
  return vars;
}

inline MlpParams values_of(std::span<const LayerVars> vars) {
  MlpParams p;
  for (const LayerVars& v : vars) p.layers.push_back({v.weight.value(), v.bias.value()});
  return p;
}

/// ReLU on hidden layers, identity on the output layer.
inline ad::Var forward_mlp(std::span<const LayerVars> params, const ad::Var& x) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "forward_mlp input");
  if (params.empty()) throw DimensionError("forward_mlp: empty network");
  if (xv.cols() != params.front().weight.value().cols()) {
    throw DimensionError("forward_mlp: input width " + std::to_string(xv.cols()) + " vs layer fan-in " +
                         std::to_string(params.front().weight.value().cols()));
  }
  ad::Var h = x;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Var z = ad::add_bias(ad::matmul(h, ad::transpose(params[i].weight)), params[i].bias);
    h = (i + 1 < params.size()) ? ad::relu(z) : z;
  }
  return h;
}

inline Tensor forward_mlp(const MlpParams& params, const Tensor& x) {
  params.validate();
  ad::Tape tape;
  auto vars = make_leaves(tape, params);
  return forward_mlp(vars, tape.constant(x)).value();
}

/// Mean of squared elementwise differences.
inline ad::Var mse_loss(const ad::Var& pred, const ad::Var& target) {
  require_same_shape(pred.value(), target.value(), "mse_loss");
  ad::Var d = pred - target;
  return ad::mean(d * d);
}

inline double mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

}  // namespace gap
