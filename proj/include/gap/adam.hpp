#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gap/tensor.hpp"

namespace gap {

/// Adam with bias correction; one moment pair per parameter tensor.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  std::size_t steps() const { return t_; }

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) throw DimensionError("Adam: params/grads count mismatch");
    if (m_.empty()) {
      for (Tensor* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      require_same_shape(p, grads[k], "Adam step");
      auto pm = m_[k].data();
      auto pv = v_[k].data();
      auto pg = grads[k].data();
      auto pp = p.data();
      for (std::size_t i = 0; i < pp.size(); ++i) {
        pm[i] = beta1_ * pm[i] + (1.0 - beta1_) * pg[i];
        pv[i] = beta2_ * pv[i] + (1.0 - beta2_) * pg[i] * pg[i];
        const double mhat = pm[i] / c1;
        const double vhat = pv[i] / c2;
        pp[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace gap
