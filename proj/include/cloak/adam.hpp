#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cloak/layers.hpp"

namespace cloak::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::uint64_t step = 0;
  Tensor<T> m;
  Tensor<T> v;
};

/// One bias-corrected Adam update of `param` in place.
template <class T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state, const AdamConfig& cfg) {
  if (grad.shape() != param.shape()) throw ContractError("adam_step: gradient shape mismatch");
  if (state.m.shape() != param.shape()) {
    state.m = Tensor<T>(param.shape());
    state.v = Tensor<T>(param.shape());
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= static_cast<T>(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
  }
}

/// Adam moments for every parameter of a ParameterSet, in registration
/// order. Parameters that received no gradient in a step count as zero-grad.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(ParameterSet<T>& params) {
    auto& items = params.items();
    if (states_.size() != items.size()) states_.resize(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& var = items[i].var;
      adam_step(var.mutable_value(), var.grad_buffer(), states_[i], cfg_);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  void set_config(const AdamConfig& cfg) { cfg_ = cfg; }
  std::vector<AdamState<T>>& states() { return states_; }
  const std::vector<AdamState<T>>& states() const { return states_; }

 private:
  AdamConfig cfg_;
  std::vector<AdamState<T>> states_;
};

}  // namespace cloak::nn
