#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cloak/ops.hpp"

namespace cloak::nn {

template <class T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

/// Ordered collection of a network's trainable leaves.
template <class T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    Var<T> v(std::move(init), true);
    params_.push_back({std::move(name), v});
    return v;
  }

  std::vector<NamedParameter<T>>& items() { return params_; }
  const std::vector<NamedParameter<T>>& items() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto& p : params_) p.var.set_requires_grad(trainable);
  }

  bool trainable() const {
    for (const auto& p : params_)
      if (p.var.requires_grad()) return true;
    return false;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  /// Order-dependent FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.var.value().data());
      for (std::size_t i = 0; i < p.var.value().size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }

 private:
  std::vector<NamedParameter<T>> params_;
};

/// Normal(0, std) resampled until within two standard deviations.
template <class T>
Tensor<T> truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.vec()) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0);
    v = static_cast<T>(z * std);
  }
  return t;
}

/// Uniform(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <class T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

inline constexpr double kConvInitStd = 0.02;

template <class T>
struct Conv2d {
  Var<T> kernel, bias;
  std::size_t stride = 2, pad = 1;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
         std::size_t stride_, std::size_t pad_, std::mt19937_64& rng)
      : stride(stride_), pad(pad_) {
    kernel = ps.add(name + ".kernel", truncated_normal<T>({out, in, k, k}, kConvInitStd, rng));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return add_channel_bias(conv2d(x, kernel, stride, pad), bias); }
};

template <class T>
struct ConvTranspose2d {
  Var<T> kernel, bias;
  std::size_t stride = 2, pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                  std::size_t stride_, std::size_t pad_, std::mt19937_64& rng)
      : stride(stride_), pad(pad_) {
    kernel = ps.add(name + ".kernel", truncated_normal<T>({in, out, k, k}, kConvInitStd, rng));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const {
    return add_channel_bias(conv_transpose2d(x, kernel, stride, pad), bias);
  }
};

template <class T>
struct Dense {
  Var<T> weight, bias;

  Dense() = default;
  Dense(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    weight = ps.add(name + ".weight", he_uniform<T>({in, out}, in, rng));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return dense(x, weight, bias); }
};

}  // namespace cloak::nn
