#pragma once

// Forward predictive network: quadrant image -> scattering coefficient.
//
// Four stride-2 convolutions (64 -> 4 pixels) and two dense layers. The
// network regresses a standardized log10(psi); TargetTransform maps between
// that space and W/m.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cloak/checkpoint.hpp"
#include "cloak/geometry.hpp"

namespace cloak {

struct ForwardNetConfig {
  std::vector<std::size_t> conv_channels{16, 32, 64, 128};
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
  double leaky_slope = 0.2;
  std::size_t hidden = 128;
  int image_size = 64;

  void validate() const {
    if (conv_channels.empty()) throw ConfigError("forward net: at least one convolution layer is required");
    if (image_size <= 0) throw ConfigError("forward net: image_size must be positive");
    if (kernel == 0 || stride == 0) throw ConfigError("forward net: kernel and stride must be positive");
    std::size_t s = static_cast<std::size_t>(image_size);
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      if (conv_channels[i] == 0) throw ConfigError("forward net: zero-width convolution layer");
      if (s + 2 * padding < kernel) throw ConfigError("forward net: image too small for the convolution stack");
      s = (s + 2 * padding - kernel) / stride + 1;
    }
    if (hidden == 0) throw ConfigError("forward net: hidden width must be positive");
  }

  /// Spatial side length after the convolution stack.
  std::size_t feature_side() const {
    std::size_t s = static_cast<std::size_t>(image_size);
    for (std::size_t i = 0; i < conv_channels.size(); ++i) s = (s + 2 * padding - kernel) / stride + 1;
    return s;
  }

  friend bool operator==(const ForwardNetConfig&, const ForwardNetConfig&) = default;
};

/// z = (log10(psi) - mean) / std, fitted on a dataset.
struct TargetTransform {
  double mean = 0.0;
  double std = 1.0;

  static TargetTransform fit(std::span<const double> psi) {
    if (psi.empty()) throw ConfigError("target transform: empty dataset");
    TargetTransform t;
    double s = 0.0;
    for (double p : psi) {
      if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("target transform: psi must be finite and positive");
      s += std::log10(p);
    }
    t.mean = s / static_cast<double>(psi.size());
    double v = 0.0;
    for (double p : psi) v += (std::log10(p) - t.mean) * (std::log10(p) - t.mean);
    t.std = std::sqrt(v / static_cast<double>(psi.size()));
    if (!(t.std > 1e-12)) t.std = 1.0;
    return t;
  }

  double forward(double psi) const { return (std::log10(psi) - mean) / std; }
  double inverse(double z) const { return std::pow(10.0, mean + std * z); }

  // inverse(z) = exp(a + b z)
  double exp_offset() const { return mean * std::numbers::ln10; }
  double exp_scale() const { return std * std::numbers::ln10; }

  friend bool operator==(const TargetTransform&, const TargetTransform&) = default;
};

template <class T>
nn::Tensor<T> images_to_tensor(std::span<const QuadrantImage* const> images) {
  if (images.empty()) return nn::Tensor<T>({0, 1, 0, 0});
  const auto n = static_cast<std::size_t>(images.front()->size());
  nn::Tensor<T> t({images.size(), 1, n, n});
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (static_cast<std::size_t>(images[k]->size()) != n) throw ContractError("images_to_tensor: mixed image sizes");
    const auto px = images[k]->pixels();
    std::transform(px.begin(), px.end(), t.data() + k * n * n, [](std::uint8_t v) { return static_cast<T>(v); });
  }
  return t;
}

template <class T>
nn::Tensor<T> images_to_tensor(std::span<const QuadrantImage> images) {
  std::vector<const QuadrantImage*> ptrs;
  for (const auto& q : images) ptrs.push_back(&q);
  return images_to_tensor<T>(std::span<const QuadrantImage* const>(ptrs));
}

template <class T>
class ForwardNet {
 public:
  ForwardNet(ForwardNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      convs_.emplace_back(params_, "forward.conv" + std::to_string(i), in, cfg_.conv_channels[i], cfg_.kernel,
                          cfg_.stride, cfg_.padding, rng);
      in = cfg_.conv_channels[i];
    }
    const std::size_t side = cfg_.feature_side();
    flat_ = in * side * side;
    hidden_ = nn::Dense<T>(params_, "forward.dense0", flat_, cfg_.hidden, rng);
    out_ = nn::Dense<T>(params_, "forward.dense1", cfg_.hidden, 1, rng);
    adam_.set_config(nn::AdamConfig{});
  }

  ForwardNet(const ForwardNet&) = delete;
  ForwardNet& operator=(const ForwardNet&) = delete;
  ForwardNet(ForwardNet&&) = default;
  ForwardNet& operator=(ForwardNet&&) = default;

  /// [N,1,H,W] -> [N,1] in transformed target space.
  nn::Var<T> forward(const nn::Var<T>& x) const {
    const T slope = static_cast<T>(cfg_.leaky_slope);
    nn::Var<T> h = x;
    for (const auto& c : convs_) h = nn::leaky_relu(c(h), slope);
    const std::size_t n = h.shape()[0];
    h = nn::reshape(h, {n, flat_});
    h = nn::leaky_relu(hidden_(h), slope);
    return out_(h);
  }

  /// Predicted psi in W/m for each image.
  std::vector<double> predict(std::span<const QuadrantImage> images, std::size_t chunk = 256) const {
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t s = 0; s < images.size(); s += chunk) {
      const auto part = images.subspan(s, std::min(chunk, images.size() - s));
      const auto z = forward(nn::Var<T>(images_to_tensor<T>(part)));
      for (std::size_t k = 0; k < part.size(); ++k) out.push_back(transform_.inverse(static_cast<double>(z.value()[k])));
    }
    return out;
  }

  const ForwardNetConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  nn::Adam<T>& adam() { return adam_; }
  const nn::Adam<T>& adam() const { return adam_; }
  const TargetTransform& transform() const { return transform_; }
  void set_transform(const TargetTransform& t) { transform_ = t; }

 private:
  ForwardNetConfig cfg_;
  nn::ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> convs_;
  nn::Dense<T> hidden_, out_;
  std::size_t flat_ = 0;
  nn::Adam<T> adam_;
  TargetTransform transform_;
};

template <class T>
double predict_psi(const ForwardNet<T>& net, const QuadrantImage& image) {
  return net.predict(std::span<const QuadrantImage>(&image, 1)).front();
}

struct LabeledSample {
  QuadrantImage image{64};
  double psi_r = 0.0;
};

struct ForwardTrainConfig {
  int epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double val_fraction = 0.1;
  bool refit_transform = true;
  std::uint64_t seed = 0;
};

struct ForwardEpoch {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = std::numeric_limits<double>::quiet_NaN();
};

/// Adam/MSE training in the transformed space. The train/validation split
/// and the per-epoch shuffles are derived from `cfg.seed`. Adam moments carry
/// over between calls, so a second call warm-starts.
template <class T>
std::vector<ForwardEpoch> train_forward(ForwardNet<T>& net, std::span<const LabeledSample> data,
                                        const ForwardTrainConfig& cfg) {
  if (data.empty()) throw ConfigError("train_forward: empty dataset");
  if (cfg.epochs < 0 || cfg.batch_size == 0) throw ConfigError("train_forward: epochs and batch_size must be positive");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("train_forward: val_fraction in [0, 1)");

  if (cfg.refit_transform) {
    std::vector<double> psi;
    for (const auto& s : data) psi.push_back(s.psi_r);
    net.set_transform(TargetTransform::fit(psi));
  }
  auto adam_cfg = net.adam().config();
  adam_cfg.lr = cfg.lr;
  net.adam().set_config(adam_cfg);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (train.empty()) throw ConfigError("train_forward: validation split leaves no training samples");

  auto batch_tensors = [&](std::span<const std::size_t> idx) {
    std::vector<const QuadrantImage*> imgs;
    nn::Tensor<T> y({idx.size(), 1});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      imgs.push_back(&data[idx[k]].image);
      y[k] = static_cast<T>(net.transform().forward(data[idx[k]].psi_r));
    }
    return std::make_pair(images_to_tensor<T>(std::span<const QuadrantImage* const>(imgs)), std::move(y));
  };

  std::vector<ForwardEpoch> history;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(train.begin(), train.end(), rng);
    double sse = 0.0;
    for (std::size_t s = 0; s < train.size(); s += cfg.batch_size) {
      const auto idx = std::span<const std::size_t>(train).subspan(s, std::min(cfg.batch_size, train.size() - s));
      auto [x, y] = batch_tensors(idx);
      net.params().zero_grad();
      const auto loss = nn::mse_loss(net.forward(nn::Var<T>(std::move(x))), y);
      const double l = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(l)) throw NumericalError("train_forward: non-finite loss at epoch " + std::to_string(e + 1));
      sse += l * static_cast<double>(idx.size());
      nn::backward(loss);
      net.adam().step(net.params());
    }
    ForwardEpoch rec{e + 1, sse / static_cast<double>(train.size())};
    if (!val.empty()) {
      double vsse = 0.0;
      for (std::size_t s = 0; s < val.size(); s += 256) {
        const auto idx = std::span<const std::size_t>(val).subspan(s, std::min<std::size_t>(256, val.size() - s));
        auto [x, y] = batch_tensors(idx);
        vsse += static_cast<double>(nn::mse_loss(net.forward(nn::Var<T>(std::move(x))), y).value()[0]) *
                static_cast<double>(idx.size());
      }
      rec.val_mse = vsse / static_cast<double>(val.size());
    }
    history.push_back(rec);
  }
  return history;
}

inline void write_forward_history_csv(const std::filesystem::path& path, std::span<const ForwardEpoch> history) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os.precision(10);
  os << "epoch,train_mse,val_mse\n";
  for (const auto& h : history) os << h.epoch << ',' << h.train_mse << ',' << h.val_mse << '\n';
}

/// Forward net parameters, Adam state and target transform in one checkpoint.
/// The transform is stored as two extra scalar records.
template <class T>
void save_forward_net(const std::filesystem::path& path, const ForwardNet<T>& net) {
  auto ckpt = nn::capture(net.params(), &net.adam());
  auto scalar = [](std::string name, double v) {
    nn::CheckpointRecord r;
    r.name = std::move(name);
    r.shape = {3};
    // Three-float expansion; the residuals are exact in double, so the sum restores v bit for bit.
    const float hi = static_cast<float>(v);
    const float mid = static_cast<float>(v - hi);
    const float lo = static_cast<float>(v - hi - mid);
    r.values = {hi, mid, lo};
    return r;
  };
  ckpt.records.push_back(scalar("transform.mean", net.transform().mean));
  ckpt.records.push_back(scalar("transform.std", net.transform().std));
  nn::save_checkpoint_file(path, ckpt);
}

template <class T>
void load_forward_net(const std::filesystem::path& path, ForwardNet<T>& net) {
  const auto ckpt = nn::load_checkpoint_file(path);
  nn::restore(ckpt, net.params(), &net.adam());
  auto scalar = [&](const std::string& name) {
    const auto* r = ckpt.find(name);
    if (!r || r->values.size() != 3) throw FormatError("checkpoint: missing " + name);
    return (static_cast<double>(r->values[0]) + r->values[1]) + r->values[2];
  };
  net.set_transform(TargetTransform{scalar("transform.mean"), scalar("transform.std")});
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractError("spearman: need two equal-length samples");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t s = 0; s < idx.size();) {
      std::size_t e = s;
      while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[s]]) ++e;
      const double avg = 0.5 * static_cast<double>(s + e) + 1.0;
      for (std::size_t k = s; k <= e; ++k) r[idx[k]] = avg;
      s = e + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace cloak
