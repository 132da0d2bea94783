#pragma once

// Generator / discriminator pair. The generator's loss is the usual
// non-saturating GAN term plus a surrogate term that pulls the rounded
// designs toward low predicted scattering:
//
//   L_t = alpha_g * L_g + alpha_f * L_f
//
// Both networks see the rounded (binary) generator output; gradients reach
// the generator through the straight-through rounding node.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cloak/surrogate.hpp"

namespace cloak {

struct GeneratorConfig {
  std::size_t noise_dim = 200;
  std::size_t base_side = 4;
  std::size_t projection_channels = 256;
  std::vector<std::size_t> channels{256, 128, 64, 1};
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
  double leaky_slope = 0.2;
  int image_size = 64;

  void validate() const {
    if (noise_dim == 0 || base_side == 0 || projection_channels == 0)
      throw ConfigError("generator: noise_dim, base_side and projection_channels must be positive");
    if (channels.empty() || channels.back() != 1) throw ConfigError("generator: last layer must have one channel");
    std::size_t s = base_side;
    for (auto c : channels) {
      if (c == 0) throw ConfigError("generator: zero-width layer");
      s = (s - 1) * stride + kernel - 2 * padding;
    }
    if (s != static_cast<std::size_t>(image_size))
      throw ConfigError("generator: layer stack produces " + std::to_string(s) + " pixels, expected " +
                        std::to_string(image_size));
  }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct DiscriminatorConfig {
  std::vector<std::size_t> channels{32, 64, 128};
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
  double leaky_slope = 0.2;
  int image_size = 64;

  void validate() const {
    if (channels.empty()) throw ConfigError("discriminator: at least one convolution layer is required");
    for (auto c : channels)
      if (c == 0) throw ConfigError("discriminator: zero-width layer");
  }

  std::size_t feature_side() const {
    std::size_t s = static_cast<std::size_t>(image_size);
    for (std::size_t i = 0; i < channels.size(); ++i) s = (s + 2 * padding - kernel) / stride + 1;
    return s;
  }

  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

/// Where the surrogate term is evaluated.
///   raw:         L_f = mean psi_p in W/m, so alpha_f = 5 / <psi_r> makes alpha_f * L_f
///                a dimensionless multiple of the dataset mean.
///   transformed: L_f = mean standardized log-prediction, weighted by alpha_f as given.
enum class ForwardLossSpace { raw, transformed };

struct GanConfig {
  double alpha_g = 1.0;
  double alpha_d = 1.0;
  double alpha_f_numerator = 5.0;  // alpha_f = numerator / <psi_r> of the current dataset
  ForwardLossSpace lf_space = ForwardLossSpace::raw;
  std::size_t batch_size = 64;
  int epochs = 60;
  std::size_t candidates_per_epoch = 256;
  nn::AdamConfig gen_adam{2e-4, 0.5, 0.999, 1e-8};
  nn::AdamConfig disc_adam{2e-4, 0.5, 0.999, 1e-8};

  void validate() const {
    if (!(alpha_g >= 0.0) || !(alpha_d > 0.0) || !(alpha_f_numerator >= 0.0))
      throw ConfigError("gan: alpha_g >= 0, alpha_d > 0 and alpha_f_numerator >= 0 required");
    if (batch_size == 0 || epochs < 0) throw ConfigError("gan: batch_size must be positive");
    for (const auto* a : {&gen_adam, &disc_adam})
      if (!(a->lr > 0.0) || !(a->beta1 >= 0.0 && a->beta1 < 1.0) || !(a->beta2 >= 0.0 && a->beta2 < 1.0) ||
          !(a->epsilon > 0.0))
        throw ConfigError("gan: invalid Adam hyper-parameters");
  }

  /// alpha_f for a dataset whose raw mean psi is `mean_psi`.
  double alpha_f(double mean_psi) const {
    if (!(mean_psi > 0.0)) throw ConfigError("gan: mean dataset psi must be positive");
    return alpha_f_numerator / mean_psi;
  }
};

namespace detail {

/// Clears requires_grad on a parameter set for the guard's lifetime.
template <class T>
class FreezeGuard {
 public:
  explicit FreezeGuard(nn::ParameterSet<T>& p) : p_(p), was_(p.trainable()) { p_.set_trainable(false); }
  ~FreezeGuard() { p_.set_trainable(was_); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  nn::ParameterSet<T>& p_;
  bool was_;
};

}  // namespace detail

template <class T>
struct GeneratorOutput {
  nn::Var<T> continuous;  // masked sigmoid output in [0, 1)
  nn::Var<T> binary;      // st_round(continuous)
};

template <class T>
class Generator {
 public:
  Generator(GeneratorConfig cfg, const DomainSpec& spec, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (spec.image_size != cfg_.image_size) throw ConfigError("generator: image_size differs from the domain");
    std::mt19937_64 rng(seed);
    const std::size_t proj = cfg_.projection_channels * cfg_.base_side * cfg_.base_side;
    projection_ = nn::Dense<T>(params_, "gen.dense", cfg_.noise_dim, proj, rng);
    std::size_t in = cfg_.projection_channels;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
      layers_.emplace_back(params_, "gen.convt" + std::to_string(i), in, cfg_.channels[i], cfg_.kernel, cfg_.stride,
                           cfg_.padding, rng);
      in = cfg_.channels[i];
    }
    const auto m = annulus_mask(spec);
    mask_ = nn::Tensor<T>({static_cast<std::size_t>(m.pixels().size())});
    for (std::size_t k = 0; k < mask_.size(); ++k) mask_[k] = static_cast<T>(m.pixels()[k]);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  GeneratorOutput<T> forward(const nn::Var<T>& noise) const {
    const T slope = static_cast<T>(cfg_.leaky_slope);
    const std::size_t n = noise.shape().at(0);
    nn::Var<T> h = nn::leaky_relu(projection_(noise), slope);
    h = nn::reshape(h, {n, cfg_.projection_channels, cfg_.base_side, cfg_.base_side});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      h = i + 1 < layers_.size() ? nn::leaky_relu(h, slope) : nn::sigmoid(h);
    }
    auto masked = nn::mul_const(h, mask_);
    auto binary = nn::st_round(masked);
    return {masked, binary};
  }

  const GeneratorConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  const nn::Tensor<T>& mask() const { return mask_; }

 private:
  GeneratorConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Dense<T> projection_;
  std::vector<nn::ConvTranspose2d<T>> layers_;
  nn::Tensor<T> mask_;
};

template <class T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
      convs_.emplace_back(params_, "disc.conv" + std::to_string(i), in, cfg_.channels[i], cfg_.kernel, cfg_.stride,
                          cfg_.padding, rng);
      in = cfg_.channels[i];
    }
    flat_ = in * cfg_.feature_side() * cfg_.feature_side();
    out_ = nn::Dense<T>(params_, "disc.dense", flat_, 1, rng);
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  /// [N,1,H,W] -> [N,1] probability that each image is real.
  nn::Var<T> forward(const nn::Var<T>& x) const {
    const T slope = static_cast<T>(cfg_.leaky_slope);
    nn::Var<T> h = x;
    for (const auto& c : convs_) h = nn::leaky_relu(c(h), slope);
    h = nn::reshape(h, {h.shape()[0], flat_});
    return nn::sigmoid(out_(h));
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

 private:
  DiscriminatorConfig cfg_;
  nn::ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> convs_;
  nn::Dense<T> out_;
  std::size_t flat_ = 0;
};

template <class T>
nn::Tensor<T> sample_noise(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  nn::Tensor<T> z({n, dim});
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : z.vec()) v = static_cast<T>(d(rng));
  return z;
}

template <class T>
struct GeneratedBatch {
  std::vector<QuadrantImage> images;  // rounded
  nn::Tensor<T> continuous;           // [N,1,H,W] before rounding
};

template <class T>
std::vector<QuadrantImage> tensor_to_images(const nn::Tensor<T>& binary) {
  const std::size_t n = binary.dim(0), side = binary.dim(2);
  std::vector<QuadrantImage> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    QuadrantImage q(static_cast<int>(side));
    auto px = q.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = binary[k * side * side + i] != T(0) ? 1 : 0;
    out.push_back(std::move(q));
  }
  return out;
}

/// Inference only; no graph is recorded.
template <class T>
GeneratedBatch<T> generate(Generator<T>& gen, const nn::Tensor<T>& noise) {
  detail::FreezeGuard<T> freeze(gen.params());
  auto out = gen.forward(nn::Var<T>(noise));
  return {tensor_to_images(out.binary.value()), out.continuous.value()};
}

/// One Adam update of the discriminator on a real and a fake batch.
/// L_d = alpha_d * (bce(D(real), 1) + bce(D(fake), 0)).
template <class T>
double discriminator_step(Discriminator<T>& disc, nn::Adam<T>& adam, const nn::Tensor<T>& real,
                          const nn::Tensor<T>& fake, double alpha_d = 1.0) {
  if (real.rank() != 4 || fake.rank() != 4 || real.dim(0) != fake.dim(0) || real.shape() != fake.shape())
    throw ContractError("discriminator_step: real " + nn::shape_str(real.shape()) + " vs fake " +
                        nn::shape_str(fake.shape()));
  disc.params().set_trainable(true);
  disc.params().zero_grad();
  const std::size_t n = real.dim(0);
  const auto l_real = nn::bce_loss(disc.forward(nn::Var<T>(real)), nn::Tensor<T>({n, 1}, T(1)));
  const auto l_fake = nn::bce_loss(disc.forward(nn::Var<T>(fake)), nn::Tensor<T>({n, 1}, T(0)));
  const auto a = static_cast<T>(alpha_d);
  const auto loss = nn::weighted_sum(l_real, a, l_fake, a);
  nn::backward(loss);
  adam.step(disc.params());
  return static_cast<double>(loss.value()[0]);
}

struct GeneratorLosses {
  double l_g = 0.0;
  double l_f = 0.0;  // mean psi_p (raw) or mean standardized prediction (transformed)
  double l_t = 0.0;
};

/// One Adam update of the generator through the frozen discriminator and
/// surrogate, reusing an already computed forward pass.
template <class T>
GeneratorLosses generator_step(Generator<T>& gen, nn::Adam<T>& adam, const Discriminator<T>& disc,
                               const ForwardNet<T>& surrogate, const GeneratorOutput<T>& out, const GanConfig& cfg,
                               double alpha_f) {
  if (disc.params().trainable()) throw ContractError("generator_step: discriminator must be frozen");
  if (surrogate.params().trainable()) throw ContractError("generator_step: surrogate must be frozen");
  if (!(alpha_f >= 0.0) || !std::isfinite(alpha_f)) throw ConfigError("generator_step: alpha_f must be finite and >= 0");
  const std::size_t n = out.binary.shape()[0];
  const auto l_g = nn::bce_loss(disc.forward(out.binary), nn::Tensor<T>({n, 1}, T(1)));
  const auto z = surrogate.forward(out.binary);
  const auto& tr = surrogate.transform();
  const auto l_f = cfg.lf_space == ForwardLossSpace::raw
                       ? nn::mean(nn::exp_affine(z, static_cast<T>(tr.exp_offset()), static_cast<T>(tr.exp_scale())))
                       : nn::mean(z);
  const auto l_t = nn::weighted_sum(l_g, static_cast<T>(cfg.alpha_g), l_f, static_cast<T>(alpha_f));
  gen.params().zero_grad();
  nn::backward(l_t);
  adam.step(gen.params());
  return {static_cast<double>(l_g.value()[0]), static_cast<double>(l_f.value()[0]),
          static_cast<double>(l_t.value()[0])};
}

template <class T>
GeneratorLosses generator_step(Generator<T>& gen, nn::Adam<T>& adam, const Discriminator<T>& disc,
                               const ForwardNet<T>& surrogate, const nn::Tensor<T>& noise, const GanConfig& cfg,
                               double alpha_f) {
  gen.params().set_trainable(true);
  return generator_step(gen, adam, disc, surrogate, gen.forward(nn::Var<T>(noise)), cfg, alpha_f);
}

struct GanEpoch {
  int epoch = 0;
  double l_d = 0.0, l_g = 0.0, l_f = 0.0, l_t = 0.0;
  double d_real = 0.0, d_fake = 0.0;  // mean discriminator output after the epoch
};

struct HarvestItem {
  QuadrantImage image{64};
  double psi_p = 0.0;
  int epoch = 0;
};

struct GanResult {
  std::vector<GanEpoch> losses;
  std::vector<HarvestItem> harvest;
  std::vector<std::string> warnings;
};

/// Alternates one discriminator and one generator update per batch; after
/// each epoch scores `candidates_per_epoch` fresh designs with the surrogate.
template <class T>
GanResult train_gan(Generator<T>& gen, Discriminator<T>& disc, ForwardNet<T>& surrogate,
                    std::span<const QuadrantImage> real_images, const GanConfig& cfg, double alpha_f,
                    std::mt19937_64& rng, const std::function<void(const GanEpoch&)>& on_epoch = {}) {
  cfg.validate();
  if (real_images.empty()) throw ConfigError("train_gan: empty dataset");
  nn::Adam<T> gen_adam(cfg.gen_adam), disc_adam(cfg.disc_adam);
  detail::FreezeGuard<T> freeze_surrogate(surrogate.params());

  const std::size_t batch = std::min(cfg.batch_size, real_images.size());
  const std::size_t noise_dim = gen.config().noise_dim;
  std::vector<std::size_t> order(real_images.size());
  std::iota(order.begin(), order.end(), 0);

  GanResult result;
  int saturated = 0;
  for (int e = 1; e <= cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    GanEpoch rec{e};
    std::size_t batches = 0;
    for (std::size_t s = 0; s + batch <= order.size(); s += batch) {
      std::vector<const QuadrantImage*> ptrs;
      for (std::size_t k = s; k < s + batch; ++k) ptrs.push_back(&real_images[order[k]]);
      const auto real = images_to_tensor<T>(std::span<const QuadrantImage* const>(ptrs));

      gen.params().set_trainable(true);
      const auto out = gen.forward(nn::Var<T>(sample_noise<T>(batch, noise_dim, rng)));
      const double l_d = discriminator_step(disc, disc_adam, real, out.binary.value(), cfg.alpha_d);
      GeneratorLosses lg;
      {
        detail::FreezeGuard<T> freeze_disc(disc.params());
        lg = generator_step(gen, gen_adam, disc, surrogate, out, cfg, alpha_f);
      }
      if (!std::isfinite(l_d) || !std::isfinite(lg.l_t))
        throw NumericalError("train_gan: non-finite loss at epoch " + std::to_string(e) + " batch " +
                             std::to_string(batches) + " (L_d=" + std::to_string(l_d) +
                             ", L_g=" + std::to_string(lg.l_g) + ", L_f=" + std::to_string(lg.l_f) + ")");
      rec.l_d += l_d;
      rec.l_g += lg.l_g;
      rec.l_f += lg.l_f;
      rec.l_t += lg.l_t;
      ++batches;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.l_d /= nb;
    rec.l_g /= nb;
    rec.l_f /= nb;
    rec.l_t /= nb;

    // Harvest and discriminator diagnostics on fresh samples.
    std::vector<HarvestItem> fresh;
    for (std::size_t s = 0; s < cfg.candidates_per_epoch; s += 64) {
      const std::size_t m = std::min<std::size_t>(64, cfg.candidates_per_epoch - s);
      auto batch_out = generate(gen, sample_noise<T>(m, noise_dim, rng));
      const auto psi = surrogate.predict(batch_out.images);
      for (std::size_t k = 0; k < m; ++k) fresh.push_back({std::move(batch_out.images[k]), psi[k], e});
    }
    {
      detail::FreezeGuard<T> freeze_disc(disc.params());
      const std::size_t m = std::min<std::size_t>(batch, fresh.size());
      if (m > 0) {
        std::vector<const QuadrantImage*> fake_ptrs, real_ptrs;
        for (std::size_t k = 0; k < m; ++k) {
          fake_ptrs.push_back(&fresh[k].image);
          real_ptrs.push_back(&real_images[order[k % order.size()]]);
        }
        auto mean_of = [](const nn::Var<T>& v) {
          double s = 0.0;
          for (auto x : v.value().vec()) s += static_cast<double>(x);
          return s / static_cast<double>(v.value().size());
        };
        rec.d_fake = mean_of(disc.forward(nn::Var<T>(images_to_tensor<T>(std::span<const QuadrantImage* const>(fake_ptrs)))));
        rec.d_real = mean_of(disc.forward(nn::Var<T>(images_to_tensor<T>(std::span<const QuadrantImage* const>(real_ptrs)))));
      }
    }
    const bool sat = rec.d_real > 1.0 - 1e-3 && rec.d_fake < 1e-3;
    saturated = sat ? saturated + 1 : 0;
    if (saturated == 10)
      result.warnings.push_back("discriminator saturated for 10 consecutive epochs (ending at epoch " +
                                std::to_string(e) + ")");
    for (auto& h : fresh) result.harvest.push_back(std::move(h));
    result.losses.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

inline void write_gan_losses_csv(const std::filesystem::path& path, std::span<const GanEpoch> losses) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os.precision(10);
  os << "epoch,L_d,L_g,L_f,L_t,d_real,d_fake\n";
  for (const auto& l : losses)
    os << l.epoch << ',' << l.l_d << ',' << l.l_g << ',' << l.l_f << ',' << l.l_t << ',' << l.d_real << ','
       << l.d_fake << '\n';
}

}  // namespace cloak
