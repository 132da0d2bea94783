#pragma once

// Shell geometry: quadrant rasters, their mirrored full-shell form, and the
// permittivity grid consumed by the solver.
//
// Pixel convention (shared by the networks and the solver): quadrant pixel
// (i, j) is row i, column j and covers
//   x in [j*p, (j+1)*p],  y in [i*p, (i+1)*p],   p = r_shell / image_size.
// Row 0 touches the x-axis. A pixel belongs to the shell iff its centre
// satisfies r_object < r < r_shell.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "cloak/domain.hpp"
#include "cloak/errors.hpp"

namespace cloak {

/// Binary raster of one shell quadrant. Values are 0 (background) or 1 (shell).
class QuadrantImage {
 public:
  QuadrantImage() = default;
  explicit QuadrantImage(int size) : size_(size), pixels_(static_cast<std::size_t>(size) * size, 0) {}
  QuadrantImage(int size, std::vector<std::uint8_t> pixels) : size_(size), pixels_(std::move(pixels)) {
    if (pixels_.size() != static_cast<std::size_t>(size) * size)
      throw ContractError("QuadrantImage: pixel buffer does not match size");
  }

  int size() const { return size_; }
  std::uint8_t at(int i, int j) const { return pixels_[index(i, j)]; }
  void set(int i, int j, std::uint8_t v) { pixels_[index(i, j)] = v; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> pixels() { return pixels_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto p : pixels_) n += p;
    return n;
  }

  /// FNV-1a over the pixel bytes; used for exact-duplicate detection.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto p : pixels_) {
      h ^= p;
      h *= 1099511628211ull;
    }
    return h;
  }

  friend bool operator==(const QuadrantImage&, const QuadrantImage&) = default;

 private:
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * size_ + j; }

  int size_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Binary raster of the whole shell bounding box [-r_shell, r_shell]^2,
/// 2n x 2n pixels. Row index grows with y, column index with x.
class FullShellImage {
 public:
  FullShellImage() = default;
  explicit FullShellImage(int quadrant_size)
      : half_(quadrant_size), pixels_(static_cast<std::size_t>(4) * quadrant_size * quadrant_size, 0) {}

  int size() const { return 2 * half_; }
  int quadrant_size() const { return half_; }
  std::uint8_t at(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * size() + col]; }
  void set(int row, int col, std::uint8_t v) { pixels_[static_cast<std::size_t>(row) * size() + col] = v; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }

  bool is_symmetric() const {
    const int n = size();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (at(r, c) != at(n - 1 - r, c) || at(r, c) != at(r, n - 1 - c)) return false;
    return true;
  }

  /// The first-quadrant block (x > 0, y > 0).
  QuadrantImage first_quadrant() const {
    QuadrantImage q(half_);
    for (int i = 0; i < half_; ++i)
      for (int j = 0; j < half_; ++j) q.set(i, j, at(half_ + i, half_ + j));
    return q;
  }

  friend bool operator==(const FullShellImage&, const FullShellImage&) = default;

 private:
  int half_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Real permittivity grid over the square [-L, L]^2 bounding the simulated
/// disk, cell-centred, with a PEC mask. Index (row, col) = (y, x).
struct PermittivityMap {
  int n = 0;
  double cell_size = 0.0;  // micrometres
  std::vector<double> eps;
  std::vector<std::uint8_t> pec_mask;  // cell centre inside the PEC disk
  double pec_radius = 0.0;             // exact disk used by the solver's cut cells; 0 = no PEC
  DomainSpec spec;

  /// Coordinate of the centre of cell index `k` along either axis.
  double center(int k) const { return (k + 0.5 - 0.5 * n) * cell_size; }
  double half_width() const { return 0.5 * n * cell_size; }
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * n + col; }
};

/// True iff quadrant pixel (i, j) lies in the designable annulus.
inline bool pixel_in_annulus(const DomainSpec& spec, int i, int j) {
  const double p = spec.pixel_size();
  const double r = std::hypot((j + 0.5) * p, (i + 0.5) * p);
  return r > spec.r_object && r < spec.r_shell;
}

inline QuadrantImage annulus_mask(const DomainSpec& spec) {
  QuadrantImage q(spec.image_size);
  for (int i = 0; i < spec.image_size; ++i)
    for (int j = 0; j < spec.image_size; ++j) q.set(i, j, pixel_in_annulus(spec, i, j) ? 1 : 0);
  return q;
}

/// Clears every pixel outside the annulus.
inline void apply_annulus_mask(const DomainSpec& spec, QuadrantImage& q) {
  for (int i = 0; i < q.size(); ++i)
    for (int j = 0; j < q.size(); ++j)
      if (!pixel_in_annulus(spec, i, j)) q.set(i, j, 0);
}

/// Union of `curve_count` filled random ellipses in the first quadrant,
/// clipped to the annulus. Centres are uniform in [0, r_shell]^2, semi-axes
/// uniform in [0.2, 1.0] * curve_scale, orientation uniform in [0, pi).
inline QuadrantImage random_shell(const DomainSpec& spec, std::uint64_t rng_seed, int curve_count,
                                  double curve_scale) {
  QuadrantImage q(spec.image_size);
  if (curve_count <= 0 || !(curve_scale > 0.0)) return q;

  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> centre(0.0, spec.r_shell);
  std::uniform_real_distribution<double> axis(0.2 * curve_scale, 1.0 * curve_scale);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);

  struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;
  };
  std::vector<Ellipse> blobs;
  blobs.reserve(curve_count);
  for (int k = 0; k < curve_count; ++k) {
    const double cx = centre(rng);
    const double cy = centre(rng);
    const double a = axis(rng);
    const double b = axis(rng);
    const double t = angle(rng);
    blobs.push_back({cx, cy, a, b, std::cos(t), std::sin(t)});
  }

  const double p = spec.pixel_size();
  for (int i = 0; i < spec.image_size; ++i) {
    for (int j = 0; j < spec.image_size; ++j) {
      if (!pixel_in_annulus(spec, i, j)) continue;
      const double x = (j + 0.5) * p;
      const double y = (i + 0.5) * p;
      for (const auto& e : blobs) {
        const double dx = x - e.cx;
        const double dy = y - e.cy;
        const double u = (dx * e.cos_t + dy * e.sin_t) / e.a;
        const double v = (-dx * e.sin_t + dy * e.cos_t) / e.b;
        if (u * u + v * v <= 1.0) {
          q.set(i, j, 1);
          break;
        }
      }
    }
  }
  return q;
}

/// Reflects a quadrant about both axes into the full shell raster.
inline FullShellImage mirror_expand(const QuadrantImage& q) {
  const int n = q.size();
  FullShellImage full(n);
  for (int row = 0; row < 2 * n; ++row) {
    const int i = row >= n ? row - n : n - 1 - row;
    for (int col = 0; col < 2 * n; ++col) {
      const int j = col >= n ? col - n : n - 1 - col;
      full.set(row, col, q.at(i, j));
    }
  }
  return full;
}

/// Samples the full shell raster onto a solver grid with `grid_resolution`
/// cells per wavelength. Each cell takes the value of the pixel containing
/// its centre; cells whose centre lies at r < r_object are PEC.
inline PermittivityMap rasterize(const FullShellImage& full, const DomainSpec& spec,
                                 double grid_resolution) {
  spec.validate();
  if (!(grid_resolution >= 10.0))
    throw ConfigError("rasterize: grid_resolution must be >= 10 cells per wavelength");
  if (full.quadrant_size() != spec.image_size)
    throw ConfigError("rasterize: image size does not match domain spec");

  PermittivityMap map;
  map.spec = spec;
  map.cell_size = spec.wavelength / grid_resolution;
  map.n = 2 * static_cast<int>(std::ceil(spec.r_domain / map.cell_size));
  const std::size_t cells = static_cast<std::size_t>(map.n) * map.n;
  map.eps.assign(cells, spec.eps_background);
  map.pec_mask.assign(cells, 0);
  map.pec_radius = spec.r_object;

  const double p = spec.pixel_size();
  const int full_n = full.size();
  for (int row = 0; row < map.n; ++row) {
    const double y = map.center(row);
    for (int col = 0; col < map.n; ++col) {
      const double x = map.center(col);
      const std::size_t idx = map.index(row, col);
      if (std::hypot(x, y) < spec.r_object) {
        map.pec_mask[idx] = 1;
        continue;
      }
      if (std::abs(x) >= spec.r_shell || std::abs(y) >= spec.r_shell) continue;
      const int pc = static_cast<int>(std::floor((x + spec.r_shell) / p));
      const int pr = static_cast<int>(std::floor((y + spec.r_shell) / p));
      if (pr < 0 || pc < 0 || pr >= full_n || pc >= full_n) continue;
      if (full.at(pr, pc)) map.eps[idx] = spec.eps_shell;
    }
  }
  return map;
}

/// Bare-object map: PEC disk, no shell material.
inline PermittivityMap bare_object_map(const DomainSpec& spec, double grid_resolution) {
  return rasterize(FullShellImage(spec.image_size), spec, grid_resolution);
}

}  // namespace cloak
