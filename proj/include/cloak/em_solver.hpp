#pragma once

// Frequency-domain scattering of an x-propagating plane wave (E along y,
// H along z, time convention exp(-i w t)) by a PEC cylinder wrapped in a
// two-phase dielectric shell.
//
// The scattered field H_sc solves, on a uniform cell-centred grid,
//
//   div(eps^-1 grad H_sc) + k0^2 H_sc = -div((eps^-1 - 1) grad H_bg)
//
// with a zero-flux (Neumann) condition for the total field on PEC faces and
// a stretched-coordinate PML around the square. The operator is multiplied
// by s_x s_y so the assembled matrix is complex symmetric.

#include <Eigen/Sparse>
#include <Eigen/UmfPackSupport>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>
#include <vector>

#include "cloak/domain.hpp"
#include "cloak/errors.hpp"
#include "cloak/geometry.hpp"

namespace cloak {

using cplx = std::complex<double>;

/// Incident plane wave E = E0 exp(i k0 x) y-hat, so H = (E0/eta0) exp(i k0 x) z-hat.
struct SourceSpec {
  double amplitude = 1.0;  // E0 in V/m

  void validate() const {
    if (!(amplitude > 0.0)) throw ConfigError("source: amplitude must be positive");
  }
  double h0() const { return amplitude / phys::eta0; }
};

struct SolverOptions {
  int pml_cells = 0;             // 0 selects max(12, 0.75 wavelength)
  double pml_reflection = 1e-10;  // target normal-incidence reflection
  double residual_tol = 1e-8;
};

/// Scattered and background H_z on the map's n x n grid (PML stripped).
struct FieldSolution {
  int n = 0;
  double cell_size = 0.0;
  double k0 = 0.0;
  double wavelength = 0.0;
  double residual = 0.0;
  std::vector<cplx> hz_scattered;
  std::vector<cplx> hz_background;
  std::vector<std::uint8_t> pec_mask;
  DomainSpec spec;

  double center(int k) const { return (k + 0.5 - 0.5 * n) * cell_size; }
  double half_width() const { return 0.5 * n * cell_size; }
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * n + col; }
  double grid_resolution() const { return wavelength / cell_size; }
};

struct ScatteringResult {
  double psi = 0.0;  // W/m
  bool converged = false;
  double grid_resolution = 0.0;
};

namespace detail {

struct Stretch {
  double depth_start;  // half width of the physical region
  double thickness;
  double sigma0;

  cplx at(double u) const {
    const double d = std::abs(u) - depth_start;
    if (d <= 0.0) return {1.0, 0.0};
    const double t = std::min(d / thickness, 1.0);
    return {1.0, sigma0 * t * t};
  }
};

/// Length of the segment {x = xf, y in [y0, y1]} lying outside the disk of
/// radius `radius`, as a fraction of y1 - y0.
inline double face_aperture(double xf, double y0, double y1, double radius) {
  if (radius <= 0.0 || std::abs(xf) >= radius) return 1.0;
  const double half = std::sqrt(radius * radius - xf * xf);
  const double overlap = std::max(0.0, std::min(y1, half) - std::max(y0, -half));
  return 1.0 - overlap / (y1 - y0);
}

/// Fraction of the rectangle [x0,x1]x[y0,y1] lying outside the disk.
inline double open_area_fraction(double x0, double x1, double y0, double y1, double radius) {
  if (radius <= 0.0) return 1.0;
  const double nearest = std::hypot(std::max({x0, -x1, 0.0}), std::max({y0, -y1, 0.0}));
  if (nearest >= radius) return 1.0;
  const double farthest = std::hypot(std::max(std::abs(x0), std::abs(x1)), std::max(std::abs(y0), std::abs(y1)));
  if (farthest <= radius) return 0.0;
  constexpr int kSamples = 512;
  const double dx = (x1 - x0) / kSamples;
  double covered = 0.0;
  for (int k = 0; k < kSamples; ++k) {
    const double x = x0 + (k + 0.5) * dx;
    if (std::abs(x) >= radius) continue;
    const double half = std::sqrt(radius * radius - x * x);
    covered += std::max(0.0, std::min(y1, half) - std::max(y0, -half)) * dx;
  }
  return 1.0 - covered / ((x1 - x0) * (y1 - y0));
}

}  // namespace detail

inline FieldSolution solve_scattered(const PermittivityMap& map, const SourceSpec& src,
                                     const SolverOptions& opts = {}) {
  src.validate();
  const DomainSpec& spec = map.spec;
  if (spec.eps_background != 1.0)
    throw ConfigError("solver: only a vacuum background (eps_background = 1) is supported");
  const double h = map.cell_size;
  const double resolution = spec.wavelength / h;
  if (resolution < 10.0 - 1e-9) throw ConfigError("solver: grid resolution below 10 cells per wavelength");
  if (map.n <= 0 || map.eps.size() != static_cast<std::size_t>(map.n) * map.n ||
      map.pec_mask.size() != map.eps.size())
    throw ContractError("solver: malformed permittivity map");

  const double k0 = spec.k0();
  const int pml = opts.pml_cells > 0 ? opts.pml_cells
                                     : std::max(12, static_cast<int>(std::ceil(0.75 * resolution)));
  const int n = map.n;
  const int N = n + 2 * pml;
  const double inv_h2 = 1.0 / (h * h);

  detail::Stretch stretch{0.5 * n * h, pml * h, -3.0 * std::log(opts.pml_reflection) / (2.0 * k0 * pml * h)};
  auto coord = [&](double k) { return (k + 0.5 - 0.5 * N) * h; };
  std::vector<cplx> s_cell(N), s_face(N + 1);
  for (int k = 0; k < N; ++k) s_cell[k] = stretch.at(coord(k));
  for (int k = 0; k <= N; ++k) s_face[k] = stretch.at(coord(k - 0.5));

  // Extended-grid material lookup; PML cells are vacuum.
  auto inside = [&](int r, int c) { return r >= pml && r < pml + n && c >= pml && c < pml + n; };
  auto inv_eps = [&](int r, int c) { return inside(r, c) ? 1.0 / map.eps[map.index(r - pml, c - pml)] : 1.0; };
  auto eidx = [&](int r, int c) { return static_cast<Eigen::Index>(r) * N + c; };

  // Cut-cell description of the PEC disk: each control volume is the part of
  // its cell outside the disk, and each face carries the open fraction of
  // its length. Cells with no open face are inactive (identity rows).
  const double radius = map.pec_radius;
  auto edge = [&](int k) { return (k - 0.5 * N) * h; };
  // x_aperture(r, c): face between (r, c-1) and (r, c); y_aperture similarly.
  auto x_aperture = [&](int r, int c) { return detail::face_aperture(edge(c), edge(r), edge(r + 1), radius); };
  auto y_aperture = [&](int r, int c) { return detail::face_aperture(edge(r), edge(c), edge(c + 1), radius); };
  auto active = [&](int r, int c) {
    return x_aperture(r, c) > 0.0 || x_aperture(r, c + 1) > 0.0 || y_aperture(r, c) > 0.0 ||
           y_aperture(r + 1, c) > 0.0;
  };

  const double h0 = src.h0();
  auto h_bg = [&](int c) { return h0 * std::exp(cplx(0.0, k0 * coord(c))); };

  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(static_cast<std::size_t>(N) * N * 5);
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(N) * N);

  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < N; ++c) {
      const auto row = eidx(r, c);
      if (!active(r, c)) {
        trip.emplace_back(row, row, cplx(1.0, 0.0));
        continue;
      }
      const double volume = detail::open_area_fraction(edge(c), edge(c + 1), edge(r), edge(r + 1), radius);
      cplx diag = k0 * k0 * volume * s_cell[r] * s_cell[c];
      // A0 - A on the incident field, restricted to this row.
      cplx source = k0 * k0 * (1.0 - volume) * s_cell[r] * s_cell[c] * h_bg(c);
      const double ie_c = inv_eps(r, c);
      // x neighbours share this row's s_y; y neighbours share this column's s_x.
      const int dr[4] = {0, 0, -1, 1};
      const int dc[4] = {-1, 1, 0, 0};
      for (int f = 0; f < 4; ++f) {
        const int rn = r + dr[f];
        const int cn = c + dc[f];
        const bool along_x = dc[f] != 0;
        const int face = along_x ? c + (dc[f] > 0 ? 1 : 0) : r + (dr[f] > 0 ? 1 : 0);
        const cplx face_s = s_face[face];
        const cplx cross_s = along_x ? s_cell[r] : s_cell[c];
        // Free-space coefficient (Dirichlet beyond the outer PML edge).
        const cplx k_free = cross_s / face_s * inv_h2;
        if (rn < 0 || rn >= N || cn < 0 || cn >= N) {
          diag -= k_free;
          continue;
        }
        const double aperture = along_x ? x_aperture(r, face) : y_aperture(face, c);
        const double ie_face = 0.5 * (ie_c + inv_eps(rn, cn));
        const cplx k_face = k_free * ie_face * aperture;
        if (aperture > 0.0) {
          diag -= k_face;
          trip.emplace_back(row, eidx(rn, cn), k_face);
        }
        if (k_face != k_free) source += (k_free - k_face) * (h_bg(cn) - h_bg(c));
      }
      trip.emplace_back(row, row, diag);
      rhs[row] = source;
    }
  }

  FieldSolution sol;
  sol.n = n;
  sol.cell_size = h;
  sol.k0 = k0;
  sol.wavelength = spec.wavelength;
  sol.spec = spec;
  sol.pec_mask = map.pec_mask;
  sol.hz_scattered.assign(static_cast<std::size_t>(n) * n, cplx(0.0, 0.0));
  sol.hz_background.resize(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) sol.hz_background[sol.index(r, c)] = h0 * std::exp(cplx(0.0, k0 * map.center(c)));

  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return sol;

  Eigen::SparseMatrix<cplx> A(static_cast<Eigen::Index>(N) * N, static_cast<Eigen::Index>(N) * N);
  A.setFromTriplets(trip.begin(), trip.end());
  trip.clear();
  trip.shrink_to_fit();
  A.makeCompressed();

  Eigen::UmfPackLU<Eigen::SparseMatrix<cplx>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw SolverError("solver: sparse LU factorization failed", 1.0);
  Eigen::VectorXcd x = lu.solve(rhs);
  double residual = (A * x - rhs).norm() / rhs_norm;
  if (residual > opts.residual_tol) {
    // One step of iterative refinement.
    const Eigen::VectorXcd defect = rhs - A * x;
    const Eigen::VectorXcd correction = lu.solve(defect);
    x += correction;
    residual = (A * x - rhs).norm() / rhs_norm;
  }
  if (!x.allFinite()) throw NumericalError("solver: non-finite field values");
  if (residual > opts.residual_tol) throw SolverError("solver: residual above tolerance", residual);
  sol.residual = residual;

  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) sol.hz_scattered[sol.index(r, c)] = x[eidx(r + pml, c + pml)];
  return sol;
}

/// Time-averaged power per unit length radiated by the scattered field
/// through the circle of radius `integration_radius` (micrometres).
///
/// With E = (i / (w eps0)) curl(H_z z), the radial Poynting flux is
/// S_r = Im(conj(H) dH/dr) / (2 w eps0).
inline ScatteringResult compute_psi(const FieldSolution& sol, double integration_radius) {
  const double h = sol.cell_size;
  const double limit = sol.half_width() - 5.0 * h;
  if (!(integration_radius > sol.spec.r_shell && integration_radius < limit))
    throw ConfigError("compute_psi: integration radius must lie between r_shell and the PML");

  const int n = sol.n;
  const auto& H = sol.hz_scattered;
  auto at = [&](int r, int c) { return H[sol.index(r, c)]; };
  // Continuous cell coordinate of a physical position.
  auto cell_coord = [&](double u) { return u / h + 0.5 * n - 0.5; };

  // Fourth-order centred gradients, then cubic Lagrange interpolation on the
  // 4x4 stencil around the sample point.
  auto ddx = [&](int r, int c) {
    return (-at(r, c + 2) + 8.0 * at(r, c + 1) - 8.0 * at(r, c - 1) + at(r, c - 2)) / (12.0 * h);
  };
  auto ddy = [&](int r, int c) {
    return (-at(r + 2, c) + 8.0 * at(r + 1, c) - 8.0 * at(r - 1, c) + at(r - 2, c)) / (12.0 * h);
  };
  auto cubic_weights = [](double t, double w[4]) {
    w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
    w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
    w[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
  };

  struct Sample {
    cplx value, dx, dy;
  };
  auto sample = [&](double x, double y) {
    const double fc = cell_coord(x);
    const double fr = cell_coord(y);
    const int c0 = static_cast<int>(std::floor(fc));
    const int r0 = static_cast<int>(std::floor(fr));
    double wx[4], wy[4];
    cubic_weights(fc - c0, wx);
    cubic_weights(fr - r0, wy);
    Sample s{};
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        const int r = r0 - 1 + a;
        const int c = c0 - 1 + b;
        const double w = wy[a] * wx[b];
        s.value += w * at(r, c);
        s.dx += w * ddx(r, c);
        s.dy += w * ddy(r, c);
      }
    }
    return s;
  };

  const double circumference = 2.0 * std::numbers::pi * integration_radius;
  const int samples = std::max(720, static_cast<int>(std::ceil(8.0 * circumference / h)));
  const double dphi = 2.0 * std::numbers::pi / samples;
  double flux = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double phi = (k + 0.5) * dphi;
    const double cs = std::cos(phi);
    const double sn = std::sin(phi);
    const Sample s = sample(integration_radius * cs, integration_radius * sn);
    const cplx dr = s.dx * cs + s.dy * sn;
    flux += std::imag(std::conj(s.value) * dr);
  }
  // Lengths are in micrometres: k0 and d/dr carry the same 1e6 factor, and
  // the arc length carries 1e-6.
  const double psi = 1e-6 * phys::eta0 / (2.0 * sol.k0) * flux * integration_radius * dphi;

  ScatteringResult result;
  result.psi = std::max(0.0, psi);
  result.converged = std::isfinite(psi);
  result.grid_resolution = sol.grid_resolution();
  return result;
}

/// Exact scattered power per unit length of the bare PEC cylinder
/// (Neumann condition on H_z):
///   a_n = -J'_n(k R) / H1'_n(k R),  P = (E0^2 / (2 eta0)) (4 / k) sum_n |a_n|^2.
inline double analytic_pec_reference(const DomainSpec& spec, const SourceSpec& src, int n_terms) {
  const double x = spec.k0() * spec.r_object;
  if (n_terms < static_cast<int>(std::ceil(x)) + 10)
    throw ConfigError("analytic_pec_reference: n_terms must be >= ceil(k0 R1) + 10");

  auto jp = [&](int m) { return m == 0 ? -std::cyl_bessel_j(1.0, x)
                                       : std::cyl_bessel_j(m - 1.0, x) - m / x * std::cyl_bessel_j(double(m), x); };
  auto yp = [&](int m) { return m == 0 ? -std::cyl_neumann(1.0, x)
                                       : std::cyl_neumann(m - 1.0, x) - m / x * std::cyl_neumann(double(m), x); };
  double sum = 0.0;
  // a_{-m} = a_m, so accumulate from the highest order down for accuracy.
  for (int m = n_terms; m >= 0; --m) {
    const double j = jp(m);
    const double y = yp(m);
    const double mag2 = (j * j) / (j * j + y * y);
    sum += (m == 0 ? 1.0 : 2.0) * mag2;
  }
  const double k_si = spec.k0() * 1e6;
  return src.amplitude * src.amplitude / (2.0 * phys::eta0) * (4.0 / k_si) * sum;
}

inline int default_series_terms(const DomainSpec& spec) {
  return static_cast<int>(std::ceil(spec.k0() * spec.r_object)) + 30;
}

/// Default flux radius: 10 um when the domain allows it, otherwise midway
/// between the shell and the PML.
inline double default_integration_radius(const DomainSpec& spec) {
  if (spec.r_domain > 11.0) return 10.0;
  return 0.5 * (spec.r_shell + spec.r_domain);
}

/// Memoised no-cloak scattering, keyed by (domain, source, resolution).
class BaselineCache {
 public:
  ScatteringResult get(const DomainSpec& spec, const SourceSpec& src, double grid_resolution,
                       const SolverOptions& opts = {}) {
    const Key key{spec.r_object, spec.r_shell, spec.r_domain, spec.wavelength, spec.eps_shell,
                  spec.eps_background, spec.image_size, src.amplitude, grid_resolution};
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const FieldSolution sol = solve_scattered(bare_object_map(spec, grid_resolution), src, opts);
    const ScatteringResult result = compute_psi(sol, default_integration_radius(spec));
    std::lock_guard lock(mutex_);
    return cache_.emplace(key, result).first->second;
  }

  static BaselineCache& global() {
    static BaselineCache instance;
    return instance;
  }

 private:
  using Key = std::tuple<double, double, double, double, double, double, int, double, double>;
  std::mutex mutex_;
  std::map<Key, ScatteringResult> cache_;
};

inline ScatteringResult baseline_psi(const DomainSpec& spec, const SourceSpec& src, double grid_resolution) {
  return BaselineCache::global().get(spec, src, grid_resolution);
}

/// Solve + flux for one quadrant design.
inline ScatteringResult simulate_design(const QuadrantImage& q, const DomainSpec& spec, const SourceSpec& src,
                                        double grid_resolution, const SolverOptions& opts = {}) {
  const auto sol = solve_scattered(rasterize(mirror_expand(q), spec, grid_resolution), src, opts);
  return compute_psi(sol, default_integration_radius(spec));
}

}  // namespace cloak
