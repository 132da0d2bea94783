#pragma once

#include <cmath>
#include <numbers>

#include "cloak/errors.hpp"

namespace cloak {

/// Physical constants in SI units.
namespace phys {
inline constexpr double c0 = 299792458.0;
inline constexpr double mu0 = 1.25663706212e-6;
inline constexpr double eps0 = 1.0 / (mu0 * c0 * c0);
inline constexpr double eta0 = mu0 * c0;  // free-space impedance, ~376.73 ohm
}  // namespace phys

/// Geometry of the cloaking problem. Lengths are in micrometres.
///
/// The PEC object occupies r < r_object, the designable shell lives in
/// r_object < r < r_shell, and the simulated region is the disk r < r_domain.
struct DomainSpec {
  double r_object = 1.0;
  double r_shell = 3.0;
  double r_domain = 12.0;
  double wavelength = 1.2;
  double eps_shell = 2.0;
  double eps_background = 1.0;
  int image_size = 64;

  double k0() const { return 2.0 * std::numbers::pi / wavelength; }

  /// Side length of one quadrant-image pixel.
  double pixel_size() const { return r_shell / image_size; }

  void validate() const {
    if (!(r_object > 0.0 && r_object < r_shell && r_shell < r_domain))
      throw ConfigError("domain: require 0 < r_object < r_shell < r_domain");
    if (!(wavelength > 0.0)) throw ConfigError("domain: wavelength must be positive");
    if (!(eps_shell >= 1.0 && eps_background >= 1.0))
      throw ConfigError("domain: permittivities must be >= 1");
    if (image_size < 8 || image_size % 2 != 0)
      throw ConfigError("domain: image_size must be even and >= 8");
  }

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

}  // namespace cloak
