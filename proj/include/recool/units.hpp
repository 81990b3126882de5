#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>

namespace recool {

namespace constants {
inline constexpr double hbar = 1.054571817e-34;           // J s
inline constexpr double boltzmann = 1.380649e-23;         // J / K
inline constexpr double atomic_mass = 1.66053906660e-27;  // kg
}  // namespace constants

// Laboratory description of the atom, cooling laser and trap. Angular
// frequencies throughout; the detuning is negative for red detuning.
struct PhysicalParams {
  double mass_kg = 0.0;
  double wavelength_m = 0.0;
  double gamma_rad_s = 0.0;
  double detuning_rad_s = 0.0;
  double saturation = 0.0;
  std::array<double, 3> k_projection{0.0, 0.0, 1.0};  // k_i / |k|
  std::array<double, 3> secular_freqs_rad_s{0.0, 0.0, 0.0};
  double rf_freq_rad_s = 0.0;  // 0 for neutral atoms

  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;

  double wavenumber() const;  // |k| = 2π/λ
  double rabi_frequency() const;  // from s = 2 Ω_R² / Γ²

  // 25Mg+ on the 279.6 nm line: Γ = 2π·41.4 MHz, Δ = −2π·20 MHz, s = 0.9,
  // k_z/k = 0.71.
  static PhysicalParams magnesium25();
};

// Dimensionless model parameters. Energies in units of
// E0 = (ħΓ/2)√(1+s), times in units of t0 = (Γ (s/2)/(1+s))⁻¹.
struct ScaledParams {
  double delta = 0.0;
  std::array<double, 3> recoil{0.0, 0.0, 0.0};
  double e0_joule = 0.0;
  double t0_s = 0.0;  // +inf when the saturation is zero
  double omega_tilde = 0.0;
  std::array<double, 3> secular_tilde{0.0, 0.0, 0.0};  // ħω_i / E0

  // The 1-D model acts on the z mode.
  double recoil_z() const { return recoil[2]; }
  bool has_time_scale() const;
};

enum class TimeScale { required, optional };

// `TimeScale::optional` admits s = 0, which leaves t0 infinite; use it only
// for work that never touches laboratory time.
ScaledParams scale_parameters(const PhysicalParams& p, TimeScale time = TimeScale::required);

// Inverse of scale_parameters given the quantities the scaled form does not
// carry. Projections come back nonnegative (r_i only fixes |k_i|).
PhysicalParams unscale_parameters(const ScaledParams& sp, double mass_kg, double wavelength_m,
                                  double saturation, double rf_freq_rad_s = 0.0);

double energy_to_kelvin(double eps, const ScaledParams& sp);
double kelvin_to_energy(double kelvin, const ScaledParams& sp);
double tau_to_seconds(double tau, const ScaledParams& sp);
double seconds_to_tau(double seconds, const ScaledParams& sp);

// Plain-text key=value parameter file. Frequencies are ordinary MHz and are
// converted to angular. Recognised keys: mass_u, wavelength_nm, gamma_mhz,
// detuning_mhz, saturation, kproj_{x,y,z}, omega_{x,y,z}_mhz, rf_mhz.
PhysicalParams parse_params(std::string_view text);
PhysicalParams load_params(const std::filesystem::path& path);
std::string format_params(const PhysicalParams& p);

}  // namespace recool
