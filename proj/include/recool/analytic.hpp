#pragma once

#include <complex>
#include <optional>
#include <span>
#include <vector>

namespace recool {

// δ below which the motion-averaged scattering rate has an interior maximum.
inline constexpr double critical_detuning = -0.57735026918962576451;  // −1/√3

enum class Recoil { off, on };

// Scaled energy of one motional mode together with its maximal Doppler shift
// δ_M = 2√(ε r).
class ModeEnergy {
 public:
  ModeEnergy(double eps, double recoil);
  double eps() const { return eps_; }
  double dmax() const { return dmax_; }

 private:
  double eps_;
  double dmax_;
};

struct RatePair {
  double de_dtau = 0.0;
  double dn_dtau = 0.0;
};

// Principal square root, branch cut on the negative real axis.
std::complex<double> principal_sqrt(std::complex<double> w) noexcept;

// Z(a, b) = i b / √(b² − (a+i)²), the φ-average of 1/(sin φ − z) with
// z = (a+i)/b. Throws for b <= 0.
std::complex<double> z_function(double a, double b);

// Arcsine density of the instantaneous Doppler shift for harmonic motion
// with maximal shift `dmax`. Returns +inf on the edge |dd| = dmax.
double doppler_pdf(double dmax, double dd);

// Motion-averaged cooling and scattering rates. For ε r below ~1e-3 (1+δ²)
// a binomial series in δ_M²/(δ+i)² replaces the closed form, which cancels
// catastrophically there.
RatePair rates(double eps, double delta, double r);
double cooling_rate(double eps, double delta, double r);
double scattering_rate(double eps, double delta, double r);

// First-order (Lamb-Dicke) slope 4δεr/(1+δ²)².
double lamb_dicke_rate(double eps, double delta, double r);

// Isotropic-emission recoil heating, (4/3) r dN/dτ.
double recoil_rate(double dn_dtau, double r);

struct CriticalEnergies {
  double eps_c = 0.0;                // fastest cooling
  std::optional<double> eps_s;       // brightest fluorescence, only for δ < δ_C
};

CriticalEnergies critical_energies(double delta, double r);

// Peak-to-steady-state scattering ratio, defined for δ < δ_C.
double peak_scattering_ratio(double delta);

struct TrajectoryPoint {
  double tau = 0.0;
  double eps = 0.0;
  double dn_dtau = 0.0;
  double photons = 0.0;  // ∫ dN/dτ from 0 to tau
};

struct TrajectoryOptions {
  Recoil recoil = Recoil::off;
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
};

// Integrates dε/dτ (plus recoil when requested) and the photon count on
// `tau_grid`, which must start at 0 and increase strictly.
std::vector<TrajectoryPoint> integrate_trajectory(double eps0, std::span<const double> tau_grid, double delta,
                                                  double r, const TrajectoryOptions& options = {});

// Energy where cooling and recoil heating balance; 0 with recoil off.
double steady_state_energy(double delta, double r, Recoil recoil);

}  // namespace recool
