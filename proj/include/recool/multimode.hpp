#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "recool/analytic.hpp"

namespace recool {

enum class Mode { x = 0, y = 1, z = 2 };

// Three motional modes. x and y are the transverse (RF-confined) modes and
// carry micromotion when omega_tilde > 0; z does not.
struct ModeSet {
  std::array<double, 3> eps{0.0, 0.0, 0.0};
  std::array<double, 3> r{1.0, 1.0, 1.0};
  double omega_tilde = 0.0;  // scaled RF frequency ħΩ/E₀, 0 for no micromotion
  double stray_beta = 0.0;   // static excess micromotion β₀, in phase with the RF

  double dmax(Mode m) const;
  void validate() const;

  static ModeSet from_dmax(std::array<double, 3> dmax, std::array<double, 3> r = {1.0, 1.0, 1.0},
                           double omega_tilde = 0.0);
};

// Minimum trapezoid nodes per angle. A mode with δ_M > 0 gets at least
// 24 δ_M nodes so that the Lorentzian stays resolved; a cold mode gets one.
struct AngleGrid {
  std::size_t nodes = 128;
  std::size_t workers = 0;
};

std::size_t angle_nodes(double dmax, const AngleGrid& grid);

// Density of δ_D′ = δ_D^x + δ_D^y, the sum of two arcsine-distributed
// shifts. Diverges at ±|dmax_x − dmax_y|; +inf there and for the point mass
// when both are zero.
double combined_doppler_pdf(double dmax_x, double dmax_y, double dd);

// Σ_n J_n²(β) / (1 + (δ_eff − nΩ̃)²) for |n| ≤ bessel_truncation(β).
double micromotion_profile(double delta_eff, double beta, double omega_tilde);

// n_max = ⌈β + 8 β^{1/3} + 12⌉.
int bessel_truncation(double beta);

// J_n(β)² for n = 0..n_max by downward (Miller) recurrence.
std::vector<double> bessel_j_squared(double beta, int n_max);

// β = √2 |δ_M^x cos φ_x − δ_M^y cos φ_y| / Ω̃.
double modulation_index(double phi_x, double phi_y, double dmax_x, double dmax_y, double omega_tilde);

// Line profile seen by the z mode: the Lorentzian (or micromotion profile)
// averaged over the transverse Doppler shifts. Tabulated on a symmetric grid
// and interpolated inside it; evaluated by quadrature outside.
class LineProfile {
 public:
  LineProfile(double dmax_x, double dmax_y, double omega_tilde = 0.0, double stray_beta = 0.0,
              const AngleGrid& grid = {});

  double operator()(double delta_eff) const;
  // Direct quadrature, bypassing the table.
  double exact(double delta_eff) const;
  bool lorentzian() const { return lorentzian_; }
  double step() const { return step_; }
  std::span<const double> grid() const { return grid_; }
  std::span<const double> values() const { return values_; }

 private:
  double dmax_x_, dmax_y_, omega_tilde_, stray_beta_;
  AngleGrid angles_;
  bool lorentzian_;
  double step_ = 0.0;
  std::vector<double> grid_;
  std::vector<double> values_;
  std::function<double(double)> interp_;  // cubic B-spline through the table
};

LineProfile effective_profile(double dmax_x, double dmax_y, double omega_tilde = 0.0, double stray_beta = 0.0,
                              const AngleGrid& grid = {});

// Two-column delta_eff,response CSV of the table.
void write_profile(std::ostream& out, const LineProfile& profile);

struct ModeRates {
  std::array<double, 3> de_dtau{0.0, 0.0, 0.0};
  double dn_dtau = 0.0;
};

// Phase-averaged rates of all three modes, −⟨δ_D^i R⟩ and ⟨R⟩, with R the
// Lorentzian when omega_tilde = 0 and the micromotion profile otherwise.
ModeRates mode_rates(const ModeSet& modes, double delta, const AngleGrid& grid = {});

// Rate of one mode without micromotion; requires omega_tilde = 0.
double cooling_rate_3d(const ModeSet& modes, Mode target, double delta, const AngleGrid& grid = {});
// Rate of one mode including micromotion sidebands; requires omega_tilde > 0.
double cooling_rate_3d_micromotion(const ModeSet& modes, Mode target, double delta, const AngleGrid& grid = {});

struct RateCrossing {
  double eps_r = 0.0;  // target energy times its recoil parameter
  bool stable = false;  // heating below, cooling above
};

// Sign changes of the target's rate on a log grid of `points` values of
// ε r in [lo, hi], each refined by bisection. Other modes keep their energies.
std::vector<RateCrossing> rate_crossings(const ModeSet& modes, Mode target, double delta, double lo, double hi,
                                         std::size_t points, const AngleGrid& grid = {});

struct ModeHistoryPoint {
  double tau = 0.0;
  std::array<double, 3> eps{0.0, 0.0, 0.0};
};

struct EvolveOptions {
  AngleGrid grid{64, 0};
  double rel_tol = 1e-6;
  double abs_tol = 1e-9;
};

// Integrates the coupled energies on `tau_grid` (starting at 0, increasing).
std::vector<ModeHistoryPoint> evolve_modes(const ModeSet& modes, double delta, std::span<const double> tau_grid,
                                           const EvolveOptions& options = {});

}  // namespace recool
