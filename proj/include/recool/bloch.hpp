#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "recool/thermal.hpp"
#include "recool/units.hpp"

namespace recool {

// Density matrix of the two-level system in the frame rotating at the laser
// frequency.
struct TwoLevelState {
  double rho_gg = 1.0;
  double rho_ee = 0.0;
  std::complex<double> rho_ge{0.0, 0.0};

  double trace() const { return rho_gg + rho_ee; }
  // Throws NumericalError when the trace, populations or positivity bound
  // are off by more than tol.
  void check(double tol = 1e-9) const;
};

// Drive parameters in rad/s. rabi = Γ √(s/2).
struct Drive {
  double gamma = 0.0;
  double detuning = 0.0;
  double rabi = 0.0;

  static Drive from(const PhysicalParams& p);
};

// ρ_ee of the steady state at effective detuning Δ_eff.
double steady_excitation(const Drive& d, double detuning_eff);

// One step at fixed effective detuning: half-step exact decay, RK4 on the
// coherent part, half-step exact decay.
TwoLevelState step_master(const TwoLevelState& state, double detuning_eff, double dt, const Drive& d);

// Secular position and velocity. The full position adds the micromotion
// x = x̄ (1 + c_x cos(Ωt + φ)), y = ȳ (1 + c_y cos(Ωt + φ)) with
// c_x = √2 ω_x/Ω and c_y = −√2 ω_y/Ω.
struct MotionState {
  std::array<double, 3> xbar{0.0, 0.0, 0.0};
  std::array<double, 3> vbar{0.0, 0.0, 0.0};
  double rf_phase = 0.0;
};

std::array<double, 3> micromotion_coefficients(const PhysicalParams& p);
// Full position and velocity at time t.
std::array<double, 3> full_position(const MotionState& m, const PhysicalParams& p, double t);
std::array<double, 3> full_velocity(const MotionState& m, const PhysicalParams& p, double t);

// Secular energy of each mode in joules.
std::array<double, 3> mode_energies(const MotionState& m, const PhysicalParams& p);

// Secular amplitude and phase giving energy `joule` in mode i:
// x̄ = A cos φ, v̄ = −Aω sin φ. A mode with ω = 0 moves at √(2E/m).
void set_mode(MotionState& m, const PhysicalParams& p, int mode, double joule, double phase);

struct SimulationSpec {
  double duration_s = 0.0;
  double bin_width_s = 0.0;
  double dt_s = 0.0;  // 0 picks default_time_step
};

// min(2π/Ω, 2π/|Δ_eff,max|, 1/Γ)/40 with |Δ_eff,max| = |Δ| + doppler_max.
double default_time_step(const PhysicalParams& p, double doppler_max);
// Bound on |k·v| over the free motion from this state, in rad/s.
double max_doppler_shift(const MotionState& m, const PhysicalParams& p);

struct TrajectoryResult {
  double dt_s = 0.0;
  std::vector<double> rate_hz;                    // bin-averaged Γ ρ_ee
  std::vector<std::array<double, 3>> energy_J;    // secular energies at bin ends
  MotionState motion;
  TwoLevelState internal;
};

// Co-integrates the master equation with the secular motion under the trap
// and the average light force ħk Γ ρ_ee. Recoil is not included. The step is
// shortened so that an integer number of steps fills each bin.
TrajectoryResult simulate_trajectory(const MotionState& initial, const PhysicalParams& p, const SimulationSpec& spec,
                                     const TwoLevelState& internal = {});

struct EnsembleSpec {
  EnergyDistribution z = point_mass(0.0);  // in units of E₀
  // Transverse modes start thermal with mean ⟨ε_z⟩ (ω_i/ω_z)^(−exponent);
  // unset leaves them at rest.
  std::optional<double> transverse_exponent;
  std::size_t n_traj = 1;
  std::uint64_t seed = 0;
  SimulationSpec sim;
  std::size_t workers = 0;
};

struct EnsembleResult {
  double dt_s = 0.0;
  double bin_width_s = 0.0;
  std::size_t n_traj = 0;
  std::vector<double> t_s;  // bin starts
  std::vector<double> mean_rate_hz;
  std::vector<double> stderr_hz;
  std::vector<std::array<double, 3>> mean_energy_J;
};

// Initial state of trajectory `index`: energies from the distributions,
// uniform secular and RF phases, from a generator seeded by (seed, index).
MotionState sample_initial(const EnsembleSpec& spec, const PhysicalParams& p, std::size_t index);

// Mean over trajectories, reduced in trajectory order. All trajectories share
// one step, chosen from the fastest sampled start unless spec.sim.dt_s is set.
EnsembleResult ensemble_fluorescence(const EnsembleSpec& spec, const PhysicalParams& p);

// t_s,mean_rate_hz,stderr_hz,n_traj
void write_ensemble_csv(std::ostream& out, const EnsembleResult& result);

}  // namespace recool
