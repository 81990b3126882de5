#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "recool/bloch.hpp"
#include "recool/numeric.hpp"

using namespace recool;

namespace {

constexpr double pi_ = std::numbers::pi;

// Textbook two-level steady state written in the saturation parameter.
double rho_ee_oracle(double s, double detuning, double gamma) {
  const double x = 2.0 * detuning / gamma;
  return 0.5 * s / (1.0 + s + x * x);
}

PhysicalParams weak_binding() {
  auto p = PhysicalParams::magnesium25();
  p.saturation = 0.05;
  p.detuning_rad_s = -0.5 * p.gamma_rad_s;
  p.secular_freqs_rad_s = {0.0, 0.0, p.gamma_rad_s / 50.0};
  return p;
}

TwoLevelState run_at(double detuning, double s, double gamma, double dt, double duration) {
  const Drive d{gamma, detuning, gamma * std::sqrt(s / 2.0)};
  TwoLevelState st;
  const auto n = static_cast<long>(std::llround(duration / dt));
  for (long i = 0; i < n; ++i) st = step_master(st, detuning, dt, d);
  return st;
}

}  // namespace

TEST_CASE("atom at rest settles to the two-level steady state") {
  const double gamma = 1.0;
  for (double s : {0.05, 0.9, 5.0}) {
    for (double det : {-2.0, -0.5, 0.0, 0.7}) {
      const double want = rho_ee_oracle(s, det, gamma);
      const double coarse = run_at(det, s, gamma, 0.025, 60.0).rho_ee - want;
      const double fine = run_at(det, s, gamma, 0.0125, 60.0).rho_ee - want;
      CHECK(std::abs(coarse) < 5e-5 * want);
      // Second order in the step.
      if (std::abs(coarse) > 1e-12) CHECK(std::abs(fine) < 0.3 * std::abs(coarse));
    }
  }
  const Drive d{2.0, -1.5, 2.0 * std::sqrt(0.9 / 2.0)};
  CHECK(steady_excitation(d, -1.5) == doctest::Approx(rho_ee_oracle(0.9, -1.5, 2.0)).epsilon(1e-14));
}

TEST_CASE("closed system performs Rabi oscillations") {
  const double rabi = 3.0;
  const Drive d{0.0, 0.0, rabi};
  const int steps = 2000;
  const double dt = 2.0 * pi_ / rabi / steps;
  TwoLevelState st;
  for (int i = 0; i < steps / 2; ++i) st = step_master(st, 0.0, dt, d);
  CHECK(st.rho_ee == doctest::Approx(1.0).epsilon(1e-6));
  for (int i = 0; i < steps / 2; ++i) st = step_master(st, 0.0, dt, d);
  CHECK(std::abs(st.rho_gg - 1.0) < 1e-6);
  CHECK(std::abs(st.rho_ge) < 1e-6);
  CHECK(std::abs(st.trace() - 1.0) < 1e-12);
}

TEST_CASE("trace drift stays below 1e-9 over a million steps") {
  const Drive d{1.0, -0.8, std::sqrt(0.45)};
  TwoLevelState st;
  for (int i = 0; i < 1'000'000; ++i) st = step_master(st, -0.8 + 0.3 * std::sin(1e-3 * i), 0.025, d);
  CHECK(std::abs(st.trace() - 1.0) < 1e-9);
  CHECK(std::norm(st.rho_ge) <= st.rho_gg * st.rho_ee + 1e-12);
}

TEST_CASE("unphysical states are rejected") {
  const Drive d{1.0, 0.0, 1.0};
  CHECK_THROWS_AS(step_master(TwoLevelState{0.2, 0.8, {0.6, 0.0}}, 0.0, 0.01, d), NumericalError);
  CHECK_THROWS_AS(step_master(TwoLevelState{0.5, 0.6, {0.0, 0.0}}, 0.0, 0.01, d), NumericalError);
  CHECK_THROWS_AS(step_master(TwoLevelState{}, 0.0, 0.0, d), std::invalid_argument);
}

TEST_CASE("uniform velocity shifts the steady state by the Doppler shift") {
  auto p = PhysicalParams::magnesium25();
  p.mass_kg = 1e6;  // the light force cannot change the velocity
  p.secular_freqs_rad_s = {0.0, 0.0, 0.0};
  const double v = 5.0;
  MotionState m;
  m.vbar[2] = v;
  SimulationSpec spec;
  spec.bin_width_s = 100.0 / p.gamma_rad_s;
  spec.duration_s = 3.0 * spec.bin_width_s;
  const auto run = simulate_trajectory(m, p, spec);
  const double shifted = p.detuning_rad_s - p.wavenumber() * p.k_projection[2] * v;
  CHECK(run.motion.vbar[2] == doctest::Approx(v).epsilon(1e-9));
  const double want = p.gamma_rad_s * rho_ee_oracle(p.saturation, shifted, p.gamma_rad_s);
  CHECK(run.rate_hz.back() == doctest::Approx(want).epsilon(1e-4));
  const double at_rest = p.gamma_rad_s * rho_ee_oracle(p.saturation, p.detuning_rad_s, p.gamma_rad_s);
  CHECK(std::abs(run.rate_hz.back() - at_rest) > 0.05 * at_rest);
}

TEST_CASE("motion without light conserves energy") {
  auto p = weak_binding();
  p.saturation = 0.0;
  p.secular_freqs_rad_s = {1.3e6, 1.1e6, 1.0e6};
  p.rf_freq_rad_s = 2e7;
  p.k_projection = {0.5, 0.5, 0.7};
  MotionState m;
  for (int i = 0; i < 3; ++i) set_mode(m, p, i, 1e-24 * (i + 1), 0.4 * i);
  const double e0 = mode_energies(m, p)[0] + mode_energies(m, p)[1] + mode_energies(m, p)[2];
  SimulationSpec spec;
  const double period = 2.0 * pi_ / 1.0e6;
  spec.duration_s = 1e4 * period;
  spec.bin_width_s = spec.duration_s / 4.0;
  spec.dt_s = 0.01 / 1.3e6;
  const auto run = simulate_trajectory(m, p, spec);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(run.energy_J.back()[i] / mode_energies(m, p)[i] - 1.0) < 1e-6);
  const auto& e = run.energy_J.back();
  CHECK(std::abs((e[0] + e[1] + e[2]) / e0 - 1.0) < 1e-6);
  CHECK(run.rate_hz.back() == 0.0);
}

TEST_CASE("micromotion follows the quadrupole geometry") {
  auto p = weak_binding();
  p.secular_freqs_rad_s = {2e6, 3e6, 1e6};
  p.rf_freq_rad_s = 4e7;
  const auto c = micromotion_coefficients(p);
  CHECK(c[0] == doctest::Approx(std::sqrt(2.0) * 2e6 / 4e7));
  CHECK(c[1] == doctest::Approx(-std::sqrt(2.0) * 3e6 / 4e7));
  CHECK(c[2] == 0.0);
  MotionState m;
  m.xbar = {1e-6, 1e-6, 1e-6};
  const auto x = full_position(m, p, 0.0);
  CHECK(x[0] - 1e-6 == doctest::Approx(c[0] * 1e-6));
  CHECK(x[1] - 1e-6 == doctest::Approx(c[1] * 1e-6));
  CHECK(x[2] == 1e-6);
  // Velocity is the time derivative of the position.
  const double t = 3.7e-8, h = 1e-12;
  const auto v = full_velocity(m, p, t);
  const auto xp = full_position(m, p, t + h), xm = full_position(m, p, t - h);
  for (int i = 0; i < 3; ++i) CHECK(v[i] == doctest::Approx((xp[i] - xm[i]) / (2 * h)).epsilon(1e-5).scale(1e-3));
  p.rf_freq_rad_s = 0.0;
  CHECK(micromotion_coefficients(p)[0] == 0.0);
}

TEST_CASE("red detuning cools and blue detuning heats") {
  auto p = weak_binding();
  const auto sp = scale_parameters(p);
  MotionState m;
  set_mode(m, p, 2, 0.5 / sp.recoil_z() * sp.e0_joule, 0.3);
  const double e_start = mode_energies(m, p)[2];
  SimulationSpec spec;
  spec.duration_s = 2e-5;
  spec.bin_width_s = 1e-5;
  spec.dt_s = 0.05 / p.gamma_rad_s;
  const double red = simulate_trajectory(m, p, spec).energy_J.back()[2];
  p.detuning_rad_s = -p.detuning_rad_s;
  const double blue = simulate_trajectory(m, p, spec).energy_J.back()[2];
  CHECK(red < 0.9 * e_start);
  CHECK(blue > 1.1 * e_start);
}

TEST_CASE("halving the step leaves the final energy unchanged") {
  const auto p = weak_binding();
  const auto sp = scale_parameters(p);
  MotionState m;
  set_mode(m, p, 2, 2.0 / sp.recoil_z() * sp.e0_joule, 1.1);
  SimulationSpec spec;
  spec.duration_s = 5e-5;
  spec.bin_width_s = 1e-5;
  const auto a = simulate_trajectory(m, p, spec);
  spec.dt_s = 0.5 * a.dt_s;
  const auto b = simulate_trajectory(m, p, spec);
  CHECK(std::abs(b.energy_J.back()[2] / a.energy_J.back()[2] - 1.0) < 1e-3);
  CHECK(a.dt_s == doctest::Approx(default_time_step(p, max_doppler_shift(m, p))).epsilon(0.01));
}

TEST_CASE("single trajectory ensemble equals the direct run") {
  const auto p = weak_binding();
  EnsembleSpec es;
  es.z = maxwell_boltzmann(300.0);
  es.n_traj = 1;
  es.seed = 99;
  es.sim.duration_s = 4e-6;
  es.sim.bin_width_s = 1e-6;
  const auto ens = ensemble_fluorescence(es, p);
  SimulationSpec sim = es.sim;
  sim.dt_s = ens.dt_s;
  const auto run = simulate_trajectory(sample_initial(es, p, 0), p, sim);
  CHECK(ens.mean_rate_hz == run.rate_hz);
  CHECK(ens.stderr_hz == std::vector<double>(4, 0.0));
  CHECK(ens.n_traj == 1);

  std::ostringstream csv;
  write_ensemble_csv(csv, ens);
  CHECK(csv.str().rfind("t_s,mean_rate_hz,stderr_hz,n_traj\n0,", 0) == 0);
}

TEST_CASE("ensemble output does not depend on the worker count") {
  auto p = weak_binding();
  p.secular_freqs_rad_s = {p.gamma_rad_s / 20, p.gamma_rad_s / 25, p.gamma_rad_s / 50};
  p.rf_freq_rad_s = p.gamma_rad_s / 2;
  p.k_projection = {0.4, 0.4, 0.7};
  EnsembleSpec es;
  es.z = maxwell_boltzmann(200.0);
  es.transverse_exponent = 1.4;
  es.n_traj = 7;
  es.seed = 3;
  es.sim.duration_s = 2e-6;
  es.sim.bin_width_s = 5e-7;
  es.workers = 1;
  const auto a = ensemble_fluorescence(es, p);
  es.workers = 3;
  const auto b = ensemble_fluorescence(es, p);
  CHECK(a.mean_rate_hz == b.mean_rate_hz);
  CHECK(a.stderr_hz == b.stderr_hz);
  CHECK(a.dt_s == b.dt_s);
  CHECK(a.dt_s <= 2.0 * pi_ / p.rf_freq_rad_s / 40.0);
}

TEST_CASE("transverse starting energies follow the frequency weighting") {
  auto p = weak_binding();
  p.secular_freqs_rad_s = {4e6, 2e6, 1e6};
  const auto e0 = scale_parameters(p).e0_joule;
  EnsembleSpec es;
  es.z = maxwell_boltzmann(100.0);
  es.transverse_exponent = 1.0;
  std::array<double, 3> sum{};
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto e = mode_energies(sample_initial(es, p, static_cast<std::size_t>(i)), p);
    for (int k = 0; k < 3; ++k) sum[k] += e[k] / e0 / n;
  }
  // Thermal means, each within about five standard errors.
  CHECK(sum[2] == doctest::Approx(100.0).epsilon(0.08));
  CHECK(sum[0] == doctest::Approx(25.0).epsilon(0.08));
  CHECK(sum[1] == doctest::Approx(50.0).epsilon(0.08));
  es.transverse_exponent.reset();
  const auto cold = sample_initial(es, p, 0);
  CHECK(cold.xbar[0] == 0.0);
  CHECK(cold.vbar[1] == 0.0);
}

TEST_CASE("doubling the trajectory count halves the standard-error variance") {
  const auto p = weak_binding();
  EnsembleSpec es;
  es.z = maxwell_boltzmann(400.0);
  es.seed = 17;
  es.sim.duration_s = 2e-6;
  es.sim.bin_width_s = 5e-7;
  es.sim.dt_s = 0.05 / p.gamma_rad_s;
  es.n_traj = 60;
  const auto a = ensemble_fluorescence(es, p);
  es.n_traj = 120;
  const auto b = ensemble_fluorescence(es, p);
  for (std::size_t i = 0; i < a.stderr_hz.size(); ++i) {
    const double ratio = std::pow(a.stderr_hz[i] / b.stderr_hz[i], 2);
    CHECK(ratio > 1.3);
    CHECK(ratio < 3.0);
  }
}
