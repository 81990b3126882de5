#include "recool/bloch.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "recool/numeric.hpp"

namespace recool {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Exact solution of the Lindblad part over dt.
void relax(double& gg, double& ee, double& re, double& im, double gamma, double dt) {
  const double pe = std::exp(-gamma * dt);
  const double pc = std::exp(-0.5 * gamma * dt);
  gg += ee * (1.0 - pe);
  ee *= pe;
  re *= pc;
  im *= pc;
}

// Coherent part, H/ħ = −Δ|e⟩⟨e| + (Ω_R/2)(|e⟩⟨g| + |g⟩⟨e|).
struct Coherent {
  double dgg, dee, dre, dim;
};

inline Coherent coherent(double gg, double ee, double re, double im, double rabi, double detuning) {
  const double pump = rabi * im;
  return {-pump, pump, detuning * im, -0.5 * rabi * (ee - gg) - detuning * re};
}

// Joint state: populations, coherence, secular positions and velocities.
using Joint = std::array<double, 10>;

struct Dynamics {
  Drive drive;
  std::array<double, 3> k{};      // wave vector components, rad/m
  std::array<double, 3> omega2{};  // ω_i²
  std::array<double, 3> c{};      // micromotion coefficients
  std::array<double, 3> force{};  // ħ k_i Γ / m
  double rf = 0.0;
  double rf_phase = 0.0;

  double doppler(const Joint& y, double t) const {
    double cs = 0.0, sn = 0.0;
    if (rf > 0.0) {
      cs = std::cos(rf * t + rf_phase);
      sn = std::sin(rf * t + rf_phase);
    }
    double kv = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double x = y[4 + i], v = y[7 + i];
      kv += k[i] * (v * (1.0 + c[i] * cs) - x * c[i] * rf * sn);
    }
    return kv;
  }

  Joint derivative(const Joint& y, double t) const {
    const double det = drive.detuning - doppler(y, t);
    const auto q = coherent(y[0], y[1], y[2], y[3], drive.rabi, det);
    Joint d{q.dgg, q.dee, q.dre, q.dim};
    for (int i = 0; i < 3; ++i) {
      d[4 + i] = y[7 + i];
      d[7 + i] = -omega2[i] * y[4 + i] + force[i] * y[1];
    }
    return d;
  }
};

Dynamics make_dynamics(const PhysicalParams& p, double rf_phase) {
  Dynamics dyn;
  dyn.drive = Drive::from(p);
  dyn.c = micromotion_coefficients(p);
  dyn.rf = p.rf_freq_rad_s;
  dyn.rf_phase = rf_phase;
  const double k = p.wavenumber();
  for (int i = 0; i < 3; ++i) {
    dyn.k[i] = k * p.k_projection[i];
    dyn.omega2[i] = p.secular_freqs_rad_s[i] * p.secular_freqs_rad_s[i];
    dyn.force[i] = constants::hbar * dyn.k[i] * p.gamma_rad_s / p.mass_kg;
  }
  return dyn;
}

void rk4(const Dynamics& dyn, Joint& y, double t, double dt) {
  const auto add = [](const Joint& a, const Joint& b, double h) {
    Joint r;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = a[i] + h * b[i];
    return r;
  };
  const Joint k1 = dyn.derivative(y, t);
  const Joint k2 = dyn.derivative(add(y, k1, 0.5 * dt), t + 0.5 * dt);
  const Joint k3 = dyn.derivative(add(y, k2, 0.5 * dt), t + 0.5 * dt);
  const Joint k4 = dyn.derivative(add(y, k3, dt), t + dt);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

std::array<double, 3> energies_of(const Joint& y, const PhysicalParams& p) {
  std::array<double, 3> e{};
  for (int i = 0; i < 3; ++i) {
    const double w = p.secular_freqs_rad_s[i];
    e[i] = 0.5 * p.mass_kg * (y[7 + i] * y[7 + i] + w * w * y[4 + i] * y[4 + i]);
  }
  return e;
}

std::string describe(const Joint& y, double t) {
  std::ostringstream s;
  s << "t=" << t << " rho_gg=" << y[0] << " rho_ee=" << y[1] << " rho_ge=(" << y[2] << "," << y[3] << ") xbar=("
    << y[4] << "," << y[5] << "," << y[6] << ") vbar=(" << y[7] << "," << y[8] << "," << y[9] << ")";
  return s.str();
}

}  // namespace

void TwoLevelState::check(double tol) const {
  const double coh = std::norm(rho_ge);
  const bool ok = std::isfinite(rho_gg) && std::isfinite(rho_ee) && std::isfinite(coh) &&
                  std::abs(trace() - 1.0) <= tol && rho_ee >= -tol && rho_ee <= 1.0 + tol && rho_gg >= -tol &&
                  coh <= rho_gg * rho_ee + tol;
  if (!ok) {
    std::ostringstream s;
    s << "density matrix left the physical set: rho_gg=" << rho_gg << " rho_ee=" << rho_ee << " |rho_ge|^2=" << coh;
    throw NumericalError(s.str());
  }
}

Drive Drive::from(const PhysicalParams& p) {
  p.validate();
  return {p.gamma_rad_s, p.detuning_rad_s, p.rabi_frequency()};
}

double steady_excitation(const Drive& d, double detuning_eff) {
  const double w2 = d.rabi * d.rabi;
  return 0.25 * w2 / (detuning_eff * detuning_eff + 0.5 * w2 + 0.25 * d.gamma * d.gamma);
}

TwoLevelState step_master(const TwoLevelState& state, double detuning_eff, double dt, const Drive& d) {
  require(dt > 0.0 && std::isfinite(dt), "time step must be positive");
  double gg = state.rho_gg, ee = state.rho_ee, re = state.rho_ge.real(), im = state.rho_ge.imag();
  relax(gg, ee, re, im, d.gamma, 0.5 * dt);
  const auto k1 = coherent(gg, ee, re, im, d.rabi, detuning_eff);
  const double h = 0.5 * dt;
  const auto k2 =
      coherent(gg + h * k1.dgg, ee + h * k1.dee, re + h * k1.dre, im + h * k1.dim, d.rabi, detuning_eff);
  const auto k3 =
      coherent(gg + h * k2.dgg, ee + h * k2.dee, re + h * k2.dre, im + h * k2.dim, d.rabi, detuning_eff);
  const auto k4 =
      coherent(gg + dt * k3.dgg, ee + dt * k3.dee, re + dt * k3.dre, im + dt * k3.dim, d.rabi, detuning_eff);
  const double w = dt / 6.0;
  gg += w * (k1.dgg + 2.0 * k2.dgg + 2.0 * k3.dgg + k4.dgg);
  ee += w * (k1.dee + 2.0 * k2.dee + 2.0 * k3.dee + k4.dee);
  re += w * (k1.dre + 2.0 * k2.dre + 2.0 * k3.dre + k4.dre);
  im += w * (k1.dim + 2.0 * k2.dim + 2.0 * k3.dim + k4.dim);
  relax(gg, ee, re, im, d.gamma, 0.5 * dt);
  TwoLevelState out{gg, ee, {re, im}};
  out.check();
  return out;
}

std::array<double, 3> micromotion_coefficients(const PhysicalParams& p) {
  if (p.rf_freq_rad_s <= 0.0) return {0.0, 0.0, 0.0};
  const double f = std::numbers::sqrt2 / p.rf_freq_rad_s;
  return {f * p.secular_freqs_rad_s[0], -f * p.secular_freqs_rad_s[1], 0.0};
}

std::array<double, 3> full_position(const MotionState& m, const PhysicalParams& p, double t) {
  const auto c = micromotion_coefficients(p);
  const double cs = p.rf_freq_rad_s > 0.0 ? std::cos(p.rf_freq_rad_s * t + m.rf_phase) : 0.0;
  std::array<double, 3> x{};
  for (int i = 0; i < 3; ++i) x[i] = m.xbar[i] * (1.0 + c[i] * cs);
  return x;
}

std::array<double, 3> full_velocity(const MotionState& m, const PhysicalParams& p, double t) {
  const auto c = micromotion_coefficients(p);
  const double ph = p.rf_freq_rad_s * t + m.rf_phase;
  const double cs = p.rf_freq_rad_s > 0.0 ? std::cos(ph) : 0.0;
  const double sn = p.rf_freq_rad_s > 0.0 ? std::sin(ph) : 0.0;
  std::array<double, 3> v{};
  for (int i = 0; i < 3; ++i) v[i] = m.vbar[i] * (1.0 + c[i] * cs) - m.xbar[i] * c[i] * p.rf_freq_rad_s * sn;
  return v;
}

std::array<double, 3> mode_energies(const MotionState& m, const PhysicalParams& p) {
  Joint y{};
  for (int i = 0; i < 3; ++i) {
    y[4 + i] = m.xbar[i];
    y[7 + i] = m.vbar[i];
  }
  return energies_of(y, p);
}

void set_mode(MotionState& m, const PhysicalParams& p, int mode, double joule, double phase) {
  require(mode >= 0 && mode < 3, "mode index must be 0, 1 or 2");
  require(joule >= 0.0 && std::isfinite(joule), "mode energy must be >= 0");
  const double v = std::sqrt(2.0 * joule / p.mass_kg);
  const double w = p.secular_freqs_rad_s[mode];
  if (w > 0.0) {
    m.xbar[mode] = v / w * std::cos(phase);
    m.vbar[mode] = -v * std::sin(phase);
  } else {
    m.xbar[mode] = 0.0;
    m.vbar[mode] = v * std::cos(phase);
  }
}

double default_time_step(const PhysicalParams& p, double doppler_max) {
  double t = 1.0 / p.gamma_rad_s;
  if (p.rf_freq_rad_s > 0.0) t = std::min(t, two_pi / p.rf_freq_rad_s);
  const double det = std::abs(p.detuning_rad_s) + doppler_max;
  if (det > 0.0) t = std::min(t, two_pi / det);
  return t / 40.0;
}

double max_doppler_shift(const MotionState& m, const PhysicalParams& p) {
  const auto c = micromotion_coefficients(p);
  const double k = p.wavenumber();
  double shift = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double w = p.secular_freqs_rad_s[i];
    const double amp = w > 0.0 ? std::hypot(m.xbar[i], m.vbar[i] / w) : 0.0;
    const double v = w > 0.0 ? amp * w : std::abs(m.vbar[i]);
    const double micro = std::abs(c[i]) * (v + amp * p.rf_freq_rad_s);
    shift += k * std::abs(p.k_projection[i]) * (v + micro);
  }
  return shift;
}

TrajectoryResult simulate_trajectory(const MotionState& initial, const PhysicalParams& p, const SimulationSpec& spec,
                                     const TwoLevelState& internal) {
  p.validate();
  require(spec.duration_s > 0.0 && spec.bin_width_s > 0.0, "duration and bin width must be positive");
  require(spec.dt_s >= 0.0, "time step must be >= 0");
  const auto bins = static_cast<std::size_t>(std::llround(spec.duration_s / spec.bin_width_s));
  require(bins >= 1, "duration must cover at least one bin");
  const double dt_max = spec.dt_s > 0.0 ? spec.dt_s : default_time_step(p, max_doppler_shift(initial, p));
  const auto steps = static_cast<std::size_t>(std::ceil(spec.bin_width_s / dt_max - 1e-9));
  const double dt = spec.bin_width_s / static_cast<double>(steps);

  const Dynamics dyn = make_dynamics(p, initial.rf_phase);
  Joint y{internal.rho_gg, internal.rho_ee, internal.rho_ge.real(), internal.rho_ge.imag()};
  for (int i = 0; i < 3; ++i) {
    y[4 + i] = initial.xbar[i];
    y[7 + i] = initial.vbar[i];
  }
  internal.check();

  TrajectoryResult out;
  out.dt_s = dt;
  out.rate_hz.reserve(bins);
  out.energy_J.reserve(bins);
  const double gamma = p.gamma_rad_s;
  Joint last = y;
  double t_last = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    double area = 0.0;
    for (std::size_t n = 0; n < steps; ++n) {
      const double t = spec.bin_width_s * static_cast<double>(b) + dt * static_cast<double>(n);
      const double before = y[1];
      relax(y[0], y[1], y[2], y[3], gamma, 0.5 * dt);
      rk4(dyn, y, t, dt);
      relax(y[0], y[1], y[2], y[3], gamma, 0.5 * dt);
      area += 0.5 * (before + y[1]);
    }
    const double t_end = spec.bin_width_s * static_cast<double>(b + 1);
    const auto e = energies_of(y, p);
    const bool finite = std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); }) &&
                        std::all_of(e.begin(), e.end(), [](double v) { return std::isfinite(v); });
    if (!finite) throw NumericalError("trajectory diverged; last valid state " + describe(last, t_last));
    TwoLevelState{y[0], y[1], {y[2], y[3]}}.check();
    out.rate_hz.push_back(gamma * area / static_cast<double>(steps));
    out.energy_J.push_back(e);
    last = y;
    t_last = t_end;
  }
  out.internal = {y[0], y[1], {y[2], y[3]}};
  for (int i = 0; i < 3; ++i) {
    out.motion.xbar[i] = y[4 + i];
    out.motion.vbar[i] = y[7 + i];
  }
  out.motion.rf_phase = initial.rf_phase;
  return out;
}

MotionState sample_initial(const EnsembleSpec& spec, const PhysicalParams& p, std::size_t index) {
  const double e0 = scale_parameters(p, TimeScale::optional).e0_joule;
  std::mt19937_64 gen(derive_seed(spec.seed, index));
  std::uniform_real_distribution<double> phase(0.0, two_pi);
  MotionState m;
  m.rf_phase = phase(gen);
  const double ez = sample_energies(spec.z, 1, gen())[0];
  set_mode(m, p, 2, ez * e0, phase(gen));
  if (spec.transverse_exponent) {
    const double wz = p.secular_freqs_rad_s[2];
    require(wz > 0.0, "transverse heating weights need a nonzero axial frequency");
    for (int i = 0; i < 2; ++i) {
      const double w = p.secular_freqs_rad_s[i];
      require(w > 0.0, "transverse heating weights need nonzero transverse frequencies");
      const double mean = mean_energy(spec.z) * std::pow(w / wz, -*spec.transverse_exponent);
      const double e = sample_energies(maxwell_boltzmann(mean), 1, gen())[0];
      set_mode(m, p, i, e * e0, phase(gen));
    }
  }
  return m;
}

EnsembleResult ensemble_fluorescence(const EnsembleSpec& spec, const PhysicalParams& p) {
  require(spec.n_traj >= 1, "n_traj must be >= 1");
  const std::size_t n = spec.n_traj;
  std::vector<MotionState> starts(n);
  double dt = spec.sim.dt_s;
  double doppler = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    starts[i] = sample_initial(spec, p, i);
    doppler = std::max(doppler, max_doppler_shift(starts[i], p));
  }
  if (dt <= 0.0) dt = default_time_step(p, doppler);
  SimulationSpec sim = spec.sim;
  sim.dt_s = dt;

  std::vector<TrajectoryResult> runs(n);
  parallel_for(n, spec.workers, [&](std::size_t i) { runs[i] = simulate_trajectory(starts[i], p, sim); });

  EnsembleResult out;
  out.dt_s = runs[0].dt_s;
  out.bin_width_s = sim.bin_width_s;
  out.n_traj = n;
  const std::size_t bins = runs[0].rate_hz.size();
  std::vector<double> col(n), dev(n);
  for (std::size_t b = 0; b < bins; ++b) {
    out.t_s.push_back(sim.bin_width_s * static_cast<double>(b));
    for (std::size_t i = 0; i < n; ++i) col[i] = runs[i].rate_hz[b];
    const double mean = pairwise_sum(col) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) dev[i] = (col[i] - mean) * (col[i] - mean);
    out.mean_rate_hz.push_back(mean);
    out.stderr_hz.push_back(n > 1 ? std::sqrt(pairwise_sum(dev) / static_cast<double>(n - 1) / static_cast<double>(n))
                                  : 0.0);
    std::array<double, 3> e{};
    for (int m = 0; m < 3; ++m) {
      for (std::size_t i = 0; i < n; ++i) col[i] = runs[i].energy_J[b][m];
      e[m] = pairwise_sum(col) / static_cast<double>(n);
    }
    out.mean_energy_J.push_back(e);
  }
  return out;
}

void write_ensemble_csv(std::ostream& out, const EnsembleResult& result) {
  out << "t_s,mean_rate_hz,stderr_hz,n_traj\n";
  for (std::size_t b = 0; b < result.t_s.size(); ++b)
    out << format_double(result.t_s[b]) << ',' << format_double(result.mean_rate_hz[b]) << ','
        << format_double(result.stderr_hz[b]) << ',' << result.n_traj << '\n';
}

}  // namespace recool
