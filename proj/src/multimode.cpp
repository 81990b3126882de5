#include "recool/multimode.hpp"

#include <algorithm>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <boost/math/special_functions/ellint_rf.hpp>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <stdexcept>

#include "recool/numeric.hpp"
#include "recool/simd/kernels.hpp"

namespace recool {
namespace odeint = boost::numeric::odeint;

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;

void check_dmax(double d, const char* what) {
  if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument(std::string(what) + ": dmax must be finite and >= 0");
}

// J_n² for n = 0..n_max into `out` (resized), scratch reused between calls.
void fill_bessel_squared(double beta, int n_max, std::vector<double>& out, std::vector<double>& scratch) {
  out.assign(static_cast<std::size_t>(n_max) + 1, 0.0);
  if (beta == 0.0) {
    out[0] = 1.0;
    return;
  }
  const int top = std::max(n_max, static_cast<int>(beta));
  const int start = 2 * ((top + 16 + static_cast<int>(std::sqrt(40.0 * (top + 1)))) / 2);
  scratch.assign(static_cast<std::size_t>(start) + 2, 0.0);
  double next = 0.0, cur = 1.0;
  scratch[static_cast<std::size_t>(start)] = cur;
  for (int n = start; n > 0; --n) {
    const double prev = 2.0 * n / beta * cur - next;
    next = cur;
    cur = prev;
    scratch[static_cast<std::size_t>(n - 1)] = cur;
    if (std::abs(cur) > 1e200) {
      for (int k = n - 1; k <= start; ++k) scratch[static_cast<std::size_t>(k)] *= 1e-200;
      next *= 1e-200;
      cur *= 1e-200;
    }
  }
  // J_0 + 2 Σ J_2k = 1.
  double norm = scratch[0];
  for (int k = 2; k <= start; k += 2) norm += 2.0 * scratch[static_cast<std::size_t>(k)];
  for (int n = 0; n <= n_max; ++n) {
    const double j = scratch[static_cast<std::size_t>(n)] / norm;
    out[static_cast<std::size_t>(n)] = j * j;
  }
}

struct Sidebands {
  std::vector<double> weights;  // J_|n|² for n = 0..n_max
  std::vector<double> scratch;

  void set(double beta) { fill_bessel_squared(beta, bessel_truncation(beta), weights, scratch); }
};

double sideband_beta(double cx, double cy, double dx, double dy, double omega, double stray) {
  return std::abs(kSqrt2 * (dx * cx - dy * cy) / omega + stray);
}

std::vector<double> scaled(std::vector<double> v, double a) {
  for (double& x : v) x *= a;
  return v;
}

}  // namespace

double ModeSet::dmax(Mode m) const {
  const auto i = static_cast<std::size_t>(m);
  return 2.0 * std::sqrt(eps[i] * r[i]);
}

void ModeSet::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(eps[i] >= 0.0) || !std::isfinite(eps[i])) throw std::invalid_argument("ModeSet: energies must be finite and >= 0");
    if (!(r[i] > 0.0) || !std::isfinite(r[i])) throw std::invalid_argument("ModeSet: recoil parameters must be > 0");
  }
  if (!(omega_tilde >= 0.0) || !std::isfinite(omega_tilde)) throw std::invalid_argument("ModeSet: omega_tilde must be >= 0");
  if (!(stray_beta >= 0.0) || !std::isfinite(stray_beta)) throw std::invalid_argument("ModeSet: stray_beta must be >= 0");
}

ModeSet ModeSet::from_dmax(std::array<double, 3> dmax, std::array<double, 3> r, double omega_tilde) {
  ModeSet m;
  m.r = r;
  m.omega_tilde = omega_tilde;
  for (std::size_t i = 0; i < 3; ++i) {
    check_dmax(dmax[i], "ModeSet::from_dmax");
    m.eps[i] = dmax[i] * dmax[i] / (4.0 * r[i]);
  }
  m.validate();
  return m;
}

std::size_t angle_nodes(double dmax, const AngleGrid& grid) {
  if (dmax == 0.0) return 1;
  const auto wanted = static_cast<std::size_t>(std::ceil(24.0 * dmax));
  const std::size_t n = std::max(grid.nodes, wanted);
  return (n + 3) / 4 * 4;
}

double combined_doppler_pdf(double dmax_x, double dmax_y, double dd) {
  check_dmax(dmax_x, "combined_doppler_pdf");
  check_dmax(dmax_y, "combined_doppler_pdf");
  if (dmax_x == 0.0 && dmax_y == 0.0) return dd == 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  if (dmax_x == 0.0) return doppler_pdf(dmax_y, dd);
  if (dmax_y == 0.0) return doppler_pdf(dmax_x, dd);
  if (std::abs(dd) > dmax_x + dmax_y) return 0.0;
  // (1/π²) ∫ du / √((a² − u²)(b² − (D − u)²)) over the overlap of the two
  // supports, a complete elliptic integral in the four sorted branch points.
  std::array<double, 4> p{-dmax_x, dmax_x, dd - dmax_y, dd + dmax_y};
  std::sort(p.begin(), p.end());
  // K(k) = R_F(0, k′², 1) with the complementary modulus formed directly,
  // which keeps the logarithmic peaks finite arbitrarily close to them.
  const double den = (p[3] - p[1]) * (p[2] - p[0]);
  const double g1 = p[3] - p[2], g0 = p[1] - p[0];
  if (g1 == 0.0 || g0 == 0.0) return std::numeric_limits<double>::infinity();
  const double kp2 = g1 * g0 / den;
  // K ≈ ln(4/k′) once k′² is too small to form without underflow.
  const double k = kp2 > 1e-20 ? boost::math::ellint_rf(0.0, kp2, 1.0)
                               : std::log(4.0) - 0.5 * (std::log(g1) + std::log(g0) - std::log(den));
  return 2.0 * k / std::sqrt(den) / (pi * pi);
}

int bessel_truncation(double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("bessel_truncation: beta must be >= 0");
  return static_cast<int>(std::ceil(beta + 8.0 * std::cbrt(beta) + 12.0));
}

std::vector<double> bessel_j_squared(double beta, int n_max) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("bessel_j_squared: beta must be >= 0");
  if (n_max < 0) throw std::invalid_argument("bessel_j_squared: n_max must be >= 0");
  std::vector<double> out, scratch;
  fill_bessel_squared(beta, n_max, out, scratch);
  return out;
}

double micromotion_profile(double delta_eff, double beta, double omega_tilde) {
  if (!(omega_tilde > 0.0)) throw std::invalid_argument("micromotion_profile: omega_tilde must be > 0");
  const int n_max = bessel_truncation(beta);
  const auto w = bessel_j_squared(beta, n_max);
  double s = w[0] / (1.0 + delta_eff * delta_eff);
  for (int n = 1; n <= n_max; ++n) {
    const double a = delta_eff - n * omega_tilde, b = delta_eff + n * omega_tilde;
    s += w[static_cast<std::size_t>(n)] * (1.0 / (1.0 + a * a) + 1.0 / (1.0 + b * b));
  }
  return s;
}

double modulation_index(double phi_x, double phi_y, double dmax_x, double dmax_y, double omega_tilde) {
  if (!(omega_tilde > 0.0)) throw std::invalid_argument("modulation_index: omega_tilde must be > 0");
  return kSqrt2 * std::abs(dmax_x * std::cos(phi_x) - dmax_y * std::cos(phi_y)) / omega_tilde;
}

LineProfile::LineProfile(double dmax_x, double dmax_y, double omega_tilde, double stray_beta, const AngleGrid& grid)
    : dmax_x_(dmax_x), dmax_y_(dmax_y), omega_tilde_(omega_tilde), stray_beta_(stray_beta), angles_(grid) {
  check_dmax(dmax_x, "effective_profile");
  check_dmax(dmax_y, "effective_profile");
  if (!(omega_tilde >= 0.0) || !(stray_beta >= 0.0)) {
    throw std::invalid_argument("effective_profile: omega_tilde and stray_beta must be >= 0");
  }
  lorentzian_ = dmax_x == 0.0 && dmax_y == 0.0 && (omega_tilde == 0.0 || stray_beta == 0.0);
  if (lorentzian_) return;
  double reach = dmax_x + dmax_y + 20.0;
  if (omega_tilde > 0.0) {
    const double beta_max = kSqrt2 * (dmax_x + dmax_y) / omega_tilde + stray_beta;
    reach += (bessel_truncation(beta_max) + 1) * omega_tilde;
  }
  step_ = 0.02;
  const auto half = static_cast<std::size_t>(std::ceil(reach / step_));
  // Even in δ_eff: tabulate the right half and mirror it.
  std::vector<double> right(half + 1);
  parallel_for(half + 1, grid.workers, [&](std::size_t i) { right[i] = exact(static_cast<double>(i) * step_); });
  grid_.resize(2 * half + 1);
  values_.resize(2 * half + 1);
  for (std::size_t i = 0; i <= 2 * half; ++i) {
    const std::size_t k = i >= half ? i - half : half - i;
    grid_[i] = (static_cast<double>(i) - static_cast<double>(half)) * step_;
    values_[i] = right[k];
  }
  grid_[half] = 0.0;
  auto spline = std::make_shared<const boost::math::interpolators::cardinal_cubic_b_spline<double>>(
      values_.begin(), values_.end(), grid_.front(), step_);
  interp_ = [spline](double d) { return (*spline)(d); };
}

double LineProfile::exact(double delta_eff) const {
  if (lorentzian_) return 1.0 / (1.0 + delta_eff * delta_eff);
  const std::size_t nx = angle_nodes(dmax_x_, angles_), ny = angle_nodes(dmax_y_, angles_);
  const auto sx = scaled(periodic_sines(nx), dmax_x_), sy = scaled(periodic_sines(ny), dmax_y_);
  std::vector<double> row(nx);
  if (omega_tilde_ == 0.0) {
    for (std::size_t i = 0; i < nx; ++i) row[i] = simd::lorentz_moments(delta_eff + sx[i], sy).sum;
  } else {
    const auto cx = periodic_cosines(nx), cy = periodic_cosines(ny);
    Sidebands sb;
    for (std::size_t i = 0; i < nx; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < ny; ++j) {
        sb.set(sideband_beta(cx[i], cy[j], dmax_x_, dmax_y_, omega_tilde_, stray_beta_));
        const double base = delta_eff + sx[i] + sy[j];
        double s = sb.weights[0] / (1.0 + base * base);
        for (std::size_t n = 1; n < sb.weights.size(); ++n) {
          const double a = base - static_cast<double>(n) * omega_tilde_, b = base + static_cast<double>(n) * omega_tilde_;
          s += sb.weights[n] * (1.0 / (1.0 + a * a) + 1.0 / (1.0 + b * b));
        }
        acc += s;
      }
      row[i] = acc;
    }
  }
  return pairwise_sum(row) / static_cast<double>(nx * ny);
}

double LineProfile::operator()(double delta_eff) const {
  if (lorentzian_) return 1.0 / (1.0 + delta_eff * delta_eff);
  if (std::abs(delta_eff) > grid_.back()) return exact(delta_eff);
  return std::max(interp_(delta_eff), 0.0);
}

LineProfile effective_profile(double dmax_x, double dmax_y, double omega_tilde, double stray_beta,
                              const AngleGrid& grid) {
  return LineProfile(dmax_x, dmax_y, omega_tilde, stray_beta, grid);
}

void write_profile(std::ostream& out, const LineProfile& profile) {
  out << "delta_eff,response\n";
  if (profile.lorentzian()) {
    for (int i = -2000; i <= 2000; ++i) {
      const double d = 0.01 * i;
      out << format_double(d) << ',' << format_double(profile(d)) << '\n';
    }
    return;
  }
  const auto g = profile.grid();
  const auto v = profile.values();
  for (std::size_t i = 0; i < g.size(); ++i) out << format_double(g[i]) << ',' << format_double(v[i]) << '\n';
}

ModeRates mode_rates(const ModeSet& modes, double delta, const AngleGrid& grid) {
  modes.validate();
  if (!std::isfinite(delta)) throw std::invalid_argument("mode_rates: detuning must be finite");
  const double dx = modes.dmax(Mode::x), dy = modes.dmax(Mode::y), dz = modes.dmax(Mode::z);
  const double omega = modes.omega_tilde;
  const std::size_t nx = angle_nodes(dx, grid), ny = angle_nodes(dy, grid), nz = angle_nodes(dz, grid);
  const auto sx = scaled(periodic_sines(nx), dx), sy = scaled(periodic_sines(ny), dy), sz = scaled(periodic_sines(nz), dz);
  const auto cx = periodic_cosines(nx), cy = periodic_cosines(ny);

  // Per outer node: Σ R, −Σ δ_x R, −Σ δ_y R, −Σ δ_z R over the inner angles.
  std::vector<std::array<double, 4>> slots(nx);
  parallel_for(nx, grid.workers, [&](std::size_t i) {
    Sidebands sb;
    double s_sum = 0.0, y_sum = 0.0, z_sum = 0.0;
    for (std::size_t j = 0; j < ny; ++j) {
      const double base = delta + sx[i] + sy[j];
      double s, f;
      if (omega == 0.0) {
        const auto m = simd::lorentz_moments(base, sz);
        s = m.sum;
        f = m.first;
      } else {
        sb.set(sideband_beta(cx[i], cy[j], dx, dy, omega, modes.stray_beta));
        const auto m0 = simd::lorentz_moments(base, sz);
        s = sb.weights[0] * m0.sum;
        f = sb.weights[0] * m0.first;
        for (std::size_t n = 1; n < sb.weights.size(); ++n) {
          const double w = sb.weights[n];
          if (w == 0.0) continue;
          const double shift = static_cast<double>(n) * omega;
          const auto lo = simd::lorentz_moments(base - shift, sz);
          const auto hi = simd::lorentz_moments(base + shift, sz);
          s += w * (lo.sum + hi.sum);
          f += w * (lo.first + hi.first);
        }
      }
      s_sum += s;
      y_sum -= sy[j] * s;
      z_sum -= f;
    }
    slots[i] = {s_sum, -sx[i] * s_sum, y_sum, z_sum};
  });

  std::vector<double> col(nx);
  auto total = [&](std::size_t c) {
    for (std::size_t i = 0; i < nx; ++i) col[i] = slots[i][c];
    return pairwise_sum(col) / static_cast<double>(nx * ny * nz);
  };
  ModeRates out;
  out.dn_dtau = total(0);
  out.de_dtau = {total(1), total(2), total(3)};
  return out;
}

double cooling_rate_3d(const ModeSet& modes, Mode target, double delta, const AngleGrid& grid) {
  if (modes.omega_tilde != 0.0) throw std::invalid_argument("cooling_rate_3d: requires omega_tilde = 0");
  return mode_rates(modes, delta, grid).de_dtau[static_cast<std::size_t>(target)];
}

double cooling_rate_3d_micromotion(const ModeSet& modes, Mode target, double delta, const AngleGrid& grid) {
  if (!(modes.omega_tilde > 0.0)) throw std::invalid_argument("cooling_rate_3d_micromotion: requires omega_tilde > 0");
  return mode_rates(modes, delta, grid).de_dtau[static_cast<std::size_t>(target)];
}

std::vector<RateCrossing> rate_crossings(const ModeSet& modes, Mode target, double delta, double lo, double hi,
                                         std::size_t points, const AngleGrid& grid) {
  if (!(lo > 0.0) || !(hi > lo) || points < 2) throw std::invalid_argument("rate_crossings: need 0 < lo < hi, points >= 2");
  const auto t = static_cast<std::size_t>(target);
  auto rate_at = [&](double eps_r) {
    ModeSet m = modes;
    m.eps[t] = eps_r / m.r[t];
    return mode_rates(m, delta, grid).de_dtau[t];
  };
  const auto xs = log_grid(lo, hi, points);
  std::vector<double> ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = rate_at(xs[i]);
  std::vector<RateCrossing> out;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    if ((ys[i] > 0.0) == (ys[i + 1] > 0.0)) continue;
    double a = std::log(xs[i]), b = std::log(xs[i + 1]);
    const bool a_pos = ys[i] > 0.0;
    for (int it = 0; it < 50; ++it) {
      const double m = 0.5 * (a + b);
      ((rate_at(std::exp(m)) > 0.0) == a_pos ? a : b) = m;
    }
    out.push_back({std::exp(0.5 * (a + b)), a_pos});
  }
  return out;
}

std::vector<ModeHistoryPoint> evolve_modes(const ModeSet& modes, double delta, std::span<const double> tau_grid,
                                           const EvolveOptions& options) {
  modes.validate();
  if (tau_grid.empty() || tau_grid[0] != 0.0) throw std::invalid_argument("evolve_modes: tau grid must start at 0");
  for (std::size_t i = 1; i < tau_grid.size(); ++i) {
    if (!(tau_grid[i] > tau_grid[i - 1])) throw std::invalid_argument("evolve_modes: tau grid must increase strictly");
  }
  using State = std::array<double, 3>;
  auto system = [&](const State& e, State& de, double) {
    ModeSet m = modes;
    for (std::size_t i = 0; i < 3; ++i) m.eps[i] = std::max(e[i], 0.0);
    de = mode_rates(m, delta, options.grid).de_dtau;
  };
  std::vector<ModeHistoryPoint> out;
  out.reserve(tau_grid.size());
  out.push_back({0.0, modes.eps});
  if (tau_grid.size() == 1) return out;
  auto stepper = odeint::make_dense_output(options.abs_tol, options.rel_tol, odeint::runge_kutta_dopri5<State>());
  State x = modes.eps;
  stepper.initialize(x, 0.0, std::min(0.1, tau_grid[1]));
  for (std::size_t k = 1; k < tau_grid.size(); ++k) {
    while (stepper.current_time() < tau_grid[k]) stepper.do_step(system);
    stepper.calc_state(tau_grid[k], x);
    for (double v : x) {
      if (!std::isfinite(v)) throw NumericalError("evolve_modes: non-finite energy");
    }
    out.push_back({tau_grid[k], {std::max(x[0], 0.0), std::max(x[1], 0.0), std::max(x[2], 0.0)}});
  }
  return out;
}

}  // namespace recool
