#include "recool/analytic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/numeric/odeint.hpp>

#include "recool/numeric.hpp"

namespace recool {
namespace {

namespace odeint = boost::numeric::odeint;
using State2 = std::array<double, 2>;

constexpr double kSeriesThreshold = 1e-3;

// Σ_{k≥1} c_k x^k with (1 − x)^(−1/2) = 1 + Σ c_k x^k; |x| < 1e-3 keeps the
// truncation error below 1e-20 after six terms.
std::complex<double> binomial_tail(std::complex<double> x) {
  std::complex<double> term = 1.0;
  std::complex<double> sum = 0.0;
  double c = 1.0;
  for (int k = 1; k <= 6; ++k) {
    c *= (2.0 * k - 1.0) / (2.0 * k);
    term *= x;
    sum += c * term;
  }
  return sum;
}

}  // namespace

ModeEnergy::ModeEnergy(double eps, double recoil) : eps_(eps), dmax_(0.0) {
  if (!(eps >= 0.0)) throw std::invalid_argument("mode energy must be >= 0");
  if (!(recoil >= 0.0)) throw std::invalid_argument("recoil parameter must be >= 0");
  dmax_ = 2.0 * std::sqrt(eps * recoil);
}

std::complex<double> principal_sqrt(std::complex<double> w) noexcept {
  const double x = w.real();
  const double y = w.imag();
  if (x == 0.0 && y == 0.0) return {0.0, y};
  const double t = std::sqrt(0.5 * (std::abs(x) + std::hypot(x, y)));
  if (x >= 0.0) return {t, y / (2.0 * t)};
  return {std::abs(y) / (2.0 * t), std::copysign(t, y)};
}

std::complex<double> z_function(double a, double b) {
  if (!(b > 0.0)) throw std::invalid_argument("z_function: b must be > 0");
  if (std::isinf(b)) return {0.0, 1.0};
  const std::complex<double> w(a, 1.0);
  return std::complex<double>(0.0, b) / principal_sqrt(b * b - w * w);
}

double doppler_pdf(double dmax, double dd) {
  if (!(dmax > 0.0)) throw std::invalid_argument("doppler_pdf: dmax must be > 0");
  const double ad = std::abs(dd);
  if (ad > dmax) return 0.0;
  if (ad == dmax) return std::numeric_limits<double>::infinity();
  return 1.0 / (pi * std::sqrt((dmax - ad) * (dmax + ad)));
}

RatePair rates(double eps, double delta, double r) {
  if (!(eps >= 0.0)) throw std::invalid_argument("rates: energy must be >= 0");
  if (!(r >= 0.0)) throw std::invalid_argument("rates: recoil parameter must be >= 0");
  const double lorentz = 1.0 / (1.0 + delta * delta);
  const double b2 = 4.0 * eps * r;
  if (b2 == 0.0) return {0.0, lorentz};
  const std::complex<double> w(delta, 1.0);
  const std::complex<double> x = b2 / (w * w);
  if (std::abs(x) < kSeriesThreshold) {
    // Z/b = P (1 + T) with P = (−δ + i)/(1+δ²); Re P + δ Im P vanishes.
    const std::complex<double> p(-delta * lorentz, lorentz);
    const std::complex<double> q = p * binomial_tail(x);
    return {q.real() + delta * q.imag(), lorentz + q.imag()};
  }
  const double b = std::sqrt(b2);
  const std::complex<double> z = z_function(delta, b);
  return {(z.real() + delta * z.imag()) / b, z.imag() / b};
}

double cooling_rate(double eps, double delta, double r) { return rates(eps, delta, r).de_dtau; }

double scattering_rate(double eps, double delta, double r) { return rates(eps, delta, r).dn_dtau; }

double lamb_dicke_rate(double eps, double delta, double r) {
  const double d = 1.0 + delta * delta;
  return 4.0 * delta * eps * r / (d * d);
}

double recoil_rate(double dn_dtau, double r) { return 4.0 / 3.0 * r * dn_dtau; }

CriticalEnergies critical_energies(double delta, double r) {
  if (!(delta < 0.0)) throw std::invalid_argument("critical_energies: detuning must be < 0");
  if (!(r > 0.0)) throw std::invalid_argument("critical_energies: recoil parameter must be > 0");
  const double d2 = delta * delta;
  CriticalEnergies out;
  out.eps_c = (1.0 + d2) / (2.0 * r) * std::cos(std::acos((1.0 - d2) / (1.0 + d2)) / 3.0);
  // Values within rounding of δ_C count as the boundary, where ε_s = 0.
  if (delta < critical_detuning * (1.0 + 1e-12)) {
    const double sqrt3 = std::numbers::sqrt3;
    out.eps_s = (delta - sqrt3) * (delta + 1.0 / sqrt3) / (4.0 * r);
  }
  return out;
}

double peak_scattering_ratio(double delta) {
  if (!(delta < critical_detuning)) {
    throw std::invalid_argument("peak_scattering_ratio: requires delta < -1/sqrt(3)");
  }
  const double sqrt3 = std::numbers::sqrt3;
  return std::sqrt(3.0 * sqrt3) / 4.0 * (1.0 + delta * delta) / std::sqrt(-delta);
}

std::vector<TrajectoryPoint> integrate_trajectory(double eps0, std::span<const double> tau_grid, double delta,
                                                  double r, const TrajectoryOptions& options) {
  if (!(eps0 >= 0.0)) throw std::invalid_argument("integrate_trajectory: eps0 must be >= 0");
  if (tau_grid.empty() || tau_grid.front() != 0.0) {
    throw std::invalid_argument("integrate_trajectory: tau grid must start at 0");
  }
  for (std::size_t i = 1; i < tau_grid.size(); ++i) {
    if (!(tau_grid[i] > tau_grid[i - 1])) {
      throw std::invalid_argument("integrate_trajectory: tau grid must increase strictly");
    }
  }
  const bool with_recoil = options.recoil == Recoil::on;
  auto system = [=](const State2& y, State2& dydt, double) {
    const RatePair rp = rates(std::max(y[0], 0.0), delta, r);
    dydt[0] = rp.de_dtau + (with_recoil ? recoil_rate(rp.dn_dtau, r) : 0.0);
    dydt[1] = rp.dn_dtau;
  };

  std::vector<TrajectoryPoint> out;
  out.reserve(tau_grid.size());
  auto record = [&](const State2& y, double tau) {
    const double eps = std::max(y[0], 0.0);
    if (!std::isfinite(y[0]) || !std::isfinite(y[1])) throw NumericalError("integrate_trajectory: non-finite state");
    out.push_back({tau, eps, rates(eps, delta, r).dn_dtau, y[1]});
  };

  State2 y{eps0, 0.0};
  if (tau_grid.size() == 1) {
    record(y, 0.0);
    return out;
  }
  const double dt0 = std::min(1e-3, 0.1 * (tau_grid[1] - tau_grid[0]));
  auto stepper = odeint::make_dense_output(options.abs_tol, options.rel_tol, odeint::runge_kutta_dopri5<State2>());
  odeint::integrate_times(stepper, system, y, tau_grid.begin(), tau_grid.end(), dt0, record);
  return out;
}

double steady_state_energy(double delta, double r, Recoil recoil) {
  if (recoil == Recoil::off) return 0.0;
  if (!(delta < 0.0)) throw std::invalid_argument("steady_state_energy: detuning must be < 0");
  auto net = [&](double eps) {
    const RatePair rp = rates(eps, delta, r);
    return rp.de_dtau + recoil_rate(rp.dn_dtau, r);
  };
  double hi = (1.0 + delta * delta) / (-delta) / std::max(r, 1e-300);
  for (int i = 0; i < 200 && net(hi) >= 0.0; ++i) hi *= 2.0;
  if (net(hi) >= 0.0) throw NumericalError("steady_state_energy: recoil heating exceeds cooling");
  double lo = 0.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (net(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace recool
