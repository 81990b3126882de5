#pragma once

// Reference computations used only by tests. Nothing here calls into the
// library's rate code, SIMD kernels or ODE wrappers.

#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

// φ-average of f over [0, 2π) by the N-node periodic trapezoid rule.
double periodic_mean(const std::function<double(double)>& f, std::size_t nodes);

// Defining integrals of the 1-D rates, evaluated in the angle variable.
double cooling_rate_quadrature(double eps, double delta, double r, std::size_t nodes = 4096);
double scattering_rate_quadrature(double eps, double delta, double r, std::size_t nodes = 4096);

// Real and imaginary parts of ∫ dφ/2π 1/(sin φ − z), z = (a+i)/b.
double z_quadrature_real(double a, double b, std::size_t nodes = 4096);
double z_quadrature_imag(double a, double b, std::size_t nodes = 4096);

// Maximiser of f on [lo, hi] by a dense log scan followed by golden-section
// refinement. Assumes a single interior maximum.
double argmax_log(const std::function<double(double)>& f, double lo, double hi, double rel_tol = 1e-10);

// Classical RK4 on dε/dτ = f(ε) with a fixed step, and a Richardson
// extrapolated time for ε to fall from eps_start to eps_end.
double rk4_time_to_reach(const std::function<double(double)>& f, double eps_start, double eps_end, double step);
double richardson_time_to_reach(const std::function<double(double)>& f, double eps_start, double eps_end,
                                double step);

// Scattering rate and cooling rate recomputed from the quadrature definition,
// used by the oracle ODE integrations.
struct QuadRates {
  double de = 0.0;
  double dn = 0.0;
};
QuadRates quadrature_rates(double eps, double delta, double r, std::size_t nodes);

// Fixed-step RK4 on (ε, N) with quadrature rates; entry i is the state at
// τ = i·step.
struct OracleState {
  double eps = 0.0;
  double photons = 0.0;
};
std::vector<OracleState> rk4_trajectory(double eps0, double delta, double r, double step, std::size_t steps,
                                        std::size_t nodes = 1024);

// P(dmax_x sin φ_x + dmax_y sin φ_y ≤ d), averaging the closed-form
// arcsine CDF of the y shift over φ_x.
double combined_doppler_cdf(double dmax_x, double dmax_y, double d, std::size_t nodes = 1 << 20);

// Double φ average of the Lorentzian at δ + dmax_x sin φ_x + dmax_y sin φ_y.
double spectator_profile(double dmax_x, double dmax_y, double delta_eff, std::size_t nodes = 2048);

// Triple φ average of −δ_D^i / (1 + (δ + Σ δ_D)²), plain loops.
struct Rates3 {
  double de[3] = {0.0, 0.0, 0.0};
  double dn = 0.0;
};
Rates3 rates_3d(double dx, double dy, double dz, double delta, std::size_t nodes);

// Σ_{|n| ≤ n_max} J_n²(β)/(1 + (δ − nΩ)²) with the standard library Bessel.
double micromotion_sum(double delta_eff, double beta, double omega, int n_max = 200);

}  // namespace oracle
