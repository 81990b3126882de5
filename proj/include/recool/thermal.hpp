#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "recool/analytic.hpp"

namespace recool {

struct MaxwellBoltzmann {
  double mean = 0.0;
};

struct PointMass {
  double eps0 = 0.0;
};

// Weighted samples; weights are normalized on construction.
struct Empirical {
  std::vector<double> samples;
  std::vector<double> weights;
};

using EnergyDistribution = std::variant<MaxwellBoltzmann, PointMass, Empirical>;

EnergyDistribution maxwell_boltzmann(double mean);
EnergyDistribution point_mass(double eps0);
EnergyDistribution empirical(std::vector<double> samples, std::vector<double> weights = {});

double mean_energy(const EnergyDistribution& dist);

inline constexpr std::size_t default_sample_count = 100000;

// Draws n energies. Empirical input is resampled by weight.
std::vector<double> sample_energies(const EnergyDistribution& dist, std::size_t n, std::uint64_t seed);

// Coherent displacement to eps0 plus a thermal halo of the given mean:
// ε = (u + √eps0)² + v², u and v Gaussian with variance mean/2.
EnergyDistribution make_excited_thermal(double eps0, double mean, std::uint64_t seed,
                                        std::size_t n = default_sample_count);

// One quadrature of the motion amplified by `gain`, the other damped by it:
// ε = g² u² + v²/g² with u = √ε cos θ, v = √ε sin θ, θ uniform.
EnergyDistribution parametric_amplify(const EnergyDistribution& dist, double gain, std::uint64_t seed,
                                      std::size_t n = default_sample_count);

// Energies and bin-averaged scattering rates along one cooling trajectory
// started at eps0_max. Node n sits at τ = nΔτ; rate n is the photon count in
// [nΔτ, (n+1)Δτ) divided by Δτ. Beyond the last bin the rate is the limit.
class PropagatorCache {
 public:
  PropagatorCache(double delta, double r, double dtau, double eps0_max, Recoil recoil, std::vector<double> eps,
                  std::vector<double> rates, double rate_limit);

  double delta() const { return delta_; }
  double recoil_parameter() const { return r_; }
  double dtau() const { return dtau_; }
  double eps0_max() const { return eps0_max_; }
  Recoil recoil() const { return recoil_; }
  std::size_t bins() const { return rates_.size(); }
  std::span<const double> eps() const { return eps_; }
  std::span<const double> rates() const { return rates_; }
  // Photons emitted by τ = nΔτ, n = 0..bins().
  std::span<const double> photons() const { return photons_; }
  double rate_limit() const { return rate_limit_; }
  double rate(std::size_t n) const { return n < rates_.size() ? rates_[n] : rate_limit_; }
  // Photons by time τ along the reference trajectory, linear within bins.
  double photons_at(double tau) const;

  std::vector<std::string> warnings;

 private:
  double delta_;
  double r_;
  double dtau_;
  double eps0_max_;
  Recoil recoil_;
  std::vector<double> eps_;
  std::vector<double> rates_;
  std::vector<double> photons_;
  double rate_limit_;
};

// min(0.05 / Lamb-Dicke slope, span / 4096) with span the estimated time to
// cool from eps0_max into the Lamb-Dicke regime and settle.
double default_dtau(double delta, double r, double eps0_max);
double estimated_cooling_span(double delta, double r, double eps0_max);

struct CacheOptions {
  Recoil recoil = Recoil::off;
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  std::size_t max_bins = 50'000'000;
};

PropagatorCache build_cache(double delta, double r, double dtau, double eps0_max, const CacheOptions& options = {});

// Distribution mass per trajectory offset: a particle starting at node k + f
// (0 ≤ f < 1) sees bin n at (1 − f) R_{n+k} + f R_{n+k+1}. Entry k of `w`
// covers offset k, k = 0..bins().
struct OffsetWeights {
  std::vector<double> w;
  double tail_mass = 0.0;  // mass above eps0_max, folded into w[0]
};

inline constexpr double max_tail_mass = 1e-6;

OffsetWeights offset_weights(const EnergyDistribution& dist, const PropagatorCache& cache);

struct RateBin {
  double tau = 0.0;  // bin start
  double rate = 0.0;
};

// Thermally averaged rate R̄_n = Σ_k w_k R_{n+k} for n < n_bins.
std::vector<double> averaged_rate(const OffsetWeights& weights, const PropagatorCache& cache, std::size_t n_bins);
std::vector<RateBin> averaged_rate(const EnergyDistribution& dist, const PropagatorCache& cache, std::size_t n_bins);

// Mean photons emitted by time τ for each entry of `taus` (τ ≥ 0).
std::vector<double> averaged_photons(const OffsetWeights& weights, const PropagatorCache& cache,
                                     std::span<const double> taus);

// Mean rate over [edges[i], edges[i+1]).
std::vector<double> binned_average(const OffsetWeights& weights, const PropagatorCache& cache,
                                   std::span<const double> edges);

// Σ_n (R̄_n − R∞) Δτ.
double excess_photons(const OffsetWeights& weights, const PropagatorCache& cache);

// "# {json header}" line, then "eps,rate" rows; the last row holds the limit.
void write_cache(std::ostream& out, const PropagatorCache& cache);
PropagatorCache read_cache(std::istream& in);

}  // namespace recool
