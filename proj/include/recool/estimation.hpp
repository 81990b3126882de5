#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "recool/thermal.hpp"
#include "recool/units.hpp"

namespace recool {

// The steady-state tail cannot serve as the amplitude reference.
class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Photon counts per time bin, summed over n_cycles heat/re-cool cycles.
// Times are measured from the start of re-cooling.
struct FluorescenceTrace {
  std::vector<double> bin_start_s;
  std::vector<double> bin_width_s;
  std::vector<std::int64_t> counts;
  std::int64_t n_cycles = 1;
  std::optional<double> detection_rate_hint;  // steady-state counts per second, per cycle
  double dark_rate_hz = 0.0;
  std::optional<double> heat_duration_s;

  void validate() const;
  std::size_t size() const { return counts.size(); }
  std::vector<double> edges_s() const;
};

// bin_start_s,bin_width_s,counts CSV plus a JSON sidecar with n_cycles,
// dark_rate_hz, heat_duration_s (and optionally detection_rate_hint).
FluorescenceTrace read_trace(const std::filesystem::path& csv, const std::filesystem::path& meta);
void write_trace(const FluorescenceTrace& trace, const std::filesystem::path& csv, const std::filesystem::path& meta);

// Expected counts for a trace layout: A w_i R̄_i / R∞ + dark·w_i·n_cycles with
// A the steady signal in counts per second summed over cycles.
std::vector<double> expected_counts(const OffsetWeights& weights, const PropagatorCache& cache, const ScaledParams& sp,
                                    std::span<const double> edges_s, double signal_cps, double background_cps);

struct SynthesisSpec {
  std::size_t bins = 200;
  double bin_width_s = 20e-6;
  std::int64_t n_cycles = 1000;
  double detection_efficiency = 1e-3;
  double dark_rate_hz = 0.0;
  std::optional<double> heat_duration_s;
};

// Poisson-sampled trace from the averaged fluorescence of `dist`.
FluorescenceTrace synthesize_trace(const EnergyDistribution& dist, const ScaledParams& sp, const PropagatorCache& cache,
                                   const SynthesisSpec& spec, std::uint64_t seed);

// Cache sized for fitting a trace: energies up to 14 times the mean whose
// cooling span matches the trace duration, bins 1/16 of the shortest trace bin.
PropagatorCache build_fit_cache(const FluorescenceTrace& trace, const ScaledParams& sp, std::size_t subdivision = 16);

enum class FitStatus { ok, below_sensitivity };

struct FitOptions {
  double tail_fraction = 0.2;
  double rel_tol = 1e-4;
  std::size_t scan_points = 41;
  double stationarity_z = 4.0;
  double sensitivity_nll = 2.0;  // minimum NLL gain over a flat trace
  double upper_bound_nll = 1.35;  // one-sided 95%
};

struct FitResult {
  FitStatus status = FitStatus::ok;
  double mean_energy = 0.0;  // ε̄, or its upper bound when below sensitivity
  double sigma = 0.0;              // Fisher and calibration terms in quadrature
  double sigma_fisher = 0.0;       // 1/σ² = Σ (∂n_i/∂ε̄)² / n_i
  double sigma_calibration = 0.0;  // tail amplitude error carried into ε̄
  double mean_energy_r_units = 0.0;
  double temperature_K = 0.0;
  double sigma_K = 0.0;
  double A = 0.0;  // steady signal, counts per second summed over cycles
  double B = 0.0;  // background, counts per second summed over cycles
  double nll = 0.0;
  std::vector<double> model;
  std::vector<double> residuals;  // (n − model)/√model
  std::vector<std::string> warnings;
};

FitResult fit_mean_energy(const FluorescenceTrace& trace, const ScaledParams& sp, const PropagatorCache& cache,
                          const FitOptions& options = {});

struct HeatingRate {
  double slope_K_per_s = 0.0;
  double sigma_K_per_s = 0.0;
  double intercept_K = 0.0;
  double sigma_intercept_K = 0.0;
  std::vector<std::string> warnings;
};

// Weighted least squares T = T0 + rate·t with weights 1/σ_K²; with
// fix_intercept the line passes through the origin.
HeatingRate heating_rate_from_fits(std::span<const std::pair<double, FitResult>> fits, bool fix_intercept = false);

// Scale-free cache for measurement_time: r = 1, energies to cover mean_eps_r.
PropagatorCache build_design_cache(double delta, double max_mean_eps_r);

// Relative total measurement time for a fixed relative uncertainty on the
// heating rate, normalized to (δ = −1, ε̄r = 1, s → 0). +inf without signal.
double measurement_time(double delta, double mean_eps_r, double s, const PropagatorCache& cache);

}  // namespace recool
