#include "recool/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"

#include "recool/numeric.hpp"

namespace recool {
namespace {

constexpr double kTailMassLog = 13.815510557964274;  // −ln(1e-6)

double poisson_nll(std::span<const std::int64_t> n, std::span<const double> m) {
  double s = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double k = static_cast<double>(n[i]);
    s += m[i] - (k > 0.0 ? k * std::log(m[i]) : 0.0) + std::lgamma(k + 1.0);
  }
  return s;
}

void check_cache_matches(const PropagatorCache& cache, const ScaledParams& sp) {
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); };
  if (!close(cache.delta(), sp.delta) || !close(cache.recoil_parameter(), sp.recoil_z())) {
    throw std::invalid_argument("cache was built for different (delta, r) than the parameters");
  }
}

std::vector<double> to_tau(std::span<const double> seconds, const ScaledParams& sp) {
  std::vector<double> out(seconds.size());
  for (std::size_t i = 0; i < seconds.size(); ++i) out[i] = seconds_to_tau(seconds[i], sp);
  return out;
}

}  // namespace

void FluorescenceTrace::validate() const {
  if (counts.empty()) throw std::invalid_argument("trace: no bins");
  if (bin_start_s.size() != counts.size() || bin_width_s.size() != counts.size()) {
    throw std::invalid_argument("trace: column lengths differ");
  }
  if (!(bin_start_s[0] >= 0.0)) throw std::invalid_argument("trace: first bin starts before t = 0");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!(bin_width_s[i] > 0.0)) throw std::invalid_argument("trace: bin widths must be > 0");
    if (counts[i] < 0) throw std::invalid_argument("trace: counts must be >= 0");
    if (i + 1 < counts.size()) {
      const double end = bin_start_s[i] + bin_width_s[i];
      if (std::abs(bin_start_s[i + 1] - end) > 1e-9 * std::max(end, bin_width_s[i])) {
        throw std::invalid_argument("trace: bins must be contiguous and increasing");
      }
    }
  }
  if (n_cycles < 1) throw std::invalid_argument("trace: n_cycles must be >= 1");
  if (!(dark_rate_hz >= 0.0)) throw std::invalid_argument("trace: dark rate must be >= 0");
}

std::vector<double> FluorescenceTrace::edges_s() const {
  std::vector<double> e(bin_start_s);
  e.push_back(bin_start_s.back() + bin_width_s.back());
  return e;
}

FluorescenceTrace read_trace(const std::filesystem::path& csv, const std::filesystem::path& meta) {
  std::ifstream in(csv);
  if (!in) throw std::invalid_argument("cannot open trace file " + csv.string());
  FluorescenceTrace t;
  std::string line;
  if (!std::getline(in, line) || line.rfind("bin_start_s,bin_width_s,counts", 0) != 0) {
    throw std::invalid_argument("trace: expected header bin_start_s,bin_width_s,counts");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
      throw std::invalid_argument("trace: malformed row " + std::to_string(row));
    }
    try {
      t.bin_start_s.push_back(std::stod(a));
      t.bin_width_s.push_back(std::stod(b));
      t.counts.push_back(std::stoll(c));
    } catch (const std::exception&) {
      throw std::invalid_argument("trace: malformed row " + std::to_string(row));
    }
  }
  std::ifstream min(meta);
  if (!min) throw std::invalid_argument("cannot open trace metadata " + meta.string());
  try {
    const auto j = nlohmann::json::parse(min);
    t.n_cycles = j.at("n_cycles").get<std::int64_t>();
    t.dark_rate_hz = j.value("dark_rate_hz", 0.0);
    if (j.contains("heat_duration_s") && !j["heat_duration_s"].is_null()) t.heat_duration_s = j["heat_duration_s"].get<double>();
    if (j.contains("detection_rate_hint") && !j["detection_rate_hint"].is_null()) {
      t.detection_rate_hint = j["detection_rate_hint"].get<double>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(std::string("trace metadata: ") + ex.what());
  }
  t.validate();
  return t;
}

void write_trace(const FluorescenceTrace& trace, const std::filesystem::path& csv, const std::filesystem::path& meta) {
  trace.validate();
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "bin_start_s,bin_width_s,counts\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << format_double(trace.bin_start_s[i]) << ',' << format_double(trace.bin_width_s[i]) << ',' << trace.counts[i]
        << '\n';
  }
  nlohmann::json j = {{"n_cycles", trace.n_cycles}, {"dark_rate_hz", trace.dark_rate_hz}};
  j["heat_duration_s"] = trace.heat_duration_s ? nlohmann::json(*trace.heat_duration_s) : nlohmann::json(nullptr);
  if (trace.detection_rate_hint) j["detection_rate_hint"] = *trace.detection_rate_hint;
  std::ofstream mo(meta);
  if (!mo) throw std::runtime_error("cannot write " + meta.string());
  mo << j.dump(2) << '\n';
}

std::vector<double> expected_counts(const OffsetWeights& weights, const PropagatorCache& cache, const ScaledParams& sp,
                                    std::span<const double> edges_s, double signal_cps, double background_cps) {
  const auto edges_tau = to_tau(edges_s, sp);
  const auto rr = binned_average(weights, cache, edges_tau);
  std::vector<double> m(rr.size());
  for (std::size_t i = 0; i < rr.size(); ++i) {
    const double w = edges_s[i + 1] - edges_s[i];
    m[i] = signal_cps * w * rr[i] / cache.rate_limit() + background_cps * w;
  }
  return m;
}

FluorescenceTrace synthesize_trace(const EnergyDistribution& dist, const ScaledParams& sp, const PropagatorCache& cache,
                                   const SynthesisSpec& spec, std::uint64_t seed) {
  check_cache_matches(cache, sp);
  if (spec.bins == 0 || !(spec.bin_width_s > 0.0) || spec.n_cycles < 1 || !(spec.detection_efficiency > 0.0) ||
      !(spec.dark_rate_hz >= 0.0)) {
    throw std::invalid_argument("synthesize_trace: invalid layout");
  }
  FluorescenceTrace t;
  t.n_cycles = spec.n_cycles;
  t.dark_rate_hz = spec.dark_rate_hz;
  t.heat_duration_s = spec.heat_duration_s;
  const double per_cycle = spec.detection_efficiency * cache.rate_limit() / sp.t0_s;
  t.detection_rate_hint = per_cycle;
  std::vector<double> edges(spec.bins + 1);
  for (std::size_t i = 0; i <= spec.bins; ++i) edges[i] = static_cast<double>(i) * spec.bin_width_s;
  const auto m = expected_counts(offset_weights(dist, cache), cache, sp, edges,
                                 per_cycle * static_cast<double>(spec.n_cycles),
                                 spec.dark_rate_hz * static_cast<double>(spec.n_cycles));
  std::mt19937_64 gen(seed);
  for (std::size_t i = 0; i < spec.bins; ++i) {
    t.bin_start_s.push_back(edges[i]);
    t.bin_width_s.push_back(spec.bin_width_s);
    std::poisson_distribution<std::int64_t> pd(m[i]);
    t.counts.push_back(pd(gen));
  }
  return t;
}

PropagatorCache build_fit_cache(const FluorescenceTrace& trace, const ScaledParams& sp, std::size_t subdivision) {
  trace.validate();
  if (subdivision == 0) throw std::invalid_argument("build_fit_cache: subdivision must be >= 1");
  const double delta = sp.delta, r = sp.recoil_z();
  const double end_tau = seconds_to_tau(trace.edges_s().back(), sp);
  // Largest mean energy whose cooling span fits in the trace.
  double lo = 0.0, hi = (1.0 + delta * delta) / r;
  while (estimated_cooling_span(delta, r, hi) < end_tau) hi *= 2.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (estimated_cooling_span(delta, r, mid) < end_tau ? lo : hi) = mid;
  }
  const double eps_fit = std::max(hi, (1.0 + delta * delta) / r);
  const double min_width = *std::min_element(trace.bin_width_s.begin(), trace.bin_width_s.end());
  const double dtau = seconds_to_tau(min_width, sp) / static_cast<double>(subdivision);
  return build_cache(delta, r, dtau, kTailMassLog * 1.01 * eps_fit);
}

FitResult fit_mean_energy(const FluorescenceTrace& trace, const ScaledParams& sp, const PropagatorCache& cache,
                          const FitOptions& options) {
  trace.validate();
  check_cache_matches(cache, sp);
  const std::size_t n = trace.size();
  if (n < 10) throw std::invalid_argument("fit: need at least 10 bins");
  const auto edges = trace.edges_s();
  const double cycles = static_cast<double>(trace.n_cycles);

  FitResult res;
  res.B = trace.dark_rate_hz * cycles;

  // Amplitude from the steady-state tail.
  const std::size_t tail = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(options.tail_fraction * n)));
  const std::size_t first = n - tail;
  auto rate_over = [&](std::size_t a, std::size_t b) {
    double counts = 0.0, width = 0.0;
    for (std::size_t i = a; i < b; ++i) {
      counts += static_cast<double>(trace.counts[i]);
      width += trace.bin_width_s[i];
    }
    return std::pair{counts, width};
  };
  const auto [tail_counts, tail_width] = rate_over(first, n);
  res.A = tail_counts / tail_width - res.B;
  if (!(res.A > 0.0)) throw CalibrationError("fit: no steady-state signal above background in the trace tail");
  const std::size_t mid = first + tail / 2;
  const auto [c1, w1] = rate_over(first, mid);
  const auto [c2, w2] = rate_over(mid, n);
  const double z = std::abs(c1 / w1 - c2 / w2) / std::sqrt(std::max(c1, 1.0) / (w1 * w1) + std::max(c2, 1.0) / (w2 * w2));
  if (z > options.stationarity_z) {
    std::ostringstream msg;
    msg << "fit: trace tail is not stationary (halves differ by " << z << " sigma); steady state not reached";
    throw CalibrationError(msg.str());
  }
  if (trace.detection_rate_hint) {
    const double hinted = *trace.detection_rate_hint * cycles;
    if (std::abs(hinted - res.A) > 5.0 * std::sqrt(std::max(tail_counts, 1.0)) / tail_width) {
      res.warnings.push_back("tail amplitude disagrees with detection_rate_hint");
    }
  }

  // Per-bin shape w_i R̄_i / R∞; counts are A·shape + B·w.
  auto shape = [&](double mean) {
    return expected_counts(offset_weights(maxwell_boltzmann(mean), cache), cache, sp, edges, 1.0, 0.0);
  };
  auto counts_for = [&](const std::vector<double>& sh, double amp) {
    std::vector<double> m(n);
    for (std::size_t i = 0; i < n; ++i) m[i] = amp * sh[i] + res.B * trace.bin_width_s[i];
    return m;
  };
  auto model = [&](double mean) { return counts_for(shape(mean), res.A); };
  auto nll = [&](double mean) { return poisson_nll(trace.counts, model(mean)); };

  const double r = sp.recoil_z();
  const double hi = cache.eps0_max() / (kTailMassLog * 1.0001);
  const double lo = std::min(1e-3 / r, 1e-3 * hi);
  if (!(hi > lo)) throw std::invalid_argument("fit: cache too short for any mean energy");

  // Log scan, then golden section between the neighbours of the best point.
  const auto grid = log_grid(lo, hi, options.scan_points);
  std::vector<double> scan(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) scan[i] = nll(grid[i]);
  const std::size_t best = static_cast<std::size_t>(std::min_element(scan.begin(), scan.end()) - scan.begin());
  std::size_t minima = 0;
  for (std::size_t i = 1; i + 1 < scan.size(); ++i) {
    if (scan[i] < scan[i - 1] && scan[i] < scan[i + 1]) ++minima;
  }
  if (minima > 1) res.warnings.push_back("likelihood scan has more than one local minimum");

  double a = std::log(grid[best == 0 ? 0 : best - 1]);
  double b = std::log(grid[std::min(best + 1, grid.size() - 1)]);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = nll(std::exp(c)), fd = nll(std::exp(d));
  while (b - a > options.rel_tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = nll(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = nll(std::exp(d));
    }
  }
  double est = std::exp(0.5 * (a + b));
  double f_est = nll(est);

  // Newton polish on the finite-difference curvature.
  {
    const double h = 1e-3 * est;
    const double fp = nll(est + h), fm = nll(est - h);
    const double grad = (fp - fm) / (2.0 * h);
    const double curv = (fp - 2.0 * f_est + fm) / (h * h);
    if (curv > 0.0) {
      const double cand = est - grad / curv;
      if (cand > lo && cand < hi && std::abs(cand - est) < 0.01 * est) {
        const double f_cand = nll(cand);
        if (f_cand < f_est) {
          est = cand;
          f_est = f_cand;
        }
      }
    }
  }

  const double f_flat = nll(lo);
  if (f_flat - f_est < options.sensitivity_nll) {
    res.status = FitStatus::below_sensitivity;
    const double target = f_est + options.upper_bound_nll;
    double ua = std::log(std::max(est, lo)), ub = std::log(hi);
    if (nll(hi) < target) {
      res.warnings.push_back("upper bound limited by the cache range");
      ua = ub;
    } else {
      for (int i = 0; i < 60; ++i) {
        const double m = 0.5 * (ua + ub);
        (nll(std::exp(m)) < target ? ua : ub) = m;
      }
    }
    est = std::exp(0.5 * (ua + ub));
    res.warnings.push_back("no fluorescence rise detected; mean energy is an upper bound");
  }

  const double h = 1e-3 * est;
  const auto s0 = shape(est);
  const auto shape_p = shape(est + h);
  const auto shape_m = shape(est - h);
  const auto m0 = counts_for(s0, res.A);
  double fisher = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dm = res.A * (shape_p[i] - shape_m[i]) / (2.0 * h);
    fisher += dm * dm / m0[i];
  }
  res.sigma_fisher = fisher > 0.0 ? 1.0 / std::sqrt(fisher) : std::numeric_limits<double>::infinity();

  // Poisson error of the tail amplitude, carried into ε̄ through the shift
  // of the likelihood minimum: dε̄/dA = −∂²NLL/∂ε̄∂A / ∂²NLL/∂ε̄².
  double calibration_var = 0.0;
  if (res.status == FitStatus::ok) {
    const double ha = 1e-3 * res.A;
    auto grad = [&](double amp) {
      return (poisson_nll(trace.counts, counts_for(shape_p, amp)) - poisson_nll(trace.counts, counts_for(shape_m, amp))) /
             (2.0 * h);
    };
    const double mixed = (grad(res.A + ha) - grad(res.A - ha)) / (2.0 * ha);
    const double curv = (poisson_nll(trace.counts, counts_for(shape_p, res.A)) - 2.0 * poisson_nll(trace.counts, m0) +
                         poisson_nll(trace.counts, counts_for(shape_m, res.A))) /
                        (h * h);
    if (curv > 0.0) {
      const double slope = -mixed / curv;
      const double var_a = std::max(tail_counts, 1.0) / (tail_width * tail_width);
      calibration_var = slope * slope * var_a;
    }
  }
  res.sigma_calibration = std::sqrt(calibration_var);
  res.mean_energy = est;
  res.sigma = std::sqrt(res.sigma_fisher * res.sigma_fisher + calibration_var);
  if (res.status == FitStatus::below_sensitivity) res.sigma = std::min(res.sigma, est);
  res.mean_energy_r_units = est * r;
  res.temperature_K = energy_to_kelvin(est, sp);
  res.sigma_K = energy_to_kelvin(res.sigma, sp);
  res.nll = poisson_nll(trace.counts, m0);
  res.model = m0;
  res.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    res.residuals[i] = (static_cast<double>(trace.counts[i]) - m0[i]) / std::sqrt(m0[i]);
  }
  return res;
}

HeatingRate heating_rate_from_fits(std::span<const std::pair<double, FitResult>> fits, bool fix_intercept) {
  if (fits.empty() || (!fix_intercept && fits.size() < 2)) {
    throw std::invalid_argument("heating rate: need at least two fits (one with the intercept fixed)");
  }
  HeatingRate out;
  double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [t, fr] : fits) {
    if (!(t >= 0.0)) throw std::invalid_argument("heating rate: durations must be >= 0");
    if (!(fr.sigma_K > 0.0) || !std::isfinite(fr.sigma_K)) {
      throw std::invalid_argument("heating rate: every fit needs a finite sigma_K > 0");
    }
    if (fr.status == FitStatus::below_sensitivity) out.warnings.push_back("a fit below sensitivity enters as its upper bound");
    const double w = 1.0 / (fr.sigma_K * fr.sigma_K);
    s += w;
    sx += w * t;
    sy += w * fr.temperature_K;
    sxx += w * t * t;
    sxy += w * t * fr.temperature_K;
  }
  if (fix_intercept) {
    if (!(sxx > 0.0)) throw std::invalid_argument("heating rate: durations must not all be zero");
    out.slope_K_per_s = sxy / sxx;
    out.sigma_K_per_s = 1.0 / std::sqrt(sxx);
  } else {
    const double det = s * sxx - sx * sx;
    if (!(det > 1e-14 * s * sxx)) throw std::invalid_argument("heating rate: need at least two distinct durations");
    out.slope_K_per_s = (s * sxy - sx * sy) / det;
    out.intercept_K = (sxx * sy - sx * sxy) / det;
    out.sigma_K_per_s = std::sqrt(s / det);
    out.sigma_intercept_K = std::sqrt(sxx / det);
  }
  if (!(out.slope_K_per_s > 0.0)) out.warnings.push_back("heating rate is not positive");
  return out;
}

PropagatorCache build_design_cache(double delta, double max_mean_eps_r) {
  if (!(max_mean_eps_r > 0.0)) throw std::invalid_argument("design cache: mean energy must be > 0");
  const double eps0_max = kTailMassLog * 1.05 * max_mean_eps_r;
  return build_cache(delta, 1.0, default_dtau(delta, 1.0, eps0_max), eps0_max);
}

namespace {

// ε̄r ∫ (∂R̄/∂(ε̄r))² / R̄ dq, q = τ r, on a geometric set of output bins.
double design_information(double mean_eps_r, const PropagatorCache& cache) {
  const double r = cache.recoil_parameter();
  const double mean = mean_eps_r / r;
  const double step = 1e-3 * mean;
  const double span = static_cast<double>(cache.bins()) * cache.dtau();
  std::vector<double> edges{0.0};
  const double first = cache.dtau();
  const std::size_t count = 1200;
  const double ratio = std::pow(span / first, 1.0 / static_cast<double>(count - 1));
  for (std::size_t i = 0; i < count; ++i) edges.push_back(first * std::pow(ratio, static_cast<double>(i)));
  const auto rc = binned_average(offset_weights(maxwell_boltzmann(mean), cache), cache, edges);
  const auto rp = binned_average(offset_weights(maxwell_boltzmann(mean + step), cache), cache, edges);
  const auto rm = binned_average(offset_weights(maxwell_boltzmann(mean - step), cache), cache, edges);
  double integral = 0.0;
  for (std::size_t i = 0; i < rc.size(); ++i) {
    const double deriv = (rp[i] - rm[i]) / (2.0 * step) / r;  // ∂R̄/∂(ε̄r)
    integral += deriv * deriv / rc[i] * (edges[i + 1] - edges[i]) * r;
  }
  return mean_eps_r * integral;
}

}  // namespace

double measurement_time(double delta, double mean_eps_r, double s, const PropagatorCache& cache) {
  if (!(mean_eps_r > 0.0)) throw std::invalid_argument("measurement_time: mean_eps_r must be > 0");
  if (!(s >= 0.0)) throw std::invalid_argument("measurement_time: saturation must be >= 0");
  if (std::abs(cache.delta() - delta) > 1e-12 * std::abs(delta)) {
    throw std::invalid_argument("measurement_time: cache built for a different detuning");
  }
  static const double reference = [] {
    const PropagatorCache ref = build_design_cache(-1.0, 1.0);
    return 1.0 / design_information(1.0, ref);
  }();
  const double info = design_information(mean_eps_r, cache);
  if (!(info > 0.0) || !std::isfinite(info) || info < 1e-300) return std::numeric_limits<double>::infinity();
  return std::sqrt(1.0 + s) / info / reference;
}

}  // namespace recool
