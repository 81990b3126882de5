#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "recool/estimation.hpp"

using namespace recool;

namespace {

const ScaledParams& mg() {
  static const ScaledParams sp = scale_parameters(PhysicalParams::magnesium25());
  return sp;
}

SynthesisSpec layout_spec() {
  SynthesisSpec s;
  s.bins = 100;
  s.bin_width_s = 40e-6;
  s.n_cycles = 1000;
  return s;
}

FluorescenceTrace empty_layout(const SynthesisSpec& s) {
  FluorescenceTrace t;
  for (std::size_t i = 0; i < s.bins; ++i) {
    t.bin_start_s.push_back(static_cast<double>(i) * s.bin_width_s);
    t.bin_width_s.push_back(s.bin_width_s);
    t.counts.push_back(0);
  }
  t.n_cycles = s.n_cycles;
  return t;
}

const PropagatorCache& mg_cache() {
  static const PropagatorCache cache = build_fit_cache(empty_layout(layout_spec()), mg());
  return cache;
}

FitResult exact_fit(double t_K, double sigma_K) {
  FitResult f;
  f.temperature_K = t_K;
  f.sigma_K = sigma_K;
  return f;
}

}  // namespace

TEST_CASE("trace csv and metadata round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "recool_trace_test";
  std::filesystem::create_directories(dir);
  FluorescenceTrace t = empty_layout(layout_spec());
  for (std::size_t i = 0; i < t.size(); ++i) t.counts[i] = static_cast<std::int64_t>(i * 7 % 13);
  t.dark_rate_hz = 12.5;
  t.heat_duration_s = 25.0;
  write_trace(t, dir / "t.csv", dir / "t.json");
  const auto u = read_trace(dir / "t.csv", dir / "t.json");
  CHECK(u.counts == t.counts);
  CHECK(u.bin_start_s == t.bin_start_s);
  CHECK(u.bin_width_s == t.bin_width_s);
  CHECK(u.n_cycles == t.n_cycles);
  CHECK(u.dark_rate_hz == t.dark_rate_hz);
  CHECK(*u.heat_duration_s == 25.0);
  CHECK_FALSE(u.detection_rate_hint.has_value());

  FluorescenceTrace bad = t;
  bad.counts[3] = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = t;
  bad.bin_start_s[5] += 1e-6;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = t;
  bad.bin_width_s[0] = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  std::ofstream(dir / "broken.csv") << "bin_start_s,bin_width_s,counts\n0,1e-5,x\n";
  CHECK_THROWS_AS(read_trace(dir / "broken.csv", dir / "t.json"), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic trace at 5.1/r is recovered") {
  const auto& sp = mg();
  const double truth = 5.1 / sp.recoil_z();
  const auto trace = synthesize_trace(maxwell_boltzmann(truth), sp, mg_cache(), layout_spec(), 20261019);
  const auto fit = fit_mean_energy(trace, sp, mg_cache());
  CHECK(fit.status == FitStatus::ok);
  CHECK(fit.sigma > 0.0);
  CHECK(fit.sigma >= fit.sigma_fisher);
  CHECK(std::abs(fit.mean_energy - truth) < 2.0 * fit.sigma);
  CHECK(std::abs(fit.temperature_K - energy_to_kelvin(truth, sp)) < 2.0 * fit.sigma_K);
  CHECK(energy_to_kelvin(truth, sp) == doctest::Approx(3.9).epsilon(0.02));
  CHECK(fit.A == doctest::Approx(*trace.detection_rate_hint * 1000).epsilon(0.03));
  CHECK(fit.B == 0.0);
  CHECK(fit.residuals.size() == trace.size());
  CHECK(fit.warnings.empty());
}

TEST_CASE("noiseless trace from a cold ion is below sensitivity") {
  const auto& sp = mg();
  auto spec = layout_spec();
  auto trace = empty_layout(spec);
  const double amp = 1e-3 * mg_cache().rate_limit() / sp.t0_s * 1000.0;
  const auto m =
      expected_counts(offset_weights(point_mass(0.0), mg_cache()), mg_cache(), sp, trace.edges_s(), amp, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) trace.counts[i] = std::llround(m[i]);
  const auto fit = fit_mean_energy(trace, sp, mg_cache());
  CHECK(fit.status == FitStatus::below_sensitivity);
  CHECK(fit.mean_energy > 0.0);
  CHECK(fit.sigma > 0.0);
  CHECK_FALSE(fit.warnings.empty());
}

TEST_CASE("sigma shrinks as one over root cycles") {
  const auto& sp = mg();
  const double truth = 5.1 / sp.recoil_z();
  const auto trace = synthesize_trace(maxwell_boltzmann(truth), sp, mg_cache(), layout_spec(), 7);
  auto doubled = trace;
  doubled.n_cycles *= 2;
  for (auto& c : doubled.counts) c *= 2;
  const auto f1 = fit_mean_energy(trace, sp, mg_cache());
  const auto f2 = fit_mean_energy(doubled, sp, mg_cache());
  CHECK(f2.mean_energy == doctest::Approx(f1.mean_energy).epsilon(1e-3));
  CHECK(f1.sigma / f2.sigma == doctest::Approx(std::sqrt(2.0)).epsilon(0.05));
  CHECK(f1.sigma_fisher / f2.sigma_fisher == doctest::Approx(std::sqrt(2.0)).epsilon(0.05));
}

TEST_CASE("unsettled tail is a calibration error") {
  const auto& sp = mg();
  // Ends 200 µs into the rise, with enough counts to resolve the drift.
  auto spec = layout_spec();
  spec.bins = 20;
  spec.bin_width_s = 10e-6;
  spec.n_cycles = 10'000'000;
  const auto trace = synthesize_trace(maxwell_boltzmann(5.1 / sp.recoil_z()), sp, mg_cache(), spec, 3);
  CHECK_THROWS_AS(fit_mean_energy(trace, sp, mg_cache()), CalibrationError);
  auto dark = empty_layout(layout_spec());
  CHECK_THROWS_AS(fit_mean_energy(dark, sp, mg_cache()), CalibrationError);
}

TEST_CASE("heating rate regression") {
  {
    const std::vector<std::pair<double, FitResult>> fits{{1.0, exact_fit(1.0, 0.1)}, {2.0, exact_fit(2.0, 0.1)}};
    const auto h = heating_rate_from_fits(fits);
    CHECK(h.slope_K_per_s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(h.intercept_K == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(h.warnings.empty());
  }
  {
    const std::vector<std::pair<double, FitResult>> fits{{25.0, exact_fit(3.9, 0.3)}};
    const auto h = heating_rate_from_fits(fits, true);
    CHECK(h.slope_K_per_s == doctest::Approx(0.156).epsilon(1e-12));
    CHECK(h.sigma_K_per_s == doctest::Approx(0.3 / 25.0).epsilon(1e-12));
  }
  {
    const std::vector<std::pair<double, FitResult>> fits{{1.0, exact_fit(2.0, 0.1)}, {2.0, exact_fit(1.0, 0.1)}};
    const auto h = heating_rate_from_fits(fits);
    CHECK(h.slope_K_per_s == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(h.warnings.size() == 1);
  }
  {
    // Gaussian scatter around T = 0.5 + 0.2 t: slope within 2σ, and the
    // reported σ agrees with the textbook (Σw Σwt² − (Σwt)²) form.
    std::mt19937_64 gen(11);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::pair<double, FitResult>> fits;
    double s = 0, sx = 0, sxx = 0;
    for (int i = 1; i <= 8; ++i) {
      const double t = 3.0 * i, sig = 0.05 + 0.01 * i;
      fits.emplace_back(t, exact_fit(0.5 + 0.2 * t + sig * noise(gen), sig));
      s += 1 / (sig * sig);
      sx += t / (sig * sig);
      sxx += t * t / (sig * sig);
    }
    const auto h = heating_rate_from_fits(fits);
    CHECK(std::abs(h.slope_K_per_s - 0.2) < 2.0 * h.sigma_K_per_s);
    CHECK(h.sigma_K_per_s == doctest::Approx(std::sqrt(s / (s * sxx - sx * sx))).epsilon(1e-12));
  }
  const std::vector<std::pair<double, FitResult>> one{{1.0, exact_fit(1.0, 0.1)}};
  CHECK_THROWS_AS(heating_rate_from_fits(one), std::invalid_argument);
}

TEST_CASE("measurement time scales exactly with root one plus s") {
  const auto cache = build_design_cache(-1.0, 4.0);
  const double base = measurement_time(-1.0, 2.0, 0.0, cache);
  for (double s : {0.1, 1.0, 3.0}) {
    const double a = measurement_time(-1.0, 2.0, s, cache);
    const double b = measurement_time(-1.0, 2.0, 2.0 * s, cache);
    CHECK(b / a == doctest::Approx(std::sqrt((1.0 + 2.0 * s) / (1.0 + s))).epsilon(1e-14));
    CHECK(a / base == doctest::Approx(std::sqrt(1.0 + s)).epsilon(1e-14));
  }
  const auto ref = build_design_cache(-1.0, 1.0);
  CHECK(measurement_time(-1.0, 1.0, 0.0, ref) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("measurement time depends on r only through mean energy times r") {
  const double delta = -1.0, mean_r = 2.0;
  const double eps0_r = 13.8155 * 1.05 * mean_r;
  for (double r : {0.25, 0.0018}) {
    const auto c1 = build_design_cache(delta, mean_r);
    const auto cr = build_cache(delta, r, default_dtau(delta, r, eps0_r / r), eps0_r / r);
    CHECK(measurement_time(delta, mean_r, 0.0, cr) ==
          doctest::Approx(measurement_time(delta, mean_r, 0.0, c1)).epsilon(1e-9));
  }
}

TEST_CASE("measurement time falls with energy and toward resonance") {
  const auto cache = build_design_cache(-1.0, 10.0);
  double prev = measurement_time(-1.0, 1.0, 0.0, cache);
  for (double e : {2.0, 4.0, 7.0, 10.0}) {
    const double t = measurement_time(-1.0, e, 0.0, cache);
    CHECK(t < prev);
    prev = t;
  }
  double prev_d = std::numeric_limits<double>::infinity();
  for (double d : {-std::sqrt(3.0), -1.0, -0.6, -0.3}) {
    const double t = measurement_time(d, 4.0, 0.0, build_design_cache(d, 4.0));
    CHECK(t < prev_d);
    prev_d = t;
  }
}
