#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "recool/analytic.hpp"
#include "recool/thermal.hpp"

using namespace recool;

namespace {

constexpr double kDelta = -1.0;
constexpr double kR = 0.05;

const PropagatorCache& shared_cache() {
  static const PropagatorCache cache = build_cache(kDelta, kR, 0.5, 60.0 / kR);
  return cache;
}

double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("cache at zero energy has one bin") {
  const PropagatorCache c = build_cache(kDelta, kR, 1.0, 0.0);
  CHECK(c.bins() == 1);
  CHECK(c.rates()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c.rate_limit() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("cache rates are exact bin averages") {
  const double eps0 = 3.0 / kR, dtau = 0.5, step = 0.05;
  const PropagatorCache c = build_cache(kDelta, kR, dtau, eps0);
  const std::size_t per_bin = 10;
  const auto ref = oracle::rk4_trajectory(eps0, kDelta, kR, step, per_bin * (c.bins() + 50));
  double worst = 0.0;
  for (std::size_t n = 0; n < c.bins() + 50; ++n) {
    const double want = (ref[(n + 1) * per_bin].photons - ref[n * per_bin].photons) / dtau;
    worst = std::max(worst, std::abs(c.rate(n) - want));
  }
  // Set by the default ODE tolerance.
  CHECK(worst < 1e-7);
  for (std::size_t n = 0; n <= c.bins(); n += 37) {
    CHECK(c.eps()[n] == doctest::Approx(ref[n * per_bin].eps).epsilon(1e-7));
  }
}

TEST_CASE("midpoint sampling differs from bin averages at second order") {
  const double eps0 = 3.0 / kR;
  auto worst_error = [&](double dtau) {
    const PropagatorCache c = build_cache(kDelta, kR, dtau, eps0);
    std::vector<double> mids;
    mids.push_back(0.0);
    for (std::size_t n = 0; n < c.bins(); ++n) mids.push_back((static_cast<double>(n) + 0.5) * dtau);
    const auto traj = integrate_trajectory(eps0, mids, kDelta, kR, {Recoil::off, 1e-11, 1e-13});
    double worst = 0.0;
    for (std::size_t n = 0; n < c.bins(); ++n) worst = std::max(worst, std::abs(c.rates()[n] - traj[n + 1].dn_dtau));
    return worst;
  };
  const double coarse = worst_error(1.0);
  const double fine = worst_error(0.5);
  CHECK(coarse / fine > 3.5);
  CHECK(coarse / fine < 4.5);
}

TEST_CASE("semigroup property on the grid") {
  const PropagatorCache& c = shared_cache();
  for (std::size_t m : {0u, 10u, 200u}) {
    for (std::size_t n : {5u, 40u, 300u}) {
      if (m + n > c.bins()) continue;
      const std::vector<double> grid = {0.0, static_cast<double>(n) * c.dtau()};
      const auto traj = integrate_trajectory(c.eps()[m], grid, kDelta, kR, {Recoil::off, 1e-11, 1e-13});
      CHECK(traj.back().eps == doctest::Approx(c.eps()[m + n]).epsilon(1e-6));
    }
  }
}

TEST_CASE("recoil-limited cache settles at the steady state") {
  CacheOptions opt;
  opt.recoil = Recoil::on;
  const PropagatorCache c = build_cache(kDelta, kR, 0.5, 10.0 / kR, opt);
  const double es = steady_state_energy(kDelta, kR, Recoil::on);
  CHECK(c.eps().back() == doctest::Approx(es).epsilon(1e-6));
  CHECK(c.rate_limit() == doctest::Approx(scattering_rate(es, kDelta, kR)).epsilon(1e-14));
  CHECK_THROWS_AS(build_cache(kDelta, kR, 0.5, 0.1 * es, opt), std::invalid_argument);
}

TEST_CASE("coarse bins raise a diagnostic") {
  CHECK(build_cache(kDelta, kR, 40.0, 20.0 / kR).warnings.size() == 1);
  CHECK(build_cache(kDelta, kR, 0.5, 20.0 / kR).warnings.empty());
}

TEST_CASE("point mass reproduces the single trajectory") {
  const PropagatorCache& c = shared_cache();
  const auto top = averaged_rate(point_mass(c.eps0_max()), c, c.bins() + 10);
  for (std::size_t n = 0; n < top.size(); ++n) CHECK(top[n].rate == c.rate(n));

  // An energy between nodes: compare with windows shifted by the offset.
  const double start = 37.25;
  const auto ref = oracle::rk4_trajectory(c.eps0_max(), kDelta, kR, 0.05, 20 * 800);
  const double eps_mid = ref[745].eps;  // τ = 37.25
  const auto shifted = averaged_rate(point_mass(eps_mid), c, 600);
  double worst = 0.0;
  for (std::size_t n = 0; n < shifted.size(); ++n) {
    const std::size_t a = 745 + 10 * n;
    worst = std::max(worst, std::abs(shifted[n].rate - (ref[a + 10].photons - ref[a].photons) / c.dtau()));
  }
  CHECK(start == 0.05 * 745);
  CHECK(worst < 1e-5);
}

TEST_CASE("Maxwell-Boltzmann weights") {
  const PropagatorCache& c = shared_cache();
  const OffsetWeights w = offset_weights(maxwell_boltzmann(2.0 / kR), c);
  double total = 0.0;
  for (double x : w.w) total += x;
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK(w.tail_mass == doctest::Approx(std::exp(-30.0)).epsilon(1e-12));

  const auto avg = averaged_rate(w, c, 3000);
  const auto [lo, hi] = std::minmax_element(c.rates().begin(), c.rates().end());
  for (double v : avg) {
    CHECK(v >= *lo * (1 - 1e-12));
    CHECK(v <= *hi * (1 + 1e-12));
  }
  CHECK(averaged_rate(w, c, c.bins() + 5).back() == doctest::Approx(c.rate_limit()).epsilon(1e-12));

  const auto cold = averaged_rate(maxwell_boltzmann(1e-10), c, 50);
  for (const auto& b : cold) CHECK(std::abs(b.rate - 0.5) < 1e-9);

  CHECK_THROWS_AS(offset_weights(maxwell_boltzmann(10.0 / kR), c), std::invalid_argument);
  CHECK_THROWS_AS(offset_weights(point_mass(61.0 / kR), c), std::invalid_argument);
}

TEST_CASE("thermal average against direct quadrature over initial energies") {
  // ⟨R⟩(bin n) = ∫_0^1 R_bin(Ξ(ε(p), ·)) dp with ε(p) = −ε̄ ln(1 − p), midpoint
  // rule in p, each trajectory from the RK4 oracle.
  const PropagatorCache& c = shared_cache();
  const double mean = 2.0 * 0.866 / kR;
  const std::size_t nb = 200, nodes = 200;
  std::vector<double> direct(nb, 0.0);
  for (std::size_t i = 0; i < nodes; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(nodes);
    const auto t = oracle::rk4_trajectory(-mean * std::log1p(-p), kDelta, kR, 0.05, 10 * nb, 128);
    for (std::size_t n = 0; n < nb; ++n) {
      direct[n] += (t[10 * (n + 1)].photons - t[10 * n].photons) / 0.5 / static_cast<double>(nodes);
    }
  }
  const auto avg = averaged_rate(maxwell_boltzmann(mean), c, nb);
  double worst = 0.0;
  for (std::size_t n = 0; n < nb; ++n) worst = std::max(worst, std::abs(avg[n].rate - direct[n]));
  CHECK(worst < 1e-4);
}

TEST_CASE("cumulative and binned forms agree with per-bin rates") {
  const PropagatorCache& c = shared_cache();
  const OffsetWeights w = offset_weights(maxwell_boltzmann(3.0 / kR), c);
  const auto avg = averaged_rate(w, c, 700);
  std::vector<double> taus;
  for (std::size_t n = 0; n <= avg.size(); n += 7) taus.push_back(static_cast<double>(n) * c.dtau());
  const auto s = averaged_photons(w, c, taus);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    double sum = 0.0;
    for (std::size_t n = 0; n < static_cast<std::size_t>(std::lround(taus[i] / c.dtau())); ++n) sum += avg[n] * c.dtau();
    CHECK(s[i] == doctest::Approx(sum).epsilon(1e-10));
  }
  const auto binned = binned_average(w, c, taus);
  for (std::size_t i = 0; i + 1 < taus.size(); ++i) {
    double sum = 0.0;
    for (std::size_t n = 7 * i; n < 7 * (i + 1); ++n) sum += avg[n];
    CHECK(binned[i] == doctest::Approx(sum / 7.0).epsilon(1e-10));
  }
}

TEST_CASE("excess photons of a single trajectory") {
  const PropagatorCache& c = shared_cache();
  const double eps0 = 3.0 / kR;
  const auto ref = oracle::rk4_trajectory(eps0, kDelta, kR, 0.05, 20 * 1000);
  const double want = ref.back().photons - 0.5 * 1000.0;
  CHECK(excess_photons(offset_weights(point_mass(eps0), c), c) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("cache text round trip") {
  const PropagatorCache& c = shared_cache();
  std::stringstream ss;
  write_cache(ss, c);
  const PropagatorCache back = read_cache(ss);
  CHECK(back.bins() == c.bins());
  CHECK(back.delta() == c.delta());
  CHECK(back.dtau() == c.dtau());
  CHECK(back.rate_limit() == c.rate_limit());
  CHECK(std::equal(back.eps().begin(), back.eps().end(), c.eps().begin()));
  CHECK(std::equal(back.rates().begin(), back.rates().end(), c.rates().begin()));
  std::stringstream bad("eps,rate\n1,2\n");
  CHECK_THROWS_AS(read_cache(bad), std::invalid_argument);
}

TEST_CASE("excited thermal distribution") {
  CHECK(std::holds_alternative<PointMass>(make_excited_thermal(3.0, 0.0, 1)));
  const auto d = make_excited_thermal(0.0, 2.0, 42, 1000000);
  const auto& s = std::get<Empirical>(d).samples;
  CHECK(std::abs(sample_mean(s) - 2.0) < 3.0 * sample_sd(s) / std::sqrt(1e6));
  const auto d2 = make_excited_thermal(5.0, 2.0, 43, 1000000);
  const auto& s2 = std::get<Empirical>(d2).samples;
  CHECK(std::abs(sample_mean(s2) - 7.0) < 3.0 * sample_sd(s2) / std::sqrt(1e6));
  CHECK(mean_energy(d2) == doctest::Approx(sample_mean(s2)).epsilon(1e-12));
}

TEST_CASE("excitation delays the fluorescence rise") {
  const PropagatorCache& c = shared_cache();
  const double ec = critical_energies(kDelta, kR).eps_c;
  const auto plain = averaged_rate(maxwell_boltzmann(0.25 / kR), c, 2000);
  const auto kicked = averaged_rate(make_excited_thermal(5.0 * ec, 0.25 / kR, 7), c, 2000);
  auto rise = [&](const std::vector<RateBin>& v) {
    for (const auto& b : v) {
      if (b.rate > 0.95 * c.rate_limit()) return b.tau;
    }
    return std::numeric_limits<double>::infinity();
  };
  CHECK(rise(kicked) > rise(plain));
}

TEST_CASE("parametric amplification") {
  const auto thermal = maxwell_boltzmann(1.0);
  CHECK(std::holds_alternative<MaxwellBoltzmann>(parametric_amplify(thermal, 1.0, 5)));
  CHECK_THROWS_AS(parametric_amplify(thermal, 0.5, 5), std::invalid_argument);
  const auto amp = parametric_amplify(thermal, 3.0, 9);
  const auto& s = std::get<Empirical>(amp).samples;
  const double want = (9.0 + 1.0 / 9.0) / 2.0;
  CHECK(std::abs(sample_mean(s) - want) < 3.0 * sample_sd(s) / std::sqrt(static_cast<double>(s.size())));

  const PropagatorCache c = build_cache(kDelta, kR, 2.0, 250.0 / kR);
  const double ec = critical_energies(kDelta, kR).eps_c;
  const auto base = averaged_rate(maxwell_boltzmann(0.9 * ec), c, 2000);
  const auto pumped = averaged_rate(parametric_amplify(maxwell_boltzmann(0.9 * ec), 3.0, 11), c, 2000);
  auto dip = [](const std::vector<RateBin>& v) {
    double m = INFINITY;
    for (const auto& b : v) m = std::min(m, b.rate);
    return m;
  };
  CHECK(dip(pumped) < dip(base));
}
