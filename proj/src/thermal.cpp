#include "recool/thermal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <boost/numeric/odeint.hpp>
#include "json.hpp"

#include "recool/numeric.hpp"
#include "recool/simd/kernels.hpp"

namespace recool {
namespace {

namespace odeint = boost::numeric::odeint;
using State2 = std::array<double, 2>;

constexpr double kSettledTolerance = 1e-12;
constexpr double kBinVariationWarning = 0.05;

double total_slope(double eps, double delta, double r, Recoil recoil) {
  const RatePair rp = rates(std::max(eps, 0.0), delta, r);
  return rp.de_dtau + (recoil == Recoil::on ? recoil_rate(rp.dn_dtau, r) : 0.0);
}

void check_energy(double eps, const char* what) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw std::invalid_argument(std::string(what) + ": energy must be finite and >= 0");
}

// Fractional offset (in bins) of the point where the reference trajectory
// passes energy `eps`.
double locate(double eps, const PropagatorCache& cache) {
  const auto e = cache.eps();
  const std::size_t last = e.size() - 1;
  if (eps >= e[0]) return 0.0;
  if (eps <= e[last]) return static_cast<double>(last);
  // First node with energy below eps; e is nonincreasing.
  const auto it = std::upper_bound(e.begin(), e.end(), eps, [](double v, double x) { return v > x; });
  const std::size_t k = static_cast<std::size_t>(it - e.begin()) - 1;
  const double e0 = e[k], e1 = e[k + 1];
  if (e0 == e1) return static_cast<double>(k);
  const double h = cache.dtau();
  const double d0 = h * total_slope(e0, cache.delta(), cache.recoil_parameter(), cache.recoil());
  const double d1 = h * total_slope(e1, cache.delta(), cache.recoil_parameter(), cache.recoil());
  double lo = 0.0, hi = 1.0;
  for (int it2 = 0; it2 < 60; ++it2) {
    const double s = 0.5 * (lo + hi);
    const double s2 = s * s, s3 = s2 * s;
    const double v = (2 * s3 - 3 * s2 + 1) * e0 + (s3 - 2 * s2 + s) * d0 + (-2 * s3 + 3 * s2) * e1 + (s3 - s2) * d1;
    (v > eps ? lo : hi) = s;
  }
  return static_cast<double>(k) + 0.5 * (lo + hi);
}

void add_at_offset(std::vector<double>& w, double offset, double mass) {
  const std::size_t last = w.size() - 1;
  const double fl = std::floor(offset);
  const std::size_t k = std::min(static_cast<std::size_t>(fl), last);
  const double f = offset - fl;
  if (k == last || f == 0.0) {
    w[k] += mass;
    return;
  }
  w[k] += mass * (1.0 - f);
  w[k + 1] += mass * f;
}

// Leading offsets holding less than 1e-18 of the mass in total; skipping
// them changes no result at double precision.
std::size_t leading_zeros(std::span<const double> w) {
  std::size_t k = 0;
  double skipped = 0.0;
  while (k < w.size() && skipped + w[k] < 1e-18) skipped += w[k++];
  return k;
}

std::vector<double> suffix_sums(std::span<const double> w, bool first_moment) {
  std::vector<double> s(w.size() + 1, 0.0);
  for (std::size_t k = w.size(); k-- > 0;) {
    s[k] = s[k + 1] + (first_moment ? static_cast<double>(k) * w[k] : w[k]);
  }
  return s;
}

}  // namespace

EnergyDistribution maxwell_boltzmann(double mean) {
  if (!(mean > 0.0) || !std::isfinite(mean)) throw std::invalid_argument("maxwell_boltzmann: mean must be > 0");
  return MaxwellBoltzmann{mean};
}

EnergyDistribution point_mass(double eps0) {
  check_energy(eps0, "point_mass");
  return PointMass{eps0};
}

EnergyDistribution empirical(std::vector<double> samples, std::vector<double> weights) {
  if (samples.empty()) throw std::invalid_argument("empirical: no samples");
  for (double s : samples) check_energy(s, "empirical");
  if (weights.empty()) weights.assign(samples.size(), 1.0);
  if (weights.size() != samples.size()) throw std::invalid_argument("empirical: weights and samples differ in length");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("empirical: weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("empirical: weights sum to zero");
  for (double& w : weights) w /= total;
  return Empirical{std::move(samples), std::move(weights)};
}

double mean_energy(const EnergyDistribution& dist) {
  if (const auto* mb = std::get_if<MaxwellBoltzmann>(&dist)) return mb->mean;
  if (const auto* pm = std::get_if<PointMass>(&dist)) return pm->eps0;
  const auto& em = std::get<Empirical>(dist);
  double m = 0.0;
  for (std::size_t i = 0; i < em.samples.size(); ++i) m += em.weights[i] * em.samples[i];
  return m;
}

std::vector<double> sample_energies(const EnergyDistribution& dist, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> out(n);
  if (const auto* mb = std::get_if<MaxwellBoltzmann>(&dist)) {
    std::exponential_distribution<double> ex(1.0 / mb->mean);
    for (double& e : out) e = ex(gen);
  } else if (const auto* pm = std::get_if<PointMass>(&dist)) {
    std::fill(out.begin(), out.end(), pm->eps0);
  } else {
    const auto& em = std::get<Empirical>(dist);
    std::discrete_distribution<std::size_t> pick(em.weights.begin(), em.weights.end());
    for (double& e : out) e = em.samples[pick(gen)];
  }
  return out;
}

EnergyDistribution make_excited_thermal(double eps0, double mean, std::uint64_t seed, std::size_t n) {
  check_energy(eps0, "make_excited_thermal");
  check_energy(mean, "make_excited_thermal");
  if (mean == 0.0) return PointMass{eps0};
  if (n == 0) throw std::invalid_argument("make_excited_thermal: need at least one sample");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, std::sqrt(mean / 2.0));
  const double a = std::sqrt(eps0);
  std::vector<double> s(n);
  for (double& e : s) {
    const double u = g(gen) + a;
    const double v = g(gen);
    e = u * u + v * v;
  }
  return empirical(std::move(s));
}

EnergyDistribution parametric_amplify(const EnergyDistribution& dist, double gain, std::uint64_t seed, std::size_t n) {
  if (!(gain >= 1.0) || !std::isfinite(gain)) throw std::invalid_argument("parametric_amplify: gain must be >= 1");
  if (gain == 1.0) return dist;
  Empirical base;
  if (const auto* em = std::get_if<Empirical>(&dist)) {
    base = *em;
  } else {
    if (n == 0) throw std::invalid_argument("parametric_amplify: need at least one sample");
    base = std::get<Empirical>(empirical(sample_energies(dist, n, derive_seed(seed, 1))));
  }
  std::mt19937_64 gen(derive_seed(seed, 2));
  std::uniform_real_distribution<double> angle(0.0, two_pi);
  const double g2 = gain * gain;
  for (double& e : base.samples) {
    const double th = angle(gen);
    const double c = std::cos(th), s = std::sin(th);
    e = e * (g2 * c * c + s * s / g2);
  }
  return base;
}

PropagatorCache::PropagatorCache(double delta, double r, double dtau, double eps0_max, Recoil recoil,
                                 std::vector<double> eps, std::vector<double> rates, double rate_limit)
    : delta_(delta),
      r_(r),
      dtau_(dtau),
      eps0_max_(eps0_max),
      recoil_(recoil),
      eps_(std::move(eps)),
      rates_(std::move(rates)),
      rate_limit_(rate_limit) {
  if (!(dtau_ > 0.0)) throw std::invalid_argument("PropagatorCache: dtau must be > 0");
  if (rates_.empty() || eps_.size() != rates_.size() + 1) {
    throw std::invalid_argument("PropagatorCache: need bins >= 1 and one more energy node than bins");
  }
  for (std::size_t i = 1; i < eps_.size(); ++i) {
    if (eps_[i] > eps_[i - 1]) throw std::invalid_argument("PropagatorCache: energies must not increase");
  }
  photons_.resize(eps_.size());
  photons_[0] = 0.0;
  for (std::size_t i = 0; i < rates_.size(); ++i) photons_[i + 1] = photons_[i] + rates_[i] * dtau_;
}

double PropagatorCache::photons_at(double tau) const {
  if (!(tau >= 0.0)) throw std::invalid_argument("photons_at: tau must be >= 0");
  const double x = tau / dtau_;
  const std::size_t last = rates_.size();
  if (x >= static_cast<double>(last)) return photons_[last] + (tau - static_cast<double>(last) * dtau_) * rate_limit_;
  const auto k = static_cast<std::size_t>(x);
  return photons_[k] + (x - static_cast<double>(k)) * dtau_ * rates_[k];
}

double estimated_cooling_span(double delta, double r, double eps0_max) {
  if (!(delta < 0.0)) throw std::invalid_argument("cooling span: detuning must be < 0");
  if (!(r > 0.0)) throw std::invalid_argument("cooling span: recoil parameter must be > 0");
  const double d2 = 1.0 + delta * delta;
  const double kappa = 4.0 * -delta * r / (d2 * d2);
  const double eps_ld = d2 / r;
  double hot = 0.0;
  if (eps0_max > eps_ld) {
    hot = 4.0 * std::sqrt(r) / (3.0 * -delta) * (std::pow(eps0_max, 1.5) - std::pow(eps_ld, 1.5));
  }
  return hot + 30.0 / kappa;
}

double default_dtau(double delta, double r, double eps0_max) {
  const double d2 = 1.0 + delta * delta;
  const double kappa = 4.0 * std::abs(delta) * r / (d2 * d2);
  return std::min(0.05 / kappa, estimated_cooling_span(delta, r, eps0_max) / 4096.0);
}

PropagatorCache build_cache(double delta, double r, double dtau, double eps0_max, const CacheOptions& options) {
  if (!(dtau > 0.0) || !std::isfinite(dtau)) throw std::invalid_argument("build_cache: dtau must be > 0");
  check_energy(eps0_max, "build_cache");
  if (!(delta < 0.0)) throw std::invalid_argument("build_cache: detuning must be < 0");
  if (!(r > 0.0)) throw std::invalid_argument("build_cache: recoil parameter must be > 0");
  const Recoil recoil = options.recoil;
  const double eps_ss = steady_state_energy(delta, r, recoil);
  if (recoil == Recoil::on && eps0_max < eps_ss) {
    throw std::invalid_argument("build_cache: eps0_max lies below the recoil steady state");
  }
  const double limit = scattering_rate(eps_ss, delta, r);
  auto settled = [&](double e) { return std::abs(scattering_rate(e, delta, r) - limit) <= kSettledTolerance * limit; };

  std::vector<double> eps{eps0_max};
  std::vector<double> bin_rates;
  if (settled(eps0_max)) {
    eps.push_back(eps0_max);
    bin_rates.push_back(limit);
    return PropagatorCache(delta, r, dtau, eps0_max, recoil, std::move(eps), std::move(bin_rates), limit);
  }

  // Integrated in u = εr against q = τr, with photons carried as N·r, so the
  // trajectory depends on r only through the recoil term.
  auto system = [=](const State2& y, State2& dydt, double) {
    const RatePair rp = rates(std::max(y[0], 0.0) / r, delta, r);
    dydt[0] = rp.de_dtau + (recoil == Recoil::on ? recoil_rate(rp.dn_dtau, r) : 0.0);
    dydt[1] = rp.dn_dtau;
  };
  const double dq = dtau * r;
  auto stepper = odeint::make_dense_output(options.abs_tol, options.rel_tol, odeint::runge_kutta_dopri5<State2>());
  stepper.initialize(State2{eps0_max * r, 0.0}, 0.0, 0.1 * dq);

  double last_photons = 0.0;
  State2 x{};
  for (std::size_t n = 1;; ++n) {
    if (n > options.max_bins) throw NumericalError("build_cache: trajectory did not settle within max_bins");
    const double q = static_cast<double>(n) * dq;
    while (stepper.current_time() < q) stepper.do_step(system);
    stepper.calc_state(q, x);
    if (!std::isfinite(x[0]) || !std::isfinite(x[1])) throw NumericalError("build_cache: non-finite state");
    const double e = std::max(x[0], 0.0) / r;
    eps.push_back(std::min(e, eps.back()));
    bin_rates.push_back((x[1] - last_photons) / dq);
    last_photons = x[1];
    if (settled(e)) break;
  }

  PropagatorCache cache(delta, r, dtau, eps0_max, recoil, std::move(eps), std::move(bin_rates), limit);
  const auto rr = cache.rates();
  for (std::size_t n = 1; n < rr.size(); ++n) {
    const double change = std::abs(rr[n] - rr[n - 1]) / std::max(rr[n], rr[n - 1]);
    if (change > kBinVariationWarning) {
      std::ostringstream msg;
      msg << "scattering rate changes by " << 100.0 * change << "% between bins " << n - 1 << " and " << n
          << " (tau = " << static_cast<double>(n) * dtau << "); reduce dtau";
      cache.warnings.push_back(msg.str());
      break;
    }
  }
  return cache;
}

OffsetWeights offset_weights(const EnergyDistribution& dist, const PropagatorCache& cache) {
  const auto e = cache.eps();
  const std::size_t last = e.size() - 1;
  OffsetWeights out;
  out.w.assign(e.size(), 0.0);
  auto& w = out.w;

  if (const auto* mb = std::get_if<MaxwellBoltzmann>(&dist)) {
    const double m = mb->mean;
    out.tail_mass = std::exp(-cache.eps0_max() / m);
    if (out.tail_mass > max_tail_mass) {
      throw std::invalid_argument("averaged_rate: distribution mass above eps0_max exceeds 1e-6; extend the cache");
    }
    for (std::size_t k = 0; k < last; ++k) {
      const double hi = e[k], lo = e[k + 1];
      const double width = hi - lo;
      if (width <= 0.0 || lo / m > 745.0) continue;
      const double half = 0.5 * width / m;
      // The sinh form overflows for intervals far wider than the mean.
      const double mass = half < 300.0 ? 2.0 * std::exp(-0.5 * (hi + lo) / m) * std::sinh(half)
                                       : std::exp(-lo / m) * -std::expm1(-width / m);
      // Mean position within the interval under the exponential density.
      const double x = width / m;
      const double f = x < 1e-6 ? 0.5 + x / 12.0 : 1.0 - (1.0 - x / std::expm1(x)) / x;
      w[k] += mass * (1.0 - f);
      w[k + 1] += mass * f;
    }
    w[last] += -std::expm1(-e[last] / m);
    w[0] += out.tail_mass;
    return out;
  }

  if (const auto* pm = std::get_if<PointMass>(&dist)) {
    if (pm->eps0 > cache.eps0_max() * (1.0 + 1e-12)) {
      throw std::invalid_argument("averaged_rate: point mass lies above eps0_max; extend the cache");
    }
    add_at_offset(w, locate(pm->eps0, cache), 1.0);
    return out;
  }

  const auto& em = std::get<Empirical>(dist);
  for (std::size_t i = 0; i < em.samples.size(); ++i) {
    if (em.samples[i] > cache.eps0_max()) {
      out.tail_mass += em.weights[i];
      w[0] += em.weights[i];
    } else {
      add_at_offset(w, locate(em.samples[i], cache), em.weights[i]);
    }
  }
  if (out.tail_mass > max_tail_mass) {
    throw std::invalid_argument("averaged_rate: distribution mass above eps0_max exceeds 1e-6; extend the cache");
  }
  return out;
}

std::vector<double> averaged_rate(const OffsetWeights& weights, const PropagatorCache& cache, std::size_t n_bins) {
  const auto& w = weights.w;
  const auto rr = cache.rates();
  const std::size_t bins = rr.size();
  if (w.size() != bins + 1) throw std::invalid_argument("averaged_rate: weights do not match the cache");
  const auto suffix = suffix_sums(w, false);
  const std::size_t lead = leading_zeros(w);
  std::vector<double> out(n_bins);
  for (std::size_t n = 0; n < n_bins; ++n) {
    if (n >= bins) {
      out[n] = cache.rate_limit() * suffix[0];
      continue;
    }
    const std::size_t overlap = bins - n;
    out[n] = cache.rate_limit() * suffix[overlap];
    if (overlap > lead) {
      out[n] += simd::dot(std::span<const double>(w).subspan(lead, overlap - lead), rr.subspan(n + lead));
    }
  }
  return out;
}

std::vector<RateBin> averaged_rate(const EnergyDistribution& dist, const PropagatorCache& cache, std::size_t n_bins) {
  const auto r = averaged_rate(offset_weights(dist, cache), cache, n_bins);
  std::vector<RateBin> out(n_bins);
  for (std::size_t n = 0; n < n_bins; ++n) out[n] = {static_cast<double>(n) * cache.dtau(), r[n]};
  return out;
}

std::vector<double> averaged_photons(const OffsetWeights& weights, const PropagatorCache& cache,
                                     std::span<const double> taus) {
  const auto& w = weights.w;
  const auto c = cache.photons();
  const std::size_t last = c.size() - 1;
  if (w.size() != c.size()) throw std::invalid_argument("averaged_photons: weights do not match the cache");
  const auto suffix = suffix_sums(w, false);
  const auto moment = suffix_sums(w, true);
  const std::size_t lead = leading_zeros(w);
  const double step = cache.rate_limit() * cache.dtau();
  // Σ_k w_k P(k + j) for integer shift j.
  auto shifted = [&](std::size_t j) {
    const std::size_t overlap = j <= last ? last + 1 - j : 0;
    double s = 0.0;
    if (overlap > lead) s = simd::dot(std::span<const double>(w).subspan(lead, overlap - lead), c.subspan(j + lead));
    // Remaining k ≥ overlap land beyond the last node.
    const double jm = static_cast<double>(j) - static_cast<double>(last);
    s += (c[last] + jm * step) * suffix[overlap] + step * moment[overlap];
    return s;
  };
  const double base = shifted(0);
  std::vector<double> out(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const double t = taus[i];
    if (!(t >= 0.0) || !std::isfinite(t)) throw std::invalid_argument("averaged_photons: tau must be finite and >= 0");
    const double x = t / cache.dtau();
    const double fl = std::floor(x);
    const auto j = static_cast<std::size_t>(fl);
    const double f = x - fl;
    double s = shifted(j);
    if (f > 0.0) s = (1.0 - f) * s + f * shifted(j + 1);
    out[i] = s - base;
  }
  return out;
}

std::vector<double> binned_average(const OffsetWeights& weights, const PropagatorCache& cache,
                                   std::span<const double> edges) {
  if (edges.size() < 2) throw std::invalid_argument("binned_average: need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw std::invalid_argument("binned_average: edges must increase");
  }
  const auto s = averaged_photons(weights, cache, edges);
  std::vector<double> out(edges.size() - 1);
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) out[i] = (s[i + 1] - s[i]) / (edges[i + 1] - edges[i]);
  return out;
}

double excess_photons(const OffsetWeights& weights, const PropagatorCache& cache) {
  const auto c = cache.photons();
  const std::size_t last = c.size() - 1;
  if (weights.w.size() != c.size()) throw std::invalid_argument("excess_photons: weights do not match the cache");
  const double step = cache.rate_limit() * cache.dtau();
  std::vector<double> excess(c.size());
  for (std::size_t k = 0; k <= last; ++k) excess[k] = (c[last] - c[k]) - static_cast<double>(last - k) * step;
  return simd::dot(weights.w, excess);
}

void write_cache(std::ostream& out, const PropagatorCache& cache) {
  nlohmann::json header = {{"delta", cache.delta()},
                           {"r", cache.recoil_parameter()},
                           {"dtau", cache.dtau()},
                           {"eps0_max", cache.eps0_max()},
                           {"recoil", cache.recoil() == Recoil::on},
                           {"rate_limit", cache.rate_limit()},
                           {"bins", cache.bins()}};
  out << "# " << header.dump() << "\n";
  out << "eps,rate\n";
  const auto e = cache.eps();
  for (std::size_t k = 0; k < e.size(); ++k) {
    out << format_double(e[k]) << ',' << format_double(cache.rate(k)) << '\n';
  }
}

PropagatorCache read_cache(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw std::invalid_argument("read_cache: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line.substr(2));
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(std::string("read_cache: bad header: ") + ex.what());
  }
  if (!std::getline(in, line) || line != "eps,rate") throw std::invalid_argument("read_cache: missing column line");
  std::vector<double> eps, rr;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("read_cache: malformed row: " + line);
    try {
      eps.push_back(std::stod(line.substr(0, comma)));
      rr.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw std::invalid_argument("read_cache: malformed row: " + line);
    }
  }
  if (eps.size() < 2) throw std::invalid_argument("read_cache: too few rows");
  rr.pop_back();
  try {
    const auto bins = header.at("bins").get<std::size_t>();
    if (bins != rr.size()) throw std::invalid_argument("read_cache: row count does not match header");
    return PropagatorCache(header.at("delta").get<double>(), header.at("r").get<double>(),
                           header.at("dtau").get<double>(), header.at("eps0_max").get<double>(),
                           header.at("recoil").get<bool>() ? Recoil::on : Recoil::off, std::move(eps), std::move(rr),
                           header.at("rate_limit").get<double>());
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(std::string("read_cache: bad header: ") + ex.what());
  }
}

}  // namespace recool
