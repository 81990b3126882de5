#include "recool/units.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "recool/numeric.hpp"

namespace recool {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_number(std::string_view key, std::string_view value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end || !std::isfinite(out)) {
    throw std::invalid_argument("config: bad value for '" + std::string(key) + "': '" +
                                std::string(value) + "'");
  }
  return out;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

constexpr double kMHz = 1e6;

}  // namespace

void PhysicalParams::validate() const {
  require(mass_kg > 0.0 && std::isfinite(mass_kg), "mass must be positive");
  require(wavelength_m > 0.0 && std::isfinite(wavelength_m), "wavelength must be positive");
  require(gamma_rad_s > 0.0 && std::isfinite(gamma_rad_s), "gamma must be positive");
  require(std::isfinite(detuning_rad_s), "detuning must be finite");
  require(saturation >= 0.0 && std::isfinite(saturation), "saturation must be >= 0");
  for (double k : k_projection) require(std::abs(k) <= 1.0, "|k_projection| must be <= 1");
  for (double w : secular_freqs_rad_s) require(w >= 0.0 && std::isfinite(w), "secular frequencies must be >= 0");
  require(rf_freq_rad_s >= 0.0 && std::isfinite(rf_freq_rad_s), "rf frequency must be >= 0");
}

double PhysicalParams::wavenumber() const { return two_pi / wavelength_m; }

double PhysicalParams::rabi_frequency() const { return gamma_rad_s * std::sqrt(saturation / 2.0); }

PhysicalParams PhysicalParams::magnesium25() {
  PhysicalParams p;
  p.mass_kg = 25.0 * constants::atomic_mass;
  p.wavelength_m = 279.6e-9;
  p.gamma_rad_s = two_pi * 41.4e6;
  p.detuning_rad_s = -two_pi * 20e6;
  p.saturation = 0.9;
  p.k_projection = {0.0, 0.0, 0.71};
  p.secular_freqs_rad_s = {0.0, 0.0, two_pi * 4.0e6};
  return p;
}

bool ScaledParams::has_time_scale() const { return std::isfinite(t0_s) && t0_s > 0.0; }

ScaledParams scale_parameters(const PhysicalParams& p, TimeScale time) {
  p.validate();
  if (time == TimeScale::required && p.saturation <= 0.0) {
    throw std::invalid_argument("saturation = 0 leaves the time scale t0 undefined");
  }
  const double hbar = constants::hbar;
  ScaledParams sp;
  sp.e0_joule = 0.5 * hbar * p.gamma_rad_s * std::sqrt(1.0 + p.saturation);
  sp.t0_s = p.saturation > 0.0 ? (1.0 + p.saturation) / (p.gamma_rad_s * 0.5 * p.saturation)
                               : std::numeric_limits<double>::infinity();
  sp.delta = hbar * p.detuning_rad_s / sp.e0_joule;
  const double k = p.wavenumber();
  for (int i = 0; i < 3; ++i) {
    const double hk = hbar * k * p.k_projection[i];
    sp.recoil[i] = hk * hk / (2.0 * p.mass_kg * sp.e0_joule);
    sp.secular_tilde[i] = hbar * p.secular_freqs_rad_s[i] / sp.e0_joule;
  }
  sp.omega_tilde = hbar * p.rf_freq_rad_s / sp.e0_joule;
  return sp;
}

PhysicalParams unscale_parameters(const ScaledParams& sp, double mass_kg, double wavelength_m,
                                  double saturation, double rf_freq_rad_s) {
  require(sp.e0_joule > 0.0, "e0 must be positive");
  const double hbar = constants::hbar;
  PhysicalParams p;
  p.mass_kg = mass_kg;
  p.wavelength_m = wavelength_m;
  p.saturation = saturation;
  p.gamma_rad_s = 2.0 * sp.e0_joule / (hbar * std::sqrt(1.0 + saturation));
  p.detuning_rad_s = sp.delta * sp.e0_joule / hbar;
  const double k = two_pi / wavelength_m;
  for (int i = 0; i < 3; ++i) {
    p.k_projection[i] = std::sqrt(sp.recoil[i] * 2.0 * mass_kg * sp.e0_joule) / (hbar * k);
    p.secular_freqs_rad_s[i] = sp.secular_tilde[i] * sp.e0_joule / hbar;
  }
  p.rf_freq_rad_s = rf_freq_rad_s > 0.0 ? rf_freq_rad_s : sp.omega_tilde * sp.e0_joule / hbar;
  return p;
}

double energy_to_kelvin(double eps, const ScaledParams& sp) {
  require(eps >= 0.0, "energy must be >= 0");
  return eps * sp.e0_joule / constants::boltzmann;
}

double kelvin_to_energy(double kelvin, const ScaledParams& sp) {
  require(kelvin >= 0.0, "temperature must be >= 0");
  return kelvin * constants::boltzmann / sp.e0_joule;
}

double tau_to_seconds(double tau, const ScaledParams& sp) {
  require(sp.has_time_scale(), "time scale undefined (saturation = 0)");
  return tau * sp.t0_s;
}

double seconds_to_tau(double seconds, const ScaledParams& sp) {
  require(sp.has_time_scale(), "time scale undefined (saturation = 0)");
  return seconds / sp.t0_s;
}

PhysicalParams parse_params(std::string_view text) {
  std::map<std::string, double, std::less<>> values;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(trim(line.substr(0, eq)));
    values[key] = parse_number(key, trim(line.substr(eq + 1)));
  }

  static constexpr std::string_view known[] = {
      "mass_u",  "wavelength_nm", "gamma_mhz",   "detuning_mhz", "saturation",  "kproj_x",
      "kproj_y", "kproj_z",       "omega_x_mhz", "omega_y_mhz",  "omega_z_mhz", "rf_mhz"};
  for (const auto& [key, _] : values) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  auto get = [&](std::string_view key) -> double {
    const auto it = values.find(key);
    if (it == values.end()) throw std::invalid_argument("config: missing key '" + std::string(key) + "'");
    return it->second;
  };
  auto get_or = [&](std::string_view key, double fallback) {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  };

  PhysicalParams p;
  p.mass_kg = get("mass_u") * constants::atomic_mass;
  p.wavelength_m = get("wavelength_nm") * 1e-9;
  p.gamma_rad_s = two_pi * kMHz * get("gamma_mhz");
  p.detuning_rad_s = two_pi * kMHz * get("detuning_mhz");
  p.saturation = get("saturation");
  p.k_projection = {get_or("kproj_x", 0.0), get_or("kproj_y", 0.0), get_or("kproj_z", 1.0)};
  p.secular_freqs_rad_s = {two_pi * kMHz * get_or("omega_x_mhz", 0.0), two_pi * kMHz * get_or("omega_y_mhz", 0.0),
                           two_pi * kMHz * get_or("omega_z_mhz", 0.0)};
  p.rf_freq_rad_s = two_pi * kMHz * get_or("rf_mhz", 0.0);
  p.validate();
  return p;
}

PhysicalParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_params(ss.str());
}

std::string format_params(const PhysicalParams& p) {
  const double to_mhz = 1.0 / (two_pi * kMHz);
  std::ostringstream out;
  out << "mass_u=" << shortest(p.mass_kg / constants::atomic_mass) << '\n'
      << "wavelength_nm=" << shortest(p.wavelength_m * 1e9) << '\n'
      << "gamma_mhz=" << shortest(p.gamma_rad_s * to_mhz) << '\n'
      << "detuning_mhz=" << shortest(p.detuning_rad_s * to_mhz) << '\n'
      << "saturation=" << shortest(p.saturation) << '\n'
      << "kproj_x=" << shortest(p.k_projection[0]) << '\n'
      << "kproj_y=" << shortest(p.k_projection[1]) << '\n'
      << "kproj_z=" << shortest(p.k_projection[2]) << '\n'
      << "omega_x_mhz=" << shortest(p.secular_freqs_rad_s[0] * to_mhz) << '\n'
      << "omega_y_mhz=" << shortest(p.secular_freqs_rad_s[1] * to_mhz) << '\n'
      << "omega_z_mhz=" << shortest(p.secular_freqs_rad_s[2] * to_mhz) << '\n'
      << "rf_mhz=" << shortest(p.rf_freq_rad_s * to_mhz) << '\n';
  return out.str();
}

}  // namespace recool
