// Command-line front end: rate tables, cooling curves, fits, design sweeps,
// 3-D mode rates, Monte Carlo ensembles and line profiles. Every run writes a
// manifest next to its outputs; `recool replay` reruns one.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "recool/bloch.hpp"
#include "recool/estimation.hpp"
#include "recool/multimode.hpp"
#include "recool/numeric.hpp"
#include "recool/simd/kernels.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace recool;

namespace {

enum Exit { ok = 0, usage = 2, no_signal = 3, numerical = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json params_json(const PhysicalParams& p) {
  return {{"mass_kg", p.mass_kg},
          {"wavelength_m", p.wavelength_m},
          {"gamma_rad_s", p.gamma_rad_s},
          {"detuning_rad_s", p.detuning_rad_s},
          {"saturation", p.saturation},
          {"k_projection", p.k_projection},
          {"secular_freqs_rad_s", p.secular_freqs_rad_s},
          {"rf_freq_rad_s", p.rf_freq_rad_s}};
}

PhysicalParams params_from_json(const json& j) {
  PhysicalParams p;
  p.mass_kg = j.at("mass_kg").get<double>();
  p.wavelength_m = j.at("wavelength_m").get<double>();
  p.gamma_rad_s = j.at("gamma_rad_s").get<double>();
  p.detuning_rad_s = j.at("detuning_rad_s").get<double>();
  p.saturation = j.at("saturation").get<double>();
  p.k_projection = j.at("k_projection").get<std::array<double, 3>>();
  p.secular_freqs_rad_s = j.at("secular_freqs_rad_s").get<std::array<double, 3>>();
  p.rf_freq_rad_s = j.at("rf_freq_rad_s").get<double>();
  p.validate();
  return p;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Context {
  PhysicalParams params;
  std::string config_source;
  fs::path out = ".";
  std::string prefix;
  std::uint64_t seed = 1;
  std::size_t workers = 0;
  std::vector<std::string> args;  // as given, without --out and --config
  std::string subcommand;
  json options = json::object();
  json outputs = json::array();

  ScaledParams scaled(TimeScale time = TimeScale::optional) const { return scale_parameters(params, time); }

  fs::path file(const std::string& suffix) {
    fs::create_directories(out);
    const auto path = out / (prefix + suffix);
    outputs.push_back(path.filename().string());
    return path;
  }

  void manifest(const json& results = json::object()) {
    const auto sp = scaled();
    json m;
    m["tool"] = "recool";
    m["version"] = RECOOL_VERSION;
    m["subcommand"] = subcommand;
    m["args"] = args;
    m["config_source"] = config_source;
    m["params"] = params_json(params);
    m["scaled"] = {{"delta", sp.delta},
                   {"recoil", sp.recoil},
                   {"e0_joule", sp.e0_joule},
                   {"t0_s", finite_or_null(sp.t0_s)},
                   {"omega_tilde", sp.omega_tilde}};
    m["seed"] = seed;
    m["workers"] = workers;
    m["simd"] = std::string(simd::isa_name(simd::active_isa()));
    m["options"] = options;
    m["outputs"] = outputs;
    m["results"] = results;
    fs::create_directories(out);
    std::ofstream(out / (prefix + ".manifest.json")) << m.dump(2) << '\n';
  }
};

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }
  void row(std::initializer_list<double> values) {
    bool first = true;
    for (double v : values) {
      out_ << (first ? "" : ",") << format_double(v);
      first = false;
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (n == 1) return {lo};
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

std::vector<double> lin_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

// "2ec" is twice ε_c, "5.1/r" is 5.1 divided by r, a plain number is ε.
double parse_energy(const std::string& text, double delta, double r) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw UsageError("cannot read energy '" + text + "'");
  }
  const std::string unit = text.substr(used);
  if (unit.empty()) return v;
  if (unit == "ec") return v * critical_energies(delta, r).eps_c;
  if (unit == "/r") return v / r;
  throw UsageError("energy unit must be ec or /r, got '" + unit + "'");
}

EnergyDistribution make_dist(const std::string& kind, double mean) {
  if (kind == "mb") return maxwell_boltzmann(mean);
  if (kind == "point") return point_mass(mean);
  throw UsageError("distribution must be mb or point");
}

double eps0_max_for(const EnergyDistribution& d) {
  if (std::holds_alternative<PointMass>(d)) return std::max(1.05 * std::get<PointMass>(d).eps0, 1e-12);
  return 13.8155 * 1.05 * mean_energy(d);
}

// ---- rates ---------------------------------------------------------------

struct RatesOpts {
  std::optional<double> delta, r;
  double eps_min = 1e-4, eps_max = 100.0;
  std::size_t points = 200;
  bool recoil = false;
};

int cmd_rates(Context& ctx, const RatesOpts& o) {
  const auto sp = ctx.scaled();
  const double delta = o.delta.value_or(sp.delta), r = o.r.value_or(sp.recoil_z());
  if (!(r > 0.0)) throw UsageError("--r must be positive (or the config must give k_z > 0)");
  if (o.eps_max < 0.0 || o.eps_min <= 0.0) throw UsageError("--eps-min must be > 0 and --eps-max >= 0");
  ctx.options = {{"delta", delta}, {"r", r}, {"eps_min_r", o.eps_min}, {"eps_max_r", o.eps_max},
                 {"points", o.points}, {"recoil", o.recoil}};
  Csv csv(ctx.file(".csv"), {"eps", "eps_r", "de_dtau", "dn_dtau"});
  const auto grid = o.eps_max == 0.0 ? std::vector<double>{0.0} : log_grid(o.eps_min, o.eps_max, o.points);
  for (double er : grid) {
    const double eps = er / r;
    auto rp = rates(eps, delta, r);
    if (o.recoil) rp.de_dtau += recoil_rate(rp.dn_dtau, r);
    csv.row({eps, er, rp.de_dtau, rp.dn_dtau});
  }
  const auto ce = critical_energies(delta, r);
  json res{{"eps_c", ce.eps_c}, {"eps_c_r", ce.eps_c * r}};
  if (ce.eps_s) {
    res["eps_s"] = *ce.eps_s;
    res["eps_s_r"] = *ce.eps_s * r;
    res["peak_scattering_ratio"] = peak_scattering_ratio(delta);
  }
  std::cout << res.dump() << '\n';
  ctx.manifest(res);
  return ok;
}

// ---- trajectory ----------------------------------------------------------

struct TrajectoryOpts {
  std::optional<double> delta, r, tau_max;
  double eps0_r = 10.0;
  std::size_t points = 400;
  bool recoil = false;
};

int cmd_trajectory(Context& ctx, const TrajectoryOpts& o) {
  const auto sp = ctx.scaled();
  const double delta = o.delta.value_or(sp.delta), r = o.r.value_or(sp.recoil_z());
  if (!(r > 0.0)) throw UsageError("--r must be positive");
  const double eps0 = o.eps0_r / r;
  const double tau_max = o.tau_max.value_or(estimated_cooling_span(delta, r, eps0));
  if (!(tau_max > 0.0) || o.points < 2) throw UsageError("--tau-max must be > 0 and --points >= 2");
  ctx.options = {{"delta", delta}, {"r", r}, {"eps0_r", o.eps0_r}, {"tau_max", tau_max}, {"points", o.points},
                 {"recoil", o.recoil}};
  const auto grid = lin_grid(0.0, tau_max, o.points);
  TrajectoryOptions to;
  to.recoil = o.recoil ? Recoil::on : Recoil::off;
  const auto traj = integrate_trajectory(eps0, grid, delta, r, to);
  Csv csv(ctx.file(".csv"), {"tau", "t_s", "eps", "eps_r", "dn_dtau", "photons"});
  for (const auto& pt : traj)
    csv.row({pt.tau, sp.has_time_scale() ? pt.tau * sp.t0_s : NAN, pt.eps, pt.eps * r, pt.dn_dtau, pt.photons});
  ctx.manifest({{"final_eps_r", traj.back().eps * r}});
  return ok;
}

// ---- average -------------------------------------------------------------

struct AverageOpts {
  std::optional<double> delta, r, tau_max;
  std::string mean_eps = "2ec";
  std::string dist = "mb";
  std::size_t bins = 400;
};

int cmd_average(Context& ctx, const AverageOpts& o) {
  const auto sp = ctx.scaled();
  const double delta = o.delta.value_or(sp.delta), r = o.r.value_or(sp.recoil_z());
  if (!(r > 0.0)) throw UsageError("--r must be positive");
  const double mean = parse_energy(o.mean_eps, delta, r);
  if (!(mean >= 0.0)) throw UsageError("--mean-eps must be >= 0");
  const auto dist = make_dist(o.dist, mean);
  const double top = eps0_max_for(dist);
  const double tau_max = o.tau_max.value_or(estimated_cooling_span(delta, r, top));
  if (!(tau_max > 0.0) || o.bins < 1) throw UsageError("--tau-max must be > 0 and --bins >= 1");
  ctx.options = {{"delta", delta}, {"r", r}, {"mean_eps", mean}, {"dist", o.dist}, {"tau_max", tau_max},
                 {"bins", o.bins}};
  const auto cache = build_cache(delta, r, default_dtau(delta, r, top), top);
  const auto w = offset_weights(dist, cache);
  const auto edges = lin_grid(0.0, tau_max, o.bins + 1);
  const auto avg = binned_average(w, cache, edges);
  Csv csv(ctx.file(".csv"), {"tau", "t_s", "rate", "rate_over_steady"});
  for (std::size_t i = 0; i < avg.size(); ++i)
    csv.row({edges[i], sp.has_time_scale() ? edges[i] * sp.t0_s : NAN, avg[i], avg[i] / cache.rate_limit()});
  const json res{{"initial_over_steady", avg.front() / cache.rate_limit()},
                 {"excess_photons", excess_photons(w, cache)},
                 {"warnings", cache.warnings}};
  ctx.manifest(res);
  return ok;
}

// ---- synth ---------------------------------------------------------------

struct SynthOpts {
  std::string mean_eps = "5.1/r";
  std::string dist = "mb";
  SynthesisSpec spec{100, 40e-6, 1000, 1e-3, 0.0, std::nullopt};
};

FluorescenceTrace empty_trace(const SynthesisSpec& s) {
  FluorescenceTrace t;
  for (std::size_t i = 0; i < s.bins; ++i) {
    t.bin_start_s.push_back(static_cast<double>(i) * s.bin_width_s);
    t.bin_width_s.push_back(s.bin_width_s);
    t.counts.push_back(0);
  }
  t.n_cycles = s.n_cycles;
  return t;
}

int cmd_synth(Context& ctx, const SynthOpts& o) {
  const auto sp = ctx.scaled(TimeScale::required);
  const double mean = parse_energy(o.mean_eps, sp.delta, sp.recoil_z());
  const auto dist = make_dist(o.dist, mean);
  ctx.options = {{"mean_eps", mean},
                 {"dist", o.dist},
                 {"bins", o.spec.bins},
                 {"bin_width_s", o.spec.bin_width_s},
                 {"n_cycles", o.spec.n_cycles},
                 {"detection_efficiency", o.spec.detection_efficiency},
                 {"dark_rate_hz", o.spec.dark_rate_hz},
                 {"heat_duration_s", o.spec.heat_duration_s ? json(*o.spec.heat_duration_s) : json(nullptr)}};
  const auto cache = build_fit_cache(empty_trace(o.spec), sp);
  const auto trace = synthesize_trace(dist, sp, cache, o.spec, ctx.seed);
  const auto csv = ctx.file(".csv");
  const auto meta = ctx.file(".json");
  write_trace(trace, csv, meta);
  ctx.manifest({{"mean_eps", mean}, {"mean_eps_r", mean * sp.recoil_z()}, {"temperature_K", energy_to_kelvin(mean, sp)}});
  return ok;
}

// ---- fit -----------------------------------------------------------------

struct FitOpts {
  std::vector<std::string> files;
  FitOptions fit;
  std::size_t subdivision = 16;
  bool through_origin = false;
};

json fit_json(const FitResult& f) {
  return {{"status", f.status == FitStatus::ok ? "ok" : "below_sensitivity"},
          {"mean_energy", f.mean_energy},
          {"sigma", f.sigma},
          {"sigma_fisher", f.sigma_fisher},
          {"sigma_calibration", f.sigma_calibration},
          {"mean_energy_r_units", f.mean_energy_r_units},
          {"temperature_K", f.temperature_K},
          {"sigma_K", f.sigma_K},
          {"A", f.A},
          {"B", f.B},
          {"nll", f.nll},
          {"warnings", f.warnings}};
}

int cmd_fit(Context& ctx, const FitOpts& o) {
  if (o.files.empty() || o.files.size() % 2 != 0) throw UsageError("fit takes trace.csv meta.json pairs");
  const auto sp = ctx.scaled(TimeScale::required);
  ctx.options = {{"files", o.files},
                 {"tail_fraction", o.fit.tail_fraction},
                 {"subdivision", o.subdivision},
                 {"through_origin", o.through_origin}};
  json fits = json::array();
  std::vector<std::pair<double, FitResult>> timed;
  bool all_ok = true;
  for (std::size_t i = 0; i < o.files.size(); i += 2) {
    const auto trace = read_trace(o.files[i], o.files[i + 1]);
    const auto cache = build_fit_cache(trace, sp, o.subdivision);
    FitResult f;
    try {
      f = fit_mean_energy(trace, sp, cache, o.fit);
    } catch (const CalibrationError& e) {
      std::cerr << o.files[i] << ": " << e.what() << '\n';
      fits.push_back({{"trace", o.files[i]}, {"status", "no_signal"}, {"error", e.what()}});
      all_ok = false;
      continue;
    }
    auto j = fit_json(f);
    j["trace"] = o.files[i];
    fits.push_back(j);
    if (f.status != FitStatus::ok) {
      all_ok = false;
      std::cerr << o.files[i] << ": below sensitivity, mean energy < " << format_double(f.mean_energy) << " ("
                << format_double(f.temperature_K) << " K)\n";
    } else {
      std::cout << o.files[i] << ": mean energy " << format_double(f.mean_energy) << " +- " << format_double(f.sigma)
                << " (" << format_double(f.mean_energy_r_units) << "/r, " << format_double(f.temperature_K) << " +- "
                << format_double(f.sigma_K) << " K)\n";
    }
    if (f.status == FitStatus::ok && trace.heat_duration_s) timed.emplace_back(*trace.heat_duration_s, f);
  }
  json res{{"fits", fits}};
  if (timed.size() >= 2 || (timed.size() == 1 && o.through_origin)) {
    const auto h = heating_rate_from_fits(timed, o.through_origin);
    res["heating_rate"] = {{"slope_K_per_s", h.slope_K_per_s},
                           {"sigma_K_per_s", h.sigma_K_per_s},
                           {"intercept_K", h.intercept_K},
                           {"sigma_intercept_K", h.sigma_intercept_K},
                           {"warnings", h.warnings}};
    std::cout << "heating rate " << format_double(h.slope_K_per_s) << " +- " << format_double(h.sigma_K_per_s)
              << " K/s\n";
  }
  std::ofstream(ctx.file(".json")) << res.dump(2) << '\n';
  ctx.manifest(res);
  return all_ok ? ok : no_signal;
}

// ---- design --------------------------------------------------------------

struct DesignOpts {
  std::vector<double> deltas{-1.7320508075688772, -1.0, -0.5773502691896258, -0.3, -0.2};
  std::vector<double> saturations{0.0};
  double eps_r_min = 0.1, eps_r_max = 10.0;
  std::size_t points = 25;
};

int cmd_design(Context& ctx, const DesignOpts& o) {
  if (!(o.eps_r_min > 0.0 && o.eps_r_max >= o.eps_r_min) || o.points < 1)
    throw UsageError("need 0 < --eps-r-min <= --eps-r-max and --points >= 1");
  ctx.options = {{"deltas", o.deltas}, {"saturations", o.saturations}, {"eps_r_min", o.eps_r_min},
                 {"eps_r_max", o.eps_r_max}, {"points", o.points}};
  Csv csv(ctx.file(".csv"), {"delta", "mean_eps_r", "s", "relative_time"});
  const auto grid = log_grid(o.eps_r_min, o.eps_r_max, o.points);
  json best = json::array();
  for (double d : o.deltas) {
    const auto cache = build_design_cache(d, o.eps_r_max);
    for (double s : o.saturations) {
      double tmin = INFINITY, at = 0.0;
      for (double e : grid) {
        const double t = measurement_time(d, e, s, cache);
        csv.row({d, e, s, t});
        if (t < tmin) tmin = t, at = e;
      }
      best.push_back({{"delta", d}, {"s", s}, {"best_mean_eps_r", at}, {"relative_time", finite_or_null(tmin)}});
    }
  }
  ctx.manifest({{"optima", best}});
  return ok;
}

// ---- modes3d -------------------------------------------------------------

struct ModesOpts {
  std::optional<double> delta, omega_tilde;
  std::string target = "x";
  std::array<double, 3> eps_r{0.0, 0.0, 0.0};
  double stray_beta = 0.0;
  double lo = 0.1, hi = 100.0;
  std::size_t points = 60, nodes = 128;
};

int cmd_modes3d(Context& ctx, const ModesOpts& o) {
  const auto sp = ctx.scaled();
  const double delta = o.delta.value_or(sp.delta);
  const double omega = o.omega_tilde.value_or(std::isfinite(sp.omega_tilde) ? sp.omega_tilde : 0.0);
  const int t = o.target == "x" ? 0 : o.target == "y" ? 1 : o.target == "z" ? 2 : -1;
  if (t < 0) throw UsageError("--target must be x, y or z");
  if (!(o.lo > 0.0 && o.hi > o.lo) || o.points < 2) throw UsageError("need 0 < --eps-r-min < --eps-r-max");
  ctx.options = {{"delta", delta}, {"omega_tilde", omega}, {"target", o.target}, {"eps_r", o.eps_r},
                 {"stray_beta", o.stray_beta}, {"eps_r_min", o.lo}, {"eps_r_max", o.hi},
                 {"points", o.points}, {"nodes", o.nodes}};
  // Energies in units of 1/r_i; the rates depend on ε_i r_i only.
  ModeSet modes;
  modes.eps = o.eps_r;
  modes.omega_tilde = omega;
  modes.stray_beta = o.stray_beta;
  const AngleGrid grid{o.nodes, ctx.workers};
  Csv csv(ctx.file(".csv"), {"eps_r", "de_dtau_x", "de_dtau_y", "de_dtau_z", "dn_dtau"});
  for (double e : log_grid(o.lo, o.hi, o.points)) {
    ModeSet m = modes;
    m.eps[t] = e;
    const auto rt = mode_rates(m, delta, grid);
    csv.row({e, rt.de_dtau[0], rt.de_dtau[1], rt.de_dtau[2], rt.dn_dtau});
  }
  json cross = json::array();
  for (const auto& c : rate_crossings(modes, static_cast<Mode>(t), delta, o.lo, o.hi, o.points, grid))
    cross.push_back({{"eps_r", c.eps_r}, {"stable", c.stable}});
  std::cout << json{{"crossings", cross}}.dump() << '\n';
  ctx.manifest({{"crossings", cross}});
  return ok;
}

// ---- spectrum ------------------------------------------------------------

struct SpectrumOpts {
  double dmax_x = 0.0, dmax_y = 0.0, omega_tilde = 0.0, stray_beta = 0.0;
  std::optional<double> beta;
  double range = 20.0;
  std::size_t points = 801, nodes = 128;
};

int cmd_spectrum(Context& ctx, const SpectrumOpts& o) {
  ctx.options = {{"dmax_x", o.dmax_x}, {"dmax_y", o.dmax_y}, {"omega_tilde", o.omega_tilde},
                 {"stray_beta", o.stray_beta}, {"beta", o.beta ? json(*o.beta) : json(nullptr)},
                 {"range", o.range}, {"points", o.points}, {"nodes", o.nodes}};
  if (o.beta) {
    // R_μ for one modulation index.
    if (!(o.omega_tilde > 0.0)) throw UsageError("--beta needs --omega-tilde > 0");
    Csv csv(ctx.file(".csv"), {"delta_eff", "response"});
    for (double d : lin_grid(-o.range, o.range, o.points))
      csv.row({d, micromotion_profile(d, *o.beta, o.omega_tilde)});
  } else {
    const auto prof = effective_profile(o.dmax_x, o.dmax_y, o.omega_tilde, o.stray_beta, {o.nodes, ctx.workers});
    std::ofstream out(ctx.file(".csv"));
    write_profile(out, prof);
  }
  ctx.manifest();
  return ok;
}

// ---- mc ------------------------------------------------------------------

struct McOpts {
  std::size_t n_traj = 200;
  double mean_eps_r = 1.0;
  std::string dist = "mb";
  std::optional<double> transverse_exponent;
  double duration_s = 0.0;
  std::size_t bins = 40;
  double dt_s = 0.0;
};

int cmd_mc(Context& ctx, const McOpts& o) {
  const auto sp = ctx.scaled(TimeScale::required);
  if (!(sp.recoil_z() > 0.0)) throw UsageError("mc needs kproj_z > 0");
  if (!(o.duration_s > 0.0) || o.bins < 1 || o.n_traj < 1)
    throw UsageError("mc needs --duration-s > 0, --bins >= 1, --n-traj >= 1");
  EnsembleSpec es;
  es.z = make_dist(o.dist, o.mean_eps_r / sp.recoil_z());
  es.transverse_exponent = o.transverse_exponent;
  es.n_traj = o.n_traj;
  es.seed = ctx.seed;
  es.sim.duration_s = o.duration_s;
  es.sim.bin_width_s = o.duration_s / static_cast<double>(o.bins);
  es.sim.dt_s = o.dt_s;
  es.workers = ctx.workers;
  const auto res = ensemble_fluorescence(es, ctx.params);
  ctx.options = {{"n_traj", o.n_traj},
                 {"mean_eps_r", o.mean_eps_r},
                 {"dist", o.dist},
                 {"transverse_exponent", o.transverse_exponent ? json(*o.transverse_exponent) : json(nullptr)},
                 {"duration_s", o.duration_s},
                 {"bins", o.bins},
                 {"dt_s", res.dt_s},
                 {"dt_requested_s", o.dt_s}};
  {
    std::ofstream out(ctx.file(".csv"));
    write_ensemble_csv(out, res);
  }
  Csv energy(ctx.file("_energy.csv"), {"t_end_s", "eps_x", "eps_y", "eps_z"});
  for (std::size_t b = 0; b < res.t_s.size(); ++b) {
    const auto& e = res.mean_energy_J[b];
    energy.row({res.t_s[b] + res.bin_width_s, e[0] / sp.e0_joule, e[1] / sp.e0_joule, e[2] / sp.e0_joule});
  }
  ctx.manifest({{"dt_s", res.dt_s}, {"seed_rule", "trajectory i uses derive_seed(seed, i)"}});
  return ok;
}

// ---- dispatch ------------------------------------------------------------

int run(std::vector<std::string> args, const std::optional<PhysicalParams>& fixed, const std::string& fixed_source);

int cmd_replay(const std::string& manifest_path, const std::optional<std::string>& out) {
  std::ifstream in(manifest_path);
  if (!in) throw UsageError("cannot read " + manifest_path);
  const json m = json::parse(in);
  auto args = m.at("args").get<std::vector<std::string>>();
  args.push_back("--out");
  args.push_back(out.value_or(fs::path(manifest_path).parent_path().string()));
  return run(args, params_from_json(m.at("params")), m.value("config_source", std::string("manifest")));
}

int run(std::vector<std::string> args, const std::optional<PhysicalParams>& fixed, const std::string& fixed_source) {
  CLI::App app{"Doppler re-cooling fluorescence: rates, averages, fits, 3-D modes and Monte Carlo"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", RECOOL_VERSION);
  Context ctx;
  std::optional<std::string> config;
  std::optional<double> saturation, detuning_mhz;
  std::string out = ".";
  app.add_option("--config", config, "key=value parameter file (default: $RECOOL_CONFIG, else Mg-25 values)");
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", ctx.seed, "random seed");
  app.add_option("--workers", ctx.workers, "threads, 0 for all cores");
  app.add_option("--saturation", saturation, "override the saturation parameter")->check(CLI::NonNegativeNumber);
  app.add_option("--detuning-mhz", detuning_mhz, "override the detuning, ordinary MHz");
  std::string prefix;
  app.add_option("--prefix", prefix, "output file stem (default: the subcommand name)");

  RatesOpts ro;
  auto* rates_cmd = app.add_subcommand("rates", "cooling and scattering rate vs energy");
  rates_cmd->add_option("--delta", ro.delta, "scaled detuning");
  rates_cmd->add_option("--r", ro.r, "recoil parameter");
  rates_cmd->add_option("--eps-min", ro.eps_min, "smallest ε r");
  rates_cmd->add_option("--eps-max", ro.eps_max, "largest ε r; 0 gives the single steady-state row");
  rates_cmd->add_option("--points", ro.points)->check(CLI::PositiveNumber);
  rates_cmd->add_flag("--recoil", ro.recoil, "include recoil heating");

  TrajectoryOpts to;
  auto* traj_cmd = app.add_subcommand("trajectory", "single cooling trajectory");
  traj_cmd->add_option("--delta", to.delta);
  traj_cmd->add_option("--r", to.r);
  traj_cmd->add_option("--eps0-r", to.eps0_r, "initial ε r")->check(CLI::NonNegativeNumber);
  traj_cmd->add_option("--tau-max", to.tau_max);
  traj_cmd->add_option("--points", to.points);
  traj_cmd->add_flag("--recoil", to.recoil);

  AverageOpts ao;
  auto* avg_cmd = app.add_subcommand("average", "thermally averaged fluorescence vs time");
  avg_cmd->add_option("--delta", ao.delta);
  avg_cmd->add_option("--r", ao.r);
  avg_cmd->add_option("--mean-eps", ao.mean_eps, "mean energy: number, <x>ec or <x>/r");
  avg_cmd->add_option("--dist", ao.dist, "mb or point");
  avg_cmd->add_option("--bins", ao.bins);
  avg_cmd->add_option("--tau-max", ao.tau_max);

  SynthOpts so;
  auto* synth_cmd = app.add_subcommand("synth", "Poisson-sampled synthetic trace");
  synth_cmd->add_option("--mean-eps", so.mean_eps, "mean energy: number, <x>ec or <x>/r");
  synth_cmd->add_option("--dist", so.dist, "mb or point");
  synth_cmd->add_option("--bins", so.spec.bins)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--bin-width-s", so.spec.bin_width_s)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--cycles", so.spec.n_cycles)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--efficiency", so.spec.detection_efficiency)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dark-hz", so.spec.dark_rate_hz)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--heat-duration-s", so.spec.heat_duration_s);

  FitOpts fo;
  auto* fit_cmd = app.add_subcommand("fit", "mean energy from traces, heating rate from several");
  fit_cmd->add_option("files", fo.files, "trace.csv meta.json [trace.csv meta.json ...]")->required();
  fit_cmd->add_option("--tail-fraction", fo.fit.tail_fraction)->check(CLI::Range(0.05, 0.5));
  fit_cmd->add_option("--subdivision", fo.subdivision)->check(CLI::PositiveNumber);
  fit_cmd->add_flag("--through-origin", fo.through_origin, "heating line through T = 0 at t = 0");

  DesignOpts dso;
  auto* design_cmd = app.add_subcommand("design", "relative measurement time sweeps");
  design_cmd->add_option("--deltas", dso.deltas)->delimiter(',');
  design_cmd->add_option("--s", dso.saturations, "saturation values")->delimiter(',');
  design_cmd->add_option("--eps-r-min", dso.eps_r_min);
  design_cmd->add_option("--eps-r-max", dso.eps_r_max);
  design_cmd->add_option("--points", dso.points);

  ModesOpts mo;
  auto* modes_cmd = app.add_subcommand("modes3d", "3-D mode rates vs one mode's energy");
  modes_cmd->add_option("--delta", mo.delta);
  modes_cmd->add_option("--omega-tilde", mo.omega_tilde, "scaled RF frequency, 0 for none");
  modes_cmd->add_option("--target", mo.target, "swept mode: x, y or z");
  modes_cmd->add_option("--eps-x-r", mo.eps_r[0]);
  modes_cmd->add_option("--eps-y-r", mo.eps_r[1]);
  modes_cmd->add_option("--eps-z-r", mo.eps_r[2]);
  modes_cmd->add_option("--stray-beta", mo.stray_beta);
  modes_cmd->add_option("--eps-r-min", mo.lo);
  modes_cmd->add_option("--eps-r-max", mo.hi);
  modes_cmd->add_option("--points", mo.points);
  modes_cmd->add_option("--nodes", mo.nodes);

  SpectrumOpts spo;
  auto* spec_cmd = app.add_subcommand("spectrum", "effective line profile R_z or micromotion profile R_mu");
  spec_cmd->add_option("--dmax-x", spo.dmax_x)->check(CLI::NonNegativeNumber);
  spec_cmd->add_option("--dmax-y", spo.dmax_y)->check(CLI::NonNegativeNumber);
  spec_cmd->add_option("--omega-tilde", spo.omega_tilde)->check(CLI::NonNegativeNumber);
  spec_cmd->add_option("--stray-beta", spo.stray_beta);
  spec_cmd->add_option("--beta", spo.beta, "tabulate R_mu for this modulation index")->check(CLI::NonNegativeNumber);
  spec_cmd->add_option("--range", spo.range);
  spec_cmd->add_option("--points", spo.points);
  spec_cmd->add_option("--nodes", spo.nodes);

  McOpts mco;
  auto* mc_cmd = app.add_subcommand("mc", "Monte Carlo optical Bloch ensemble");
  mc_cmd->add_option("--n-traj", mco.n_traj);
  mc_cmd->add_option("--mean-eps-r", mco.mean_eps_r, "mean axial energy times r_z")->check(CLI::NonNegativeNumber);
  mc_cmd->add_option("--dist", mco.dist, "mb or point");
  mc_cmd->add_option("--transverse-exponent", mco.transverse_exponent,
                     "start transverse modes thermal with energy ∝ ω^-exponent");
  mc_cmd->add_option("--duration-s", mco.duration_s)->required();
  mc_cmd->add_option("--bins", mco.bins);
  mc_cmd->add_option("--dt-s", mco.dt_s, "time step, 0 for the default");

  std::string manifest_path;
  std::optional<std::string> replay_out;
  auto* replay_cmd = app.add_subcommand("replay", "rerun a manifest");
  replay_cmd->add_option("manifest", manifest_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  auto* sub = app.get_subcommands().front();
  if (sub == replay_cmd) {
    if (app.count("--out")) replay_out = out;
    return cmd_replay(manifest_path, replay_out);
  }

  // Record the invocation minus anything that only says where to read or write.
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "--out" || a == "--config") {
      ++i;
      continue;
    }
    if (a.rfind("--out=", 0) == 0 || a.rfind("--config=", 0) == 0) continue;
    ctx.args.push_back(a);
  }
  if (fixed) {
    ctx.params = *fixed;
    ctx.config_source = fixed_source;
  } else {
    if (!config) {
      if (const char* env = std::getenv("RECOOL_CONFIG"); env && *env) config = env;
    }
    if (config) {
      ctx.params = load_params(*config);
      ctx.config_source = *config;
    } else {
      ctx.params = PhysicalParams::magnesium25();
      ctx.config_source = "builtin:magnesium25";
    }
  }
  if (saturation) ctx.params.saturation = *saturation;
  if (detuning_mhz) ctx.params.detuning_rad_s = 2.0 * std::numbers::pi * 1e6 * *detuning_mhz;
  ctx.params.validate();
  ctx.out = out;
  ctx.subcommand = sub->get_name();
  ctx.prefix = prefix.empty() ? ctx.subcommand : prefix;

  if (sub == rates_cmd) return cmd_rates(ctx, ro);
  if (sub == traj_cmd) return cmd_trajectory(ctx, to);
  if (sub == avg_cmd) return cmd_average(ctx, ao);
  if (sub == synth_cmd) return cmd_synth(ctx, so);
  if (sub == fit_cmd) return cmd_fit(ctx, fo);
  if (sub == design_cmd) return cmd_design(ctx, dso);
  if (sub == modes_cmd) return cmd_modes3d(ctx, mo);
  if (sub == spec_cmd) return cmd_spectrum(ctx, spo);
  if (sub == mc_cmd) return cmd_mc(ctx, mco);
  return usage;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args, std::nullopt, {});
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return usage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return usage;
  } catch (const CalibrationError& e) {
    std::cerr << "no signal: " << e.what() << '\n';
    return no_signal;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return numerical;
  }
}
