#pragma once
/**
 * @file config.hpp
 * @brief Declarative run configuration (JSON) for the command-line tool.
 */

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "heli/sim.hpp"

namespace heli {

struct FitOnTheFly {
  double noise_std = 0.29;
  std::uint64_t seed = 1;
  double ridge_lambda = 0;
};

struct AeroSource {
  std::map<double, std::string> models;  // direction -> model file
  std::optional<FitOnTheFly> fit;
};

struct CompareConfig {
  CompareOptions options;
  WindKind kind = WindKind::type_ii;
  bool bounds = false;
};

struct TunnelConfig {
  TunnelGrid grid;
  double noise_std = 0.29;
  std::uint64_t seed = 1;
};

struct OutputConfig {
  std::string dir = ".";
  bool emit_svg = true;
};

struct RunConfig {
  std::string vehicle_params;  // empty: built-in defaults
  Scenario scenario;
  AeroSource aero;
  TunnelConfig tunnel;
  CompareConfig compare;
  OutputConfig output;

  VehicleParams vehicle() const {
    return vehicle_params.empty() ? VehicleParams{} : load_vehicle_params(vehicle_params);
  }
};

namespace detail {

using json = nlohmann::json;

// Key-checked view of one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key()))
        throw ConfigError("unknown key '" + it.key() + "' in config section '" + name_ + "'");
  }

  bool has(const std::string& k) {
    if (!j_.contains(k)) return false;
    used_.insert(k);
    return true;
  }
  const json& at(const std::string& k) { return j_.at(k); }
  std::string path(const std::string& k) const { return name_ + "." + k; }

  void number(const std::string& k, double& out) {
    if (!has(k)) return;
    if (!at(k).is_number()) throw ConfigError("'" + path(k) + "' must be a number");
    out = at(k).get<double>();
  }
  void integer(const std::string& k, int& out) {
    if (!has(k)) return;
    if (!at(k).is_number_integer()) throw ConfigError("'" + path(k) + "' must be an integer");
    out = at(k).get<int>();
  }
  void seed(const std::string& k, std::uint64_t& out) {
    if (!has(k)) return;
    if (!at(k).is_number_unsigned()) throw ConfigError("'" + path(k) + "' must be a non-negative integer");
    out = at(k).get<std::uint64_t>();
  }
  void boolean(const std::string& k, bool& out) {
    if (!has(k)) return;
    if (!at(k).is_boolean()) throw ConfigError("'" + path(k) + "' must be true or false");
    out = at(k).get<bool>();
  }
  void string(const std::string& k, std::string& out) {
    if (!has(k)) return;
    if (!at(k).is_string()) throw ConfigError("'" + path(k) + "' must be a string");
    out = at(k).get<std::string>();
  }
  void vec3(const std::string& k, Vec3& out) {
    if (!has(k)) return;
    const auto& v = at(k);
    if (!v.is_array() || v.size() != 3) throw ConfigError("'" + path(k) + "' must be a 3-element array");
    for (int i = 0; i < 3; ++i) {
      if (!v[i].is_number()) throw ConfigError("'" + path(k) + "' must contain numbers");
      out(i) = v[i].get<double>();
    }
  }
  std::vector<double> numbers(const std::string& k) {
    const auto& v = at(k);
    if (!v.is_array()) throw ConfigError("'" + path(k) + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError("'" + path(k) + "' must be an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
  template <class E>
  void choice(const std::string& k, E& out, std::initializer_list<std::pair<const char*, E>> options) {
    if (!has(k)) return;
    if (!at(k).is_string()) throw ConfigError("'" + path(k) + "' must be a string");
    const std::string s = at(k).get<std::string>();
    std::string allowed;
    for (const auto& [name, value] : options) {
      if (s == name) {
        out = value;
        return;
      }
      allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    }
    throw ConfigError("'" + path(k) + "' must be one of: " + allowed);
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

inline void read_axis(Section& s, const std::string& k, GridAxis& a) {
  if (!s.has(k)) return;
  const auto v = s.numbers(k);
  if (v.size() != 3 || v[0] != std::floor(v[0]))
    throw ConfigError("'" + s.path(k) + "' must be [count, lo, hi]");
  a.count = static_cast<int>(v[0]), a.lo = v[1], a.hi = v[2];
}

inline void read_wind(const json& j, WindProfile& w) {
  Section s(j, "scenario.wind");
  s.choice("kind", w.kind,
           {{"type_i", WindKind::type_i}, {"type_ii", WindKind::type_ii}, {"series", WindKind::series}});
  s.number("speed", w.speed);
  s.number("direction_deg", w.direction_deg);
  if (s.has("breakpoints")) {
    const auto& b = s.at("breakpoints");
    if (!b.is_array()) throw ConfigError("'scenario.wind.breakpoints' must be an array of [t, speed]");
    w.breakpoints.clear();
    for (const auto& p : b) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw ConfigError("'scenario.wind.breakpoints' entries must be [t, speed]");
      w.breakpoints.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
  }
}

inline void read_controller(const json& j, ControllerConfig& c) {
  Section s(j, "scenario.controller");
  s.choice("mode", c.mode, {{"hybrid", ControlMode::hybrid}, {"baseline", ControlMode::baseline}});
  s.number("alpha", c.gains.alpha);
  s.number("beta", c.gains.beta);
  s.choice("composition", c.composition,
           {{"cascade", Composition::cascade}, {"literal", Composition::literal}});
  s.choice("moment_law", c.moment_law,
           {{"as_printed_V", MomentLaw::as_printed_V}, {"velocity_error_z1", MomentLaw::velocity_error_z1}});
  s.choice("cyclic_inversion", c.cyclic_inversion,
           {{"flybar_estimate", CyclicInversion::flybar_estimate},
            {"steady_state", CyclicInversion::steady_state}});
  s.number("k_R", c.k_R);
  s.number("k_Omega", c.k_Omega);
  s.number("accel_limit_h", c.accel_limit_h);
  s.number("accel_limit_v", c.accel_limit_v);
  s.number("psi_d", c.psi_d);
  s.number("omega_d_limit", c.omega_d_limit);
  s.number("rate_filter_tau", c.rate_filter_tau);
  s.number("model_input_tau", c.model_input_tau);
  s.number("servo_lead_gain", c.servo_lead_gain);
  s.number("input_limit", c.input_limit);
  s.number("rate_input_limit", c.rate_input_limit);
  s.number("deflection_limit", c.deflection_limit);
  s.number("z1_eps", c.z1_eps);
  if (s.has("envelope")) {
    Section e(s.at("envelope"), "scenario.controller.envelope");
    auto& v = c.envelope;
    e.number("T0", v.T0), e.number("t0", v.t0), e.number("a0", v.a0), e.number("b0", v.b0);
    e.number("theta0", v.theta0), e.number("phi0", v.phi0), e.number("u0", v.u0);
    e.number("u1", v.u1), e.number("w0", v.w0), e.number("w1", v.w1), e.number("P", v.P);
  }
}

inline void read_scenario(const json& j, Scenario& sc) {
  Section s(j, "scenario");
  s.vec3("xi0", sc.xi0);
  s.vec3("xi_d", sc.xi_d);
  s.number("duration", sc.duration);
  s.number("dt", sc.dt);
  s.seed("seed", sc.seed);
  s.boolean("dryden", sc.dryden);
  s.number("estimate_tau", sc.estimate_tau);
  s.integer("control_divider", sc.control_divider);
  s.choice("baseline_estimate", sc.baseline_estimate,
           {{"gust", BaselineEstimate::gust}, {"mean_plus_gust", BaselineEstimate::mean_plus_gust}});
  if (s.has("dryden_altitude_ft")) s.number("dryden_altitude_ft", sc.dryden_config.altitude_ft);
  s.choice("dryden_airspeed", sc.dryden_config.airspeed_U,
           {{"airspeed", DrydenAirspeed::airspeed}, {"as_printed", DrydenAirspeed::as_printed}});
  if (s.has("wind")) read_wind(s.at("wind"), sc.wind);
  if (s.has("controller")) read_controller(s.at("controller"), sc.controller);
  s.boolean("drag", sc.plant.drag);
}

inline void read_solver(const json& j, Scenario& sc) {
  Section s(j, "solver");
  SolverConfig sv = sc.plant.solver;
  s.number("tolerance", sv.tolerance);
  s.integer("max_iterations", sv.max_iterations);
  s.number("relaxation", sv.relaxation);
  s.number("actuator_limit", sv.actuator_limit);
  sc.plant.solver = sv;
  sc.controller.solver = sv;
  s.number("allocation_tolerance", sc.controller.allocation.tolerance);
  s.integer("allocation_max_iterations", sc.controller.allocation.max_iterations);
}

}  // namespace detail

/// Parses a configuration document. Relative file paths are resolved against
/// `base_dir`. Validation of the assembled scenario happens here, before any
/// computation.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  using detail::Section;
  RunConfig rc;
  Section root(j, "config");
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return (fp.is_absolute() ? fp : base_dir / fp).lexically_normal().string();
  };
  if (root.has("vehicle")) {
    Section v(root.at("vehicle"), "vehicle");
    std::string p;
    v.string("params", p);
    if (!p.empty()) rc.vehicle_params = resolve(p);
  }
  if (root.has("scenario")) detail::read_scenario(root.at("scenario"), rc.scenario);
  if (root.has("solver")) detail::read_solver(root.at("solver"), rc.scenario);
  if (root.has("aero")) {
    Section a(root.at("aero"), "aero");
    if (a.has("model")) {
      if (!a.at("model").is_string()) throw ConfigError("'aero.model' must be a string");
      rc.aero.models[rc.scenario.wind.direction_deg] = resolve(a.at("model").get<std::string>());
    }
    if (a.has("models")) {
      Section m(a.at("models"), "aero.models");
      for (auto it = a.at("models").begin(); it != a.at("models").end(); ++it) {
        m.has(it.key());
        double dir = 0;
        try {
          std::size_t used = 0;
          dir = std::stod(it.key(), &used);
          if (used != it.key().size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw ConfigError("'aero.models' keys must be wind directions in degrees");
        }
        if (!it.value().is_string()) throw ConfigError("'aero.models' values must be file paths");
        rc.aero.models[dir] = resolve(it.value().get<std::string>());
      }
    }
    if (a.has("fit")) {
      Section f(a.at("fit"), "aero.fit");
      FitOnTheFly fo;
      f.number("noise_std", fo.noise_std);
      f.seed("seed", fo.seed);
      f.number("ridge_lambda", fo.ridge_lambda);
      rc.aero.fit = fo;
    }
  }
  if (root.has("tunnel")) {
    Section t(root.at("tunnel"), "tunnel");
    auto& g = rc.tunnel.grid;
    detail::read_axis(t, "delta_col", g.delta_col);
    detail::read_axis(t, "delta_lon", g.delta_lon);
    detail::read_axis(t, "delta_lat", g.delta_lat);
    detail::read_axis(t, "wind_speed", g.wind_speed);
    t.number("direction_deg", g.direction_deg);
    t.number("delta_ped", g.delta_ped);
    t.number("noise_std", rc.tunnel.noise_std);
    t.seed("seed", rc.tunnel.seed);
    if (!(rc.tunnel.noise_std >= 0)) throw ConfigError("'tunnel.noise_std' must be >= 0");
    g.validate();
  }
  if (root.has("compare")) {
    Section c(root.at("compare"), "compare");
    auto& o = rc.compare.options;
    if (c.has("speeds")) o.speeds = c.numbers("speeds");
    if (c.has("directions")) o.directions = c.numbers("directions");
    if (c.has("modes")) {
      o.modes.clear();
      const auto& m = c.at("modes");
      if (!m.is_array()) throw ConfigError("'compare.modes' must be an array");
      for (const auto& x : m) {
        if (!x.is_string()) throw ConfigError("'compare.modes' must contain strings");
        try {
          o.modes.push_back(control_mode_from_string(x.get<std::string>()));
        } catch (const ConfigError&) {
          throw ConfigError("'compare.modes' entries must be hybrid or baseline");
        }
      }
    }
    c.boolean("case_gains", o.case_gains);
    c.boolean("common_random_numbers", o.common_random_numbers);
    c.boolean("bounds", rc.compare.bounds);
    c.choice("kind", rc.compare.kind,
             {{"type_i", WindKind::type_i}, {"type_ii", WindKind::type_ii}});
    for (double v : o.speeds)
      if (!(v >= 0)) throw ConfigError("'compare.speeds' must be >= 0");
    for (double d : o.directions)
      if (!(d >= 0 && d < 360)) throw ConfigError("'compare.directions' must be in [0, 360)");
  }
  if (root.has("output")) {
    Section o(root.at("output"), "output");
    std::string d;
    o.string("dir", d);
    if (!d.empty()) rc.output.dir = resolve(d);
    o.boolean("emit_svg", rc.output.emit_svg);
  }
  rc.scenario.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), 0);
  }
  return run_config_from_json(j, std::filesystem::path(path).parent_path());
}

}  // namespace heli
