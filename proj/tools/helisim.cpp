// helisim: tunnel data generation, model fitting, closed-loop simulation and
// comparison from a single JSON configuration.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "heli/aero_fit.hpp"
#include "heli/config.hpp"
#include "heli/sim.hpp"
#include "heli/svg.hpp"
#include "heli/tunnel.hpp"

namespace fs = std::filesystem;
using namespace heli;

namespace {

enum Exit { ok = 0, config_error = 2, io_error = 3, conditioning = 4, runtime_failure = 5 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig load(const Globals& g) {
  RunConfig rc = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) {
    rc.scenario.seed = *g.seed;
    rc.tunnel.seed = *g.seed;
  }
  if (!g.out.empty()) rc.output.dir = g.out;
  return rc;
}

fs::path out_dir(const RunConfig& rc) {
  const fs::path d(rc.output.dir);
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create output directory '" + d.string() + "': " + ec.message());
  return d;
}

std::string dir_tag(double deg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", deg);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

nlohmann::ordered_json num(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json metrics_json(const Metrics& m) {
  return {{"settled", m.settled},
          {"settling_time", num(m.settling_time)},
          {"steady_state_error", num(m.steady_state_error)},
          {"max_deviation", num(m.max_deviation)},
          {"rms_oscillation", num(m.rms_oscillation)},
          {"rms_final_window", num(m.rms_final_window)}};
}

void print_fit(const PolyModel& m) {
  for (int ch = 0; ch < 5; ++ch)
    std::printf("  %-3s rms %.6e  condition %.6e  coefficients %zu\n", kChannelNames[ch],
                m.channels[ch].residual_rms, m.channels[ch].condition,
                static_cast<std::size_t>(m.channels[ch].coeffs.size()));
}

PolyModel fit_on_the_fly(const RunConfig& rc, double dir, const VehicleParams& P) {
  TunnelGrid g = rc.tunnel.grid;
  g.direction_deg = dir;
  const FitOnTheFly& f = *rc.aero.fit;
  const auto ds = gen_tunnel_dataset(g, f.noise_std, f.seed, P);
  PolySpec spec;
  spec.ridge_lambda = f.ridge_lambda;
  return fit(ds.samples, spec);
}

// Models for the requested directions, loaded or fitted once each.
std::map<double, PolyModel> models_for(const RunConfig& rc, const std::vector<double>& dirs,
                                       const VehicleParams& P) {
  std::map<double, PolyModel> out;
  for (double d : dirs) {
    if (out.count(d)) continue;
    if (auto it = rc.aero.models.find(d); it != rc.aero.models.end()) {
      if (!fs::exists(it->second))
        throw ConfigError("wind model file '" + it->second + "' does not exist");
      out[d] = load_model(it->second);
    } else if (rc.aero.fit) {
      out[d] = fit_on_the_fly(rc, d, P);
    } else {
      throw ConfigError("no wind model for direction " + dir_tag(d) +
                        " (set aero.model, aero.models or aero.fit)");
    }
  }
  return out;
}

int cmd_gen_tunnel(const Globals& g, std::optional<double> noise, std::optional<double> direction,
                   std::optional<double> wind_lo, std::optional<double> wind_hi) {
  RunConfig rc = load(g);
  TunnelConfig t = rc.tunnel;
  if (noise) t.noise_std = *noise;
  if (direction) t.grid.direction_deg = *direction;
  if (wind_lo) t.grid.wind_speed.lo = *wind_lo;
  if (wind_hi) t.grid.wind_speed.hi = *wind_hi;
  if (!(t.noise_std >= 0)) throw ConfigError("noise must be >= 0");
  t.grid.validate();
  const VehicleParams P = rc.vehicle();
  const auto ds = gen_tunnel_dataset(t.grid, t.noise_std, t.seed, P);
  const fs::path p = out_dir(rc) / ("tunnel_" + dir_tag(t.grid.direction_deg) + ".csv");
  save_tunnel_csv(p.string(), ds.samples);
  std::printf("samples %zu\nwrote %s\n", ds.samples.size(), p.string().c_str());
  return ok;
}

int cmd_fit(const Globals& g, const std::string& dataset, double ridge, bool self_check,
            const std::string& model_out) {
  RunConfig rc = load(g);
  const auto samples = load_tunnel_csv(dataset);
  if (samples.empty()) throw ConfigError("dataset '" + dataset + "' has no samples");
  PolySpec spec;
  spec.ridge_lambda = ridge;
  const PolyModel m = fit(samples, spec);
  const fs::path p = model_out.empty()
                         ? out_dir(rc) / ("model_" + dir_tag(m.direction_deg) + ".txt")
                         : fs::path(model_out);
  save_model(p.string(), m);
  std::printf("fit %zu samples, direction %s\n", samples.size(), dir_tag(m.direction_deg).c_str());
  print_fit(m);
  if (self_check) {
    // refit the model's own predictions on the same inputs
    std::vector<TunnelSample> pred = samples;
    for (auto& s : pred) {
      const auto o = eval_model(m, s.delta_lon, s.delta_lat, s.delta_col, s.wind_speed);
      s.Fx = o.Fx, s.Fy = o.Fy, s.Fz = o.Fz, s.Mx = o.Mx, s.My = o.My;
    }
    PolySpec again = spec;
    again.ranges = m.ranges;
    const PolyModel m2 = fit(pred, again);
    double worst = 0;
    for (int ch = 0; ch < 5; ++ch)
      worst = std::max(worst, (m2.channels[ch].coeffs - m.channels[ch].coeffs).lpNorm<Eigen::Infinity>());
    std::printf("refit max coefficient difference %.3e\n", worst);
  }
  std::printf("wrote %s\n", p.string().c_str());
  return ok;
}

int cmd_simulate(const Globals& g, std::optional<std::string> mode, std::optional<double> speed,
                 std::optional<double> direction, bool no_svg) {
  RunConfig rc = load(g);
  Scenario sc = rc.scenario;
  if (mode) sc.controller.mode = control_mode_from_string(*mode);
  if (speed) sc.wind.speed = *speed;
  if (direction) sc.wind.direction_deg = *direction;
  sc.validate();
  const VehicleParams P = rc.vehicle();
  std::map<double, PolyModel> models;
  if (sc.controller.mode == ControlMode::hybrid)
    models = models_for(rc, {sc.wind.direction_deg}, P);
  const RunResult r =
      run(sc, P, sc.controller.mode == ControlMode::hybrid ? &models.at(sc.wind.direction_deg) : nullptr);
  const fs::path d = out_dir(rc);
  save_telemetry_csv((d / "telemetry.csv").string(), r.telemetry);
  const std::string label = to_string(sc.controller.mode) + ", wind " + dir_tag(sc.wind.speed) +
                            " m/s from " + dir_tag(sc.wind.direction_deg) + " deg";
  if (rc.output.emit_svg && !no_svg) {
    save_svg((d / "positions.svg").string(), position_chart(r.telemetry, "Position, " + label));
    save_svg((d / "inputs.svg").string(), input_chart(r.telemetry, "Servo inputs, " + label));
  }
  const Metrics m = compute_metrics(r.telemetry, sc.xi_d);
  nlohmann::ordered_json j = {{"mode", to_string(sc.controller.mode)},
                              {"wind_speed", sc.wind.speed},
                              {"wind_direction_deg", sc.wind.direction_deg},
                              {"failed", r.failed},
                              {"error", r.error},
                              {"held_steps", r.held_steps},
                              {"extrapolated_steps", r.extrapolated_steps},
                              {"dt_warning", r.dt_warning},
                              {"metrics", metrics_json(m)}};
  write_text(d / "metrics.json", j.dump(2) + "\n");
  const Vec3 xf = r.telemetry.back().state.rigid.xi;
  std::printf("%s\nrecords %zu  final |xi - xi_d| %.4f m  sse %.4f m  settling %s\n", label.c_str(),
              r.telemetry.size(), (xf - sc.xi_d).norm(), m.steady_state_error,
              m.settled ? (dir_tag(m.settling_time) + " s").c_str() : "not settled");
  if (r.dt_warning) std::fprintf(stderr, "warning: dt is coarse relative to the fastest plant lag\n");
  if (r.failed) {
    std::fprintf(stderr, "simulation failed: %s\n", r.error.c_str());
    return runtime_failure;
  }
  return ok;
}

void print_bounds(const RunConfig& rc, const VehicleParams& P, const std::vector<Gains>& extra,
                  const std::vector<std::string>& labels) {
  const EnvelopeBounds& e = rc.scenario.controller.envelope;
  const GainBounds b = gain_bounds(e, P);
  std::printf("gain bounds: X_m %.6g  Y_m %.6g  Z_m %.6g  beta_max %.6g  alpha_max %.6g\n", b.X_m,
              b.Y_m, b.Z_m, b.beta_max, b.alpha_max);
  for (std::size_t i = 0; i < extra.size(); ++i) {
    const auto v = validate_gains(extra[i], e, P);
    std::printf("  %-28s alpha %-5g beta %-5g %s\n", labels[i].c_str(), extra[i].alpha, extra[i].beta,
                v.empty() ? "ok" : "VIOLATION");
    for (const auto& x : v)
      std::printf("    %s: value %.6g limit %.6g margin %.3g\n", x.constraint.c_str(), x.value,
                  x.limit, x.margin);
  }
}

std::pair<std::vector<Gains>, std::vector<std::string>> case_gain_list() {
  std::vector<Gains> g;
  std::vector<std::string> l;
  for (WindKind k : {WindKind::type_i, WindKind::type_ii})
    for (WindAxis a : {WindAxis::longitude, WindAxis::lateral})
      for (ControlMode m : {ControlMode::baseline, ControlMode::hybrid}) {
        g.push_back(case_gains(k, a, m));
        l.push_back(std::string(k == WindKind::type_i ? "case A " : "case B ") +
                    (a == WindAxis::longitude ? "longitude " : "lateral ") + to_string(m));
      }
  return {g, l};
}

int cmd_bounds(const Globals& g) {
  RunConfig rc = load(g);
  const VehicleParams P = rc.vehicle();
  auto [gains, labels] = case_gain_list();
  gains.insert(gains.begin(), rc.scenario.controller.gains);
  labels.insert(labels.begin(), "scenario");
  print_bounds(rc, P, gains, labels);
  return ok;
}

int cmd_compare(const Globals& g, bool bounds, std::optional<std::string> kind,
                std::vector<double> speeds) {
  RunConfig rc = load(g);
  Scenario tmpl = rc.scenario;
  CompareOptions opt = rc.compare.options;
  tmpl.wind.kind = rc.compare.kind;
  if (kind) {
    if (*kind == "type_i") tmpl.wind.kind = WindKind::type_i;
    else if (*kind == "type_ii") tmpl.wind.kind = WindKind::type_ii;
    else throw ConfigError("--kind must be type_i or type_ii");
  }
  if (!speeds.empty()) opt.speeds = speeds;
  const VehicleParams P = rc.vehicle();
  if (bounds || rc.compare.bounds) {
    auto [gains, labels] = case_gain_list();
    print_bounds(rc, P, gains, labels);
  }
  std::map<double, PolyModel> models;
  const bool need = std::find(opt.modes.begin(), opt.modes.end(), ControlMode::hybrid) != opt.modes.end();
  if (need) models = models_for(rc, opt.directions, P);
  const auto cells = compare(tmpl, opt, P, [&](double d) -> const PolyModel* {
    auto it = models.find(d);
    return it == models.end() ? nullptr : &it->second;
  });

  std::ostringstream table;
  char line[256];
  std::snprintf(line, sizeof line, "%-9s %7s %7s %10s %10s %10s %10s  %s\n", "mode", "speed", "dir",
                "settling", "sse", "max_dev", "rms", "status");
  table << line;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  bool any_failed = false;
  for (const auto& c : cells) {
    const Metrics& m = c.metrics;
    auto cell = [](double v) { return std::isfinite(v) ? dir_tag(std::round(v * 1e4) / 1e4) : std::string("-"); };
    std::snprintf(line, sizeof line, "%-9s %7g %7g %10s %10.4f %10.4f %10s  %s\n",
                  to_string(c.mode).c_str(), c.speed, c.direction_deg, cell(m.settling_time).c_str(),
                  m.steady_state_error, m.max_deviation, cell(m.rms_oscillation).c_str(),
                  c.failed ? ("FAILED: " + c.error).c_str() : "ok");
    table << line;
    any_failed = any_failed || c.failed;
    rows.push_back({{"mode", to_string(c.mode)},
                    {"speed", c.speed},
                    {"direction_deg", c.direction_deg},
                    {"failed", c.failed},
                    {"error", c.error},
                    {"metrics", metrics_json(m)}});
  }
  const fs::path d = out_dir(rc);
  write_text(d / "compare.txt", table.str());
  nlohmann::ordered_json j = {{"wind_kind", tmpl.wind.kind == WindKind::type_i ? "type_i" : "type_ii"},
                              {"seed", tmpl.seed},
                              {"cells", rows}};
  write_text(d / "compare.json", j.dump(2) + "\n");
  std::cout << table.str();
  return any_failed ? runtime_failure : ok;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConditioningError& e) {
    std::fprintf(stderr, "conditioning error: %s\n", e.what());
    return conditioning;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return io_error;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config_error;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return config_error;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return runtime_failure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return runtime_failure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"helisim: small-helicopter position control in wind"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory");

  auto* gen = app.add_subcommand("gen-tunnel", "generate a surrogate wind-tunnel dataset");
  std::optional<double> noise, direction, wind_lo, wind_hi;
  gen->add_option("--noise", noise, "balance noise standard deviation");
  gen->add_option("--direction", direction, "wind direction, deg");
  gen->add_option("--wind-lo", wind_lo, "lowest wind speed, m/s");
  gen->add_option("--wind-hi", wind_hi, "highest wind speed, m/s");

  auto* fitc = app.add_subcommand("fit", "fit polynomial wind models to a dataset");
  std::string dataset, model_out;
  double ridge = 0;
  bool self_check = false;
  fitc->add_option("dataset", dataset, "tunnel CSV")->required();
  fitc->add_option("--ridge", ridge, "ridge regularisation lambda");
  fitc->add_option("--model", model_out, "model output path");
  fitc->add_flag("--self-check", self_check, "refit the model's own predictions");

  auto* sim = app.add_subcommand("simulate", "run one closed-loop scenario");
  std::optional<std::string> mode;
  std::optional<double> speed, sim_dir;
  bool no_svg = false;
  sim->add_option("--mode", mode, "hybrid or baseline");
  sim->add_option("--speed", speed, "wind speed, m/s");
  sim->add_option("--direction", sim_dir, "wind direction, deg");
  sim->add_flag("--no-svg", no_svg, "skip the SVG charts");

  auto* cmp = app.add_subcommand("compare", "run the mode x speed x direction matrix");
  bool bounds = false;
  std::optional<std::string> kind;
  std::vector<double> speeds;
  cmp->add_flag("--bounds", bounds, "print gain bounds and gain validation");
  cmp->add_option("--kind", kind, "type_i or type_ii");
  cmp->add_option("--speeds", speeds, "wind speeds, m/s");

  auto* bnd = app.add_subcommand("bounds", "print gain bounds and validate gains");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : config_error;
  }

  if (*gen) return guarded([&] { return cmd_gen_tunnel(g, noise, direction, wind_lo, wind_hi); });
  if (*fitc) return guarded([&] { return cmd_fit(g, dataset, ridge, self_check, model_out); });
  if (*sim) return guarded([&] { return cmd_simulate(g, mode, speed, sim_dir, no_svg); });
  if (*cmp) return guarded([&] { return cmd_compare(g, bounds, kind, speeds); });
  if (*bnd) return guarded([&] { return cmd_bounds(g); });
  return config_error;
}
