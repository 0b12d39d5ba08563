#pragma once

/**
 * @file sim.hpp
 * @brief Closed-loop simulation: plant, RK4, hover trim, scenarios, metrics.
 *
 * Full state (18): xi, Theta, V, Omega, flap (a1, b1, c, d), servo
 * deflections (delta_lon, delta_lat). The collective and pedal servos are
 * static. Wind enters the truth plant through the air-relative velocity of
 * the inflow solves and the surrogate fuselage drag.
 */

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heli/aero_fit.hpp"
#include "heli/controller.hpp"
#include "heli/dryden.hpp"
#include "heli/errors.hpp"
#include "heli/format.hpp"
#include "heli/rotor_actuation.hpp"
#include "heli/tunnel.hpp"
#include "heli/vehicle_model.hpp"
#include "heli/wind.hpp"

namespace heli {

using StateVec = Eigen::Matrix<double, 18, 1>;

struct FullState {
  RigidState rigid;
  FlapState flap;
  double delta_lon = 0, delta_lat = 0;
};

struct Inputs {
  double u_lon = 0, u_lat = 0, u_col = 0, u_ped = 0;
};

inline StateVec pack(const FullState& s) {
  StateVec x;
  x << s.rigid.xi, s.rigid.Theta, s.rigid.V, s.rigid.Omega, s.flap.a1, s.flap.b1, s.flap.c,
      s.flap.d, s.delta_lon, s.delta_lat;
  return x;
}

inline FullState unpack(const StateVec& x) {
  FullState s;
  s.rigid.xi = x.segment<3>(0);
  s.rigid.Theta = x.segment<3>(3);
  s.rigid.V = x.segment<3>(6);
  s.rigid.Omega = x.segment<3>(9);
  s.flap = {x(12), x(13), x(14), x(15)};
  s.delta_lon = x(16), s.delta_lat = x(17);
  return s;
}

struct PlantConfig {
  SurrogateConfig aero;  // drag coefficients and centre of pressure
  bool drag = true;
  SolverConfig solver;
};

/// Time derivative of the full state under constant inputs and inertial wind.
inline StateVec plant_derivs(const StateVec& x, const Inputs& u, const Vec3& wind_inertial_v,
                             const VehicleParams& P, const PlantConfig& cfg = {}) {
  const FullState s = unpack(x);
  const Mat3 R = rotation_matrix(s.rigid.Theta);
  const Vec3 wb = R.transpose() * wind_inertial_v;
  const ServoOutput so = servo_update(s.delta_lon, s.delta_lat, u.u_lon, u.u_lat, u.u_col, u.u_ped, P);
  const FlightCondition fc{s.rigid.V, s.rigid.Omega, wb};
  const double T = solve_thrust(Rotor::main, so.delta_col, fc, P, cfg.solver).thrust;
  const double Tt = solve_thrust(Rotor::tail, so.delta_ped, fc, P, cfg.solver).thrust;
  ForceMoment fm = assemble_forces_moments(std::max(T, 0.0), Tt, s.flap.a1, s.flap.b1, P);
  if (cfg.drag) {
    const ForceMoment d = drag_increment(s.rigid.V - wb, P.rho, cfg.aero);
    fm.F += d.F, fm.M += d.M;
  }
  const RigidState rd = rigid_derivs(s.rigid, fm, P);
  const FlapState fd = flap_derivs(s.flap, s.rigid.Omega, s.delta_lon, s.delta_lat, P);
  StateVec dx;
  dx << rd.xi, rd.Theta, rd.V, rd.Omega, fd.a1, fd.b1, fd.c, fd.d, so.ddelta_lon, so.ddelta_lat;
  return dx;
}

/// Classical fourth-order Runge-Kutta step.
template <class F, class X>
X rk4_step(F&& f, const X& x, double dt) {
  if (!(dt > 0)) throw ConfigError("rk4_step: dt must be > 0");
  auto check = [](const X& v) {
    if constexpr (std::is_arithmetic_v<X>) {
      if (!std::isfinite(v)) throw IntegrationError("non-finite state derivative");
    } else {
      if (!v.allFinite()) throw IntegrationError("non-finite state derivative");
    }
    return v;
  };
  const X k1 = check(f(x));
  const X k2 = check(f(X(x + 0.5 * dt * k1)));
  const X k3 = check(f(X(x + 0.5 * dt * k2)));
  const X k4 = check(f(X(x + dt * k3)));
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// ---------------------------------------------------------------------------
// Hover trim

struct Trim {
  FullState state;
  Inputs inputs;
  Allocation allocation;
  double delta_col = 0, delta_ped = 0;
};

/// Still-air hover at rest with the given heading: attitude, flaps, servo
/// deflections and inputs with zero state derivative.
inline Trim hover_trim(const VehicleParams& P, const SolverConfig& solver = {}, double psi = 0.0,
                       const Vec3& xi = Vec3::Zero()) {
  EnvelopeBounds env;
  env.T0 = 1e4, env.t0 = 1e3, env.a0 = 1.0, env.b0 = 1.0;
  AllocationConfig ac{200, 1e-14, {1, 1, 1, 1, 1, 1}};
  Vec3 Theta(0, 0, psi);
  Allocation a = hover_allocation_guess(P);
  for (int it = 0; it < 100; ++it) {
    const Vec3 F = -P.m * gravity_body(Theta, P.g);
    a = allocate(F, Vec3::Zero(), P, env, ac, a).x;
    const Vec3 Fa = assemble_forces_moments(a.T_mr, a.T_t, a.a1, a.b1, P).F;
    // gravity direction that balances the allocated force
    const Vec3 gdir = -Fa.normalized();
    const Vec3 next(std::atan2(gdir.y(), gdir.z()), -std::asin(std::clamp(gdir.x(), -1.0, 1.0)), psi);
    const double change = (next - Theta).norm();
    Theta = next;
    if (change < 1e-15) break;
  }
  Trim t;
  const FlightCondition still{};
  t.delta_col = invert_thrust_to_input(a.T_mr, Rotor::main, still, P, solver);
  t.delta_ped = invert_thrust_to_input(a.T_t, Rotor::tail, still, P, solver);
  const CyclicDeflection cd = steady_state_cyclic_deflection(a.a1, a.b1, 0, 0, P);
  t.allocation = a;
  t.state.rigid.xi = xi;
  t.state.rigid.Theta = Theta;
  t.state.flap = {a.a1, a.b1, P.C_lon * cd.delta_lon, P.D_lat * cd.delta_lat};
  t.state.delta_lon = cd.delta_lon, t.state.delta_lat = cd.delta_lat;
  t.inputs.u_lon = servo_hold_input(cd.delta_lon, P.tau_lon, P.servo_pole_convention);
  t.inputs.u_lat = servo_hold_input(cd.delta_lat, P.tau_lat, P.servo_pole_convention);
  t.inputs.u_col = t.delta_col / P.K_col;
  t.inputs.u_ped = t.delta_ped / P.K_ped;
  return t;
}

inline ControllerMemory memory_from_trim(const Trim& t) {
  ControllerMemory m;
  m.allocation = std::array<double, 4>{t.allocation.T_mr, t.allocation.T_t, t.allocation.a1,
                                       t.allocation.b1};
  m.last_inputs = std::array<double, 4>{t.inputs.u_lon, t.inputs.u_lat, t.inputs.u_col, t.inputs.u_ped};
  m.flybar = std::array<double, 2>{t.state.flap.c, t.state.flap.d};
  m.cyclic_targets = std::array<double, 2>{t.state.delta_lon, t.state.delta_lat};
  return m;
}

// ---------------------------------------------------------------------------
// Scenario and run

enum class BaselineEstimate { gust, mean_plus_gust };

struct Scenario {
  Vec3 xi0{5.0, -5.0, -5.0};
  Vec3 xi_d = Vec3::Zero();
  double duration = 30.0;
  double dt = 0.002;
  WindProfile wind;
  ControllerConfig controller;
  std::uint64_t seed = 1;
  bool dryden = true;
  DrydenConfig dryden_config;
  BaselineEstimate baseline_estimate = BaselineEstimate::gust;
  // first-order low-pass on the baseline wind estimate [s], 0 = raw
  double estimate_tau = 5.0;
  // controller runs every `control_divider` simulation steps, inputs held in between
  int control_divider = 1;
  PlantConfig plant;

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(duration / dt)); }

  void validate() const {
    if (!(dt > 0) || !std::isfinite(dt)) throw ConfigError("scenario dt must be > 0");
    if (!(duration >= dt)) throw ConfigError("scenario duration must be >= dt");
    if (std::abs(steps() * dt - duration) > 1e-9 * duration)
      throw ConfigError("scenario duration must be a whole number of steps");
    if (!xi0.allFinite() || !xi_d.allFinite()) throw ConfigError("scenario positions must be finite");
    wind.validate();
    controller.validate();
    dryden_config.validate();
    if (control_divider < 1) throw ConfigError("scenario control_divider must be >= 1");
    if (!(estimate_tau >= 0) || !std::isfinite(estimate_tau))
      throw ConfigError("scenario estimate_tau must be >= 0");
  }

  // Steps much coarser than the fastest flap/servo time constants are
  // allowed but flagged.
  bool dt_warning(const VehicleParams& P) const {
    double fastest = std::min(P.tau_f, P.tau_s);
    if (P.servo_pole_convention == ServoPoleConvention::reciprocal)
      fastest = std::min({fastest, P.tau_lon, P.tau_lat});
    return dt > fastest / 10;
  }
};

struct TelemetryRecord {
  double t = 0;
  FullState state;
  double delta_col = 0, delta_ped = 0;
  Inputs u;
  double wind_speed = 0, wind_dir = 0;
  double W1 = 0, alloc_res = 0;
  Vec3 F_d = Vec3::Zero(), dF = Vec3::Zero(), F_ref = Vec3::Zero();
};

struct RunResult {
  std::vector<TelemetryRecord> telemetry;
  bool failed = false;
  std::string error;
  std::size_t held_steps = 0;
  std::size_t extrapolated_steps = 0;
  bool dt_warning = false;
};

inline RunResult run(const Scenario& sc, const VehicleParams& P, const PolyModel* model = nullptr) {
  sc.validate();
  if (sc.controller.mode == ControlMode::hybrid && !model)
    throw ConfigError("hybrid scenario requires a wind model");
  RunResult res;
  res.dt_warning = sc.dt_warning(P);
  const std::size_t N = sc.steps();
  res.telemetry.reserve(N + 1);

  const Trim trim = hover_trim(P, sc.plant.solver, sc.controller.psi_d, sc.xi0);
  StateVec x = pack(trim.state);
  ControllerMemory mem = memory_from_trim(trim);
  DrydenConfig dc = sc.dryden_config;
  dc.seed = sc.seed;
  dc.dt = sc.dt;
  dc.V_wind_20ft = 0;
  DrydenFilter dryden(dc);
  Vec3 est_f = Vec3::Zero();
  bool est_init = false;
  ControllerOutput o;

  for (std::size_t k = 0; k <= N; ++k) {
    const double t = static_cast<double>(k) * sc.dt;
    const FullState s = unpack(x);
    const WindSample w = wind_at(sc.wind, t);
    const Vec3 W = wind_inertial(w.speed, w.direction_deg);

    Measurement m;
    m.rigid = s.rigid;
    m.delta_lon = s.delta_lon, m.delta_lat = s.delta_lat;
    m.wind_speed = w.speed, m.wind_direction_deg = w.direction_deg;
    if (sc.controller.mode == ControlMode::baseline) {
      Vec3 est = Vec3::Zero();
      if (sc.dryden) {
        dryden.set_wind_speed(w.speed);
        const DrydenGust gst = dryden.step();
        const double d = w.direction_deg * std::numbers::pi / 180.0;
        const Vec3 along(-std::cos(d), -std::sin(d), 0), across(std::sin(d), -std::cos(d), 0);
        est = gst.u * along + gst.v * across;
      }
      if (sc.baseline_estimate == BaselineEstimate::mean_plus_gust) est += W;
      if (!est_init || sc.estimate_tau == 0) est_f = est;
      else est_f += (sc.dt / (sc.estimate_tau + sc.dt)) * (est - est_f);
      est_init = true;
      m.wind_estimate = est_f;
    }

    if (k % static_cast<std::size_t>(sc.control_divider) == 0) {
      try {
        o = control_step(m, sc.xi_d, model, sc.controller, P, mem, sc.dt * sc.control_divider);
      } catch (const Error& e) {
        res.failed = true;
        res.error = std::string("t=") + format_double(t) + ": " + e.what();
        break;
      }
      if (o.held) ++res.held_steps;
      if (o.model_extrapolated) ++res.extrapolated_steps;
    }
    const Inputs u{o.u_lon, o.u_lat, o.u_col, o.u_ped};

    TelemetryRecord r;
    r.t = t;
    r.state = s;
    r.delta_col = P.K_col * u.u_col, r.delta_ped = P.K_ped * u.u_ped;
    r.u = u;
    r.wind_speed = w.speed, r.wind_dir = w.direction_deg;
    r.W1 = 0.5 * (s.rigid.xi - sc.xi_d).squaredNorm();
    r.alloc_res = o.allocation_residual;
    r.F_d = o.F_d, r.dF = o.dF, r.F_ref = o.F_ref;
    res.telemetry.push_back(r);
    if (k == N) break;

    try {
      // Wind is sampled at the step start and held over the step.
      x = rk4_step([&](const StateVec& y) { return plant_derivs(y, u, W, P, sc.plant); }, x, sc.dt);
      check_gimbal(x(4), "simulation");
    } catch (const Error& e) {
      res.failed = true;
      res.error = std::string("t=") + format_double(t) + ": " + e.what();
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double settling_time = std::numeric_limits<double>::quiet_NaN();  // NaN: not settled
  bool settled = false;
  double steady_state_error = 0;
  double max_deviation = 0;
  double rms_oscillation = std::numeric_limits<double>::quiet_NaN();  // NaN: not settled
  double rms_final_window = 0;
};

struct TrajectoryPoint {
  double t;
  Vec3 xi;
};

inline Metrics compute_metrics(const std::vector<TrajectoryPoint>& tr, const Vec3& xi_d,
                               double window = 5.0) {
  if (tr.empty()) throw ConfigError("compute_metrics: empty telemetry");
  Metrics m;
  const double e0 = (tr.front().xi - xi_d).norm();
  const double band = std::max(0.02 * e0, 0.1);
  const double t_end = tr.back().t;
  std::ptrdiff_t last_out = -1;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double e = (tr[i].xi - xi_d).norm();
    m.max_deviation = std::max(m.max_deviation, e);
    if (e > band) last_out = static_cast<std::ptrdiff_t>(i);
  }
  if (last_out + 1 < static_cast<std::ptrdiff_t>(tr.size())) {
    m.settled = true;
    m.settling_time = tr[static_cast<std::size_t>(last_out + 1)].t;
  }
  // final window
  Vec3 mean = Vec3::Zero();
  double sum_e = 0;
  std::size_t n = 0;
  const double t0 = t_end - window;
  for (const auto& p : tr)
    if (p.t >= t0 - 1e-9) mean += p.xi, sum_e += (p.xi - xi_d).norm(), ++n;
  mean /= static_cast<double>(n);
  m.steady_state_error = sum_e / static_cast<double>(n);
  // about the final-window mean, from settling and over the window alone
  auto rms_from = [&](double ts) {
    double acc = 0;
    std::size_t k = 0;
    for (const auto& p : tr)
      if (p.t >= ts - 1e-9) acc += (p.xi - mean).squaredNorm(), ++k;
    return std::sqrt(acc / static_cast<double>(k));
  };
  if (m.settled) m.rms_oscillation = rms_from(m.settling_time);
  m.rms_final_window = rms_from(t0);
  return m;
}

inline Metrics compute_metrics(const std::vector<TelemetryRecord>& tel, const Vec3& xi_d) {
  std::vector<TrajectoryPoint> tr;
  tr.reserve(tel.size());
  for (const auto& r : tel) tr.push_back({r.t, r.state.rigid.xi});
  return compute_metrics(tr, xi_d);
}

// ---------------------------------------------------------------------------
// Telemetry CSV

inline constexpr const char* kTelemetryHeader =
    "t,x,y,z,phi,theta,psi,u,v,w,p,q,r,a1,b1,c,d,dlon,dlat,dcol,dped,ulon,ulat,ucol,uped,"
    "wind_speed,wind_dir,W1,alloc_res";

inline std::array<double, 29> telemetry_row(const TelemetryRecord& r) {
  const auto& s = r.state;
  return {r.t,           s.rigid.xi.x(),    s.rigid.xi.y(),    s.rigid.xi.z(),
          s.rigid.Theta.x(), s.rigid.Theta.y(), s.rigid.Theta.z(), s.rigid.V.x(),
          s.rigid.V.y(),     s.rigid.V.z(),     s.rigid.Omega.x(), s.rigid.Omega.y(),
          s.rigid.Omega.z(), s.flap.a1,         s.flap.b1,         s.flap.c,
          s.flap.d,          s.delta_lon,       s.delta_lat,       r.delta_col,
          r.delta_ped,       r.u.u_lon,         r.u.u_lat,         r.u.u_col,
          r.u.u_ped,         r.wind_speed,      r.wind_dir,        r.W1,
          r.alloc_res};
}

inline void write_telemetry_csv(std::ostream& out, const std::vector<TelemetryRecord>& tel) {
  out << kTelemetryHeader << '\n';
  for (const auto& r : tel) {
    const auto v = telemetry_row(r);
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << format_double(v[i]);
    out << '\n';
  }
}

inline std::vector<TelemetryRecord> read_telemetry_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTelemetryHeader) throw ParseError("unexpected telemetry header", 1);
  std::vector<TelemetryRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 29)
      throw ParseError("expected 29 columns, found " + std::to_string(f.size()), lineno);
    double v[29];
    for (int i = 0; i < 29; ++i) v[i] = parse_double(f[i], lineno);
    TelemetryRecord r;
    r.t = v[0];
    auto& s = r.state;
    s.rigid.xi = {v[1], v[2], v[3]};
    s.rigid.Theta = {v[4], v[5], v[6]};
    s.rigid.V = {v[7], v[8], v[9]};
    s.rigid.Omega = {v[10], v[11], v[12]};
    s.flap = {v[13], v[14], v[15], v[16]};
    s.delta_lon = v[17], s.delta_lat = v[18];
    r.delta_col = v[19], r.delta_ped = v[20];
    r.u = {v[21], v[22], v[23], v[24]};
    r.wind_speed = v[25], r.wind_dir = v[26], r.W1 = v[27], r.alloc_res = v[28];
    out.push_back(r);
  }
  return out;
}

inline void save_telemetry_csv(const std::string& path, const std::vector<TelemetryRecord>& tel) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write telemetry '" + path + "'");
  write_telemetry_csv(out, tel);
  if (!out) throw IoError("write failed for telemetry '" + path + "'");
}

inline std::vector<TelemetryRecord> load_telemetry_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read telemetry '" + path + "'");
  return read_telemetry_csv(in);
}

// ---------------------------------------------------------------------------
// Case gains and comparison

enum class WindAxis { longitude, lateral };

inline double direction_of(WindAxis a) { return a == WindAxis::longitude ? 0.0 : 270.0; }

/// Gains per (case, axis, mode): Case A is the Type I gust, Case B the
/// sustained Type II wind.
inline Gains case_gains(WindKind kind, WindAxis axis, ControlMode mode) {
  const bool hyb = mode == ControlMode::hybrid;
  if (kind == WindKind::type_i) {
    if (axis == WindAxis::longitude) return hyb ? Gains{4, 2} : Gains{2.5, 3};
    return hyb ? Gains{2.5, 3} : Gains{2, 2.5};
  }
  if (axis == WindAxis::longitude) return hyb ? Gains{3, 2.5} : Gains{8, 6};
  return hyb ? Gains{2, 2.5} : Gains{6, 4};
}

struct CompareCell {
  ControlMode mode;
  double speed = 0;
  double direction_deg = 0;
  Metrics metrics;
  bool failed = false;
  std::string error;
  RunResult result;  // kept only when requested
};

struct CompareOptions {
  std::vector<ControlMode> modes{ControlMode::baseline, ControlMode::hybrid};
  std::vector<double> speeds{2, 4, 6, 8};
  std::vector<double> directions{0, 270};
  bool case_gains = true;  // use case_gains() instead of the template's gains
  bool keep_telemetry = false;
  // all speeds of one direction share a noise stream
  bool common_random_numbers = true;
};

/// Runs every (mode, speed, direction) cell. `models` maps a wind direction
/// to its fitted model; cells without a model fail in hybrid mode.
template <class ModelFor>
std::vector<CompareCell> compare(const Scenario& tmpl, const CompareOptions& opt,
                                 const VehicleParams& P, ModelFor&& model_for) {
  std::vector<CompareCell> cells;
  std::uint64_t index = 0, dir_index = 0;
  for (double dir : opt.directions) {
    for (double speed : opt.speeds)
      for (ControlMode mode : opt.modes) {
        CompareCell c;
        c.mode = mode, c.speed = speed, c.direction_deg = dir;
        Scenario sc = tmpl;
        sc.controller.mode = mode;
        sc.wind.speed = speed;
        sc.wind.direction_deg = dir;
        sc.seed = mix_seed(tmpl.seed, opt.common_random_numbers ? dir_index : index);
        ++index;
        if (opt.case_gains) {
          const WindAxis axis = std::fmod(dir, 180.0) == 0 ? WindAxis::longitude : WindAxis::lateral;
          sc.controller.gains = case_gains(sc.wind.kind, axis, mode);
        }
        try {
          const PolyModel* m = mode == ControlMode::hybrid ? model_for(dir) : nullptr;
          RunResult r = run(sc, P, m);
          c.failed = r.failed;
          c.error = r.error;
          if (!r.telemetry.empty()) c.metrics = compute_metrics(r.telemetry, sc.xi_d);
          if (opt.keep_telemetry) c.result = std::move(r);
        } catch (const Error& e) {
          c.failed = true;
          c.error = e.what();
        }
        cells.push_back(std::move(c));
      }
    ++dir_index;
  }
  return cells;
}

}  // namespace heli
