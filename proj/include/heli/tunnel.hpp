#pragma once

/**
 * @file tunnel.hpp
 * @brief Surrogate wind-tunnel truth and the static balance dataset.
 *
 * The surrogate stands in for measured tunnel data. It adds two effects to
 * the rotor forces of the still-air model:
 *   - quadratic fuselage drag  dF_i = -1/2 rho CdA_i |v_rel| v_rel_i, acting
 *     at r_cp, so dM = r_cp x dF;
 *   - the rotor thrust shift obtained by re-solving the inflow relations with
 *     and without the wind in the air-relative velocity term.
 * v_rel is the body velocity relative to the air (minus the wind for a
 * body at rest).
 */

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "heli/errors.hpp"
#include "heli/format.hpp"
#include "heli/random.hpp"
#include "heli/rotor_actuation.hpp"
#include "heli/wind.hpp"

namespace heli {

struct SurrogateConfig {
  Vec3 CdA{0.08, 0.25, 0.15};  // m^2
  Vec3 r_cp{0.0, 0.0, -0.20};  // m, body frame
  bool main_rotor_shift = true;
  bool tail_rotor_shift = true;
};

inline ForceMoment drag_increment(const Vec3& v_rel, double rho, const SurrogateConfig& cfg) {
  ForceMoment fm;
  const double speed = v_rel.norm();
  fm.F = -0.5 * rho * speed * cfg.CdA.cwiseProduct(v_rel);
  fm.M = cfg.r_cp.cross(fm.F);
  return fm;
}

struct FlapAngles {
  double a1 = 0, b1 = 0;
};

// Steady flap angles for fixed servo deflections with the body at rest.
inline FlapAngles static_flap(double delta_lon, double delta_lat, const VehicleParams& P) {
  const double c = P.C_lon * delta_lon;
  return {P.A_c * c + P.A_lon * delta_lon, P.B_d * c + P.B_lat * delta_lat};
}

/// Rotor forces and moments at the given flight condition.
inline ForceMoment rotor_forces(const ActuatorState& d, double a1, double b1,
                                const FlightCondition& fc, const VehicleParams& P,
                                const SolverConfig& cfg = {}) {
  const double T = solve_thrust(Rotor::main, d.delta_col, fc, P, cfg).thrust;
  const double Tt = solve_thrust(Rotor::tail, d.delta_ped, fc, P, cfg).thrust;
  return assemble_forces_moments(std::max(T, 0.0), Tt, a1, b1, P);
}

inline ForceMoment surrogate_aero(const ActuatorState& d, const Vec3& v_rel,
                                  const VehicleParams& P, const SurrogateConfig& cfg = {},
                                  const SolverConfig& scfg = {}) {
  ForceMoment out = drag_increment(v_rel, P.rho, cfg);
  if (v_rel.isZero(0)) return out;
  if (!cfg.main_rotor_shift && !cfg.tail_rotor_shift) return out;
  const FlapAngles f = static_flap(d.delta_lon, d.delta_lat, P);
  FlightCondition still, windy;
  windy.wind_body = -v_rel;
  // Disabled rotor channels see still air in both evaluations.
  const double T0 = solve_thrust(Rotor::main, d.delta_col, still, P, scfg).thrust;
  const double Tt0 = solve_thrust(Rotor::tail, d.delta_ped, still, P, scfg).thrust;
  const double T1 =
      cfg.main_rotor_shift ? solve_thrust(Rotor::main, d.delta_col, windy, P, scfg).thrust : T0;
  const double Tt1 =
      cfg.tail_rotor_shift ? solve_thrust(Rotor::tail, d.delta_ped, windy, P, scfg).thrust : Tt0;
  const ForceMoment base = assemble_forces_moments(std::max(T0, 0.0), Tt0, f.a1, f.b1, P);
  const ForceMoment with = assemble_forces_moments(std::max(T1, 0.0), Tt1, f.a1, f.b1, P);
  out.F += with.F - base.F;
  out.M += with.M - base.M;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

struct TunnelSample {
  double delta_col = 0, delta_lon = 0, delta_lat = 0;
  double wind_speed = 0, direction_deg = 0;
  double Fx = 0, Fy = 0, Fz = 0, Mx = 0, My = 0, Mz = 0;

  bool operator==(const TunnelSample&) const = default;
};

struct GridAxis {
  int count = 1;
  double lo = 0, hi = 0;

  std::vector<double> values() const {
    std::vector<double> v;
    for (int i = 0; i < count; ++i)
      v.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (count - 1));
    return v;
  }
};

struct TunnelGrid {
  GridAxis delta_col{9, 0.0, 0.16};
  GridAxis delta_lon{5, -1.0, 1.0};
  GridAxis delta_lat{5, -1.0, 1.0};
  GridAxis wind_speed{9, 0.0, 8.0};
  double direction_deg = 0;
  // Pedal held during the sweep; NaN selects the hover-trim pedal.
  double delta_ped = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const {
    return static_cast<std::size_t>(delta_col.count) * delta_lon.count * delta_lat.count *
           wind_speed.count;
  }

  void validate() const {
    for (const GridAxis* a : {&delta_col, &delta_lon, &delta_lat, &wind_speed}) {
      if (a->count < 1) throw ConfigError("tunnel grid: empty axis");
      if (!(a->hi >= a->lo) || !std::isfinite(a->lo) || !std::isfinite(a->hi))
        throw ConfigError("tunnel grid: axis range must satisfy lo <= hi");
    }
    if (wind_speed.lo < 0 || wind_speed.hi > 8.0)
      throw ConfigError("tunnel grid: wind range must lie within [0, 8] m/s");
    for (const GridAxis* a : {&delta_col, &delta_lon, &delta_lat})
      if (std::abs(a->lo) > 1 || std::abs(a->hi) > 1)
        throw ConfigError("tunnel grid: deflections must lie within [-1, 1]");
    if (!(direction_deg >= 0 && direction_deg < 360))
      throw ConfigError("tunnel grid: direction must be in [0, 360)");
  }
};

struct TunnelDataset {
  std::vector<TunnelSample> samples;
  TunnelGrid grid;
  double noise_std = 0;
  double delta_ped = 0;
};

// Still-air hover: tail thrust cancelling the main-rotor torque, and the pedal
// that produces it.
inline double hover_trim_pedal(const VehicleParams& P, const SolverConfig& cfg = {}) {
  const double Tt = -main_rotor_torque(P.m * P.g, P) / P.l_x;
  return invert_thrust_to_input(Tt, Rotor::tail, {}, P, cfg);
}

inline TunnelDataset gen_tunnel_dataset(const TunnelGrid& grid, double noise_std,
                                        std::uint64_t seed, const VehicleParams& P,
                                        const SurrogateConfig& scfg = {},
                                        const SolverConfig& cfg = {}) {
  grid.validate();
  if (!(noise_std >= 0)) throw ConfigError("tunnel noise_std must be >= 0");
  TunnelDataset ds;
  ds.grid = grid;
  ds.noise_std = noise_std;
  ds.delta_ped = std::isnan(grid.delta_ped) ? hover_trim_pedal(P, cfg) : grid.delta_ped;
  ds.samples.reserve(grid.size());
  std::uint64_t index = 0;
  for (double col : grid.delta_col.values())
    for (double lon : grid.delta_lon.values())
      for (double lat : grid.delta_lat.values())
        for (double w : grid.wind_speed.values()) {
          ActuatorState d;
          d.delta_col = col, d.delta_lon = lon, d.delta_lat = lat, d.delta_ped = ds.delta_ped;
          const FlapAngles f = static_flap(lon, lat, P);
          const ForceMoment base = rotor_forces(d, f.a1, f.b1, {}, P, cfg);
          const Vec3 v_rel = -wind_inertial(w, grid.direction_deg);
          const ForceMoment inc = surrogate_aero(d, v_rel, P, scfg, cfg);
          Vec3 F = base.F + inc.F, M = base.M + inc.M;
          if (noise_std > 0) {
            GaussianStream g(mix_seed(seed, index));
            for (int i = 0; i < 3; ++i) F[i] += noise_std * g();
            for (int i = 0; i < 3; ++i) M[i] += noise_std * g();
          }
          ds.samples.push_back({col, lon, lat, w, grid.direction_deg, F.x(), F.y(), F.z(), M.x(),
                                M.y(), M.z()});
          ++index;
        }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kTunnelHeader =
    "delta_col,delta_lon,delta_lat,wind_speed,direction_deg,Fx,Fy,Fz,Mx,My,Mz";

inline void write_tunnel_csv(std::ostream& out, const std::vector<TunnelSample>& samples) {
  out << kTunnelHeader << '\n';
  for (const auto& s : samples) {
    const double v[] = {s.delta_col, s.delta_lon, s.delta_lat, s.wind_speed, s.direction_deg,
                        s.Fx,        s.Fy,        s.Fz,        s.Mx,         s.My,
                        s.Mz};
    for (int i = 0; i < 11; ++i) out << (i ? "," : "") << format_double(v[i]);
    out << '\n';
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) fields.push_back(cur);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline std::vector<TunnelSample> read_tunnel_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("missing header row", 1);
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTunnelHeader) throw ParseError("unexpected header '" + line + "'", lineno);
  std::vector<TunnelSample> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 11)
      throw ParseError("expected 11 columns, found " + std::to_string(f.size()), lineno);
    double v[11];
    for (int i = 0; i < 11; ++i) v[i] = parse_double(f[i], lineno);
    out.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]});
  }
  return out;
}

inline void save_tunnel_csv(const std::string& path, const std::vector<TunnelSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  write_tunnel_csv(out, samples);
  if (!out) throw IoError("write failed for dataset '" + path + "'");
}

inline std::vector<TunnelSample> load_tunnel_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return read_tunnel_csv(in);
}

}  // namespace heli
