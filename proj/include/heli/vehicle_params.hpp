#pragma once

/**
 * @file vehicle_params.hpp
 * @brief Physical constants of the small-scale helicopter plant.
 *
 * Defaults describe a 7.6 kg, 0.84 m rotor radius airframe. The six rotor
 * constants (A0, B0, C0 for the main rotor; A1, B1, C1 for the tail rotor)
 * are derived from the primitives and kept alongside them so that a
 * parameter file can be checked for internal consistency.
 */

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "heli/errors.hpp"

namespace heli {

enum class ServoPoleConvention {
  as_printed,  // delta_dot = -tau * delta + u
  reciprocal,  // delta_dot = (u - delta) / tau
};

struct VehicleParams {
  double m = 7.6;
  double Jxx = 0.23, Jyy = 0.82, Jzz = 0.4;
  double g = 9.81;
  double k_x = 0.0, k_z = -0.284;
  double l_x = -0.915, l_z = -0.104;
  double dL_db1 = 199.7, dM_da1 = 107.4;
  double C_m = 0.0044, D_mQ = 0.6304;
  double tau_f = 0.0278, tau_s = 0.22686;
  double A_c = 0.152, B_d = 0.136;
  double A_lon = 0.19, B_lat = 0.17;
  double C_lon = 1.58, D_lat = 1.02;
  double tau_lon = 0.04, tau_lat = 0.04;
  double K_col = 1.0, K_ped = 1.0;
  double Omega_mr = 167.55, Omega_t = 884.3;
  double R_mr = 0.84, R_t = 0.13;
  int B_mr = 2, B_t = 2;
  double c_mr = 0.058, c_t = 0.026;
  double A_mr = 5.7, A_t = 4.0;
  double rho = 1.225;
  ServoPoleConvention servo_pole_convention = ServoPoleConvention::as_printed;

  // Derived rotor constants; refresh with update_derived() after editing
  // any primitive.
  double A0 = 0, B0 = 0, C0 = 0;
  double A1 = 0, B1 = 0, C1 = 0;

  VehicleParams() { update_derived(); }

  struct Derived {
    double A0, B0, C0, A1, B1, C1;
  };

  Derived compute_derived() const {
    constexpr double pi = std::numbers::pi;
    Derived d{};
    d.A0 = 2.0 / 3.0 * Omega_mr * R_mr;
    d.B0 = rho * Omega_mr * R_mr * R_mr * A_mr * B_mr * c_mr;
    d.C0 = 1.0 / (4.0 * rho * rho * pi * pi * std::pow(R_mr, 4));
    d.A1 = 2.0 / 3.0 * Omega_t * R_t;
    d.B1 = rho * Omega_t * R_t * R_t * A_t * B_t * c_t;
    d.C1 = 1.0 / (4.0 * rho * rho * pi * pi * std::pow(R_t, 4));
    return d;
  }

  void update_derived() {
    const Derived d = compute_derived();
    A0 = d.A0, B0 = d.B0, C0 = d.C0;
    A1 = d.A1, B1 = d.B1, C1 = d.C1;
  }

  /// Inertia about the body axes, index 0..2.
  double inertia(int axis) const { return axis == 0 ? Jxx : axis == 1 ? Jyy : Jzz; }

  /// Throws ConfigError listing every violated invariant.
  void validate() const {
    std::vector<std::string> bad;
    auto need = [&](bool ok, const char* what) {
      if (!ok) bad.emplace_back(what);
    };
    auto finite_all = [&] {
      for (double v : {m, Jxx, Jyy, Jzz, g, k_x, k_z, l_x, l_z, dL_db1, dM_da1, C_m, D_mQ, tau_f,
                       tau_s, A_c, B_d, A_lon, B_lat, C_lon, D_lat, tau_lon, tau_lat, K_col,
                       K_ped, Omega_mr, Omega_t, R_mr, R_t, c_mr, c_t, A_mr, A_t, rho}) {
        if (!std::isfinite(v)) return false;
      }
      return true;
    };
    need(finite_all(), "all parameters finite");
    need(m > 0, "m > 0");
    need(Jxx > 0 && Jyy > 0 && Jzz > 0, "Jxx, Jyy, Jzz > 0");
    need(tau_f > 0 && tau_s > 0 && tau_lon > 0 && tau_lat > 0, "time constants > 0");
    need(rho > 0, "rho > 0");
    need(R_mr > 0 && R_t > 0, "rotor radii > 0");
    need(B_mr >= 2 && B_t >= 2, "blade counts >= 2");
    const Derived d = compute_derived();
    auto close = [](double stored, double fresh) {
      return std::abs(stored - fresh) <= 1e-12 * std::max(std::abs(fresh), 1e-300);
    };
    need(close(A0, d.A0) && close(B0, d.B0) && close(C0, d.C0) && close(A1, d.A1) &&
             close(B1, d.B1) && close(C1, d.C1),
         "derived rotor constants consistent with primitives");
    if (!bad.empty()) {
      std::string msg = "invalid vehicle parameters:";
      for (const auto& b : bad) msg += " [" + b + "]";
      throw ConfigError(msg);
    }
  }
};

// ---------------------------------------------------------------------------
// Flat key/value file (a single JSON object). Keys are the field names above.

#define HELI_VEHICLE_PARAM_FIELDS(X)                                                           \
  X(m) X(Jxx) X(Jyy) X(Jzz) X(g) X(k_x) X(k_z) X(l_x) X(l_z) X(dL_db1) X(dM_da1) X(C_m)         \
  X(D_mQ) X(tau_f) X(tau_s) X(A_c) X(B_d) X(A_lon) X(B_lat) X(C_lon) X(D_lat) X(tau_lon)       \
  X(tau_lat) X(K_col) X(K_ped) X(Omega_mr) X(Omega_t) X(R_mr) X(R_t) X(c_mr) X(c_t) X(A_mr)    \
  X(A_t) X(rho)

inline nlohmann::ordered_json to_json(const VehicleParams& p) {
  nlohmann::ordered_json j;
#define X(name) j[#name] = p.name;
  HELI_VEHICLE_PARAM_FIELDS(X)
#undef X
  j["B_mr"] = p.B_mr;
  j["B_t"] = p.B_t;
  j["servo_pole_convention"] =
      p.servo_pole_convention == ServoPoleConvention::as_printed ? "as_printed" : "reciprocal";
  j["A0"] = p.A0;
  j["B0"] = p.B0;
  j["C0"] = p.C0;
  j["A1"] = p.A1;
  j["B1"] = p.B1;
  j["C1"] = p.C1;
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected. Derived
// constants, when present, must agree with the primitives.
inline VehicleParams vehicle_params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("vehicle parameters: expected a key/value object");
  VehicleParams p;
  nlohmann::json derived = nlohmann::json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const auto& v = it.value();
    bool known = false;
#define X(name)                                                                        \
  if (key == #name) {                                                                  \
    if (!v.is_number()) throw ConfigError("vehicle parameter '" + key + "' must be numeric"); \
    p.name = v.get<double>();                                                          \
    known = true;                                                                      \
  }
    HELI_VEHICLE_PARAM_FIELDS(X)
#undef X
    if (key == "B_mr" || key == "B_t") {
      if (!v.is_number_integer()) throw ConfigError("blade count '" + key + "' must be an integer");
      (key == "B_mr" ? p.B_mr : p.B_t) = v.get<int>();
      known = true;
    } else if (key == "servo_pole_convention") {
      const auto s = v.get<std::string>();
      if (s == "as_printed") p.servo_pole_convention = ServoPoleConvention::as_printed;
      else if (s == "reciprocal") p.servo_pole_convention = ServoPoleConvention::reciprocal;
      else throw ConfigError("servo_pole_convention must be as_printed or reciprocal");
      known = true;
    } else if (key == "A0" || key == "B0" || key == "C0" || key == "A1" || key == "B1" ||
               key == "C1") {
      derived[key] = v;
      known = true;
    }
    if (!known) throw ConfigError("unknown vehicle parameter '" + key + "'");
  }
  p.update_derived();
  const auto fresh = p.compute_derived();
  auto check = [&](const char* key, double value) {
    if (!derived.contains(key)) return;
    const double stored = derived[key].get<double>();
    if (std::abs(stored - value) > 1e-12 * std::abs(value))
      throw ConfigError(std::string("derived constant ") + key +
                        " does not match the primitive parameters");
  };
  check("A0", fresh.A0);
  check("B0", fresh.B0);
  check("C0", fresh.C0);
  check("A1", fresh.A1);
  check("B1", fresh.B1);
  check("C1", fresh.C1);
  p.validate();
  return p;
}

inline VehicleParams load_vehicle_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vehicle parameter file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("vehicle parameter file: ") + e.what(), 0);
  }
  return vehicle_params_from_json(j);
}

inline void save_vehicle_params(const VehicleParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vehicle parameter file '" + path + "'");
  out << to_json(p).dump(2) << '\n';
}

}  // namespace heli
