#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include <boost/math/tools/roots.hpp>

#include "heli/errors.hpp"
#include "heli/vehicle_model.hpp"

namespace heli {

struct InflowSolution {
  double thrust = 0;            // N
  double induced_velocity = 0;  // m/s, same sign as thrust
  int iterations = 0;
  double residual = 0;
  bool used_fallback = false;
};

struct SolverConfig {
  double tolerance = 1e-10;
  int max_iterations = 200;
  double relaxation = 0.5;
  double actuator_limit = 1.0;  // |delta| bound used by the inversions

  void validate() const {
    if (!(tolerance > 0)) throw ConfigError("solver tolerance must be > 0");
    if (max_iterations < 1) throw ConfigError("solver max_iterations must be >= 1");
    if (!(relaxation > 0 && relaxation <= 1)) throw ConfigError("solver relaxation must be in (0, 1]");
    if (!(actuator_limit > 0)) throw ConfigError("actuator_limit must be > 0");
  }
};

// Velocity state seen by a rotor. wind_body is the wind vector in body axes;
// the air-relative velocity V_body - wind_body enters the inflow term only.
struct FlightCondition {
  Vec3 V_body = Vec3::Zero();
  Vec3 Omega = Vec3::Zero();
  Vec3 wind_body = Vec3::Zero();
};

enum class Rotor { main, tail };

namespace detail {

// One momentum-theory rotor:
//   T    = (axial + A*delta - Vi) * B / 4
//   Vi^2 = sqrt(X^2/4 + C T^2) - X/2
//   X    = ua^2 + va^2 + wa (wa - 2 Vi)
struct InflowProblem {
  double axial;  // ground-referenced inflow velocity of line 1
  double A, B, C;
  double delta;
  double ua, va, wa;  // air-relative velocity components of the X term

  double thrust(double Vi) const { return (axial + A * delta - Vi) * B / 4; }
  double X(double Vi) const { return ua * ua + va * va + wa * (wa - 2 * Vi); }
  // Induced velocity takes the sign of the thrust, so reversed thrust gets
  // reversed inflow; it is the nonnegative root whenever T >= 0.
  double vi_from(double T, double X) const {
    const double s = std::sqrt(X * X / 4 + C * T * T) - X / 2;
    return std::copysign(std::sqrt(std::max(0.0, s)), T);
  }
  // Residuals of lines 1 and 2 at (T, Vi).
  std::pair<double, double> residuals(double T, double Vi) const {
    const double x = X(Vi);
    return {T - thrust(Vi), Vi * Vi - (std::sqrt(x * x / 4 + C * T * T) - x / 2)};
  }
  double residual(double T, double Vi) const {
    const auto [r1, r2] = residuals(T, Vi);
    return std::max(std::abs(r1), std::abs(r2));
  }
  // Lines 2-3 reduce to Vi^2 (ua^2 + va^2 + (wa - Vi)^2) = C T^2. Taking the
  // signed square root and substituting T from line 1 leaves a scalar
  // equation in Vi that tends to -inf / +inf at either end.
  double scalar(double Vi) const {
    const double h = ua * ua + va * va + (wa - Vi) * (wa - Vi);
    return Vi * std::sqrt(h) - std::sqrt(C) * thrust(Vi);
  }
};

inline InflowSolution solve_inflow(const InflowProblem& pb, const SolverConfig& cfg) {
  cfg.validate();
  InflowSolution sol;
  double Vi = 0;
  double T = pb.thrust(Vi);
  double res = pb.residual(T, Vi);
  int it = 0;
  for (; it < cfg.max_iterations && res > cfg.tolerance; ++it) {
    T = pb.thrust(Vi);
    const double target = pb.vi_from(T, pb.X(Vi));
    Vi = (1 - cfg.relaxation) * Vi + cfg.relaxation * target;
    T = pb.thrust(Vi);
    res = pb.residual(T, Vi);
    if (!std::isfinite(res)) break;
  }
  // Once converged, polish while the residual keeps shrinking.
  for (int extra = 0; extra < 20 && res <= cfg.tolerance && res > 0; ++extra) {
    const double target = pb.vi_from(T, pb.X(Vi));
    const double Vi2 = (1 - cfg.relaxation) * Vi + cfg.relaxation * target;
    const double T2 = pb.thrust(Vi2);
    const double r2 = pb.residual(T2, Vi2);
    if (!(r2 < res)) break;
    Vi = Vi2, T = T2, res = r2;
  }
  if (std::isfinite(res) && res <= cfg.tolerance && Vi * T >= 0) {
    sol.thrust = T;
    sol.induced_velocity = Vi;
    sol.iterations = it;
    sol.residual = res;
    return sol;
  }

  // Bracketed fallback on Vi (equivalently on T, which is affine in Vi).
  if (pb.scalar(0) == 0) {
    sol.thrust = pb.thrust(0);
    sol.residual = pb.residual(sol.thrust, 0);
    sol.iterations = it;
    sol.used_fallback = true;
    return sol;
  }
  const double span = 2 * std::abs(pb.wa) + std::pow(pb.C * std::pow(pb.thrust(0), 2), 0.25) + 1;
  double lo = pb.scalar(0) > 0 ? -span : 0.0;
  double hi = pb.scalar(0) > 0 ? 0.0 : span;
  for (int grow = 0; grow < 60 && pb.scalar(lo) > 0; ++grow) lo *= 2;
  for (int grow = 0; grow < 60 && pb.scalar(hi) < 0; ++grow) hi *= 2;
  if (!(pb.scalar(lo) <= 0 && pb.scalar(hi) >= 0))
    throw SolverError("inflow: no bracket for fallback search", res, it);
  std::uintmax_t max_iter = 200;
  const auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-15 * std::max(1.0, std::abs(b)); };
  auto [lo_v, hi_v] = boost::math::tools::bisect([&](double v) { return pb.scalar(v); }, lo, hi,
                                                 tol, max_iter);
  Vi = 0.5 * (lo_v + hi_v);
  T = pb.thrust(Vi);
  res = pb.residual(T, Vi);
  if (!(res <= cfg.tolerance))
    throw SolverError("inflow: fixed point did not converge", res, it + static_cast<int>(max_iter));
  sol.thrust = T;
  sol.induced_velocity = Vi;
  sol.iterations = it + static_cast<int>(max_iter);
  sol.residual = res;
  sol.used_fallback = true;
  return sol;
}

inline InflowProblem main_problem(double delta_col, const FlightCondition& fc,
                                  const VehicleParams& p) {
  const Vec3 air = fc.V_body - fc.wind_body;
  return {fc.V_body.z(), p.A0, p.B0, p.C0, delta_col, air.x(), air.y(), air.z()};
}

// The lateral tail-hub velocity uses the tail offsets (l_x, l_z) for the
// printed T_x, T_z; the X term reuses the body-frame velocity as printed.
inline InflowProblem tail_problem(double delta_ped, const FlightCondition& fc,
                                  const VehicleParams& p) {
  const Vec3 air = fc.V_body - fc.wind_body;
  const double axial = fc.V_body.y() + fc.Omega.z() * p.l_x + fc.Omega.x() * p.l_z;
  return {axial, p.A1, p.B1, p.C1, delta_ped, air.x(), air.y(), air.z()};
}

}  // namespace detail

inline InflowSolution solve_main_thrust(double delta_col, const Vec3& V_body, const Vec3& wind_body,
                                        const VehicleParams& p, const SolverConfig& cfg = {}) {
  return detail::solve_inflow(detail::main_problem(delta_col, {V_body, Vec3::Zero(), wind_body}, p),
                              cfg);
}

inline InflowSolution solve_tail_thrust(double delta_ped, const Vec3& V_body, const Vec3& Omega,
                                        const Vec3& wind_body, const VehicleParams& p,
                                        const SolverConfig& cfg = {}) {
  return detail::solve_inflow(detail::tail_problem(delta_ped, {V_body, Omega, wind_body}, p), cfg);
}

inline InflowSolution solve_thrust(Rotor rotor, double delta, const FlightCondition& fc,
                                   const VehicleParams& p, const SolverConfig& cfg = {}) {
  return rotor == Rotor::main ? solve_main_thrust(delta, fc.V_body, fc.wind_body, p, cfg)
                              : solve_tail_thrust(delta, fc.V_body, fc.Omega, fc.wind_body, p, cfg);
}

/// Deflection whose forward solve reproduces `target` thrust. max_thrust, when
/// given, is the envelope bound (T0 or t0) on |target|.
inline double invert_thrust_to_input(double target, Rotor rotor, const FlightCondition& fc,
                                     const VehicleParams& p, const SolverConfig& cfg = {},
                                     std::optional<double> max_thrust = std::nullopt) {
  if (!std::isfinite(target)) throw DomainError("invert_thrust_to_input: non-finite target");
  if (max_thrust && std::abs(target) > *max_thrust)
    throw EnvelopeError("thrust target " + std::to_string(target) + " N outside envelope");
  auto f = [&](double delta) { return solve_thrust(rotor, delta, fc, p, cfg).thrust - target; };
  const double lo = -cfg.actuator_limit, hi = cfg.actuator_limit;
  const double flo = f(lo), fhi = f(hi);
  if (flo == 0) return lo;
  if (fhi == 0) return hi;
  if (flo > 0 || fhi < 0)
    throw EnvelopeError("thrust target " + std::to_string(target) +
                        " N unreachable within actuator limits");
  std::uintmax_t max_iter = 200;
  const auto tol = [](double a, double b) { return std::abs(b - a) <= 4e-16 * std::max(1.0, std::abs(b)); };
  auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, max_iter);
  const double fa = f(a), fb = f(b);
  return std::abs(fa) <= std::abs(fb) ? a : b;
}

// ---------------------------------------------------------------------------
// Flapping and servo dynamics.

inline FlapState flap_derivs(const FlapState& s, const Vec3& Omega, double delta_lon,
                             double delta_lat, const VehicleParams& P) {
  const double p = Omega.x(), q = Omega.y();
  FlapState d;
  d.a1 = -s.a1 / P.tau_f + q + P.A_c / P.tau_f * s.c + P.A_lon / P.tau_f * delta_lon;
  d.b1 = -s.b1 / P.tau_f + p + P.B_d / P.tau_f * s.c + P.B_lat / P.tau_f * delta_lat;
  d.c = -s.c / P.tau_s + q + P.C_lon / P.tau_s * delta_lon;
  d.d = -s.d / P.tau_s + p + P.D_lat / P.tau_s * delta_lat;
  return d;
}

struct ServoOutput {
  double ddelta_lon = 0, ddelta_lat = 0;
  double delta_col = 0, delta_ped = 0;
};

inline double servo_rate(double delta, double u, double tau, ServoPoleConvention conv) {
  return conv == ServoPoleConvention::as_printed ? -tau * delta + u : (u - delta) / tau;
}

// Input that holds a dynamic servo at `delta` in steady state.
inline double servo_hold_input(double delta, double tau, ServoPoleConvention conv) {
  return conv == ServoPoleConvention::as_printed ? tau * delta : delta;
}

inline ServoOutput servo_update(double delta_lon, double delta_lat, double u_lon, double u_lat,
                                double u_col, double u_ped, const VehicleParams& P) {
  ServoOutput o;
  o.ddelta_lon = servo_rate(delta_lon, u_lon, P.tau_lon, P.servo_pole_convention);
  o.ddelta_lat = servo_rate(delta_lat, u_lat, P.tau_lat, P.servo_pole_convention);
  o.delta_col = P.K_col * u_col;
  o.delta_ped = P.K_ped * u_ped;
  return o;
}

struct CyclicDeflection {
  double delta_lon = 0, delta_lat = 0;
};

// Servo deflections giving equilibrium flap (a1, b1) at rates (p, q). The
// steady flap system is triangular: c fixes a1 through delta_lon, then b1
// (coupled to c) fixes delta_lat.
inline CyclicDeflection steady_state_cyclic_deflection(double a1_des, double b1_des, double p,
                                                       double q, const VehicleParams& P) {
  const double den_lon = P.A_c * P.C_lon + P.A_lon;
  if (std::abs(den_lon) < 1e-12 || std::abs(P.B_lat) < 1e-12)
    throw ConfigError("cyclic inversion: singular flap gain combination");
  CyclicDeflection d;
  d.delta_lon = (a1_des - (P.tau_f + P.A_c * P.tau_s) * q) / den_lon;
  const double c = P.tau_s * q + P.C_lon * d.delta_lon;
  d.delta_lat = (b1_des - P.tau_f * p - P.B_d * c) / P.B_lat;
  return d;
}

struct CyclicInput {
  double u_lon = 0, u_lat = 0;
};

inline CyclicInput steady_state_cyclic_inversion(double a1_des, double b1_des, double p, double q,
                                                 const VehicleParams& P) {
  if (P.servo_pole_convention == ServoPoleConvention::as_printed &&
      (P.tau_lon == 0 || P.tau_lat == 0))
    throw ConfigError("cyclic inversion: zero servo gain");
  const auto d = steady_state_cyclic_deflection(a1_des, b1_des, p, q, P);
  return {servo_hold_input(d.delta_lon, P.tau_lon, P.servo_pole_convention),
          servo_hold_input(d.delta_lat, P.tau_lat, P.servo_pole_convention)};
}

}  // namespace heli
