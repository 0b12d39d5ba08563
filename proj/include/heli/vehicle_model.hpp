#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "heli/errors.hpp"
#include "heli/vehicle_params.hpp"

namespace heli {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Euler angles are (phi, theta, psi) = (roll, pitch, yaw), ZYX order.
struct RigidState {
  Vec3 xi = Vec3::Zero();     // inertial position, z down
  Vec3 Theta = Vec3::Zero();  // (phi, theta, psi)
  Vec3 V = Vec3::Zero();      // body velocity (u, v, w)
  Vec3 Omega = Vec3::Zero();  // body rates (p, q, r)
};

struct FlapState {
  double a1 = 0, b1 = 0, c = 0, d = 0;

  // Soft envelope; callers report, never clamp.
  bool within_envelope(double limit = 0.35) const {
    return std::abs(a1) <= limit && std::abs(b1) <= limit && std::abs(c) <= limit &&
           std::abs(d) <= limit;
  }
};

struct ActuatorState {
  double delta_lon = 0, delta_lat = 0;  // dynamic servos
  double delta_col = 0, delta_ped = 0;  // static servos
};

struct ForceMoment {
  Vec3 F = Vec3::Zero();
  Vec3 M = Vec3::Zero();  // (L_m, R_m, N_m)
};

inline void check_gimbal(double theta, const char* who) {
  if (!(std::abs(theta) < std::numbers::pi / 2))
    throw DomainError(std::string(who) + ": pitch angle at or beyond the gimbal singularity");
}

/// Body-to-inertial rotation, R = Rz(psi) Ry(theta) Rx(phi).
inline Mat3 rotation_matrix(const Vec3& Theta) {
  check_gimbal(Theta.y(), "rotation_matrix");
  const double sf = std::sin(Theta.x()), cf = std::cos(Theta.x());
  const double st = std::sin(Theta.y()), ct = std::cos(Theta.y());
  const double sp = std::sin(Theta.z()), cp = std::cos(Theta.z());
  Mat3 R;
  R << ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp,
       ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp,
       -st,     sf * ct,                cf * ct;
  return R;
}

inline Vec3 gravity_body(const Vec3& Theta, double g) {
  check_gimbal(Theta.y(), "gravity_body");
  const double sf = std::sin(Theta.x()), cf = std::cos(Theta.x());
  const double st = std::sin(Theta.y()), ct = std::cos(Theta.y());
  return {-g * st, g * ct * sf, g * ct * cf};
}

inline Vec3 euler_rates(const Vec3& Theta, const Vec3& Omega) {
  check_gimbal(Theta.y(), "euler_rates");
  const double sf = std::sin(Theta.x()), cf = std::cos(Theta.x());
  const double ct = std::cos(Theta.y()), tt = std::tan(Theta.y());
  const double p = Omega.x(), q = Omega.y(), r = Omega.z();
  return {p + (q * sf + r * cf) * tt, q * cf - r * sf, (q * sf + r * cf) / ct};
}

inline double main_rotor_torque(double T_mr, const VehicleParams& params) {
  if (!(T_mr >= 0)) throw DomainError("main_rotor_torque: negative main-rotor thrust");
  return params.C_m * std::pow(T_mr, 1.5) + params.D_mQ;
}

inline ForceMoment assemble_forces_moments(double T_mr, double T_t, double a1, double b1,
                                           const VehicleParams& p) {
  const double MQ = main_rotor_torque(T_mr, p);
  ForceMoment fm;
  fm.F = {-T_mr * a1, T_mr * b1 + T_t, -T_mr};
  const double Fx = fm.F.x(), Fy = fm.F.y();
  fm.M = {p.dL_db1 * b1 + Fy * p.k_x + T_t * p.l_z,
          p.dM_da1 * a1 + Fx * p.k_z,
          MQ + Fy * p.k_x + T_t * p.l_x};
  return fm;
}

inline Vec3 inertia_diag(const VehicleParams& p) { return {p.Jxx, p.Jyy, p.Jzz}; }

inline RigidState rigid_derivs(const RigidState& s, const ForceMoment& fm,
                               const VehicleParams& p) {
  const Mat3 R = rotation_matrix(s.Theta);
  const Vec3 J = inertia_diag(p);
  RigidState d;
  d.xi = R * s.V;
  d.Theta = euler_rates(s.Theta, s.Omega);
  d.V = -s.Omega.cross(s.V) + fm.F / p.m + gravity_body(s.Theta, p.g);
  const Vec3 JW = J.cwiseProduct(s.Omega);
  d.Omega = (-s.Omega.cross(JW) + fm.M).cwiseQuotient(J);
  return d;
}

}  // namespace heli
