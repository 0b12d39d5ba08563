#pragma once

/**
 * @file controller.hpp
 * @brief Backstepping position controller with wind force/moment
 * compensation, gain bounds and Gauss-Newton control allocation.
 *
 * The backstepping quantities (V^d, F^d, Omega^d, M^d, W1..W3) are available
 * as standalone operations. control_step composes them in one of two ways:
 *
 *   cascade  (default) V^d and Omega^d give an inertial acceleration command
 *            -alpha V - (xi - xi_d); the compensated force sets thrust
 *            magnitude and attitude, an SO(3) attitude loop produces
 *            Omega^d for the moment law, and the allocation favours
 *            thrust and moments over the small flapping side forces.
 *   literal  F^d and M^d straight from the measured state, allocated with
 *            equal weights.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include <boost/math/tools/roots.hpp>

#include "heli/aero_fit.hpp"
#include "heli/errors.hpp"
#include "heli/rotor_actuation.hpp"
#include "heli/vehicle_model.hpp"
#include "heli/vehicle_params.hpp"

namespace heli {

using Vec6 = Eigen::Matrix<double, 6, 1>;

inline Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

inline Vec3 vee(const Mat3& S) { return {S(2, 1), S(0, 2), S(1, 0)}; }

struct Gains {
  double alpha = 4.0;
  double beta = 2.0;

  void validate() const {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("gain alpha must be >= 0");
    if (!(std::abs(beta) > 1e-9) || !std::isfinite(beta))
      throw ConfigError("gain beta must be nonzero (|beta| > 1e-9)");
  }
};

struct EnvelopeBounds {
  double T0 = 150.0;     // max |T_mr|, N
  double t0 = 20.0;      // max |T_t|, N
  double a0 = 0.35;      // max |a1|, rad
  double b0 = 0.35;      // max |b1|, rad
  double theta0 = 0.6;   // rad
  double phi0 = 0.6;     // rad
  double u0 = 0.1;       // min |V|, m/s
  double u1 = 10.0;      // max |V|, m/s
  double w0 = 0.5;       // min |Omega|, rad/s
  double w1 = 3.0;       // max |Omega|, rad/s
  double P = 10.0;       // max |xi|, m

  void validate() const {
    for (double v : {T0, t0, a0, b0, theta0, phi0, u0, u1, w0, w1, P})
      if (!(v > 0) || !std::isfinite(v)) throw ConfigError("envelope bounds must be positive");
    if (u1 < u0) throw ConfigError("envelope: u1 must be >= u0");
    if (w1 < w0) throw ConfigError("envelope: w1 must be >= w0");
  }
};

// ---------------------------------------------------------------------------
// Gain bounds

struct GainBounds {
  double X_m = 0, Y_m = 0, Z_m = 0;
  double beta_max = 0, alpha_max = 0;
};

inline GainBounds gain_bounds(const EnvelopeBounds& e, const VehicleParams& P) {
  e.validate();
  const double m2 = P.m * P.m, g2 = P.g * P.g;
  GainBounds b;
  b.X_m = std::sqrt(2 * e.T0 * e.T0 * e.a0 * e.a0 / m2 + 2 * g2 * e.theta0 * e.theta0);
  b.Y_m = std::sqrt(4 * (e.T0 * e.T0 * e.b0 * e.b0 + e.t0 * e.t0) / m2 + 2 * g2 * e.phi0 * e.phi0);
  b.Z_m = std::sqrt(2 * e.T0 * e.T0 / m2 + 2 * g2 * e.phi0 * e.phi0);
  b.beta_max = std::sqrt(b.X_m * b.X_m + b.Y_m * b.Y_m + b.Z_m * b.Z_m) / e.w0;
  b.alpha_max = (e.u1 * e.w1 + e.P + b.beta_max * e.w1) / e.u0;
  return b;
}

struct GainViolation {
  std::string constraint;
  double value = 0, limit = 0;
  double margin = 0;  // relative excess (value - limit) / |limit|, absolute if limit == 0
};

inline std::vector<GainViolation> validate_gains(const Gains& g, const EnvelopeBounds& e,
                                                 const VehicleParams& P) {
  std::vector<GainViolation> out;
  auto rel = [](double v, double lim) { return lim == 0 ? v - lim : (v - lim) / std::abs(lim); };
  if (!(g.alpha >= 0)) out.push_back({"alpha >= 0", g.alpha, 0.0, -g.alpha});
  if (!(std::abs(g.beta) > 1e-9)) out.push_back({"|beta| > 1e-9", std::abs(g.beta), 1e-9, 0.0});
  const GainBounds b = gain_bounds(e, P);
  if (std::abs(g.beta) > b.beta_max)
    out.push_back({"|beta| <= beta_max", std::abs(g.beta), b.beta_max, rel(std::abs(g.beta), b.beta_max)});
  if (g.alpha > b.alpha_max)
    out.push_back({"alpha <= alpha_max", g.alpha, b.alpha_max, rel(g.alpha, b.alpha_max)});
  return out;
}

// ---------------------------------------------------------------------------
// Backstepping quantities

inline Vec3 desired_velocity(const Vec3& xi, const Vec3& xi_d, double alpha) {
  return -alpha * (xi - xi_d);
}

inline Vec3 desired_force(const Vec3& z1, const Vec3& Omega, const Vec3& Theta, const Gains& g,
                          const VehicleParams& P, double z1_eps = 1e-6) {
  const Vec3 gb = gravity_body(Theta, P.g);
  if (z1.norm() <= z1_eps) return -P.m * gb;
  return P.m * (g.beta * Omega - gb);
}

inline Vec3 desired_angular_velocity(const Vec3& V, const Vec3& xi, const Vec3& xi_d,
                                     const Gains& g) {
  if (!(std::abs(g.beta) > 1e-9)) throw ConfigError("desired_angular_velocity: |beta| too small");
  const Mat3 A = skew(V) + g.beta * Mat3::Identity();
  const Vec3 rhs = -g.alpha * V - (xi - xi_d);
  const auto lu = A.fullPivLu();
  Vec3 x = lu.solve(rhs);
  x += lu.solve(rhs - A * x);  // one refinement step
  return x;
}

enum class MomentLaw { as_printed_V, velocity_error_z1 };

struct ControllerMemory {
  std::optional<Vec3> Omega_d_prev;
  std::optional<std::array<double, 4>> allocation;  // T_mr, T_t, a1, b1
  std::optional<std::array<double, 4>> last_inputs; // u_lon, u_lat, u_col, u_ped
  std::optional<std::array<double, 2>> flybar;      // estimated c, d
  std::optional<std::array<double, 2>> cyclic_targets; // delta_lon, delta_lat
  std::optional<std::array<double, 2>> model_cyclic;   // low-passed delta_lon, delta_lat
  long long steps = 0;
};

// Omega_d rate: backward difference when rate_tau = 0, otherwise a filtered
// derivative with time constant rate_tau (Omega_d_prev then holds the filter state).
inline Vec3 desired_moment(const Vec3& Omega, const Vec3& Omega_d, ControllerMemory& mem,
                           const Vec3& V, const Vec3& V_d, const VehicleParams& P, double dt,
                           MomentLaw law = MomentLaw::as_printed_V, double rate_tau = 0.0) {
  if (!(dt > 0)) throw ConfigError("desired_moment: dt must be > 0");
  if (!(rate_tau >= 0)) throw ConfigError("desired_moment: rate_tau must be >= 0");
  const Vec3 J = inertia_diag(P);
  Vec3 Omega_d_dot = Vec3::Zero();
  if (mem.Omega_d_prev) {
    Omega_d_dot = (Omega_d - *mem.Omega_d_prev) / (rate_tau + dt);
    mem.Omega_d_prev = *mem.Omega_d_prev + dt * Omega_d_dot;
  } else {
    mem.Omega_d_prev = Omega_d;
  }
  const Vec3 w = law == MomentLaw::as_printed_V ? V : Vec3(V - V_d);
  const Vec3 coupling = skew(V_d).transpose() * w;
  return J.cwiseProduct(Omega_d_dot - coupling) + Omega.cross(J.cwiseProduct(Omega));
}

inline std::pair<Vec3, Vec3> compensate(const Vec3& F_d, const Vec3& M_d, const Vec3& dF,
                                        const Vec3& dM) {
  return {F_d + dF, M_d + dM};
}

struct Lyapunov {
  double W1 = 0, W2 = 0, W3 = 0;
};

inline Lyapunov lyapunov(const Vec3& e, const Vec3& z1, const Vec3& z2) {
  Lyapunov l;
  l.W1 = 0.5 * e.squaredNorm();
  l.W2 = l.W1 + 0.5 * z1.squaredNorm();
  l.W3 = l.W2 + 0.5 * z2.squaredNorm();
  return l;
}

// ---------------------------------------------------------------------------
// Allocation: (T_mr, T_t, a1, b1) from a force/moment reference.

struct Allocation {
  double T_mr = 0, T_t = 0, a1 = 0, b1 = 0;
};

struct AllocationResult {
  Allocation x;
  double residual = 0;  // weighted residual norm
  int iterations = 0;
  bool clamped = false;
};

struct AllocationConfig {
  int max_iterations = 50;
  double tolerance = 1e-8;
  std::array<double, 6> weights{1, 1, 1, 1, 1, 1};  // Fx Fy Fz L M N

  void validate() const {
    if (max_iterations < 1) throw ConfigError("allocation max_iterations must be >= 1");
    if (!(tolerance > 0)) throw ConfigError("allocation tolerance must be > 0");
    for (double w : weights)
      if (!(w >= 0)) throw ConfigError("allocation weights must be >= 0");
  }
};

class AllocationError : public SolverError {
 public:
  AllocationError(const std::string& what, const Allocation& best, double residual, int iterations)
      : SolverError(what, residual, iterations), best_(best) {}
  const Allocation& best() const noexcept { return best_; }

 private:
  Allocation best_;
};

inline Vec6 allocation_forward(const Allocation& a, const VehicleParams& P) {
  const ForceMoment fm = assemble_forces_moments(a.T_mr, a.T_t, a.a1, a.b1, P);
  Vec6 y;
  y << fm.F, fm.M;
  return y;
}

inline Allocation hover_allocation_guess(const VehicleParams& P) { return {P.m * P.g, 0, 0, 0}; }

inline AllocationResult allocate(const Vec3& F_ref, const Vec3& M_ref, const VehicleParams& P,
                                 const EnvelopeBounds& env, const AllocationConfig& cfg = {},
                                 std::optional<Allocation> warm = std::nullopt) {
  cfg.validate();
  using Vec4 = Eigen::Vector4d;
  Vec6 target;
  target << F_ref, M_ref;
  const Vec6 W = Eigen::Map<const Vec6>(cfg.weights.data());
  const Vec4 lo(0.0, -env.t0, -env.a0, -env.b0), hi(env.T0, env.t0, env.a0, env.b0);
  auto project = [&](Vec4 x) { return x.cwiseMax(lo).cwiseMin(hi).eval(); };
  auto unpack = [](const Vec4& x) { return Allocation{x(0), x(1), x(2), x(3)}; };
  auto resid = [&](const Vec4& x) {
    return Vec6(W.cwiseProduct(allocation_forward(unpack(x), P) - target));
  };
  auto jacobian = [&](const Vec4& x) {
    const double T = x(0), a1 = x(2), b1 = x(3);
    Eigen::Matrix<double, 6, 4> Jm;
    Jm << -a1, 0, -T, 0,                                      //
        b1, 1, 0, T,                                           //
        -1, 0, 0, 0,                                           //
        P.k_x * b1, P.k_x + P.l_z, 0, P.dL_db1 + P.k_x * T,    //
        -P.k_z * a1, 0, P.dM_da1 - P.k_z * T, 0,               //
        1.5 * P.C_m * std::sqrt(std::max(T, 0.0)) + P.k_x * b1, P.k_x + P.l_x, 0, P.k_x * T;
    return Eigen::Matrix<double, 6, 4>(W.asDiagonal() * Jm);
  };

  const Allocation w0 = warm.value_or(hover_allocation_guess(P));
  Vec4 x = project(Vec4(w0.T_mr, w0.T_t, w0.a1, w0.b1));
  Vec6 r = resid(x);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  int it = 0;
  bool converged = cost == 0;
  while (!converged && it < cfg.max_iterations) {
    ++it;
    const auto Jm = jacobian(x);
    const Vec4 grad = Jm.transpose() * r;
    // Variables pinned at a bound with the gradient pushing outward stay fixed.
    Vec4 free = Vec4::Ones();
    for (int i = 0; i < 4; ++i)
      if ((x(i) <= lo(i) && grad(i) > 0) || (x(i) >= hi(i) && grad(i) < 0)) free(i) = 0;
    const Eigen::Matrix4d H = Jm.transpose() * Jm;
    bool accepted = false;
    for (int tries = 0; tries < 40 && !accepted; ++tries) {
      Eigen::Matrix4d A = free.asDiagonal() * H * free.asDiagonal();
      for (int i = 0; i < 4; ++i)
        A(i, i) = free(i) ? H(i, i) * (1 + lambda) + 1e-14 : 1.0;
      const Vec4 step = A.ldlt().solve(-free.cwiseProduct(grad));
      const Vec4 xn = project(x + step);
      const Vec6 rn = resid(xn);
      const double cn = rn.squaredNorm();
      if (cn <= cost) {
        const Vec4 dx = xn - x;
        x = xn, r = rn;
        const double dcost = cost - cn;
        cost = cn;
        lambda = std::max(lambda / 3, 1e-12);
        accepted = true;
        const Vec4 scale = Vec4::Ones() + x.cwiseAbs();
        if (dx.cwiseQuotient(scale).lpNorm<Eigen::Infinity>() <= cfg.tolerance ||
            dcost <= 1e-16 * cost || cost <= 1e-28)
          converged = true;
      } else {
        lambda *= 4;
      }
    }
    // No descent left along the free directions: a (constrained) minimum.
    if (!accepted) converged = true;
  }
  if (!converged)
    throw AllocationError("allocation did not converge in " + std::to_string(it) + " iterations",
                          unpack(x), std::sqrt(cost), it);
  AllocationResult res;
  res.x = unpack(x);
  res.residual = std::sqrt(cost);
  res.iterations = it;
  // A bound is active when the cost still decreases by leaving the box there.
  const Vec4 grad = jacobian(x).transpose() * r;
  const double gtol = 1e-9 * (1.0 + target.norm());
  for (int i = 0; i < 4; ++i)
    if ((x(i) <= lo(i) && grad(i) > gtol) || (x(i) >= hi(i) && grad(i) < -gtol)) res.clamped = true;
  return res;
}

// ---------------------------------------------------------------------------
// Attitude helpers for the cascade composition.

/// Roll and pitch (yaw fixed at psi) rotating the body force direction
/// `f_body` onto the inertial direction `f_inertial`.
inline Vec3 attitude_for_force(const Vec3& f_inertial, const Vec3& f_body, double psi) {
  const double cp = std::cos(psi), sp = std::sin(psi);
  const Vec3 fi = f_inertial.normalized(), fb = f_body.normalized();
  const Vec3 n(cp * fi.x() + sp * fi.y(), -sp * fi.x() + cp * fi.y(), fi.z());  // Rz^T fi
  // Rx(phi): y-component of Rx fb must equal n.y
  const double rho = std::hypot(fb.y(), fb.z());
  const double gam = std::atan2(fb.z(), fb.y());
  const double phi = -gam - std::acos(std::clamp(n.y() / rho, -1.0, 1.0));
  const double z1 = std::sin(phi) * fb.y() + std::cos(phi) * fb.z();
  const double theta = std::atan2(z1 * n.x() - fb.x() * n.z(), z1 * n.z() + fb.x() * n.x());
  auto wrap = [](double a) { return std::remainder(a, 2 * std::numbers::pi); };
  return {wrap(phi), wrap(theta), psi};
}

inline Vec3 attitude_error(const Mat3& R_d, const Mat3& R) {
  return 0.5 * vee(R_d.transpose() * R - R.transpose() * R_d);
}

// ---------------------------------------------------------------------------
// control_step

enum class ControlMode { hybrid, baseline };
enum class CyclicInversion { flybar_estimate, steady_state };

enum class Composition { cascade, literal };

struct ControllerConfig {
  Gains gains;
  ControlMode mode = ControlMode::hybrid;
  Composition composition = Composition::cascade;
  MomentLaw moment_law = MomentLaw::as_printed_V;
  EnvelopeBounds envelope;
  AllocationConfig allocation{50, 1e-8, {1e-3, 1e-3, 1, 1, 1, 1}};
  SolverConfig solver;
  double z1_eps = 1e-6;
  double k_R = 7.0;             // attitude gain, 1/s
  double k_Omega = 14.0;        // rate gain, 1/s
  double accel_limit_h = 3.0;   // m/s^2, horizontal acceleration command
  double accel_limit_v = 6.0;   // m/s^2, vertical
  double psi_d = 0.0;           // rad
  double omega_d_limit = 2.0;     // rad/s, |Omega_d| from the attitude loop
  double rate_filter_tau = 0.0;   // s, Omega_d rate filter in the moment law
  double model_input_tau = 0.5;   // s, low-pass on the cyclic inputs read by the wind model
  double servo_lead_gain = 60.0;  // 1/s, as_printed servo only
  double input_limit = 1.0;       // |u| for static servos and reciprocal dynamic servos
  double rate_input_limit = 50.0; // |u| for as_printed dynamic servos (a rate command)
  double deflection_limit = 1.0;  // |delta| targets
  CyclicInversion cyclic_inversion = CyclicInversion::flybar_estimate;

  void validate() const {
    gains.validate();
    envelope.validate();
    allocation.validate();
    solver.validate();
    for (double v : {k_R, k_Omega, omega_d_limit, rate_filter_tau + 1, model_input_tau + 1, accel_limit_h, accel_limit_v, input_limit, rate_input_limit,
                     deflection_limit})
      if (!(v > 0)) throw ConfigError("controller gains and limits must be > 0");
    if (!(servo_lead_gain >= 0)) throw ConfigError("servo_lead_gain must be >= 0");
    if (!(z1_eps >= 0)) throw ConfigError("z1_eps must be >= 0");
  }
};

struct Measurement {
  RigidState rigid;
  double delta_lon = 0, delta_lat = 0;  // servo deflections
  double wind_speed = 0;                // measured mean wind, m/s
  double wind_direction_deg = 0;
  Vec3 wind_estimate = Vec3::Zero();    // inertial wind estimate for the baseline
};

struct ControllerOutput {
  double u_lon = 0, u_lat = 0, u_col = 0, u_ped = 0;
  double delta_lon_target = 0, delta_lat_target = 0;
  Vec3 V_d = Vec3::Zero(), Omega_d = Vec3::Zero();
  Vec3 F_d = Vec3::Zero(), M_d = Vec3::Zero();
  Vec3 dF = Vec3::Zero(), dM = Vec3::Zero();
  Vec3 F_ref = Vec3::Zero(), M_ref = Vec3::Zero();
  Allocation allocation;
  double allocation_residual = 0;
  bool allocation_clamped = false;
  Lyapunov W;
  bool model_extrapolated = false;
  bool held = false;  // previous command repeated after an internal failure
  std::string error;
};

namespace detail {

inline double clamp_abs(double v, double lim) { return std::clamp(v, -lim, lim); }

inline Vec3 saturate_accel(const Vec3& a, double h, double v) {
  Vec3 out = a;
  const double n = std::hypot(a.x(), a.y());
  if (n > h) out.x() *= h / n, out.y() *= h / n;
  out.z() = std::clamp(a.z(), -v, v);
  return out;
}

// Fly-bar angles as a first-order lag driven by the rate and the measured
// servo deflection; propagated exactly over one controller period.
inline std::array<double, 2> flybar_steady(const Measurement& m, const VehicleParams& P) {
  return {P.tau_s * m.rigid.Omega.y() + P.C_lon * m.delta_lon,
          P.tau_s * m.rigid.Omega.x() + P.D_lat * m.delta_lat};
}

inline void propagate_flybar(ControllerMemory& mem, const Measurement& m, const VehicleParams& P,
                             double dt) {
  const auto ss = flybar_steady(m, P);
  if (!mem.flybar) mem.flybar = ss;
  const double k = std::exp(-dt / P.tau_s);
  auto& f = *mem.flybar;
  for (int i = 0; i < 2; ++i) f[i] = k * f[i] + (1 - k) * ss[i];
}

inline void cyclic_servo_inputs(ControllerOutput& o, const Measurement& m,
                                const ControllerConfig& cfg, const VehicleParams& P) {
  const bool rate_servo = P.servo_pole_convention == ServoPoleConvention::as_printed;
  auto servo_input = [&](double target, double current, double tau) {
    double u = servo_hold_input(target, tau, P.servo_pole_convention);
    if (rate_servo) u += cfg.servo_lead_gain * (target - current);
    return clamp_abs(u, rate_servo ? cfg.rate_input_limit : cfg.input_limit);
  };
  o.u_lon = servo_input(o.delta_lon_target, m.delta_lon, P.tau_lon);
  o.u_lat = servo_input(o.delta_lat_target, m.delta_lat, P.tau_lat);
}

inline void finish_inputs(ControllerOutput& o, const Measurement& m, const ControllerConfig& cfg,
                          const VehicleParams& P, const ControllerMemory& mem) {
  const RigidState& s = m.rigid;
  const Allocation& a = o.allocation;
  const FlightCondition fc{s.V, s.Omega, Vec3::Zero()};
  const double dcol = invert_thrust_to_input(a.T_mr, Rotor::main, fc, P, cfg.solver);
  const double dped = invert_thrust_to_input(a.T_t, Rotor::tail, fc, P, cfg.solver);
  const double p = s.Omega.x(), q = s.Omega.y();
  CyclicDeflection cd;
  if (cfg.cyclic_inversion == CyclicInversion::flybar_estimate) {
    const auto c = mem.flybar.value_or(flybar_steady(m, P));
    cd.delta_lon = (a.a1 - P.tau_f * q - P.A_c * c[0]) / P.A_lon;
    cd.delta_lat = (a.b1 - P.tau_f * p - P.B_d * c[0]) / P.B_lat;
  } else {
    cd = steady_state_cyclic_deflection(a.a1, a.b1, p, q, P);
  }
  o.delta_lon_target = clamp_abs(cd.delta_lon, cfg.deflection_limit);
  o.delta_lat_target = clamp_abs(cd.delta_lat, cfg.deflection_limit);
  cyclic_servo_inputs(o, m, cfg, P);
  if (P.K_col == 0 || P.K_ped == 0) throw ConfigError("controller: zero static servo gain");
  o.u_col = clamp_abs(dcol / P.K_col, cfg.input_limit);
  o.u_ped = clamp_abs(dped / P.K_ped, cfg.input_limit);
}

}  // namespace detail

/// One controller update. `model` is required in hybrid mode; dt is the
/// controller period.
inline ControllerOutput control_step(const Measurement& meas, const Vec3& xi_d,
                                     const PolyModel* model, const ControllerConfig& cfg,
                                     const VehicleParams& P, ControllerMemory& mem, double dt) {
  ControllerMemory saved = mem;
  try {
    if (cfg.mode == ControlMode::hybrid && !model)
      throw ConfigError("hybrid control requires a wind model");
    const RigidState& s = meas.rigid;
    const Mat3 R = rotation_matrix(s.Theta);
    const Gains& g = cfg.gains;
    const Vec3 e = s.xi - xi_d;
    const Vec3 J = inertia_diag(P);

    std::array<double, 2> cyc{meas.delta_lon, meas.delta_lat};
    if (cfg.mode == ControlMode::hybrid && mem.model_cyclic) {
      const double k = cfg.model_input_tau > 0 ? std::exp(-dt / cfg.model_input_tau) : 0.0;
      for (int i = 0; i < 2; ++i) cyc[i] = k * (*mem.model_cyclic)[i] + (1 - k) * cyc[i];
    }

    // Everything downstream of the wind compensation, evaluated with the
    // model read at collective deflection `dcol`.
    auto evaluate = [&](double dcol, ControllerMemory& mm) {
      ControllerOutput o;
      if (cfg.mode == ControlMode::hybrid) {
        // Wind-induced changes are cancelled: compensation is the negated model delta.
        const ForceMoment d =
            wind_deltas(*model, cyc[0], cyc[1], dcol, meas.wind_speed);
        o.dF = -d.F;
        o.dM = -d.M;
        o.model_extrapolated =
            !model->in_range({cyc[0], cyc[1], dcol, meas.wind_speed});
      }

      const Vec3 V_i = R * s.V;
      const Vec3 V_fb = cfg.mode == ControlMode::baseline ? Vec3(V_i - meas.wind_estimate) : V_i;
      o.V_d = desired_velocity(s.xi, xi_d, g.alpha);
      const Vec3 z1_i = V_fb - o.V_d;
      Vec3 z2;

      if (cfg.composition == Composition::cascade) {
        const Vec3 Omega_t = desired_angular_velocity(V_fb, s.xi, xi_d, g);
        const Vec3 a_cmd = detail::saturate_accel(skew(V_fb) * Omega_t + g.beta * Omega_t,
                                                  cfg.accel_limit_h, cfg.accel_limit_v);
        const Vec3 Omega_eff = R.transpose() * a_cmd / g.beta;
        o.F_d = desired_force(R.transpose() * z1_i, Omega_eff, s.Theta, g, P, cfg.z1_eps);
        const Vec3 f_i = R * (o.F_d + o.dF);

        // Side force of the moment-trimmed rotor (a1 = 0; b1 and T_t balancing
        // roll and yaw) for the commanded force magnitude.
        const double fsq = f_i.squaredNorm();
        double Tz = std::sqrt(fsq), fy = 0.0;
        for (int it = 0; it < 4; ++it) {
          Eigen::Matrix2d A;
          A << P.k_x * Tz, P.k_x + P.l_x, P.dL_db1 + P.k_x * Tz, P.k_x + P.l_z;
          const Eigen::Vector2d bt =
              A.partialPivLu().solve(Eigen::Vector2d(-main_rotor_torque(Tz, P), 0));
          fy = Tz * bt(0) + bt(1);
          Tz = std::sqrt(std::max(fsq - fy * fy, 1e-6));
        }
        const double fx = 0.0;
        const Vec3 Theta_d = attitude_for_force(f_i, Vec3(fx, fy, -Tz), cfg.psi_d);
        const Mat3 R_d = rotation_matrix(Theta_d);
        o.Omega_d = -cfg.k_R * attitude_error(R_d, R);
        if (o.Omega_d.norm() > cfg.omega_d_limit) o.Omega_d *= cfg.omega_d_limit / o.Omega_d.norm();
        z2 = s.Omega - o.Omega_d;
        o.M_d = desired_moment(s.Omega, o.Omega_d, mm, s.V, R.transpose() * o.V_d, P, dt,
                               cfg.moment_law, cfg.rate_filter_tau) -
                cfg.k_Omega * J.cwiseProduct(z2);
      } else {
        const Vec3 V_b = R.transpose() * V_fb;
        o.F_d = desired_force(R.transpose() * z1_i, s.Omega, s.Theta, g, P, cfg.z1_eps);
        o.Omega_d = desired_angular_velocity(V_b, R.transpose() * s.xi, R.transpose() * xi_d, g);
        z2 = s.Omega - o.Omega_d;
        o.M_d = desired_moment(s.Omega, o.Omega_d, mm, V_b, R.transpose() * o.V_d, P, dt,
                               cfg.moment_law, cfg.rate_filter_tau) -
                cfg.k_Omega * J.cwiseProduct(z2);
      }
      std::tie(o.F_ref, o.M_ref) = compensate(o.F_d, o.M_d, o.dF, o.dM);

      AllocationConfig ac = cfg.allocation;
      if (cfg.composition == Composition::literal) ac.weights = {1, 1, 1, 1, 1, 1};
      std::optional<Allocation> warm;
      if (mm.allocation)
        warm = Allocation{(*mm.allocation)[0], (*mm.allocation)[1], (*mm.allocation)[2],
                          (*mm.allocation)[3]};
      const AllocationResult ar = allocate(o.F_ref, o.M_ref, P, cfg.envelope, ac, warm);
      o.allocation = ar.x;
      o.allocation_residual = ar.residual;
      o.allocation_clamped = ar.clamped;
      o.W = lyapunov(e, z1_i, z2);
      detail::finish_inputs(o, meas, cfg, P, mm);
      return o;
    };

    ControllerOutput o;
    ControllerMemory next = mem;
    if (cfg.mode == ControlMode::hybrid) {
      // The model's thrust change depends on the collective being commanded,
      // so solve for a collective that reproduces itself.
      auto run_at = [&](double c) {
        ControllerMemory mm = mem;
        ControllerOutput out = evaluate(c, mm);
        return std::make_tuple(P.K_col * out.u_col - c, out, mm);
      };
      double c0 = mem.last_inputs ? P.K_col * (*mem.last_inputs)[2] : 0.0;
      auto [h0, o0, m0] = run_at(c0);
      o = o0, next = m0;
      bool done = std::abs(h0) <= 1e-9;
      double c1 = c0 + h0;
      for (int it = 0; it < 12 && !done; ++it) {
        auto [h1, o1, m1] = run_at(c1);
        o = o1, next = m1;
        if (std::abs(h1) <= 1e-9) {
          done = true;
          break;
        }
        const double slope = (h1 - h0) / (c1 - c0);
        const double c2 = slope != 0 ? c1 - h1 / slope : c1 + h1;
        c0 = c1, h0 = h1, c1 = c2;
        if (!std::isfinite(c1)) break;
      }
      if (!done) {
        auto h = [&](double c) { return std::get<0>(run_at(c)); };
        const double lim = cfg.input_limit * P.K_col;
        double lo = -lim, hi = lim, flo = h(lo), fhi = h(hi);
        if (flo * fhi > 0) throw SolverError("hybrid collective: no consistent deflection", std::min(std::abs(flo), std::abs(fhi)), 0);
        boost::uintmax_t iters = 60;
        auto [a, b] = boost::math::tools::toms748_solve(
            h, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(40), iters);
        auto [hc, oc, mc] = run_at(0.5 * (a + b));
        o = oc, next = mc;
      }
    } else {
      o = evaluate(0.0, next);
    }
    mem = next;
    if (cfg.mode == ControlMode::hybrid) mem.model_cyclic = cyc;
    detail::propagate_flybar(mem, meas, P, dt);

    const Allocation& ar = o.allocation;
    mem.allocation = std::array<double, 4>{ar.T_mr, ar.T_t, ar.a1, ar.b1};
    mem.last_inputs = std::array<double, 4>{o.u_lon, o.u_lat, o.u_col, o.u_ped};
    mem.cyclic_targets = std::array<double, 2>{o.delta_lon_target, o.delta_lat_target};
    ++mem.steps;
    return o;
  } catch (const Error& err) {
    if (!saved.last_inputs) throw;
    mem = saved;
    ++mem.steps;
    detail::propagate_flybar(mem, meas, P, dt);
    ControllerOutput o;
    const auto& u = *saved.last_inputs;
    o.u_lon = u[0], o.u_lat = u[1], o.u_col = u[2], o.u_ped = u[3];
    // A rate-type servo holds its last deflection target, not its last rate.
    if (saved.cyclic_targets) {
      o.delta_lon_target = (*saved.cyclic_targets)[0];
      o.delta_lat_target = (*saved.cyclic_targets)[1];
      detail::cyclic_servo_inputs(o, meas, cfg, P);
    }
    o.held = true;
    o.error = err.what();
    return o;
  }
}

inline std::string to_string(ControlMode m) { return m == ControlMode::hybrid ? "hybrid" : "baseline"; }

inline ControlMode control_mode_from_string(const std::string& s) {
  if (s == "hybrid") return ControlMode::hybrid;
  if (s == "baseline") return ControlMode::baseline;
  throw ConfigError("unknown controller mode '" + s + "'");
}

}  // namespace heli
