#pragma once

/**
 * @file dryden.hpp
 * @brief Dryden forming filters for longitudinal and lateral gusts.
 *
 *   D_u(s) = sigma_u sqrt(2 L_u / (pi U)) / (1 + L_u/U s)
 *   D_v(s) = sigma_v sqrt(2 L_v / (pi U)) (1 + 2 sqrt(3) L_v/U s) / (1 + 2 L_v/U s)^2
 *
 * driven by white noise of intensity pi and discretized with the bilinear
 * transform. The filters are built with unit intensity and scaled by sigma
 * on output, so a change in wind speed does not disturb the filter state.
 */

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

#include "heli/errors.hpp"
#include "heli/random.hpp"

namespace heli {

enum class DrydenAirspeed {
  airspeed,    // U = max(V_wind, min_airspeed) m/s, scale lengths in metres
  as_printed,  // U = sqrt(h^2 + V_wind^2), 2 L_u = h, lengths left in feet
};

struct DrydenConfig {
  double altitude_ft = 16.4;   // h
  double V_wind_20ft = 0.0;    // m/s
  DrydenAirspeed airspeed_U = DrydenAirspeed::airspeed;
  double min_airspeed = 1.0;   // m/s floor on U in airspeed mode
  std::uint64_t seed = 0;
  double dt = 0.002;

  void validate() const {
    if (!(altitude_ft > 0)) throw ConfigError("Dryden altitude_ft must be > 0");
    if (!(dt > 0)) throw ConfigError("Dryden dt must be > 0");
    if (!(V_wind_20ft >= 0)) throw ConfigError("Dryden V_wind_20ft must be >= 0");
    if (!(min_airspeed > 0)) throw ConfigError("Dryden min_airspeed must be > 0");
  }
};

struct DrydenScales {
  double sigma_w, sigma_u, sigma_v;
  double L_u, L_v;  // scale lengths
  double U;         // airspeed in matching units
};

inline DrydenScales dryden_scales(const DrydenConfig& c) {
  constexpr double ft = 0.3048;
  const double h = c.altitude_ft;
  const double k = 0.177 + 0.000823 * h;
  DrydenScales s{};
  s.sigma_w = 0.1 * c.V_wind_20ft;
  s.sigma_u = s.sigma_w / std::pow(k, 0.4);
  s.sigma_v = s.sigma_u;
  if (c.airspeed_U == DrydenAirspeed::airspeed) {
    s.L_u = h / std::pow(k, 1.2) * ft;
    s.L_v = s.L_u / 2;
    s.U = std::max(c.V_wind_20ft, c.min_airspeed);
  } else {
    s.L_u = h / 2;
    s.L_v = s.L_u / 2;
    s.U = std::sqrt(h * h + c.V_wind_20ft * c.V_wind_20ft);
  }
  return s;
}

/// Second-order section y = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2) x.
struct Biquad {
  double b0 = 0, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  double s1 = 0, s2 = 0;  // transposed direct form II state

  double step(double x) {
    const double y = b0 * x + s1;
    s1 = b1 * x - a1 * y + s2;
    s2 = b2 * x - a2 * y;
    return y;
  }

  std::array<std::complex<double>, 2> poles() const {
    const std::complex<double> disc = std::sqrt(std::complex<double>(a1 * a1 - 4 * a2));
    return {(-a1 + disc) / 2.0, (-a1 - disc) / 2.0};
  }
};

/// Bilinear transform of (n0 + n1 s + n2 s^2) / (d0 + d1 s + d2 s^2). A
/// first-order pair (n2 = d2 = 0) stays first order.
inline Biquad bilinear(double n0, double n1, double n2, double d0, double d1, double d2,
                       double dt) {
  const double c = 2.0 / dt, c2 = c * c;
  Biquad q;
  if (n2 == 0 && d2 == 0) {
    const double A0 = d0 + d1 * c;
    q.b0 = (n0 + n1 * c) / A0, q.b1 = (n0 - n1 * c) / A0;
    q.a1 = (d0 - d1 * c) / A0;
    return q;
  }
  const double B0 = n0 + n1 * c + n2 * c2, B1 = 2 * n0 - 2 * n2 * c2, B2 = n0 - n1 * c + n2 * c2;
  const double A0 = d0 + d1 * c + d2 * c2, A1 = 2 * d0 - 2 * d2 * c2, A2 = d0 - d1 * c + d2 * c2;
  q.b0 = B0 / A0, q.b1 = B1 / A0, q.b2 = B2 / A0;
  q.a1 = A1 / A0, q.a2 = A2 / A0;
  return q;
}

struct DrydenGust {
  double u = 0, v = 0;
};

class DrydenFilter {
 public:
  explicit DrydenFilter(const DrydenConfig& cfg) : cfg_(cfg), noise_(cfg.seed) {
    cfg_.validate();
    rebuild();
  }

  const DrydenConfig& config() const { return cfg_; }
  const DrydenScales& scales() const { return scales_; }
  const Biquad& longitudinal() const { return hu_; }
  const Biquad& lateral() const { return hv_; }

  // Change the reference wind speed; gains follow, filter state is kept.
  // Rebuilds the discrete filters only if the airspeed U actually changes.
  void set_wind_speed(double V_wind) {
    if (V_wind == cfg_.V_wind_20ft) return;
    const double old_U = scales_.U;
    cfg_.V_wind_20ft = V_wind;
    const auto s = dryden_scales(cfg_);
    if (s.U != old_U) {
      const auto su = hu_, sv = hv_;
      scales_ = s;
      rebuild();
      hu_.s1 = su.s1, hu_.s2 = su.s2, hv_.s1 = sv.s1, hv_.s2 = sv.s2;
    } else {
      scales_ = s;
    }
  }

  DrydenGust step() { return step(noise_(), noise_()); }

  // Advance with explicit standard-normal inputs; scaled internally to the
  // discrete variance pi / dt.
  DrydenGust step(double n_u, double n_v) {
    const double g = std::sqrt(std::numbers::pi / cfg_.dt);
    return {scales_.sigma_u * hu_.step(g * n_u), scales_.sigma_v * hv_.step(g * n_v)};
  }

 private:
  void rebuild() {
    scales_ = dryden_scales(cfg_);
    const double U = scales_.U, Lu = scales_.L_u, Lv = scales_.L_v;
    const double ku = std::sqrt(2 * Lu / (std::numbers::pi * U));
    hu_ = bilinear(ku, 0, 0, 1, Lu / U, 0, cfg_.dt);
    const double kv = std::sqrt(2 * Lv / (std::numbers::pi * U));
    const double b = 2 * Lv / U;
    hv_ = bilinear(kv, kv * 2 * std::sqrt(3.0) * Lv / U, 0, 1, 2 * b, b * b, cfg_.dt);
  }

  DrydenConfig cfg_;
  GaussianStream noise_;
  DrydenScales scales_{};
  Biquad hu_, hv_;
};

}  // namespace heli
