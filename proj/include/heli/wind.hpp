#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "heli/errors.hpp"
#include "heli/vehicle_model.hpp"

namespace heli {

enum class WindKind {
  type_i,   // gust: speed inside [10 s, 20 s], zero elsewhere
  type_ii,  // sustained: speed for the whole run
  series,   // piecewise-constant breakpoints
};

struct WindProfile {
  WindKind kind = WindKind::type_ii;
  double speed = 0;          // m/s
  double direction_deg = 0;  // wind blows *from* this heading; 0 = nose-on, 270 = lateral
  std::vector<std::pair<double, double>> breakpoints;  // (t, speed), series only

  static constexpr double gust_start = 10.0;
  static constexpr double gust_end = 20.0;

  void validate() const {
    if (!(speed >= 0) || !std::isfinite(speed)) throw ConfigError("wind speed must be >= 0");
    if (!(direction_deg >= 0 && direction_deg < 360))
      throw ConfigError("wind direction must be in [0, 360)");
    if (kind == WindKind::series) {
      for (std::size_t i = 0; i < breakpoints.size(); ++i) {
        if (!(breakpoints[i].second >= 0)) throw ConfigError("series wind speed must be >= 0");
        if (i && !(breakpoints[i].first > breakpoints[i - 1].first))
          throw ConfigError("series breakpoints must have increasing times");
      }
    }
  }
};

struct WindSample {
  double speed = 0;
  double direction_deg = 0;
};

inline WindSample wind_at(const WindProfile& w, double t) {
  switch (w.kind) {
    case WindKind::type_i:
      return {(t >= WindProfile::gust_start && t <= WindProfile::gust_end) ? w.speed : 0.0,
              w.direction_deg};
    case WindKind::type_ii:
      return {w.speed, w.direction_deg};
    case WindKind::series: {
      double s = 0;
      for (const auto& [tb, sb] : w.breakpoints) {
        if (t >= tb) s = sb;
        else break;
      }
      return {s, w.direction_deg};
    }
  }
  return {};
}

/// Horizontal wind velocity (air motion) in the inertial frame.
inline Vec3 wind_inertial(double speed, double direction_deg) {
  const double d = direction_deg * std::numbers::pi / 180.0;
  return {-speed * std::cos(d), -speed * std::sin(d), 0.0};
}

inline Vec3 wind_body(double speed, double direction_deg, const Vec3& Theta) {
  return rotation_matrix(Theta).transpose() * wind_inertial(speed, direction_deg);
}

inline std::string to_string(WindKind k) {
  switch (k) {
    case WindKind::type_i: return "type_i";
    case WindKind::type_ii: return "type_ii";
    case WindKind::series: return "series";
  }
  return "";
}

inline WindKind wind_kind_from_string(const std::string& s) {
  if (s == "type_i" || s == "TypeI") return WindKind::type_i;
  if (s == "type_ii" || s == "TypeII") return WindKind::type_ii;
  if (s == "series" || s == "Series") return WindKind::series;
  throw ConfigError("unknown wind kind '" + s + "'");
}

}  // namespace heli
