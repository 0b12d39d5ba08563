#pragma once
/**
 * @file svg.hpp
 * @brief Minimal SVG line charts (one titled chart per document).
 */

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "heli/errors.hpp"
#include "heli/sim.hpp"

namespace heli {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct Chart {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  int width = 800, height = 420;
  std::size_t max_points = 2000;  // per series, by uniform decimation
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// Round step for roughly n ticks over span.
inline double nice_step(double span, int n) {
  const double raw = span / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) return m * mag;
  return 10 * mag;
}

}  // namespace detail

inline void write_svg(std::ostream& out, const Chart& c) {
  using detail::fmt;
  if (c.series.empty()) throw ConfigError("svg: chart has no series");
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : c.series) {
    if (s.x.size() != s.y.size()) throw ConfigError("svg: series x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 >= x0)) x0 = 0, x1 = 1;
  if (!(y1 >= y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;

  const double L = 70, R = 150, T = 40, B = 50;
  const double pw = c.width - L - R, ph = c.height - T - B;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return T + (y1 - y) / (y1 - y0) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\""
      << c.height << "\" viewBox=\"0 0 " << c.width << ' ' << c.height << "\">\n";
  out << "<title>" << detail::xml_escape(c.title) << "</title>\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt(L + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << detail::xml_escape(c.title) << "</text>\n";

  // grid and ticks
  out << "<g font-size=\"11\" stroke-width=\"1\">\n";
  const double xs = detail::nice_step(x1 - x0, 8), ys = detail::nice_step(y1 - y0, 6);
  for (double x = std::ceil(x0 / xs) * xs; x <= x1 + 1e-9 * xs; x += xs) {
    out << "<line x1=\"" << fmt(sx(x)) << "\" y1=\"" << fmt(T) << "\" x2=\"" << fmt(sx(x))
        << "\" y2=\"" << fmt(T + ph) << "\" stroke=\"#e0e0e0\"/>\n";
    out << "<text x=\"" << fmt(sx(x)) << "\" y=\"" << fmt(T + ph + 16)
        << "\" text-anchor=\"middle\">" << fmt(x, xs < 1 ? 2 : 0) << "</text>\n";
  }
  for (double y = std::ceil(y0 / ys) * ys; y <= y1 + 1e-9 * ys; y += ys) {
    out << "<line x1=\"" << fmt(L) << "\" y1=\"" << fmt(sy(y)) << "\" x2=\"" << fmt(L + pw)
        << "\" y2=\"" << fmt(sy(y)) << "\" stroke=\"#e0e0e0\"/>\n";
    out << "<text x=\"" << fmt(L - 6) << "\" y=\"" << fmt(sy(y) + 4)
        << "\" text-anchor=\"end\">" << fmt(std::abs(y) < 1e-12 ? 0.0 : y, ys < 1 ? (ys < 0.1 ? 3 : 2) : 0)
        << "</text>\n";
  }
  out << "</g>\n";
  out << "<rect x=\"" << fmt(L) << "\" y=\"" << fmt(T) << "\" width=\"" << fmt(pw)
      << "\" height=\"" << fmt(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << fmt(L + pw / 2) << "\" y=\"" << fmt(c.height - 10.0)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::xml_escape(c.x_label) << "</text>\n";
  out << "<text transform=\"translate(18," << fmt(T + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\" "
      << "font-size=\"12\">" << detail::xml_escape(c.y_label) << "</text>\n";

  for (std::size_t k = 0; k < c.series.size(); ++k) {
    const auto& s = c.series[k];
    const char* col = colors[k % 8];
    const std::size_t stride = std::max<std::size_t>(1, (s.x.size() + c.max_points - 1) / c.max_points);
    out << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); i += stride) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      out << (first ? "" : " ") << fmt(sx(s.x[i])) << ',' << fmt(sy(s.y[i]));
      first = false;
    }
    out << "\"><title>" << detail::xml_escape(s.name) << "</title></polyline>\n";
    const double ly = T + 14 + 18.0 * static_cast<double>(k);
    out << "<line x1=\"" << fmt(L + pw + 12) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(L + pw + 36)
        << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << fmt(L + pw + 42) << "\" y=\"" << fmt(ly + 4) << "\" font-size=\"12\">"
        << detail::xml_escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
}

inline void save_svg(const std::string& path, const Chart& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write svg '" + path + "'");
  write_svg(out, c);
  if (!out) throw IoError("write failed for svg '" + path + "'");
}

inline Chart position_chart(const std::vector<TelemetryRecord>& tel, const std::string& title) {
  Chart c{title, "t [s]", "position [m]", {{"x", {}, {}}, {"y", {}, {}}, {"z", {}, {}}}};
  for (const auto& r : tel)
    for (int i = 0; i < 3; ++i) {
      c.series[i].x.push_back(r.t);
      c.series[i].y.push_back(r.state.rigid.xi(i));
    }
  return c;
}

inline Chart input_chart(const std::vector<TelemetryRecord>& tel, const std::string& title) {
  Chart c{title, "t [s]", "servo input", {{"u_lon", {}, {}}, {"u_lat", {}, {}}, {"u_col", {}, {}}, {"u_ped", {}, {}}}};
  for (const auto& r : tel) {
    const double u[4] = {r.u.u_lon, r.u.u_lat, r.u.u_col, r.u.u_ped};
    for (int i = 0; i < 4; ++i) {
      c.series[i].x.push_back(r.t);
      c.series[i].y.push_back(u[i]);
    }
  }
  return c;
}

}  // namespace heli
