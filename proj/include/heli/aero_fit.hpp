#pragma once

/**
 * @file aero_fit.hpp
 * @brief Polynomial force/moment models identified from tunnel data.
 *
 * Each channel is a dense tensor-product polynomial over a subset of the
 * inputs (delta_lon, delta_lat, delta_col, delta_wind). Inputs are mapped to
 * [-1, 1] over the dataset range before forming monomials; coefficients are
 * stored in that normalized basis, lexicographic in the multi-index with the
 * first listed variable varying slowest.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heli/errors.hpp"
#include "heli/format.hpp"
#include "heli/tunnel.hpp"
#include "heli/vehicle_model.hpp"

namespace heli {

enum Input { kLon = 0, kLat = 1, kCol = 2, kWind = 3 };
enum Channel { kFx = 0, kFy = 1, kFz = 2, kMx = 3, kMy = 4 };

inline constexpr std::array<const char*, 4> kInputNames = {"delta_lon", "delta_lat", "delta_col",
                                                           "delta_wind"};
inline constexpr std::array<const char*, 5> kChannelNames = {"Fx", "Fy", "Fz", "Mx", "My"};

struct ChannelSpec {
  std::vector<int> vars;     // Input indices
  std::vector<int> degrees;  // max degree per listed variable

  std::size_t coefficient_count() const {
    std::size_t n = 1;
    for (int d : degrees) n *= static_cast<std::size_t>(d + 1);
    return n;
  }
};

struct Range {
  double lo = 0, hi = 0;
};

struct PolySpec {
  std::array<ChannelSpec, 5> channels = default_channels();
  double ridge_lambda = 0;
  // Normalization ranges; if unset they are taken from the dataset.
  std::optional<std::array<Range, 4>> ranges;

  static std::array<ChannelSpec, 5> default_channels() {
    return {ChannelSpec{{kLon, kLat, kWind}, {3, 3, 3}},
            ChannelSpec{{kLon, kLat, kWind}, {3, 3, 3}},
            ChannelSpec{{kCol, kWind}, {6, 6}},
            ChannelSpec{{kLon, kLat, kCol, kWind}, {3, 3, 3, 3}},
            ChannelSpec{{kLon, kLat, kCol, kWind}, {3, 3, 3, 3}}};
  }

  void validate() const {
    if (!(ridge_lambda >= 0)) throw ConfigError("ridge_lambda must be >= 0");
    for (const auto& c : channels) {
      if (c.vars.size() != c.degrees.size()) throw ConfigError("poly spec: vars/degrees mismatch");
      for (int d : c.degrees)
        if (d < 0) throw ConfigError("poly spec: degrees must be >= 0");
      for (std::size_t i = 0; i < c.vars.size(); ++i) {
        if (c.vars[i] < 0 || c.vars[i] > 3) throw ConfigError("poly spec: unknown variable");
        for (std::size_t j = 0; j < i; ++j)
          if (c.vars[i] == c.vars[j]) throw ConfigError("poly spec: repeated variable");
      }
    }
  }
};

struct ChannelModel {
  ChannelSpec spec;
  Eigen::VectorXd coeffs;  // normalized basis
  double residual_rms = 0;
  double condition = 0;
};

struct PolyModel {
  std::array<ChannelModel, 5> channels;
  std::array<Range, 4> ranges;
  double direction_deg = 0;
  double ridge_lambda = 0;
  bool clamp_inputs = false;  // clamp evaluation inputs to the fitted box

  double normalize(int var, double x) const {
    const Range r = ranges[var];
    if (r.hi == r.lo) return 0.0;
    if (clamp_inputs) x = std::clamp(x, r.lo, r.hi);
    return 2.0 * (x - r.lo) / (r.hi - r.lo) - 1.0;
  }

  bool in_range(const std::array<double, 4>& x) const {
    for (int i = 0; i < 4; ++i)
      if (x[i] < ranges[i].lo || x[i] > ranges[i].hi) return false;
    return true;
  }
};

namespace detail {

// Basis row of one channel at normalized inputs t.
inline void basis_row(const ChannelSpec& spec, const std::array<double, 4>& t,
                      Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
  const std::size_t nv = spec.vars.size();
  std::vector<std::vector<double>> pw(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    pw[v].assign(spec.degrees[v] + 1, 1.0);
    for (int k = 1; k <= spec.degrees[v]; ++k) pw[v][k] = pw[v][k - 1] * t[spec.vars[v]];
  }
  std::vector<int> idx(nv, 0);
  const std::size_t n = spec.coefficient_count();
  for (std::size_t j = 0; j < n; ++j) {
    double m = 1.0;
    for (std::size_t v = 0; v < nv; ++v) m *= pw[v][idx[v]];
    row(static_cast<Eigen::Index>(j)) = m;
    for (std::size_t v = nv; v-- > 0;) {  // last variable fastest
      if (++idx[v] <= spec.degrees[v]) break;
      idx[v] = 0;
    }
  }
}

inline std::array<double, 4> sample_inputs(const TunnelSample& s) {
  return {s.delta_lon, s.delta_lat, s.delta_col, s.wind_speed};
}

inline double sample_output(const TunnelSample& s, int ch) {
  switch (ch) {
    case kFx: return s.Fx;
    case kFy: return s.Fy;
    case kFz: return s.Fz;
    case kMx: return s.Mx;
    default: return s.My;
  }
}

}  // namespace detail

inline double eval_channel(const PolyModel& m, int ch, const std::array<double, 4>& x) {
  const ChannelModel& c = m.channels[ch];
  std::array<double, 4> t{};
  for (int i = 0; i < 4; ++i) t[i] = m.normalize(i, x[i]);
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(c.spec.coefficient_count()));
  detail::basis_row(c.spec, t, row);
  return row.dot(c.coeffs);
}

struct ModelOutput {
  double Fx = 0, Fy = 0, Fz = 0, Mx = 0, My = 0;
  bool extrapolated = false;
};

inline ModelOutput eval_model(const PolyModel& m, double delta_lon, double delta_lat,
                              double delta_col, double delta_wind) {
  const std::array<double, 4> x{delta_lon, delta_lat, delta_col, delta_wind};
  ModelOutput o;
  o.Fx = eval_channel(m, kFx, x);
  o.Fy = eval_channel(m, kFy, x);
  o.Fz = eval_channel(m, kFz, x);
  o.Mx = eval_channel(m, kMx, x);
  o.My = eval_channel(m, kMy, x);
  o.extrapolated = !m.in_range(x);
  return o;
}

/// Wind-induced change relative to still air at the same deflections; the
/// yaw component is always zero.
inline ForceMoment wind_deltas(const PolyModel& m, double delta_lon, double delta_lat,
                               double delta_col, double delta_wind) {
  const auto w = eval_model(m, delta_lon, delta_lat, delta_col, delta_wind);
  const auto z = eval_model(m, delta_lon, delta_lat, delta_col, 0.0);
  ForceMoment d;
  d.F = {w.Fx - z.Fx, w.Fy - z.Fy, w.Fz - z.Fz};
  d.M = {w.Mx - z.Mx, w.My - z.My, 0.0};
  return d;
}

inline PolyModel fit(const std::vector<TunnelSample>& data, const PolySpec& spec) {
  spec.validate();
  if (data.empty()) throw ConfigError("fit: empty dataset");
  const double dir = data.front().direction_deg;
  for (const auto& s : data)
    if (s.direction_deg != dir) throw ConfigError("fit: dataset mixes wind directions");

  PolyModel model;
  model.direction_deg = dir;
  model.ridge_lambda = spec.ridge_lambda;
  if (spec.ranges) {
    model.ranges = *spec.ranges;
  } else {
    for (int i = 0; i < 4; ++i) {
      Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
      for (const auto& s : data) {
        const double x = detail::sample_inputs(s)[i];
        r.lo = std::min(r.lo, x), r.hi = std::max(r.hi, x);
      }
      model.ranges[i] = r;
    }
  }

  const auto n = static_cast<Eigen::Index>(data.size());
  for (int ch = 0; ch < 5; ++ch) {
    const ChannelSpec& cs = spec.channels[ch];
    const auto k = static_cast<Eigen::Index>(cs.coefficient_count());
    const bool ridge = spec.ridge_lambda > 0;
    if (!ridge && n < k)
      throw ConditioningError(std::string("fit: ") + kChannelNames[ch] + " has " +
                                  std::to_string(n) + " samples for " + std::to_string(k) +
                                  " coefficients",
                              std::numeric_limits<double>::infinity());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(ridge ? n + k : n, k);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(A.rows());
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto x = detail::sample_inputs(data[r]);
      std::array<double, 4> t{};
      for (int i = 0; i < 4; ++i) t[i] = model.normalize(i, x[i]);
      detail::basis_row(cs, t, A.row(r));
      y(r) = detail::sample_output(data[r], ch);
    }
    if (ridge) A.bottomRows(k) = std::sqrt(spec.ridge_lambda) * Eigen::MatrixXd::Identity(k, k);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double smax = sv(0), smin = sv(sv.size() - 1);
    const double cond = smin > 0 ? smax / smin : std::numeric_limits<double>::infinity();
    const double rank_tol = std::numeric_limits<double>::epsilon() * std::max(A.rows(), A.cols()) * smax;
    if (!ridge && !(smin > rank_tol))
      throw ConditioningError(std::string("fit: design matrix for ") + kChannelNames[ch] +
                                  " is rank deficient (condition " + format_double(cond) + ")",
                              cond);
    ChannelModel cm;
    cm.spec = cs;
    cm.coeffs = svd.solve(y);
    cm.condition = cond;
    const Eigen::VectorXd res = A.topRows(n) * cm.coeffs - y.head(n);
    cm.residual_rms = std::sqrt(res.squaredNorm() / static_cast<double>(n));
    model.channels[ch] = std::move(cm);
  }
  return model;
}

/// Coefficients of the same polynomial in raw (un-normalized) inputs, same
/// multi-index order.
inline Eigen::VectorXd physical_coefficients(const PolyModel& m, int ch) {
  const ChannelModel& c = m.channels[ch];
  const std::size_t nv = c.spec.vars.size();
  // t = a x + b for each listed variable; t^j = sum_i C(j,i) a^i b^(j-i) x^i.
  std::vector<Eigen::MatrixXd> T(nv);  // T[v](j, i): coefficient of x^i in t^j
  for (std::size_t v = 0; v < nv; ++v) {
    const Range r = m.ranges[c.spec.vars[v]];
    const double a = r.hi == r.lo ? 0.0 : 2.0 / (r.hi - r.lo);
    const double b = r.hi == r.lo ? 0.0 : -1.0 - a * r.lo;
    const int D = c.spec.degrees[v];
    T[v] = Eigen::MatrixXd::Zero(D + 1, D + 1);
    T[v](0, 0) = 1.0;
    for (int j = 1; j <= D; ++j)
      for (int i = 0; i <= j; ++i)
        T[v](j, i) = (i > 0 ? a * T[v](j - 1, i - 1) : 0.0) + b * T[v](j - 1, i);
  }
  // Apply the per-variable change of basis along each tensor axis.
  Eigen::VectorXd cur = c.coeffs;
  std::size_t stride_after = 1;
  for (std::size_t v = nv; v-- > 0;) {
    const int D1 = c.spec.degrees[v] + 1;
    const std::size_t block = stride_after * D1;
    Eigen::VectorXd next = Eigen::VectorXd::Zero(cur.size());
    for (std::size_t base = 0; base < static_cast<std::size_t>(cur.size()); base += block)
      for (std::size_t s = 0; s < stride_after; ++s)
        for (int j = 0; j < D1; ++j)
          for (int i = 0; i <= j; ++i)
            next(base + i * stride_after + s) += T[v](j, i) * cur(base + j * stride_after + s);
    cur = next;
    stride_after = block;
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Text format (see docs/polymodel_format.md)

inline void write_model(std::ostream& out, const PolyModel& m) {
  out << "polymodel 1\n";
  out << "direction_deg " << format_double(m.direction_deg) << '\n';
  out << "ridge_lambda " << format_double(m.ridge_lambda) << '\n';
  for (int i = 0; i < 4; ++i)
    out << "range " << kInputNames[i] << ' ' << format_double(m.ranges[i].lo) << ' '
        << format_double(m.ranges[i].hi) << '\n';
  for (int ch = 0; ch < 5; ++ch) {
    const auto& c = m.channels[ch];
    out << "channel " << kChannelNames[ch] << " vars";
    for (int v : c.spec.vars) out << ' ' << kInputNames[v];
    out << " degrees";
    for (int d : c.spec.degrees) out << ' ' << d;
    out << " rms " << format_double(c.residual_rms) << " condition "
        << format_double(c.condition) << '\n';
    for (Eigen::Index j = 0; j < c.coeffs.size(); ++j) out << format_double(c.coeffs(j)) << '\n';
  }
  out << "end\n";
}

inline PolyModel read_model(std::istream& in) {
  PolyModel m;
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> std::istringstream {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      return std::istringstream(line);
    }
    throw ParseError("unexpected end of model file", lineno + 1);
  };
  auto word = [&](std::istringstream& ss, const char* expect) {
    std::string w;
    if (!(ss >> w) || (expect && w != expect))
      throw ParseError(std::string("expected '") + (expect ? expect : "token") + "'", lineno);
    return w;
  };
  auto number = [&](std::istringstream& ss) {
    std::string w;
    if (!(ss >> w)) throw ParseError("missing number", lineno);
    return parse_double(w, lineno);
  };
  auto finish = [&](std::istringstream& ss) {
    std::string extra;
    if (ss >> extra) throw ParseError("unexpected token '" + extra + "'", lineno);
  };
  {
    auto ss = next();
    word(ss, "polymodel");
    if (word(ss, nullptr) != "1") throw ParseError("unsupported model version", lineno);
    finish(ss);
  }
  {
    auto ss = next();
    word(ss, "direction_deg");
    m.direction_deg = number(ss);
    finish(ss);
  }
  {
    auto ss = next();
    word(ss, "ridge_lambda");
    m.ridge_lambda = number(ss);
    finish(ss);
  }
  for (int i = 0; i < 4; ++i) {
    auto ss = next();
    word(ss, "range");
    word(ss, kInputNames[i]);
    m.ranges[i].lo = number(ss);
    m.ranges[i].hi = number(ss);
    finish(ss);
  }
  for (int ch = 0; ch < 5; ++ch) {
    auto ss = next();
    word(ss, "channel");
    word(ss, kChannelNames[ch]);
    word(ss, "vars");
    ChannelModel c;
    std::string w;
    while (ss >> w && w != "degrees") {
      const auto it = std::find(kInputNames.begin(), kInputNames.end(), w);
      if (it == kInputNames.end()) throw ParseError("unknown variable '" + w + "'", lineno);
      c.spec.vars.push_back(static_cast<int>(it - kInputNames.begin()));
    }
    if (w != "degrees") throw ParseError("expected 'degrees'", lineno);
    for (std::size_t v = 0; v < c.spec.vars.size(); ++v) {
      const double d = number(ss);
      if (d < 0 || d != std::floor(d) || d > 32) throw ParseError("invalid degree", lineno);
      c.spec.degrees.push_back(static_cast<int>(d));
    }
    word(ss, "rms");
    c.residual_rms = number(ss);
    word(ss, "condition");
    c.condition = number(ss);
    finish(ss);
    c.coeffs.resize(static_cast<Eigen::Index>(c.spec.coefficient_count()));
    for (Eigen::Index j = 0; j < c.coeffs.size(); ++j) {
      auto cs = next();
      c.coeffs(j) = number(cs);
      finish(cs);
    }
    m.channels[ch] = std::move(c);
  }
  {
    auto ss = next();
    word(ss, "end");
  }
  return m;
}

inline void save_model(const std::string& path, const PolyModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model '" + path + "'");
  write_model(out, m);
  if (!out) throw IoError("write failed for model '" + path + "'");
}

inline PolyModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model '" + path + "'");
  return read_model(in);
}

}  // namespace heli
