#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "heli/aero_fit.hpp"

using namespace heli;

namespace {

using Fn = std::function<double(double lon, double lat, double col, double w)>;

std::vector<TunnelSample> synth(const Fn& fz, double col_hi = 1.0, int n_col = 9, int n_w = 9) {
  std::vector<TunnelSample> out;
  GridAxis col{n_col, 0.0, col_hi}, lon{5, -0.12, 0.12}, lat{5, -0.12, 0.12}, w{n_w, 0.0, 8.0};
  for (double c : col.values())
    for (double a : lon.values())
      for (double b : lat.values())
        for (double v : w.values()) {
          TunnelSample s;
          s.delta_col = c, s.delta_lon = a, s.delta_lat = b, s.wind_speed = v;
          s.Fz = fz(a, b, c, v);
          out.push_back(s);
        }
  return out;
}

// Plain evaluation: sum over every exponent tuple of c * prod t_v^e_v.
double reference_eval(const PolyModel& m, int ch, const std::array<double, 4>& x) {
  const auto& c = m.channels[ch];
  const std::size_t nv = c.spec.vars.size();
  double sum = 0;
  std::vector<int> e(nv, 0);
  for (Eigen::Index j = 0; j < c.coeffs.size(); ++j) {
    Eigen::Index rem = j;
    for (std::size_t v = nv; v-- > 0;) {
      e[v] = static_cast<int>(rem % (c.spec.degrees[v] + 1));
      rem /= c.spec.degrees[v] + 1;
    }
    double term = c.coeffs(j);
    for (std::size_t v = 0; v < nv; ++v) {
      const int k = c.spec.vars[v];
      const double t = 2.0 * (x[k] - m.ranges[k].lo) / (m.ranges[k].hi - m.ranges[k].lo) - 1.0;
      term *= std::pow(t, e[v]);
    }
    sum += term;
  }
  return sum;
}

PolyModel random_model(std::uint64_t seed) {
  PolyModel m;
  m.ranges = {Range{-0.12, 0.12}, Range{-0.12, 0.12}, Range{0.0, 0.16}, Range{0.0, 8.0}};
  const auto specs = PolySpec::default_channels();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (int ch = 0; ch < 5; ++ch) {
    m.channels[ch].spec = specs[ch];
    m.channels[ch].coeffs.resize(static_cast<Eigen::Index>(specs[ch].coefficient_count()));
    for (auto& c : m.channels[ch].coeffs) c = nd(rng);
  }
  return m;
}

Eigen::Index index_of(const ChannelSpec& s, const std::vector<int>& e) {
  Eigen::Index j = 0;
  for (std::size_t v = 0; v < e.size(); ++v) j = j * (s.degrees[v] + 1) + e[v];
  return j;
}

}  // namespace

TEST(AeroFit, RecoversSyntheticPolynomial) {
  const auto data = synth([](double, double, double c, double w) { return 1 + 2 * c + 3 * w * w; });
  const PolyModel m = fit(data, PolySpec{});
  const auto& spec = m.channels[kFz].spec;
  const Eigen::VectorXd phys = physical_coefficients(m, kFz);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(phys.size());
  expect(index_of(spec, {0, 0})) = 1;
  expect(index_of(spec, {1, 0})) = 2;
  expect(index_of(spec, {0, 2})) = 3;
  for (Eigen::Index j = 0; j < phys.size(); ++j)
    EXPECT_NEAR(phys(j), expect(j), 1e-6 * std::max(1.0, std::abs(expect(j)))) << j;
  EXPECT_LT(m.channels[kFz].residual_rms, 1e-8);
  for (int ch : {kFx, kFy, kMx, kMy}) EXPECT_LT(m.channels[ch].coeffs.norm(), 1e-12);
}

TEST(AeroFit, RecoveryWithMinimalDegrees) {
  const auto data = synth([](double, double, double c, double w) { return 1 + 2 * c + 3 * w * w; });
  PolySpec spec;
  spec.channels[kFz] = {{kCol, kWind}, {1, 2}};
  const PolyModel m = fit(data, spec);
  const Eigen::VectorXd phys = physical_coefficients(m, kFz);
  ASSERT_EQ(phys.size(), 6);
  const double expect[] = {1, 0, 3, 2, 0, 0};  // (c^0 w^0, c^0 w^1, c^0 w^2, c^1 w^0, ...)
  for (int j = 0; j < 6; ++j) EXPECT_NEAR(phys(j), expect[j], 1e-6) << j;
}

TEST(AeroFit, HandEvaluation) {
  const auto data = synth([](double, double, double c, double w) { return 1 + 2 * c + 3 * w * w; });
  const PolyModel m = fit(data, PolySpec{});
  EXPECT_NEAR(eval_model(m, 0.0, 0.0, 1.0, 2.0).Fz, 15.0, 1e-9);
}

TEST(AeroFit, ConstantDataset) {
  const auto data = synth([](double, double, double, double) { return 5.0; });
  const PolyModel m = fit(data, PolySpec{});
  const Eigen::VectorXd phys = physical_coefficients(m, kFz);
  EXPECT_NEAR(phys(0), 5.0, 1e-9);
  EXPECT_LT(phys.tail(phys.size() - 1).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(AeroFit, FzIgnoresCyclic) {
  const auto data = synth([](double a, double b, double c, double w) { return c + w + 7 * a + b; });
  const PolyModel m = fit(data, PolySpec{});
  const double f0 = eval_model(m, -0.1, 0.05, 0.5, 3.0).Fz;
  EXPECT_DOUBLE_EQ(f0, eval_model(m, 0.1, -0.1, 0.5, 3.0).Fz);
}

TEST(AeroFit, RankDeficiencyReportsCondition) {
  std::vector<TunnelSample> dup(400);
  for (auto& s : dup) s.delta_col = 0.1, s.wind_speed = 2.0, s.Fz = 3.0;
  // distinct ranges so normalization is well defined but the points coincide
  PolySpec spec;
  spec.ranges = std::array<Range, 4>{Range{-1, 1}, Range{-1, 1}, Range{0, 1}, Range{0, 8}};
  try {
    fit(dup, spec);
    FAIL() << "expected ConditioningError";
  } catch (const ConditioningError& e) {
    EXPECT_GT(e.condition(), 1e12);
  }
}

TEST(AeroFit, UnderdeterminedWithoutRidge) {
  std::vector<TunnelSample> few(10);
  for (int i = 0; i < 10; ++i) few[i].delta_col = i, few[i].wind_speed = i % 3;
  EXPECT_THROW(fit(few, PolySpec{}), ConditioningError);
  PolySpec ridge;
  ridge.ridge_lambda = 1e-3;
  EXPECT_NO_THROW(fit(few, ridge));
}

TEST(AeroFit, Preconditions) {
  EXPECT_THROW(fit({}, PolySpec{}), ConfigError);
  auto data = synth([](double, double, double, double) { return 0.0; });
  data[3].direction_deg = 270;
  EXPECT_THROW(fit(data, PolySpec{}), ConfigError);
  PolySpec bad;
  bad.ridge_lambda = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = PolySpec{};
  bad.channels[kFx].degrees = {3, -1, 3};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(AeroFit, EvaluationMatchesReference) {
  const PolyModel m = random_model(7);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const std::array<double, 4> x{-0.12 + 0.24 * u(rng), -0.12 + 0.24 * u(rng), 0.16 * u(rng),
                                  8.0 * u(rng)};
    const auto o = eval_model(m, x[0], x[1], x[2], x[3]);
    const double got[] = {o.Fx, o.Fy, o.Fz, o.Mx, o.My};
    for (int ch = 0; ch < 5; ++ch) {
      const double ref = reference_eval(m, ch, x);
      EXPECT_NEAR(got[ch], ref, 1e-12 * std::max(1.0, std::abs(ref)));
    }
    EXPECT_FALSE(o.extrapolated);
  }
}

TEST(AeroFit, ZeroModel) {
  PolyModel m = random_model(1);
  for (auto& c : m.channels) c.coeffs.setZero();
  const auto o = eval_model(m, 0.05, -0.02, 0.1, 3.0);
  EXPECT_EQ(o.Fx, 0.0);
  EXPECT_EQ(o.Fy, 0.0);
  EXPECT_EQ(o.Fz, 0.0);
  EXPECT_EQ(o.Mx, 0.0);
  EXPECT_EQ(o.My, 0.0);
}

TEST(AeroFit, PhysicalCoefficientsAgreeWithEvaluation) {
  const PolyModel m = random_model(3);
  const auto& spec = m.channels[kMx].spec;
  const Eigen::VectorXd phys = physical_coefficients(m, kMx);
  const std::array<double, 4> x{0.03, -0.07, 0.11, 5.5};
  double sum = 0;
  for (int a = 0; a <= 3; ++a)
    for (int b = 0; b <= 3; ++b)
      for (int c = 0; c <= 3; ++c)
        for (int d = 0; d <= 3; ++d)
          sum += phys(index_of(spec, {a, b, c, d})) * std::pow(x[0], a) * std::pow(x[1], b) *
                 std::pow(x[2], c) * std::pow(x[3], d);
  EXPECT_NEAR(sum, reference_eval(m, kMx, x), 1e-8 * std::abs(sum));
}

TEST(AeroFit, Idempotence) {
  const PolyModel m = random_model(5);
  std::vector<TunnelSample> data;
  for (double c : GridAxis{9, 0.0, 0.16}.values())
    for (double a : GridAxis{5, -0.12, 0.12}.values())
      for (double b : GridAxis{5, -0.12, 0.12}.values())
        for (double w : GridAxis{9, 0.0, 8.0}.values()) {
          const auto o = eval_model(m, a, b, c, w);
          data.push_back({c, a, b, w, 0.0, o.Fx, o.Fy, o.Fz, o.Mx, o.My, 0.0});
        }
  const PolyModel r = fit(data, PolySpec{});
  for (int ch = 0; ch < 5; ++ch) {
    const Eigen::VectorXd d = r.channels[ch].coeffs - m.channels[ch].coeffs;
    EXPECT_LT(d.cwiseAbs().maxCoeff(), 1e-10) << kChannelNames[ch];
    EXPECT_LT(r.channels[ch].residual_rms, 1e-8);
  }
}

TEST(AeroFit, RidgeShrinksCoefficients) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.5);
  auto data = synth([](double a, double b, double c, double w) {
    return 40 * c + 0.3 * w * w + 5 * a * b + std::sin(w);
  });
  for (auto& s : data) s.Fz += nd(rng), s.Fx = std::cos(s.wind_speed) + nd(rng);
  double prev_fz = std::numeric_limits<double>::infinity(), prev_fx = prev_fz;
  for (double lambda : {0.0, 1e-6, 1e-4, 1e-2, 1.0, 10.0, 1e3}) {
    PolySpec spec;
    spec.ridge_lambda = lambda;
    const PolyModel m = fit(data, spec);
    const double nz = m.channels[kFz].coeffs.norm(), nx = m.channels[kFx].coeffs.norm();
    EXPECT_LE(nz, prev_fz * (1 + 1e-12)) << lambda;
    EXPECT_LE(nx, prev_fx * (1 + 1e-12)) << lambda;
    prev_fz = nz, prev_fx = nx;
  }
}

TEST(AeroFit, WindDeltas) {
  const auto data = synth([](double, double, double, double w) { return 3 * w * w; });
  PolySpec spec;
  spec.channels[kMx] = {{kWind}, {2}};
  const PolyModel m = fit(data, spec);
  const ForceMoment d = wind_deltas(m, 0.0, 0.0, 0.5, 2.0);
  EXPECT_NEAR(d.F.z(), 12.0, 1e-9);
  EXPECT_EQ(d.M.z(), 0.0);

  const PolyModel r = random_model(9);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int i = 0; i < 50; ++i) {
    const ForceMoment z = wind_deltas(r, u(rng), u(rng), 0.08 + u(rng) / 2, 0.0);
    EXPECT_TRUE(z.F.isZero(0));
    EXPECT_TRUE(z.M.isZero(0));
    EXPECT_EQ(wind_deltas(r, u(rng), u(rng), 0.08, 4 + 30 * u(rng)).M.z(), 0.0);
  }
}

TEST(AeroFit, ExtrapolationFlagAndClamp) {
  PolyModel m = random_model(6);
  const auto o = eval_model(m, 0.0, 0.0, 0.3, 4.0);
  EXPECT_TRUE(o.extrapolated);
  m.clamp_inputs = true;
  EXPECT_DOUBLE_EQ(eval_model(m, 0.0, 0.0, 0.3, 4.0).Fz, eval_model(m, 0.0, 0.0, 0.16, 4.0).Fz);
}

TEST(AeroFit, TextRoundTrip) {
  const auto data = synth([](double a, double b, double c, double w) {
    return 1 + c * w + a - b;
  });
  PolyModel m = fit(data, PolySpec{});
  m.direction_deg = 270;
  std::stringstream ss;
  write_model(ss, m);
  const PolyModel r = read_model(ss);
  EXPECT_EQ(r.direction_deg, 270);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(r.ranges[i].lo, m.ranges[i].lo);
    EXPECT_EQ(r.ranges[i].hi, m.ranges[i].hi);
  }
  for (int ch = 0; ch < 5; ++ch) {
    EXPECT_EQ(r.channels[ch].spec.vars, m.channels[ch].spec.vars);
    EXPECT_EQ(r.channels[ch].spec.degrees, m.channels[ch].spec.degrees);
    EXPECT_EQ(r.channels[ch].coeffs, m.channels[ch].coeffs);
    EXPECT_EQ(r.channels[ch].residual_rms, m.channels[ch].residual_rms);
  }
}

TEST(AeroFit, TextParseErrors) {
  const PolyModel m = random_model(8);
  std::stringstream ss;
  write_model(ss, m);
  const std::string good = ss.str();
  auto parse_line = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      read_model(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(parse_line("polymodel 2\n"), 1u);
  std::string bad = good;
  bad.replace(bad.find("range delta_lat"), 15, "range delta_xyz");
  EXPECT_EQ(parse_line(bad), 5u);
  bad = good;
  const auto pos = bad.find('\n', bad.find("channel Fx"));
  bad.replace(pos + 1, bad.find('\n', pos + 1) - pos - 1, "abc");
  EXPECT_EQ(parse_line(bad), 9u);
  EXPECT_GT(parse_line(good.substr(0, good.size() / 2)), 0u);
}

TEST(AeroFit, SurrogateDatasetFit) {
  const VehicleParams P;
  const auto ds = gen_tunnel_dataset(TunnelGrid{}, 0.0, 1, P);
  const PolyModel m = fit(ds.samples, PolySpec{});
  for (int ch = 0; ch < 5; ++ch) EXPECT_TRUE(std::isfinite(m.channels[ch].residual_rms));
  // Wind-induced vertical force recovered well enough for compensation.
  double worst = 0;
  for (const auto& s : ds.samples) {
    const ForceMoment d = wind_deltas(m, s.delta_lon, s.delta_lat, s.delta_col, s.wind_speed);
    ActuatorState a;
    a.delta_col = s.delta_col, a.delta_lon = s.delta_lon, a.delta_lat = s.delta_lat;
    a.delta_ped = ds.delta_ped;
    const Vec3 v_rel = -wind_inertial(s.wind_speed, s.direction_deg);
    const ForceMoment truth = surrogate_aero(a, v_rel, P);
    worst = std::max(worst, std::abs(d.F.z() - truth.F.z()));
  }
  RecordProperty("worst_dFz_error", std::to_string(worst));
  EXPECT_LT(worst, 0.5);
}
