#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "heli/sim.hpp"

using namespace heli;

namespace {

const VehicleParams P;

Scenario short_scenario(ControlMode mode, double duration) {
  Scenario sc;
  sc.controller.mode = mode;
  sc.duration = duration;
  return sc;
}

std::string csv_of(const std::vector<TelemetryRecord>& tel) {
  std::ostringstream os;
  write_telemetry_csv(os, tel);
  return os.str();
}

}  // namespace

TEST(Rk4, ExponentialOracle) {
  const auto f = [](double x) { return -x; };
  // one step of x' = -x is the degree-4 Taylor polynomial of exp(-h)
  const double h = 0.1;
  EXPECT_NEAR(rk4_step(f, 1.0, h), 1 - h + h * h / 2 - h * h * h / 6 + h * h * h * h / 24, 1e-15);
  EXPECT_NEAR(rk4_step(f, 1.0, h) - std::exp(-h), std::pow(h, 5) / 120 - std::pow(h, 6) / 720, 1e-10);
  EXPECT_NEAR(rk4_step(f, rk4_step(f, 1.0, h / 2), h / 2), std::exp(-h), 2e-8);
  EXPECT_EQ(rk4_step([](double) { return 0.0; }, 3.25, 0.1), 3.25);
  EXPECT_THROW(rk4_step(f, 1.0, 0.0), ConfigError);
  EXPECT_THROW(rk4_step([](double) { return std::nan(""); }, 1.0, 0.1), IntegrationError);
}

TEST(Rk4, OrderOnDecay) {
  auto err = [](int n) {
    double x = 1.0;
    for (int i = 0; i < n; ++i) x = rk4_step([](double y) { return -y; }, x, 1.0 / n);
    return std::abs(x - std::exp(-1.0));
  };
  const double ratio = err(10) / err(20);
  RecordProperty("ratio", std::to_string(ratio));
  EXPECT_GE(ratio, 12);
  EXPECT_LE(ratio, 20);
}

TEST(Rk4, OrderOnFullPlantNearTrim) {
  const Trim trim = hover_trim(P);
  StateVec x0 = pack(trim.state);
  x0(6) += 0.3, x0(7) -= 0.2, x0(9) += 0.05, x0(10) -= 0.05, x0(16) += 0.01;
  auto f = [&](const StateVec& y) { return plant_derivs(y, trim.inputs, Vec3::Zero(), P); };
  auto integrate = [&](double dt) {
    StateVec x = x0;
    const int n = static_cast<int>(std::llround(0.2 / dt));
    for (int i = 0; i < n; ++i) x = rk4_step(f, x, dt);
    return x;
  };
  const StateVec ref = integrate(0.000625);
  const double e1 = (integrate(0.01) - ref).norm(), e2 = (integrate(0.005) - ref).norm();
  const double ratio = e1 / e2;
  RecordProperty("ratio", std::to_string(ratio));
  EXPECT_GE(ratio, 12);
  EXPECT_LE(ratio, 20);
}

TEST(Rk4, TorqueFreeEnergyDrift) {
  VehicleParams q = P;
  q.g = 0;
  using V12 = Eigen::Matrix<double, 12, 1>;
  auto f = [&](const V12& y) {
    RigidState s;
    s.xi = y.segment<3>(0), s.Theta = y.segment<3>(3), s.V = y.segment<3>(6), s.Omega = y.segment<3>(9);
    const RigidState d = rigid_derivs(s, ForceMoment{}, q);
    V12 out;
    out << d.xi, d.Theta, d.V, d.Omega;
    return out;
  };
  auto energy = [&](const V12& y) {
    const Vec3 W = y.segment<3>(9), V = y.segment<3>(6);
    return 0.5 * q.m * V.squaredNorm() + 0.5 * W.dot(inertia_diag(q).cwiseProduct(W));
  };
  V12 y = V12::Zero();
  y.segment<3>(6) = Vec3(1.0, -0.5, 0.3);
  y.segment<3>(9) = Vec3(0.1, 0.05, 1.0);
  const double E0 = energy(y);
  for (int i = 0; i < 5000; ++i) y = rk4_step(f, y, 0.002);
  const double drift = std::abs(energy(y) - E0) / E0;
  RecordProperty("drift", std::to_string(drift));
  EXPECT_LT(drift, 1e-6);
}

TEST(PlantDerivs, TrimIsEquilibrium) {
  const Trim trim = hover_trim(P);
  const StateVec d = plant_derivs(pack(trim.state), trim.inputs, Vec3::Zero(), P);
  EXPECT_LE(d.lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(PlantDerivs, WindAddsSurrogateDrag) {
  // Wind from 180 deg blows toward +x: body velocity relative to the air is (-6, 0, 0)
  // up to the small trim roll, so the drag increment is the surrogate example's +1.764 N.
  const Trim trim = hover_trim(P);
  ASSERT_NEAR(trim.allocation.a1, 0.0, 1e-12);
  const StateVec x = pack(trim.state);
  const StateVec still = plant_derivs(x, trim.inputs, Vec3::Zero(), P);
  const StateVec windy = plant_derivs(x, trim.inputs, wind_inertial(6.0, 180.0), P);
  EXPECT_NEAR((windy(6) - still(6)) * P.m, 1.764, 1e-3);
}

TEST(Run, CardinalityAndTimeGrid) {
  Scenario sc = short_scenario(ControlMode::baseline, 30.0);
  sc.wind = {WindKind::type_ii, 0, 0, {}};
  const RunResult r = run(sc, P);
  ASSERT_FALSE(r.failed) << r.error;
  ASSERT_EQ(r.telemetry.size(), 15001u);
  for (std::size_t k = 0; k < r.telemetry.size(); ++k)
    ASSERT_EQ(r.telemetry[k].t, static_cast<double>(k) * 0.002);
  const double final_err = r.telemetry.back().state.rigid.xi.norm();
  RecordProperty("final_error", std::to_string(final_err));
  EXPECT_LT(final_err, 0.1);
  // monotone decrease after 2 s, sampled each second
  double prev = 1e300;
  for (int s = 2; s <= 30; ++s) {
    const double e = r.telemetry[static_cast<std::size_t>(s * 500)].state.rigid.xi.norm();
    EXPECT_LT(e, prev) << "t=" << s;
    prev = e;
  }
}

TEST(Run, Deterministic) {
  Scenario sc = short_scenario(ControlMode::baseline, 3.0);
  sc.wind = {WindKind::type_ii, 4, 270, {}};
  sc.seed = 42;
  const std::string a = csv_of(run(sc, P).telemetry), b = csv_of(run(sc, P).telemetry);
  EXPECT_EQ(a, b);
  sc.seed = 43;
  EXPECT_NE(a, csv_of(run(sc, P).telemetry));
}

TEST(Run, HybridNeedsModel) {
  Scenario sc = short_scenario(ControlMode::hybrid, 1.0);
  EXPECT_THROW(run(sc, P), ConfigError);
}

TEST(Run, ControlDivider) {
  Scenario sc = short_scenario(ControlMode::baseline, 2.0);
  sc.control_divider = 5;
  const RunResult r = run(sc, P);
  ASSERT_FALSE(r.failed) << r.error;
  EXPECT_EQ(r.telemetry[1].u.u_col, r.telemetry[4].u.u_col);
  sc.control_divider = 0;
  EXPECT_THROW(run(sc, P), ConfigError);
}

TEST(Scenario, Validation) {
  Scenario sc;
  EXPECT_NO_THROW(sc.validate());
  EXPECT_FALSE(sc.dt_warning(P));
  sc.dt = 0.01;
  EXPECT_TRUE(sc.dt_warning(P));
  sc.dt = 0.0;
  EXPECT_THROW(sc.validate(), ConfigError);
  sc = Scenario{};
  sc.duration = 0.001;
  EXPECT_THROW(sc.validate(), ConfigError);
  sc = Scenario{};
  sc.duration = 1.0001;
  EXPECT_THROW(sc.validate(), ConfigError);
}

TEST(Metrics, ExponentialOracle) {
  std::vector<TrajectoryPoint> tr;
  const double dt = 0.001;
  for (int k = 0; k <= 30000; ++k) {
    const double t = k * dt;
    tr.push_back({t, Vec3(5, -5, -5) * std::exp(-t)});
  }
  const Metrics m = compute_metrics(tr, Vec3::Zero());
  ASSERT_TRUE(m.settled);
  // band 0.02 * 5 sqrt(3), entered at ln(50)
  EXPECT_NEAR(m.settling_time, std::log(50.0), dt);
  EXPECT_NEAR(m.settling_time, 3.91, 0.005);
  EXPECT_NEAR(m.max_deviation, 5 * std::sqrt(3.0), 1e-12);
  EXPECT_GE(m.steady_state_error, 0);
  EXPECT_LT(m.steady_state_error, 1e-9);
}

TEST(Metrics, ConstantAtTarget) {
  std::vector<TrajectoryPoint> tr;
  for (int k = 0; k <= 100; ++k) tr.push_back({k * 0.1, Vec3(1, 2, 3)});
  const Metrics m = compute_metrics(tr, Vec3(1, 2, 3));
  EXPECT_EQ(m.settling_time, 0.0);
  EXPECT_EQ(m.steady_state_error, 0.0);
  EXPECT_EQ(m.rms_oscillation, 0.0);
}

TEST(Metrics, NeverSettles) {
  std::vector<TrajectoryPoint> tr;
  for (int k = 0; k <= 100; ++k) tr.push_back({k * 0.1, Vec3(5 + std::sin(k * 0.7), 0, 0)});
  const Metrics m = compute_metrics(tr, Vec3::Zero());
  EXPECT_FALSE(m.settled);
  EXPECT_TRUE(std::isnan(m.settling_time));
  EXPECT_TRUE(std::isnan(m.rms_oscillation));
  EXPECT_GT(m.rms_final_window, 0.3);
  EXPECT_THROW(compute_metrics(std::vector<TrajectoryPoint>{}, Vec3::Zero()), ConfigError);
}

TEST(TelemetryCsv, RoundTripIsExact) {
  Scenario sc = short_scenario(ControlMode::baseline, 0.5);
  sc.wind = {WindKind::type_ii, 3, 0, {}};
  const auto tel = run(sc, P).telemetry;
  const std::string text = csv_of(tel);
  EXPECT_EQ(text.substr(0, text.find('\n')), kTelemetryHeader);
  EXPECT_EQ(text.find('\r'), std::string::npos);
  std::istringstream in(text);
  const auto back = read_telemetry_csv(in);
  ASSERT_EQ(back.size(), tel.size());
  for (std::size_t i = 0; i < tel.size(); ++i) EXPECT_EQ(telemetry_row(back[i]), telemetry_row(tel[i]));
  EXPECT_EQ(csv_of(back), text);
}

TEST(TelemetryCsv, Errors) {
  std::istringstream bad_header("t,x\n1,2\n");
  EXPECT_THROW(read_telemetry_csv(bad_header), ParseError);
  std::istringstream short_row(std::string(kTelemetryHeader) + "\n1,2,3\n");
  EXPECT_THROW(read_telemetry_csv(short_row), ParseError);
}

TEST(Compare, ZeroWindModesAgree) {
  Scenario sc;
  sc.duration = 4.0;
  sc.wind = {WindKind::type_ii, 0, 0, {}};
  const auto ds = gen_tunnel_dataset(TunnelGrid{}, 0.0, 5, P);
  const PolyModel model = fit(ds.samples, PolySpec{});
  CompareOptions opt;
  opt.speeds = {0};
  opt.directions = {0};
  opt.case_gains = false;
  const auto cells = compare(sc, opt, P, [&](double) { return &model; });
  ASSERT_EQ(cells.size(), 2u);
  for (const auto& c : cells) ASSERT_FALSE(c.failed) << c.error;
  EXPECT_NEAR(cells[0].metrics.steady_state_error, cells[1].metrics.steady_state_error, 1e-9);
  EXPECT_NEAR(cells[0].metrics.max_deviation, cells[1].metrics.max_deviation, 1e-9);
}

TEST(CaseGains, Table) {
  EXPECT_EQ(case_gains(WindKind::type_i, WindAxis::longitude, ControlMode::baseline).alpha, 2.5);
  EXPECT_EQ(case_gains(WindKind::type_i, WindAxis::lateral, ControlMode::hybrid).beta, 3);
  EXPECT_EQ(case_gains(WindKind::type_ii, WindAxis::longitude, ControlMode::baseline).alpha, 8);
  EXPECT_EQ(case_gains(WindKind::type_ii, WindAxis::lateral, ControlMode::hybrid).alpha, 2);
}
