#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <gtest/gtest.h>
#include <json.hpp>

#include "heli/config.hpp"
#include "heli/sim.hpp"
#include "heli/tunnel.hpp"

using namespace heli;
namespace fs = std::filesystem;

namespace {

const fs::path kData = fs::path(HELI_SOURCE_DIR) / "data";

struct Cli {
  int code;
  std::string out;
};

class Workdir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("helisim_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Cli helisim(const std::string& args) const {
    const fs::path log = dir_ / "stdout.txt";
    const std::string cmd = std::string(HELISIM_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
  }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name, std::ios::binary) << text;
    return dir_ / name;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

nlohmann::json parse(const std::string& s) { return nlohmann::json::parse(s); }

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  const RunConfig rc = run_config_from_json(parse("{}"));
  EXPECT_EQ(rc.scenario.duration, 30.0);
  EXPECT_FALSE(rc.aero.fit.has_value());
  EXPECT_TRUE(rc.output.emit_svg);
}

TEST(Config, ReadsSections) {
  const RunConfig rc = run_config_from_json(parse(R"({
    "scenario": {"xi0": [1, 2, 3], "duration": 4, "seed": 9,
                 "wind": {"kind": "type_i", "speed": 6, "direction_deg": 270},
                 "controller": {"mode": "baseline", "alpha": 2.5, "beta": 3}},
    "solver": {"tolerance": 1e-11},
    "aero": {"models": {"0": "m0.txt", "270": "/abs/m270.txt"}},
    "tunnel": {"wind_speed": [3, 0, 4]},
    "compare": {"speeds": [2], "modes": ["hybrid"]},
    "output": {"dir": "out", "emit_svg": false}})"),
                                             "/base");
  EXPECT_EQ(rc.scenario.xi0, Vec3(1, 2, 3));
  EXPECT_EQ(rc.scenario.seed, 9u);
  EXPECT_EQ(rc.scenario.wind.kind, WindKind::type_i);
  EXPECT_EQ(rc.scenario.controller.mode, ControlMode::baseline);
  EXPECT_EQ(rc.scenario.controller.gains.beta, 3.0);
  EXPECT_EQ(rc.scenario.plant.solver.tolerance, 1e-11);
  EXPECT_EQ(rc.scenario.controller.solver.tolerance, 1e-11);
  EXPECT_EQ(rc.aero.models.at(0.0), "/base/m0.txt");
  EXPECT_EQ(rc.aero.models.at(270.0), "/abs/m270.txt");
  EXPECT_EQ(rc.tunnel.grid.wind_speed.count, 3);
  EXPECT_EQ(rc.compare.options.modes, std::vector<ControlMode>{ControlMode::hybrid});
  EXPECT_EQ(rc.output.dir, "/base/out");
  EXPECT_FALSE(rc.output.emit_svg);
}

TEST(Config, RejectsBadDocuments) {
  for (const char* bad : {
           R"({"bogus": 1})",
           R"({"scenario": {"wind": {"speeed": 3}}})",
           R"({"scenario": {"controller": {"mode": "adaptive"}}})",
           R"({"scenario": {"duration": "long"}})",
           R"({"scenario": {"dt": 0}})",
           R"({"tunnel": {"wind_speed": [9, 0, 12]}})",
           R"({"tunnel": {"delta_col": [9, 0]}})",
           R"({"compare": {"directions": [360]}})",
           R"({"aero": {"models": {"north": "m.txt"}}})",
           R"({"aero": {"fit": {"ridge": 1}}})",
       })
    EXPECT_THROW(run_config_from_json(parse(bad)), ConfigError) << bad;
}

TEST(Config, BundledExamplesLoad) {
  for (const char* name : {"simulate_hybrid.json", "case_a.json", "case_b.json", "tunnel.json"}) {
    const RunConfig rc = load_run_config((kData / name).string());
    EXPECT_NO_THROW(rc.vehicle()) << name;
  }
  EXPECT_THROW(load_run_config((kData / "no_such.json").string()), IoError);
}

TEST_F(Workdir, GenTunnelIsDeterministic) {
  const auto a = helisim("--seed 1 --out " + (dir_ / "a").string() + " gen-tunnel --noise 0");
  const auto b = helisim("--seed 1 --out " + (dir_ / "b").string() + " gen-tunnel --noise 0");
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  const std::string da = slurp(dir_ / "a" / "tunnel_0.csv");
  EXPECT_EQ(da, slurp(dir_ / "b" / "tunnel_0.csv"));
  EXPECT_EQ(da.substr(0, da.find('\n')), kTunnelHeader);
  EXPECT_EQ(load_tunnel_csv((dir_ / "a" / "tunnel_0.csv").string()).size(), TunnelGrid{}.size());
  EXPECT_NE(a.out.find("samples 2025"), std::string::npos);
}

TEST_F(Workdir, GenTunnelRejectsWindRange) {
  EXPECT_EQ(helisim("--out " + dir_.string() + " gen-tunnel --wind-hi 9").code, 2);
  EXPECT_EQ(helisim("--out " + dir_.string() + " gen-tunnel --noise -1").code, 2);
}

TEST_F(Workdir, FitReportsAndSelfChecks) {
  ASSERT_EQ(helisim("--out " + dir_.string() + " gen-tunnel --noise 0").code, 0);
  const auto r = helisim("--out " + dir_.string() + " fit " + (dir_ / "tunnel_0.csv").string() +
                         " --self-check");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("condition"), std::string::npos);
  const auto pos = r.out.find("refit max coefficient difference ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(r.out.substr(pos + 33)), 1e-10);
  EXPECT_TRUE(fs::exists(dir_ / "model_0.txt"));
}

TEST_F(Workdir, FitUnderdeterminedIsConditioningError) {
  std::vector<TunnelSample> few(10);
  for (std::size_t i = 0; i < few.size(); ++i) few[i].delta_col = 0.01 * i, few[i].wind_speed = i;
  save_tunnel_csv((dir_ / "few.csv").string(), few);
  const auto r = helisim("--out " + dir_.string() + " fit " + (dir_ / "few.csv").string());
  EXPECT_EQ(r.code, 4) << r.out;
}

TEST_F(Workdir, FitMissingDatasetIsIoError) {
  EXPECT_EQ(helisim("fit " + (dir_ / "absent.csv").string()).code, 3);
}

TEST_F(Workdir, SimulateZeroWindAndSvg) {
  const auto r = helisim("--out " + dir_.string() + " simulate --mode baseline --speed 0");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto tel = load_telemetry_csv((dir_ / "telemetry.csv").string());
  ASSERT_FALSE(tel.empty());
  EXPECT_LT(tel.back().state.rigid.xi.norm(), 0.1);
  for (const auto& [name, lines] : {std::pair{"positions.svg", 3}, std::pair{"inputs.svg", 4}}) {
    boost::property_tree::ptree pt;
    std::istringstream in(slurp(dir_ / name));
    ASSERT_NO_THROW(boost::property_tree::read_xml(in, pt)) << name;
    const auto& svg = pt.get_child("svg");
    EXPECT_FALSE(svg.get<std::string>("title").empty());
    int polylines = 0;
    std::function<void(const boost::property_tree::ptree&)> walk = [&](const auto& t) {
      for (const auto& [k, v] : t) {
        if (k == "polyline") ++polylines;
        walk(v);
      }
    };
    walk(svg);
    EXPECT_EQ(polylines, lines) << name;
  }
  const auto j = nlohmann::json::parse(slurp(dir_ / "metrics.json"));
  EXPECT_FALSE(j.at("failed").get<bool>());
}

TEST_F(Workdir, SimulateIsByteIdentical) {
  const std::string args = " --seed 4 simulate --mode baseline --speed 3 --no-svg";
  ASSERT_EQ(helisim("--out " + (dir_ / "a").string() + args).code, 0);
  ASSERT_EQ(helisim("--out " + (dir_ / "b").string() + args).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "telemetry.csv"), slurp(dir_ / "b" / "telemetry.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "a" / "positions.svg"));
}

TEST_F(Workdir, MissingModelIsConfigError) {
  const auto cfg = write("c.json", R"({"aero": {"model": "missing.txt"},
                                       "scenario": {"controller": {"mode": "hybrid"}}})");
  EXPECT_EQ(helisim("--config " + cfg.string() + " --out " + dir_.string() + " simulate").code, 2);
  const auto none = write("n.json", R"({"scenario": {"controller": {"mode": "hybrid"}}})");
  EXPECT_EQ(helisim("--config " + none.string() + " --out " + dir_.string() + " simulate").code, 2);
}

TEST_F(Workdir, ConfigErrors) {
  EXPECT_EQ(helisim("--config " + write("u.json", R"({"bogus": 1})").string() + " bounds").code, 2);
  EXPECT_EQ(helisim("--config " + write("m.json", "{not json").string() + " bounds").code, 2);
  EXPECT_EQ(helisim("--config " + (dir_ / "absent.json").string() + " bounds").code, 3);
  EXPECT_EQ(helisim("simulate --mode adaptive").code, 2);
}

TEST_F(Workdir, CompareZeroWindModesAgree) {
  const auto cfg = write("c.json", R"({"aero": {"fit": {}},
      "scenario": {"duration": 10},
      "compare": {"kind": "type_ii", "speeds": [0], "directions": [0, 270], "case_gains": false}})");
  const auto r = helisim("--config " + cfg.string() + " --out " + dir_.string() + " compare");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(dir_ / "compare.json"));
  const auto& cells = j.at("cells");
  ASSERT_EQ(cells.size(), 4u);
  for (std::size_t i = 0; i < cells.size(); i += 2) {
    const auto& a = cells[i].at("metrics");
    const auto& b = cells[i + 1].at("metrics");
    EXPECT_NE(cells[i].at("mode"), cells[i + 1].at("mode"));
    for (const char* k : {"steady_state_error", "max_deviation", "rms_final_window"})
      EXPECT_NEAR(a.at(k).get<double>(), b.at(k).get<double>(), 1e-9) << k;
  }
  EXPECT_TRUE(fs::exists(dir_ / "compare.txt"));
}

TEST_F(Workdir, CompareCardinalityAndBounds) {
  const auto cfg = write("c.json", R"({"aero": {"fit": {}},
      "scenario": {"duration": 2},
      "compare": {"kind": "type_ii", "directions": [270]}})");
  const auto r = helisim("--config " + cfg.string() + " --out " + dir_.string() + " compare --bounds");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("beta_max"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir_ / "compare.json")).at("cells").size(), 8u);
}

TEST_F(Workdir, Bounds) {
  const auto r = helisim("bounds");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("alpha_max"), std::string::npos);
}
