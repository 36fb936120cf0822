#include "ingvio/config.hpp"

#include <gtest/gtest.h>

using namespace ingvio;

namespace {

std::string error_of(const std::string& text) {
  try {
    const ConfigFile cf = ConfigFile::parse(text, "t.cfg");
    scenario_from(cf);
    filter_from(cf);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(ConfigFile, ParsesSectionsCommentsAndRepeatedDropouts) {
  const auto cf = ConfigFile::parse(R"(config_version = 1
# comment
[trajectory]
kind = helix   # trailing comment
duration = 12.5
[gnss]
constellations = GPS:8,BDS:6
dropout = GPS, 10, 20, 2
dropout = BDS, 15, 30, 0
[filter]
mode = vio
camera = stereo
)");
  const ScenarioConfig sc = scenario_from(cf);
  EXPECT_EQ(sc.trajectory.kind, TrajectoryKind::Helix);
  EXPECT_DOUBLE_EQ(sc.trajectory.duration, 12.5);
  ASSERT_EQ(sc.constellations.size(), 2u);
  EXPECT_EQ(sc.constellations[0].id, Constellation::GPS);
  EXPECT_EQ(sc.constellations[0].count, 8);
  EXPECT_EQ(sc.constellations[1].id, Constellation::BDS);
  EXPECT_EQ(sc.constellations[1].count, 6);
  ASSERT_EQ(sc.constellations[0].dropouts.size(), 1u);
  EXPECT_DOUBLE_EQ(sc.constellations[0].dropouts[0].t_start, 10.0);
  EXPECT_DOUBLE_EQ(sc.constellations[0].dropouts[0].t_end, 20.0);
  EXPECT_EQ(sc.constellations[0].dropouts[0].visible, 2);
  EXPECT_EQ(sc.constellations[1].dropouts[0].visible, 0);

  const FilterConfig f = filter_from(cf);
  EXPECT_EQ(f.mode, Mode::Vio);
  ASSERT_TRUE(f.camera);
  EXPECT_EQ(*f.camera, CameraMode::Stereo);
}

TEST(ConfigFile, DefaultsWhenEmpty) {
  const auto cf = ConfigFile::parse("config_version = 1\n");
  const ScenarioConfig sc = scenario_from(cf);
  const ScenarioConfig ref;
  EXPECT_EQ(sc.seed, ref.seed);
  EXPECT_EQ(sc.trajectory.duration, ref.trajectory.duration);
  EXPECT_EQ(filter_from(cf).mode, FilterConfig{}.mode);
}

TEST(ConfigFile, ErrorsNameFileAndLine) {
  EXPECT_NE(error_of("[trajectory]\nkind = line\n").find("config_version"), std::string::npos);
  EXPECT_NE(error_of("config_version = 2\n").find("t.cfg:1"), std::string::npos);
  EXPECT_NE(error_of("config_version = 1\nseed = 3\n").find("t.cfg:2"), std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[imu\n").find("t.cfg:2: unterminated"), std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[bogus]\n").find("unknown section [bogus]"), std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[imu]\nrate = 200\nratee = 1\n").find("t.cfg:4: unknown key 'ratee'"),
            std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[imu]\nrate = 200\nrate = 100\n").find("t.cfg:4: duplicate key"),
            std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[imu]\nrate = fast\n").find("t.cfg:3: expected a number"),
            std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[imu]\nrate = 1e999\n").find("expected a number"), std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[camera]\nstereo = yes\n").find("true/false"), std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[scenario]\nseed = -4\n").find("non-negative integer"),
            std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[camera]\nmax_features = 2.5\n").find("integer"), std::string::npos);
  EXPECT_NE(error_of("config_version = 1\n[filter]\nmode = slam\n").find("vio or gvio"), std::string::npos);
  EXPECT_FALSE(error_of("config_version = 1\n[trajectory]\nkind = wobble\n").empty());
  EXPECT_FALSE(error_of("config_version = 1\n[gnss]\nconstellations = XYZ:4\n").empty());
  EXPECT_FALSE(error_of("config_version = 1\n[imu]\nrate = -1\n").empty());
  EXPECT_THROW(ConfigFile::load("/nonexistent/x.cfg"), ConfigError);
}

TEST(MatchedFilter, CopiesScenarioNoiseThenAppliesOverrides) {
  const auto cf = ConfigFile::parse(R"(config_version = 1
[imu]
gyro_noise = 0.002
[init]
sigma_position = 0.3
[camera]
stereo = true
[filter.noise]
accel = 0.05
)");
  const ScenarioConfig sc = scenario_from(cf);
  const FilterConfig f = matched_filter(sc, cf);
  EXPECT_DOUBLE_EQ(f.noise.gyro, 0.002);
  EXPECT_DOUBLE_EQ(f.noise.accel, 0.05);  // explicit filter section wins
  EXPECT_NEAR(f.init.position, 0.09, 1e-15);
  EXPECT_DOUBLE_EQ(f.vision.sigma, sc.pixel_sigma);
  ASSERT_TRUE(f.camera);
  EXPECT_EQ(*f.camera, CameraMode::Stereo);
}

TEST(FilterConfig, ValidateRejectsBadValues) {
  FilterConfig f;
  EXPECT_NO_THROW(f.validate());
  f.vision.max_clones = 1;
  EXPECT_THROW(f.validate(), ConfigError);
}
