#include "ingvio/harness.hpp"
#include "ingvio/report.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace ingvio;
namespace fs = std::filesystem;

namespace {

ScenarioConfig tiny() {
  ScenarioConfig sc;
  sc.trajectory.kind = TrajectoryKind::Figure8;
  sc.trajectory.duration = 3.0;
  return sc;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ingvio_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(MonteCarlo, IndependentOfThreadCount) {
  const ScenarioConfig sc = tiny();
  FilterConfig f;
  f.mode = Mode::Vio;
  const MonteCarloResult a = montecarlo(sc, f, 3, 1);
  const MonteCarloResult b = montecarlo(sc, f, 3, 3);
  ASSERT_EQ(a.mean_nees.size(), b.mean_nees.size());
  EXPECT_EQ(a.mean_nees, b.mean_nees);
  EXPECT_EQ(a.anees, b.anees);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a.runs[i].seed, sc.seed + i);
    EXPECT_EQ(a.runs[i].position_rmse, b.runs[i].position_rmse);
  }
  EXPECT_LT(a.lower, 15.0);
  EXPECT_GT(a.upper, 15.0);
  EXPECT_THROW(montecarlo(sc, f, 1), ConfigError);
}

TEST(Observability, StaticTwoSatelliteScenarioIsYawDegenerate) {
  ScenarioConfig sc;
  sc.trajectory.kind = TrajectoryKind::Static;
  sc.trajectory.duration = 2.0;
  sc.constellations = {{Constellation::GPS, 2, {}}};
  const ObservabilityAnalysis a = analyze_observability(sc, 10);
  ASSERT_FALSE(a.epochs.empty());
  for (const auto& e : a.epochs) {
    EXPECT_EQ(e.satellites, 2);
    EXPECT_EQ(e.report.null_dim, 2);
  }
  EXPECT_TRUE(a.experiment.report.yaw_unobservable);
  EXPECT_EQ(a.experiment.N.cols(), 3);
  EXPECT_LT(a.experiment.residual, 1e-6);
}

TEST(Report, WritesEstimatesEventsAndPlot) {
  const ScenarioConfig sc = tiny();
  const Dataset d = simulate(sc);
  const RunResult r = run_filter(FilterConfig{}, d);
  const RunMetrics m = compute_metrics(r, *d.truth, d.alignment_truth);
  const fs::path dir = temp_dir("report");
  write_estimates(r, dir / "estimate.csv");
  write_errors(m, dir / "errors.csv");
  write_events(r.events, dir / "events.csv");
  write_summary(run_summary(r, &m), dir / "summary.csv");

  const auto rows = csv::read_rows(dir / "estimate.csv", 42);
  EXPECT_EQ(rows.size(), r.estimates.size());
  EXPECT_DOUBLE_EQ(rows.front().second[0], r.estimates.front().t);
  EXPECT_EQ(csv::read_rows(dir / "errors.csv", 16).size(), m.series.size());

  const std::string events = slurp(dir / "events.csv");
  EXPECT_NE(events.find("# t_s,kind,detail"), std::string::npos);
  EXPECT_NE(events.find(",image,"), std::string::npos);

  plot_run(dir, dir / "run.svg");
  const std::string svg = slurp(dir / "run.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Report, EventDetailCommasAreEscaped) {
  EventLog log;
  log.add(1.5, "gate", "a=1,b=2");
  const fs::path dir = temp_dir("events");
  write_events(log, dir / "events.csv");
  EXPECT_NE(slurp(dir / "events.csv").find("gate,a=1;b=2"), std::string::npos);
  fs::remove_all(dir);
}
