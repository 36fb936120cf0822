#include "ingvio/metrics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ingvio;
using namespace ingvio::test;

namespace {

std::vector<TruthSample> straight_truth(int n) {
  std::vector<TruthSample> truth;
  for (int i = 0; i < n; ++i) {
    TruthSample s;
    s.t = 0.1 * i;
    s.position = Vec3(1.0 * s.t, 0.5, 2.0);
    s.velocity = Vec3(1.0, 0.0, 0.0);
    s.attitude = Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Vec3::UnitZ()));
    truth.push_back(s);
  }
  return truth;
}

RunResult run_from(const std::vector<TruthSample>& truth, const Vec3& offset) {
  RunResult r;
  for (const auto& s : truth) {
    EstimateSample e;
    e.t = s.t;
    e.imu.rotation = s.attitude.toRotationMatrix();
    e.imu.position = s.position + offset;
    e.imu.velocity = s.velocity;
    e.P_imu = Mat15::Identity();
    r.estimates.push_back(e);
  }
  return r;
}

}  // namespace

TEST(Metrics, PerfectEstimateHasZeroError) {
  const auto truth = straight_truth(20);
  const RunMetrics m = compute_metrics(run_from(truth, Vec3::Zero()), truth, std::nullopt);
  EXPECT_EQ(m.series.size(), 20u);
  EXPECT_NEAR(m.position_rmse, 0.0, 1e-12);
  EXPECT_NEAR(m.yaw_rmse, 0.0, 1e-12);
  EXPECT_NEAR(m.final_error, 0.0, 1e-12);
  EXPECT_NEAR(m.anees, 0.0, 1e-20);
}

TEST(Metrics, ConstantOffsetGivesUnitRmse) {
  const auto truth = straight_truth(20);
  const RunMetrics m = compute_metrics(run_from(truth, Vec3(0.6, 0.0, 0.8)), truth, std::nullopt);
  EXPECT_NEAR(m.position_rmse, 1.0, 1e-12);
  EXPECT_NEAR(m.final_error, 1.0, 1e-12);
  EXPECT_NEAR(error_slope(m, 0.0), 0.0, 1e-12);
  // With zero rotation error the invariant position error is truth - estimate.
  EXPECT_NEAR(m.series[3].imu_error(StateLayout::kPos), -0.6, 1e-12);
  EXPECT_NEAR(m.anees, 1.0, 1e-12);
}

TEST(Metrics, RmseAndSlopeExamples) {
  EXPECT_DOUBLE_EQ(rmse({Vec3(3, 4, 0), Vec3(0, 0, 0)}), std::sqrt(12.5));
  EXPECT_THROW(rmse({}), std::invalid_argument);
  EXPECT_NEAR(slope({0, 1, 2, 3}, {1, 3, 5, 7}), 2.0, 1e-15);
  EXPECT_EQ(slope({1}, {1}), 0.0);
}

TEST(Metrics, NeesBoundsMatchChiSquareTables) {
  const auto [lo1, hi1] = nees_bounds(1, 1);
  EXPECT_NEAR(lo1, 0.000982, 1e-6);
  EXPECT_NEAR(hi1, 5.023886, 1e-6);
  const auto [lo, hi] = nees_bounds(3, 10);  // chi2(30) / 10
  EXPECT_NEAR(lo, 1.6791, 1e-4);
  EXPECT_NEAR(hi, 4.6979, 1e-4);
}

TEST(Metrics, GaussianToyHasAneesEqualToDimension) {
  std::mt19937_64 rng(1);
  const MatX P = random_spd(rng, 15, 0.5);
  const Eigen::LLT<MatX> llt(P);
  const MatX Lc = llt.matrixL();
  std::normal_distribution<double> n(0.0, 1.0);
  const int N = 20000;
  double sum = 0.0;
  for (int i = 0; i < N; ++i) {
    VecX z(15);
    for (int k = 0; k < 15; ++k) z(k) = n(rng);
    sum += nees(Lc * z, P);
  }
  // Mean of chi2(15) has standard deviation sqrt(30 / N) ~ 0.04.
  EXPECT_NEAR(sum / N, 15.0, 0.2);
  // Overconfident covariance inflates the statistic.
  EXPECT_GT(nees(Lc * VecX::Ones(15), 0.25 * P), 3.9 * nees(Lc * VecX::Ones(15), P));
}

TEST(Gauge, IdenticalAlignmentsGiveIdentity) {
  const Alignment a = make_alignment({0.5, 2.0, 40.0}, 0.7, Vec3(1, 2, 3));
  const Gauge g = Gauge::between(a, a);
  EXPECT_TRUE(g.R.isApprox(Mat3::Identity(), 1e-12));
  EXPECT_LT(g.t.norm(), 1e-6);
}

TEST(Gauge, MapsTruthIntoEstimatedFrame) {
  const Alignment truth = make_alignment({0.5, 2.0, 40.0}, 0.7, Vec3(1, 2, 3));
  const Alignment est = make_alignment({0.5, 2.0, 40.0}, 0.75, Vec3(1.5, 2, 3));
  const Gauge g = Gauge::between(est, truth);
  const Vec3 p(10.0, -4.0, 2.0);
  // Same ECEF point seen from both world frames.
  EXPECT_LT((est.to_ecef(g.R * p + g.t) - truth.to_ecef(p)).norm(), 1e-6);
}
