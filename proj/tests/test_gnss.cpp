#include "ingvio/gnss.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ingvio;
using namespace ingvio::test;

namespace {

const GeodeticPoint kOrigin{0.52, 2.03, 35.0};

struct GnssScene {
  Alignment align;
  NavState x;
  std::vector<SatelliteObservation> sats;
};

// Noiseless observations of `x` from satellites at the given (az, el) pairs.
std::vector<SatelliteObservation> observe_all(const NavState& x, const Alignment& a,
                                              const std::vector<std::pair<double, double>>& azel,
                                              std::mt19937_64& rng, int n_const = 2) {
  std::vector<SatelliteObservation> out;
  const Vec3 pe = a.to_ecef(x.imu.position);
  int id = 0;
  for (const auto& [az, el] : azel) {
    SatelliteObservation s;
    s.constellation = static_cast<Constellation>(id % n_const);
    s.sat_id = id++;
    s.sat_position = place_satellite(pe, az, el);
    s.sat_velocity = random_vec(rng, 2000.0);
    s.sat_clock = random_vec(rng, 100.0).x();
    s.sat_clock_drift = random_vec(rng, 0.1).x();
    s.delay = 2.0 + 1.0 / std::sin(el);
    s.pseudorange = predict_pseudorange(x, a, s);
    s.range_rate = predict_range_rate(x, a, s);
    out.push_back(s);
  }
  return out;
}

std::vector<std::pair<double, double>> generic_azel(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> az(0.0, 2 * std::numbers::pi), el(0.3, 1.4);
  std::vector<std::pair<double, double>> v;
  for (int i = 0; i < n; ++i) v.emplace_back(az(rng), el(rng));
  return v;
}

GnssScene scene(std::mt19937_64& rng, int n_sats, int n_const = 2) {
  GnssScene s;
  s.align = make_alignment(kOrigin, 0.4, Vec3(3.0, -2.0, 1.0));
  s.x = random_state(rng, {.clones = 1, .landmarks = 1, .constellations = n_const});
  s.x.imu.position = random_vec(rng, 50.0);
  s.x.imu.velocity = random_vec(rng, 5.0);
  s.sats = observe_all(s.x, s.align, generic_azel(rng, n_sats), rng, n_const);
  return s;
}

}  // namespace

TEST(GnssModel, NadirRangeAndRecedingRate) {
  std::mt19937_64 rng(1);
  const Alignment a = make_alignment(kOrigin, 0.0, Vec3::Zero());
  NavState x;
  x.clock_biases[Constellation::GPS] = 0.0;
  x.clock_drift = 0.0;
  SatelliteObservation s;
  const Vec3 up = a.up_ecef();
  s.sat_position = a.to_ecef(Vec3::Zero()) + 2.0e7 * up;
  EXPECT_NEAR(predict_pseudorange(x, a, s), 2.0e7, 1e-6);
  s.sat_velocity = 3.5 * up;
  EXPECT_NEAR(predict_range_rate(x, a, s), 3.5, 1e-9);
  NavState y;
  EXPECT_THROW(predict_pseudorange(y, a, s), std::invalid_argument);
}

TEST(GnssModel, NoiselessObservationsHaveZeroResidual) {
  std::mt19937_64 rng(2);
  auto s = scene(rng, 8);
  for (const auto& o : s.sats) {
    EXPECT_LT(std::abs(o.pseudorange - predict_pseudorange(s.x, s.align, o)), 1e-9);
    EXPECT_LT(std::abs(o.range_rate - predict_range_rate(s.x, s.align, o)), 1e-9);
  }
}

TEST(GnssJacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = scene(rng, 1);
    const auto& o = s.sats[0];
    const StateLayout L = StateLayout::of(s.x);
    // Line of sight frozen at the estimate, as in the filter rows.
    const Vec3 n0 = line_of_sight(s.align.to_ecef(s.x.imu.position), o);
    auto h = [&](const NavState& y) -> VecX {
      VecX v(2);
      v(0) = predict_pseudorange(y, s.align, o);
      v(1) = -n0.dot(s.align.R() * y.imu.velocity - o.sat_velocity) + (*y.clock_drift - o.sat_clock_drift);
      return v;
    };
    const MatX fd = numeric_jacobian(s.x, h, 1e-4);
    EXPECT_LT(rel_error(gnss_jacobians(s.x, L, s.align, o), fd), 1e-5) << trial;
  }
}

TEST(GnssJacobian, SimpleCases) {
  NavState x;
  x.clock_biases[Constellation::GPS] = 0.0;
  x.clock_drift = 0.0;
  x.imu.position = Vec3(7.0e6, 0.0, 0.0);
  Alignment a;  // identity world-to-ECEF
  SatelliteObservation s;
  s.sat_position = x.imu.position + Vec3(2.0e7, 0.0, 0.0);
  const StateLayout L = StateLayout::of(x);
  MatX H = gnss_jacobians(x, L, a, s);
  EXPECT_TRUE((H.block<1, 3>(0, StateLayout::kPos).isApprox(Eigen::RowVector3d(-1, 0, 0))));
  EXPECT_EQ(H(0, L.clock_bias(Constellation::GPS)), 1.0);
  EXPECT_EQ(H(1, L.clock_drift()), 1.0);
  x.imu.position.setZero();
  s.sat_position = Vec3(1.0, 2.0, 3.0) * 1e7;
  H = gnss_jacobians(x, L, a, s);
  EXPECT_EQ((H.block<1, 3>(0, StateLayout::kRot).cwiseAbs().maxCoeff()), 0.0);
}

TEST(SingleDifference, ClockTermsCancel) {
  std::mt19937_64 rng(4);
  auto s = scene(rng, 4, 1);
  const auto& k = s.sats[0];
  const auto& l = s.sats[1];
  const auto same = single_difference(k, k);
  EXPECT_EQ(same.first, 0.0);
  EXPECT_EQ(same.second, 0.0);
  // Measured difference equals predicted difference (geometry only).
  const auto meas = single_difference(k, l);
  const auto pred = predict_single_difference(s.x.imu.position, s.x.imu.velocity, s.align, k, l);
  EXPECT_NEAR(meas.first, pred.first, 1e-7);
  EXPECT_NEAR(meas.second, pred.second, 1e-9);
  // Linearity: difference of predictions.
  EXPECT_NEAR(pred.first,
              predict_pseudorange(s.x, s.align, k) - k.delay + k.sat_clock -
                  (predict_pseudorange(s.x, s.align, l) - l.delay + l.sat_clock),
              1e-7);
  // Common receiver clock offset leaves the difference unchanged.
  NavState y = s.x;
  y.clock_biases.begin()->second += 1234.5;
  auto k2 = k, l2 = l;
  k2.pseudorange = predict_pseudorange(y, s.align, k);
  l2.pseudorange = predict_pseudorange(y, s.align, l);
  EXPECT_NEAR(single_difference(k2, l2).first, meas.first, 1e-7);
  SatelliteObservation other = l;
  other.constellation = Constellation::GAL;
  EXPECT_THROW(single_difference(k, other), std::invalid_argument);
}

TEST(Spp, NoiselessRecoversTruth) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = scene(rng, 6 + trial % 3, 1 + trial % 2);
    const auto res = spp_solve(s.sats);
    ASSERT_TRUE(res.ok) << res.reason;
    EXPECT_LT((res.position - s.align.to_ecef(s.x.imu.position)).norm(), 1e-6);
    EXPECT_LT((res.velocity - s.align.R() * s.x.imu.velocity).norm(), 1e-6);
    EXPECT_NEAR(res.clock_drift, *s.x.clock_drift, 1e-6);
    for (const auto& [c, b] : res.clock_biases) EXPECT_NEAR(b, s.x.clock_biases.at(c), 1e-6);
    EXPECT_GT(res.gdop, 0.0);
  }
}

TEST(Spp, Failures) {
  std::mt19937_64 rng(6);
  auto s = scene(rng, 3, 1);
  EXPECT_EQ(spp_solve(s.sats).reason, "insufficient satellites");
  // Ring at one elevation: up and clock columns are indistinguishable.
  std::vector<std::pair<double, double>> ring;
  for (int i = 0; i < 6; ++i) ring.emplace_back(i * std::numbers::pi / 3, 0.6);
  NavState x = s.x;
  x.clock_biases = {{Constellation::GPS, 10.0}};
  const auto sats = observe_all(x, s.align, ring, rng, 1);
  const auto res = spp_solve(sats);
  EXPECT_FALSE(res.ok);
  EXPECT_NE(res.reason.find("GDOP"), std::string::npos);
}

TEST(Alignment, RecoversYawAndTranslation) {
  std::mt19937_64 rng(7);
  for (double yaw : {0.0, std::numbers::pi / 6, -2.5}) {
    std::vector<Vec3> pw, pe;
    for (int i = 0; i < 15; ++i) pw.emplace_back(10.0 * std::cos(0.3 * i), 6.0 * std::sin(0.5 * i), 0.2 * i);
    // Truth ENU frame sits at the first fix, the frame the estimator chooses.
    const Alignment truth = make_alignment(kOrigin, yaw, -(rot_z(yaw) * pw.front()));
    for (const auto& p : pw) pe.push_back(truth.to_ecef(p));
    const auto a = initialize_alignment(pw, pe);
    ASSERT_TRUE(a);
    // The ENU origin is the first fix, so compare transforms rather than parameters.
    EXPECT_LT(std::abs(wrap_angle(yaw_of(enu_rotation(a->origin).transpose() * a->R()) - yaw)), 1e-9);
    for (const auto& p : pw) EXPECT_LT((a->to_ecef(p) - truth.to_ecef(p)).norm(), 1e-6);
  }
  // Already ENU with zero offset at the first fix.
  std::vector<Vec3> pw, pe;
  const Alignment id = make_alignment(kOrigin, 0.0, Vec3::Zero());
  for (int i = 0; i < 12; ++i) {
    pw.push_back(Vec3(i, 0.5 * i * i / 10.0, 0.0));
    pe.push_back(id.to_ecef(pw.back()));
  }
  const auto a = initialize_alignment(pw, pe);
  ASSERT_TRUE(a);
  EXPECT_LT(std::abs(a->yaw), 1e-9);
  EXPECT_LT((a->T_w_ecef.translation - id.T_w_ecef.translation).norm(), 1e-6);

  std::vector<Vec3> still(12, Vec3(1, 2, 3)), still_e(12, id.to_ecef(Vec3(1, 2, 3)));
  EXPECT_FALSE(initialize_alignment(still, still_e));
  EXPECT_FALSE(initialize_alignment({pw.begin(), pw.begin() + 5}, {pe.begin(), pe.begin() + 5}));
}

TEST(GnssUpdate, ElevationWeightingMonotone) {
  GnssParams prm;
  double prev = 0.0;
  for (double el = 1.5; el > -0.2; el -= 0.05) {
    const double v = gnss_variances(el, prm).first;
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(GnssUpdate, ClockLifecycle) {
  std::mt19937_64 rng(8);
  auto s = scene(rng, 8, 2);
  NavState x = s.x;
  const NavState truth = s.x;
  x.clock_biases.clear();
  x.clock_drift.reset();
  MatX P = 1e-2 * MatX::Identity(StateLayout::of(x).dim(), StateLayout::of(x).dim());
  GnssParams prm;
  EventLog log;
  const auto spp = spp_solve(s.sats);
  const auto rep = gnss_update(x, P, {1.0, s.sats}, s.align, prm, &spp, &log);
  EXPECT_EQ(rep.initialized.size(), 2u);
  ASSERT_TRUE(x.clock_drift);
  for (const auto& [c, b] : truth.clock_biases) EXPECT_NEAR(x.clock_biases.at(c), b, 1e-3);
  EXPECT_NEAR(*x.clock_drift, *truth.clock_drift, 1e-3);
  EXPECT_TRUE(is_valid_covariance(P));

  // Only GPS visible: GAL-type slot (constellation 1 = BDS here) removed.
  std::vector<SatelliteObservation> gps;
  for (const auto& o : s.sats)
    if (o.constellation == Constellation::GPS) gps.push_back(o);
  const auto rep2 = gnss_update(x, P, {2.0, gps}, s.align, prm, nullptr, &log);
  EXPECT_EQ(rep2.removed.size(), 1u);
  EXPECT_EQ(x.clock_biases.size(), 1u);
  EXPECT_TRUE(x.clock_drift);
  // Empty epoch: everything goes, state otherwise untouched.
  const NavState before = x;
  const auto rep3 = gnss_update(x, P, {3.0, {}}, s.align, prm, nullptr, &log);
  EXPECT_TRUE(x.clock_biases.empty());
  EXPECT_FALSE(x.clock_drift);
  EXPECT_FALSE(rep3.updated);
  EXPECT_EQ(x.imu.position, before.imu.position);
  EXPECT_EQ(P.rows(), StateLayout::of(x).dim());
}

TEST(GnssUpdate, OutlierGatedOthersApplied) {
  std::mt19937_64 rng(9);
  auto s = scene(rng, 8, 1);
  NavState x = s.x;
  const int n = StateLayout::of(x).dim();
  MatX P = 1e-2 * MatX::Identity(n, n);
  s.sats[3].pseudorange += 100.0;
  GnssParams prm;
  EventLog log;
  const auto rep = gnss_update(x, P, {1.0, s.sats}, s.align, prm, nullptr, &log);
  EXPECT_EQ(rep.gated, 1);
  EXPECT_EQ(rep.used, 7);
  EXPECT_TRUE(rep.updated);
  EXPECT_LT((x.imu.position - s.x.imu.position).norm(), 1e-6);
}

TEST(GnssUpdate, CovarianceMatchesInformationForm) {
  std::mt19937_64 rng(10);
  auto s = scene(rng, 8, 1);
  NavState x = s.x;
  const StateLayout L = StateLayout::of(x);
  const int n = L.dim();
  const MatX P0 = random_spd(rng, n);
  MatX P = P0;
  std::vector<const SatelliteObservation*> ptrs;
  for (const auto& o : s.sats) ptrs.push_back(&o);
  const auto g = detail::gnss_rows(x, L, s.align, ptrs, GnssParams{});
  const MatX info = P0.inverse() + g.H.transpose() * g.var.cwiseInverse().asDiagonal() * g.H;
  const MatX oracle = info.inverse();
  const auto rep = gnss_update(x, P, {1.0, s.sats}, s.align, GnssParams{}, nullptr, nullptr);
  EXPECT_EQ(rep.used, 8);
  EXPECT_LT(rel_error(P, oracle), 1e-8);
  EXPECT_LT((P.block<3, 3>(StateLayout::kPos, StateLayout::kPos).trace()),
            (P0.block<3, 3>(StateLayout::kPos, StateLayout::kPos).trace()));
}
