#include "ingvio/propagation.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ingvio;
using namespace ingvio::test;

TEST(PropagateMean, Hover) {
  NavState x;
  x.imu.position = Vec3(1, 2, 3);
  for (int i = 0; i < 1000; ++i) x = propagate_mean(x, Vec3::Zero(), Vec3(0, 0, 9.81), 0.005);
  EXPECT_LT((x.imu.position - Vec3(1, 2, 3)).norm(), 1e-12);
  EXPECT_LT(x.imu.velocity.norm(), 1e-12);
  EXPECT_NEAR(x.timestamp, 5.0, 1e-9);
}

TEST(PropagateMean, FreeFall) {
  NavState x;
  x.imu.rotation = rot_x(0.3) * rot_z(1.0);
  for (int i = 0; i < 200; ++i) x = propagate_mean(x, Vec3::Zero(), Vec3::Zero(), 0.01);
  EXPECT_LT((x.imu.velocity - kGravity * 2.0).norm(), 1e-12);
  EXPECT_LT((x.imu.position - 0.5 * kGravity * 4.0).norm(), 1e-11);
  EXPECT_THROW(propagate_mean(x, Vec3::Zero(), Vec3::Zero(), 0.0), std::invalid_argument);
}

TEST(PropagateMean, ClockDrift) {
  NavState x;
  x.clock_biases[Constellation::GPS] = 10.0;
  x.clock_drift = 2.0;
  x = propagate_mean(x, Vec3::Zero(), Vec3::Zero(), 0.5);
  EXPECT_DOUBLE_EQ(x.clock_biases.at(Constellation::GPS), 11.0);
}

namespace {

struct Kin {
  Mat3 R;
  Vec3 p, v;
};

Kin rk4(const Kin& s0, const Vec3& w, const Vec3& a, double T, int steps) {
  auto deriv = [&](const Kin& s) { return Kin{s.R * skew(w), s.v, s.R * a + kGravity}; };
  auto add = [](const Kin& s, const Kin& d, double h) { return Kin{s.R + d.R * h, s.p + d.p * h, s.v + d.v * h}; };
  Kin s = s0;
  const double h = T / steps;
  for (int i = 0; i < steps; ++i) {
    const Kin k1 = deriv(s);
    const Kin k2 = deriv(add(s, k1, h / 2));
    const Kin k3 = deriv(add(s, k2, h / 2));
    const Kin k4 = deriv(add(s, k3, h));
    s.R += (k1.R + 2 * k2.R + 2 * k3.R + k4.R) * (h / 6);
    s.p += (k1.p + 2 * k2.p + 2 * k3.p + k4.p) * (h / 6);
    s.v += (k1.v + 2 * k2.v + 2 * k3.v + k4.v) * (h / 6);
  }
  return s;
}

}  // namespace

TEST(PropagateMean, ConstantInputMatchesRk4) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    NavState x = random_state(rng, {.clones = 0, .landmarks = 0, .constellations = 0});
    const Vec3 w = random_vec(rng, 1.0);
    const Vec3 a = random_vec(rng, 5.0);
    const double dt = 0.2;
    const Kin ref = rk4({x.imu.rotation, x.imu.position, x.imu.velocity}, w - x.gyro_bias,
                        a - x.accel_bias, dt, 2000);
    const NavState y = propagate_mean(x, w, a, dt);
    EXPECT_LT((y.imu.rotation - ref.R).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((y.imu.position - ref.p).norm(), 1e-10);
    EXPECT_LT((y.imu.velocity - ref.v).norm(), 1e-10);
  }
}

TEST(Transition, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const NavState x = random_state(rng, {.clones = 2, .landmarks = 2});
    const Vec3 w = random_vec(rng, trial % 3 == 0 ? 1e-5 : 1.0);
    const Vec3 a = random_vec(rng, 5.0);
    const double dt = trial % 2 ? 0.005 : 0.1;
    const NavState y = propagate_mean(x, w, a, dt);
    const MatX F_fd =
        numeric_jacobian(x, [&](const NavState& s) { return boxminus(propagate_mean(s, w, a, dt), y); });
    const MatX F = transition_matrix(x, w, a, dt);
    EXPECT_LT((F - F_fd).cwiseAbs().maxCoeff(), 1e-4) << "trial " << trial;
  }
}

TEST(Covariance, BlockwiseMatchesDense) {
  std::mt19937_64 rng(3);
  ProcessNoise noise;
  for (bool trap : {false, true}) {
    noise.trapezoidal = trap;
    NavState x = random_state(rng);
    const int n = StateLayout::of(x).dim();
    MatX P = random_spd(rng, n, 0.01);
    const Vec3 w = random_vec(rng), a = random_vec(rng, 3.0);
    const double dt = 0.005;
    const MatX F = transition_matrix(x, w, a, dt);

    MatX G = MatX::Zero(n, 12 + 3);
    G.topLeftCorner(15, 12) = imu_noise_input(x);
    const StateLayout L = StateLayout::of(x);
    G(L.clock_bias(Constellation::GPS), 12) = 1.0;
    G(L.clock_bias(Constellation::BDS), 13) = 1.0;
    G(L.clock_drift(), 14) = 1.0;
    VecX q(15);
    q << Vec3::Constant(noise.gyro * noise.gyro), Vec3::Constant(noise.accel * noise.accel),
        Vec3::Constant(noise.gyro_bias_walk * noise.gyro_bias_walk),
        Vec3::Constant(noise.accel_bias_walk * noise.accel_bias_walk),
        Vec3(noise.clock_bias_walk * noise.clock_bias_walk, noise.clock_bias_walk * noise.clock_bias_walk,
             noise.clock_drift_walk * noise.clock_drift_walk);
    const MatX GQG = G * q.asDiagonal() * G.transpose();
    MatX Qd = F * GQG * F.transpose();
    if (trap) Qd = 0.5 * (Qd + GQG);
    const MatX P_ref = F * P * F.transpose() + Qd * dt;

    MatX P2 = P;
    propagate(x, P2, w, a, dt, noise);
    EXPECT_LT(rel_error(P2, P_ref), 1e-12);
    EXPECT_TRUE(is_valid_covariance(P2));
  }
}
