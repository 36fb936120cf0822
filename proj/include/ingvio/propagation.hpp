#pragma once

// Discrete IMU mean propagation with zero-order hold, the block-diagonal error
// transition and process-noise covariance propagation. Clones and landmarks do
// not evolve and receive no process noise.

#include "ingvio/state.hpp"

namespace ingvio {

using Mat15 = Eigen::Matrix<double, 15, 15>;

inline const Vec3 kGravity(0.0, 0.0, -9.81);

/// Continuous-time noise densities.
struct ProcessNoise {
  double gyro = 1e-3;              // rad/s/sqrt(Hz)
  double accel = 1e-2;             // m/s^2/sqrt(Hz)
  double gyro_bias_walk = 1e-5;    // rad/s^2/sqrt(Hz)
  double accel_bias_walk = 1e-4;   // m/s^3/sqrt(Hz)
  double clock_bias_walk = 0.5;    // m/sqrt(s)
  double clock_drift_walk = 0.1;   // m/s/sqrt(s)
  bool trapezoidal = false;
};

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// Analytic propagation over dt holding the IMU sample constant.
inline NavState propagate_mean(const NavState& x, const Vec3& omega_m, const Vec3& accel_m, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("propagate_mean: dt must be positive");
  const Vec3 w = omega_m - x.gyro_bias;
  const Vec3 a = accel_m - x.accel_bias;
  const Vec3 phi = w * dt;
  const Mat3& R = x.imu.rotation;

  NavState out = x;
  out.timestamp = x.timestamp + dt;
  out.imu.rotation = R * gamma(0, phi);
  out.imu.velocity = x.imu.velocity + kGravity * dt + R * gamma(1, phi) * a * dt;
  out.imu.position = x.imu.position + x.imu.velocity * dt + 0.5 * kGravity * dt * dt +
                     R * gamma(2, phi) * a * (dt * dt);
  if (x.clock_drift) {
    for (auto& [c, b] : out.clock_biases) b += *x.clock_drift * dt;
  }
  return out;
}

/// 15x15 IMU block of the error transition, evaluated at the state before the step.
inline Mat15 imu_transition(const NavState& x, const Vec3& omega_m, const Vec3& accel_m, double dt) {
  const Vec3 w = omega_m - x.gyro_bias;
  const Vec3 a = accel_m - x.accel_bias;
  const Vec3 phi = w * dt;
  const Mat3& R = x.imu.rotation;
  const Mat3 G1 = gamma(1, phi);
  const Mat3 G2 = gamma(2, phi);
  const Vec3 v_next = x.imu.velocity + kGravity * dt + R * G1 * a * dt;
  const Vec3 p_next = x.imu.position + x.imu.velocity * dt + 0.5 * kGravity * dt * dt + R * G2 * a * (dt * dt);
  const Mat3 RG1 = R * G1;
  const Mat3 gx = skew(kGravity);

  Mat15 F = Mat15::Identity();
  constexpr int th = StateLayout::kRot, p = StateLayout::kPos, v = StateLayout::kVel,
                bg = StateLayout::kBg, ba = StateLayout::kBa;
  F.block<3, 3>(th, bg) = -RG1 * dt;

  F.block<3, 3>(p, th) = 0.5 * gx * dt * dt;
  F.block<3, 3>(p, v) = Mat3::Identity() * dt;
  F.block<3, 3>(p, bg) = -skew(p_next) * RG1 * dt - R * gamma_apply_jacobian(2, phi, a) * (dt * dt * dt);
  F.block<3, 3>(p, ba) = -R * G2 * (dt * dt);

  F.block<3, 3>(v, th) = gx * dt;
  F.block<3, 3>(v, bg) = -skew(v_next) * RG1 * dt - R * gamma_apply_jacobian(1, phi, a) * (dt * dt);
  F.block<3, 3>(v, ba) = -RG1 * dt;
  return F;
}

/// Clock block (biases then drift): t_alpha' = t_alpha + f dt.
inline MatX clock_transition(const NavState& x, double dt) {
  const int nb = static_cast<int>(x.clock_biases.size());
  const int n = nb + (x.clock_drift ? 1 : 0);
  MatX F = MatX::Identity(n, n);
  if (x.clock_drift) F.col(nb).head(nb).setConstant(dt);
  return F;
}

/// Full dense transition diag(Phi_IMU, I, ..., Phi_GNSS) in the layout of x.
inline MatX transition_matrix(const NavState& x, const Vec3& omega_m, const Vec3& accel_m, double dt) {
  const StateLayout L = StateLayout::of(x);
  MatX F = MatX::Identity(L.dim(), L.dim());
  F.topLeftCorner<15, 15>() = imu_transition(x, omega_m, accel_m, dt);
  const MatX Fc = clock_transition(x, dt);
  if (Fc.rows() > 0) F.bottomRightCorner(Fc.rows(), Fc.cols()) = Fc;
  return F;
}

/// Noise input matrix of the IMU error (columns: n_g, n_a, n_bg, n_ba).
inline Eigen::Matrix<double, 15, 12> imu_noise_input(const NavState& x) {
  Eigen::Matrix<double, 15, 12> G = Eigen::Matrix<double, 15, 12>::Zero();
  const Mat3& R = x.imu.rotation;
  G.block<3, 3>(StateLayout::kRot, 0) = -R;
  G.block<3, 3>(StateLayout::kPos, 0) = -skew(x.imu.position) * R;
  G.block<3, 3>(StateLayout::kVel, 0) = -skew(x.imu.velocity) * R;
  G.block<3, 3>(StateLayout::kVel, 3) = -R;
  G.block<3, 3>(StateLayout::kBg, 6).setIdentity();
  G.block<3, 3>(StateLayout::kBa, 9).setIdentity();
  return G;
}

/// P <- Phi P Phi^T + Q_d exploiting the block-diagonal structure of Phi.
/// `x` is the state before the step (it defines the layout and the noise input).
inline void propagate_covariance(MatX& P, const NavState& x, const Mat15& Phi_imu, double dt,
                                 const ProcessNoise& noise) {
  const StateLayout L = StateLayout::of(x);
  if (P.rows() != L.dim()) throw std::invalid_argument("propagate_covariance: dimension mismatch");
  const int n = L.dim();
  const MatX Fc = clock_transition(x, dt);
  const int nc = static_cast<int>(Fc.rows());
  const int c0 = n - nc;

  P.topRows<15>() = (Phi_imu * P.topRows<15>()).eval();
  P.leftCols<15>() = (P.leftCols<15>() * Phi_imu.transpose()).eval();
  if (nc > 0) {
    P.bottomRows(nc) = (Fc * P.bottomRows(nc)).eval();
    P.rightCols(nc) = (P.rightCols(nc) * Fc.transpose()).eval();
  }

  Eigen::Matrix<double, 12, 12> Qc = Eigen::Matrix<double, 12, 12>::Zero();
  Qc.diagonal() << Vec3::Constant(noise.gyro * noise.gyro), Vec3::Constant(noise.accel * noise.accel),
      Vec3::Constant(noise.gyro_bias_walk * noise.gyro_bias_walk),
      Vec3::Constant(noise.accel_bias_walk * noise.accel_bias_walk);
  const auto G = imu_noise_input(x);
  const Mat15 GQG = G * Qc * G.transpose();
  Mat15 Qd = Phi_imu * GQG * Phi_imu.transpose();
  if (noise.trapezoidal) Qd = 0.5 * (Qd + GQG);
  P.topLeftCorner<15, 15>() += Qd * dt;

  if (nc > 0) {
    MatX Qcl = MatX::Zero(nc, nc);
    const int nb = static_cast<int>(x.clock_biases.size());
    for (int i = 0; i < nb; ++i) Qcl(i, i) = noise.clock_bias_walk * noise.clock_bias_walk;
    if (x.clock_drift) Qcl(nb, nb) = noise.clock_drift_walk * noise.clock_drift_walk;
    MatX Qd_c = Fc * Qcl * Fc.transpose();
    if (noise.trapezoidal) Qd_c = 0.5 * (Qd_c + Qcl);
    P.block(c0, c0, nc, nc) += Qd_c * dt;
  }
  symmetrize(P);
}

/// One full propagation step of (x, P).
inline void propagate(NavState& x, MatX& P, const Vec3& omega_m, const Vec3& accel_m, double dt,
                      const ProcessNoise& noise) {
  const Mat15 F = imu_transition(x, omega_m, accel_m, dt);
  propagate_covariance(P, x, F, dt, noise);
  x = propagate_mean(x, omega_m, accel_m, dt);
}

}  // namespace ingvio
