#pragma once

// Numerical observability experiment: a short trajectory with in-state
// landmarks and differenced GNSS rows, linearized at noise-perturbed estimates,
// checked against the analytic unobservable directions.

#include "ingvio/symmetry.hpp"
#include "ingvio/vision.hpp"

#include <random>

namespace ingvio {

struct ObservabilityConfig {
  int steps = 20;
  double dt = 0.1;
  int landmarks = 8;
  std::vector<Vec3> sat_dirs;  // empty: VIO
  Mat3 R_w_ecef = Mat3::Identity();
  bool doppler = true;
  bool static_at_origin = false;
  double perturbation = 1e-2;  // std of the estimate errors
  std::uint64_t seed = 1;
};

struct ObservabilityResult {
  DegeneracyReport report;
  MatX O;
  MatX N;                      // unobservable directions at the first estimate
  double residual = 0.0;       // max column |O n| / (|O| |n|)
  VecX O_singular_values;
  MatX candidates;                // 3 translations + g-rotation at the first estimate
  double candidate_ratio = 0.0;   // sigma_min(O Q) / sigma_max(O), Q spanning the candidates
};

/// Stacked rows of every landmark seen from `frame`, including the landmark block.
inline MatX landmark_rows(const NavState& x, const StateLayout& L, FrameId frame) {
  MatX H = MatX::Zero(2 * static_cast<long>(x.landmarks.size()), L.dim());
  int r = 0;
  for (const auto& [id, f] : x.landmarks) {
    const auto J = visual_jacobians(x, L, CameraRig{}, f.position, FeatureObservation{frame, kLeftCamera, Vec2::Zero()},
                                    f.anchor_frame);
    if (!J.valid) continue;
    H.middleRows(r, 2) = J.H_x;
    H.block<2, 3>(r, L.landmark(id)) += J.H_f;
    r += 2;
  }
  return H.topRows(r);
}

/// Sigma values of O restricted to span(C), relative to sigma_max(O).
inline double restricted_singular_ratio(const MatX& O, const MatX& C) {
  const MatX Q = Eigen::HouseholderQR<MatX>(C).householderQ() * MatX::Identity(C.rows(), C.cols());
  const VecX s = Eigen::JacobiSVD<MatX>(O * Q).singularValues();
  const VecX so = Eigen::JacobiSVD<MatX>(O).singularValues();
  return s(s.size() - 1) / so(0);
}

inline ObservabilityResult observability_experiment(const ObservabilityConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);

  NavState truth;
  truth.extrinsics = Pose{rot_y(std::numbers::pi / 2) * rot_z(-std::numbers::pi / 2), Vec3(0.1, 0.0, -0.05)};
  truth.extrinsics_in_state = true;
  Vec3 omega = Vec3::Zero(), accel;
  if (cfg.static_at_origin) {
    truth.imu.rotation = rot_z(0.3);
  } else {
    truth.imu.rotation = rot_z(0.7) * rot_x(0.1);
    truth.imu.position = Vec3(20.0, -5.0, 3.0);
    truth.imu.velocity = Vec3(1.5, 0.5, 0.2);
    omega = Vec3(0.05, -0.03, 0.2);
  }
  accel = -(truth.imu.rotation.transpose() * kGravity);
  if (!cfg.static_at_origin) accel += Vec3(0.3, -0.2, 0.1);

  truth.clones[0] = Clone{camera_pose(truth), 0.0};
  const Pose& c0 = truth.clones[0].pose;
  for (int j = 0; j < cfg.landmarks; ++j) {
    const Vec3 pc(2.0 * nd(rng), 1.5 * nd(rng), 8.0 + 2.0 * std::abs(nd(rng)));
    truth.landmarks[j] = Landmark{c0 * pc, 0};
  }

  auto perturb = [&](const NavState& t) {
    const int n = StateLayout::of(t).dim();
    VecX d(n);
    for (int i = 0; i < n; ++i) d(i) = cfg.perturbation * nd(rng);
    NavState e = boxplus(t, d);
    if (cfg.static_at_origin) {
      // Keep g x p and g x v zero at the estimate.
      e.imu.position = Vec3(0.0, 0.0, t.imu.position.z() + cfg.perturbation * nd(rng));
      e.imu.velocity = Vec3(0.0, 0.0, t.imu.velocity.z() + cfg.perturbation * nd(rng));
    }
    return e;
  };
  auto rows = [&](const NavState& e, FrameId frame) {
    const StateLayout L = StateLayout::of(e);
    MatX H = landmark_rows(e, L, frame);
    if (cfg.sat_dirs.size() > 1) {
      const MatX G = differenced_gnss_rows(e, L, cfg.R_w_ecef, cfg.sat_dirs, cfg.doppler);
      MatX S(H.rows() + G.rows(), L.dim());
      S << H, G;
      H = std::move(S);
    }
    return H;
  };

  ObservabilityResult res;
  std::vector<MatX> Phi, Hs;
  NavState est = perturb(truth);
  res.report = classify_degeneracy(cfg.sat_dirs, cfg.R_w_ecef, est);
  res.N = unobservable_directions(est, res.report);
  const NavState est0 = est;
  Hs.push_back(rows(est, 0));
  for (int k = 0; k < cfg.steps; ++k) {
    const MatX F = transition_matrix(est, omega, accel, cfg.dt);
    truth = propagate_mean(truth, omega, accel, cfg.dt);
    const NavState pre = perturb(truth);
    const StateLayout L = StateLayout::of(pre);
    const FrameId frame = k + 1;
    truth.clones[frame] = Clone{camera_pose(truth), truth.timestamp};
    // Augmentation [I; J] in the layout order of the grown state.
    const StateLayout Ln = StateLayout::of(truth);
    MatX A = MatX::Zero(Ln.dim(), L.dim());
    for (const auto& b : L.blocks()) A.block(Ln.offset(b.key), b.offset, b.dim, b.dim).setIdentity();
    A.middleRows(Ln.clone(frame), 6) = clone_jacobian(pre);
    Phi.push_back(A * F);
    est = perturb(truth);
    Hs.push_back(rows(est, frame));
  }
  res.O = observability_matrix(Phi, Hs);
  res.O_singular_values = Eigen::JacobiSVD<MatX>(res.O).singularValues();
  res.residual = res.N.cols() ? relative_null_residual(res.O, res.N) : 0.0;

  // All translations plus the g-rotation, regardless of the degeneracy report.
  DegeneracyReport all;
  all.null_dim = 3;
  all.null_basis = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  all.yaw_unobservable = true;
  res.candidates = analytic_unobservable_directions(est0, all);
  res.candidate_ratio = restricted_singular_ratio(res.O, res.candidates);
  return res;
}

}  // namespace ingvio
