#include "ingvio/vision.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace ingvio;
using namespace ingvio::test;

namespace {

// Clones spread along a line, cameras looking roughly along world +z with small
// random tilts, landmarks 4-12 m in front.
NavState scene_state(std::mt19937_64& rng, int clones, int landmarks) {
  NavState x = random_state(rng, {.clones = 0, .landmarks = 0});
  for (int i = 0; i < clones; ++i) {
    const Mat3 R = so3_exp(random_vec(rng, 0.05));
    x.clones[i] = Clone{Pose{R, Vec3(0.3 * i, 0.1 * std::sin(i), 0.05 * i) + random_vec(rng, 0.02)}, 0.1 * i};
  }
  std::uniform_real_distribution<double> u(-2.0, 2.0), d(4.0, 12.0);
  for (int j = 0; j < landmarks; ++j) {
    x.landmarks[100 + j] = Landmark{Vec3(u(rng), u(rng), d(rng)), static_cast<FrameId>(j % clones)};
  }
  return x;
}

FeatureObservation observe(const NavState& x, FrameId f, int cam, const Vec3& pw, const CameraRig& rig) {
  const Vec3 pc = observer_pose(x, f, cam, rig).inverse() * pw;
  return {f, cam, Vec2(pc.x() / pc.z(), pc.y() / pc.z())};
}

CameraRig stereo_rig() {
  CameraRig rig;
  rig.stereo = true;
  rig.right_in_left = Pose{so3_exp(Vec3(0.01, -0.02, 0.005)), Vec3(0.12, 0.001, -0.002)};
  return rig;
}

}  // namespace

TEST(Project, Examples) {
  EXPECT_TRUE(project(Vec3(0, 0, 1))->isApprox(Vec2(0, 0)));
  EXPECT_TRUE(project(Vec3(1, 2, 2))->isApprox(Vec2(0.5, 1.0)));
  EXPECT_FALSE(project(Vec3(1, 2, -2)).has_value());
  EXPECT_FALSE(project(Vec3(1, 2, 0)).has_value());
  const Vec3 p(0.3, -0.7, 2.5);
  Mat23 fd;
  for (int k = 0; k < 3; ++k) {
    Vec3 d = Vec3::Zero();
    d(k) = 1e-5;
    fd.col(k) = (*project(p + d) - *project(p - d)) / 2e-5;
  }
  EXPECT_LT((projection_jacobian(p) - fd).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Triangulate, NoiselessRecoversPoint) {
  std::mt19937_64 rng(1);
  VisionParams prm;
  for (bool stereo : {false, true}) {
    if (stereo) prm.rig = stereo_rig();
    for (int trial = 0; trial < 50; ++trial) {
      const NavState x = scene_state(rng, 6, 1);
      const Vec3 pw = x.landmarks.begin()->second.position;
      std::vector<FeatureObservation> obs;
      for (const auto& [f, c] : x.clones) {
        obs.push_back(observe(x, f, kLeftCamera, pw, prm.rig));
        if (stereo) obs.push_back(observe(x, f, kRightCamera, pw, prm.rig));
      }
      const auto tri = triangulate(obs, x, prm);
      ASSERT_TRUE(tri.ok()) << to_string(tri.status);
      EXPECT_LT((tri.position - pw).norm(), 1e-8);
    }
  }
}

TEST(Triangulate, NoisyConvergesNearTruth) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  VisionParams prm;
  int ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const NavState x = scene_state(rng, 10, 1);
    const Vec3 pw = x.landmarks.begin()->second.position;
    std::vector<FeatureObservation> obs;
    for (const auto& [f, c] : x.clones) {
      auto o = observe(x, f, kLeftCamera, pw, prm.rig);
      o.uv += Vec2(n(rng), n(rng)) * prm.sigma;
      obs.push_back(o);
    }
    const auto tri = triangulate(obs, x, prm);
    if (tri.ok()) {
      ++ok;
      EXPECT_LT((tri.position - pw).norm(), 0.5);
    }
  }
  EXPECT_GE(ok, 45);
}

TEST(Triangulate, Rejections) {
  std::mt19937_64 rng(3);
  VisionParams prm;
  NavState x = scene_state(rng, 3, 0);
  for (auto& [f, c] : x.clones) c.pose = x.clones.at(0).pose;
  const Vec3 pw(0.2, 0.1, 6.0);
  std::vector<FeatureObservation> obs;
  for (const auto& [f, c] : x.clones) obs.push_back(observe(x, f, kLeftCamera, pw, prm.rig));
  EXPECT_EQ(triangulate(obs, x, prm).status, TriangulationStatus::Parallax);

  const NavState y = scene_state(rng, 4, 0);
  obs.clear();
  const Vec3 behind(0.2, 0.1, -6.0);
  for (const auto& [f, c] : y.clones) {
    const Vec3 pc = c.pose.inverse() * behind;
    obs.push_back({f, kLeftCamera, Vec2(pc.x() / pc.z(), pc.y() / pc.z())});
  }
  EXPECT_EQ(triangulate(obs, y, prm).status, TriangulationStatus::Depth);
  EXPECT_EQ(triangulate({obs[0]}, y, prm).status, TriangulationStatus::TooFewViews);
}

TEST(VisualJacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const CameraRig rig = stereo_rig();
  for (int trial = 0; trial < 100; ++trial) {
    const NavState x = scene_state(rng, 4, 3);
    const StateLayout L = StateLayout::of(x);
    const FeatureId id = 100 + trial % 3;
    const FrameId m = trial % 4;
    const int cam = trial % 2;
    auto predict = [&](const NavState& s) -> VecX {
      const Vec3 pc = observer_pose(s, m, cam, rig).inverse() * s.landmarks.at(id).position;
      return *project(pc);
    };
    const MatX fd = numeric_jacobian(x, predict);
    const auto& lm = x.landmarks.at(id);
    auto J = visual_jacobians(x, L, rig, lm.position, {m, cam, Vec2::Zero()}, lm.anchor_frame);
    ASSERT_TRUE(J.valid);
    J.H_x.middleCols(L.landmark(id), 3) += J.H_f;
    EXPECT_LT(rel_error(J.H_x, fd), 1e-5) << trial;
  }
}

TEST(VisualJacobian, AntisymmetryAndAnchorCancellation) {
  std::mt19937_64 rng(5);
  const NavState x = scene_state(rng, 3, 1);
  const StateLayout L = StateLayout::of(x);
  const Vec3 pw = x.landmarks.begin()->second.position;
  const auto J = visual_jacobians(x, L, {}, pw, {2, kLeftCamera, Vec2::Zero()}, FrameId{0});
  const Mat23 th_m = J.H_x.middleCols(L.clone(2), 3);
  const Mat23 th_a = J.H_x.middleCols(L.clone(0), 3);
  const Mat23 p_m = J.H_x.middleCols(L.clone(2) + 3, 3);
  EXPECT_TRUE(th_m == -th_a);
  EXPECT_TRUE(p_m == -J.H_f);
  const auto Js = visual_jacobians(x, L, {}, pw, {1, kLeftCamera, Vec2::Zero()}, FrameId{1});
  EXPECT_EQ(Js.H_x.middleCols(L.clone(1), 3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(VisualModel, GlobalTranslationAndYawInvariance) {
  std::mt19937_64 rng(6);
  const CameraRig rig = stereo_rig();
  const NavState x = scene_state(rng, 4, 3);
  const Vec3 t(3.0, -7.0, 1.5);
  const Mat3 Rg = rot_z(0.8);
  NavState xt = x, xr = x;
  for (auto& [f, c] : xt.clones) c.pose.translation += t;
  for (auto& [f, l] : xt.landmarks) l.position += t;
  for (auto& [f, c] : xr.clones) c.pose = Pose{Rg, Vec3::Zero()} * c.pose;
  for (auto& [f, l] : xr.landmarks) l.position = Rg * l.position;
  for (const auto& [id, l] : x.landmarks) {
    for (const auto& [f, c] : x.clones) {
      for (int cam : {0, 1}) {
        const auto a = observe(x, f, cam, l.position, rig).uv;
        EXPECT_LT((a - observe(xt, f, cam, xt.landmarks.at(id).position, rig).uv).norm(), 1e-12);
        EXPECT_LT((a - observe(xr, f, cam, xr.landmarks.at(id).position, rig).uv).norm(), 1e-10);
      }
    }
  }
}

TEST(Nullspace, ProjectionAnnihilatesFeatureBlock) {
  std::mt19937_64 rng(7);
  const NavState x = scene_state(rng, 2, 1);
  const StateLayout L = StateLayout::of(x);
  const Vec3 pw = x.landmarks.begin()->second.position;
  std::vector<FeatureObservation> obs;
  for (const auto& [f, c] : x.clones) obs.push_back(observe(x, f, kLeftCamera, pw, {}));
  auto rows = feature_rows(x, L, {}, pw, obs);
  ASSERT_TRUE(rows);
  const auto proj = nullspace_project(*rows);
  ASSERT_TRUE(proj);
  EXPECT_EQ(proj->rows(), 1);  // 4 rows - 3
  // Same projection applied to H_f itself must vanish.
  StackedRows only_f{rows->H_f, rows->r, rows->H_f};
  const auto pf = nullspace_project(only_f);
  EXPECT_LT(pf->H.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(proj->r.norm(), 1e-12);  // noiseless
}

TEST(ChangeAnchor, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    NavState x = random_state(rng, {.clones = 3, .landmarks = 2});
    const FeatureId id = 100;
    const FrameId old_a = x.landmarks.at(id).anchor_frame;
    const FrameId new_a = old_a == 14 ? 10 : 14;
    const StateLayout L = StateLayout::of(x);
    const Vec3 p0 = x.landmarks.at(id).position;
    const Mat3 Rn0 = x.clones.at(new_a).pose.rotation;
    // New-anchor landmark error of a perturbed state.
    auto new_err = [&](const NavState& s) -> VecX {
      const Vec3 th = so3_log(s.clones.at(new_a).pose.rotation * Rn0.transpose());
      return gamma(1, th).lu().solve(s.landmarks.at(id).position - gamma(0, th) * p0);
    };
    const MatX fd = numeric_jacobian(x, new_err);
    const MatX J = anchor_change_jacobian(x, id, new_a);
    EXPECT_LT(rel_error(J, fd), 1e-5);

    // Covariance transform equals J_full P J_full^T.
    MatX P = random_spd(rng, L.dim(), 0.01);
    MatX Jf = MatX::Identity(L.dim(), L.dim());
    Jf.middleRows(L.landmark(id), 3) = J;
    const MatX ref = Jf * P * Jf.transpose();
    NavState y = x;
    change_anchor(y, P, {id}, new_a);
    EXPECT_EQ(y.landmarks.at(id).anchor_frame, new_a);
    EXPECT_EQ(y.landmarks.at(id).position, p0);
    EXPECT_LT(rel_error(P, ref), 1e-12);
  }
}

TEST(ChangeAnchor, SameAnchorIsIdentityAndMarginalPreserved) {
  std::mt19937_64 rng(9);
  NavState x = random_state(rng, {.clones = 3, .landmarks = 1});
  const StateLayout L = StateLayout::of(x);
  MatX P = random_spd(rng, L.dim(), 0.01);
  const MatX P0 = P;
  const FrameId a = x.landmarks.at(100).anchor_frame;
  change_anchor(x, P, {100}, a);
  EXPECT_EQ(P, P0);
  EXPECT_THROW(change_anchor(x, P, {100}, 99), std::invalid_argument);

  // The world-position marginal implied by either parameterization is the same:
  // dp_world = dp - [p]x dtheta_anchor.
  const FrameId b = a == 10 ? 12 : 10;
  const Vec3 p = x.landmarks.at(100).position;
  auto world_cov = [&](const MatX& C, FrameId anc) {
    MatX G = MatX::Zero(3, L.dim());
    G.middleCols(L.landmark(100), 3).setIdentity();
    G.middleCols(L.clone(anc), 3) = -skew(p);
    return (G * C * G.transpose()).eval();
  };
  const MatX before = world_cov(P, a);
  change_anchor(x, P, {100}, b);
  EXPECT_LT(rel_error(world_cov(P, b), before), 1e-9);
}

namespace {

std::map<FrameId, Clone> clones_of(const std::vector<FrameId>& ids) {
  std::map<FrameId, Clone> m;
  for (FrameId id : ids) m[id] = Clone{Pose{}, 0.1 * id};
  return m;
}

}  // namespace

TEST(KeyframePolicy, TriggerRules) {
  std::vector<FrameId> ids;
  for (int i = 0; i < 20; ++i) ids.push_back(i);
  EXPECT_FALSE(select_marginal_poses(2, 20, clones_of(ids)));
  ids.push_back(20);
  EXPECT_FALSE(select_marginal_poses(3, 20, clones_of(ids)));
  ids.push_back(21);
  const auto pair = select_marginal_poses(4, 20, clones_of(ids));
  ASSERT_TRUE(pair);
  EXPECT_NE(pair->first, pair->second);
  EXPECT_NE(pair->first, 21);
  EXPECT_NE(pair->second, 21);
  EXPECT_EQ(pair->second, 20);
}

TEST(KeyframePolicy, ScriptedSequenceBaseline) {
  const int n_max = 20;
  std::map<FrameId, Clone> pairwise, sliding;
  double span_pair = 0.0, span_slide = 0.0;
  std::size_t worst_count = 0;
  for (long img = 1; img <= 200; ++img) {
    pairwise[img] = Clone{Pose{}, 0.1 * img};
    sliding[img] = Clone{Pose{}, 0.1 * img};
    if (auto p = select_marginal_poses(img, n_max, pairwise)) {
      pairwise.erase(p->first);
      pairwise.erase(p->second);
    }
    for (FrameId f : select_sliding_window(n_max, sliding)) sliding.erase(f);
    worst_count = std::max(worst_count, pairwise.size());
    span_pair = std::max(span_pair, pairwise.rbegin()->second.timestamp - pairwise.begin()->second.timestamp);
    span_slide = std::max(span_slide, sliding.rbegin()->second.timestamp - sliding.begin()->second.timestamp);
  }
  EXPECT_LE(worst_count, static_cast<std::size_t>(n_max + 1));
  EXPECT_GE(span_pair, 1.8 * span_slide);
}

namespace {

// A fully observed world: clones 0..k-1 plus a set of landmarks observed by each.
struct MiniScene {
  NavState x;
  MatX P;
  std::vector<Vec3> points;
};

MiniScene mini_scene(std::mt19937_64& rng, int clones, int points) {
  MiniScene s;
  s.x = scene_state(rng, clones, 0);
  s.x.extrinsics_in_state = false;
  s.x.clock_biases.clear();
  s.x.clock_drift.reset();
  s.P = 1e-4 * MatX::Identity(StateLayout::of(s.x).dim(), StateLayout::of(s.x).dim());
  std::uniform_real_distribution<double> u(-2.0, 2.0), d(4.0, 12.0);
  for (int j = 0; j < points; ++j) s.points.emplace_back(u(rng), u(rng), d(rng));
  return s;
}

}  // namespace

TEST(Msckf, GatesOutlierAndKeepsInliers) {
  std::mt19937_64 rng(10);
  auto s = mini_scene(rng, 5, 3);
  VisionParams prm;
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<FeatureTrack> tracks;
  for (int j = 0; j < 3; ++j) {
    FeatureTrack t{j, {}, 5};
    for (const auto& [f, c] : s.x.clones) {
      auto o = observe(s.x, f, kLeftCamera, s.points[j], {});
      o.uv += Vec2(n(rng), n(rng)) * prm.sigma;
      t.observations.push_back(o);
    }
    tracks.push_back(t);
  }
  tracks[2].observations[2].uv.x() += 10.0 * prm.sigma * 3.0;
  std::vector<const FeatureTrack*> ptrs;
  for (const auto& t : tracks) ptrs.push_back(&t);
  const double tr0 = s.P.trace();
  const auto res = msckf_update(s.x, s.P, ptrs, prm);
  EXPECT_EQ(res.features, 3);
  EXPECT_EQ(res.accepted + res.gated + res.rejected, 3);
  EXPECT_GE(res.gated + res.rejected, 1);
  EXPECT_GE(res.accepted, 1);
  EXPECT_LT(s.P.trace(), tr0);
  EXPECT_TRUE(is_valid_covariance(s.P));
}

TEST(Slam, KnownLandmarkNoiselessLeavesStateUnchanged) {
  std::mt19937_64 rng(11);
  auto s = mini_scene(rng, 3, 1);
  s.x.landmarks[7] = Landmark{s.points[0], 0};
  const int n = StateLayout::of(s.x).dim();
  s.P = 1e-4 * MatX::Identity(n, n);
  VisionParams prm;
  std::map<FeatureId, int> fails;
  std::map<FeatureId, std::vector<FeatureObservation>> obs;
  obs[7] = {observe(s.x, 2, kLeftCamera, s.points[0], {})};
  const NavState before = s.x;
  double prev = s.P.block<3, 3>(StateLayout::of(s.x).landmark(7), StateLayout::of(s.x).landmark(7)).trace();
  for (int k = 0; k < 5; ++k) {
    const auto res = slam_update(s.x, s.P, 2, obs, fails, prm);
    EXPECT_EQ(res.updated, 1);
    const int o = StateLayout::of(s.x).landmark(7);
    const double cur = s.P.block<3, 3>(o, o).trace();
    EXPECT_LE(cur, prev + 1e-18);
    prev = cur;
  }
  EXPECT_LT(boxminus(s.x, before).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Slam, OutliersGatedThenDropped) {
  std::mt19937_64 rng(12);
  auto s = mini_scene(rng, 3, 1);
  s.x.landmarks[7] = Landmark{s.points[0], 0};
  const int n = StateLayout::of(s.x).dim();
  s.P = 1e-6 * MatX::Identity(n, n);
  VisionParams prm;
  std::map<FeatureId, int> fails;
  std::map<FeatureId, std::vector<FeatureObservation>> obs;
  auto o = observe(s.x, 2, kLeftCamera, s.points[0], {});
  o.uv.x() += 0.1;
  obs[7] = {o};
  for (int k = 0; k < 3; ++k) {
    const auto res = slam_update(s.x, s.P, 2, obs, fails, prm);
    EXPECT_EQ(res.gated, 1);
    EXPECT_EQ(res.to_drop.size(), k == 2 ? 1u : 0u);
  }
  const auto lost = slam_update(s.x, s.P, 2, {}, fails, prm);
  EXPECT_EQ(lost.to_drop, std::vector<FeatureId>{7});
}

TEST(Slam, DelayedInitializationRecoversPoint) {
  std::mt19937_64 rng(13);
  auto s = mini_scene(rng, 6, 1);
  VisionParams prm;
  FeatureTrack t{42, {}, 6};
  for (const auto& [f, c] : s.x.clones) t.observations.push_back(observe(s.x, f, kLeftCamera, s.points[0], {}));
  ASSERT_TRUE(initialize_landmark(s.x, s.P, t, 5, prm));
  ASSERT_TRUE(s.x.landmarks.count(42));
  EXPECT_LT((s.x.landmarks.at(42).position - s.points[0]).norm(), 1e-8);
  EXPECT_EQ(s.x.landmarks.at(42).anchor_frame, 5);
  EXPECT_TRUE(is_valid_covariance(s.P));
}
