#pragma once

// Visual measurement model on normalized image coordinates, triangulation,
// MSCKF (nullspace-projected) and SLAM-feature updates, the pairwise key-frame
// policy and landmark anchor changes, tied together by VisualUpdater.

#include "ingvio/events.hpp"
#include "ingvio/state.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

namespace ingvio {

using Vec2 = Eigen::Vector2d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

constexpr int kLeftCamera = 0;
constexpr int kRightCamera = 1;

struct FeatureObservation {
  FrameId frame = 0;
  int cam = kLeftCamera;
  Vec2 uv = Vec2::Zero();
};

/// Observations of one feature, ordered by (frame, cam), at most one per pair.
struct FeatureTrack {
  FeatureId id = 0;
  std::vector<FeatureObservation> observations;
  int frames_seen = 0;  // images that observed the feature, including erased ones
};

/// One feature measurement in the current image.
struct ImageMeasurement {
  FeatureId id = 0;
  int cam = kLeftCamera;
  Vec2 uv = Vec2::Zero();
};

/// Right camera pose expressed in the left camera frame (fixed, calibrated).
struct CameraRig {
  bool stereo = false;
  Pose right_in_left;
};

struct VisionParams {
  double sigma = 1.0 / 460.0;  // normalized-coordinate noise (pixel sigma / focal)
  int max_clones = 20;          // N_max
  int max_slam = 12;            // M_max
  int promote_after = 20;       // frames a track must be seen before promotion
  int k_fail = 3;
  double d_min = 0.2;
  double d_max = 300.0;
  double r_max_sigma = 3.0;     // mean reprojection gate, in units of sigma
  double min_parallax = 2e-3;   // rad
  double chi2_scale = 1.0;
  CameraRig rig;
};

// ---------------------------------------------------------------------------
// Projection

inline constexpr double kMinProjectionDepth = 1e-9;

inline std::optional<Vec2> project(const Vec3& p) {
  if (!(p.z() > kMinProjectionDepth)) return std::nullopt;
  return Vec2(p.x() / p.z(), p.y() / p.z());
}

inline Mat23 projection_jacobian(const Vec3& p) {
  const double iz = 1.0 / p.z();
  Mat23 J;
  J << iz, 0.0, -p.x() * iz * iz, 0.0, iz, -p.y() * iz * iz;
  return J;
}

/// World pose of the camera that took the observation.
inline Pose observer_pose(const NavState& x, FrameId frame, int cam, const CameraRig& rig) {
  const Pose& left = x.clones.at(frame).pose;
  return cam == kRightCamera ? left * rig.right_in_left : left;
}

// ---------------------------------------------------------------------------
// Jacobians

struct VisualJacobian {
  MatX H_x;   // 2 x dim, including the anchor rotation term when an anchor is given
  Mat23 H_f;  // with respect to the landmark translation error
  Vec2 predicted = Vec2::Zero();
  bool valid = false;
};

/// Rows of one observation of world point `pw`; `anchor` adds the landmark's
/// dependence on its anchor clone's rotation error.
inline VisualJacobian visual_jacobians(const NavState& x, const StateLayout& L, const CameraRig& rig,
                                       const Vec3& pw, const FeatureObservation& ob,
                                       std::optional<FrameId> anchor = std::nullopt) {
  VisualJacobian out;
  out.H_x = MatX::Zero(2, L.dim());
  const Pose& cm = x.clones.at(ob.frame).pose;
  const Mat3 Rt = cm.rotation.transpose();
  const Vec3 p_left = Rt * (pw - cm.translation);
  Mat3 chain = Mat3::Identity();
  Vec3 p_cam = p_left;
  if (ob.cam == kRightCamera) {
    chain = rig.right_in_left.rotation.transpose();
    p_cam = chain * (p_left - rig.right_in_left.translation);
  }
  const auto uv = project(p_cam);
  if (!uv) return out;
  out.predicted = *uv;
  out.valid = true;
  const Mat23 Jp = projection_jacobian(p_cam) * chain;
  const Mat23 dtheta = Jp * Rt * skew(pw);
  const int o = L.clone(ob.frame);
  out.H_x.block<2, 3>(0, o) += dtheta;
  out.H_x.block<2, 3>(0, o + 3) += -Jp * Rt;
  if (anchor) out.H_x.block<2, 3>(0, L.clone(*anchor)) -= dtheta;
  out.H_f = Jp * Rt;
  return out;
}

// ---------------------------------------------------------------------------
// Triangulation

enum class TriangulationStatus { Ok, TooFewViews, Parallax, Depth, Residual, Divergence };

inline const char* to_string(TriangulationStatus s) {
  switch (s) {
    case TriangulationStatus::Ok: return "ok";
    case TriangulationStatus::TooFewViews: return "too_few_views";
    case TriangulationStatus::Parallax: return "parallax";
    case TriangulationStatus::Depth: return "depth";
    case TriangulationStatus::Residual: return "residual";
    case TriangulationStatus::Divergence: return "divergence";
  }
  return "?";
}

struct Triangulation {
  TriangulationStatus status = TriangulationStatus::TooFewViews;
  Vec3 position = Vec3::Zero();
  double mean_residual = 0.0;
  int iterations = 0;
  bool ok() const { return status == TriangulationStatus::Ok; }
};

/// Linear multi-view initialization, then Gauss-Newton on the inverse depth
/// (alpha, beta, rho) in the first observing camera.
inline Triangulation triangulate(const std::vector<FeatureObservation>& obs, const NavState& x,
                                 const VisionParams& prm) {
  Triangulation out;
  std::vector<Pose> poses;
  std::vector<Vec2> meas;
  for (const auto& ob : obs) {
    if (!x.clones.count(ob.frame)) continue;
    if (ob.cam == kRightCamera && !prm.rig.stereo) continue;
    poses.push_back(observer_pose(x, ob.frame, ob.cam, prm.rig));
    meas.push_back(ob.uv);
  }
  if (poses.size() < 2) return out;

  Mat3 A = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  std::vector<Vec3> bearings;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Vec3 b = (poses[i].rotation * Vec3(meas[i].x(), meas[i].y(), 1.0)).normalized();
    bearings.push_back(b);
    const Mat3 Q = Mat3::Identity() - b * b.transpose();
    A += Q;
    rhs += Q * poses[i].translation;
  }
  double max_angle = 0.0;
  for (std::size_t i = 0; i < bearings.size(); ++i)
    for (std::size_t j = i + 1; j < bearings.size(); ++j)
      max_angle = std::max(max_angle, std::atan2(bearings[i].cross(bearings[j]).norm(), bearings[i].dot(bearings[j])));
  // Stereo pairs and moving cameras both show up as baseline; require some.
  double max_baseline = 0.0;
  for (std::size_t i = 1; i < poses.size(); ++i)
    max_baseline = std::max(max_baseline, (poses[i].translation - poses[0].translation).norm());
  if (max_baseline < 1e-9 || max_angle < prm.min_parallax) {
    out.status = TriangulationStatus::Parallax;
    return out;
  }
  const Vec3 p0 = A.ldlt().solve(rhs);

  const Pose& anchor = poses[0];
  const Vec3 q = anchor.inverse() * p0;
  if (!(q.z() > 0.0)) {
    out.status = TriangulationStatus::Depth;
    return out;
  }
  Vec3 th(q.x() / q.z(), q.y() / q.z(), 1.0 / q.z());

  // Relative transforms anchor -> observer.
  std::vector<Pose> rel;
  for (const auto& P : poses) rel.push_back(P.inverse() * anchor);

  auto cost = [&](const Vec3& t, VecX* res) {
    double c = 0.0;
    for (std::size_t i = 0; i < rel.size(); ++i) {
      const Vec3 h = rel[i].rotation * Vec3(t.x(), t.y(), 1.0) + t.z() * rel[i].translation;
      if (!(h.z() > kMinProjectionDepth)) return std::numeric_limits<double>::infinity();
      const Vec2 e = meas[i] - Vec2(h.x() / h.z(), h.y() / h.z());
      if (res) res->segment<2>(2 * i) = e;
      c += e.squaredNorm();
    }
    return c;
  };

  VecX res(2 * rel.size());
  double c = cost(th, &res);
  if (!std::isfinite(c)) {
    out.status = TriangulationStatus::Depth;
    return out;
  }
  double lambda = 1e-6;
  bool converged = false;
  int it = 0;
  for (; it < 10 && !converged; ++it) {
    Mat3 JtJ = Mat3::Zero();
    Vec3 Jte = Vec3::Zero();
    for (std::size_t i = 0; i < rel.size(); ++i) {
      const Vec3 h = rel[i].rotation * Vec3(th.x(), th.y(), 1.0) + th.z() * rel[i].translation;
      Mat3 dh;
      dh.col(0) = rel[i].rotation.col(0);
      dh.col(1) = rel[i].rotation.col(1);
      dh.col(2) = rel[i].translation;
      const Mat23 J = projection_jacobian(h) * dh;
      JtJ += J.transpose() * J;
      Jte += J.transpose() * res.segment<2>(2 * i);
    }
    bool stepped = false;
    for (int tries = 0; tries < 8 && !stepped; ++tries) {
      Mat3 M = JtJ;
      M.diagonal() *= (1.0 + lambda);
      const Vec3 step = M.ldlt().solve(Jte);
      const Vec3 cand = th + step;
      VecX cand_res(res.size());
      const double cc = cost(cand, &cand_res);
      if (cc <= c) {
        const double rel_step = step.norm() / (1.0 + th.norm());
        th = cand;
        res = cand_res;
        const double drop = c - cc;
        c = cc;
        lambda = std::max(lambda * 0.1, 1e-12);
        stepped = true;
        if (rel_step < 1e-12 || drop <= 1e-15 * (c + 1e-300) || c < 1e-30) converged = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped) converged = true;  // no decrease possible: at a minimum to round-off
  }
  out.iterations = it;
  if (!converged) {
    out.status = TriangulationStatus::Divergence;
    return out;
  }
  if (!(th.z() > 0.0)) {
    out.status = TriangulationStatus::Depth;
    return out;
  }
  out.position = anchor * (Vec3(th.x(), th.y(), 1.0) / th.z());
  double sum = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Vec3 pc = poses[i].inverse() * out.position;
    if (pc.z() < prm.d_min || pc.z() > prm.d_max) {
      out.status = TriangulationStatus::Depth;
      return out;
    }
    sum += (meas[i] - Vec2(pc.x() / pc.z(), pc.y() / pc.z())).norm();
  }
  out.mean_residual = sum / poses.size();
  if (out.mean_residual > prm.r_max_sigma * prm.sigma) {
    out.status = TriangulationStatus::Residual;
    return out;
  }
  out.status = TriangulationStatus::Ok;
  return out;
}

// ---------------------------------------------------------------------------
// Stacked rows

struct StackedRows {
  MatX H;
  VecX r;
  MatX H_f;  // only for unprojected stacks
  int rows() const { return static_cast<int>(r.size()); }
};

/// Unprojected rows of a set of observations of world point `pw`.
inline std::optional<StackedRows> feature_rows(const NavState& x, const StateLayout& L, const CameraRig& rig,
                                               const Vec3& pw, const std::vector<FeatureObservation>& obs,
                                               std::optional<FrameId> anchor = std::nullopt) {
  const int m = static_cast<int>(obs.size());
  StackedRows s{MatX::Zero(2 * m, L.dim()), VecX::Zero(2 * m), MatX::Zero(2 * m, 3)};
  for (int i = 0; i < m; ++i) {
    const auto J = visual_jacobians(x, L, rig, pw, obs[i], anchor);
    if (!J.valid) return std::nullopt;
    s.H.middleRows<2>(2 * i) = J.H_x;
    s.H_f.middleRows<2>(2 * i) = J.H_f;
    s.r.segment<2>(2 * i) = obs[i].uv - J.predicted;
  }
  return s;
}

/// Left-multiplies by a basis of the left nullspace of H_f (removes 3 rows).
inline std::optional<StackedRows> nullspace_project(const StackedRows& s) {
  const int m = s.rows();
  if (m <= 3) return std::nullopt;
  Eigen::HouseholderQR<MatX> qr(s.H_f);
  const MatX Rf = qr.matrixQR().topRows(3).triangularView<Eigen::Upper>();
  const double dmax = Rf.diagonal().cwiseAbs().maxCoeff();
  if (!(Rf.diagonal().cwiseAbs().minCoeff() > 1e-12 * dmax)) return std::nullopt;
  MatX H = s.H;
  VecX r = s.r;
  H.applyOnTheLeft(qr.householderQ().adjoint());
  r.applyOnTheLeft(qr.householderQ().adjoint());
  return StackedRows{H.bottomRows(m - 3), r.tail(m - 3), MatX()};
}

/// QR-compresses isotropic-noise rows to at most the number of active columns.
inline void compress_rows(MatX& H, VecX& r) {
  const auto idx = detail::active_columns(H);
  const int k = static_cast<int>(idx.size());
  if (H.rows() <= k) return;
  MatX Hc = H(Eigen::all, idx);
  Eigen::HouseholderQR<MatX> qr(Hc);
  r.applyOnTheLeft(qr.householderQ().adjoint());
  const MatX Rk = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  MatX out = MatX::Zero(k, H.cols());
  out(Eigen::all, idx) = Rk;
  H = std::move(out);
  r = r.head(k).eval();
}

inline void append_rows(StackedRows& dst, const StackedRows& src) {
  const int m0 = dst.rows();
  MatX H(m0 + src.rows(), src.H.cols());
  VecX r(m0 + src.rows());
  if (m0 > 0) {
    H.topRows(m0) = dst.H;
    r.head(m0) = dst.r;
  }
  H.bottomRows(src.rows()) = src.H;
  r.tail(src.rows()) = src.r;
  dst.H = std::move(H);
  dst.r = std::move(r);
}

// ---------------------------------------------------------------------------
// Key-frame policy

/// Pairwise policy: on even images with more than N_max clones, drop the
/// second-newest clone and the clone (not the newest) whose removal leaves the
/// smallest maximum time gap; ties go to the lower frame id.
inline std::optional<std::pair<FrameId, FrameId>> select_marginal_poses(long image_index, int max_clones,
                                                                        const std::map<FrameId, Clone>& clones) {
  if (image_index % 2 != 0) return std::nullopt;
  if (static_cast<int>(clones.size()) <= max_clones || clones.size() < 3) return std::nullopt;
  std::vector<std::pair<FrameId, double>> c;
  for (const auto& [id, cl] : clones) c.emplace_back(id, cl.timestamp);
  const std::size_t n = c.size();
  const FrameId a = c[n - 2].first;
  // Candidate list without the second-newest.
  std::vector<std::pair<FrameId, double>> rest(c.begin(), c.end() - 2);
  rest.push_back(c.back());
  auto max_gap_without = [&](std::size_t skip) {
    double g = 0.0;
    double prev = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (i == skip) continue;
      if (!std::isnan(prev)) g = std::max(g, rest[i].second - prev);
      prev = rest[i].second;
    }
    return g;
  };
  std::size_t best = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < rest.size(); ++i) {  // never the newest
    const double g = max_gap_without(i);
    if (g < best_gap - 1e-12) {
      best_gap = g;
      best = i;
    }
  }
  return std::make_pair(rest[best].first, a);
}

/// Oldest-first sliding window used as a baseline: removes the oldest clones
/// until at most N_max remain.
inline std::vector<FrameId> select_sliding_window(int max_clones, const std::map<FrameId, Clone>& clones) {
  std::vector<FrameId> out;
  int excess = static_cast<int>(clones.size()) - max_clones;
  for (auto it = clones.begin(); it != clones.end() && excess > 0; ++it, --excess) out.push_back(it->first);
  return out;
}

// ---------------------------------------------------------------------------
// Anchor change

/// Rows (3 x dim) mapping the full error to the landmark error after re-anchoring.
inline MatX anchor_change_jacobian(const NavState& x, FeatureId id, FrameId new_anchor) {
  const StateLayout L = StateLayout::of(x);
  const Landmark& f = x.landmarks.at(id);
  MatX J = MatX::Zero(3, L.dim());
  J.middleCols(L.landmark(id), 3).setIdentity();
  if (f.anchor_frame == new_anchor) return J;
  J.middleCols(L.clone(f.anchor_frame), 3) -= skew(f.position);
  J.middleCols(L.clone(new_anchor), 3) += skew(f.position);
  return J;
}

/// Re-anchors landmarks to `new_anchor`; values are unchanged, the covariance is
/// transformed by dp_new = dp_old - [p]x dtheta_old + [p]x dtheta_new.
inline void change_anchor(NavState& x, MatX& P, const std::vector<FeatureId>& ids, FrameId new_anchor) {
  if (!x.clones.count(new_anchor)) throw std::invalid_argument("change_anchor: new anchor missing");
  const StateLayout L = StateLayout::of(x);
  const int on = L.clone(new_anchor);
  for (FeatureId id : ids) {
    Landmark& f = x.landmarks.at(id);
    if (f.anchor_frame == new_anchor) continue;
    const int oo = L.clone(f.anchor_frame);
    const int of = L.landmark(id);
    const Mat3 M = skew(f.position);
    const MatX rows = (P.middleRows(of, 3) - M * P.middleRows(oo, 3) + M * P.middleRows(on, 3)).eval();
    P.middleRows(of, 3) = rows;
    const MatX cols = (P.middleCols(of, 3) - P.middleCols(oo, 3) * M.transpose() + P.middleCols(on, 3) * M.transpose()).eval();
    P.middleCols(of, 3) = cols;
    f.anchor_frame = new_anchor;
  }
  symmetrize(P);
}

// ---------------------------------------------------------------------------
// Updates

struct MsckfResult {
  int features = 0;
  int accepted = 0;
  int gated = 0;
  int rejected = 0;  // triangulation failures
  int rows = 0;
};

/// One stacked MSCKF update. `rows_for` selects, per track, the observations that
/// contribute rows (triangulation always uses every observation in the state).
template <typename RowSelector>
MsckfResult msckf_update(NavState& x, MatX& P, const std::vector<const FeatureTrack*>& tracks,
                         const VisionParams& prm, RowSelector&& rows_for, EventLog* log = nullptr) {
  MsckfResult res;
  const StateLayout L = StateLayout::of(x);
  StackedRows all{MatX(0, L.dim()), VecX(0), MatX()};
  const double var = prm.sigma * prm.sigma;
  for (const FeatureTrack* t : tracks) {
    ++res.features;
    const auto used = rows_for(*t);
    if (used.empty()) continue;
    const auto tri = triangulate(t->observations, x, prm);
    if (!tri.ok()) {
      ++res.rejected;
      continue;
    }
    const auto raw = feature_rows(x, L, prm.rig, tri.position, used);
    if (!raw) {
      ++res.rejected;
      continue;
    }
    const auto proj = nullspace_project(*raw);
    if (!proj) continue;
    const int m = proj->rows();
    const double gamma2 = mahalanobis(P, proj->H, proj->r, var * MatX::Identity(m, m));
    if (gamma2 > prm.chi2_scale * chi2_95(m)) {
      ++res.gated;
      log_event(log, x.timestamp, "msckf_gated", "feature=" + std::to_string(t->id));
      continue;
    }
    ++res.accepted;
    append_rows(all, *proj);
  }
  if (all.rows() == 0) return res;
  compress_rows(all.H, all.r);
  res.rows = all.rows();
  kalman_update(x, P, all.H, all.r, var * MatX::Identity(all.rows(), all.rows()));
  return res;
}

inline MsckfResult msckf_update(NavState& x, MatX& P, const std::vector<const FeatureTrack*>& tracks,
                                const VisionParams& prm, EventLog* log = nullptr) {
  return msckf_update(x, P, tracks, prm, [&](const FeatureTrack& t) {
    std::vector<FeatureObservation> v;
    for (const auto& o : t.observations)
      if (x.clones.count(o.frame) && (o.cam == kLeftCamera || prm.rig.stereo)) v.push_back(o);
    return v;
  }, log);
}

struct SlamResult {
  int updated = 0;
  int gated = 0;
  std::vector<FeatureId> to_drop;
};

/// Direct EKF update of in-state landmarks observed in `frame`; per-landmark gating.
inline SlamResult slam_update(NavState& x, MatX& P, FrameId frame,
                              const std::map<FeatureId, std::vector<FeatureObservation>>& obs,
                              std::map<FeatureId, int>& fail_count, const VisionParams& prm,
                              EventLog* log = nullptr) {
  SlamResult res;
  const StateLayout L = StateLayout::of(x);
  const double var = prm.sigma * prm.sigma;
  StackedRows all{MatX(0, L.dim()), VecX(0), MatX()};
  for (const auto& [id, lm] : x.landmarks) {
    auto it = obs.find(id);
    if (it == obs.end()) {
      res.to_drop.push_back(id);  // lost
      continue;
    }
    auto rows = feature_rows(x, L, prm.rig, lm.position, it->second, lm.anchor_frame);
    bool pass = false;
    if (rows) {
      rows->H.middleCols(L.landmark(id), 3) += rows->H_f;
      const int m = rows->rows();
      pass = mahalanobis(P, rows->H, rows->r, var * MatX::Identity(m, m)) <= prm.chi2_scale * chi2_95(m);
    }
    if (!pass) {
      ++res.gated;
      log_event(log, x.timestamp, "slam_gated", "feature=" + std::to_string(id));
      if (++fail_count[id] >= prm.k_fail) res.to_drop.push_back(id);
      continue;
    }
    fail_count[id] = 0;
    ++res.updated;
    append_rows(all, *rows);
  }
  (void)frame;
  if (all.rows() > 0) {
    compress_rows(all.H, all.r);
    kalman_update(x, P, all.H, all.r, var * MatX::Identity(all.rows(), all.rows()));
  }
  return res;
}

/// Promotes a track to an in-state landmark anchored at `anchor` by delayed
/// initialization. Returns false if triangulation or the gate fails.
inline bool initialize_landmark(NavState& x, MatX& P, const FeatureTrack& t, FrameId anchor,
                                const VisionParams& prm) {
  const auto tri = triangulate(t.observations, x, prm);
  if (!tri.ok()) return false;
  std::vector<FeatureObservation> used;
  for (const auto& o : t.observations)
    if (x.clones.count(o.frame) && (o.cam == kLeftCamera || prm.rig.stereo)) used.push_back(o);
  const StateLayout L = StateLayout::of(x);
  const auto rows = feature_rows(x, L, prm.rig, tri.position, used, anchor);
  if (!rows || rows->rows() < 4) return false;
  const double var = prm.sigma * prm.sigma;
  const auto proj = nullspace_project(*rows);
  if (!proj) return false;
  const int m = proj->rows();
  if (mahalanobis(P, proj->H, proj->r, var * MatX::Identity(m, m)) > prm.chi2_scale * chi2_95(m)) return false;
  return delayed_init_from_rows(x, P, LandmarkBlock{t.id, Landmark{tri.position, anchor}}, rows->H, rows->H_f,
                                rows->r, var * MatX::Identity(rows->rows(), rows->rows()));
}

// ---------------------------------------------------------------------------
// Per-image driver

struct ImageReport {
  MsckfResult lost;
  MsckfResult marginal;
  int slam_updated = 0;
  int slam_gated = 0;
  int slam_dropped = 0;
  int promoted = 0;
  std::optional<std::pair<FrameId, FrameId>> marginalized;
};

/// Feature database plus key-frame policy state.
class VisualUpdater {
 public:
  explicit VisualUpdater(VisionParams prm = {}) : prm_(std::move(prm)) {}

  const VisionParams& params() const { return prm_; }
  const std::map<FeatureId, FeatureTrack>& tracks() const { return tracks_; }
  long image_count() const { return image_count_; }

  /// Runs the visual update sequence for the image whose clone `frame` has
  /// already been augmented.
  ImageReport process_image(NavState& x, MatX& P, FrameId frame, const std::vector<ImageMeasurement>& meas,
                            EventLog* log = nullptr) {
    if (!x.clones.count(frame) || x.clones.rbegin()->first != frame) {
      throw std::invalid_argument("process_image: current frame must be the newest clone");
    }
    ImageReport rep;
    const double t = x.clones.at(frame).timestamp;
    ++image_count_;

    // Sort measurements into SLAM observations and MSCKF tracks (new ids start tracks).
    std::map<FeatureId, std::vector<FeatureObservation>> slam_obs;
    std::set<FeatureId> seen;
    for (const auto& m : meas) {
      if (m.cam == kRightCamera && !prm_.rig.stereo) continue;
      const FeatureObservation ob{frame, m.cam, m.uv};
      if (x.landmarks.count(m.id)) {
        slam_obs[m.id].push_back(ob);
        continue;
      }
      auto& tr = tracks_[m.id];
      tr.id = m.id;
      if (!seen.count(m.id)) ++tr.frames_seen;
      tr.observations.push_back(ob);
      seen.insert(m.id);
    }
    for (auto& [id, v] : slam_obs) {
      std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.cam < b.cam; });
    }

    // Lost tracks: update with every retained observation, then forget them.
    std::vector<const FeatureTrack*> lost;
    for (const auto& [id, tr] : tracks_)
      if (!seen.count(id)) lost.push_back(&tr);
    if (!lost.empty()) {
      rep.lost = msckf_update(x, P, lost, prm_, log);
      std::vector<FeatureId> ids;
      for (const auto* tr : lost) ids.push_back(tr->id);
      for (FeatureId id : ids) tracks_.erase(id);
    }

    // Marginalization pair and the features observed in it.
    rep.marginalized = select_marginal_poses(image_count_, prm_.max_clones, x.clones);
    if (rep.marginalized) {
      const auto [fa, fb] = *rep.marginalized;
      auto in_pair = [&](const FeatureObservation& o) { return o.frame == fa || o.frame == fb; };
      std::vector<const FeatureTrack*> involved;
      for (const auto& [id, tr] : tracks_)
        if (std::any_of(tr.observations.begin(), tr.observations.end(), in_pair)) involved.push_back(&tr);
      rep.marginal = msckf_update(x, P, involved, prm_, [&](const FeatureTrack& tr) {
        std::vector<FeatureObservation> v;
        for (const auto& o : tr.observations)
          if (in_pair(o) && (o.cam == kLeftCamera || prm_.rig.stereo)) v.push_back(o);
        return v;
      }, log);
      for (auto& [id, tr] : tracks_) {
        std::erase_if(tr.observations, in_pair);
      }
    }

    // SLAM landmarks, then promotion of long tracks.
    const auto slam = slam_update(x, P, frame, slam_obs, fail_count_, prm_, log);
    rep.slam_updated = slam.updated;
    rep.slam_gated = slam.gated;
    if (!slam.to_drop.empty()) {
      std::vector<BlockKey> keys;
      for (FeatureId id : slam.to_drop) {
        keys.push_back(BlockKey::landmark(id));
        fail_count_.erase(id);
        log_event(log, t, "slam_dropped", "feature=" + std::to_string(id));
      }
      marginalize(x, P, keys);
      rep.slam_dropped = static_cast<int>(keys.size());
    }
    promote(x, P, frame, seen, rep, log);

    // Anchor changes, then remove the pair.
    if (rep.marginalized) {
      const auto [fa, fb] = *rep.marginalized;
      std::vector<FeatureId> moved;
      for (const auto& [id, lm] : x.landmarks)
        if (lm.anchor_frame == fa || lm.anchor_frame == fb) moved.push_back(id);
      if (!moved.empty()) change_anchor(x, P, moved, frame);
      marginalize(x, P, {BlockKey::clone(fa), BlockKey::clone(fb)});
      log_event(log, t, "marginalize", "frames=" + std::to_string(fa) + ";" + std::to_string(fb));
    }
    return rep;
  }

 private:
  void promote(NavState& x, MatX& P, FrameId frame, const std::set<FeatureId>& seen, ImageReport& rep,
               EventLog* log) {
    int slots = prm_.max_slam - static_cast<int>(x.landmarks.size());
    if (slots <= 0) return;
    std::vector<const FeatureTrack*> cand;
    for (const auto& [id, tr] : tracks_)
      if (seen.count(id) && tr.frames_seen >= prm_.promote_after) cand.push_back(&tr);
    std::stable_sort(cand.begin(), cand.end(),
                     [](const auto* a, const auto* b) { return a->frames_seen > b->frames_seen; });
    std::vector<FeatureId> done;
    for (const auto* tr : cand) {
      if (slots <= 0) break;
      if (initialize_landmark(x, P, *tr, frame, prm_)) {
        --slots;
        ++rep.promoted;
        done.push_back(tr->id);
        fail_count_[tr->id] = 0;
        log_event(log, x.timestamp, "slam_init", "feature=" + std::to_string(tr->id));
      }
    }
    for (FeatureId id : done) tracks_.erase(id);
  }

  VisionParams prm_;
  std::map<FeatureId, FeatureTrack> tracks_;
  std::map<FeatureId, int> fail_count_;
  long image_count_ = 0;
};

}  // namespace ingvio
