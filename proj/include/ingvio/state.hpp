#pragma once

// Filter state, its right-invariant error parameterization, covariance layout
// bookkeeping and the generic update primitives shared by every sensor.

#include "ingvio/errors.hpp"
#include "ingvio/geometry.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <boost/math/distributions/chi_squared.hpp>

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace ingvio {

using FrameId = std::int64_t;
using FeatureId = std::int64_t;

enum class Constellation : int { GPS = 0, BDS = 1, GAL = 2, GLO = 3 };
constexpr int kNumConstellations = 4;

inline const char* to_string(Constellation c) {
  switch (c) {
    case Constellation::GPS: return "GPS";
    case Constellation::BDS: return "BDS";
    case Constellation::GAL: return "GAL";
    case Constellation::GLO: return "GLO";
  }
  return "?";
}

/// Cloned camera pose (R_cm^w, ^w p_cm).
struct Clone {
  Pose pose;
  double timestamp = 0.0;
};

/// Landmark in the world frame; its error is expressed through the rotation
/// error of the anchor clone.
struct Landmark {
  Vec3 position = Vec3::Zero();
  FrameId anchor_frame = 0;
};

struct NavState {
  double timestamp = 0.0;
  ExtendedPose imu;
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  Pose extrinsics;  // camera in IMU frame (R_c^i, ^i p_c)
  bool extrinsics_in_state = true;
  std::map<FrameId, Clone> clones;
  std::map<FeatureId, Landmark> landmarks;
  std::map<Constellation, double> clock_biases;  // c * t_alpha (m)
  std::optional<double> clock_drift;             // c * f (m/s)
};

// ---------------------------------------------------------------------------
// Layout

enum class BlockKind : int { Imu = 0, Extrinsics = 1, Clone = 2, Landmark = 3, ClockBias = 4, ClockDrift = 5 };

struct BlockKey {
  BlockKind kind = BlockKind::Imu;
  std::int64_t id = 0;
  auto operator<=>(const BlockKey&) const = default;

  static BlockKey imu() { return {BlockKind::Imu, 0}; }
  static BlockKey extrinsics() { return {BlockKind::Extrinsics, 0}; }
  static BlockKey clone(FrameId id) { return {BlockKind::Clone, id}; }
  static BlockKey landmark(FeatureId id) { return {BlockKind::Landmark, id}; }
  static BlockKey clock_bias(Constellation c) { return {BlockKind::ClockBias, static_cast<int>(c)}; }
  static BlockKey clock_drift() { return {BlockKind::ClockDrift, 0}; }
};

struct Block {
  BlockKey key;
  int offset = 0;
  int dim = 0;
};

/// Ordered error coordinates: IMU (dtheta, dp, dv, dbg, dba), extrinsics (dtheta, dp),
/// clones by frame id, landmarks by feature id, clock biases by constellation, drift.
class StateLayout {
 public:
  static constexpr int kImuDim = 15;
  static constexpr int kRot = 0, kPos = 3, kVel = 6, kBg = 9, kBa = 12;

  static StateLayout of(const NavState& x) {
    StateLayout L;
    L.push(BlockKey::imu(), kImuDim);
    if (x.extrinsics_in_state) L.push(BlockKey::extrinsics(), 6);
    for (const auto& [id, c] : x.clones) L.push(BlockKey::clone(id), 6);
    for (const auto& [id, f] : x.landmarks) L.push(BlockKey::landmark(id), 3);
    for (const auto& [c, b] : x.clock_biases) L.push(BlockKey::clock_bias(c), 1);
    if (x.clock_drift) L.push(BlockKey::clock_drift(), 1);
    return L;
  }

  int dim() const { return dim_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  bool contains(const BlockKey& k) const { return index_.count(k) != 0; }

  int offset(const BlockKey& k) const {
    auto it = index_.find(k);
    if (it == index_.end()) throw std::out_of_range("StateLayout: block not present");
    return blocks_[it->second].offset;
  }
  int extrinsics() const { return contains(BlockKey::extrinsics()) ? offset(BlockKey::extrinsics()) : -1; }
  int clone(FrameId id) const { return offset(BlockKey::clone(id)); }
  int landmark(FeatureId id) const { return offset(BlockKey::landmark(id)); }
  int clock_bias(Constellation c) const { return offset(BlockKey::clock_bias(c)); }
  int clock_drift() const { return offset(BlockKey::clock_drift()); }

  bool operator==(const StateLayout& o) const {
    if (blocks_.size() != o.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (blocks_[i].key != o.blocks_[i].key || blocks_[i].dim != o.blocks_[i].dim) return false;
    }
    return true;
  }

 private:
  void push(BlockKey k, int d) {
    index_[k] = blocks_.size();
    blocks_.push_back({k, dim_, d});
    dim_ += d;
  }

  std::vector<Block> blocks_;
  std::map<BlockKey, std::size_t> index_;
  int dim_ = 0;
};

using Covariance = MatX;

/// Copies every block present in both layouts; blocks only in `to` are zero.
inline MatX remap_covariance(const MatX& P, const StateLayout& from, const StateLayout& to) {
  MatX out = MatX::Zero(to.dim(), to.dim());
  std::vector<std::pair<const Block*, int>> shared;
  for (const auto& b : to.blocks()) {
    if (from.contains(b.key)) shared.emplace_back(&b, from.offset(b.key));
  }
  for (const auto& [bi, fi] : shared) {
    for (const auto& [bj, fj] : shared) {
      out.block(bi->offset, bj->offset, bi->dim, bj->dim) = P.block(fi, fj, bi->dim, bj->dim);
    }
  }
  return out;
}

/// Re-expresses Jacobian columns in another layout (missing blocks must be zero).
inline MatX remap_columns(const MatX& H, const StateLayout& from, const StateLayout& to) {
  MatX out = MatX::Zero(H.rows(), to.dim());
  for (const auto& b : from.blocks()) {
    if (to.contains(b.key)) {
      out.middleCols(to.offset(b.key), b.dim) = H.middleCols(b.offset, b.dim);
    }
  }
  return out;
}

inline void symmetrize(MatX& P) { P = 0.5 * (P + P.transpose()).eval(); }

/// True when P is symmetric and its eigenvalues are >= -1e-10 * trace.
inline bool is_valid_covariance(const MatX& P) {
  if (P.rows() != P.cols()) return false;
  if (P.size() == 0) return true;
  const double scale = std::max(P.cwiseAbs().maxCoeff(), 1e-300);
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (P + P.transpose()));
  return es.eigenvalues().minCoeff() >= -1e-10 * std::abs(P.trace());
}

// ---------------------------------------------------------------------------
// Error parameterization

namespace detail {

// (R, p...) <- (Gamma0(dtheta) R, Gamma0(dtheta) p + Gamma1(dtheta) dp)
struct LeftPerturbation {
  Mat3 g0;
  Mat3 g1;
  explicit LeftPerturbation(const Vec3& dtheta) : g0(gamma(0, dtheta)), g1(gamma(1, dtheta)) {}
  Vec3 apply(const Vec3& p, const Vec3& dp) const { return g0 * p + g1 * dp; }
};

inline Vec3 translation_error(const Vec3& p1, const Vec3& p0, const Vec3& dtheta) {
  return gamma(1, dtheta).lu().solve(p1 - gamma(0, dtheta) * p0);
}

}  // namespace detail

/// Applies the right-invariant error `delta` (laid out by StateLayout::of(x)).
inline NavState boxplus(const NavState& x, const VecX& delta) {
  const StateLayout L = StateLayout::of(x);
  if (delta.size() != L.dim()) throw std::invalid_argument("boxplus: error dimension mismatch");
  NavState out = x;

  const Vec3 dth = delta.segment<3>(StateLayout::kRot);
  const detail::LeftPerturbation imu(dth);
  out.imu.rotation = imu.g0 * x.imu.rotation;
  out.imu.position = imu.apply(x.imu.position, delta.segment<3>(StateLayout::kPos));
  out.imu.velocity = imu.apply(x.imu.velocity, delta.segment<3>(StateLayout::kVel));
  out.gyro_bias += delta.segment<3>(StateLayout::kBg);
  out.accel_bias += delta.segment<3>(StateLayout::kBa);

  if (x.extrinsics_in_state) {
    const int o = L.extrinsics();
    const detail::LeftPerturbation e(delta.segment<3>(o));
    out.extrinsics.rotation = e.g0 * x.extrinsics.rotation;
    out.extrinsics.translation = e.apply(x.extrinsics.translation, delta.segment<3>(o + 3));
  }

  std::map<FrameId, detail::LeftPerturbation> clone_pert;
  for (auto& [id, c] : out.clones) {
    const int o = L.clone(id);
    auto [it, ok] = clone_pert.emplace(id, detail::LeftPerturbation(delta.segment<3>(o)));
    const auto& g = it->second;
    c.pose.rotation = g.g0 * c.pose.rotation;
    c.pose.translation = g.apply(c.pose.translation, delta.segment<3>(o + 3));
  }
  for (auto& [id, f] : out.landmarks) {
    auto it = clone_pert.find(f.anchor_frame);
    if (it == clone_pert.end()) throw std::logic_error("boxplus: landmark anchor missing");
    f.position = it->second.apply(f.position, delta.segment<3>(L.landmark(id)));
  }
  for (auto& [c, b] : out.clock_biases) b += delta(L.clock_bias(c));
  if (out.clock_drift) *out.clock_drift += delta(L.clock_drift());
  return out;
}

/// Inverse of boxplus: boxplus(x0, boxminus(x1, x0)) == x1.
inline VecX boxminus(const NavState& x1, const NavState& x0) {
  const StateLayout L = StateLayout::of(x0);
  if (!(StateLayout::of(x1) == L)) throw std::invalid_argument("boxminus: layout mismatch");
  VecX d = VecX::Zero(L.dim());

  const Vec3 dth = so3_log(x1.imu.rotation * x0.imu.rotation.transpose());
  d.segment<3>(StateLayout::kRot) = dth;
  d.segment<3>(StateLayout::kPos) = detail::translation_error(x1.imu.position, x0.imu.position, dth);
  d.segment<3>(StateLayout::kVel) = detail::translation_error(x1.imu.velocity, x0.imu.velocity, dth);
  d.segment<3>(StateLayout::kBg) = x1.gyro_bias - x0.gyro_bias;
  d.segment<3>(StateLayout::kBa) = x1.accel_bias - x0.accel_bias;

  if (x0.extrinsics_in_state) {
    const int o = L.extrinsics();
    const Vec3 e = so3_log(x1.extrinsics.rotation * x0.extrinsics.rotation.transpose());
    d.segment<3>(o) = e;
    d.segment<3>(o + 3) =
        detail::translation_error(x1.extrinsics.translation, x0.extrinsics.translation, e);
  }
  for (const auto& [id, c0] : x0.clones) {
    const auto& c1 = x1.clones.at(id);
    const int o = L.clone(id);
    const Vec3 e = so3_log(c1.pose.rotation * c0.pose.rotation.transpose());
    d.segment<3>(o) = e;
    d.segment<3>(o + 3) = detail::translation_error(c1.pose.translation, c0.pose.translation, e);
  }
  for (const auto& [id, f0] : x0.landmarks) {
    const auto& f1 = x1.landmarks.at(id);
    if (f1.anchor_frame != f0.anchor_frame) throw std::invalid_argument("boxminus: anchor mismatch");
    const Vec3 e = d.segment<3>(L.clone(f0.anchor_frame));
    d.segment<3>(L.landmark(id)) = detail::translation_error(f1.position, f0.position, e);
  }
  for (const auto& [c, b] : x0.clock_biases) d(L.clock_bias(c)) = x1.clock_biases.at(c) - b;
  if (x0.clock_drift) d(L.clock_drift()) = *x1.clock_drift - *x0.clock_drift;
  return d;
}

// ---------------------------------------------------------------------------
// Updates

/// 95% chi-square quantiles, cached.
inline double chi2_95(int dof) {
  static const std::vector<double> table = [] {
    std::vector<double> t(1024, 0.0);
    for (int i = 1; i < 1024; ++i) {
      t[i] = boost::math::quantile(boost::math::chi_squared(i), 0.95);
    }
    return t;
  }();
  if (dof <= 0) return 0.0;
  if (dof < static_cast<int>(table.size())) return table[dof];
  return boost::math::quantile(boost::math::chi_squared(dof), 0.95);
}

namespace detail {

// Indices of columns of H that hold a nonzero entry; sensor rows touch few blocks.
inline std::vector<int> active_columns(const MatX& H) {
  std::vector<int> idx;
  for (int j = 0; j < H.cols(); ++j) {
    if ((H.col(j).array() != 0.0).any()) idx.push_back(j);
  }
  return idx;
}

// P H^T and H P H^T using only the active columns of H.
inline std::pair<MatX, MatX> innovation_terms(const MatX& P, const MatX& H) {
  const auto idx = active_columns(H);
  const MatX Hc = H(Eigen::all, idx);
  MatX PHt = P(Eigen::all, idx) * Hc.transpose();
  MatX HPHt = Hc * PHt(idx, Eigen::all);
  return {std::move(PHt), std::move(HPHt)};
}

}  // namespace detail

/// Innovation test statistic r^T (H P H^T + R)^{-1} r.
inline double mahalanobis(const MatX& P, const MatX& H, const VecX& r, const MatX& R) {
  const MatX S = detail::innovation_terms(P, H).second + R;
  Eigen::LDLT<MatX> ldlt(S);
  return r.dot(ldlt.solve(r));
}

/// EKF update on the invariant error, Joseph-form covariance.
inline void kalman_update(NavState& x, MatX& P, const MatX& H, const VecX& r, const MatX& R) {
  if (H.rows() == 0) return;
  if (H.cols() != P.rows() || r.size() != H.rows() || R.rows() != H.rows()) {
    throw std::invalid_argument("kalman_update: dimension mismatch");
  }
  auto [PHt, S] = detail::innovation_terms(P, H);
  S += R;
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::LLT<MatX> llt(S);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("kalman_update: innovation covariance not positive definite");
  }
  const MatX K = llt.solve(PHt.transpose()).transpose();
  // (I - KH) P (I - KH)^T + K R K^T expanded to avoid n^3 products.
  const MatX KHP = K * PHt.transpose();
  const MatX KSKt = K * (S * K.transpose());
  P = P - KHP - KHP.transpose() + KSKt;
  symmetrize(P);
  x = boxplus(x, K * r);
}

// ---------------------------------------------------------------------------
// Structural operations

/// Jacobian of a new clone's (dtheta, dp) with respect to the full error of x.
inline Eigen::Matrix<double, 6, Eigen::Dynamic> clone_jacobian(const NavState& x) {
  const StateLayout L = StateLayout::of(x);
  Eigen::Matrix<double, 6, Eigen::Dynamic> J = Eigen::Matrix<double, 6, Eigen::Dynamic>::Zero(6, L.dim());
  const Mat3& Ri = x.imu.rotation;
  J.block<3, 3>(0, StateLayout::kRot).setIdentity();
  J.block<3, 3>(3, StateLayout::kPos).setIdentity();
  if (x.extrinsics_in_state) {
    const int e = L.extrinsics();
    J.block<3, 3>(0, e) = Ri;
    J.block<3, 3>(3, e) = skew(x.imu.position) * Ri;
    J.block<3, 3>(3, e + 3) = Ri;
  }
  return J;
}

inline Pose camera_pose(const NavState& x) { return x.imu.pose() * x.extrinsics; }

/// Appends the current camera pose as a clone.
inline void augment_clone(NavState& x, MatX& P, FrameId frame_id, double timestamp) {
  if (x.clones.count(frame_id)) throw std::invalid_argument("augment_clone: duplicate frame id");
  if (!x.clones.empty()) {
    const auto& [last_id, last] = *x.clones.rbegin();
    if (frame_id < last_id || timestamp <= last.timestamp) {
      throw std::invalid_argument("augment_clone: frame is not newer than existing clones");
    }
  }
  const StateLayout old_layout = StateLayout::of(x);
  const auto J = clone_jacobian(x);
  const MatX JP = J * P;

  x.clones[frame_id] = Clone{camera_pose(x), timestamp};
  const StateLayout new_layout = StateLayout::of(x);
  MatX Pn = remap_covariance(P, old_layout, new_layout);
  const int o = new_layout.clone(frame_id);
  const MatX JPn = remap_columns(JP, old_layout, new_layout);
  Pn.middleRows(o, 6) = JPn;
  Pn.middleCols(o, 6) = JPn.transpose();
  Pn.block<6, 6>(o, o) = JP * J.transpose();
  P = std::move(Pn);
  symmetrize(P);
}

/// Removes blocks from the state; remaining covariance entries are copied verbatim.
inline void marginalize(NavState& x, MatX& P, const std::vector<BlockKey>& keys) {
  const StateLayout old_layout = StateLayout::of(x);
  for (const auto& k : keys) {
    if (!old_layout.contains(k) || k.kind == BlockKind::Imu) {
      throw std::invalid_argument("marginalize: block not removable");
    }
    if (k.kind == BlockKind::Clone) {
      for (const auto& [fid, f] : x.landmarks) {
        const bool removed = std::find(keys.begin(), keys.end(), BlockKey::landmark(fid)) != keys.end();
        if (f.anchor_frame == k.id && !removed) {
          throw std::logic_error("marginalize: landmark still anchored to a removed clone");
        }
      }
    }
  }
  for (const auto& k : keys) {
    switch (k.kind) {
      case BlockKind::Extrinsics: x.extrinsics_in_state = false; break;
      case BlockKind::Clone: x.clones.erase(k.id); break;
      case BlockKind::Landmark: x.landmarks.erase(k.id); break;
      case BlockKind::ClockBias: x.clock_biases.erase(static_cast<Constellation>(k.id)); break;
      case BlockKind::ClockDrift: x.clock_drift.reset(); break;
      case BlockKind::Imu: break;
    }
  }
  P = remap_covariance(P, old_layout, StateLayout::of(x));
}

/// Block inserted by delayed initialization.
struct LandmarkBlock {
  FeatureId id = 0;
  Landmark value;
};
struct ClockBlock {
  std::map<Constellation, double> biases;
  std::optional<double> drift;
};
using NewBlock = std::variant<LandmarkBlock, ClockBlock>;

namespace detail {

inline int key_dim(const BlockKey& k) {
  switch (k.kind) {
    case BlockKind::Imu: return StateLayout::kImuDim;
    case BlockKind::Extrinsics: return 6;
    case BlockKind::Clone: return 6;
    case BlockKind::Landmark: return 3;
    default: return 1;
  }
}

inline int block_dim(const NewBlock& b) {
  if (const auto* c = std::get_if<ClockBlock>(&b)) {
    return static_cast<int>(c->biases.size()) + (c->drift ? 1 : 0);
  }
  return 3;
}

// Inserts the block and returns its keys in the order of its error coordinates.
inline std::vector<BlockKey> insert_block(NavState& x, const NewBlock& b) {
  std::vector<BlockKey> keys;
  if (const auto* lm = std::get_if<LandmarkBlock>(&b)) {
    if (x.landmarks.count(lm->id)) throw std::invalid_argument("delayed_init: landmark exists");
    if (!x.clones.count(lm->value.anchor_frame)) throw std::invalid_argument("delayed_init: anchor missing");
    x.landmarks[lm->id] = lm->value;
    keys.push_back(BlockKey::landmark(lm->id));
  } else {
    const auto& c = std::get<ClockBlock>(b);
    for (const auto& [con, v] : c.biases) {
      if (x.clock_biases.count(con)) throw std::invalid_argument("delayed_init: clock state exists");
      x.clock_biases[con] = v;
      keys.push_back(BlockKey::clock_bias(con));
    }
    if (c.drift) {
      if (x.clock_drift) throw std::invalid_argument("delayed_init: drift state exists");
      x.clock_drift = *c.drift;
      keys.push_back(BlockKey::clock_drift());
    }
  }
  return keys;
}

}  // namespace detail

/// Adds a new block whose error is fully determined by r = H_x dx + H_new dnew + n
/// (H_new square). Returns false and leaves (x, P) untouched if H_new is singular.
inline bool delayed_init(NavState& x, MatX& P, const NewBlock& block, const MatX& H_x,
                         const MatX& H_new, const VecX& r, const MatX& R) {
  const int k = detail::block_dim(block);
  if (H_new.rows() != k || H_new.cols() != k || H_x.rows() != k || r.size() != k ||
      H_x.cols() != P.rows()) {
    throw std::invalid_argument("delayed_init: dimension mismatch");
  }
  Eigen::JacobiSVD<MatX> svd(H_new);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 1e-12 * sv(0)) return false;

  const MatX Hinv = H_new.inverse();
  const MatX HxP = H_x * P;
  const MatX cross = -Hinv * HxP;  // cov(dnew, dx)
  MatX Pnn = Hinv * (HxP * H_x.transpose() + R) * Hinv.transpose();
  Pnn = 0.5 * (Pnn + Pnn.transpose()).eval();
  const VecX dnew = Hinv * r;

  const StateLayout old_layout = StateLayout::of(x);
  const auto keys = detail::insert_block(x, block);
  const StateLayout new_layout = StateLayout::of(x);
  MatX Pn = remap_covariance(P, old_layout, new_layout);
  const MatX cross_n = remap_columns(cross, old_layout, new_layout);

  std::vector<int> off;
  for (const auto& key : keys) off.push_back(new_layout.offset(key));
  VecX delta = VecX::Zero(new_layout.dim());
  int row = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const int d = detail::key_dim(keys[i]);
    Pn.middleRows(off[i], d) += cross_n.middleRows(row, d);
    Pn.middleCols(off[i], d) += cross_n.middleRows(row, d).transpose();
    int col = 0;
    for (std::size_t j = 0; j < keys.size(); ++j) {
      const int dj = detail::key_dim(keys[j]);
      Pn.block(off[i], off[j], d, dj) = Pnn.block(row, col, d, dj);
      col += dj;
    }
    delta.segment(off[i], d) = dnew.segment(row, d);
    row += d;
  }
  P = std::move(Pn);
  symmetrize(P);
  // Only the new block moves; its anchor rotation error is zero in delta.
  x = boxplus(x, delta);
  return true;
}

/// Delayed initialization from a tall system: rows are whitened, split with a QR
/// of H_new, the square part initializes the block and the rest updates the state.
inline bool delayed_init_from_rows(NavState& x, MatX& P, const NewBlock& block, const MatX& H_x,
                                   const MatX& H_new, const VecX& r, const MatX& R) {
  const int k = detail::block_dim(block);
  const int m = static_cast<int>(H_new.rows());
  if (m < k) return false;
  Eigen::LLT<MatX> llt(R);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("delayed_init: noise not SPD");
  const MatX Lm = llt.matrixL();
  MatX Hx = Lm.triangularView<Eigen::Lower>().solve(H_x);
  MatX Hn = Lm.triangularView<Eigen::Lower>().solve(H_new);
  VecX rr = Lm.triangularView<Eigen::Lower>().solve(r);

  Eigen::HouseholderQR<MatX> qr(Hn);
  const MatX Qt = qr.householderQ().transpose();
  Hx = Qt * Hx;
  rr = Qt * rr;
  const MatX Rn = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();

  const StateLayout before = StateLayout::of(x);
  if (!delayed_init(x, P, block, Hx.topRows(k), Rn, rr.head(k), MatX::Identity(k, k))) return false;
  if (m > k) {
    const MatX H_rest = remap_columns(Hx.bottomRows(m - k), before, StateLayout::of(x));
    kalman_update(x, P, H_rest, rr.tail(m - k), MatX::Identity(m - k, m - k));
  }
  return true;
}

}  // namespace ingvio
