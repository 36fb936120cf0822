#pragma once

// Raw pseudorange / Doppler models, single differences, SPP, the ENU-to-world
// yaw alignment and the filter update with clock-state lifecycle.

#include "ingvio/events.hpp"
#include "ingvio/state.hpp"

#include <Eigen/SVD>

#include <cstdio>
#include <set>

namespace ingvio {

struct SatelliteObservation {
  Constellation constellation = Constellation::GPS;
  int sat_id = 0;
  Vec3 sat_position = Vec3::Zero();  // ECEF, m
  Vec3 sat_velocity = Vec3::Zero();  // ECEF, m/s
  double pseudorange = 0.0;          // m
  double range_rate = 0.0;           // m/s
  double sat_clock = 0.0;            // c * dt_sat, m
  double sat_clock_drift = 0.0;      // c * df_sat, m/s
  double delay = 0.0;                // modeled atmospheric delay, m
};

struct GnssEpoch {
  double t = 0.0;
  std::vector<SatelliteObservation> sats;
};

/// World-to-ECEF transform; world is a yaw-rotated, shifted ENU frame.
struct Alignment {
  Pose T_w_ecef;
  GeodeticPoint origin;
  double yaw = 0.0;  // rotation of world about ENU up
  bool frozen = true;

  Vec3 to_ecef(const Vec3& pw) const { return T_w_ecef * pw; }
  const Mat3& R() const { return T_w_ecef.rotation; }
  /// World-frame unit vector of local up at the origin.
  Vec3 up_ecef() const { return T_w_ecef.rotation.col(2); }
};

inline Alignment make_alignment(const GeodeticPoint& origin, double yaw, const Vec3& t_enu) {
  Alignment a;
  a.origin = origin;
  a.yaw = yaw;
  const Mat3 Renu = enu_rotation(origin);
  a.T_w_ecef = Pose{Renu * rot_z(yaw), Renu * t_enu + geodetic_to_ecef(origin)};
  return a;
}

struct GnssParams {
  double sigma_pseudorange = 1.0;  // m
  double sigma_range_rate = 0.1;   // m/s
  double elevation_mask = 10.0 * std::numbers::pi / 180.0;
  double chi2_scale = 1.0;
  bool use_doppler = true;
  int min_alignment_samples = 10;
  double min_alignment_span = 5.0;  // m, horizontal
};

/// Point on a sphere of radius `orbit_radius` seen from `receiver_ecef` at the
/// given azimuth (from north, clockwise) and elevation in the local ENU frame.
inline Vec3 place_satellite(const Vec3& receiver_ecef, double azimuth, double elev,
                            double orbit_radius = 26.6e6) {
  const Mat3 Renu = enu_rotation(ecef_to_geodetic(receiver_ecef));
  const Vec3 u = Renu * Vec3(std::sin(azimuth) * std::cos(elev), std::cos(azimuth) * std::cos(elev), std::sin(elev));
  const double b = receiver_ecef.dot(u);
  const double c = receiver_ecef.squaredNorm() - orbit_radius * orbit_radius;
  return receiver_ecef + (-b + std::sqrt(b * b - c)) * u;
}

// ---------------------------------------------------------------------------
// Measurement model

/// Unit vector receiver -> satellite in ECEF.
inline Vec3 line_of_sight(const Vec3& receiver_ecef, const SatelliteObservation& s) {
  return (s.sat_position - receiver_ecef).normalized();
}

inline double clock_bias_of(const NavState& x, Constellation c) {
  auto it = x.clock_biases.find(c);
  if (it == x.clock_biases.end()) throw std::invalid_argument("gnss: missing clock state for constellation");
  return it->second;
}

inline double predict_pseudorange(const NavState& x, const Alignment& a, const SatelliteObservation& s) {
  const Vec3 pe = a.to_ecef(x.imu.position);
  return (pe - s.sat_position).norm() + (clock_bias_of(x, s.constellation) - s.sat_clock) + s.delay;
}

inline double predict_range_rate(const NavState& x, const Alignment& a, const SatelliteObservation& s) {
  if (!x.clock_drift) throw std::invalid_argument("gnss: missing clock drift state");
  const Vec3 n = line_of_sight(a.to_ecef(x.imu.position), s);
  return -n.dot(a.R() * x.imu.velocity - s.sat_velocity) + (*x.clock_drift - s.sat_clock_drift);
}

/// Pseudorange and range-rate rows (2 x dim) with n frozen at the estimate.
inline MatX gnss_jacobians(const NavState& x, const StateLayout& L, const Alignment& a,
                           const SatelliteObservation& s) {
  MatX H = MatX::Zero(2, L.dim());
  const Vec3 n = line_of_sight(a.to_ecef(x.imu.position), s);
  const Eigen::RowVector3d nR = n.transpose() * a.R();
  H.block<1, 3>(0, StateLayout::kRot) = nR * skew(x.imu.position);
  H.block<1, 3>(0, StateLayout::kPos) = -nR;
  H(0, L.clock_bias(s.constellation)) = 1.0;
  H.block<1, 3>(1, StateLayout::kRot) = nR * skew(x.imu.velocity);
  H.block<1, 3>(1, StateLayout::kVel) = -nR;
  if (x.clock_drift) H(1, L.clock_drift()) = 1.0;
  return H;
}

// ---------------------------------------------------------------------------
// Single differences

/// Measured single difference with broadcast clocks and delays removed.
inline std::pair<double, double> single_difference(const SatelliteObservation& k, const SatelliteObservation& l) {
  if (k.constellation != l.constellation) throw std::invalid_argument("single_difference: constellation mismatch");
  const double rk = k.pseudorange + k.sat_clock - k.delay;
  const double rl = l.pseudorange + l.sat_clock - l.delay;
  const double dk = k.range_rate + k.sat_clock_drift;
  const double dl = l.range_rate + l.sat_clock_drift;
  return {rk - rl, dk - dl};
}

/// Predicted single difference; receiver clock terms do not appear.
inline std::pair<double, double> predict_single_difference(const Vec3& p_w, const Vec3& v_w, const Alignment& a,
                                                           const SatelliteObservation& k,
                                                           const SatelliteObservation& l) {
  if (k.constellation != l.constellation) throw std::invalid_argument("single_difference: constellation mismatch");
  const Vec3 pe = a.to_ecef(p_w);
  const Vec3 ve = a.R() * v_w;
  const double range = (pe - k.sat_position).norm() - (pe - l.sat_position).norm();
  const double rate = -line_of_sight(pe, k).dot(ve - k.sat_velocity) + line_of_sight(pe, l).dot(ve - l.sat_velocity);
  return {range, rate};
}

// ---------------------------------------------------------------------------
// Single point positioning

struct SppResult {
  bool ok = false;
  std::string reason;
  Vec3 position = Vec3::Zero();  // ECEF
  Vec3 velocity = Vec3::Zero();
  std::map<Constellation, double> clock_biases;
  double clock_drift = 0.0;
  bool has_velocity = false;
  double gdop = 0.0;
  int iterations = 0;
};

inline SppResult spp_solve(const std::vector<SatelliteObservation>& sats, double max_gdop = 20.0) {
  SppResult out;
  std::map<Constellation, int> col;
  for (const auto& s : sats) col.emplace(s.constellation, 0);
  int k = 0;
  for (auto& [c, i] : col) i = 3 + k++;
  const int nu = 3 + static_cast<int>(col.size());
  const int m = static_cast<int>(sats.size());
  if (m < nu || m < 4) {
    out.reason = "insufficient satellites";
    return out;
  }
  VecX xs = VecX::Zero(nu);
  MatX G(m, nu);
  VecX r(m);
  bool converged = false;
  for (int it = 0; it < 20; ++it) {
    G.setZero();
    for (int i = 0; i < m; ++i) {
      const auto& s = sats[i];
      const Vec3 d = s.sat_position - xs.head<3>();
      const double range = d.norm();
      G.block<1, 3>(i, 0) = -(d / range).transpose();
      G(i, col[s.constellation]) = 1.0;
      r(i) = s.pseudorange + s.sat_clock - s.delay - (range + xs(col[s.constellation]));
    }
    Eigen::ColPivHouseholderQR<MatX> qr(G);
    if (qr.rank() < nu) {
      out.reason = "GDOP too large (singular geometry)";
      out.gdop = std::numeric_limits<double>::infinity();
      return out;
    }
    const VecX dx = qr.solve(r);
    xs += dx;
    out.iterations = it + 1;
    if (dx.head<3>().norm() < 1e-4) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    out.reason = "divergence";
    return out;
  }
  const Eigen::JacobiSVD<MatX> svd(G);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 1e-12 * sv(0)) {
    out.reason = "GDOP too large";
    out.gdop = std::numeric_limits<double>::infinity();
    return out;
  }
  out.gdop = std::sqrt(sv.cwiseInverse().cwiseAbs2().sum());
  if (!(out.gdop <= max_gdop)) {
    out.reason = "GDOP too large";
    return out;
  }
  out.position = xs.head<3>();
  for (const auto& [c, i] : col) out.clock_biases[c] = xs(i);

  // Velocity and drift: rows [-n^T, 1].
  MatX Gv(m, 4);
  VecX y(m);
  for (int i = 0; i < m; ++i) {
    const auto& s = sats[i];
    const Vec3 n = line_of_sight(out.position, s);
    Gv.block<1, 3>(i, 0) = -n.transpose();
    Gv(i, 3) = 1.0;
    y(i) = s.range_rate + s.sat_clock_drift - n.dot(s.sat_velocity);
  }
  Eigen::ColPivHouseholderQR<MatX> qv(Gv);
  if (qv.rank() == 4) {
    const VecX sol = qv.solve(y);
    out.velocity = sol.head<3>();
    out.clock_drift = sol(3);
    out.has_velocity = true;
  }
  out.ok = true;
  return out;
}

// ---------------------------------------------------------------------------
// Alignment

/// Yaw plus translation between VIO world positions and SPP fixes. The ENU
/// origin is the first fix. Returns nullopt when there are too few samples or
/// the horizontal motion is too short to observe yaw.
inline std::optional<Alignment> initialize_alignment(const std::vector<Vec3>& p_world,
                                                     const std::vector<Vec3>& p_ecef, const GnssParams& prm = {}) {
  const std::size_t n = p_world.size();
  if (n != p_ecef.size()) throw std::invalid_argument("initialize_alignment: size mismatch");
  if (static_cast<int>(n) < prm.min_alignment_samples || n < 2) return std::nullopt;
  double span = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) span = std::max(span, (p_world[i] - p_world[j]).head<2>().norm());
  if (span < prm.min_alignment_span) return std::nullopt;

  const GeodeticPoint origin = ecef_to_geodetic(p_ecef.front());
  const Mat3 Renu = enu_rotation(origin);
  std::vector<Vec3> e(n);
  Vec3 mw = Vec3::Zero(), me = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    e[i] = Renu.transpose() * (p_ecef[i] - p_ecef.front());
    mw += p_world[i];
    me += e[i];
  }
  mw /= n;
  me /= n;
  double s_cos = 0.0, s_sin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d a = (p_world[i] - mw).head<2>();
    const Eigen::Vector2d b = (e[i] - me).head<2>();
    s_cos += a.dot(b);
    s_sin += a.x() * b.y() - a.y() * b.x();
  }
  const double yaw = std::atan2(s_sin, s_cos);
  const Vec3 t = me - rot_z(yaw) * mw;
  return make_alignment(origin, yaw, t);
}

// ---------------------------------------------------------------------------
// Update

inline double elevation(const Alignment& a, const Vec3& receiver_ecef, const SatelliteObservation& s) {
  return std::asin(std::clamp(line_of_sight(receiver_ecef, s).dot(a.up_ecef()), -1.0, 1.0));
}

/// Noise variances of the pseudorange and range-rate rows of one satellite.
inline std::pair<double, double> gnss_variances(double el, const GnssParams& prm) {
  const double s = std::sin(std::max(el, prm.elevation_mask));
  return {prm.sigma_pseudorange * prm.sigma_pseudorange / (s * s),
          prm.sigma_range_rate * prm.sigma_range_rate / (s * s)};
}

/// ECEF covariance of an (unweighted) SPP fix under the elevation-weighted noise model.
inline Mat3 spp_position_covariance(const std::vector<SatelliteObservation>& sats, const SppResult& spp,
                                    const GnssParams& prm) {
  std::map<Constellation, int> col;
  for (const auto& s : sats) col.emplace(s.constellation, 0);
  int k = 3;
  for (auto& [c, i] : col) i = k++;
  const int m = static_cast<int>(sats.size());
  const Vec3 up = enu_rotation(ecef_to_geodetic(spp.position)).col(2);
  MatX G = MatX::Zero(m, k);
  VecX var(m);
  for (int i = 0; i < m; ++i) {
    const Vec3 n = line_of_sight(spp.position, sats[i]);
    G.block<1, 3>(i, 0) = -n.transpose();
    G(i, col[sats[i].constellation]) = 1.0;
    var(i) = gnss_variances(std::asin(std::clamp(n.dot(up), -1.0, 1.0)), prm).first;
  }
  const MatX Ginv = (G.transpose() * G).ldlt().solve(G.transpose());
  const MatX C = Ginv * var.asDiagonal() * Ginv.transpose();
  return C.topLeftCorner<3, 3>();
}

/// Covariance of (yaw, ENU translation) as fitted by initialize_alignment from
/// independent fixes with ECEF covariances `fix_cov`. VIO position errors are ignored.
inline Eigen::Matrix4d alignment_covariance(const Alignment& a, const std::vector<Vec3>& p_world,
                                            const std::vector<Mat3>& fix_cov) {
  Eigen::Matrix4d info = Eigen::Matrix4d::Zero();
  const Mat3 Renu = enu_rotation(a.origin);
  const Mat3 Rz = rot_z(a.yaw);
  for (std::size_t i = 0; i < p_world.size(); ++i) {
    Eigen::Matrix<double, 3, 4> J;
    J.col(0) = Renu * Vec3::UnitZ().cross(Rz * p_world[i]);
    J.rightCols<3>() = Renu;
    info += J.transpose() * fix_cov[i].ldlt().solve(J);
  }
  return info.ldlt().solve(Eigen::Matrix4d::Identity());
}

struct GnssReport {
  int satellites = 0;
  int used = 0;
  int gated = 0;
  int masked = 0;
  std::vector<Constellation> initialized;
  std::vector<Constellation> removed;
  bool updated = false;
};

namespace detail {

struct GnssRows {
  MatX H;
  VecX r;
  VecX var;
};

inline GnssRows gnss_rows(const NavState& x, const StateLayout& L, const Alignment& a,
                          const std::vector<const SatelliteObservation*>& sats, const GnssParams& prm) {
  const int per = prm.use_doppler ? 2 : 1;
  const int m = per * static_cast<int>(sats.size());
  GnssRows g{MatX::Zero(m, L.dim()), VecX::Zero(m), VecX::Zero(m)};
  const Vec3 pe = a.to_ecef(x.imu.position);
  for (std::size_t i = 0; i < sats.size(); ++i) {
    const auto& s = *sats[i];
    const MatX Hs = gnss_jacobians(x, L, a, s);
    const auto [vr, vd] = gnss_variances(elevation(a, pe, s), prm);
    g.H.row(per * i) = Hs.row(0);
    g.r(per * i) = s.pseudorange - predict_pseudorange(x, a, s);
    g.var(per * i) = vr;
    if (per == 2) {
      g.H.row(per * i + 1) = Hs.row(1);
      g.r(per * i + 1) = s.range_rate - predict_range_rate(x, a, s);
      g.var(per * i + 1) = vd;
    }
  }
  return g;
}

}  // namespace detail

/// Clock lifecycle plus a gated, elevation-weighted update. `spp` (when ok)
/// seeds new clock states; any seed is exact because the model is linear in them.
inline GnssReport gnss_update(NavState& x, MatX& P, const GnssEpoch& epoch, const Alignment& align,
                              const GnssParams& prm, const SppResult* spp = nullptr, EventLog* log = nullptr) {
  GnssReport rep;
  rep.satellites = static_cast<int>(epoch.sats.size());
  const double t = epoch.t;

  // Satellites above the mask.
  const Vec3 pe = align.to_ecef(x.imu.position);
  std::vector<const SatelliteObservation*> vis;
  for (const auto& s : epoch.sats) {
    if (elevation(align, pe, s) < prm.elevation_mask) {
      ++rep.masked;
      continue;
    }
    vis.push_back(&s);
  }
  std::set<Constellation> seen;
  for (const auto* s : vis) seen.insert(s->constellation);

  // Stale constellations leave the state; the drift goes with the last one.
  std::vector<BlockKey> stale;
  for (const auto& [c, b] : x.clock_biases) {
    if (!seen.count(c)) {
      stale.push_back(BlockKey::clock_bias(c));
      rep.removed.push_back(c);
      log_event(log, t, "clock_removed", to_string(c));
    }
  }
  if (!stale.empty()) {
    if (stale.size() == x.clock_biases.size() && x.clock_drift) stale.push_back(BlockKey::clock_drift());
    marginalize(x, P, stale);
  }
  if (vis.empty()) return rep;

  // New constellations: delayed initialization from their own rows.
  std::vector<const SatelliteObservation*> init_sats, upd_sats;
  ClockBlock blk;
  for (const auto* s : vis) {
    if (x.clock_biases.count(s->constellation)) {
      upd_sats.push_back(s);
      continue;
    }
    init_sats.push_back(s);
    if (!blk.biases.count(s->constellation)) {
      double seed = 0.0;
      if (spp && spp->ok && spp->clock_biases.count(s->constellation)) seed = spp->clock_biases.at(s->constellation);
      blk.biases[s->constellation] = seed;
    }
  }
  if (!init_sats.empty()) {
    const bool need_drift = !x.clock_drift && prm.use_doppler;
    if (need_drift) blk.drift = (spp && spp->ok && spp->has_velocity) ? spp->clock_drift : 0.0;
    // Rows are built on a copy that already holds the seeded block.
    NavState xs = x;
    for (const auto& [c, v] : blk.biases) xs.clock_biases[c] = v;
    if (blk.drift) xs.clock_drift = *blk.drift;
    const StateLayout Ls = StateLayout::of(xs);
    const auto g = detail::gnss_rows(xs, Ls, align, init_sats, prm);
    // Split columns: old layout vs new block.
    const StateLayout Lx = StateLayout::of(x);
    std::vector<BlockKey> new_keys;
    for (const auto& [c, v] : blk.biases) new_keys.push_back(BlockKey::clock_bias(c));
    if (blk.drift) new_keys.push_back(BlockKey::clock_drift());
    MatX Hn(g.H.rows(), static_cast<int>(new_keys.size()));
    for (std::size_t j = 0; j < new_keys.size(); ++j) Hn.col(j) = g.H.col(Ls.offset(new_keys[j]));
    MatX Hx = MatX::Zero(g.H.rows(), Lx.dim());
    for (const auto& b : Lx.blocks()) Hx.middleCols(b.offset, b.dim) = g.H.middleCols(Ls.offset(b.key), b.dim);
    if (delayed_init_from_rows(x, P, blk, Hx, Hn, g.r, g.var.asDiagonal().toDenseMatrix())) {
      for (const auto& [c, v] : blk.biases) {
        rep.initialized.push_back(c);
        log_event(log, t, "clock_init", to_string(c));
      }
    } else {
      log_event(log, t, "clock_init_failed");
    }
  }
  if (upd_sats.empty()) return rep;

  // Per-satellite gate, then one stacked update.
  const StateLayout L = StateLayout::of(x);
  const auto g = detail::gnss_rows(x, L, align, upd_sats, prm);
  const int per = prm.use_doppler ? 2 : 1;
  std::vector<int> keep;
  for (std::size_t i = 0; i < upd_sats.size(); ++i) {
    const MatX Hi = g.H.middleRows(per * i, per);
    const VecX ri = g.r.segment(per * i, per);
    const MatX Ri = g.var.segment(per * i, per).asDiagonal();
    if (mahalanobis(P, Hi, ri, Ri) > prm.chi2_scale * chi2_95(per)) {
      ++rep.gated;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s:%d", to_string(upd_sats[i]->constellation), upd_sats[i]->sat_id);
      log_event(log, t, "gnss_gated", buf);
      continue;
    }
    for (int k = 0; k < per; ++k) keep.push_back(per * static_cast<int>(i) + k);
  }
  rep.used = static_cast<int>(keep.size()) / per;
  if (keep.empty()) {
    log_event(log, t, "gnss_all_gated");
    return rep;
  }
  const MatX H = g.H(keep, Eigen::all);
  const VecX r = g.r(keep);
  const MatX R = g.var(keep).asDiagonal();
  kalman_update(x, P, H, r, R);
  rep.updated = true;
  return rep;
}

}  // namespace ingvio
