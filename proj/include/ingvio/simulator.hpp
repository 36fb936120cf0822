#pragma once

// Synthetic scenarios: analytic trajectories and noisy IMU, feature and raw
// GNSS streams generated from the same measurement models the filter uses.

#include "ingvio/dataset.hpp"

#include <random>

namespace ingvio {

enum class TrajectoryKind { Static, Line, Circle, Figure8, Helix };

inline const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::Static: return "static";
    case TrajectoryKind::Line: return "line";
    case TrajectoryKind::Circle: return "circle";
    case TrajectoryKind::Figure8: return "figure8";
    case TrajectoryKind::Helix: return "helix";
  }
  return "?";
}

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Figure8;
  double radius = 20.0;     // m
  double speed = 5.0;       // m/s (horizontal, at the widest point for figure8)
  double height = 20.0;     // m above the landmark ground plane
  double climb_rate = 0.5;  // m/s, helix
  double vertical_wave = 1.0;  // m, figure8 height oscillation amplitude
  double duration = 60.0;   // s
};

struct DropoutWindow {
  double t_start = 0.0;
  double t_end = 0.0;
  int visible = 0;
};

struct ConstellationSpec {
  Constellation id = Constellation::GPS;
  int count = 8;
  std::vector<DropoutWindow> dropouts;
};

struct ScenarioConfig {
  TrajectorySpec trajectory;
  double imu_rate = 200.0;
  double camera_rate = 10.0;
  double gnss_rate = 2.0;
  double gnss_time_offset = 0.01;  // s, GNSS epochs are not image-synchronous

  // Continuous-time IMU noise.
  double gyro_noise = 1e-3;
  double accel_noise = 1e-2;
  double gyro_bias_walk = 1e-5;
  double accel_bias_walk = 1e-4;

  // Camera.
  double pixel_sigma = 1.0 / 460.0;  // on normalized coordinates
  bool stereo = false;
  double baseline = 0.11;
  double camera_pitch = std::numbers::pi / 2;  // rad below body +x
  double fov_tan = 0.75;                        // half field of view, tangent
  double min_depth = 0.5;
  double max_depth = 80.0;
  int max_features = 100;
  int feature_lifetime = 40;

  // Landmarks: uniform in a box around the trajectory footprint, on a ground
  // plane `height` below the lowest trajectory point.
  int landmark_count = 2500;
  double landmark_margin = 30.0;    // m beyond the horizontal extent
  double landmark_relief = 3.0;     // m vertical spread above the ground plane

  // GNSS.
  std::vector<ConstellationSpec> constellations{{Constellation::GPS, 8, {}}};
  double elevation_floor = 15.0 * std::numbers::pi / 180.0;
  bool static_satellites = false;  // fixed directions, zero satellite velocity
  double pseudorange_sigma = 1.0;
  double range_rate_sigma = 0.1;
  double clock_bias_walk = 0.5;   // m/sqrt(s)
  double clock_drift_walk = 0.1;  // m/s/sqrt(s)
  double initial_clock_bias = 3.0e4;  // m, per constellation (offset by index)
  double initial_clock_drift = 20.0;  // m/s
  double delay_zenith = 2.3;           // m
  double delay_slant = 0.5;            // m, multiplied by 1/sin(el)

  // World-to-ENU alignment (truth).
  GeodeticPoint origin{0.5236, 2.0944, 50.0};
  double align_yaw = 0.6;
  Vec3 align_translation{5.0, -3.0, 0.0};

  // Initial estimate: truth perturbed by these standard deviations.
  double init_sigma_attitude = 0.01;  // rad (roll, pitch, yaw)
  double init_sigma_position = 0.1;
  double init_sigma_velocity = 0.1;
  double init_sigma_gyro_bias = 1e-3;
  double init_sigma_accel_bias = 1e-2;

  std::uint64_t seed = 1;

  void validate() const {
    if (!(imu_rate > 0 && camera_rate > 0 && gnss_rate > 0)) throw ConfigError("rates must be positive");
    if (imu_rate < camera_rate) throw ConfigError("imu rate must be at least the camera rate");
    if (!(trajectory.duration > 0)) throw ConfigError("duration must be positive");
    if (trajectory.kind != TrajectoryKind::Static && !(trajectory.speed > 0)) throw ConfigError("speed must be positive");
    if ((trajectory.kind == TrajectoryKind::Circle || trajectory.kind == TrajectoryKind::Figure8 ||
         trajectory.kind == TrajectoryKind::Helix) &&
        !(trajectory.radius > 0))
      throw ConfigError("radius must be positive");
    if (max_features < 0 || feature_lifetime < 2) throw ConfigError("invalid feature limits");
    for (const auto& c : constellations)
      if (c.count < 0) throw ConfigError("satellite count must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Trajectories

struct KinematicState {
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();      // world acceleration
  Vec3 omega = Vec3::Zero();  // body angular rate
};

/// Closed-form kinematics. Attitude follows the velocity heading, pitched
/// along the flight path, with zero roll.
inline KinematicState eval_trajectory(const TrajectorySpec& s, double t) {
  if (t < -1e-12 || t > s.duration + 1e-9) throw std::out_of_range("eval_trajectory: t outside [0, duration]");
  KinematicState k;
  const double r = s.radius;
  switch (s.kind) {
    case TrajectoryKind::Static:
      return k;
    case TrajectoryKind::Line:
      k.p = Vec3(s.speed * t, 0.0, s.height);
      k.v = Vec3(s.speed, 0.0, 0.0);
      break;
    case TrajectoryKind::Circle:
    case TrajectoryKind::Helix: {
      const double w = s.speed / r;
      const double c = std::cos(w * t), sn = std::sin(w * t);
      const double vz = s.kind == TrajectoryKind::Helix ? s.climb_rate : 0.0;
      k.p = Vec3(r * sn, -r * c, s.height + vz * t);
      k.v = Vec3(r * w * c, r * w * sn, vz);
      k.a = Vec3(-r * w * w * sn, r * w * w * c, 0.0);
      break;
    }
    case TrajectoryKind::Figure8: {
      // x = r sin(wt), y = (r/2) sin(2wt); peak horizontal speed r w sqrt(2).
      const double w = s.speed / (r * std::sqrt(2.0));
      const double h = s.vertical_wave;
      const double s1 = std::sin(w * t), c1 = std::cos(w * t), s2 = std::sin(2 * w * t), c2 = std::cos(2 * w * t);
      const double s3 = std::sin(3 * w * t), c3 = std::cos(3 * w * t);
      k.p = Vec3(r * s1, 0.5 * r * s2, s.height + h * s3);
      k.v = Vec3(r * w * c1, r * w * c2, 3 * h * w * c3);
      k.a = Vec3(-r * w * w * s1, -2 * r * w * w * s2, -9 * h * w * w * s3);
      break;
    }
  }
  const double vh2 = k.v.x() * k.v.x() + k.v.y() * k.v.y();
  const double vh = std::sqrt(vh2);
  const double yaw = std::atan2(k.v.y(), k.v.x());
  const double pitch = std::atan2(k.v.z(), vh);  // nose up positive
  const double yaw_rate = (k.v.x() * k.a.y() - k.v.y() * k.a.x()) / vh2;
  const double vh_dot = (k.v.x() * k.a.x() + k.v.y() * k.a.y()) / vh;
  const double pitch_rate = (vh * k.a.z() - k.v.z() * vh_dot) / (vh2 + k.v.z() * k.v.z());
  // R = Rz(yaw) Ry(-pitch): body x along the velocity.
  const Mat3 Ry = rot_y(-pitch);
  k.R = rot_z(yaw) * Ry;
  k.omega = Ry.transpose() * Vec3(0, 0, yaw_rate) + Vec3(0, -pitch_rate, 0);
  return k;
}

/// Camera frame (z optical axis, x right, y down in the image) in the IMU frame.
inline Pose camera_mount(double pitch) {
  const Vec3 z(std::cos(pitch), 0.0, -std::sin(pitch));
  const Vec3 x(0.0, -1.0, 0.0);
  const Vec3 y = z.cross(x);
  Mat3 R;
  R << x, y, z;
  return Pose{R, Vec3(0.05, 0.0, -0.02)};
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

inline Vec3 gauss3(std::mt19937_64& rng, double s) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double a = n(rng), b = n(rng), c = n(rng);
  return Vec3(a, b, c) * s;
}

inline double gauss(std::mt19937_64& rng, double s) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng) * s;
}

}  // namespace detail

/// Truth samples at the IMU rate with bias and clock random walks, and the
/// matching IMU stream (sample k is held over [t_k, t_k+1)).
inline void gen_imu(const ScenarioConfig& cfg, std::vector<TruthSample>& truth, std::vector<ImuSample>& imu) {
  auto rng = detail::stream(cfg.seed, 1);
  auto clk_rng = detail::stream(cfg.seed, 2);
  const double dt = 1.0 / cfg.imu_rate;
  const long n = static_cast<long>(std::floor(cfg.trajectory.duration * cfg.imu_rate + 1e-9)) + 1;
  truth.clear();
  imu.clear();
  Vec3 bg = Vec3::Zero(), ba = Vec3::Zero();
  std::array<double, kNumConstellations> clk;
  clk.fill(std::numeric_limits<double>::quiet_NaN());
  for (const auto& c : cfg.constellations)
    clk[static_cast<int>(c.id)] = cfg.initial_clock_bias * (1 + static_cast<int>(c.id));
  double drift = cfg.initial_clock_drift;
  for (long i = 0; i < n; ++i) {
    const double t = i * dt;
    const auto k = eval_trajectory(cfg.trajectory, std::min(t, cfg.trajectory.duration));
    TruthSample s;
    s.t = t;
    s.position = k.p;
    s.attitude = Eigen::Quaterniond(k.R);
    s.velocity = k.v;
    s.gyro_bias = bg;
    s.accel_bias = ba;
    s.clock_bias = clk;
    s.clock_drift = drift;
    truth.push_back(s);

    ImuSample m;
    m.t = t;
    m.gyro = k.omega + bg + detail::gauss3(rng, cfg.gyro_noise / std::sqrt(dt));
    m.accel = k.R.transpose() * (k.a - kGravity) + ba + detail::gauss3(rng, cfg.accel_noise / std::sqrt(dt));
    imu.push_back(m);

    bg += detail::gauss3(rng, cfg.gyro_bias_walk * std::sqrt(dt));
    ba += detail::gauss3(rng, cfg.accel_bias_walk * std::sqrt(dt));
    for (auto& c : clk)
      if (!std::isnan(c)) c += drift * dt + detail::gauss(clk_rng, cfg.clock_bias_walk * std::sqrt(dt));
    drift += detail::gauss(clk_rng, cfg.clock_drift_walk * std::sqrt(dt));
  }
}

struct Scene {
  std::vector<Vec3> landmarks;
};

inline Scene gen_scene(const ScenarioConfig& cfg) {
  auto rng = detail::stream(cfg.seed, 3);
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  const int samples = 400;
  for (int i = 0; i <= samples; ++i) {
    const auto k = eval_trajectory(cfg.trajectory, cfg.trajectory.duration * i / samples);
    lo = lo.cwiseMin(k.p);
    hi = hi.cwiseMax(k.p);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s;
  const double m = cfg.landmark_margin;
  for (int i = 0; i < cfg.landmark_count; ++i) {
    const double x = lo.x() - m + (hi.x() - lo.x() + 2 * m) * u(rng);
    const double y = lo.y() - m + (hi.y() - lo.y() + 2 * m) * u(rng);
    const double z = lo.z() - cfg.trajectory.height + cfg.landmark_relief * u(rng);
    s.landmarks.emplace_back(x, y, z);
  }
  return s;
}

/// Landmark in a camera frame, if it is inside the field of view and depth range.
inline std::optional<Vec2> observe(const ScenarioConfig& cfg, const Pose& cam_in_world, const Vec3& pw) {
  const Vec3 pc = cam_in_world.inverse() * pw;
  if (pc.z() < cfg.min_depth || pc.z() > cfg.max_depth) return std::nullopt;
  const Vec2 uv(pc.x() / pc.z(), pc.y() / pc.z());
  if (std::abs(uv.x()) > cfg.fov_tan || std::abs(uv.y()) > cfg.fov_tan) return std::nullopt;
  return uv;
}

/// Image streams with persistent track ids. A track ends when its landmark
/// leaves the view or after `feature_lifetime` frames; re-detection starts a new id.
inline std::vector<ImageFrame> gen_features(const ScenarioConfig& cfg, const std::vector<TruthSample>& truth,
                                            const Scene& scene, const Pose& cam_in_imu, const CameraRig& rig) {
  auto rng = detail::stream(cfg.seed, 4);
  const long n = static_cast<long>(std::floor(cfg.trajectory.duration * cfg.camera_rate + 1e-9)) + 1;
  std::vector<ImageFrame> frames;
  struct Active {
    FeatureId id;
    int age;
  };
  std::map<std::size_t, Active> active;  // landmark index -> track
  FeatureId next_id = 0;
  std::vector<std::size_t> order(scene.landmarks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (long f = 0; f < n; ++f) {
    const double t = f / cfg.camera_rate;
    const TruthSample& s = truth_at(truth, t);
    const Pose body{s.attitude.toRotationMatrix(), s.position};
    const Pose cam = body * cam_in_imu;
    const Pose right = cam * rig.right_in_left;
    ImageFrame fr;
    fr.t = s.t;
    fr.frame_id = f;

    auto emit = [&](std::size_t li, FeatureId id) -> bool {
      const auto uv = observe(cfg, cam, scene.landmarks[li]);
      if (!uv) return false;
      std::optional<Vec2> uvr;
      if (rig.stereo) {
        uvr = observe(cfg, right, scene.landmarks[li]);
        if (!uvr) return false;
      }
      fr.measurements.push_back(
          {id, kLeftCamera, *uv + Vec2(detail::gauss(rng, cfg.pixel_sigma), detail::gauss(rng, cfg.pixel_sigma))});
      if (uvr)
        fr.measurements.push_back({id, kRightCamera, *uvr + Vec2(detail::gauss(rng, cfg.pixel_sigma),
                                                                detail::gauss(rng, cfg.pixel_sigma))});
      return true;
    };

    std::map<std::size_t, Active> kept;
    int count = 0;
    for (auto& [li, a] : active) {
      if (a.age >= cfg.feature_lifetime || count >= cfg.max_features) continue;
      if (emit(li, a.id)) {
        kept[li] = {a.id, a.age + 1};
        ++count;
      }
    }
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t li : order) {
      if (count >= cfg.max_features) break;
      if (kept.count(li) || active.count(li)) continue;  // ended tracks wait one frame
      if (emit(li, next_id)) {
        kept[li] = {next_id++, 1};
        ++count;
      }
    }
    active = std::move(kept);
    frames.push_back(std::move(fr));
  }
  return frames;
}

struct SatelliteOrbit {
  Constellation constellation;
  int sat_id;
  Vec3 r0;  // ECEF position at t = 0
  Vec3 axis;
  double rate;  // rad/s
  double clock;
  double clock_drift;

  Vec3 position(double t) const { return gamma(0, axis * (rate * t)) * r0; }
  Vec3 velocity(double t) const { return rate * axis.cross(position(t)); }
};

/// Circular orbits of radius 26.6e6 m through directions sampled above the
/// elevation floor, as seen from the alignment origin.
inline std::vector<SatelliteOrbit> gen_orbits(const ScenarioConfig& cfg) {
  auto rng = detail::stream(cfg.seed, 5);
  const double radius = 26.6e6;
  const double rate = cfg.static_satellites ? 0.0 : std::sqrt(3.986004418e14 / (radius * radius * radius));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 o = geodetic_to_ecef(cfg.origin);
  std::vector<SatelliteOrbit> out;
  for (const auto& c : cfg.constellations) {
    for (int i = 0; i < c.count; ++i) {
      const double az = 2 * std::numbers::pi * u(rng);
      const double el = cfg.elevation_floor + 2.0 * std::numbers::pi / 180.0 +
                        (std::numbers::pi / 2 - cfg.elevation_floor - 4.0 * std::numbers::pi / 180.0) * u(rng);
      const Vec3 r0 = place_satellite(o, az, el, radius);
      Vec3 axis = r0.cross(detail::gauss3(rng, 1.0)).normalized();
      out.push_back({c.id, 100 * static_cast<int>(c.id) + i + 1, r0, axis, rate, 2.0e4 * (u(rng) - 0.5),
                     0.2 * (u(rng) - 0.5)});
    }
  }
  return out;
}

inline std::vector<GnssEpoch> gen_gnss(const ScenarioConfig& cfg, const std::vector<TruthSample>& truth,
                                       const AlignmentTruth& align) {
  auto rng = detail::stream(cfg.seed, 6);
  const auto orbits = gen_orbits(cfg);
  const Alignment a = align.alignment();
  const Vec3 up = enu_rotation(cfg.origin).col(2);
  std::vector<GnssEpoch> epochs;
  for (long k = 0;; ++k) {
    const double t = cfg.gnss_time_offset + k / cfg.gnss_rate;
    if (t > cfg.trajectory.duration + 1e-9) break;
    const TruthSample& s = truth_at(truth, t);
    const Vec3 pe = a.to_ecef(s.position);
    const Vec3 ve = a.R() * s.velocity;
    GnssEpoch e;
    e.t = s.t;
    std::map<Constellation, int> seen;
    for (const auto& o : orbits) {
      const Vec3 sp = o.position(s.t), sv = o.velocity(s.t);
      const Vec3 d = sp - pe;
      const double range = d.norm();
      const double el = std::asin(std::clamp(d.dot(up) / range, -1.0, 1.0));
      if (el < cfg.elevation_floor) continue;
      int limit = std::numeric_limits<int>::max();
      for (const auto& c : cfg.constellations)
        if (c.id == o.constellation)
          for (const auto& w : c.dropouts)
            if (s.t >= w.t_start && s.t < w.t_end) limit = std::min(limit, w.visible);
      if (seen[o.constellation] >= limit) continue;
      ++seen[o.constellation];
      SatelliteObservation m;
      m.constellation = o.constellation;
      m.sat_id = o.sat_id;
      m.sat_position = sp;
      m.sat_velocity = sv;
      m.sat_clock = o.clock;
      m.sat_clock_drift = o.clock_drift;
      m.delay = cfg.delay_zenith + cfg.delay_slant / std::sin(el);
      const double bias = s.clock_bias[static_cast<int>(o.constellation)];
      m.pseudorange = range + (bias - o.clock) + m.delay + detail::gauss(rng, cfg.pseudorange_sigma);
      m.range_rate = d.dot(sv - ve) / range + (s.clock_drift - o.clock_drift) + detail::gauss(rng, cfg.range_rate_sigma);
      e.sats.push_back(m);
    }
    epochs.push_back(std::move(e));
  }
  return epochs;
}

/// Truth perturbed by the configured initial uncertainty.
inline InitialState gen_initial_state(const ScenarioConfig& cfg, const TruthSample& s) {
  auto rng = detail::stream(cfg.seed, 7);
  InitialState x;
  x.t = s.t;
  x.position = s.position + detail::gauss3(rng, cfg.init_sigma_position);
  x.attitude = Eigen::Quaterniond(so3_exp(detail::gauss3(rng, cfg.init_sigma_attitude)) * s.attitude.toRotationMatrix());
  x.velocity = s.velocity + detail::gauss3(rng, cfg.init_sigma_velocity);
  x.gyro_bias = s.gyro_bias + detail::gauss3(rng, cfg.init_sigma_gyro_bias);
  x.accel_bias = s.accel_bias + detail::gauss3(rng, cfg.init_sigma_accel_bias);
  return x;
}

inline Dataset simulate(const ScenarioConfig& cfg) {
  cfg.validate();
  Dataset d;
  std::vector<TruthSample> truth;
  gen_imu(cfg, truth, d.imu);
  d.camera_in_imu = camera_mount(cfg.camera_pitch);
  d.rig.stereo = cfg.stereo;
  d.rig.right_in_left = Pose{Mat3::Identity(), Vec3(cfg.baseline, 0.0, 0.0)};
  d.images = gen_features(cfg, truth, gen_scene(cfg), d.camera_in_imu, d.rig);
  d.alignment_truth = AlignmentTruth{cfg.origin, cfg.align_yaw, cfg.align_translation};
  d.gnss = gen_gnss(cfg, truth, *d.alignment_truth);
  d.init = gen_initial_state(cfg, truth.front());
  d.truth = std::move(truth);
  return d;
}

}  // namespace ingvio
