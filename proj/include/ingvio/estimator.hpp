#pragma once

// Online estimation loop: IMU propagation, per-image clone augmentation and
// visual update, and the raw GNSS pipeline (SPP, alignment, clock lifecycle,
// gated update), processed strictly in timestamp order.

#include "ingvio/dataset.hpp"

#include <chrono>
#include <limits>

namespace ingvio {

enum class Mode { Vio, Gvio };
enum class CameraMode { Mono, Stereo };

inline const char* to_string(Mode m) { return m == Mode::Vio ? "vio" : "gvio"; }
inline const char* to_string(CameraMode m) { return m == CameraMode::Mono ? "mono" : "stereo"; }

/// Initial error variances. Attitude, position and velocity are given for
/// physical errors and mapped into the invariant error at initialization.
struct InitialVariances {
  double attitude = 1e-2;  // rad^2
  double position = 1e-2;
  double velocity = 1e-2;
  double gyro_bias = 1e-4;
  double accel_bias = 1e-4;
  double extrinsics = 1e-4;
};

struct FilterConfig {
  Mode mode = Mode::Gvio;
  std::optional<CameraMode> camera;  // unset: use what the dataset provides
  bool estimate_extrinsics = true;
  double sync_tolerance = 0.05;        // s, GNSS epoch to image pairing
  double static_init_duration = 0.5;   // s of IMU averaged when init.csv is absent
  ProcessNoise noise;
  InitialVariances init;
  VisionParams vision;
  GnssParams gnss;

  void validate() const {
    if (vision.max_clones < 2) throw ConfigError("max_clones must be at least 2");
    if (vision.max_slam < 0) throw ConfigError("max_slam must be non-negative");
    if (!(vision.sigma > 0)) throw ConfigError("vision sigma must be positive");
    if (!(gnss.sigma_pseudorange > 0 && gnss.sigma_range_rate > 0)) throw ConfigError("gnss sigmas must be positive");
    if (!(sync_tolerance >= 0)) throw ConfigError("sync_tolerance must be non-negative");
    if (!(static_init_duration > 0)) throw ConfigError("static_init_duration must be positive");
    for (double v : {init.attitude, init.position, init.velocity, init.gyro_bias, init.accel_bias, init.extrinsics})
      if (!(v > 0)) throw ConfigError("initial variances must be positive");
    for (double v : {noise.gyro, noise.accel, noise.gyro_bias_walk, noise.accel_bias_walk, noise.clock_bias_walk,
                     noise.clock_drift_walk})
      if (!(v >= 0)) throw ConfigError("noise densities must be non-negative");
  }
};

/// Filter output after one image step.
struct EstimateSample {
  double t = 0.0;
  FrameId frame = 0;
  ExtendedPose imu;
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  Mat15 P_imu = Mat15::Zero();
  std::map<Constellation, double> clock_biases;
  std::optional<double> clock_drift;
  int clones = 0;
  int landmarks = 0;
  bool aligned = false;
  // 1 / (n^T P^-1 n) for the global yaw direction n (g in every rotation slot).
  // Visual updates leave it untouched; only propagation and GNSS change it.
  double yaw_direction_variance = 0.0;
};

struct RunTiming {
  long images = 0;
  double image_seconds = 0.0;  // augment + visual update
  double gnss_seconds = 0.0;   // SPP, alignment and GNSS update
  double per_image_ms() const { return images ? 1e3 * (image_seconds + gnss_seconds) / images : 0.0; }
};

struct RunResult {
  std::vector<EstimateSample> estimates;
  EventLog events;
  std::optional<Alignment> alignment;
  double alignment_time = std::numeric_limits<double>::infinity();
  RunTiming timing;
  int max_clones = 0;
};

/// Covariance is PSD up to -1e-10 * trace (Cholesky of the shifted matrix).
inline bool covariance_ok(const MatX& P) {
  if (!P.allFinite()) return false;
  const double shift = 1e-10 * std::abs(P.trace()) + 1e-300;
  Eigen::LLT<MatX> llt(P + shift * MatX::Identity(P.rows(), P.cols()));
  return llt.info() == Eigen::Success;
}

class Estimator {
 public:
  Estimator(FilterConfig cfg, const Dataset& d) : cfg_(std::move(cfg)), d_(d) {
    cfg_.validate();
    VisionParams vp = cfg_.vision;
    vp.rig = d_.rig;
    if (cfg_.camera == CameraMode::Stereo && !d_.rig.stereo)
      throw ConfigError("stereo camera requested but the dataset has no right camera");
    if (cfg_.camera == CameraMode::Mono) vp.rig.stereo = false;
    updater_ = VisualUpdater(vp);
  }

  RunResult run() {
    check_sorted();
    initialize();
    std::size_t ii = first_imu_, im = 0, ig = 0;
    const double eps = 1e-9;
    while (ii < d_.imu.size() || im < d_.images.size() || ig < d_.gnss.size()) {
      const double ti = ii < d_.imu.size() ? d_.imu[ii].t : kInf;
      const double tm = im < d_.images.size() ? d_.images[im].t : kInf;
      const double tg = ig < d_.gnss.size() ? d_.gnss[ig].t : kInf;
      if (ti <= tm + eps && ti <= tg + eps) {
        on_imu(d_.imu[ii++]);
      } else if (tm <= tg) {
        on_image(d_.images[im++]);
      } else {
        on_gnss(d_.gnss[ig++]);
      }
    }
    if (cfg_.mode == Mode::Gvio && !res_.alignment)
      res_.events.add(x_.timestamp, "warning", "alignment never achieved; ran as VIO");
    return std::move(res_);
  }

  const NavState& state() const { return x_; }
  const MatX& covariance() const { return P_; }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  void check_sorted() const {
    if (d_.imu.size() < 2) throw DatasetError("imu.csv: at least two IMU samples are required");
    for (std::size_t i = 1; i < d_.imu.size(); ++i)
      if (!(d_.imu[i].t > d_.imu[i - 1].t)) throw DatasetError("imu.csv: timestamps not strictly increasing");
    for (std::size_t i = 1; i < d_.images.size(); ++i)
      if (!(d_.images[i].t > d_.images[i - 1].t)) throw DatasetError("features.csv: frames not strictly increasing");
    for (std::size_t i = 1; i < d_.gnss.size(); ++i)
      if (!(d_.gnss[i].t > d_.gnss[i - 1].t)) throw DatasetError("gnss.csv: epochs not strictly increasing");
  }

  void initialize() {
    NavState x;
    x.extrinsics = d_.camera_in_imu;
    x.extrinsics_in_state = cfg_.estimate_extrinsics;
    if (d_.init) {
      const auto& s = *d_.init;
      x.timestamp = s.t;
      x.imu.rotation = s.attitude.normalized().toRotationMatrix();
      x.imu.position = s.position;
      x.imu.velocity = s.velocity;
      x.gyro_bias = s.gyro_bias;
      x.accel_bias = s.accel_bias;
      res_.events.add(s.t, "init", "source=init.csv");
    } else {
      // Static start: gravity direction from the mean specific force, zero yaw reference.
      const double t0 = d_.imu.front().t;
      Vec3 f = Vec3::Zero(), w = Vec3::Zero();
      int n = 0;
      for (const auto& s : d_.imu) {
        if (s.t > t0 + cfg_.static_init_duration) break;
        f += s.accel;
        w += s.gyro;
        ++n;
      }
      f /= n;
      w /= n;
      x.imu.rotation = Eigen::Quaterniond::FromTwoVectors(f, -kGravity).toRotationMatrix();
      x.gyro_bias = w;
      x.timestamp = t0;
      res_.events.add(t0, "init", "source=static;samples=" + std::to_string(n));
    }
    // Held sample: the latest at or before the initial time.
    first_imu_ = 0;
    while (first_imu_ + 1 < d_.imu.size() && d_.imu[first_imu_ + 1].t <= x.timestamp) ++first_imu_;
    held_ = d_.imu[first_imu_];
    if (held_.t > x.timestamp) throw DatasetError("imu.csv: no IMU sample at or before the initial time");
    ++first_imu_;

    const StateLayout L = StateLayout::of(x);
    MatX P = MatX::Zero(L.dim(), L.dim());
    Mat15 Pi = Mat15::Zero();
    Pi.diagonal() << Vec3::Constant(cfg_.init.attitude), Vec3::Constant(cfg_.init.position),
        Vec3::Constant(cfg_.init.velocity), Vec3::Constant(cfg_.init.gyro_bias), Vec3::Constant(cfg_.init.accel_bias);
    // Physical (dtheta, dp, dv) -> invariant error: dp_inv = dp + [p]x dtheta, likewise for v.
    Mat15 T = Mat15::Identity();
    T.block<3, 3>(StateLayout::kPos, StateLayout::kRot) = skew(x.imu.position);
    T.block<3, 3>(StateLayout::kVel, StateLayout::kRot) = skew(x.imu.velocity);
    P.topLeftCorner<15, 15>() = T * Pi * T.transpose();
    if (x.extrinsics_in_state) P.block<6, 6>(L.extrinsics(), L.extrinsics()) = cfg_.init.extrinsics * Eigen::Matrix<double, 6, 6>::Identity();
    x_ = std::move(x);
    P_ = std::move(P);
  }

  void propagate_to(double t) {
    const double dt = t - x_.timestamp;
    if (dt <= 1e-9) return;
    propagate(x_, P_, held_.gyro, held_.accel, dt, cfg_.noise);
    x_.timestamp = t;
  }

  void on_imu(const ImuSample& s) {
    propagate_to(s.t);
    held_ = s;
  }

  void on_image(const ImageFrame& f) {
    if (f.t < x_.timestamp - 1e-9) {
      res_.events.add(f.t, "skipped_image", "frame=" + std::to_string(f.frame_id));
      return;
    }
    propagate_to(f.t);
    const auto t0 = std::chrono::steady_clock::now();
    augment_clone(x_, P_, f.frame_id, f.t);
    const ImageReport rep = updater_.process_image(x_, P_, f.frame_id, f.measurements, &res_.events);
    res_.timing.image_seconds += seconds_since(t0);
    ++res_.timing.images;
    check_covariance(f.t);
    res_.max_clones = std::max(res_.max_clones, static_cast<int>(x_.clones.size()));

    char buf[256];
    std::snprintf(buf, sizeof buf, "frame=%lld;meas=%zu;lost_rows=%d;marg_rows=%d;slam=%d;promoted=%d;clones=%zu",
                  static_cast<long long>(f.frame_id), f.measurements.size(), rep.lost.rows, rep.marginal.rows,
                  rep.slam_updated, rep.promoted, x_.clones.size());
    res_.events.add(f.t, "image", buf);
    record(f.t, f.frame_id);
  }

  void on_gnss(const GnssEpoch& e) {
    if (cfg_.mode == Mode::Vio) return;
    if (e.t < x_.timestamp - 1e-9) {
      res_.events.add(e.t, "skipped_gnss");
      return;
    }
    propagate_to(e.t);
    const auto t0 = std::chrono::steady_clock::now();

    // Soft synchronization: pair with the nearest image, else standalone.
    const ImageFrame* near = nearest_image(e.t);
    if (near && std::abs(near->t - e.t) <= cfg_.sync_tolerance) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "frame=%lld;dt=%.6f", static_cast<long long>(near->frame_id), e.t - near->t);
      res_.events.add(e.t, "gnss_paired", buf);
    } else {
      res_.events.add(e.t, "gnss_standalone");
    }

    const SppResult spp = spp_solve(e.sats);
    if (!spp.ok) res_.events.add(e.t, "spp_failed", spp.reason);
    if (!res_.alignment) {
      if (!spp.ok) {
        res_.timing.gnss_seconds += seconds_since(t0);
        return;
      }
      align_pw_.push_back(x_.imu.position);
      align_pe_.push_back(spp.position);
      align_cov_.push_back(spp_position_covariance(e.sats, spp, cfg_.gnss));
      auto a = initialize_alignment(align_pw_, align_pe_, cfg_.gnss);
      if (!a) {
        res_.events.add(e.t, "alignment_deferred", "samples=" + std::to_string(align_pw_.size()));
        res_.timing.gnss_seconds += seconds_since(t0);
        return;
      }
      inflate_for_alignment(*a, alignment_covariance(*a, align_pw_, align_cov_));
      res_.alignment = *a;
      res_.alignment_time = e.t;
      char buf[128];
      std::snprintf(buf, sizeof buf, "yaw=%.9f;samples=%zu", a->yaw, align_pw_.size());
      res_.events.add(e.t, "alignment_init", buf);
    }
    const GnssReport rep = gnss_update(x_, P_, e, *res_.alignment, cfg_.gnss, spp.ok ? &spp : nullptr, &res_.events);
    res_.timing.gnss_seconds += seconds_since(t0);
    check_covariance(e.t);
    char buf[128];
    std::snprintf(buf, sizeof buf, "sats=%d;masked=%d;used=%d;gated=%d", rep.satellites, rep.masked, rep.used,
                  rep.gated);
    res_.events.add(e.t, "gnss", buf);
  }

  /// The frozen alignment is uncertain in yaw and translation; the frame it
  /// defines differs from the true one along the yaw and translation
  /// directions of the state, so that uncertainty enters P along them.
  void inflate_for_alignment(const Alignment& a, const Eigen::Matrix4d& cov) {
    const StateLayout L = StateLayout::of(x_);
    MatX M = MatX::Zero(L.dim(), 4);
    const Vec3 g = kGravity.normalized();
    M.col(0).segment<3>(StateLayout::kRot) = g;
    for (const auto& [id, c] : x_.clones) M.col(0).segment<3>(L.clone(id)) = g;
    const Mat3 Rt = -rot_z(a.yaw).transpose();
    M.block<3, 3>(StateLayout::kPos, 1) = Rt;
    for (const auto& [id, c] : x_.clones) M.block<3, 3>(L.clone(id) + 3, 1) = Rt;
    for (const auto& [id, f] : x_.landmarks) M.block<3, 3>(L.landmark(id), 1) = Rt;
    P_ += M * cov * M.transpose();
    symmetrize(P_);
  }

  const ImageFrame* nearest_image(double t) const {
    if (d_.images.empty()) return nullptr;
    auto it = std::lower_bound(d_.images.begin(), d_.images.end(), t,
                               [](const ImageFrame& f, double v) { return f.t < v; });
    if (it == d_.images.end()) return &d_.images.back();
    if (it != d_.images.begin() && t - std::prev(it)->t <= it->t - t) return &*std::prev(it);
    return &*it;
  }

  void check_covariance(double t) const {
    if (!covariance_ok(P_)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "covariance is not positive semi-definite at t=%.6f", t);
      throw NumericalError(buf);
    }
  }

  void record(double t, FrameId frame) {
    EstimateSample s;
    s.t = t;
    s.frame = frame;
    s.imu = x_.imu;
    s.gyro_bias = x_.gyro_bias;
    s.accel_bias = x_.accel_bias;
    s.P_imu = P_.topLeftCorner<15, 15>();
    s.clock_biases = x_.clock_biases;
    s.clock_drift = x_.clock_drift;
    s.clones = static_cast<int>(x_.clones.size());
    s.landmarks = static_cast<int>(x_.landmarks.size());
    s.aligned = res_.alignment.has_value();
    s.yaw_direction_variance = yaw_direction_variance(frame);
    res_.estimates.push_back(std::move(s));
  }

  // The clone of `frame` is an exact function of the IMU pose and extrinsics,
  // so it is dropped from P (and n) before solving.
  double yaw_direction_variance(FrameId frame) const {
    const StateLayout L = StateLayout::of(x_);
    VecX n = VecX::Zero(L.dim());
    const Vec3 g = kGravity.normalized();
    n.segment<3>(StateLayout::kRot) = g;
    for (const auto& [id, c] : x_.clones) n.segment<3>(L.clone(id)) = g;
    std::vector<int> keep;
    const int skip = x_.clones.count(frame) ? L.clone(frame) : -1;
    for (int i = 0; i < L.dim(); ++i)
      if (skip < 0 || i < skip || i >= skip + 6) keep.push_back(i);
    const MatX Pk = P_(keep, keep);
    const VecX nk = n(keep);
    Eigen::LDLT<MatX> ldlt(Pk);
    if (ldlt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
    return 1.0 / nk.dot(ldlt.solve(nk));
  }

  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  FilterConfig cfg_;
  const Dataset& d_;
  VisualUpdater updater_;
  NavState x_;
  MatX P_;
  ImuSample held_;
  std::size_t first_imu_ = 0;
  std::vector<Vec3> align_pw_, align_pe_;
  std::vector<Mat3> align_cov_;
  RunResult res_;
};

inline RunResult run_filter(const FilterConfig& cfg, const Dataset& d) { return Estimator(cfg, d).run(); }

}  // namespace ingvio
