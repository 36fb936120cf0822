#pragma once

// Sensor streams, ground truth and their CSV serialization. Every double is
// written with 17 significant digits so a write/read cycle is bit-exact.

#include "ingvio/errors.hpp"
#include "ingvio/gnss.hpp"
#include "ingvio/propagation.hpp"
#include "ingvio/vision.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace ingvio {


struct ImageFrame {
  double t = 0.0;
  FrameId frame_id = 0;
  std::vector<ImageMeasurement> measurements;
};

struct TruthSample {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  std::array<double, kNumConstellations> clock_bias{};  // NaN when not simulated
  double clock_drift = 0.0;
};

/// Truth sample at time t (nearest IMU sample; generation times are on the IMU grid).
inline const TruthSample& truth_at(const std::vector<TruthSample>& truth, double t) {
  if (truth.empty()) throw std::logic_error("truth_at: empty truth");
  auto it = std::lower_bound(truth.begin(), truth.end(), t, [](const TruthSample& s, double v) { return s.t < v; });
  if (it == truth.end()) return truth.back();
  if (it != truth.begin() && (t - std::prev(it)->t) < (it->t - t)) return *std::prev(it);
  return *it;
}

/// World-frame pose of the ENU frame: origin plus yaw and translation.
struct AlignmentTruth {
  GeodeticPoint origin;
  double yaw = 0.0;
  Vec3 t_enu = Vec3::Zero();
  Alignment alignment() const { return make_alignment(origin, yaw, t_enu); }
};

/// Initial estimate handed to the filter.
struct InitialState {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

struct Dataset {
  std::vector<ImuSample> imu;
  std::vector<ImageFrame> images;
  std::vector<GnssEpoch> gnss;
  std::optional<InitialState> init;
  std::optional<std::vector<TruthSample>> truth;
  std::optional<AlignmentTruth> alignment_truth;
  // Calibration needed by the estimator.
  Pose camera_in_imu;
  CameraRig rig;
};

// ---------------------------------------------------------------------------
// CSV primitives

namespace csv {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join(std::initializer_list<double> vals) {
  std::string s;
  bool first = true;
  for (double v : vals) {
    if (!first) s += ',';
    s += fmt(v);
    first = false;
  }
  return s;
}

class Writer {
 public:
  Writer(const std::filesystem::path& p, const std::string& schema, const std::string& columns) : path_(p), out_(p) {
    if (!out_) throw DatasetError("cannot open " + p.string() + " for writing");
    out_ << "# " << schema << "\n# " << columns << "\n";
  }
  void row(const std::string& r) { out_ << r << '\n'; }
  ~Writer() = default;

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Reads data rows (skipping '#' comments and blank lines); every row must
/// have exactly `ncols` numeric fields.
inline std::vector<std::pair<int, std::vector<double>>> read_rows(const std::filesystem::path& p, std::size_t ncols) {
  std::ifstream in(p);
  if (!in) throw DatasetError("cannot open " + p.string());
  std::vector<std::pair<int, std::vector<double>>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> vals;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      const std::string field = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      const char* b = field.c_str();
      char* e = nullptr;
      const double v = std::strtod(b, &e);
      if (field.empty() || e == b || *e != '\0')
        throw DatasetError(p.filename().string() + ":" + std::to_string(lineno) + ": malformed field '" + field + "'");
      vals.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (vals.size() != ncols)
      throw DatasetError(p.filename().string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(ncols) +
                         " fields, found " + std::to_string(vals.size()));
    rows.emplace_back(lineno, std::move(vals));
  }
  return rows;
}

inline long as_int(double v, const std::filesystem::path& p, int line) {
  if (v != std::floor(v) || !std::isfinite(v))
    throw DatasetError(p.filename().string() + ":" + std::to_string(line) + ": expected an integer");
  return static_cast<long>(v);
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Write

inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    csv::Writer w(dir / "imu.csv", "ingvio imu v1", "t_s,wx,wy,wz,ax,ay,az");
    for (const auto& s : d.imu)
      w.row(csv::join({s.t, s.gyro.x(), s.gyro.y(), s.gyro.z(), s.accel.x(), s.accel.y(), s.accel.z()}));
  }
  {
    csv::Writer w(dir / "features.csv", "ingvio features v1", "t_s,frame_id,cam,feature_id,u,v");
    for (const auto& f : d.images) {
      // Frames without measurements are kept as a row with feature_id -1.
      if (f.measurements.empty()) w.row(csv::join({f.t, double(f.frame_id), 0.0, -1.0, 0.0, 0.0}));
      for (const auto& m : f.measurements)
        w.row(csv::join({f.t, double(f.frame_id), double(m.cam), double(m.id), m.uv.x(), m.uv.y()}));
    }
  }
  {
    csv::Writer w(dir / "gnss.csv", "ingvio gnss v1",
                  "t_s,constellation,sat_id,px,py,pz,vx,vy,vz,pseudorange_m,rangerate_mps,sat_clk_m,sat_clkdrift_mps,"
                  "delay_m");
    for (const auto& e : d.gnss) {
      if (e.sats.empty()) w.row(csv::join({e.t, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
      for (const auto& s : e.sats)
        w.row(csv::join({e.t, double(static_cast<int>(s.constellation)), double(s.sat_id), s.sat_position.x(),
                         s.sat_position.y(), s.sat_position.z(), s.sat_velocity.x(), s.sat_velocity.y(),
                         s.sat_velocity.z(), s.pseudorange, s.range_rate, s.sat_clock, s.sat_clock_drift, s.delay}));
    }
  }
  {
    csv::Writer w(dir / "calibration.csv", "ingvio calibration v1",
                  "qw,qx,qy,qz,px,py,pz (camera in IMU),stereo,rqw,rqx,rqy,rqz,rpx,rpy,rpz (right in left)");
    const Eigen::Quaterniond q(d.camera_in_imu.rotation), r(d.rig.right_in_left.rotation);
    const Vec3& p = d.camera_in_imu.translation;
    const Vec3& b = d.rig.right_in_left.translation;
    w.row(csv::join({q.w(), q.x(), q.y(), q.z(), p.x(), p.y(), p.z(), d.rig.stereo ? 1.0 : 0.0, r.w(), r.x(), r.y(),
                     r.z(), b.x(), b.y(), b.z()}));
  }
  if (d.init) {
    csv::Writer w(dir / "init.csv", "ingvio init v1", "t_s,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz");
    const auto& s = *d.init;
    w.row(csv::join({s.t, s.position.x(), s.position.y(), s.position.z(), s.attitude.w(), s.attitude.x(),
                     s.attitude.y(), s.attitude.z(), s.velocity.x(), s.velocity.y(), s.velocity.z(), s.gyro_bias.x(),
                     s.gyro_bias.y(), s.gyro_bias.z(), s.accel_bias.x(), s.accel_bias.y(), s.accel_bias.z()}));
  }
  if (d.truth) {
    csv::Writer w(dir / "groundtruth.csv", "ingvio groundtruth v1",
                  "t_s,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz,clk_gps_m,clk_bds_m,clk_gal_m,clk_glo_m,"
                  "clkdrift_mps");
    for (const auto& s : *d.truth) {
      std::string r = csv::join({s.t, s.position.x(), s.position.y(), s.position.z(), s.attitude.w(), s.attitude.x(),
                                 s.attitude.y(), s.attitude.z(), s.velocity.x(), s.velocity.y(), s.velocity.z(),
                                 s.gyro_bias.x(), s.gyro_bias.y(), s.gyro_bias.z(), s.accel_bias.x(), s.accel_bias.y(),
                                 s.accel_bias.z()});
      for (double c : s.clock_bias) r += "," + csv::fmt(c);
      r += "," + csv::fmt(s.clock_drift);
      w.row(r);
    }
  }
  if (d.alignment_truth) {
    csv::Writer w(dir / "alignment.csv", "ingvio alignment v1", "lat_rad,lon_rad,height_m,yaw_rad,tx,ty,tz (world in ENU)");
    const auto& a = *d.alignment_truth;
    w.row(csv::join({a.origin.latitude, a.origin.longitude, a.origin.height, a.yaw, a.t_enu.x(), a.t_enu.y(),
                     a.t_enu.z()}));
  }
}

// ---------------------------------------------------------------------------
// Read

inline Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError("dataset directory not found: " + dir.string());
  Dataset d;
  for (const auto& [ln, v] : csv::read_rows(dir / "imu.csv", 7))
    d.imu.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});

  const fs::path fp = dir / "features.csv";
  for (const auto& [ln, v] : csv::read_rows(fp, 6)) {
    const FrameId fid = csv::as_int(v[1], fp, ln);
    if (d.images.empty() || d.images.back().frame_id != fid) d.images.push_back({v[0], fid, {}});
    else if (d.images.back().t != v[0])
      throw DatasetError("features.csv:" + std::to_string(ln) + ": inconsistent timestamp within frame");
    const long id = csv::as_int(v[3], fp, ln);
    if (id < 0) continue;
    const long cam = csv::as_int(v[2], fp, ln);
    if (cam != 0 && cam != 1) throw DatasetError("features.csv:" + std::to_string(ln) + ": camera index must be 0 or 1");
    d.images.back().measurements.push_back({id, static_cast<int>(cam), Vec2(v[4], v[5])});
  }

  const fs::path gp = dir / "gnss.csv";
  for (const auto& [ln, v] : csv::read_rows(gp, 14)) {
    if (d.gnss.empty() || d.gnss.back().t != v[0]) d.gnss.push_back({v[0], {}});
    const long c = csv::as_int(v[1], gp, ln);
    if (c == -1) continue;
    if (c < 0 || c >= kNumConstellations)
      throw DatasetError("gnss.csv:" + std::to_string(ln) + ": constellation must be 0-3");
    SatelliteObservation s;
    s.constellation = static_cast<Constellation>(c);
    s.sat_id = static_cast<int>(csv::as_int(v[2], gp, ln));
    s.sat_position = Vec3(v[3], v[4], v[5]);
    s.sat_velocity = Vec3(v[6], v[7], v[8]);
    s.pseudorange = v[9];
    s.range_rate = v[10];
    s.sat_clock = v[11];
    s.sat_clock_drift = v[12];
    s.delay = v[13];
    d.gnss.back().sats.push_back(s);
  }

  if (fs::exists(dir / "calibration.csv")) {
    const auto rows = csv::read_rows(dir / "calibration.csv", 15);
    if (rows.size() != 1) throw DatasetError("calibration.csv: expected exactly one row");
    const auto& v = rows[0].second;
    d.camera_in_imu = Pose{Eigen::Quaterniond(v[0], v[1], v[2], v[3]).normalized().toRotationMatrix(),
                           Vec3(v[4], v[5], v[6])};
    d.rig.stereo = v[7] != 0.0;
    d.rig.right_in_left = Pose{Eigen::Quaterniond(v[8], v[9], v[10], v[11]).normalized().toRotationMatrix(),
                               Vec3(v[12], v[13], v[14])};
  }
  if (fs::exists(dir / "init.csv")) {
    const auto rows = csv::read_rows(dir / "init.csv", 17);
    if (rows.size() != 1) throw DatasetError("init.csv: expected exactly one row");
    const auto& v = rows[0].second;
    d.init = InitialState{v[0], Vec3(v[1], v[2], v[3]), Eigen::Quaterniond(v[4], v[5], v[6], v[7]),
                          Vec3(v[8], v[9], v[10]), Vec3(v[11], v[12], v[13]), Vec3(v[14], v[15], v[16])};
  }
  if (fs::exists(dir / "groundtruth.csv")) {
    std::vector<TruthSample> truth;
    for (const auto& [ln, v] : csv::read_rows(dir / "groundtruth.csv", 22)) {
      TruthSample s;
      s.t = v[0];
      s.position = Vec3(v[1], v[2], v[3]);
      s.attitude = Eigen::Quaterniond(v[4], v[5], v[6], v[7]);
      s.velocity = Vec3(v[8], v[9], v[10]);
      s.gyro_bias = Vec3(v[11], v[12], v[13]);
      s.accel_bias = Vec3(v[14], v[15], v[16]);
      for (int c = 0; c < kNumConstellations; ++c) s.clock_bias[c] = v[17 + c];
      s.clock_drift = v[21];
      truth.push_back(s);
    }
    d.truth = std::move(truth);
  }
  if (fs::exists(dir / "alignment.csv")) {
    const auto rows = csv::read_rows(dir / "alignment.csv", 7);
    if (rows.size() != 1) throw DatasetError("alignment.csv: expected exactly one row");
    const auto& v = rows[0].second;
    d.alignment_truth = AlignmentTruth{{v[0], v[1], v[2]}, v[3], Vec3(v[4], v[5], v[6])};
  }
  return d;
}

}  // namespace ingvio
