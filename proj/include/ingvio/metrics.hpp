#pragma once

// Accuracy and consistency metrics of a run against ground truth.

#include "ingvio/estimator.hpp"

#include <boost/math/distributions/chi_squared.hpp>

namespace ingvio {

using Vec15 = Eigen::Matrix<double, 15, 1>;

/// Rigid map from the simulation world into the frame the filter estimates
/// in. Once an alignment is frozen the filter lives in the frame that
/// alignment defines: p_g = R_est^T (R_true p + t_true - t_est).
struct Gauge {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Gauge between(const Alignment& est, const Alignment& truth) {
    Gauge g;
    const Mat3 Rt = est.R().transpose();
    g.R = Rt * truth.R();
    g.t = Rt * (truth.T_w_ecef.translation - est.T_w_ecef.translation);
    return g;
  }
};

struct TruthState {
  ExtendedPose imu;
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

inline TruthState to_gauge(const TruthSample& s, const Gauge& g) {
  TruthState out;
  out.imu.rotation = g.R * s.attitude.toRotationMatrix();
  out.imu.position = g.R * s.position + g.t;
  out.imu.velocity = g.R * s.velocity;
  out.gyro_bias = s.gyro_bias;
  out.accel_bias = s.accel_bias;
  return out;
}

/// Right-invariant IMU error truth (-) estimate, ordered like the state.
inline Vec15 imu_error(const TruthState& truth, const EstimateSample& est) {
  Vec15 e;
  const Vec3 th = so3_log(truth.imu.rotation * est.imu.rotation.transpose());
  e.segment<3>(StateLayout::kRot) = th;
  e.segment<3>(StateLayout::kPos) = detail::translation_error(truth.imu.position, est.imu.position, th);
  e.segment<3>(StateLayout::kVel) = detail::translation_error(truth.imu.velocity, est.imu.velocity, th);
  e.segment<3>(StateLayout::kBg) = truth.gyro_bias - est.gyro_bias;
  e.segment<3>(StateLayout::kBa) = truth.accel_bias - est.accel_bias;
  return e;
}

inline double nees(const VecX& e, const MatX& P) {
  Eigen::LDLT<MatX> ldlt(P);
  if (ldlt.info() != Eigen::Success) throw NumericalError("nees: covariance factorization failed");
  return e.dot(ldlt.solve(e));
}

inline double rmse(const std::vector<Vec3>& err) {
  if (err.empty()) throw std::invalid_argument("rmse: empty series");
  double s = 0.0;
  for (const auto& e : err) s += e.squaredNorm();
  return std::sqrt(s / err.size());
}

/// Least-squares slope of y over x.
inline double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

/// Two-sided 95% interval of the mean of `runs` chi-square(dim) samples.
inline std::pair<double, double> nees_bounds(int dim, int runs) {
  boost::math::chi_squared dist(static_cast<double>(dim) * runs);
  return {boost::math::quantile(dist, 0.025) / runs, boost::math::quantile(dist, 0.975) / runs};
}

struct ErrorSample {
  double t = 0.0;
  Vec3 position_error = Vec3::Zero();  // estimate - truth, world
  Vec3 velocity_error = Vec3::Zero();
  Vec3 attitude_error = Vec3::Zero();  // invariant rotation error; z is yaw
  Vec15 imu_error = Vec15::Zero();
  double nees = 0.0;
  Vec3 position_sigma = Vec3::Zero();
  double yaw_sigma = 0.0;
};

struct RunMetrics {
  std::vector<ErrorSample> series;
  double position_rmse = 0.0;
  double yaw_rmse = 0.0;
  double final_error = 0.0;
  double anees = 0.0;
};

/// Errors of every estimate sample. Samples taken after the alignment was
/// frozen are compared in that alignment's gauge when the truth alignment is known.
inline RunMetrics compute_metrics(const RunResult& run, const std::vector<TruthSample>& truth,
                                  const std::optional<AlignmentTruth>& truth_alignment) {
  if (run.estimates.empty() || truth.empty()) throw std::invalid_argument("compute_metrics: empty overlap");
  RunMetrics m;
  Gauge aligned;
  const bool use_gauge = run.alignment && truth_alignment;
  if (use_gauge) aligned = Gauge::between(*run.alignment, truth_alignment->alignment());
  std::vector<Vec3> perr;
  double yaw2 = 0.0, sum_nees = 0.0;
  for (const auto& est : run.estimates) {
    if (est.t < truth.front().t - 1e-9 || est.t > truth.back().t + 1e-9) continue;
    const Gauge g = (use_gauge && est.aligned) ? aligned : Gauge{};
    const TruthState ts = to_gauge(truth_at(truth, est.t), g);
    ErrorSample s;
    s.t = est.t;
    s.position_error = est.imu.position - ts.imu.position;
    s.velocity_error = est.imu.velocity - ts.imu.velocity;
    s.imu_error = imu_error(ts, est);
    s.attitude_error = s.imu_error.head<3>();
    s.nees = nees(s.imu_error, est.P_imu);
    s.position_sigma = est.P_imu.diagonal().segment<3>(StateLayout::kPos).cwiseSqrt();
    s.yaw_sigma = std::sqrt(est.P_imu(2, 2));
    perr.push_back(s.position_error);
    yaw2 += s.attitude_error.z() * s.attitude_error.z();
    sum_nees += s.nees;
    m.series.push_back(s);
  }
  if (m.series.empty()) throw std::invalid_argument("compute_metrics: empty overlap");
  m.position_rmse = rmse(perr);
  m.yaw_rmse = std::sqrt(yaw2 / m.series.size());
  m.final_error = m.series.back().position_error.norm();
  m.anees = sum_nees / m.series.size();
  return m;
}

/// Slope (m/s) of the position error norm over samples with t >= t_from.
inline double error_slope(const RunMetrics& m, double t_from) {
  std::vector<double> t, e;
  for (const auto& s : m.series)
    if (s.t >= t_from) {
      t.push_back(s.t);
      e.push_back(s.position_error.norm());
    }
  return slope(t, e);
}

}  // namespace ingvio
