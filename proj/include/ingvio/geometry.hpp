#pragma once

// Lie-group and coordinate-frame mathematics: Gamma functions, SO(3)/SE(3)/SE2(3)
// helpers and WGS-84 geodetic conversions.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ingvio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// skew(v) * w == v.cross(w)
inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0,  -v.z(),  v.y(),
        v.z(),  0.0,  -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

inline Vec3 vee(const Mat3& s) {
  return Vec3(s(2, 1) - s(1, 2), s(0, 2) - s(2, 0), s(1, 0) - s(0, 1)) * 0.5;
}

namespace detail {

constexpr std::array<double, 20> kInvFactorial = [] {
  std::array<double, 20> f{};
  double acc = 1.0;
  for (int n = 0; n < 20; ++n) {
    if (n > 0) acc *= n;
    f[n] = 1.0 / acc;
  }
  return f;
}();

// f_k(t) = sum_j (-1)^j t^{2j} / (k+2j)!  and  g_k(t) = f_k'(t) / t.
// Gamma_m(theta) = I/m! + f_{m+1} K + f_{m+2} K^2 with K = skew(theta), t = |theta|.
struct SeriesCoeffs {
  std::array<double, 6> f{};
  std::array<double, 6> g{};
};

// Below this angle the scalar series is used; closed forms lose digits to
// cancellation in f_4 and f_5 for small t.
constexpr double kSeriesSwitch = 1.0;
constexpr int kSeriesTerms = 12;

inline SeriesCoeffs series_coeffs(double t) {
  SeriesCoeffs out;
  const double t2 = t * t;
  if (t < kSeriesSwitch) {
    for (int k = 1; k <= 5; ++k) {
      double f = 0.0;
      double g = 0.0;
      double pow_t2 = 1.0;  // t^{2j}
      double pow_t2_prev = 0.0;  // t^{2j-2}
      double sign = 1.0;
      for (int j = 0; j < kSeriesTerms; ++j) {
        const int n = k + 2 * j;
        const double inv = n < 20 ? kInvFactorial[n] : 0.0;
        f += sign * pow_t2 * inv;
        if (j > 0) g += sign * 2.0 * j * pow_t2_prev * inv;
        pow_t2_prev = pow_t2;
        pow_t2 *= t2;
        sign = -sign;
      }
      out.f[k] = f;
      out.g[k] = g;
    }
    return out;
  }
  const double s = std::sin(t);
  const double c = std::cos(t);
  out.f[1] = s / t;
  out.f[2] = (1.0 - c) / t2;
  out.g[1] = (t * c - s) / (t2 * t);
  out.g[2] = (t * s - 2.0 * (1.0 - c)) / (t2 * t2);
  for (int k = 1; k <= 3; ++k) {
    out.f[k + 2] = (kInvFactorial[k] - out.f[k]) / t2;
    out.g[k + 2] = (-out.g[k] - 2.0 * out.f[k + 2]) / t2;
  }
  return out;
}

}  // namespace detail

/// Gamma_m(theta) = sum_{n>=0} skew(theta)^n / (m+n)!, for m in {0,1,2,3}.
/// Gamma_0 is the SO(3) exponential, Gamma_1 its left Jacobian.
inline Mat3 gamma(int m, const Vec3& theta) {
  if (m < 0 || m > 3) throw std::invalid_argument("gamma: order must be in 0..3");
  const auto coeff = detail::series_coeffs(theta.norm());
  const Mat3 K = skew(theta);
  return detail::kInvFactorial[m] * Mat3::Identity() + coeff.f[m + 1] * K +
         coeff.f[m + 2] * (K * K);
}

/// Jacobian of theta -> Gamma_m(theta) * a.
inline Mat3 gamma_apply_jacobian(int m, const Vec3& theta, const Vec3& a) {
  if (m < 0 || m > 3) throw std::invalid_argument("gamma: order must be in 0..3");
  const auto coeff = detail::series_coeffs(theta.norm());
  const double b = coeff.f[m + 1];
  const double c = coeff.f[m + 2];
  const Vec3 ka = theta.cross(a);
  const Vec3 kka = theta.cross(ka);
  const Mat3 K = skew(theta);
  const Mat3 A = skew(a);
  return -b * A - c * (skew(ka) + K * A) + coeff.g[m + 1] * ka * theta.transpose() +
         coeff.g[m + 2] * kka * theta.transpose();
}

inline Mat3 so3_exp(const Vec3& theta) { return gamma(0, theta); }

/// Inverse of so3_exp with |result| <= pi.
inline Vec3 so3_log(const Mat3& R) {
  const Vec3 w = vee(R);  // sin(angle) * axis
  const double sin_angle = w.norm();
  const double cos_angle = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double angle = std::atan2(sin_angle, cos_angle);
  if (angle < 1e-8) {
    // R - R^T = 2 sin(angle) [axis]_x; first-order correction keeps 1e-16 accuracy.
    return w * (1.0 + angle * angle / 6.0);
  }
  if (std::numbers::pi - angle > 1e-3) {
    return w * (angle / sin_angle);
  }
  // Near pi: symmetric part is cos(angle) I + (1 - cos(angle)) axis axis^T.
  const Mat3 S = (0.5 * (R + R.transpose()) - cos_angle * Mat3::Identity()) / (1.0 - cos_angle);
  int k = 0;
  S.diagonal().maxCoeff(&k);
  Vec3 axis = S.col(k) / std::sqrt(std::max(S(k, k), 1e-300));
  axis.normalize();
  if (axis.dot(w) < 0.0) axis = -axis;
  return axis * angle;
}

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

inline bool is_rotation(const Mat3& R, double tol = 1e-9) {
  return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol;
}

/// Projects a nearly orthonormal matrix back onto SO(3).
inline Mat3 orthonormalize(const Mat3& R) {
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    out = U * svd.matrixV().transpose();
  }
  return out;
}

/// Heading angle of a rotation (rotation about world z of the body x axis).
inline double yaw_of(const Mat3& R) { return std::atan2(R(1, 0), R(0, 0)); }

inline double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

/// Rigid transform; maps points of the source frame into the target frame.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

/// Element of SE2(3): attitude, position and velocity of the IMU in the world frame.
struct ExtendedPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();

  Pose pose() const { return {rotation, position}; }
};

// ---------------------------------------------------------------------------
// WGS-84

namespace wgs84 {
constexpr double kSemiMajor = 6378137.0;
constexpr double kFlattening = 1.0 / 298.257223563;
constexpr double kSemiMinor = kSemiMajor * (1.0 - kFlattening);
constexpr double kEcc2 = kFlattening * (2.0 - kFlattening);
}  // namespace wgs84

constexpr double kSpeedOfLight = 299792458.0;

struct GeodeticPoint {
  double latitude = 0.0;   // rad
  double longitude = 0.0;  // rad
  double height = 0.0;     // m above ellipsoid
};

inline Vec3 geodetic_to_ecef(const GeodeticPoint& g) {
  if (std::abs(g.latitude) > std::numbers::pi / 2 + 1e-12 ||
      std::abs(g.longitude) > std::numbers::pi + 1e-12) {
    throw std::invalid_argument("geodetic_to_ecef: latitude/longitude out of range");
  }
  using real = long double;
  const real e2 = static_cast<real>(wgs84::kFlattening) * (2.0L - static_cast<real>(wgs84::kFlattening));
  const real lat = g.latitude, lon = g.longitude, h = g.height;
  const real sl = std::sin(lat);
  const real cl = std::cos(lat);
  const real n = wgs84::kSemiMajor / std::sqrt(1.0L - e2 * sl * sl);
  return {static_cast<double>((n + h) * cl * std::cos(lon)), static_cast<double>((n + h) * cl * std::sin(lon)),
          static_cast<double>((n * (1.0L - e2) + h) * sl)};
}

/// Fixed-point latitude iteration (at most 10 rounds, 1e-12 rad tolerance, plus
/// one polishing round). Extended precision keeps the height below 1e-9 m of
/// round-off at Earth radius, where a double ulp is already ~1e-9 m.
inline GeodeticPoint ecef_to_geodetic(const Vec3& p) {
  if (p.norm() < 1000.0) {
    throw std::invalid_argument("ecef_to_geodetic: point within 1 km of the Earth center");
  }
  using real = long double;
  const real a = wgs84::kSemiMajor;
  const real e2 = static_cast<real>(wgs84::kFlattening) * (2.0L - static_cast<real>(wgs84::kFlattening));
  const real x = p.x(), y = p.y(), z = p.z();
  const real rho = std::hypot(x, y);
  auto prime_vertical = [&](real sl) { return a / std::sqrt(1.0L - e2 * sl * sl); };
  real lat = std::atan2(z, rho * (1.0L - e2));
  for (int i = 0; i < 10; ++i) {
    const real sl = std::sin(lat);
    const real next = std::atan2(z + e2 * prime_vertical(sl) * sl, rho);
    const real step = std::abs(next - lat);
    lat = next;
    if (step < 1e-12L) {
      const real sn = std::sin(lat);
      lat = std::atan2(z + e2 * prime_vertical(sn) * sn, rho);
      break;
    }
  }
  const real sl = std::sin(lat);
  const real cl = std::cos(lat);
  GeodeticPoint out;
  out.longitude = std::atan2(p.y(), p.x());
  out.latitude = static_cast<double>(lat);
  // Stable at both poles and equator.
  out.height = static_cast<double>(rho * cl + z * sl - prime_vertical(sl) * (1.0L - e2 * sl * sl));
  return out;
}

/// Columns are the East, North and Up axes expressed in ECEF (R_ENU^ECEF).
inline Mat3 enu_rotation(const GeodeticPoint& origin) {
  const double sl = std::sin(origin.latitude), cl = std::cos(origin.latitude);
  const double so = std::sin(origin.longitude), co = std::cos(origin.longitude);
  Mat3 R;
  R.col(0) = Vec3(-so, co, 0.0);
  R.col(1) = Vec3(-sl * co, -sl * so, cl);
  R.col(2) = Vec3(cl * co, cl * so, sl);
  return R;
}

}  // namespace ingvio
