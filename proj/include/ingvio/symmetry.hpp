#pragma once

// Symmetry and observability analysis: the differenced satellite-direction
// matrix N_g, degenerate-motion classification, unobservable directions of the
// right-invariant error and the stacked observability matrix.

#include "ingvio/gnss.hpp"
#include "ingvio/propagation.hpp"
#include "ingvio/state.hpp"

#include <Eigen/SVD>

#include <string>
#include <vector>

namespace ingvio {

inline constexpr double kNullTolerance = 1e-8;

/// Orthonormal basis (columns) of the right null space of M: right-singular
/// vectors whose singular value is below tol * sigma_max.
inline MatX nullspace(const MatX& M, double tol = kNullTolerance) {
  const int n = static_cast<int>(M.cols());
  if (M.rows() == 0) return MatX::Identity(n, n);
  Eigen::JacobiSVD<MatX> svd(M, Eigen::ComputeFullV);
  const VecX& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < s.size(); ++i)
    if (smax > 0.0 && s(i) >= tol * smax) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

/// Rows (n_j - n_{j-1})^T R_w_ecef for j = 2..N. Vectors within 1e-6 of unit
/// length are normalized (noted in `warnings`); others are rejected.
inline MatX build_ng(const std::vector<Vec3>& n, const Mat3& R_w_ecef, std::vector<std::string>* warnings = nullptr) {
  std::vector<Vec3> u;
  u.reserve(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double len = n[i].norm();
    if (std::abs(len - 1.0) > 1e-6) throw std::invalid_argument("build_ng: direction " + std::to_string(i) + " is not a unit vector");
    if (len != 1.0 && warnings) warnings->push_back("build_ng: normalized direction " + std::to_string(i));
    u.push_back(n[i] / len);
  }
  const int rows = u.empty() ? 0 : static_cast<int>(u.size()) - 1;
  MatX Ng(rows, 3);
  for (int j = 0; j < rows; ++j) Ng.row(j) = (u[j + 1] - u[j]).transpose() * R_w_ecef;
  return Ng;
}

struct DegeneracyReport {
  int null_dim = 0;
  std::vector<Vec3> null_basis;
  bool yaw_unobservable = false;
  double residual_gp = 0.0;  // |N_g (g x p)| / (|g x p| + eps)
  double residual_gv = 0.0;  // |N_g (g x v)| / (|g x v| + eps)
  MatX Ng;
};

inline DegeneracyReport classify_degeneracy(const std::vector<Vec3>& sat_dirs, const Mat3& R_w_ecef, const NavState& x,
                                            const Vec3& g_w = kGravity, double tol = kNullTolerance) {
  constexpr double eps = 1e-300;
  DegeneracyReport r;
  r.Ng = build_ng(sat_dirs, R_w_ecef);
  const MatX B = nullspace(r.Ng, tol);
  r.null_dim = static_cast<int>(B.cols());
  for (int i = 0; i < B.cols(); ++i) r.null_basis.emplace_back(B.col(i));
  auto residual = [&](const Vec3& w) {
    if (r.Ng.rows() == 0) return 0.0;
    return (r.Ng * w).norm() / (w.norm() + eps);
  };
  r.residual_gp = residual(g_w.cross(x.imu.position));
  r.residual_gv = residual(g_w.cross(x.imu.velocity));
  r.yaw_unobservable = r.residual_gp < tol && r.residual_gv < tol;
  return r;
}

// ---------------------------------------------------------------------------
// Group action and unobservable directions

/// h = (rotation by `yaw` about g, translation t) acting on every world-frame
/// quantity; body-frame quantities (biases, extrinsics) and clocks are untouched.
inline NavState symmetry_action(const NavState& x, double yaw, const Vec3& t, const Vec3& g_w = kGravity) {
  const Mat3 Rg = gamma(0, yaw * g_w.normalized());
  NavState y = x;
  y.imu.rotation = Rg * x.imu.rotation;
  y.imu.position = Rg * x.imu.position + t;
  y.imu.velocity = Rg * x.imu.velocity;
  for (auto& [id, c] : y.clones) {
    c.pose.rotation = Rg * c.pose.rotation;
    c.pose.translation = Rg * c.pose.translation + t;
  }
  for (auto& [id, f] : y.landmarks) f.position = Rg * f.position + t;
  return y;
}

/// d/dh of (h . x) boxminus x along translation t (exactly linear in h).
inline VecX translation_direction(const NavState& x, const Vec3& t) {
  const double h = 1.0;
  return (boxminus(symmetry_action(x, 0.0, h * t), x) - boxminus(symmetry_action(x, 0.0, -h * t), x)) / (2 * h);
}

/// d/dh of (h . x) boxminus x for a rotation about g.
inline VecX yaw_direction(const NavState& x, const Vec3& g_w = kGravity) {
  const double h = 0.1;
  return (boxminus(symmetry_action(x, h, Vec3::Zero(), g_w), x) -
          boxminus(symmetry_action(x, -h, Vec3::Zero(), g_w), x)) /
         (2 * h);
}

/// Columns: one per null-basis translation, then the g-rotation when yaw is unobservable.
inline MatX unobservable_directions(const NavState& x, const DegeneracyReport& rep, const Vec3& g_w = kGravity) {
  const int n = StateLayout::of(x).dim();
  MatX N(n, rep.null_dim + (rep.yaw_unobservable ? 1 : 0));
  int c = 0;
  for (const auto& t : rep.null_basis) N.col(c++) = translation_direction(x, t);
  if (rep.yaw_unobservable) N.col(c) = yaw_direction(x, g_w);
  return N;
}

/// Closed-form pattern of unobservable_directions: t in every position-type
/// slot, unit g in the IMU and clone rotation slots, zeros elsewhere.
inline MatX analytic_unobservable_directions(const NavState& x, const DegeneracyReport& rep,
                                             const Vec3& g_w = kGravity) {
  const StateLayout L = StateLayout::of(x);
  MatX N = MatX::Zero(L.dim(), rep.null_dim + (rep.yaw_unobservable ? 1 : 0));
  int c = 0;
  for (const auto& t : rep.null_basis) {
    N.col(c).segment<3>(StateLayout::kPos) = t;
    for (const auto& [id, cl] : x.clones) N.col(c).segment<3>(L.clone(id) + 3) = t;
    for (const auto& [id, f] : x.landmarks) N.col(c).segment<3>(L.landmark(id)) = t;
    ++c;
  }
  if (rep.yaw_unobservable) {
    const Vec3 g = g_w.normalized();
    N.col(c).segment<3>(StateLayout::kRot) = g;
    for (const auto& [id, cl] : x.clones) N.col(c).segment<3>(L.clone(id)) = g;
  }
  return N;
}

/// Derivative of the predicted pseudorange single difference (k minus l) under
/// p -> p + lambda t, at lambda = 0.
inline double single_difference_derivative(const Vec3& p_w, const Alignment& a, const SatelliteObservation& k,
                                           const SatelliteObservation& l, const Vec3& t) {
  const Vec3 pe = a.to_ecef(p_w);
  const Vec3 dt = a.R() * t;
  const Vec3 uk = (pe - k.sat_position).normalized();
  const Vec3 ul = (pe - l.sat_position).normalized();
  return (uk - ul).dot(dt);
}

/// Single-differenced pseudorange (and optionally range-rate) rows with the
/// satellite directions frozen, consecutive pairs as in N_g.
inline MatX differenced_gnss_rows(const NavState& x, const StateLayout& L, const Mat3& R_w_ecef,
                                  const std::vector<Vec3>& sat_dirs, bool doppler) {
  const MatX Ng = build_ng(sat_dirs, R_w_ecef);
  const int m = static_cast<int>(Ng.rows());
  const int per = doppler ? 2 : 1;
  MatX H = MatX::Zero(per * m, L.dim());
  for (int j = 0; j < m; ++j) {
    const Eigen::RowVector3d d = Ng.row(j);
    H.block<1, 3>(per * j, StateLayout::kRot) = d * skew(x.imu.position);
    H.block<1, 3>(per * j, StateLayout::kPos) = -d;
    if (doppler) {
      H.block<1, 3>(per * j + 1, StateLayout::kRot) = d * skew(x.imu.velocity);
      H.block<1, 3>(per * j + 1, StateLayout::kVel) = -d;
    }
  }
  return H;
}

// ---------------------------------------------------------------------------
// Observability matrix

/// O = [H_0; H_1 Phi_0; H_2 Phi_1 Phi_0; ...]. Phi_k maps the error at step k
/// to step k+1 and may be rectangular (clone augmentation).
inline MatX observability_matrix(const std::vector<MatX>& Phi, const std::vector<MatX>& H) {
  if (H.size() != Phi.size() + 1) throw std::invalid_argument("observability_matrix: need one more H than Phi");
  if (H.empty()) return MatX();
  const int n0 = static_cast<int>(H[0].cols());
  int rows = 0;
  for (const auto& h : H) rows += static_cast<int>(h.rows());
  MatX O(rows, n0);
  MatX chain = MatX::Identity(n0, n0);
  int r = 0;
  for (std::size_t k = 0; k < H.size(); ++k) {
    if (k > 0) {
      if (Phi[k - 1].cols() != chain.rows())
        throw std::invalid_argument("observability_matrix: Phi " + std::to_string(k - 1) + " dimension mismatch");
      chain = (Phi[k - 1] * chain).eval();
    }
    if (H[k].cols() != chain.rows())
      throw std::invalid_argument("observability_matrix: H " + std::to_string(k) + " dimension mismatch");
    O.middleRows(r, H[k].rows()) = H[k] * chain;
    r += static_cast<int>(H[k].rows());
  }
  return O;
}

/// |O N| / (|O| |N|), columnwise maximum.
inline double relative_null_residual(const MatX& O, const MatX& N) {
  const double on = O.norm();
  double worst = 0.0;
  for (int i = 0; i < N.cols(); ++i) worst = std::max(worst, (O * N.col(i)).norm() / (on * N.col(i).norm()));
  return worst;
}

}  // namespace ingvio
