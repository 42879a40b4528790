#include "treereg/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace treereg {

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = rotation;
  m.block<3, 1>(0, 3) = translation;
  return m;
}

double RigidTransform::rotation_angle() const {
  const double c = std::clamp((rotation.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

bool RigidTransform::is_valid(double tol) const {
  return is_rotation(rotation, tol) && translation.allFinite();
}

Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
      -w.y(), w.x(), 0.0;
  return s;
}

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Mat3::Identity()).norm();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

EigenDecomp3 eig_sym3(const Mat3& m) {
  if (!m.allFinite()) {
    throw std::invalid_argument("eig_sym3: non-finite input matrix");
  }
  const double scale = m.norm();
  const double asym = (m - m.transpose()).norm();
  if (asym > 1e-6 * std::max(scale, 1e-300)) {
    throw std::invalid_argument("eig_sym3: matrix is not symmetric");
  }

  const Mat3 sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw std::invalid_argument("eig_sym3: eigendecomposition failed");
  }

  // Eigen sorts ascending; reverse to descending.
  EigenDecomp3 out;
  for (int l = 0; l < 3; ++l) {
    out.lambdas[l] = solver.eigenvalues()[2 - l];
    out.axes.col(l) = solver.eigenvectors().col(2 - l);
  }

  const double neg_floor = -1e-10 * scale;
  for (int l = 0; l < 3; ++l) {
    if (out.lambdas[l] < 0.0) {
      if (out.lambdas[l] < neg_floor) {
        throw std::invalid_argument(
            "eig_sym3: strongly negative eigenvalue (corrupted covariance)");
      }
      out.lambdas[l] = 0.0;
    }
  }

  // Right-handed basis.
  if (out.axes.determinant() < 0.0) {
    out.axes.col(2) = -out.axes.col(2);
  }
  return out;
}

EigenDecomp3 eig_sym3_floored(const Mat3& m, double floor_value) {
  if (!m.allFinite()) {
    throw std::invalid_argument("eig_sym3_floored: non-finite input matrix");
  }
  if (!(floor_value > 0.0)) {
    throw std::invalid_argument("eig_sym3_floored: floor must be positive");
  }
  const Mat3 sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw std::invalid_argument("eig_sym3_floored: eigendecomposition failed");
  }
  EigenDecomp3 out;
  for (int l = 0; l < 3; ++l) {
    out.lambdas[l] = std::max(solver.eigenvalues()[2 - l], floor_value);
    out.axes.col(l) = solver.eigenvectors().col(2 - l);
  }
  if (out.axes.determinant() < 0.0) {
    out.axes.col(2) = -out.axes.col(2);
  }
  return out;
}

Vec3 se3_apply(const RigidTransform& t, const Vec3& p) { return t(p); }

Mat3 small_angle_rotation(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    // Second-order Taylor expansion keeps SO(3) membership to machine
    // precision at this magnitude.
    const Mat3 k = skew(omega);
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const Vec3 axis = omega / theta;
  const Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(theta) * k +
         (1.0 - std::cos(theta)) * k * k;
}

Mat3 rotation_from_euler_xyz(const Vec3& angles) {
  const double ca = std::cos(angles[0]), sa = std::sin(angles[0]);
  const double cb = std::cos(angles[1]), sb = std::sin(angles[1]);
  const double cc = std::cos(angles[2]), sc = std::sin(angles[2]);
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  ry << cb, 0, sb, 0, 1, 0, -sb, 0, cb;
  rz << cc, -sc, 0, sc, cc, 0, 0, 0, 1;
  return rx * ry * rz;
}

Vec3 euler_xyz_from_rotation(const Mat3& r) {
  // r = Rx(a) Ry(b) Rz(c):
  //   r(0,2) = sin b
  //   r(1,2) = -sin a cos b,  r(2,2) = cos a cos b
  //   r(0,1) = -cos b sin c,  r(0,0) = cos b cos c
  const double sb = std::clamp(r(0, 2), -1.0, 1.0);
  const double b = std::asin(sb);
  constexpr double kHalfPi = 1.5707963267948966;
  if (kHalfPi - std::abs(b) < 1e-9) {
    // Gimbal lock: only a -+ c is observable; put it all into a.
    const double a = (b > 0.0) ? std::atan2(r(1, 0), r(1, 1))
                               : std::atan2(-r(1, 0), r(1, 1));
    return {a, b, 0.0};
  }
  const double a = std::atan2(-r(1, 2), r(2, 2));
  const double c = std::atan2(-r(0, 1), r(0, 0));
  return {a, b, c};
}

double rotation_error_deg(const Mat3& est, const Mat3& gt) {
  if (!is_rotation(est, 1e-6) || !is_rotation(gt, 1e-6)) {
    throw std::invalid_argument("rotation_error_deg: input not in SO(3)");
  }
  const Mat3 rel = gt.transpose() * est;
  const Vec3 angles = euler_xyz_from_rotation(rel);
  constexpr double kRadToDeg = 57.29577951308232;
  return angles.cwiseAbs().mean() * kRadToDeg;
}

}  // namespace treereg
