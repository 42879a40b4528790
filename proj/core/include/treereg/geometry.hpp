#pragma once

#include <Eigen/Core>

namespace treereg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Eigendecomposition of a symmetric PSD 3x3 matrix with a fixed layout:
/// eigenvalues sorted descending and clamped to >= 0, eigenvectors stored as
/// the columns of `axes` forming a right-handed orthonormal basis.
struct EigenDecomp3 {
  Vec3 lambdas = Vec3::Zero();   // lambda1 >= lambda2 >= lambda3 >= 0
  Mat3 axes = Mat3::Identity();  // column l is the unit axis for lambdas[l]

  Vec3 axis(int l) const { return axes.col(l); }

  /// sum_l lambda_l n_l n_l^T
  Mat3 reconstruct() const {
    return axes * lambdas.asDiagonal() * axes.transpose();
  }
};

/// A rigid transform T = (R, t) acting as p -> R p + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 operator()(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// Composition (this ∘ rhs): apply rhs first, then this.
  RigidTransform operator*(const RigidTransform& rhs) const {
    RigidTransform out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  Eigen::Matrix4d matrix() const;

  /// Rotation angle in radians (0..pi).
  double rotation_angle() const;

  /// R^T R = I and det R = 1 within `tol`.
  bool is_valid(double tol = 1e-10) const;
};

/// [omega]_x such that skew(omega) * v = omega x v.
Mat3 skew(const Vec3& omega);

bool is_rotation(const Mat3& r, double tol = 1e-10);

/// Eigendecomposition of a symmetric 3x3 matrix. Eigenvalues are sorted
/// descending; small negative eigenvalues (above -1e-10 * ||m||_F) are clamped
/// to zero. Throws std::invalid_argument on non-finite input, on relative
/// asymmetry beyond 1e-6, or on strongly negative eigenvalues.
EigenDecomp3 eig_sym3(const Mat3& m);

/// Tolerant variant for raw scatter matrices mid-fit: symmetrizes, clamps
/// every eigenvalue to at least `floor_value` (> 0), never rejects negative
/// eigenvalues (a near-empty component's scatter is roundoff noise that the
/// floor is meant to heal). Throws only on non-finite input.
EigenDecomp3 eig_sym3_floored(const Mat3& m, double floor_value);

/// R p + t.
Vec3 se3_apply(const RigidTransform& t, const Vec3& p);

/// Exponential-map rotation: rotation about omega/||omega|| by ||omega||
/// radians. omega = 0 yields the identity. Always a member of SO(3).
Mat3 small_angle_rotation(const Vec3& omega);

/// Rx(a) * Ry(b) * Rz(c), the intrinsic X-Y-Z convention.
Mat3 rotation_from_euler_xyz(const Vec3& angles_rad);

/// Intrinsic X-Y-Z Euler angles (a, b, c) with r = Rx(a) Ry(b) Rz(c).
/// In the gimbal-lock region (|b| within 1e-9 of pi/2) the split between a and
/// c is not observable; c is fixed to 0 and a carries the remaining rotation.
Vec3 euler_xyz_from_rotation(const Mat3& r);

/// Mean absolute intrinsic X-Y-Z Euler angle of gt^T * est, in degrees.
double rotation_error_deg(const Mat3& est, const Mat3& gt);

}  // namespace treereg
