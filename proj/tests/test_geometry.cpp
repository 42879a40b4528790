#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "treereg/geometry.hpp"

using namespace treereg;

namespace {
constexpr double kPi = 3.141592653589793;
constexpr double kDegToRad = kPi / 180.0;
}  // namespace

TEST_CASE("eig_sym3 matches characteristic-polynomial eigenvalues") {
  std::mt19937_64 rng(1001);
  for (int i = 0; i < 500; ++i) {
    // Conditioning from isotropic to 1e6, scales from 1e-3 to 1e3.
    const double scale = std::pow(10.0, oracles::uniform(rng, -3.0, 3.0));
    const double l1 = scale;
    const double l2 = l1 * std::pow(10.0, oracles::uniform(rng, -6.0, 0.0));
    const double l3 = l2 * std::pow(10.0, oracles::uniform(rng, -3.0, 0.0));
    const Mat3 m = oracles::spd_from_eigenvalues(rng, Vec3(l1, l2, l3));
    const EigenDecomp3 d = eig_sym3(m);
    const auto ref = oracles::eig3_charpoly(m);
    for (int l = 0; l < 3; ++l) {
      CHECK(std::abs(d.lambdas(l) - ref[l]) <= 1e-12 * l1);
    }
  }
}

TEST_CASE("eig_sym3 output is a descending orthonormal right-handed basis") {
  std::mt19937_64 rng(1002);
  for (int i = 0; i < 200; ++i) {
    const Mat3 m = oracles::spd_from_eigenvalues(
        rng, Vec3(1.0, oracles::uniform(rng, 0.01, 1.0),
                  oracles::uniform(rng, 0.0001, 0.01)));
    const EigenDecomp3 d = eig_sym3(m);
    CHECK(d.lambdas(0) >= d.lambdas(1));
    CHECK(d.lambdas(1) >= d.lambdas(2));
    CHECK((d.axes.transpose() * d.axes - Mat3::Identity()).norm() < 1e-12);
    CHECK(d.axes.determinant() == doctest::Approx(1.0).epsilon(1e-10));
    // Reconstruction: Q diag(lambda) Q^T == input.
    const Mat3 rec =
        d.axes * d.lambdas.asDiagonal() * d.axes.transpose();
    CHECK((rec - m).norm() <= 1e-12 * m.norm());
  }
}

TEST_CASE("eig_sym3 exact small cases") {
  const EigenDecomp3 id = eig_sym3(Mat3::Identity());
  for (int l = 0; l < 3; ++l) CHECK(id.lambdas(l) == doctest::Approx(1.0));

  Mat3 diag = Mat3::Zero();
  diag.diagonal() << 2.0, 5.0, 3.0;
  const EigenDecomp3 d = eig_sym3(diag);
  CHECK(d.lambdas(0) == doctest::Approx(5.0));
  CHECK(d.lambdas(1) == doctest::Approx(3.0));
  CHECK(d.lambdas(2) == doctest::Approx(2.0));
  CHECK(std::abs(d.axes.col(0).dot(Vec3::UnitY())) ==
        doctest::Approx(1.0));
}

TEST_CASE("eig_sym3 rejects bad input") {
  Mat3 asym = Mat3::Identity();
  asym(0, 1) = 0.5;  // (1,0) stays 0 -> strongly asymmetric
  CHECK_THROWS_AS(eig_sym3(asym), std::invalid_argument);

  Mat3 nan_mat = Mat3::Identity();
  nan_mat(2, 2) = std::nan("");
  CHECK_THROWS_AS(eig_sym3(nan_mat), std::invalid_argument);

  Mat3 indefinite = Mat3::Identity();
  indefinite(1, 1) = -1.0;
  CHECK_THROWS_AS(eig_sym3(indefinite), std::invalid_argument);
}

TEST_CASE("eig_sym3 clamps roundoff-negative eigenvalues to zero") {
  // Rank-1 outer product: two exact zero eigenvalues that the iterative
  // solver may return as tiny negatives.
  const Vec3 v(0.3, -0.2, 0.9);
  const Mat3 m = v * v.transpose();
  const EigenDecomp3 d = eig_sym3(m);
  CHECK(d.lambdas(0) == doctest::Approx(v.squaredNorm()).epsilon(1e-12));
  CHECK(d.lambdas(1) >= 0.0);
  CHECK(d.lambdas(2) >= 0.0);
  CHECK(d.lambdas(1) <= 1e-12);
}

TEST_CASE("eig_sym3_floored floors eigenvalues and validates the floor") {
  std::mt19937_64 rng(1003);
  const Mat3 m = oracles::spd_from_eigenvalues(rng, Vec3(1.0, 0.1, 1e-9));
  const EigenDecomp3 d = eig_sym3_floored(m, 1e-4);
  CHECK(d.lambdas(2) == doctest::Approx(1e-4));
  CHECK(d.lambdas(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK_THROWS_AS(eig_sym3_floored(m, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(eig_sym3_floored(m, -1.0), std::invalid_argument);
}

TEST_CASE("skew matrix reproduces the cross product") {
  std::mt19937_64 rng(1004);
  for (int i = 0; i < 50; ++i) {
    const Vec3 w = oracles::uniform_vec(rng, -2.0, 2.0);
    const Vec3 v = oracles::uniform_vec(rng, -2.0, 2.0);
    CHECK((skew(w) * v - w.cross(v)).norm() < 1e-14);
    CHECK((skew(w) + skew(w).transpose()).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("small_angle_rotation stays in SO(3) across magnitudes") {
  std::mt19937_64 rng(1005);
  for (double mag : {1e-16, 1e-13, 1e-9, 1e-5, 1e-2, 0.3, 1.5, 3.0}) {
    const Vec3 omega = mag * oracles::uniform_vec(rng, -1.0, 1.0).normalized();
    const Mat3 r = small_angle_rotation(omega);
    CHECK(is_rotation(r, 1e-12));
    // Rotation angle equals |omega| (exact exponential map).
    RigidTransform t;
    t.rotation = r;
    if (mag >= 1e-9 && mag <= kPi) {
      CHECK(t.rotation_angle() == doctest::Approx(mag).epsilon(1e-6));
    }
  }
}

TEST_CASE("small_angle_rotation matches the axis-angle formula") {
  std::mt19937_64 rng(1006);
  for (int i = 0; i < 50; ++i) {
    const Vec3 omega = oracles::uniform_vec(rng, -1.0, 1.0);
    const double theta = omega.norm();
    const Vec3 axis = omega / theta;
    // Rodrigues formula assembled inline as the reference.
    const Mat3 k = skew(axis);
    const Mat3 ref = Mat3::Identity() + std::sin(theta) * k +
                     (1.0 - std::cos(theta)) * (k * k);
    CHECK((small_angle_rotation(omega) - ref).norm() < 1e-13);
  }
}

TEST_CASE("euler xyz composition order is Rx * Ry * Rz") {
  const double a = 0.3, b = -0.5, c = 0.9;
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  ry << std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b);
  rz << std::cos(c), -std::sin(c), 0, std::sin(c), std::cos(c), 0, 0, 0, 1;
  CHECK((rotation_from_euler_xyz(Vec3(a, b, c)) - rx * ry * rz).norm() <
        1e-14);
}

TEST_CASE("euler angles round-trip away from gimbal lock") {
  std::mt19937_64 rng(1007);
  for (int i = 0; i < 200; ++i) {
    const Vec3 angles(oracles::uniform(rng, -1.3, 1.3),
                      oracles::uniform(rng, -1.3, 1.3),
                      oracles::uniform(rng, -1.3, 1.3));
    const Mat3 r = rotation_from_euler_xyz(angles);
    CHECK(is_rotation(r, 1e-12));
    const Vec3 back = euler_xyz_from_rotation(r);
    CHECK((back - angles).norm() < 1e-9);
  }
}

TEST_CASE("euler extraction at gimbal lock still reproduces the rotation") {
  // Exact pitch-90 rotations, assembled entrywise so asin() sees exactly 1:
  // Rx(theta) * Ry(+pi/2) and Rx(theta) * Ry(-pi/2).
  const double theta = 0.83;
  const double s = std::sin(theta), c = std::cos(theta);
  Mat3 up, down;
  up << 0, 0, 1, s, c, 0, -c, s, 0;
  down << 0, 0, -1, -s, c, 0, c, s, 0;
  for (const Mat3& r : {up, down}) {
    REQUIRE(is_rotation(r, 1e-12));
    const Vec3 back = euler_xyz_from_rotation(r);
    CHECK(std::abs(std::abs(back[1]) - kPi / 2.0) < 1e-9);
    const Mat3 r2 = rotation_from_euler_xyz(back);
    CHECK((r - r2).norm() < 1e-9);
  }
}

TEST_CASE("rotation_error_deg is the mean absolute euler angle difference") {
  const Mat3 gt = Mat3::Identity();
  const Mat3 est = rotation_from_euler_xyz(Vec3(6.0 * kDegToRad, 0.0, 0.0));
  CHECK(rotation_error_deg(est, gt) == doctest::Approx(2.0).epsilon(1e-9));

  const Mat3 est2 = rotation_from_euler_xyz(
      Vec3(3.0 * kDegToRad, -6.0 * kDegToRad, 9.0 * kDegToRad));
  CHECK(rotation_error_deg(est2, gt) == doctest::Approx(6.0).epsilon(1e-9));

  CHECK(rotation_error_deg(gt, gt) == doctest::Approx(0.0));
  Mat3 not_rot = Mat3::Identity();
  not_rot(0, 0) = 2.0;
  CHECK_THROWS_AS(rotation_error_deg(not_rot, gt), std::invalid_argument);
}

TEST_CASE("rigid transform algebra") {
  std::mt19937_64 rng(1008);
  for (int i = 0; i < 50; ++i) {
    RigidTransform t;
    t.rotation = oracles::random_rotation(rng);
    t.translation = oracles::uniform_vec(rng, -2.0, 2.0);
    CHECK(t.is_valid(1e-9));

    const Vec3 p = oracles::uniform_vec(rng, -1.0, 1.0);
    CHECK((t(p) - (t.rotation * p + t.translation)).norm() < 1e-14);
    CHECK((se3_apply(t, p) - t(p)).norm() == doctest::Approx(0.0));

    // inverse composes to identity
    const RigidTransform inv = t.inverse();
    const RigidTransform id = inv * t;
    CHECK((id.rotation - Mat3::Identity()).norm() < 1e-12);
    CHECK(id.translation.norm() < 1e-12);

    // 4x4 matrix agrees with direct application
    const Eigen::Matrix4d m = t.matrix();
    Eigen::Vector4d hp;
    hp << p.x(), p.y(), p.z(), 1.0;
    CHECK(((m * hp).head<3>() - t(p)).norm() < 1e-13);
    CHECK(m(3, 0) == 0.0);
    CHECK(m(3, 3) == 1.0);

    // composition associates with application
    RigidTransform s;
    s.rotation = oracles::random_rotation(rng);
    s.translation = oracles::uniform_vec(rng, -2.0, 2.0);
    CHECK(((s * t)(p) - s(t(p))).norm() < 1e-12);
  }

  RigidTransform bad;
  bad.rotation = 2.0 * Mat3::Identity();
  CHECK_FALSE(bad.is_valid(1e-9));
}

TEST_CASE("rotation_angle recovers the geodesic angle") {
  std::mt19937_64 rng(1009);
  for (double ang : {0.0, 1e-8, 0.01, 0.5, 2.0, kPi - 1e-6}) {
    const Vec3 axis = oracles::uniform_vec(rng, -1.0, 1.0).normalized();
    RigidTransform t;
    t.rotation = small_angle_rotation(ang * axis);
    CHECK(t.rotation_angle() == doctest::Approx(ang).epsilon(1e-5));
  }
}
