#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "test_support.hpp"
#include "treereg/cloud_io.hpp"
#include "treereg/synthetic.hpp"

using namespace treereg;
using test_support::TempDir;

namespace {

PointCloud small_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PointCloud c;
  c.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back(oracles::uniform_vec(rng, -1.5, 1.5));
  }
  return c;
}

bool clouds_equal(const PointCloud& a, const PointCloud& b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a.points[i] - b.points[i]).norm() > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("write/read round trip is bit exact for every format") {
  TempDir dir("io_roundtrip");
  const PointCloud cloud = small_cloud(257, 7);
  const struct {
    const char* name;
    CloudFormat fmt;
  } cases[] = {{"c.xyz", CloudFormat::kXyzText},
               {"c_ascii.ply", CloudFormat::kPlyAscii},
               {"c_bin.ply", CloudFormat::kPlyBinaryLe}};
  for (const auto& cs : cases) {
    CAPTURE(cs.name);
    const auto p = dir.file(cs.name);
    write_cloud(cloud, p, cs.fmt);
    const PointCloud back = read_cloud(p, cs.fmt);
    CHECK(clouds_equal(cloud, back, 0.0));
    // Format auto-detection reads the same data.
    const PointCloud sniffed = read_cloud(p);
    CHECK(clouds_equal(cloud, sniffed, 0.0));
  }
}

TEST_CASE("read_cloud rejects a format mismatch") {
  TempDir dir("io_mismatch");
  const PointCloud cloud = small_cloud(10, 1);
  const auto p = dir.file("c.ply");
  write_cloud(cloud, p, CloudFormat::kPlyBinaryLe);
  CHECK_THROWS_AS(read_cloud(p, CloudFormat::kPlyAscii), ParseError);
}

TEST_CASE("write_cloud rejects empty clouds, read_cloud missing files") {
  TempDir dir("io_empty");
  PointCloud empty;
  CHECK_THROWS_AS(write_cloud(empty, dir.file("e.xyz"), CloudFormat::kXyzText),
                  std::invalid_argument);
  CHECK_THROWS(read_cloud(dir.file("does_not_exist.ply")));
}

TEST_CASE("malformed ply inputs raise ParseError with a byte offset") {
  TempDir dir("io_malformed");
  const auto check_throws = [&](const std::string& name,
                                const std::string& body) {
    const auto p = dir.file(name);
    test_support::write_text(p, body);
    CAPTURE(name);
    bool threw = false;
    try {
      read_cloud(p);
    } catch (const ParseError& e) {
      threw = true;
      CHECK(e.byte_offset <= body.size());
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
    CHECK(threw);
  };

  check_throws("bad_magic.ply", "plx\nformat ascii 1.0\nend_header\n");
  check_throws("no_end.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n");
  check_throws("truncated.ply",
               "ply\nformat ascii 1.0\nelement vertex 3\n"
               "property float x\nproperty float y\nproperty float z\n"
               "end_header\n0 0 0\n1 1 1\n");
  check_throws("bad_number.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n"
               "end_header\n0 zero 0\n");
  check_throws("nonfinite.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property double x\nproperty double y\nproperty double z\n"
               "end_header\nnan 0 0\n");
  check_throws("missing_z.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\n"
               "end_header\n0 0\n");
  check_throws("bad_format.ply",
               "ply\nformat binary_big_endian 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n"
               "end_header\n");
}

TEST_CASE("ascii ply with extra vertex properties and other elements") {
  TempDir dir("io_extra");
  const std::string body =
      "ply\nformat ascii 1.0\ncomment made by hand\n"
      "element vertex 2\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\n"
      "element face 1\nproperty list uchar int vertex_indices\n"
      "end_header\n"
      "1 2 3 255\n4 5 6 0\n3 0 1 0\n";
  const auto p = dir.file("extra.ply");
  test_support::write_text(p, body);
  const PointCloud c = read_cloud(p);
  REQUIRE(c.size() == 2);
  CHECK((c.points[0] - Vec3(1, 2, 3)).norm() < 1e-6);
  CHECK((c.points[1] - Vec3(4, 5, 6)).norm() < 1e-6);
}

TEST_CASE("xyz text accepts comments and blank lines, rejects junk") {
  TempDir dir("io_xyz");
  test_support::write_text(dir.file("ok.xyz"),
                           "# comment\n\n0.5 -1 2\n 1 2 3 \n");
  const PointCloud c = read_cloud(dir.file("ok.xyz"));
  REQUIRE(c.size() == 2);
  CHECK((c.points[0] - Vec3(0.5, -1, 2)).norm() == doctest::Approx(0.0));

  test_support::write_text(dir.file("junk.xyz"), "1 2 3\nfoo bar baz\n");
  CHECK_THROWS_AS(read_cloud(dir.file("junk.xyz")), ParseError);
  test_support::write_text(dir.file("short.xyz"), "1 2\n");
  CHECK_THROWS_AS(read_cloud(dir.file("short.xyz")), ParseError);
  test_support::write_text(dir.file("inf.xyz"), "1 2 inf\n");
  CHECK_THROWS_AS(read_cloud(dir.file("inf.xyz")), ParseError);
}

TEST_CASE("subsample: exact size, no duplicates, order kept, deterministic") {
  const PointCloud cloud = small_cloud(400, 11);
  const PointCloud s1 = subsample(cloud, 100, 5);
  const PointCloud s2 = subsample(cloud, 100, 5);
  const PointCloud s3 = subsample(cloud, 100, 6);
  REQUIRE(s1.size() == 100);
  CHECK(clouds_equal(s1, s2, 0.0));
  CHECK_FALSE(clouds_equal(s1, s3, 0.0));

  // Every sampled point exists in the source, in source order.
  std::size_t cursor = 0;
  for (const Vec3& p : s1.points) {
    while (cursor < cloud.size() && (cloud.points[cursor] - p).norm() != 0.0) {
      ++cursor;
    }
    CHECK(cursor < cloud.size());
    ++cursor;
  }

  // Requesting the full size returns the cloud unchanged; out-of-range
  // requests are rejected rather than silently clamped.
  const PointCloud all = subsample(cloud, 400, 1);
  CHECK(clouds_equal(all, cloud, 0.0));
  CHECK_THROWS_AS(subsample(cloud, 1000, 1), std::invalid_argument);
  CHECK_THROWS_AS(subsample(cloud, 0, 1), std::invalid_argument);
}

TEST_CASE("random_rigid_transform respects per-axis ranges") {
  SyntheticTransformSpec spec;
  spec.rot_range_deg = 15.0;
  spec.trans_range = 0.05;
  spec.seed = 99;
  spec.trials = 50;
  constexpr double kRadToDeg = 57.29577951308232;
  bool any_nonzero = false;
  for (int trial = 0; trial < 50; ++trial) {
    const RigidTransform t = random_rigid_transform(spec, trial);
    CHECK(t.is_valid(1e-9));
    const Vec3 euler = euler_xyz_from_rotation(t.rotation) * kRadToDeg;
    for (int a = 0; a < 3; ++a) {
      CHECK(std::abs(euler[a]) <= 15.0 + 1e-9);
      CHECK(std::abs(t.translation[a]) <= 0.05 + 1e-12);
    }
    if (t.translation.norm() > 0.0) any_nonzero = true;
    // Deterministic per (seed, trial).
    const RigidTransform again = random_rigid_transform(spec, trial);
    CHECK((t.rotation - again.rotation).norm() == 0.0);
    CHECK((t.translation - again.translation).norm() == 0.0);
  }
  CHECK(any_nonzero);

  // Distinct trials yield distinct transforms.
  const RigidTransform a = random_rigid_transform(spec, 0);
  const RigidTransform b = random_rigid_transform(spec, 1);
  CHECK((a.rotation - b.rotation).norm() > 0.0);

  // Zero ranges give the identity; trials outside the spec are rejected.
  SyntheticTransformSpec zero;
  zero.rot_range_deg = 0.0;
  zero.trans_range = 0.0;
  const RigidTransform id = random_rigid_transform(zero, 0);
  CHECK((id.rotation - Mat3::Identity()).norm() < 1e-15);
  CHECK(id.translation.norm() == 0.0);
  CHECK_THROWS_AS(random_rigid_transform(zero, 1), std::invalid_argument);
  CHECK_THROWS_AS(random_rigid_transform(zero, -1), std::invalid_argument);
}

TEST_CASE("synthetic cloud URIs") {
  CHECK(is_synthetic_uri("synthetic:lumpy:100:3"));
  CHECK_FALSE(is_synthetic_uri("/data/cloud.ply"));

  const PointCloud lumpy = make_synthetic("synthetic:lumpy:500:3");
  CHECK(lumpy.size() == 500);
  CHECK(lumpy.all_finite());
  const PointCloud again = make_synthetic("synthetic:lumpy:500:3");
  CHECK(clouds_equal(lumpy, again, 0.0));
  const PointCloud other_seed = make_synthetic("synthetic:lumpy:500:4");
  CHECK_FALSE(clouds_equal(lumpy, other_seed, 0.0));

  for (const char* kind : {"blobs", "plane", "sphere", "scene", "identical"}) {
    CAPTURE(kind);
    const PointCloud c =
        make_synthetic(std::string("synthetic:") + kind + ":300:1");
    CHECK(c.size() == 300);
    CHECK(c.all_finite());
  }

  CHECK_THROWS_AS(make_synthetic("synthetic:nope:10:1"),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic("synthetic:lumpy:10"), std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic("synthetic:lumpy:x:1"),
                  std::invalid_argument);
}

TEST_CASE("synthetic fixtures have their advertised shapes") {
  // Plane: exactly planar (zero z).
  const PointCloud plane = synthetic_plane(200, 5);
  for (const Vec3& p : plane.points) CHECK(p.z() == 0.0);

  // Sphere: unit radius.
  const PointCloud sphere = synthetic_sphere(200, 5);
  for (const Vec3& p : sphere.points) {
    CHECK(p.norm() == doctest::Approx(1.0).epsilon(1e-9));
  }

  // Identical: zero diagonal.
  const PointCloud same = synthetic_identical(50, Vec3(1, 2, 3));
  CHECK(same.bbox_diagonal() == 0.0);
  CHECK((same.points[49] - Vec3(1, 2, 3)).norm() == 0.0);

  // Lumpy: closed surface around the centroid, radius bounded away from 0.
  const PointCloud lumpy = synthetic_lumpy(500, 5);
  const Vec3 c = lumpy.centroid();
  for (const Vec3& p : lumpy.points) {
    const double r = (p - c).norm();
    CHECK(r > 0.1);
    CHECK(r < 1.2);
  }
}
