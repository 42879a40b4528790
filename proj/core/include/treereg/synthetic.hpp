#pragma once

#include <cstdint>
#include <string>

#include "treereg/point_cloud.hpp"

namespace treereg {

// Deterministic procedural clouds for tests and dataset-free benchmark runs.

// Eight tight Gaussian blobs at the corners of the unit cube; n points are
// spread as evenly as possible across the blobs.
PointCloud synthetic_blobs(std::size_t n, double sigma, std::uint64_t seed);

// Uniform samples of the unit square in the z = 0 plane (exactly planar).
PointCloud synthetic_plane(std::size_t n, std::uint64_t seed);

// Uniform samples of the unit sphere surface.
PointCloud synthetic_sphere(std::size_t n, std::uint64_t seed);

// Room-like scene with three mutually orthogonal walls, a box, a ball, and
// a slanted panel; surface normals span many directions, so registration
// against it is well-posed in all six degrees of freedom.
PointCloud synthetic_scene(std::size_t n, std::uint64_t seed);

// Closed lumpy surface (a sphere deformed by low-order angular harmonics):
// compact, asymmetric, and curved everywhere, so pose recovery against it
// has a single deep optimum — the preferred fixture for registration
// accuracy tests. Radius ~0.5 before unit normalization, noise sigma 0.002.
PointCloud synthetic_lumpy(std::size_t n, std::uint64_t seed);

// n copies of a single location.
PointCloud synthetic_identical(std::size_t n, const Vec3& at);

// "synthetic:<kind>:<n>:<seed>" with kind in
// {blobs, plane, sphere, scene, lumpy, identical},
// e.g. "synthetic:scene:5000:7".
bool is_synthetic_uri(const std::string& text);
PointCloud make_synthetic(const std::string& uri);

}  // namespace treereg
