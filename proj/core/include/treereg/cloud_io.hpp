#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "treereg/point_cloud.hpp"

namespace treereg {

enum class CloudFormat {
  kPlyAscii,
  kPlyBinaryLe,  // binary_little_endian
  kXyzText,
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) +
                           ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

/// Reads a point cloud, requiring the file to match `format`. PLY vertex
/// elements must declare float or double x/y/z properties; other vertex
/// properties are skipped and non-vertex elements are ignored. Binary PLY is
/// little-endian only. Malformed or truncated input raises ParseError with a
/// byte offset; non-finite coordinates are rejected.
PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format);

/// Reads a point cloud, detecting the format from the header (PLY) or the
/// extension (.xyz/.txt -> xyz text).
PointCloud read_cloud(const std::filesystem::path& path);

/// Inverse of read_cloud for the supported formats. Coordinates are written
/// as float64, so a write/read round trip is bit exact. Throws
/// std::invalid_argument for empty clouds and std::runtime_error on I/O
/// failure.
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                 CloudFormat format);

/// Uniform random sample of n points without replacement, deterministic for a
/// fixed seed, output ordered by original index.
PointCloud subsample(const PointCloud& cloud, std::size_t n,
                     std::uint64_t seed);

/// Random ground-truth transform generator: per-axis uniform rotation and
/// translation ranges, one deterministic stream per (seed, trial).
struct SyntheticTransformSpec {
  double rot_range_deg = 15.0;  // per-axis uniform half-range in degrees
  double trans_range = 0.05;    // per-axis uniform half-range
  std::uint64_t seed = 0;
  int trials = 1;
};

/// Trial transform: three intrinsic X-Y-Z Euler angles uniform in
/// +-rot_range_deg and a translation componentwise uniform in +-trans_range.
RigidTransform random_rigid_transform(const SyntheticTransformSpec& spec,
                                      int trial);

}  // namespace treereg
