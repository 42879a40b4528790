#pragma once

#include <string>
#include <vector>

#include "treereg/geometry.hpp"

namespace treereg {

/// Ordered list of 3D points. Units are whatever the source used (meters for
/// LiDAR/depth sensors, model units for meshes).
struct PointCloud {
  std::vector<Vec3> points;
  std::string source_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  Vec3 centroid() const;

  /// Axis-aligned bounding box as (min, max). Zero extent for empty clouds.
  std::pair<Vec3, Vec3> bounding_box() const;

  /// Length of the bounding-box diagonal.
  double bbox_diagonal() const;

  bool all_finite() const;
};

PointCloud transformed(const PointCloud& cloud, const RigidTransform& t);

/// Center the cloud at its centroid and scale so the bounding-box diagonal
/// is 1. Degenerate clouds (zero diagonal) are centered only.
PointCloud unit_normalized(const PointCloud& cloud);

}  // namespace treereg
