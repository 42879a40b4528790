#pragma once

#include <cstdint>
#include <vector>

#include "treereg/geometry.hpp"
#include "treereg/gmm.hpp"
#include "treereg/point_cloud.hpp"

namespace treereg {

// Zeroth/first/second weighted moments of transformed input points, keyed
// by model component (tree node id or flat mixture index).
struct MomentSet {
  std::vector<double> m0;
  std::vector<Vec3> m1;
  std::vector<Mat3> m2;
  std::size_t total_points = 0;
  double total_mass = 0.0;
  std::size_t outliers = 0;
  std::uint64_t density_evaluations = 0;

  MomentSet() = default;
  explicit MomentSet(std::size_t n_components)
      : m0(n_components, 0.0),
        m1(n_components, Vec3::Zero()),
        m2(n_components, Mat3::Zero()) {}

  std::size_t components() const { return m0.size(); }
  void accumulate(std::size_t j, double gamma, const Vec3& z);
  void merge(const MomentSet& other);
};

struct AssocConfig {
  double lambda_c = 0.01;        // complexity threshold for early stop
  int max_level = 0;             // 0: search the full tree depth
  double outlier_floor = 1e-300; // density underflow guard
  bool deterministic = true;     // kept for interface parity; association
                                 // is deterministic under any worker count
};

// Dense E-step: full responsibilities of every point over every component.
// Points whose densities all underflow are skipped and counted as outliers.
MomentSet responsibilities_dense(const PointCloud& cloud,
                                 const std::vector<GaussianComponent>& components,
                                 const RigidTransform& t,
                                 double outlier_floor = 1e-300);

// Log-time E-step: per point, walk the tree level by level picking the most
// responsible sibling, stopping at the search depth, at a leaf, or when the
// chosen node is geometrically too simple (complexity ≤ lambda_c). The
// point deposits the product of sibling-normalized responsibilities along
// its path at the stopping node. At most 8·levels densities per point.
MomentSet associate_adaptive(const PointCloud& cloud, const GmmTree& tree,
                             const RigidTransform& t,
                             const AssocConfig& config);

}  // namespace treereg
