#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "treereg/geometry.hpp"
#include "treereg/point_cloud.hpp"

namespace treereg {

struct GaussianComponent {
  // Mixture weight: conditional on the parent for tree nodes (siblings sum
  // to 1; level-0 nodes hang off a virtual root, so theirs are absolute),
  // absolute for flat mixtures.
  double weight = 0.0;
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  EigenDecomp3 eig;      // decomposition of cov, eigenvalues descending
  double log_norm = 0.0; // -(3 ln 2pi + ln det cov) / 2, kept with eig

  void refresh_eig();
};

// log N(x; mean, cov) using the cached eigendecomposition.
double log_density(const GaussianComponent& g, const Vec3& x);
double density(const GaussianComponent& g, const Vec3& x);

// Smallest eigenvalue over trace, in [0, 1/3]: near 0 for planar mass,
// 1/3 for isotropic. Throws if the matrix has no positive trace.
double node_complexity(const EigenDecomp3& eig);
double node_complexity(const Mat3& cov);

struct ModelConfig {
  int em_iterations_per_node = 8;
  std::size_t min_points_per_node = 32;
  double cov_regularization_epsilon = 1e-4;
  double cov_regularization_absolute = 1e-12;
  std::uint64_t rng_seed = 0;
  int max_level = 3;
};

struct BuildDiagnostics {
  // Weighted log-likelihood trace of each local EM fit, in build order.
  std::vector<std::vector<double>> node_ll_traces;
  // Largest parameter change in the final leaf-calibration pass (see
  // build_tree); ~0 when the hard assignment reached a fixed point.
  double calibration_drift = 0.0;
};

// Hierarchical mixture stored as flat arrays. Levels run 0..max_level-1;
// level 0 is itself a mixture whose weights sum to 1, and the children of
// any node occupy a contiguous index range. Sibling weights sum to 1 under
// every parent, and every parent's (mean, cov) equal the moment match of
// its children's mixture.
struct GmmTree {
  std::vector<GaussianComponent> nodes;
  std::vector<int> parent;       // -1 for level-0 nodes
  std::vector<int> first_child;  // -1 for leaves
  std::vector<int> child_count;  // 0 for leaves
  std::vector<int> level;
  int max_level = 0;

  std::size_t size() const { return nodes.size(); }
  bool is_leaf(int i) const { return child_count[i] == 0; }
  std::vector<int> level_nodes(int l) const;
};

GmmTree build_tree(const PointCloud& cloud, const ModelConfig& config,
                   BuildDiagnostics* diagnostics = nullptr);

// Single-level mixture of j components fit by EM from a distance-squared
// weighted seeding, used as the non-hierarchical reference model.
std::vector<GaussianComponent> build_flat_gmm(
    const PointCloud& cloud, std::size_t j, const ModelConfig& config,
    BuildDiagnostics* diagnostics = nullptr);

// Largest relative discrepancy between any parent and the moment match of
// its children, over weight, mean, and covariance. Zero-ish for a valid tree.
double tree_moment_mismatch(const GmmTree& tree);

void save_tree(const GmmTree& tree, const std::filesystem::path& path);
GmmTree load_tree(const std::filesystem::path& path);

}  // namespace treereg
