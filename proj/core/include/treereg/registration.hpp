#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treereg/association.hpp"
#include "treereg/geometry.hpp"
#include "treereg/gmm.hpp"
#include "treereg/point_cloud.hpp"

namespace treereg {

// Algorithm selector: hierarchical search with adaptive early stop, the
// same search always descending to the deepest level, a flat mixture with
// dense association, or nearest-neighbor point-to-point alignment.
struct Variant {
  enum class Kind { kAdaptive, kGmmTree, kFlatGmm, kIcpPointToPoint };
  Kind kind = Kind::kAdaptive;
  int param = 3;  // tree depth L or mixture size J; ignored for ICP

  // Accepts "adaptive:L", "tree:L", "flat:J", "icp".
  static Variant parse(const std::string& text);
  std::string name() const;  // e.g. "Adaptive L3", "GMM-Tree L2", "GMM J=512"
};

struct RegistrationConfig {
  Variant variant;
  double lambda_c = 0.01;         // adaptive early-stop threshold
  int max_em_iterations = 50;
  double rotation_tol = 1e-5;     // radians, on the per-iteration update
  double translation_tol = 1e-5;  // fraction of target bounding-box diagonal
  RigidTransform initial_transform = RigidTransform::identity();
  ModelConfig model_config;
  bool deterministic = true;
};

struct RegistrationResult {
  RigidTransform transform;  // maps source into the target frame
  int iterations = 0;
  bool converged = false;
  std::vector<double> criterion_trace;        // value entering each iteration
  std::vector<double> criterion_after_trace;  // value after each update
  std::vector<std::uint64_t> eval_counts;     // density evals per iteration
  double model_build_seconds = 0.0;
  double em_seconds = 0.0;
  std::size_t model_components = 0;
};

// Builds the model over `target` per config.variant and alternates
// association and the linearized solve until the per-iteration update falls
// below tolerance. Dispatches to the ICP baseline for that variant.
RegistrationResult register_clouds(const PointCloud& target,
                                   const PointCloud& source,
                                   const RegistrationConfig& config);

// Same EM loop against a prebuilt tree. `target_diag` scales the
// translation tolerance; pass 0 to estimate it from the tree's support.
RegistrationResult register_with_tree(const GmmTree& tree,
                                      const PointCloud& source,
                                      const RegistrationConfig& config,
                                      double target_diag = 0.0);

RegistrationResult register_icp_pt2pt(const PointCloud& target,
                                      const PointCloud& source,
                                      const RegistrationConfig& config);

// Bounding-box diagonal of mean ± 3 sigma boxes over the tree's finest
// nodes; stands in for the target extent when only the model is available.
double tree_extent_estimate(const GmmTree& tree);

}  // namespace treereg
