#pragma once

#include <stdexcept>
#include <vector>

#include "treereg/association.hpp"
#include "treereg/geometry.hpp"
#include "treereg/gmm.hpp"

namespace treereg {

// Raised when the weighted system does not constrain all six degrees of
// freedom; callers fall back to an identity update and flag the failure.
struct DegenerateGeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One associated component: its share of the input mass and the weighted
// mean of the transformed points assigned to it. `component` points into
// the model that produced the moments and must outlive the set.
struct VirtualPoint {
  double pi_star = 0.0;
  Vec3 mu_star = Vec3::Zero();
  const GaussianComponent* component = nullptr;
};

struct VirtualPointSet {
  std::vector<VirtualPoint> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

// Components with less than this fraction of the cloud's points are left
// out of the solve.
inline constexpr double kMassFloorRel = 1e-8;

// Eigenvalues are floored at this fraction of the component's largest
// eigenvalue when used as inverse weights, so planar components cannot
// blow up the system.
inline constexpr double kWeightingFloorRel = 1e-6;

// Condition-estimate limit for the 6x6 normal equations.
inline constexpr double kConditionLimit = 1e12;

VirtualPointSet make_virtual_points(
    const MomentSet& moments, const std::vector<GaussianComponent>& components);

// Weighted sum over components of squared Mahalanobis distance between the
// transformed virtual point and the component mean, evaluated in the
// covariance eigenbasis: sum_j sum_l (pi*_j/lambda_jl) (n_jl . (T(mu*_j) - mu_j))^2.
double criterion(const VirtualPointSet& vps, const RigidTransform& t);

struct MStepSolution {
  Vec3 omega = Vec3::Zero();        // small-angle rotation parameters
  Vec3 translation = Vec3::Zero();
  RigidTransform delta;             // exp(omega), translation
  double criterion_before = 0.0;    // criterion at identity
  double criterion_after = 0.0;     // criterion at delta
  double condition_estimate = 0.0;  // for the 6x6 normal equations
};

// One linearized solve of the weighted point-to-plane system: each
// component contributes three rows, one per covariance eigenpair, with
// weight sqrt(pi*_j / lambda_jl). Throws DegenerateGeometryError when the
// geometry does not pin down all six parameters.
MStepSolution solve_mstep(const VirtualPointSet& vps);

}  // namespace treereg
