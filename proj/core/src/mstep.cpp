#include "treereg/mstep.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace treereg {

VirtualPointSet make_virtual_points(
    const MomentSet& moments,
    const std::vector<GaussianComponent>& components) {
  if (moments.components() != components.size()) {
    throw std::invalid_argument(
        "make_virtual_points: moment/component count mismatch");
  }
  if (moments.total_points == 0) {
    throw std::invalid_argument("make_virtual_points: no points were associated");
  }
  const double n = static_cast<double>(moments.total_points);
  const double floor_mass = kMassFloorRel * n;
  VirtualPointSet vps;
  for (std::size_t j = 0; j < components.size(); ++j) {
    if (moments.m0[j] <= floor_mass) continue;
    VirtualPoint vp;
    vp.pi_star = moments.m0[j] / n;
    vp.mu_star = moments.m1[j] / moments.m0[j];
    vp.component = &components[j];
    vps.points.push_back(vp);
  }
  return vps;
}

double criterion(const VirtualPointSet& vps, const RigidTransform& t) {
  double total = 0.0;
  for (const VirtualPoint& vp : vps.points) {
    const GaussianComponent& g = *vp.component;
    const Vec3 d = t(vp.mu_star) - g.mean;
    for (int l = 0; l < 3; ++l) {
      const double lambda = g.eig.lambdas(l);
      if (!(lambda > 0.0)) {
        throw std::domain_error("criterion: non-positive eigenvalue");
      }
      const double r = g.eig.axis(l).dot(d);
      total += vp.pi_star / lambda * r * r;
    }
  }
  return total;
}

MStepSolution solve_mstep(const VirtualPointSet& vps) {
  if (vps.size() < 3) {
    throw DegenerateGeometryError(
        "solve_mstep: fewer than 3 contributing components");
  }
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  Mat6 ata = Mat6::Zero();
  Vec6 atb = Vec6::Zero();
  for (const VirtualPoint& vp : vps.points) {
    const GaussianComponent& g = *vp.component;
    const double lambda_floor = kWeightingFloorRel * g.eig.lambdas(0);
    for (int l = 0; l < 3; ++l) {
      const double lambda = std::max(g.eig.lambdas(l), lambda_floor);
      if (!(lambda > 0.0)) {
        throw std::domain_error("solve_mstep: non-positive eigenvalue");
      }
      const double w = std::sqrt(vp.pi_star / lambda);
      const Vec3 nrm = g.eig.axis(l);
      Vec6 row;
      row.head<3>() = w * vp.mu_star.cross(nrm);
      row.tail<3>() = w * nrm;
      const double rhs = w * nrm.dot(g.mean - vp.mu_star);
      ata.noalias() += row * row.transpose();
      atb.noalias() += row * rhs;
    }
  }

  Eigen::SelfAdjointEigenSolver<Mat6> es(ata);
  const double lambda_min = es.eigenvalues()(0);
  const double lambda_max = es.eigenvalues()(5);
  const double cond = lambda_min > 0.0
                          ? lambda_max / lambda_min
                          : std::numeric_limits<double>::infinity();
  if (!(cond < kConditionLimit)) {
    throw DegenerateGeometryError(
        "solve_mstep: normal equations condition estimate " +
        std::to_string(cond) + " exceeds limit");
  }

  const Vec6 x = ata.ldlt().solve(atb);
  MStepSolution sol;
  sol.omega = x.head<3>();
  sol.translation = x.tail<3>();
  sol.delta.rotation = small_angle_rotation(sol.omega);
  sol.delta.translation = sol.translation;
  sol.condition_estimate = cond;
  sol.criterion_before = criterion(vps, RigidTransform::identity());
  sol.criterion_after = criterion(vps, sol.delta);
  return sol;
}

}  // namespace treereg
