#include "treereg/registration.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "treereg/kdtree.hpp"
#include "treereg/mstep.hpp"
#include "treereg/parallel.hpp"

namespace treereg {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

void validate(const PointCloud& target, const PointCloud& source,
              const RegistrationConfig& cfg) {
  if (target.empty() || source.empty()) {
    throw std::invalid_argument("register: empty cloud");
  }
  if (!target.all_finite() || !source.all_finite()) {
    throw std::invalid_argument("register: non-finite coordinates");
  }
  if (!(cfg.rotation_tol > 0.0) || !(cfg.translation_tol > 0.0)) {
    throw std::invalid_argument("register: tolerances must be positive");
  }
  if (cfg.max_em_iterations < 1) {
    throw std::invalid_argument("register: max_em_iterations must be >= 1");
  }
  if (cfg.variant.kind != Variant::Kind::kIcpPointToPoint &&
      cfg.variant.param < 1) {
    throw std::invalid_argument("register: variant parameter must be >= 1");
  }
  if (!cfg.initial_transform.is_valid(1e-9)) {
    throw std::invalid_argument("register: invalid initial transform");
  }
}

// Shared EM loop: estep(T) produces moments over `components`; deltas from
// the linearized solve compose onto the running transform from the left.
RegistrationResult em_loop(
    const std::function<MomentSet(const RigidTransform&)>& estep,
    const std::vector<GaussianComponent>& components, double target_diag,
    const RegistrationConfig& cfg) {
  RegistrationResult result;
  result.transform = cfg.initial_transform;
  result.model_components = components.size();
  const double trans_limit = cfg.translation_tol * target_diag;
  int consecutive_failures = 0;
  const auto start = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.max_em_iterations; ++it) {
    const MomentSet moments = estep(result.transform);
    result.eval_counts.push_back(moments.density_evaluations);
    const VirtualPointSet vps = make_virtual_points(moments, components);
    ++result.iterations;
    try {
      const MStepSolution sol = solve_mstep(vps);
      result.criterion_trace.push_back(sol.criterion_before);
      result.criterion_after_trace.push_back(sol.criterion_after);
      result.transform = sol.delta * result.transform;
      consecutive_failures = 0;
      if (sol.delta.rotation_angle() < cfg.rotation_tol &&
          sol.translation.norm() < trans_limit) {
        result.converged = true;
        break;
      }
    } catch (const DegenerateGeometryError&) {
      const double before = criterion(vps, RigidTransform::identity());
      result.criterion_trace.push_back(before);
      result.criterion_after_trace.push_back(before);
      if (++consecutive_failures >= 3) break;
    }
  }
  result.em_seconds = seconds_since(start);
  return result;
}

}  // namespace

Variant Variant::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  Variant v;
  if (head == "icp") {
    if (colon != std::string::npos) {
      throw std::invalid_argument("variant 'icp' takes no parameter");
    }
    v.kind = Kind::kIcpPointToPoint;
    v.param = 0;
    return v;
  }
  if (head == "adaptive") {
    v.kind = Kind::kAdaptive;
  } else if (head == "tree") {
    v.kind = Kind::kGmmTree;
  } else if (head == "flat") {
    v.kind = Kind::kFlatGmm;
  } else {
    throw std::invalid_argument(
        "unknown variant '" + text +
        "' (expected adaptive:L, tree:L, flat:J, or icp)");
  }
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw std::invalid_argument("variant '" + head +
                                "' needs a parameter, e.g. " + head + ":3");
  }
  try {
    std::size_t used = 0;
    v.param = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad variant parameter in '" + text + "'");
  }
  if (v.param < 1) {
    throw std::invalid_argument("variant parameter must be >= 1");
  }
  return v;
}

std::string Variant::name() const {
  switch (kind) {
    case Kind::kAdaptive:
      return "Adaptive L" + std::to_string(param);
    case Kind::kGmmTree:
      return "GMM-Tree L" + std::to_string(param);
    case Kind::kFlatGmm:
      return "GMM J=" + std::to_string(param);
    case Kind::kIcpPointToPoint:
      return "ICP";
  }
  return "?";
}

double tree_extent_estimate(const GmmTree& tree) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (!tree.is_leaf(static_cast<int>(i))) continue;
    const GaussianComponent& g = tree.nodes[i];
    const double r = 3.0 * std::sqrt(std::max(g.eig.lambdas(0), 0.0));
    lo = lo.cwiseMin(g.mean - Vec3::Constant(r));
    hi = hi.cwiseMax(g.mean + Vec3::Constant(r));
  }
  return (hi - lo).norm();
}

RegistrationResult register_with_tree(const GmmTree& tree,
                                      const PointCloud& source,
                                      const RegistrationConfig& cfg,
                                      double target_diag) {
  if (source.empty() || !source.all_finite()) {
    throw std::invalid_argument("register: bad source cloud");
  }
  const double diag =
      target_diag > 0.0 ? target_diag : tree_extent_estimate(tree);
  AssocConfig assoc;
  assoc.lambda_c =
      cfg.variant.kind == Variant::Kind::kGmmTree ? 0.0 : cfg.lambda_c;
  assoc.max_level = 0;  // full depth
  assoc.deterministic = cfg.deterministic;
  return em_loop(
      [&](const RigidTransform& t) {
        return associate_adaptive(source, tree, t, assoc);
      },
      tree.nodes, diag, cfg);
}

RegistrationResult register_clouds(const PointCloud& target,
                                   const PointCloud& source,
                                   const RegistrationConfig& cfg) {
  validate(target, source, cfg);
  const auto start = std::chrono::steady_clock::now();
  switch (cfg.variant.kind) {
    case Variant::Kind::kAdaptive:
    case Variant::Kind::kGmmTree: {
      ModelConfig mc = cfg.model_config;
      mc.max_level = cfg.variant.param;
      const GmmTree tree = build_tree(target, mc);
      const double build_s = seconds_since(start);
      RegistrationResult result =
          register_with_tree(tree, source, cfg, target.bbox_diagonal());
      result.model_build_seconds = build_s;
      return result;
    }
    case Variant::Kind::kFlatGmm: {
      const std::vector<GaussianComponent> mixture = build_flat_gmm(
          target, static_cast<std::size_t>(cfg.variant.param),
          cfg.model_config);
      const double build_s = seconds_since(start);
      const double floor = AssocConfig{}.outlier_floor;
      RegistrationResult result = em_loop(
          [&](const RigidTransform& t) {
            return responsibilities_dense(source, mixture, t, floor);
          },
          mixture, target.bbox_diagonal(), cfg);
      result.model_build_seconds = build_s;
      return result;
    }
    case Variant::Kind::kIcpPointToPoint:
      return register_icp_pt2pt(target, source, cfg);
  }
  throw std::logic_error("register: unreachable variant");
}

RegistrationResult register_icp_pt2pt(const PointCloud& target,
                                      const PointCloud& source,
                                      const RegistrationConfig& cfg) {
  validate(target, source, cfg);
  const auto build_start = std::chrono::steady_clock::now();
  const KdTree3 index(target.points);
  RegistrationResult result;
  result.model_build_seconds = seconds_since(build_start);
  result.transform = cfg.initial_transform;
  result.model_components = target.size();
  const double trans_limit = cfg.translation_tol * target.bbox_diagonal();
  const std::size_t n = source.size();
  const std::size_t n_chunks = parallel::chunk_count(n);

  struct Accum {
    Vec3 sum_y = Vec3::Zero();
    Vec3 sum_q = Vec3::Zero();
    Mat3 sum_yq = Mat3::Zero();
    double sq_dist = 0.0;
  };

  std::vector<std::uint32_t> corr(n);
  const auto start = std::chrono::steady_clock::now();
  for (int it = 0; it < cfg.max_em_iterations; ++it) {
    std::vector<Accum> partial(n_chunks);
    parallel::for_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
      Accum a;
      for (std::size_t i = b; i < e; ++i) {
        const Vec3 y = result.transform(source.points[i]);
        corr[i] = static_cast<std::uint32_t>(index.nearest(y));
        const Vec3& q = target.points[corr[i]];
        a.sum_y += y;
        a.sum_q += q;
        a.sum_yq += y * q.transpose();
        a.sq_dist += (y - q).squaredNorm();
      }
      partial[c] = a;
    });
    Accum total;
    for (const Accum& a : partial) {
      total.sum_y += a.sum_y;
      total.sum_q += a.sum_q;
      total.sum_yq += a.sum_yq;
      total.sq_dist += a.sq_dist;
    }
    const double dn = static_cast<double>(n);
    const Vec3 yc = total.sum_y / dn;
    const Vec3 qc = total.sum_q / dn;
    const Mat3 h = total.sum_yq - dn * (yc * qc.transpose());

    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixV() * svd.matrixU().transpose();
    if (r.determinant() < 0.0) {
      Mat3 flip = Mat3::Identity();
      flip(2, 2) = -1.0;
      r = svd.matrixV() * flip * svd.matrixU().transpose();
    }
    RigidTransform delta;
    delta.rotation = r;
    delta.translation = qc - r * yc;

    ++result.iterations;
    result.eval_counts.push_back(0);
    result.criterion_trace.push_back(total.sq_dist / dn);
    // Mean squared distance after the update, over the correspondences the
    // update was computed from.
    std::vector<double> after_partial(n_chunks, 0.0);
    parallel::for_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
      double s = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const Vec3 y = result.transform(source.points[i]);
        s += (delta(y) - target.points[corr[i]]).squaredNorm();
      }
      after_partial[c] = s;
    });
    double after = 0.0;
    for (double v : after_partial) after += v;
    result.criterion_after_trace.push_back(after / dn);
    result.transform = delta * result.transform;
    if (delta.rotation_angle() < cfg.rotation_tol &&
        delta.translation.norm() < trans_limit) {
      result.converged = true;
      break;
    }
  }
  result.em_seconds = seconds_since(start);
  return result;
}

}  // namespace treereg
