#include "treereg/association.hpp"

#include <cmath>
#include <stdexcept>

#include "treereg/parallel.hpp"

namespace treereg {

void MomentSet::accumulate(std::size_t j, double gamma, const Vec3& z) {
  if (j >= m0.size()) {
    throw std::out_of_range("MomentSet::accumulate: unknown component id");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("MomentSet::accumulate: gamma outside [0,1]");
  }
  if (!z.allFinite()) {
    throw std::invalid_argument("MomentSet::accumulate: non-finite point");
  }
  m0[j] += gamma;
  m1[j] += gamma * z;
  m2[j] += gamma * (z * z.transpose());
  total_mass += gamma;
}

void MomentSet::merge(const MomentSet& other) {
  if (other.m0.size() != m0.size()) {
    throw std::invalid_argument("MomentSet::merge: component count mismatch");
  }
  for (std::size_t j = 0; j < m0.size(); ++j) {
    m0[j] += other.m0[j];
    m1[j] += other.m1[j];
    m2[j] += other.m2[j];
  }
  total_points += other.total_points;
  total_mass += other.total_mass;
  outliers += other.outliers;
  density_evaluations += other.density_evaluations;
}

namespace {

void validate_inputs(const PointCloud& cloud, std::size_t n_components) {
  if (cloud.empty()) {
    throw std::invalid_argument("association: empty point cloud");
  }
  if (n_components == 0) {
    throw std::invalid_argument("association: empty model");
  }
}

}  // namespace

MomentSet responsibilities_dense(const PointCloud& cloud,
                                 const std::vector<GaussianComponent>& components,
                                 const RigidTransform& t,
                                 double outlier_floor) {
  validate_inputs(cloud, components.size());
  const std::size_t nc = components.size();
  const std::size_t n = cloud.size();
  const std::size_t n_chunks = parallel::chunk_count(n);
  std::vector<MomentSet> partial(n_chunks, MomentSet(nc));
  parallel::for_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
    MomentSet& out = partial[c];
    std::vector<double> scores(nc);
    for (std::size_t i = b; i < e; ++i) {
      const Vec3 y = t(cloud.points[i]);
      double sum = 0.0;
      for (std::size_t j = 0; j < nc; ++j) {
        scores[j] = components[j].weight > 0.0
                        ? components[j].weight * density(components[j], y)
                        : 0.0;
        sum += scores[j];
      }
      out.density_evaluations += nc;
      out.total_points += 1;
      if (!(sum > outlier_floor)) {
        out.outliers += 1;
        continue;
      }
      for (std::size_t j = 0; j < nc; ++j) {
        if (scores[j] > 0.0) out.accumulate(j, scores[j] / sum, y);
      }
    }
  });
  MomentSet result(nc);
  for (const MomentSet& p : partial) result.merge(p);
  return result;
}

MomentSet associate_adaptive(const PointCloud& cloud, const GmmTree& tree,
                             const RigidTransform& t,
                             const AssocConfig& config) {
  validate_inputs(cloud, tree.size());
  if (!(config.lambda_c >= 0.0 && config.lambda_c <= 1.0 / 3.0)) {
    throw std::invalid_argument("association: lambda_c outside [0, 1/3]");
  }
  const int depth =
      config.max_level == 0 ? tree.max_level : config.max_level;
  if (depth < 1 || depth > tree.max_level) {
    throw std::invalid_argument("association: search depth exceeds tree depth");
  }

  // Level 0 is a contiguous prefix of the node arrays.
  int root_count = 0;
  while (root_count < static_cast<int>(tree.size()) &&
         tree.level[root_count] == 0) {
    ++root_count;
  }

  const std::size_t n = cloud.size();
  const std::size_t n_chunks = parallel::chunk_count(n);
  std::vector<MomentSet> partial(n_chunks, MomentSet(tree.size()));
  parallel::for_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
    MomentSet& out = partial[c];
    double scores[8];
    for (std::size_t i = b; i < e; ++i) {
      const Vec3 y = t(cloud.points[i]);
      out.total_points += 1;
      int node = -1;
      double path_weight = 1.0;
      bool outlier = false;
      for (int l = 0; l < depth; ++l) {
        const int first = node < 0 ? 0 : tree.first_child[node];
        const int count = node < 0 ? root_count : tree.child_count[node];
        double sum = 0.0;
        for (int k = 0; k < count; ++k) {
          const GaussianComponent& g = tree.nodes[first + k];
          scores[k] = g.weight > 0.0 ? g.weight * density(g, y) : 0.0;
          sum += scores[k];
        }
        out.density_evaluations += count;
        if (l == 0 && !(sum > config.outlier_floor)) {
          outlier = true;
          break;
        }
        if (!(sum > 0.0)) break;  // deeper underflow: keep the current node
        int best = 0;
        for (int k = 1; k < count; ++k) {
          if (scores[k] > scores[best]) best = k;
        }
        node = first + best;
        path_weight *= scores[best] / sum;
        if (tree.is_leaf(node)) break;
        if (node_complexity(tree.nodes[node].eig) <= config.lambda_c) break;
      }
      if (outlier || node < 0) {
        out.outliers += 1;
        continue;
      }
      out.accumulate(static_cast<std::size_t>(node), path_weight, y);
    }
  });
  MomentSet result(tree.size());
  for (const MomentSet& p : partial) result.merge(p);
  return result;
}

}  // namespace treereg
