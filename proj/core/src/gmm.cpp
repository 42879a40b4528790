#include "treereg/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "treereg/association.hpp"
#include "treereg/parallel.hpp"

namespace treereg {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Weight below which a point's membership in a component is dropped from
// that component's point list during construction.
constexpr double kMembershipTruncation = 1e-12;

// Leaf calibration runs until the hard assignment stops moving or this many
// passes, whichever comes first (assignment churn can cycle on points that
// sit exactly between two leaves).
constexpr int kCalibrationPassLimit = 40;
}  // namespace

void GaussianComponent::refresh_eig() {
  eig = eig_sym3(cov);
  log_norm = -0.5 * (3.0 * kLog2Pi + std::log(eig.lambdas(0)) +
                     std::log(eig.lambdas(1)) + std::log(eig.lambdas(2)));
}

double log_density(const GaussianComponent& g, const Vec3& x) {
  if (!(g.eig.lambdas(2) > 0.0)) {
    throw std::domain_error("log_density: covariance is not positive definite");
  }
  const Vec3 d = x - g.mean;
  const Vec3 proj = g.eig.axes.transpose() * d;
  const double q = proj(0) * proj(0) / g.eig.lambdas(0) +
                   proj(1) * proj(1) / g.eig.lambdas(1) +
                   proj(2) * proj(2) / g.eig.lambdas(2);
  return g.log_norm - 0.5 * q;
}

double density(const GaussianComponent& g, const Vec3& x) {
  return std::exp(log_density(g, x));
}

double node_complexity(const EigenDecomp3& eig) {
  const double tr = eig.lambdas.sum();
  if (!(tr > 0.0)) {
    throw std::domain_error("node_complexity: covariance has no positive trace");
  }
  return eig.lambdas(2) / tr;
}

double node_complexity(const Mat3& cov) { return node_complexity(eig_sym3(cov)); }

std::vector<int> GmmTree::level_nodes(int l) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < level.size(); ++i) {
    if (level[i] == l) out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

struct Entry {
  std::size_t idx;
  double w;
};

struct Accum {
  double m0 = 0.0;
  Vec3 m1 = Vec3::Zero();
  Mat3 m2 = Mat3::Zero();

  void merge(const Accum& o) {
    m0 += o.m0;
    m1 += o.m1;
    m2 += o.m2;
  }
};

// Weighted mean and covariance of a point list (two passes, chunks merged
// in index order for machine-independent results).
void list_moments(const std::vector<Entry>& entries,
                  const std::vector<Vec3>& pts, double& mass, Vec3& mean,
                  Mat3& cov) {
  if (entries.empty()) {
    throw std::invalid_argument("list_moments: empty point list");
  }
  const Vec3 ref = pts[entries.front().idx];
  const std::size_t n_chunks = parallel::chunk_count(entries.size());
  std::vector<double> cm0(n_chunks, 0.0);
  std::vector<Vec3> cm1(n_chunks, Vec3::Zero());
  parallel::for_chunks(entries.size(), [&](std::size_t c, std::size_t b,
                                           std::size_t e) {
    double m0 = 0.0;
    Vec3 m1 = Vec3::Zero();
    for (std::size_t i = b; i < e; ++i) {
      m0 += entries[i].w;
      m1 += entries[i].w * (pts[entries[i].idx] - ref);
    }
    cm0[c] = m0;
    cm1[c] = m1;
  });
  mass = 0.0;
  Vec3 m1 = Vec3::Zero();
  for (std::size_t c = 0; c < n_chunks; ++c) {
    mass += cm0[c];
    m1 += cm1[c];
  }
  if (!(mass > 0.0)) {
    throw std::invalid_argument("list_moments: point list has no mass");
  }
  mean = ref + m1 / mass;

  std::vector<Mat3> cm2(n_chunks, Mat3::Zero());
  parallel::for_chunks(entries.size(), [&](std::size_t c, std::size_t b,
                                           std::size_t e) {
    Mat3 m2 = Mat3::Zero();
    for (std::size_t i = b; i < e; ++i) {
      const Vec3 d = pts[entries[i].idx] - mean;
      m2 += entries[i].w * (d * d.transpose());
    }
    cm2[c] = m2;
  });
  cov = Mat3::Zero();
  for (std::size_t c = 0; c < n_chunks; ++c) cov += cm2[c];
  cov /= mass;
}

// Sets cov to scatter with eigenvalues floored at floor_value, refreshing
// the cached decomposition without a second eigensolve. Tolerant of noise
// scatters (e.g. from a component holding a single point): the floor heals
// any negative eigenvalues.
void set_floored_cov(GaussianComponent& g, const Mat3& scatter,
                     double floor_value) {
  const EigenDecomp3 e = eig_sym3_floored(scatter, floor_value);
  g.cov = e.reconstruct();
  g.eig = e;
  g.log_norm = -0.5 * (3.0 * kLog2Pi + std::log(e.lambdas(0)) +
                       std::log(e.lambdas(1)) + std::log(e.lambdas(2)));
}

double cov_floor(const Mat3& scatter, const ModelConfig& cfg) {
  return std::max(cfg.cov_regularization_absolute,
                  cfg.cov_regularization_epsilon * scatter.trace() / 3.0);
}

// One E-step over a weighted point list: accumulates per-component moments
// about ref and returns the weighted log-likelihood under comps.
double e_step_moments(const std::vector<Entry>& entries,
                      const std::vector<Vec3>& pts,
                      const std::vector<GaussianComponent>& comps,
                      const Vec3& ref, std::vector<Accum>& acc) {
  const std::size_t nc = comps.size();
  const std::size_t n_chunks = parallel::chunk_count(entries.size());
  std::vector<std::vector<Accum>> chunk_acc(n_chunks);
  std::vector<double> chunk_ll(n_chunks, 0.0);
  parallel::for_chunks(entries.size(), [&](std::size_t c, std::size_t b,
                                           std::size_t e) {
    std::vector<Accum> local(nc);
    std::vector<double> logs(nc);
    double ll = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      const Vec3& x = pts[entries[i].idx];
      double m = kNegInf;
      for (std::size_t k = 0; k < nc; ++k) {
        logs[k] = comps[k].weight > 0.0
                      ? std::log(comps[k].weight) + log_density(comps[k], x)
                      : kNegInf;
        m = std::max(m, logs[k]);
      }
      if (!std::isfinite(m)) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < nc; ++k) s += std::exp(logs[k] - m);
      const double log_total = m + std::log(s);
      ll += entries[i].w * log_total;
      const Vec3 d = x - ref;
      const Mat3 outer = d * d.transpose();
      for (std::size_t k = 0; k < nc; ++k) {
        const double g = std::exp(logs[k] - log_total) * entries[i].w;
        if (g <= 0.0) continue;
        local[k].m0 += g;
        local[k].m1 += g * d;
        local[k].m2 += g * outer;
      }
    }
    chunk_acc[c] = std::move(local);
    chunk_ll[c] = ll;
  });
  acc.assign(nc, Accum{});
  double ll = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    ll += chunk_ll[c];
    for (std::size_t k = 0; k < nc; ++k) acc[k].merge(chunk_acc[c][k]);
  }
  return ll;
}

// M-step from accumulated moments. Components with (near-)zero mass go
// dormant (weight 0, parameters untouched): their scatter would be pure
// roundoff noise. floor_value is fixed for a whole fit.
void m_step(const std::vector<Accum>& acc, const Vec3& ref, double floor_value,
            std::vector<GaussianComponent>& comps) {
  double total = 0.0;
  for (const Accum& a : acc) total += a.m0;
  if (!(total > 0.0)) {
    throw std::runtime_error("m_step: no responsibility mass");
  }
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const Accum& a = acc[k];
    if (a.m0 <= total * 1e-12) {
      comps[k].weight = 0.0;
      continue;
    }
    const Vec3 d = a.m1 / a.m0;
    const Mat3 scatter = a.m2 / a.m0 - d * d.transpose();
    comps[k].weight = a.m0 / total;
    comps[k].mean = ref + d;
    set_floored_cov(comps[k], scatter, floor_value);
  }
}

void run_em_iterations(const std::vector<Entry>& entries,
                       const std::vector<Vec3>& pts, const Vec3& ref,
                       double floor_value, int iterations,
                       std::vector<GaussianComponent>& comps,
                       std::vector<double>* ll_trace) {
  std::vector<Accum> acc;
  for (int it = 0; it < iterations; ++it) {
    const double ll = e_step_moments(entries, pts, comps, ref, acc);
    if (ll_trace != nullptr) ll_trace->push_back(ll);
    m_step(acc, ref, floor_value, comps);
  }
}

// Corner seeds: parent mean perturbed along the parent's principal axes at
// +-0.5 sqrt(lambda_l), the 8 sign combinations. Good for structured
// support, but ill-defined when the eigenbasis is degenerate.
std::vector<Vec3> corner_seeds(const Vec3& mean, const Mat3& scatter,
                               double floor_value) {
  const EigenDecomp3 node_eig = eig_sym3_floored(scatter, floor_value);
  std::vector<Vec3> seeds(8);
  for (int c = 0; c < 8; ++c) {
    Vec3 offset = Vec3::Zero();
    for (int l = 0; l < 3; ++l) {
      const double sign = ((c >> l) & 1) != 0 ? 1.0 : -1.0;
      offset += sign * 0.5 * std::sqrt(node_eig.lambdas(l)) * node_eig.axis(l);
    }
    seeds[c] = mean + offset;
  }
  return seeds;
}

// Farthest-point seeds: heaviest point first, then greedily the point
// maximizing weight x squared-distance-to-nearest-seed (ties to the lowest
// index). Lands one seed per well-separated sub-cluster regardless of the
// parent's eigenbasis.
std::vector<Vec3> farthest_point_seeds(const std::vector<Entry>& entries,
                                       const std::vector<Vec3>& pts) {
  const std::size_t n_pts = entries.size();
  std::size_t first = 0;
  for (std::size_t i = 1; i < n_pts; ++i) {
    if (entries[i].w > entries[first].w) first = i;
  }
  std::vector<Vec3> seeds;
  seeds.reserve(8);
  seeds.push_back(pts[entries[first].idx]);
  std::vector<double> min_d2(n_pts);
  for (std::size_t i = 0; i < n_pts; ++i) {
    min_d2[i] = (pts[entries[i].idx] - seeds[0]).squaredNorm();
  }
  while (seeds.size() < 8) {
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < n_pts; ++i) {
      const double score = entries[i].w * min_d2[i];
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    if (!(best_score > 0.0)) {
      // Degenerate support (all points coincide): duplicate the seed.
      seeds.push_back(seeds[0]);
      continue;
    }
    seeds.push_back(pts[entries[best].idx]);
    for (std::size_t i = 0; i < n_pts; ++i) {
      min_d2[i] = std::min(
          min_d2[i], (pts[entries[i].idx] - seeds.back()).squaredNorm());
    }
  }
  return seeds;
}

struct CandidateFit {
  std::vector<GaussianComponent> comps;
  std::vector<double> ll_trace;
  std::vector<double> gamma;  // n x 8 responsibilities under final params
  double final_ll = kNegInf;
};

// EM from the given seeds, then a final pass storing responsibilities under
// the final parameters so the kept partition matches the kept fit.
CandidateFit fit_candidate(const std::vector<Entry>& entries,
                           const std::vector<Vec3>& pts, const Vec3& mean,
                           const Mat3& scatter, double floor_value,
                           const ModelConfig& cfg,
                           const std::vector<Vec3>& seeds) {
  CandidateFit fit;
  fit.comps.resize(8);
  const Mat3 child_scatter = scatter / 4.0;
  for (int c = 0; c < 8; ++c) {
    fit.comps[c].weight = 1.0 / 8.0;
    fit.comps[c].mean = seeds[c];
    set_floored_cov(fit.comps[c], child_scatter, floor_value);
  }

  run_em_iterations(entries, pts, mean, floor_value,
                    cfg.em_iterations_per_node, fit.comps, &fit.ll_trace);

  const std::size_t n = entries.size();
  fit.gamma.assign(n * 8, 0.0);
  const std::size_t n_chunks = parallel::chunk_count(n);
  std::vector<double> chunk_ll(n_chunks, 0.0);
  parallel::for_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
    double logs[8];
    double ll = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      const Vec3& x = pts[entries[i].idx];
      double m = kNegInf;
      for (int k = 0; k < 8; ++k) {
        logs[k] = fit.comps[k].weight > 0.0
                      ? std::log(fit.comps[k].weight) +
                            log_density(fit.comps[k], x)
                      : kNegInf;
        m = std::max(m, logs[k]);
      }
      if (!std::isfinite(m)) continue;
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += std::exp(logs[k] - m);
      const double log_total = m + std::log(s);
      ll += entries[i].w * log_total;
      for (int k = 0; k < 8; ++k) {
        fit.gamma[i * 8 + k] = std::exp(logs[k] - log_total);
      }
    }
    chunk_ll[c] = ll;
  });
  double ll = 0.0;
  for (double v : chunk_ll) ll += v;
  fit.ll_trace.push_back(ll);
  fit.final_ll = ll;
  return fit;
}

struct Expansion {
  bool ok = false;
  std::vector<GaussianComponent> children;  // local weights sum to 1
  std::vector<std::vector<Entry>> child_entries;
  std::vector<double> ll_trace;
};

// Fits a ≤8-component mixture to a node's weighted point list and soft
// partitions the list among surviving children. Two deterministic seedings
// are fitted and the higher-likelihood result kept: principal-axis corners
// excel on smooth structured support, farthest-point on well-separated
// clumps (where a degenerate eigenbasis makes corner placement arbitrary).
Expansion expand_node(const std::vector<Entry>& entries,
                      const std::vector<Vec3>& pts, const ModelConfig& cfg,
                      bool must_survive) {
  Expansion out;
  double mass = 0.0;
  Vec3 mean = Vec3::Zero();
  Mat3 scatter = Mat3::Zero();
  list_moments(entries, pts, mass, mean, scatter);
  const double floor_value = cov_floor(scatter, cfg);

  CandidateFit kept = fit_candidate(entries, pts, mean, scatter, floor_value,
                                    cfg, corner_seeds(mean, scatter,
                                                      floor_value));
  {
    CandidateFit alt = fit_candidate(entries, pts, mean, scatter, floor_value,
                                     cfg, farthest_point_seeds(entries, pts));
    if (alt.final_ll > kept.final_ll) kept = std::move(alt);
  }
  const std::vector<GaussianComponent>& comps = kept.comps;
  const std::vector<double>& gamma = kept.gamma;
  out.ll_trace = kept.ll_trace;

  const std::size_t n = entries.size();
  double child_mass[8] = {};
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 8; ++k) child_mass[k] += entries[i].w * gamma[i * 8 + k];
  }

  // Children keep their slot unless starved; pruned mass is redistributed
  // pro-rata among the surviving siblings below. The min_points_per_node
  // budget gates whether a node is expanded at all, not which children
  // survive: with the default budget of 32 a per-child floor would leave
  // deep levels empty on the cloud sizes this engine targets. The survival
  // floor instead asks for enough expected points that the fitted thin axis
  // reflects sensor noise; below it a component degenerates into a
  // near-singular spike that would dominate the pose solve.
  constexpr double kMinChildMass = 4.0;
  std::vector<int> survivors;
  for (int k = 0; k < 8; ++k) {
    if (child_mass[k] > std::max(kMinChildMass, mass * 1e-6)) {
      survivors.push_back(k);
    }
  }
  if (survivors.empty()) {
    if (!must_survive) return out;
    int best = 0;
    for (int k = 1; k < 8; ++k) {
      if (child_mass[k] > child_mass[best]) best = k;
    }
    survivors.push_back(best);
  }

  const std::size_t ns = survivors.size();
  out.children.resize(ns);
  out.child_entries.resize(ns);
  std::vector<double> surv_mass(ns, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t s = 0; s < ns; ++s) denom += gamma[i * 8 + survivors[s]];
    if (denom > 0.0) {
      for (std::size_t s = 0; s < ns; ++s) {
        const double g = gamma[i * 8 + survivors[s]] / denom;
        if (g < kMembershipTruncation) continue;
        out.child_entries[s].push_back({entries[i].idx, entries[i].w * g});
        surv_mass[s] += entries[i].w * g;
      }
    } else {
      // All of this point's responsibility sat on pruned children; hand it
      // to the heaviest survivor.
      std::size_t best = 0;
      for (std::size_t s = 1; s < ns; ++s) {
        if (child_mass[survivors[s]] > child_mass[survivors[best]]) best = s;
      }
      out.child_entries[best].push_back({entries[i].idx, entries[i].w});
      surv_mass[best] += entries[i].w;
    }
  }
  double total = 0.0;
  for (double v : surv_mass) total += v;
  for (std::size_t s = 0; s < ns; ++s) {
    out.children[s] = comps[survivors[s]];
    out.children[s].weight = surv_mass[s] / total;
  }
  out.ok = true;
  return out;
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.max_level < 1) throw std::invalid_argument("max_level must be >= 1");
  if (cfg.em_iterations_per_node < 1) {
    throw std::invalid_argument("em_iterations_per_node must be >= 1");
  }
  if (cfg.min_points_per_node < 1) {
    throw std::invalid_argument("min_points_per_node must be >= 1");
  }
  if (!(cfg.cov_regularization_epsilon >= 0.0) ||
      !(cfg.cov_regularization_absolute > 0.0)) {
    throw std::invalid_argument("covariance regularization must be positive");
  }
}

void validate_cloud(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("point cloud is empty");
  if (!cloud.all_finite()) {
    throw std::invalid_argument("point cloud has non-finite coordinates");
  }
}

// Every parent's (mean, cov) becomes the exact moment match of its
// children's mixture, so the hierarchy is self-consistent. Weights are
// conditional on the parent, so the parent's own weight is untouched.
void reset_parents_to_child_moments(GmmTree& tree) {
  for (int l = tree.max_level - 2; l >= 0; --l) {
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      if (tree.level[i] != l || tree.child_count[i] == 0) continue;
      double w = 0.0;
      Vec3 mu = Vec3::Zero();
      for (int c = 0; c < tree.child_count[i]; ++c) {
        const GaussianComponent& ch = tree.nodes[tree.first_child[i] + c];
        w += ch.weight;
        mu += ch.weight * ch.mean;
      }
      if (!(w > 0.0)) continue;
      mu /= w;
      Mat3 cov = Mat3::Zero();
      for (int c = 0; c < tree.child_count[i]; ++c) {
        const GaussianComponent& ch = tree.nodes[tree.first_child[i] + c];
        const Vec3 d = ch.mean - mu;
        cov += ch.weight * (ch.cov + d * d.transpose());
      }
      cov /= w;
      tree.nodes[i].mean = mu;
      tree.nodes[i].cov = cov;
    }
  }
}

// One leaf refit against the moments the best-path search deposits at
// identity. Registration E-steps use that hard search, while construction
// EM is soft, so freshly fitted leaves differ slightly from what the search
// sees; refitting until the assignment stabilizes makes a cloud's own model
// a fixed point of registration instead of inheriting the soft-vs-hard
// mismatch as pose bias. Sibling weights become deposit-mass shares and
// parents are re-matched bottom-up, so the hierarchy invariants survive.
// Returns the largest single parameter change.
double calibrate_pass(const PointCloud& cloud, const ModelConfig& cfg,
                      GmmTree& tree) {
  AssocConfig ac;
  ac.lambda_c = 0.0;  // positive complexity never stops above the leaves
  const MomentSet m =
      associate_adaptive(cloud, tree, RigidTransform::identity(), ac);
  const std::size_t n = tree.nodes.size();
  std::vector<double> branch(n, 0.0);
  double drift = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (tree.child_count[j] != 0) continue;
    branch[j] = m.m0[j];
    if (!(m.m0[j] > 0.0)) continue;
    const Vec3 mu = m.m1[j] / m.m0[j];
    Mat3 scatter = m.m2[j] / m.m0[j] - mu * mu.transpose();
    scatter = 0.5 * (scatter + scatter.transpose());
    GaussianComponent& g = tree.nodes[j];
    drift = std::max(drift, (g.mean - mu).norm());
    g.mean = mu;
    const Mat3 before = g.cov;
    set_floored_cov(g, scatter, cov_floor(scatter, cfg));
    drift = std::max(drift, (g.cov - before).norm());
  }
  // Subtree deposit masses, then sibling weights as mass shares per octet.
  for (int l = tree.max_level - 2; l >= 0; --l) {
    for (std::size_t j = 0; j < n; ++j) {
      if (tree.level[j] != l || tree.child_count[j] == 0) continue;
      double s = 0.0;
      for (int c = 0; c < tree.child_count[j]; ++c) {
        s += branch[tree.first_child[j] + c];
      }
      branch[j] = s;
    }
  }
  const auto reweight = [&](int first, int count) {
    double s = 0.0;
    for (int c = 0; c < count; ++c) s += branch[first + c];
    if (!(s > 0.0)) return;  // shadowed octet: keep the fitted shares
    for (int c = 0; c < count; ++c) {
      const double w = branch[first + c] / s;
      drift = std::max(drift, std::abs(tree.nodes[first + c].weight - w));
      tree.nodes[first + c].weight = w;
    }
  };
  int top_count = 0;
  while (top_count < static_cast<int>(n) && tree.level[top_count] == 0) {
    ++top_count;
  }
  reweight(0, top_count);
  for (std::size_t j = 0; j < n; ++j) {
    if (tree.child_count[j] != 0) reweight(tree.first_child[j], tree.child_count[j]);
  }
  reset_parents_to_child_moments(tree);
  for (std::size_t j = 0; j < n; ++j) {
    if (tree.child_count[j] != 0) tree.nodes[j].refresh_eig();
  }
  return drift;
}

}  // namespace

GmmTree build_tree(const PointCloud& cloud, const ModelConfig& cfg,
                   BuildDiagnostics* diagnostics) {
  validate_config(cfg);
  validate_cloud(cloud);
  const std::vector<Vec3>& pts = cloud.points;

  GmmTree tree;
  tree.max_level = cfg.max_level;

  struct Pending {
    int node;
    std::vector<Entry> entries;
  };
  std::vector<Pending> frontier;

  {
    std::vector<Entry> all(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) all[i] = {i, 1.0};
    Expansion root = expand_node(all, pts, cfg, /*must_survive=*/true);
    if (diagnostics != nullptr) {
      diagnostics->node_ll_traces.push_back(root.ll_trace);
    }
    for (std::size_t c = 0; c < root.children.size(); ++c) {
      tree.nodes.push_back(root.children[c]);
      tree.parent.push_back(-1);
      tree.first_child.push_back(-1);
      tree.child_count.push_back(0);
      tree.level.push_back(0);
      frontier.push_back(
          {static_cast<int>(tree.nodes.size()) - 1,
           std::move(root.child_entries[c])});
    }
  }

  for (int l = 0; l + 1 < cfg.max_level; ++l) {
    std::vector<Pending> next;
    for (Pending& p : frontier) {
      double mass = 0.0;
      for (const Entry& e : p.entries) mass += e.w;
      if (mass < static_cast<double>(cfg.min_points_per_node)) continue;
      Expansion exp = expand_node(p.entries, pts, cfg, /*must_survive=*/false);
      if (diagnostics != nullptr) {
        diagnostics->node_ll_traces.push_back(exp.ll_trace);
      }
      if (!exp.ok) continue;
      tree.first_child[p.node] = static_cast<int>(tree.nodes.size());
      tree.child_count[p.node] = static_cast<int>(exp.children.size());
      for (std::size_t c = 0; c < exp.children.size(); ++c) {
        // Node weights are conditional on the parent; expand_node already
        // returns sibling weights summing to 1.
        tree.nodes.push_back(exp.children[c]);
        tree.parent.push_back(p.node);
        tree.first_child.push_back(-1);
        tree.child_count.push_back(0);
        tree.level.push_back(l + 1);
        next.push_back({static_cast<int>(tree.nodes.size()) - 1,
                        std::move(exp.child_entries[c])});
      }
    }
    frontier = std::move(next);
  }

  reset_parents_to_child_moments(tree);
  for (GaussianComponent& g : tree.nodes) g.refresh_eig();

  // Leaf calibration: refit the leaves to their own best-path deposits until
  // the hard assignment stabilizes (or stops improving). See calibrate_pass.
  double drift = std::numeric_limits<double>::infinity();
  for (int pass = 0; pass < kCalibrationPassLimit && drift > 1e-13; ++pass) {
    drift = calibrate_pass(cloud, cfg, tree);
  }
  if (diagnostics != nullptr) diagnostics->calibration_drift = drift;
  return tree;
}

std::vector<GaussianComponent> build_flat_gmm(const PointCloud& cloud,
                                              std::size_t j,
                                              const ModelConfig& cfg,
                                              BuildDiagnostics* diagnostics) {
  validate_config(cfg);
  validate_cloud(cloud);
  if (j < 1 || j > cloud.size()) {
    throw std::invalid_argument("component count out of range");
  }
  const std::vector<Vec3>& pts = cloud.points;
  const std::size_t n = pts.size();

  std::vector<Entry> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = {i, 1.0};
  double mass = 0.0;
  Vec3 mean = Vec3::Zero();
  Mat3 scatter = Mat3::Zero();
  list_moments(all, pts, mass, mean, scatter);
  const double floor_value = cov_floor(scatter, cfg);

  // Distance-squared weighted seeding.
  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<Vec3> seeds;
  seeds.reserve(j);
  std::vector<double> min_d2(n);
  {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    seeds.push_back(pts[pick(rng)]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    min_d2[i] = (pts[i] - seeds[0]).squaredNorm();
  }
  while (seeds.size() < j) {
    double total = 0.0;
    for (double v : min_d2) total += v;
    std::size_t chosen;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= min_d2[i];
        if (target <= 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      chosen = pick(rng);
    }
    seeds.push_back(pts[chosen]);
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], (pts[i] - seeds.back()).squaredNorm());
    }
  }
  double mean_d2 = 0.0;
  for (double v : min_d2) mean_d2 += v;
  mean_d2 /= static_cast<double>(n);
  const double sigma2 = std::max(mean_d2 / 3.0, floor_value);

  std::vector<GaussianComponent> comps(j);
  for (std::size_t k = 0; k < j; ++k) {
    comps[k].weight = 1.0 / static_cast<double>(j);
    comps[k].mean = seeds[k];
    comps[k].cov = sigma2 * Mat3::Identity();
    comps[k].refresh_eig();
  }

  const int iterations = cfg.em_iterations_per_node * cfg.max_level;
  std::vector<double>* trace = nullptr;
  if (diagnostics != nullptr) {
    diagnostics->node_ll_traces.emplace_back();
    trace = &diagnostics->node_ll_traces.back();
  }
  run_em_iterations(all, pts, mean, floor_value, iterations, comps, trace);
  return comps;
}

double tree_moment_mismatch(const GmmTree& tree) {
  double worst = 0.0;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (tree.child_count[i] == 0) continue;
    const GaussianComponent& p = tree.nodes[i];
    double w = 0.0;
    Vec3 mu = Vec3::Zero();
    for (int c = 0; c < tree.child_count[i]; ++c) {
      const GaussianComponent& ch = tree.nodes[tree.first_child[i] + c];
      w += ch.weight;
      mu += ch.weight * ch.mean;
    }
    mu /= w;
    Mat3 cov = Mat3::Zero();
    for (int c = 0; c < tree.child_count[i]; ++c) {
      const GaussianComponent& ch = tree.nodes[tree.first_child[i] + c];
      const Vec3 d = ch.mean - mu;
      cov += ch.weight * (ch.cov + d * d.transpose());
    }
    cov /= w;
    const double mean_scale =
        std::max({p.mean.norm(), std::sqrt(std::max(p.cov.trace(), 0.0)),
                  1e-300});
    worst = std::max(worst, std::abs(w - 1.0));
    worst = std::max(worst, (mu - p.mean).norm() / mean_scale);
    worst = std::max(worst,
                     (cov - p.cov).norm() / std::max(p.cov.norm(), 1e-300));
  }
  return worst;
}

void save_tree(const GmmTree& tree, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "gmm-tree";
  j["version"] = 1;
  j["max_level"] = tree.max_level;
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const GaussianComponent& g = tree.nodes[i];
    nlohmann::json node;
    node["level"] = tree.level[i];
    node["parent"] = tree.parent[i];
    node["weight"] = g.weight;
    node["mean"] = {g.mean(0), g.mean(1), g.mean(2)};
    std::vector<double> cov(9);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) cov[r * 3 + c] = g.cov(r, c);
    }
    node["cov"] = cov;
    nodes.push_back(std::move(node));
  }
  j["nodes"] = std::move(nodes);
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path.string());
  }
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

GmmTree load_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad model file " + path.string() + ": " +
                             e.what());
  }
  const auto fail = [&](const std::string& msg) -> std::runtime_error {
    return std::runtime_error("bad model file " + path.string() + ": " + msg);
  };
  try {
    if (j.at("format") != "gmm-tree") throw fail("unknown format tag");
    if (j.at("version") != 1) throw fail("unsupported version");
    GmmTree tree;
    tree.max_level = j.at("max_level").get<int>();
    if (tree.max_level < 1) throw fail("max_level must be >= 1");
    const auto& nodes = j.at("nodes");
    if (!nodes.is_array() || nodes.empty()) throw fail("empty node array");
    const int n = static_cast<int>(nodes.size());
    tree.nodes.resize(n);
    tree.parent.resize(n);
    tree.first_child.assign(n, -1);
    tree.child_count.assign(n, 0);
    tree.level.resize(n);
    for (int i = 0; i < n; ++i) {
      const auto& node = nodes[i];
      tree.level[i] = node.at("level").get<int>();
      tree.parent[i] = node.at("parent").get<int>();
      GaussianComponent& g = tree.nodes[i];
      g.weight = node.at("weight").get<double>();
      const auto& mean = node.at("mean");
      const auto& cov = node.at("cov");
      if (mean.size() != 3 || cov.size() != 9) {
        throw fail("node " + std::to_string(i) + " has malformed moments");
      }
      for (int k = 0; k < 3; ++k) g.mean(k) = mean[k].get<double>();
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) g.cov(r, c) = cov[r * 3 + c].get<double>();
      }
      if (!std::isfinite(g.weight) || g.weight < 0.0 || !g.mean.allFinite() ||
          !g.cov.allFinite()) {
        throw fail("node " + std::to_string(i) + " has non-finite values");
      }
      const int p = tree.parent[i];
      if (p >= i || p < -1) {
        throw fail("node " + std::to_string(i) + " has invalid parent");
      }
      if (p == -1) {
        if (tree.level[i] != 0) {
          throw fail("node " + std::to_string(i) + " is an orphan");
        }
      } else {
        if (tree.level[i] != tree.level[p] + 1) {
          throw fail("node " + std::to_string(i) + " has inconsistent level");
        }
        if (tree.first_child[p] == -1) {
          tree.first_child[p] = i;
        } else if (i != tree.first_child[p] + tree.child_count[p]) {
          throw fail("children of node " + std::to_string(p) +
                     " are not contiguous");
        }
        ++tree.child_count[p];
      }
      if (tree.level[i] < 0 || tree.level[i] >= tree.max_level) {
        throw fail("node " + std::to_string(i) + " level out of range");
      }
    }
    double root_weight = 0.0;
    for (int i = 0; i < n; ++i) {
      if (tree.level[i] == 0) root_weight += tree.nodes[i].weight;
    }
    if (std::abs(root_weight - 1.0) > 1e-9) {
      throw fail("top-level weights do not sum to 1");
    }
    for (int i = 0; i < n; ++i) {
      if (tree.child_count[i] == 0) continue;
      double sibling_sum = 0.0;
      for (int c = 0; c < tree.child_count[i]; ++c) {
        sibling_sum += tree.nodes[tree.first_child[i] + c].weight;
      }
      if (std::abs(sibling_sum - 1.0) > 1e-9) {
        throw fail("children of node " + std::to_string(i) +
                   " have weights not summing to 1");
      }
    }
    for (GaussianComponent& g : tree.nodes) {
      g.refresh_eig();
      if (!(g.eig.lambdas(2) > 0.0)) {
        throw fail("a node covariance is not positive definite");
      }
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
}

}  // namespace treereg
