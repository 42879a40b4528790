#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "treereg/geometry.hpp"

namespace treereg {

// Static 3D kd-tree with median splits along the widest axis of each span.
// Exact nearest-neighbor queries; ties resolve to the lowest point index.
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points) : pts_(points) {
    if (points.empty()) {
      throw std::invalid_argument("KdTree3: empty point set");
    }
    std::vector<std::uint32_t> idx(points.size());
    std::iota(idx.begin(), idx.end(), 0u);
    nodes_.reserve(points.size());
    root_ = build(idx, 0, points.size());
  }

  std::size_t nearest(const Vec3& q) const {
    std::size_t best_idx = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best_idx, best_d2);
    return best_idx;
  }

 private:
  struct Node {
    std::uint32_t point;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint8_t dim = 0;
  };

  std::int32_t build(std::vector<std::uint32_t>& idx, std::size_t begin,
                     std::size_t end) {
    if (begin >= end) return -1;
    Vec3 lo = pts_[idx[begin]];
    Vec3 hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pts_[idx[i]]);
      hi = hi.cwiseMax(pts_[idx[i]]);
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       if (pts_[a](dim) != pts_[b](dim)) {
                         return pts_[a](dim) < pts_[b](dim);
                       }
                       return a < b;
                     });
    Node node;
    node.point = idx[mid];
    node.dim = static_cast<std::uint8_t>(dim);
    const std::int32_t self = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    nodes_[self].left = build(idx, begin, mid);
    nodes_[self].right = build(idx, mid + 1, end);
    return self;
  }

  void search(std::int32_t node, const Vec3& q, std::size_t& best_idx,
              double& best_d2) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    const Vec3& p = pts_[n.point];
    const double d2 = (q - p).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && n.point < best_idx)) {
      best_d2 = d2;
      best_idx = n.point;
    }
    const double delta = q(n.dim) - p(n.dim);
    const std::int32_t near = delta <= 0.0 ? n.left : n.right;
    const std::int32_t far = delta <= 0.0 ? n.right : n.left;
    search(near, q, best_idx, best_d2);
    if (delta * delta <= best_d2) search(far, q, best_idx, best_d2);
  }

  const std::vector<Vec3>& pts_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

}  // namespace treereg
