#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "pillarmatch/rigid_transform.hpp"

namespace pillarmatch {

struct Neighbor {
  std::size_t index;
  double dist_sq;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist_sq < b.dist_sq || (a.dist_sq == b.dist_sq && a.index < b.index);
  }
};

// Static 3D k-d tree over a borrowed point array. Query results are ordered by
// (squared distance, point index), so ties resolve to the smaller index.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points) : points_(points) {
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(points.size());
    if (!points.empty()) root_ = build(0, points.size(), 0);
  }

  std::size_t size() const { return points_.size(); }
  std::span<const Vec3> points() const { return points_; }

  // k nearest points, optionally limited to squared distance < max_dist_sq.
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k,
                            double max_dist_sq = std::numeric_limits<double>::infinity()) const {
    std::priority_queue<Neighbor> heap;
    if (k > 0 && root_ != kNone) search(root_, q, k, max_dist_sq, heap);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

  Neighbor nearest(const Vec3& q) const {
    auto r = knn(q, 1);
    return r.empty() ? Neighbor{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()}
                     : r.front();
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    std::size_t begin, end;  // range in order_
    std::size_t point;       // split point (order_ index mid)
    int axis;
    std::size_t left = kNone, right = kNone;
  };

  std::size_t build(std::size_t begin, std::size_t end, int depth) {
    if (begin >= end) return kNone;
    const int axis = depth % 3;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       const double va = points_[a][axis], vb = points_[b][axis];
                       return va < vb || (va == vb && a < b);
                     });
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end, order_[mid], axis});
    const std::size_t l = build(begin, mid, depth + 1);
    const std::size_t r = build(mid + 1, end, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(std::size_t id, const Vec3& q, std::size_t k, double max_dist_sq,
              std::priority_queue<Neighbor>& heap) const {
    const Node& node = nodes_[id];
    const Vec3& p = points_[node.point];
    const double d2 = (p - q).squaredNorm();
    if (d2 < max_dist_sq) {
      const Neighbor cand{node.point, d2};
      if (heap.size() < k) {
        heap.push(cand);
      } else if (cand < heap.top()) {
        heap.pop();
        heap.push(cand);
      }
    }
    const double diff = q[node.axis] - p[node.axis];
    const std::size_t near = diff <= 0 ? node.left : node.right;
    const std::size_t far = diff <= 0 ? node.right : node.left;
    if (near != kNone) search(near, q, k, max_dist_sq, heap);
    if (far == kNone) return;
    const double bound = diff * diff;
    if (bound >= max_dist_sq) return;
    // <= keeps equal-distance candidates reachable for the index tie-break.
    if (heap.size() < k || bound <= heap.top().dist_sq) search(far, q, k, max_dist_sq, heap);
  }

  std::span<const Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t root_ = kNone;
};

}  // namespace pillarmatch
