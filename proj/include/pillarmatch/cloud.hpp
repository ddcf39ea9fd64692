#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pillarmatch/error.hpp"
#include "pillarmatch/kdtree.hpp"
#include "pillarmatch/rigid_transform.hpp"

namespace pillarmatch {

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensities;
  std::string frame_id;

  std::size_t size() const { return points.size(); }

  void validate() const {
    require(points.size() == intensities.size(), ErrorKind::argument, "point/intensity count mismatch");
    for (const auto& p : points) require(p.allFinite(), ErrorKind::argument, "non-finite point coordinate");
  }
};

enum class KeyPointKind { sharp, planar };

struct KeyPoint {
  Vec3 position = Vec3::Zero();
  double smoothness = 0.0;
  KeyPointKind kind = KeyPointKind::planar;
  std::size_t index = 0;  // index into the source cloud
};

struct PillarMember {
  Vec3 position;
  double intensity;
  double distance;
};

// Real members come first, sorted by ascending distance to the key-point; the
// remaining capacity - real_count() rows are implicit zero pads.
struct Pillar {
  KeyPoint keypoint;
  Vec3 centroid = Vec3::Zero();
  std::vector<PillarMember> members;
  std::size_t capacity = 0;

  std::size_t real_count() const { return members.size(); }
};

struct CorrespondenceLabels {
  std::vector<std::pair<std::size_t, std::size_t>> matched;
  std::vector<std::size_t> unmatched_rows;  // assigned to the dustbin column
  std::vector<std::size_t> unmatched_cols;  // assigned to the dustbin row
  std::vector<std::size_t> ignored_rows;
  std::vector<std::size_t> ignored_cols;

  std::size_t ground_truth_cells() const { return matched.size() + unmatched_rows.size() + unmatched_cols.size(); }
};

struct FramePair {
  PointCloud source;
  PointCloud target;
  RigidTransform gt_transform;  // maps source-frame coordinates into the target frame
  int frame_distance = 1;
};

// Neighborhood size and origin guard for the smoothness term.
inline constexpr std::size_t kSmoothnessNeighbors = 10;
inline constexpr double kOriginEpsilon = 1e-6;

// Normalized magnitude of the summed offsets from point k to its nearest
// neighbors: |sum (x_k - x_j)| / (|S| * |x_k|).
inline double smoothness(const PointCloud& cloud, const KdTree& tree, std::size_t k,
                         std::size_t neighborhood_size = kSmoothnessNeighbors) {
  require(k < cloud.size(), ErrorKind::argument, "point index out of range");
  require(cloud.size() > neighborhood_size, ErrorKind::insufficient_points,
          "cloud needs more points than the neighborhood size");
  const Vec3& xk = cloud.points[k];
  const double norm = xk.norm();
  if (norm <= kOriginEpsilon) fail(ErrorKind::degenerate_point, "point at sensor origin");
  auto nbrs = tree.knn(xk, neighborhood_size + 1);
  Vec3 sum = Vec3::Zero();
  std::size_t used = 0;
  for (const auto& n : nbrs) {
    if (n.index == k || used == neighborhood_size) continue;
    sum += xk - cloud.points[n.index];
    ++used;
  }
  return sum.norm() / (static_cast<double>(used) * norm);
}

inline double smoothness(const PointCloud& cloud, std::size_t k, std::size_t neighborhood_size = kSmoothnessNeighbors) {
  KdTree tree(cloud.points);
  return smoothness(cloud, tree, k, neighborhood_size);
}

// Smoothness for every point; nullopt where the point is degenerate.
inline std::vector<std::optional<double>> smoothness_all(const PointCloud& cloud, const KdTree& tree,
                                                         std::size_t neighborhood_size = kSmoothnessNeighbors) {
  std::vector<std::optional<double>> out(cloud.size());
  if (cloud.size() <= neighborhood_size) return out;
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    if (cloud.points[k].norm() <= kOriginEpsilon) continue;
    out[k] = smoothness(cloud, tree, k, neighborhood_size);
  }
  return out;
}

struct KeyPointOptions {
  std::size_t neighborhood_size = kSmoothnessNeighbors;
  double min_separation = 0.0;  // 0 disables the spacing constraint
};

// Rank selection: ceil(n/2) largest-c points are sharp, floor(n/2) smallest-c
// points are planar. Ties break by point index.
inline std::vector<KeyPoint> select_keypoints_from_scores(const PointCloud& cloud,
                                                          const std::vector<std::optional<double>>& scores,
                                                          std::size_t n, double min_separation = 0.0) {
  require(scores.size() == cloud.size(), ErrorKind::argument, "score count mismatch");
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i]) valid.push_back(i);
  if (valid.size() < n)
    fail(ErrorKind::insufficient_points,
         "need " + std::to_string(n) + " key-points, only " + std::to_string(valid.size()) + " valid points");

  std::sort(valid.begin(), valid.end(), [&](std::size_t a, std::size_t b) {
    return *scores[a] < *scores[b] || (*scores[a] == *scores[b] && a < b);
  });
  std::vector<std::size_t> descending(valid);
  std::stable_sort(descending.begin(), descending.end(),
                   [&](std::size_t a, std::size_t b) { return *scores[a] > *scores[b]; });

  const std::size_t n_sharp = (n + 1) / 2;
  const std::size_t n_planar = n / 2;
  std::vector<char> taken(cloud.size(), 0);
  std::vector<KeyPoint> out;
  out.reserve(n);

  auto pick = [&](const std::vector<std::size_t>& ranked, std::size_t count, KeyPointKind kind) {
    std::size_t got = 0;
    for (std::size_t idx : ranked) {
      if (got == count) break;
      if (taken[idx]) continue;
      if (min_separation > 0.0) {
        const bool crowded = std::any_of(out.begin(), out.end(), [&](const KeyPoint& kp) {
          return (kp.position - cloud.points[idx]).norm() < min_separation;
        });
        if (crowded) continue;
      }
      taken[idx] = 1;
      out.push_back({cloud.points[idx], *scores[idx], kind, idx});
      ++got;
    }
    if (got < count) fail(ErrorKind::insufficient_points, "not enough separated key-point candidates");
  };
  pick(descending, n_sharp, KeyPointKind::sharp);
  pick(valid, n_planar, KeyPointKind::planar);
  return out;
}

inline std::vector<KeyPoint> select_keypoints(const PointCloud& cloud, const KdTree& tree, std::size_t n,
                                              const KeyPointOptions& opts = {}) {
  return select_keypoints_from_scores(cloud, smoothness_all(cloud, tree, opts.neighborhood_size), n,
                                      opts.min_separation);
}

inline std::vector<KeyPoint> select_keypoints(const PointCloud& cloud, std::size_t n, const KeyPointOptions& opts = {}) {
  KdTree tree(cloud.points);
  return select_keypoints(cloud, tree, n, opts);
}

// Up to z nearest points strictly closer than d to the key-point.
inline Pillar sample_pillar(const PointCloud& cloud, const KdTree& tree, const KeyPoint& keypoint, std::size_t z,
                            double d) {
  require(z >= 1, ErrorKind::argument, "pillar capacity must be >= 1");
  require(d > 0.0, ErrorKind::argument, "pillar radius must be > 0");
  Pillar p;
  p.keypoint = keypoint;
  p.capacity = z;
  const auto nbrs = tree.knn(keypoint.position, z, d * d);
  Vec3 sum = Vec3::Zero();
  for (const auto& n : nbrs) {
    p.members.push_back({cloud.points[n.index], cloud.intensities[n.index], std::sqrt(n.dist_sq)});
    sum += cloud.points[n.index];
  }
  p.centroid = nbrs.empty() ? keypoint.position : Vec3(sum / static_cast<double>(nbrs.size()));
  return p;
}

inline Pillar sample_pillar(const PointCloud& cloud, const KeyPoint& keypoint, std::size_t z, double d) {
  KdTree tree(cloud.points);
  return sample_pillar(cloud, tree, keypoint, z, d);
}

inline constexpr double kDefaultMatchRadius = 0.1;
inline constexpr double kDefaultUnmatchRadius = 0.5;

// Ground-truth labels from key-point positions: mutual nearest neighbours closer
// than match_radius are matched, anything whose nearest counterpart lies beyond
// unmatch_radius goes to the dustbin, the rest is ignored.
inline CorrespondenceLabels label_correspondences(const std::vector<KeyPoint>& src, const std::vector<KeyPoint>& tgt,
                                                  const RigidTransform& gt, double match_radius = kDefaultMatchRadius,
                                                  double unmatch_radius = kDefaultUnmatchRadius) {
  require_rigid(gt, "label_correspondences");
  require(match_radius < unmatch_radius, ErrorKind::argument, "match radius must be below unmatch radius");
  std::vector<Vec3> src_in_tgt, tgt_pts;
  for (const auto& kp : src) src_in_tgt.push_back(gt.apply(kp.position));
  for (const auto& kp : tgt) tgt_pts.push_back(kp.position);

  CorrespondenceLabels labels;
  if (src.empty() || tgt.empty()) {
    for (std::size_t i = 0; i < src.size(); ++i) labels.unmatched_rows.push_back(i);
    for (std::size_t j = 0; j < tgt.size(); ++j) labels.unmatched_cols.push_back(j);
    return labels;
  }
  KdTree src_tree(src_in_tgt), tgt_tree(tgt_pts);
  std::vector<Neighbor> nn_of_src(src.size()), nn_of_tgt(tgt.size());
  for (std::size_t i = 0; i < src.size(); ++i) nn_of_src[i] = tgt_tree.nearest(src_in_tgt[i]);
  for (std::size_t j = 0; j < tgt.size(); ++j) nn_of_tgt[j] = src_tree.nearest(tgt_pts[j]);

  const double match_sq = match_radius * match_radius;
  const double unmatch_sq = unmatch_radius * unmatch_radius;
  std::vector<char> col_matched(tgt.size(), 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& nb = nn_of_src[i];
    if (nn_of_tgt[nb.index].index == i && nb.dist_sq < match_sq) {
      labels.matched.emplace_back(i, nb.index);
      col_matched[nb.index] = 1;
    } else if (nb.dist_sq > unmatch_sq) {
      labels.unmatched_rows.push_back(i);
    } else {
      labels.ignored_rows.push_back(i);
    }
  }
  for (std::size_t j = 0; j < tgt.size(); ++j) {
    if (col_matched[j]) continue;
    if (nn_of_tgt[j].dist_sq > unmatch_sq)
      labels.unmatched_cols.push_back(j);
    else
      labels.ignored_cols.push_back(j);
  }
  return labels;
}

}  // namespace pillarmatch
