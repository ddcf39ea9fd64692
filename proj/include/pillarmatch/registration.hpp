#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "pillarmatch/cloud.hpp"
#include "pillarmatch/error.hpp"
#include "pillarmatch/kdtree.hpp"
#include "pillarmatch/rigid_transform.hpp"
#include "pillarmatch/transport.hpp"

namespace pillarmatch {

// Least-squares rigid transform T minimizing sum |T src_k - tgt_k|^2
// (centroids, cross-covariance SVD, determinant sign correction).
inline RigidTransform estimate_transform_svd(std::span<const Vec3> src, std::span<const Vec3> tgt) {
  require(src.size() == tgt.size(), ErrorKind::argument, "estimate_transform_svd: point lists differ in length");
  if (src.size() < 3)
    fail(ErrorKind::insufficient_correspondences,
         "estimate_transform_svd: need >= 3 correspondences, got " + std::to_string(src.size()));
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    cs += src[k];
    ct += tgt[k];
  }
  cs /= static_cast<double>(src.size());
  ct /= static_cast<double>(tgt.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) h += (src[k] - cs) * (tgt[k] - ct).transpose();

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(1) > 1e-12 * std::max(sv(0), 1e-300)))
    fail(ErrorKind::degenerate_geometry, "estimate_transform_svd: correspondences are (nearly) collinear");
  const Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 r = v * d * u.transpose();
  return {r, ct - r * cs};
}

inline RigidTransform estimate_transform_svd(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt) {
  return estimate_transform_svd(std::span<const Vec3>(src), std::span<const Vec3>(tgt));
}

inline std::vector<Vec3> positions(const std::vector<KeyPoint>& kps) {
  std::vector<Vec3> out;
  out.reserve(kps.size());
  for (const auto& k : kps) out.push_back(k.position);
  return out;
}

// Mutual nearest neighbours on raw 3D coordinates. Equidistant candidates
// resolve to the smaller index. Confidence is 1 for every pair.
inline MatchSet nn_matcher(std::span<const Vec3> src, std::span<const Vec3> tgt) {
  require(!src.empty() && !tgt.empty(), ErrorKind::argument, "nn_matcher: empty key-point list");
  KdTree src_tree(src), tgt_tree(tgt);
  MatchSet out;
  std::vector<char> used(tgt.size(), 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto j = tgt_tree.nearest(src[i]).index;
    if (src_tree.nearest(tgt[j]).index == i) {
      out.pairs.push_back({i, j, 1.0});
      used[j] = 1;
    } else {
      out.unmatched_i.push_back(i);
    }
  }
  for (std::size_t j = 0; j < tgt.size(); ++j)
    if (!used[j]) out.unmatched_j.push_back(j);
  return out;
}

struct IcpOptions {
  int max_iterations = 50;
  double tolerance = 1e-10;       // stop when the residual changes by less than this
  double reject_distance = 2.0;   // correspondences farther apart are dropped
};

struct IcpResult {
  RigidTransform transform;
  int iterations = 0;
  std::vector<double> residuals;  // truncated mean squared residual before each update, then final
};

// Point-to-point ICP. The tracked residual is mean_k min(d_k^2, reject^2) over
// all source points, which ICP with rejection never increases.
inline IcpResult icp(std::span<const Vec3> src, std::span<const Vec3> tgt, const RigidTransform& init = {},
                     const IcpOptions& opt = {}) {
  require(opt.max_iterations >= 1, ErrorKind::argument, "icp: max_iterations must be >= 1");
  require(!src.empty() && !tgt.empty(), ErrorKind::argument, "icp: empty input");
  KdTree tree(tgt);
  const double r2 = opt.reject_distance * opt.reject_distance;
  IcpResult res;
  res.transform = init;

  auto correspond = [&](const RigidTransform& t, std::vector<Vec3>& a, std::vector<Vec3>& b) {
    a.clear();
    b.clear();
    double acc = 0.0;
    for (const auto& p : src) {
      const auto nb = tree.nearest(t.apply(p));
      acc += std::min(nb.dist_sq, r2);
      if (nb.dist_sq < r2) {
        a.push_back(p);
        b.push_back(tgt[nb.index]);
      }
    }
    return acc / static_cast<double>(src.size());
  };

  std::vector<Vec3> a, b;
  double residual = correspond(res.transform, a, b);
  res.residuals.push_back(residual);
  for (int it = 0; it < opt.max_iterations; ++it) {
    if (a.size() < 3) fail(ErrorKind::degenerate_geometry, "icp: fewer than 3 correspondences within reject distance");
    res.transform = estimate_transform_svd(a, b);
    ++res.iterations;
    const double next = correspond(res.transform, a, b);
    res.residuals.push_back(next);
    const double change = std::abs(residual - next);
    residual = next;
    if (change < opt.tolerance) break;
  }
  return res;
}

struct TransformError {
  double translation;  // meters
  double rotation;     // radians, in [0, pi]
};

// T = T_pred^-1 . T_gt; translation norm and rotation angle of T.
inline TransformError transform_errors(const RigidTransform& pred, const RigidTransform& gt) {
  require_rigid(pred, "transform_errors(pred)");
  require_rigid(gt, "transform_errors(gt)");
  const RigidTransform t = pred.inverse() * gt;
  return {t.translation().norm(), t.angle()};
}

// |predicted pairs in GT matched| / |GT matched|; nullopt when the frame has no
// ground-truth matches (excluded from averages).
inline std::optional<double> matching_score(const MatchSet& predicted, const CorrespondenceLabels& labels) {
  if (labels.matched.empty()) return std::nullopt;
  const std::set<std::pair<std::size_t, std::size_t>> gt(labels.matched.begin(), labels.matched.end());
  std::size_t correct = 0;
  for (const auto& p : predicted.pairs) correct += gt.count({p.i, p.j});
  return static_cast<double>(correct) / static_cast<double>(labels.matched.size());
}

inline double mean_matching_score(const std::vector<std::optional<double>>& per_frame) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : per_frame)
    if (s) {
      sum += *s;
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

// Counts behind precision and accuracy. Predicted pairs touching an ignored
// index are left out of precision; accuracy counts correct decisions over all
// ground-truth cells (matched pairs plus dustbin rows/columns).
struct MatchQuality {
  std::size_t predicted = 0;          // predicted pairs not touching ignored indices
  std::size_t correct_pairs = 0;      // of those, pairs that are GT matches
  std::size_t gt_cells = 0;
  std::size_t correct_cells = 0;

  double precision() const { return predicted ? double(correct_pairs) / double(predicted) : 0.0; }
  double accuracy() const { return gt_cells ? double(correct_cells) / double(gt_cells) : 0.0; }

  MatchQuality& operator+=(const MatchQuality& o) {
    predicted += o.predicted;
    correct_pairs += o.correct_pairs;
    gt_cells += o.gt_cells;
    correct_cells += o.correct_cells;
    return *this;
  }
};

inline MatchQuality evaluate_matches(const MatchSet& predicted, const CorrespondenceLabels& labels) {
  MatchQuality q;
  const std::set<std::pair<std::size_t, std::size_t>> gt(labels.matched.begin(), labels.matched.end());
  const std::set<std::size_t> ign_r(labels.ignored_rows.begin(), labels.ignored_rows.end());
  const std::set<std::size_t> ign_c(labels.ignored_cols.begin(), labels.ignored_cols.end());
  std::set<std::size_t> pred_rows, pred_cols;
  for (const auto& p : predicted.pairs) {
    pred_rows.insert(p.i);
    pred_cols.insert(p.j);
    if (ign_r.count(p.i) || ign_c.count(p.j)) continue;
    ++q.predicted;
    if (gt.count({p.i, p.j})) ++q.correct_pairs;
  }
  q.gt_cells = labels.ground_truth_cells();
  q.correct_cells = q.correct_pairs;
  for (auto i : labels.unmatched_rows) q.correct_cells += pred_rows.count(i) == 0;
  for (auto j : labels.unmatched_cols) q.correct_cells += pred_cols.count(j) == 0;
  return q;
}

}  // namespace pillarmatch
