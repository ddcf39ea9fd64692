#pragma once

#include <random>
#include <vector>

#include "pillarmatch/pillarmatch.hpp"

namespace pillarmatch::testing {

inline ad::Matrix<double> random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Matrix<double> m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

// Pillars with unit-scale coordinates, for toy networks.
inline std::vector<Pillar> toy_pillars(std::mt19937_64& rng, int count, int z) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Pillar> ps;
  for (int k = 0; k < count; ++k) {
    Pillar p;
    p.capacity = static_cast<std::size_t>(z);
    p.keypoint.position = Vec3(2 * u(rng), 2 * u(rng), u(rng));
    Vec3 c = Vec3::Zero();
    const int members = 1 + k % z;
    for (int r = 0; r < members; ++r) {
      const Vec3 x = p.keypoint.position + 0.25 * Vec3(u(rng), u(rng), u(rng));
      p.members.push_back({x, 0.5 + 0.5 * u(rng), (x - p.keypoint.position).norm()});
      c += x;
    }
    p.centroid = c / members;
    ps.push_back(p);
  }
  return ps;
}

inline HyperParams toy_hyperparams(int n = 4, int z = 4) {
  HyperParams hp;
  hp.n = hp.m = n;
  hp.z = z;
  hp.feature_depth = 8;
  hp.heads = 2;
  hp.layers = 2;
  hp.sinkhorn_iters = 10;
  hp.position_widths = {8, 8, 8, 8};
  return hp;
}

inline PointCloud cloud_of(std::vector<Vec3> pts) {
  PointCloud c;
  c.intensities.assign(pts.size(), 0.5);
  c.points = std::move(pts);
  return c;
}

}  // namespace pillarmatch::testing
