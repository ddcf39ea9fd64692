#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "test_support.hpp"

using namespace pillarmatch;

TEST(RigidTransform, IdentityIsValid) {
  const RigidTransform t;
  EXPECT_TRUE(t.is_valid());
  EXPECT_EQ(t.matrix(), Mat4::Identity());
}

TEST(RigidTransform, ApplyAndInverse) {
  const auto t = RigidTransform::translation(Vec3(1, 2, 3)) * RigidTransform::rotation(Vec3::UnitZ(), std::numbers::pi / 2);
  const Vec3 p = t.apply(Vec3(1, 0, 0));
  EXPECT_NEAR(p.x(), 1.0, 1e-12);
  EXPECT_NEAR(p.y(), 3.0, 1e-12);
  EXPECT_NEAR(p.z(), 3.0, 1e-12);
  EXPECT_TRUE((t.inverse() * t).matrix().isApprox(Mat4::Identity(), 1e-12));
}

TEST(RigidTransform, AngleOfAxisRotation) {
  EXPECT_NEAR(RigidTransform::rotation(Vec3(1, 1, 0), 0.7).angle(), 0.7, 1e-12);
}

TEST(RigidTransform, AngleMatchesTraceFormula) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 200; ++k) {
    const auto t = RigidTransform::rotation(Vec3(u(rng), u(rng), u(rng)), 0.05 + 3.0 * (u(rng) + 1) / 2);
    const double by_trace = std::acos(std::clamp(0.5 * (t.rotation().trace() - 1.0), -1.0, 1.0));
    EXPECT_NEAR(t.angle(), by_trace, 1e-9);
  }
}

TEST(RigidTransform, AngleOfComposedInverseIsZero) {
  const auto t = RigidTransform::translation(Vec3(1, -2, 4)) * RigidTransform::rotation(Vec3(0.3, 0.4, -1), 2.2);
  EXPECT_LT((t.inverse() * t).angle(), 1e-14);
}

TEST(RigidTransform, RejectsReflection) {
  Mat4 m = Mat4::Identity();
  m(0, 0) = -1.0;
  EXPECT_FALSE(RigidTransform(m).is_valid());
  EXPECT_THROW(require_rigid(RigidTransform(m), "test"), Error);
}

TEST(KdTree, KnnMatchesBruteForce) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<Vec3> pts;
  for (int k = 0; k < 500; ++k) pts.emplace_back(u(rng), u(rng), u(rng));
  const KdTree tree(pts);
  for (int q = 0; q < 50; ++q) {
    const Vec3 x(u(rng), u(rng), u(rng));
    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t i = 0; i < pts.size(); ++i) brute.emplace_back((pts[i] - x).squaredNorm(), i);
    std::sort(brute.begin(), brute.end());
    const auto got = tree.knn(x, 7);
    ASSERT_EQ(got.size(), 7u);
    for (std::size_t k = 0; k < 7; ++k) {
      EXPECT_EQ(got[k].index, brute[k].second);
      EXPECT_DOUBLE_EQ(got[k].dist_sq, brute[k].first);
    }
  }
}

TEST(KdTree, RadiusLimitAndEmpty) {
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)};
  const KdTree tree(pts);
  EXPECT_EQ(tree.knn(Vec3::Zero(), 10, 4.0).size(), 2u);
  const KdTree empty(std::span<const Vec3>{});
  EXPECT_TRUE(empty.knn(Vec3::Zero(), 3).empty());
}

TEST(KdTree, TiesResolveToSmallerIndex) {
  const std::vector<Vec3> pts{Vec3(1, 0, 0), Vec3(-1, 0, 0)};
  EXPECT_EQ(KdTree(pts).nearest(Vec3::Zero()).index, 0u);
  const std::vector<Vec3> swapped{Vec3(-1, 0, 0), Vec3(1, 0, 0)};
  EXPECT_EQ(KdTree(swapped).nearest(Vec3::Zero()).index, 0u);
}
