#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace pillarmatch;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& bytes) {
  const fs::path p = fs::temp_directory_path() / ("pillarmatch_kitti_" + name);
  std::ofstream(p, std::ios::binary) << bytes;
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::config;
}

}  // namespace

TEST(KittiScan, TenPointsFromBytes) {
  std::string bytes;
  for (int k = 0; k < 10; ++k)
    for (float f : {1.0f * k, -2.0f, 0.5f, 0.25f}) kitti::detail::write_f32_le(bytes, f);
  ASSERT_EQ(bytes.size(), 160u);
  const auto c = kitti::parse_scan(bytes);
  ASSERT_EQ(c.size(), 10u);
  EXPECT_EQ(c.points[3], Vec3(3, -2, 0.5));
  EXPECT_DOUBLE_EQ(c.intensities[3], 0.25);
  EXPECT_EQ(kitti::serialize_scan(c), bytes);
}

TEST(KittiScan, LittleEndianLayout) {
  const std::string bytes("\x00\x00\x80\x3f\x00\x00\x00\x40\x00\x00\x40\x40\x00\x00\x00\x3f", 16);
  const auto c = kitti::parse_scan(bytes);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.points[0], Vec3(1, 2, 3));
  EXPECT_DOUBLE_EQ(c.intensities[0], 0.5);
}

TEST(KittiScan, EmptyFile) {
  const auto p = temp_file("empty.bin", "");
  EXPECT_EQ(kitti::load_scan(p).size(), 0u);
}

TEST(KittiScan, TruncatedFileIsFormatError) {
  const auto p = temp_file("trunc.bin", std::string(17, '\0'));
  EXPECT_EQ(kind_of([&] { kitti::load_scan(p); }), ErrorKind::format);
}

TEST(KittiScan, MissingFileIsIoError) {
  EXPECT_EQ(kind_of([] { kitti::load_scan("/nonexistent/scan.bin"); }), ErrorKind::io);
}

TEST(KittiScan, FileRoundTrip) {
  const std::string fixture = PILLARMATCH_TEST_DATA "/scan_10pts.bin";
  const auto c = kitti::load_scan(fixture);
  EXPECT_EQ(c.size(), 10u);
  const fs::path out = fs::temp_directory_path() / "pillarmatch_kitti_roundtrip.bin";
  kitti::save_scan(out, c);
  EXPECT_EQ(kitti::detail::read_file(out), kitti::detail::read_file(fixture));
}

TEST(KittiPoses, IdentityAndTranslation) {
  EXPECT_EQ(kitti::parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 0").matrix(), Mat4::Identity());
  const auto t = kitti::parse_pose_line("1 0 0 5 0 1 0 0 0 0 1 0");
  EXPECT_EQ(t.translation(), Vec3(5, 0, 0));
  EXPECT_EQ(t.rotation(), Mat3::Identity());
  EXPECT_EQ(t.matrix().row(3), Eigen::RowVector4d(0, 0, 0, 1));
}

TEST(KittiPoses, WrongTokenCount) {
  EXPECT_EQ(kind_of([] { kitti::parse_pose_line("1 0 0 0 0 1 0 0 0 0 1"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([] { kitti::parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 x"); }), ErrorKind::format);
}

TEST(KittiPoses, FixtureLinesRoundTrip) {
  const auto text = kitti::detail::read_file(PILLARMATCH_TEST_DATA "/poses_3.txt");
  const auto poses = kitti::parse_poses(text);
  ASSERT_EQ(poses.size(), 3u);
  std::string rebuilt;
  for (const auto& p : poses) rebuilt += kitti::format_pose_line(p) + "\n";
  EXPECT_EQ(rebuilt, text);
}

TEST(KittiPoses, ArbitraryDoublesRoundTrip) {
  const auto r = RigidTransform::rotation(Vec3(0.3, -0.2, 0.9), 1.234567891234);
  const RigidTransform t(r.rotation(), Vec3(1.0 / 3.0, -2e-7, 123.456));
  EXPECT_EQ(kitti::parse_pose_line(kitti::format_pose_line(t)).matrix(), t.matrix());
}
