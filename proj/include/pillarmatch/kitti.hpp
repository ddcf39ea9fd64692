#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pillarmatch/cloud.hpp"
#include "pillarmatch/error.hpp"
#include "pillarmatch/rigid_transform.hpp"

namespace pillarmatch::kitti {

namespace detail {

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                    std::uint32_t(p[3]) << 24;
  return std::bit_cast<float>(u);
}

inline void write_f32_le(std::string& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((u >> s) & 0xff));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::io, "read failed: " + path.string());
  return ss.str();
}

}  // namespace detail

// Velodyne scan: consecutive little-endian float32 records (x, y, z, reflectance).
inline PointCloud parse_scan(const std::string& bytes, std::string frame_id = {}) {
  if (bytes.size() % 16 != 0)
    fail(ErrorKind::format, "scan length " + std::to_string(bytes.size()) + " is not a multiple of 16");
  PointCloud cloud;
  cloud.frame_id = std::move(frame_id);
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.intensities.reserve(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < n; ++i, p += 16) {
    cloud.points.emplace_back(detail::read_f32_le(p), detail::read_f32_le(p + 4), detail::read_f32_le(p + 8));
    cloud.intensities.push_back(detail::read_f32_le(p + 12));
  }
  return cloud;
}

inline PointCloud load_scan(const std::filesystem::path& path) {
  return parse_scan(detail::read_file(path), path.stem().string());
}

inline std::string serialize_scan(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) detail::write_f32_le(out, static_cast<float>(cloud.points[i][a]));
    detail::write_f32_le(out, static_cast<float>(cloud.intensities[i]));
  }
  return out;
}

inline void save_scan(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  const auto bytes = serialize_scan(cloud);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline RigidTransform parse_pose_line(const std::string& line) {
  std::istringstream ss(line);
  std::vector<double> v;
  std::string tok;
  while (ss >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorKind::format, "bad number in pose line: '" + tok + "'");
    }
  }
  if (v.size() != 12) fail(ErrorKind::format, "pose line has " + std::to_string(v.size()) + " tokens, expected 12");
  Mat4 m = Mat4::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
  return RigidTransform(m);
}

inline std::vector<RigidTransform> parse_poses(const std::string& text) {
  std::vector<RigidTransform> poses;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    poses.push_back(parse_pose_line(line));
  }
  return poses;
}

inline std::vector<RigidTransform> load_poses(const std::filesystem::path& path) {
  return parse_poses(detail::read_file(path));
}

// Shortest decimal that parses back to the same double.
inline std::string format_pose_line(const RigidTransform& t) {
  std::string out;
  std::array<char, 32> buf{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) {
      if (r || c) out.push_back(' ');
      const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), t.matrix()(r, c));
      out.append(buf.data(), res.ptr);
    }
  return out;
}

inline void save_poses(const std::filesystem::path& path, const std::vector<RigidTransform>& poses) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& p : poses) out << format_pose_line(p) << '\n';
}

}  // namespace pillarmatch::kitti
