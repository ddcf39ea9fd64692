#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "pillarmatch/cloud.hpp"
#include "pillarmatch/error.hpp"
#include "pillarmatch/rigid_transform.hpp"

namespace pillarmatch {

// Desk-scale scene generator. The world is a set of objects (box, pole or wall,
// each standing on a disk of ground) scattered around the sensor. Source and
// target see overlapping object subsets; shared objects contribute the same
// underlying surface samples to both clouds, so correspondences are exact up to
// the per-cloud noise. Intensity is a per-object reflectance modulated by a
// texture fixed in world coordinates.
struct SceneConfig {
  std::size_t point_count = 6000;  // approximate points per cloud
  std::size_t object_count = 12;   // objects visible per cloud
  double overlap = 0.8;            // fraction of objects shared, in (0, 1]
  double rotation_bound = 10.0 * std::numbers::pi / 180.0;  // max yaw, radians
  double translation_bound = 1.0;                           // meters
  double noise_sigma = 0.01;                                // meters
  double min_range = 4.0;
  double max_range = 14.0;
  double ground_height = -1.7;
};

namespace synthetic_detail {

enum class Shape { box, pole, wall };

struct Object {
  Shape shape;
  Vec3 center;  // on the ground
  double yaw;
  Vec3 size;  // box: w, d, h; pole: radius, -, h; wall: length, -, h
  double patch_radius;
  double reflectance;
  Vec3 tex_dir1, tex_dir2;
  double tex_freq1, tex_freq2, tex_phase1, tex_phase2;
};

struct Sample {
  Vec3 p;
  double intensity;
};

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v(g(rng), g(rng), g(rng));
  return v.normalized();
}

inline Object make_object(std::mt19937_64& rng, const SceneConfig& cfg) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  Object o;
  const int kind = static_cast<int>(u01(rng) * 3.0);
  o.shape = kind == 0 ? Shape::box : kind == 1 ? Shape::pole : Shape::wall;
  const double az = uni(0.0, 2.0 * std::numbers::pi);
  const double range = uni(cfg.min_range, cfg.max_range);
  o.center = Vec3(range * std::cos(az), range * std::sin(az), cfg.ground_height);
  o.yaw = uni(0.0, std::numbers::pi);
  switch (o.shape) {
    case Shape::box: o.size = Vec3(uni(0.6, 2.0), uni(0.6, 2.0), uni(0.6, 2.5)); break;
    case Shape::pole: o.size = Vec3(uni(0.1, 0.3), 0.0, uni(2.0, 4.0)); break;
    case Shape::wall: o.size = Vec3(uni(2.0, 4.0), 0.0, uni(1.5, 3.0)); break;
  }
  o.patch_radius = uni(1.2, 2.0);
  o.reflectance = uni(0.1, 0.9);
  o.tex_dir1 = random_unit(rng);
  o.tex_dir2 = random_unit(rng);
  o.tex_freq1 = uni(2.0, 6.0);
  o.tex_freq2 = uni(2.0, 6.0);
  o.tex_phase1 = uni(0.0, 2.0 * std::numbers::pi);
  o.tex_phase2 = uni(0.0, 2.0 * std::numbers::pi);
  return o;
}

inline double footprint_radius(const Object& o) {
  return o.patch_radius;
}

inline std::vector<Sample> sample_object(const Object& o, std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Mat3 rot = Eigen::AngleAxisd(o.yaw, Vec3::UnitZ()).toRotationMatrix();
  const double h = o.size.z();

  // Each surface: area and a sampler returning a local-frame point (origin at
  // the object's ground center).
  struct Surface {
    double area;
    int id;
  };
  std::vector<Surface> surfaces;
  const double patch_area = std::numbers::pi * o.patch_radius * o.patch_radius;
  surfaces.push_back({patch_area, 0});
  switch (o.shape) {
    case Shape::box:
      surfaces.push_back({o.size.x() * h, 1});
      surfaces.push_back({o.size.x() * h, 2});
      surfaces.push_back({o.size.y() * h, 3});
      surfaces.push_back({o.size.y() * h, 4});
      surfaces.push_back({o.size.x() * o.size.y(), 5});
      break;
    case Shape::pole: surfaces.push_back({2.0 * std::numbers::pi * o.size.x() * h, 6}); break;
    case Shape::wall: surfaces.push_back({o.size.x() * h, 7}); break;
  }
  double total = 0.0;
  for (const auto& s : surfaces) total += s.area;

  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    double pick = u01(rng) * total;
    int id = surfaces.back().id;
    for (const auto& s : surfaces) {
      if (pick < s.area) {
        id = s.id;
        break;
      }
      pick -= s.area;
    }
    const double a = u01(rng), b = u01(rng);
    const double hw = 0.5 * o.size.x(), hd = 0.5 * o.size.y();
    Vec3 local;
    switch (id) {
      case 0: {
        const double r = o.patch_radius * std::sqrt(a), t = 2.0 * std::numbers::pi * b;
        local = Vec3(r * std::cos(t), r * std::sin(t), 0.0);
        break;
      }
      case 1: local = Vec3(-hw + 2 * hw * a, -hd, h * b); break;
      case 2: local = Vec3(-hw + 2 * hw * a, hd, h * b); break;
      case 3: local = Vec3(-hw, -hd + 2 * hd * a, h * b); break;
      case 4: local = Vec3(hw, -hd + 2 * hd * a, h * b); break;
      case 5: local = Vec3(-hw + 2 * hw * a, -hd + 2 * hd * b, h); break;
      case 6: {
        const double t = 2.0 * std::numbers::pi * a;
        local = Vec3(o.size.x() * std::cos(t), o.size.x() * std::sin(t), h * b);
        break;
      }
      default: local = Vec3(-hw + 2 * hw * a, 0.0, h * b); break;
    }
    const Vec3 p = o.center + rot * local;
    const double tex = 0.15 * std::sin(o.tex_freq1 * o.tex_dir1.dot(p) + o.tex_phase1) +
                       0.10 * std::sin(o.tex_freq2 * o.tex_dir2.dot(p) + o.tex_phase2);
    out.push_back({p, std::clamp(o.reflectance + tex, 0.0, 1.0)});
  }
  return out;
}

}  // namespace synthetic_detail

// Deterministic in (seed, config).
inline FramePair generate_synthetic_pair(std::uint64_t seed, const SceneConfig& cfg = {}) {
  using namespace synthetic_detail;
  require(cfg.overlap > 0.0 && cfg.overlap <= 1.0, ErrorKind::argument, "overlap must be in (0, 1]");
  require(cfg.object_count >= 1, ErrorKind::argument, "object_count must be >= 1");
  require(cfg.rotation_bound >= 0.0 && cfg.translation_bound >= 0.0 && cfg.noise_sigma >= 0.0, ErrorKind::argument,
          "bounds must be non-negative");
  require(cfg.min_range > 0.0 && cfg.max_range >= cfg.min_range, ErrorKind::argument, "bad range bounds");

  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 0x5851F42D4C957F2Dull);
  const std::size_t shared = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(cfg.overlap * static_cast<double>(cfg.object_count))));
  const std::size_t exclusive = cfg.object_count - std::min(shared, cfg.object_count);
  const std::size_t world_count = shared + 2 * exclusive;

  std::vector<Object> world;
  for (std::size_t k = 0; k < world_count; ++k) {
    Object o = make_object(rng, cfg);
    for (int attempt = 0; attempt < 50; ++attempt) {
      bool clash = false;
      for (const auto& other : world)
        if ((other.center - o.center).head<2>().norm() < footprint_radius(other) + footprint_radius(o)) clash = true;
      if (!clash) break;
      o = make_object(rng, cfg);
    }
    world.push_back(o);
  }
  const std::size_t per_object = std::max<std::size_t>(1, cfg.point_count / cfg.object_count);
  std::vector<std::vector<Sample>> samples;
  for (const auto& o : world) samples.push_back(sample_object(o, per_object, rng));

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double yaw = cfg.rotation_bound * (2.0 * u01(rng) - 1.0);
  const double tb = cfg.translation_bound;
  const Vec3 t(tb * (2.0 * u01(rng) - 1.0), tb * (2.0 * u01(rng) - 1.0), 0.1 * tb * (2.0 * u01(rng) - 1.0));
  const RigidTransform gt(Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(), t);

  std::vector<std::size_t> src_objects, tgt_objects;
  for (std::size_t k = 0; k < shared; ++k) {
    src_objects.push_back(k);
    tgt_objects.push_back(k);
  }
  for (std::size_t k = 0; k < exclusive; ++k) {
    src_objects.push_back(shared + k);
    tgt_objects.push_back(shared + exclusive + k);
  }

  std::mt19937_64 src_noise(rng()), tgt_noise(rng());
  auto build = [&](const std::vector<std::size_t>& ids, const RigidTransform* xf, std::mt19937_64& noise,
                   const char* name) {
    std::normal_distribution<double> g(0.0, 1.0);
    PointCloud c;
    c.frame_id = std::string(name) + "-" + std::to_string(seed);
    for (std::size_t id : ids)
      for (const auto& s : samples[id]) {
        Vec3 p = xf ? xf->apply(s.p) : s.p;
        if (cfg.noise_sigma > 0.0) p += cfg.noise_sigma * Vec3(g(noise), g(noise), g(noise));
        c.points.push_back(p);
        c.intensities.push_back(s.intensity);
      }
    return c;
  };

  FramePair pair;
  pair.source = build(src_objects, nullptr, src_noise, "source");
  pair.target = build(tgt_objects, &gt, tgt_noise, "target");
  pair.gt_transform = gt;
  pair.frame_distance = 1;
  return pair;
}

}  // namespace pillarmatch
