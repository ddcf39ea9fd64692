#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pillarmatch/cloud.hpp"
#include "pillarmatch/container.hpp"
#include "pillarmatch/error.hpp"
#include "pillarmatch/kdtree.hpp"
#include "pillarmatch/network.hpp"
#include "pillarmatch/rigid_transform.hpp"

namespace pillarmatch {

struct PreprocessOptions {
  std::size_t n = 100;
  std::size_t m = 100;
  std::size_t z = 100;
  double d = 0.5;
  double match_radius = kDefaultMatchRadius;
  double unmatch_radius = kDefaultUnmatchRadius;
  KeyPointOptions keypoints{};

  nlohmann::json to_json() const {
    return {{"n", n},
            {"m", m},
            {"z", z},
            {"d", d},
            {"match_radius", match_radius},
            {"unmatch_radius", unmatch_radius},
            {"neighborhood_size", keypoints.neighborhood_size},
            {"min_separation", keypoints.min_separation}};
  }

  static PreprocessOptions from_json(const nlohmann::json& j) {
    PreprocessOptions o;
    o.n = j.value("n", o.n);
    o.m = j.value("m", o.m);
    o.z = j.value("z", o.z);
    o.d = j.value("d", o.d);
    o.match_radius = j.value("match_radius", o.match_radius);
    o.unmatch_radius = j.value("unmatch_radius", o.unmatch_radius);
    o.keypoints.neighborhood_size = j.value("neighborhood_size", o.keypoints.neighborhood_size);
    o.keypoints.min_separation = j.value("min_separation", o.keypoints.min_separation);
    return o;
  }
};

// A frame pair reduced to what the matcher consumes: key-points, flattened
// pillar stacks and ground-truth labels.
struct PreprocessedPair {
  std::string id;
  int frame_distance = 1;
  RigidTransform gt_transform;
  std::vector<KeyPoint> source_keypoints;
  std::vector<KeyPoint> target_keypoints;
  PairInput<float> input;
  CorrespondenceLabels labels;
  PreprocessOptions options;
};

inline std::vector<Pillar> build_pillars(const PointCloud& cloud, const KdTree& tree, const std::vector<KeyPoint>& kps,
                                         std::size_t z, double d) {
  std::vector<Pillar> out;
  out.reserve(kps.size());
  for (const auto& kp : kps) out.push_back(sample_pillar(cloud, tree, kp, z, d));
  return out;
}

inline PreprocessedPair preprocess_pair(const FramePair& pair, const PreprocessOptions& opt, std::string id = {}) {
  pair.source.validate();
  pair.target.validate();
  require_rigid(pair.gt_transform, "preprocess_pair");
  PreprocessedPair out;
  out.id = std::move(id);
  out.frame_distance = pair.frame_distance;
  out.gt_transform = pair.gt_transform;
  out.options = opt;
  const KdTree src_tree(pair.source.points), tgt_tree(pair.target.points);
  out.source_keypoints = select_keypoints(pair.source, src_tree, opt.n, opt.keypoints);
  out.target_keypoints = select_keypoints(pair.target, tgt_tree, opt.m, opt.keypoints);
  out.input.source = make_cloud_input<float>(build_pillars(pair.source, src_tree, out.source_keypoints, opt.z, opt.d));
  out.input.target = make_cloud_input<float>(build_pillars(pair.target, tgt_tree, out.target_keypoints, opt.z, opt.d));
  out.labels = label_correspondences(out.source_keypoints, out.target_keypoints, pair.gt_transform, opt.match_radius,
                                     opt.unmatch_radius);
  return out;
}

namespace dataset_detail {

inline std::vector<std::int64_t> to_i64(const std::vector<std::size_t>& v) {
  return {v.begin(), v.end()};
}

inline std::vector<std::size_t> to_size(const std::vector<std::int64_t>& v, const std::string& what) {
  std::vector<std::size_t> out;
  for (auto x : v) {
    if (x < 0) fail(ErrorKind::format, what + ": negative index");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

inline void put_keypoints(Container& c, const std::string& pre, const std::vector<KeyPoint>& kps) {
  ad::Matrix<double> pos(static_cast<Eigen::Index>(kps.size()), 4);
  std::vector<std::int64_t> meta;
  for (std::size_t k = 0; k < kps.size(); ++k) {
    pos.row(static_cast<Eigen::Index>(k)) << kps[k].position.x(), kps[k].position.y(), kps[k].position.z(),
        kps[k].smoothness;
    meta.push_back(static_cast<std::int64_t>(kps[k].index));
    meta.push_back(kps[k].kind == KeyPointKind::sharp ? 0 : 1);
  }
  c.put_matrix(pre + ".keypoints", pos);
  c.put_ints(pre + ".keypoint_meta", meta, {static_cast<std::int64_t>(kps.size()), 2});
}

inline std::vector<KeyPoint> get_keypoints(const Container& c, const std::string& pre) {
  const auto pos = c.matrix<double>(pre + ".keypoints");
  const auto meta = c.ints(pre + ".keypoint_meta");
  if (pos.cols() != 4 || meta.size() != static_cast<std::size_t>(pos.rows()) * 2)
    fail(ErrorKind::format, pre + ": malformed key-point tensors");
  std::vector<KeyPoint> out(static_cast<std::size_t>(pos.rows()));
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    out[k].position = Vec3(pos(r, 0), pos(r, 1), pos(r, 2));
    out[k].smoothness = pos(r, 3);
    out[k].index = static_cast<std::size_t>(meta[2 * k]);
    out[k].kind = meta[2 * k + 1] == 0 ? KeyPointKind::sharp : KeyPointKind::planar;
  }
  return out;
}

}  // namespace dataset_detail

inline constexpr const char* kPairKind = "preprocessed_pair";

inline Container to_container(const PreprocessedPair& p) {
  using namespace dataset_detail;
  Container c;
  c.kind = kPairKind;
  c.manifest = p.options.to_json();
  c.manifest["id"] = p.id;
  c.manifest["frame_distance"] = p.frame_distance;
  c.manifest["feature_layout"] = "xyz,intensity,xyz-centroid,range,xyz-keypoint";
  c.put_matrix("gt_transform", ad::Matrix<double>(p.gt_transform.matrix()));
  put_keypoints(c, "source", p.source_keypoints);
  put_keypoints(c, "target", p.target_keypoints);
  c.put_matrix("source.stacks", p.input.source.stacks);
  c.put_matrix("target.stacks", p.input.target.stacks);
  std::vector<std::int64_t> matched;
  for (const auto& [i, j] : p.labels.matched) {
    matched.push_back(static_cast<std::int64_t>(i));
    matched.push_back(static_cast<std::int64_t>(j));
  }
  c.put_ints("labels.matched", matched, {static_cast<std::int64_t>(p.labels.matched.size()), 2});
  c.put_ints("labels.unmatched_rows", to_i64(p.labels.unmatched_rows));
  c.put_ints("labels.unmatched_cols", to_i64(p.labels.unmatched_cols));
  c.put_ints("labels.ignored_rows", to_i64(p.labels.ignored_rows));
  c.put_ints("labels.ignored_cols", to_i64(p.labels.ignored_cols));
  return c;
}

inline PreprocessedPair from_container(const Container& c) {
  using namespace dataset_detail;
  if (c.kind != kPairKind) fail(ErrorKind::format, "expected a preprocessed pair, got '" + c.kind + "'");
  PreprocessedPair p;
  try {
    p.options = PreprocessOptions::from_json(c.manifest);
    p.id = c.manifest.value("id", std::string{});
    p.frame_distance = c.manifest.value("frame_distance", 1);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::format, std::string("pair manifest: ") + ex.what());
  }
  const auto gt = c.matrix<double>("gt_transform");
  if (gt.rows() != 4 || gt.cols() != 4) fail(ErrorKind::format, "gt_transform must be 4x4");
  p.gt_transform = RigidTransform(Mat4(gt));
  require_rigid(p.gt_transform, "pair gt_transform");
  p.source_keypoints = get_keypoints(c, "source");
  p.target_keypoints = get_keypoints(c, "target");
  auto positions = [](const std::vector<KeyPoint>& kps) {
    ad::Matrix<float> out(static_cast<Eigen::Index>(kps.size()), 3);
    for (std::size_t k = 0; k < kps.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = kps[k].position.cast<float>().transpose();
    return out;
  };
  p.input.source = {c.matrix<float>("source.stacks"), positions(p.source_keypoints)};
  p.input.target = {c.matrix<float>("target.stacks"), positions(p.target_keypoints)};
  if (p.input.source.stacks.rows() != static_cast<Eigen::Index>(p.source_keypoints.size()) ||
      p.input.target.stacks.rows() != static_cast<Eigen::Index>(p.target_keypoints.size()))
    fail(ErrorKind::format, "stack rows do not match key-point counts");
  const auto matched = c.ints("labels.matched");
  if (matched.size() % 2) fail(ErrorKind::format, "labels.matched must have two columns");
  for (std::size_t k = 0; k < matched.size(); k += 2) {
    if (matched[k] < 0 || matched[k + 1] < 0) fail(ErrorKind::format, "labels.matched: negative index");
    p.labels.matched.emplace_back(static_cast<std::size_t>(matched[k]), static_cast<std::size_t>(matched[k + 1]));
  }
  p.labels.unmatched_rows = to_size(c.ints("labels.unmatched_rows"), "labels.unmatched_rows");
  p.labels.unmatched_cols = to_size(c.ints("labels.unmatched_cols"), "labels.unmatched_cols");
  p.labels.ignored_rows = to_size(c.ints("labels.ignored_rows"), "labels.ignored_rows");
  p.labels.ignored_cols = to_size(c.ints("labels.ignored_cols"), "labels.ignored_cols");
  return p;
}

inline void save_pair(const PreprocessedPair& p, const std::filesystem::path& path) { to_container(p).write(path); }

inline PreprocessedPair load_pair(const std::filesystem::path& path) { return from_container(Container::read(path)); }

// A dataset directory holds manifest.json and pairs/<id>.pmc files listed in
// the manifest in order.
struct Dataset {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<PreprocessedPair> pairs;
};

inline std::string pair_file_name(const std::string& id) { return id + ".pmc"; }

inline void write_dataset(const std::filesystem::path& dir, const std::vector<PreprocessedPair>& pairs,
                          nlohmann::json manifest) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "pairs", ec);
  if (ec) fail(ErrorKind::io, "cannot create " + (dir / "pairs").string() + ": " + ec.message());
  manifest["format_version"] = 1;
  manifest["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs) {
    require(!p.id.empty(), ErrorKind::argument, "pair without id");
    save_pair(p, dir / "pairs" / pair_file_name(p.id));
    manifest["pairs"].push_back({{"id", p.id},
                                 {"file", "pairs/" + pair_file_name(p.id)},
                                 {"frame_distance", p.frame_distance},
                                 {"matched", p.labels.matched.size()},
                                 {"unmatched_rows", p.labels.unmatched_rows.size()},
                                 {"unmatched_cols", p.labels.unmatched_cols.size()}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorKind::io, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::io, "cannot open " + (dir / "manifest.json").string());
  Dataset ds;
  try {
    ds.manifest = nlohmann::json::parse(in);
    for (const auto& entry : ds.manifest.at("pairs")) ds.pairs.push_back(load_pair(dir / entry.at("file").get<std::string>()));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::format, "dataset manifest: " + std::string(ex.what()));
  }
  return ds;
}

}  // namespace pillarmatch
