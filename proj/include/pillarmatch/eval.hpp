#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pillarmatch/dataset.hpp"
#include "pillarmatch/registration.hpp"
#include "pillarmatch/train.hpp"

namespace pillarmatch {

enum class Matcher { ours, nn, icp, vm };

inline const char* to_string(Matcher m) {
  switch (m) {
    case Matcher::ours: return "ours";
    case Matcher::nn: return "nn";
    case Matcher::icp: return "icp";
    case Matcher::vm: return "vm";
  }
  return "?";
}

inline Matcher parse_matcher(const std::string& s) {
  if (s == "ours") return Matcher::ours;
  if (s == "nn") return Matcher::nn;
  if (s == "icp") return Matcher::icp;
  if (s == "vm") return Matcher::vm;
  fail(ErrorKind::config, "unknown matcher '" + s + "' (expected ours, nn, icp or vm)");
}

struct EvalOptions {
  TransportOptions transport{};
  double match_threshold = kDefaultMatchThreshold;
  IcpOptions icp{};
};

// One matcher on one frame pair. A frame whose transform cannot be estimated
// is a failure: it keeps its matching score but has no transform errors.
struct FrameRecord {
  std::string id;
  int frame_distance = 1;
  Matcher matcher = Matcher::nn;
  std::optional<double> matching_score;
  std::size_t predicted_matches = 0;
  bool failed = false;
  std::string failure;
  double t_delta = 0.0;
  double t_theta = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"id", id},
                     {"frame_distance", frame_distance},
                     {"matcher", to_string(matcher)},
                     {"predicted_matches", predicted_matches},
                     {"failed", failed}};
    j["matching_score"] = matching_score ? nlohmann::json(*matching_score) : nlohmann::json(nullptr);
    if (failed) {
      j["failure"] = failure;
    } else {
      j["t_delta"] = t_delta;
      j["t_theta"] = t_theta;
    }
    return j;
  }
};

inline void estimate_into(FrameRecord& rec, const std::vector<Vec3>& src, const std::vector<Vec3>& tgt,
                          const RigidTransform& gt) {
  try {
    const auto err = transform_errors(estimate_transform_svd(src, tgt), gt);
    rec.t_delta = err.translation;
    rec.t_theta = err.rotation;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::insufficient_correspondences && e.kind() != ErrorKind::degenerate_geometry) throw;
    rec.failed = true;
    rec.failure = e.what();
  }
}

inline void estimate_from_matches(FrameRecord& rec, const MatchSet& ms, const PreprocessedPair& p) {
  std::vector<Vec3> src, tgt;
  for (const auto& m : ms.pairs) {
    src.push_back(p.source_keypoints[m.i].position);
    tgt.push_back(p.target_keypoints[m.j].position);
  }
  rec.predicted_matches = ms.pairs.size();
  rec.matching_score = matching_score(ms, p.labels);
  estimate_into(rec, src, tgt, p.gt_transform);
}

// `model` is only used by the learned matcher and may be null otherwise.
inline FrameRecord evaluate_frame(Matcher matcher, const PreprocessedPair& p, ModelParameters<float>* model,
                                  const EvalOptions& opt) {
  if (!p.gt_transform.is_valid(kInputTransformTolerance)) fail(ErrorKind::argument, "pair '" + p.id + "' lacks a valid gt transform");
  FrameRecord rec;
  rec.id = p.id;
  rec.frame_distance = p.frame_distance;
  rec.matcher = matcher;
  const auto src = positions(p.source_keypoints), tgt = positions(p.target_keypoints);
  switch (matcher) {
    case Matcher::ours: {
      require(model != nullptr, ErrorKind::argument, "learned matcher needs a model");
      check_compatible(model->hp, p.options, "pair '" + p.id + "'");
      estimate_from_matches(rec, extract_matches(infer_assignment(*model, p.input, opt.transport), opt.match_threshold), p);
      break;
    }
    case Matcher::nn:
      estimate_from_matches(rec, nn_matcher(src, tgt), p);
      break;
    case Matcher::vm: {
      MatchSet ms;
      for (const auto& [i, j] : p.labels.matched) ms.pairs.push_back({i, j, 1.0});
      estimate_from_matches(rec, ms, p);
      break;
    }
    case Matcher::icp: {
      try {
        const auto res = icp(src, tgt, RigidTransform{}, opt.icp);
        const auto err = transform_errors(res.transform, p.gt_transform);
        rec.t_delta = err.translation;
        rec.t_theta = err.rotation;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::insufficient_correspondences && e.kind() != ErrorKind::degenerate_geometry) throw;
        rec.failed = true;
        rec.failure = e.what();
      }
      break;
    }
  }
  return rec;
}

struct CellStats {
  double ms_sum = 0.0;
  std::size_t ms_count = 0;
  double delta_sum = 0.0;
  double theta_sum = 0.0;
  std::size_t ok = 0;
  std::size_t failures = 0;

  std::optional<double> ms() const { return ms_count ? std::optional<double>(ms_sum / double(ms_count)) : std::nullopt; }
  std::optional<double> delta() const { return ok ? std::optional<double>(delta_sum / double(ok)) : std::nullopt; }
  std::optional<double> theta() const { return ok ? std::optional<double>(theta_sum / double(ok)) : std::nullopt; }
};

struct EvalReport {
  std::vector<FrameRecord> records;

  std::vector<int> splits() const {
    std::set<int> s;
    for (const auto& r : records) s.insert(r.frame_distance);
    return {s.begin(), s.end()};
  }

  std::vector<Matcher> matchers() const {
    std::set<int> s;
    for (const auto& r : records) s.insert(static_cast<int>(r.matcher));
    std::vector<Matcher> out;
    for (int m : s) out.push_back(static_cast<Matcher>(m));
    return out;
  }

  CellStats cell(Matcher m, int split) const {
    CellStats c;
    for (const auto& r : records) {
      if (r.matcher != m || r.frame_distance != split) continue;
      if (r.matching_score) {
        c.ms_sum += *r.matching_score;
        ++c.ms_count;
      }
      if (r.failed) {
        ++c.failures;
      } else {
        c.delta_sum += r.t_delta;
        c.theta_sum += r.t_theta;
        ++c.ok;
      }
    }
    return c;
  }

  // Blocks of Matching Score, Translational Error and Rotational Error, one
  // row per matcher and one column per frame-distance split, then failures.
  void render_table(std::ostream& os) const {
    const auto cols = splits();
    const auto rows = matchers();
    auto header = [&](const char* title) {
      os << title << '\n' << pad("matcher");
      for (int s : cols) os << pad("V" + std::to_string(s));
      os << '\n';
    };
    auto num = [](std::optional<double> v) {
      if (!v) return std::string("-");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", *v);
      return std::string(buf);
    };
    header("Matching Score");
    for (auto m : rows) {
      if (m == Matcher::icp) continue;
      os << pad(to_string(m));
      for (int s : cols) os << pad(num(cell(m, s).ms()));
      os << '\n';
    }
    header("Translational Error (m)");
    for (auto m : rows) {
      os << pad(to_string(m));
      for (int s : cols) os << pad(num(cell(m, s).delta()));
      os << '\n';
    }
    header("Rotational Error (rad)");
    for (auto m : rows) {
      os << pad(to_string(m));
      for (int s : cols) os << pad(num(cell(m, s).theta()));
      os << '\n';
    }
    header("Failures (frames)");
    for (auto m : rows) {
      os << pad(to_string(m));
      for (int s : cols) {
        const auto c = cell(m, s);
        os << pad(std::to_string(c.failures) + "/" + std::to_string(c.failures + c.ok));
      }
      os << '\n';
    }
  }

  nlohmann::json summary() const {
    nlohmann::json j = nlohmann::json::object();
    for (auto m : matchers())
      for (int s : splits()) {
        const auto c = cell(m, s);
        auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        j[to_string(m)]["V" + std::to_string(s)] = {
            {"matching_score", opt(c.ms())}, {"t_delta", opt(c.delta())}, {"t_theta", opt(c.theta())},
            {"failures", c.failures}, {"frames", c.failures + c.ok}};
      }
    return j;
  }

  void write_jsonl(std::ostream& os) const {
    for (const auto& r : records) os << r.to_json().dump() << '\n';
  }

 private:
  static std::string pad(const std::string& s) {
    constexpr std::size_t width = 10;
    return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
  }
};

inline EvalReport evaluate(std::span<const PreprocessedPair> pairs, const std::vector<Matcher>& matchers,
                           ModelParameters<float>* model, const EvalOptions& opt) {
  EvalReport rep;
  for (const auto& p : pairs)
    for (auto m : matchers) rep.records.push_back(evaluate_frame(m, p, model, opt));
  return rep;
}

}  // namespace pillarmatch
