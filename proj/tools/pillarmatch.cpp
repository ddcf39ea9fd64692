// pillarmatch: synthetic data, KITTI preprocessing, training, matching and
// evaluation from the command line.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data, format or
// I/O error, 4 numeric error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pillarmatch/pillarmatch.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pillarmatch;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return kExitUsage;
    case ErrorKind::numeric: return kExitNumeric;
    default: return kExitData;
  }
}

// JSON config files: top-level keys belong to the subcommand being run, and a
// nested object keyed by a subcommand name holds that subcommand's options.
// Values may be strings, numbers, booleans or arrays.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string section) : section_(std::move(section)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return collect(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    std::vector<std::string> top;
    if (!section_.empty()) top.push_back(section_);
    if (!j.is_object()) throw CLI::ConversionError("config file: expected a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (v.is_object()) {
        flatten(v, {key}, items);
      } else {
        json single = json::object();
        single[key] = v;
        flatten(single, top, items);
      }
    }
    return items;
  }

 private:
  std::string section_;

  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  // Option strings that read as JSON numbers or booleans are echoed typed.
  static json typed(const std::string& s) {
    const json v = json::parse(s, nullptr, false);
    return !v.is_discarded() && (v.is_number() || v.is_boolean()) ? v : json(s);
  }

  static json typed(const std::vector<std::string>& r) {
    json a = json::array();
    for (const auto& s : r) a.push_back(typed(s));
    return a;
  }

  static void flatten(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    if (!j.is_object()) throw CLI::ConversionError("config file: expected a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(v, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (v.is_array())
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(v));
      out.push_back(item);
    }
  }

  static json collect(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (name == "help" || name == "config" || name == "out") continue;
      if (opt->get_type_size() != 0) {
        if (opt->count() > 0) {
          const auto& r = opt->results();
          j[name] = opt->get_expected_max() > 1 ? typed(r) : typed(r.back());
        } else if (default_also && !opt->get_default_str().empty()) {
          j[name] = typed(opt->get_default_str());
        }
      } else {
        j[name] = opt->count() > 0;
      }
    }
    for (const CLI::App* sub : app->get_subcommands())
      if (sub->parsed()) j[sub->get_name()] = collect(sub, default_also);
    return j;
  }
};

std::vector<std::string> csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Relative output paths live under $PILLARMATCH_RUN_ROOT when it is set.
fs::path run_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("PILLARMATCH_RUN_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Options shared by several subcommands.
struct TransportFlags {
  std::string mode = "alternating";
  int iterations = 100;
  std::string marginals = "uniform";
  double threshold = kDefaultMatchThreshold;

  void add(CLI::App* app) {
    app->add_option("--sinkhorn-mode", mode, "Sinkhorn update order")
        ->check(CLI::IsMember({"alternating", "simultaneous"}))
        ->capture_default_str();
    app->add_option("--sinkhorn-iters", iterations, "Sinkhorn iterations")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--marginals", marginals, "Sinkhorn target marginals")
        ->check(CLI::IsMember({"uniform", "dustbin_weighted"}))
        ->capture_default_str();
    app->add_option("--match-threshold", threshold, "minimum assignment probability of a hard match")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
  }

  TransportOptions options() const { return {iterations, parse_sinkhorn_mode(mode), parse_marginals(marginals)}; }
};

struct PreprocessFlags {
  PreprocessOptions opt;

  void add(CLI::App* app) {
    app->add_option("--n", opt.n, "key-points per source cloud")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--m", opt.m, "key-points per target cloud")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--z", opt.z, "points per pillar")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--d", opt.d, "pillar radius (m)")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--match-radius", opt.match_radius, "GT match distance (m)")->capture_default_str();
    app->add_option("--unmatch-radius", opt.unmatch_radius, "GT non-match distance (m)")->capture_default_str();
    app->add_option("--neighborhood-size", opt.keypoints.neighborhood_size, "neighbors in the smoothness term")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--min-separation", opt.keypoints.min_separation, "minimum key-point spacing (m), 0 disables")
        ->capture_default_str();
  }
};

struct SynthArgs {
  std::string out = "synth";
  int count = 32;
  std::uint64_t seed = 1;
  int frame_distance = 1;
  double rotation_deg = 10.0;
  SceneConfig scene;
  PreprocessFlags pre;
};

struct PreprocessArgs {
  std::string out = "kitti";
  std::string kitti_root;
  std::vector<std::string> train_sequences;
  std::vector<std::string> val_sequences;
  std::vector<int> distances{1, 5, 10};
  PreprocessFlags pre;
};

struct TrainArgs {
  std::string out = "train";
  std::string data;
  std::string resume;
  std::uint64_t seed = 0;
  int epochs = 300;
  int batch_size = 16;
  double lr = 1e-4;
  std::string loss = "nllp";
  std::int64_t max_steps = 0;
  int checkpoint_every = 0;
  HyperParams hp;
  std::string attention_scale = "full_depth";
  TransportFlags transport;
};

struct MatchArgs {
  std::string out = "match";
  std::string checkpoint;
  std::string pair;
  int timing_runs = 0;
  bool dump_assignment = false;
  bool plot_export = false;
  TransportFlags transport;
};

struct EvalArgs {
  std::string out = "eval";
  std::string checkpoint;
  std::string data;
  std::string matchers = "ours,nn,icp,vm";
  IcpOptions icp;
  TransportFlags transport;
};

// ---- synth --------------------------------------------------------------

void cmd_synth(const SynthArgs& a, const json& config) {
  const fs::path dir = run_path(a.out);
  SceneConfig sc = a.scene;
  sc.rotation_bound = a.rotation_deg * std::numbers::pi / 180.0;
  std::vector<PreprocessedPair> pairs;
  char id[32];
  for (int k = 0; k < a.count; ++k) {
    auto fp = generate_synthetic_pair(a.seed + static_cast<std::uint64_t>(k), sc);
    fp.frame_distance = a.frame_distance;
    std::snprintf(id, sizeof id, "synth_%06d", k);
    pairs.push_back(preprocess_pair(fp, a.pre.opt, id));
  }
  json manifest{{"kind", "synthetic"},
                {"seed", a.seed},
                {"scene",
                 {{"point_count", sc.point_count},
                  {"object_count", sc.object_count},
                  {"overlap", sc.overlap},
                  {"rotation_bound", sc.rotation_bound},
                  {"translation_bound", sc.translation_bound},
                  {"noise_sigma", sc.noise_sigma},
                  {"min_range", sc.min_range},
                  {"max_range", sc.max_range}}},
                {"preprocess", a.pre.opt.to_json()}};
  write_dataset(dir, pairs, manifest);
  write_json(dir / "config.json", config);
  std::cout << "wrote " << pairs.size() << " pairs to " << dir.string() << "\n";
}

// ---- preprocess -----------------------------------------------------------

// KITTI poses are camera-frame; when calib.txt carries Tr (velodyne to
// camera) the poses are conjugated into the velodyne frame.
std::optional<RigidTransform> read_velo_to_cam(const fs::path& calib) {
  std::ifstream in(calib);
  if (!in) return std::nullopt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Tr:", 0) != 0) continue;
    return kitti::parse_pose_line(line.substr(3));
  }
  return std::nullopt;
}

std::vector<PreprocessedPair> preprocess_sequence(const fs::path& root, const std::string& seq,
                                                  const std::vector<int>& distances, const PreprocessOptions& opt) {
  const fs::path seq_dir = root / "sequences" / seq;
  const fs::path velo = seq_dir / "velodyne";
  if (!fs::is_directory(velo)) fail(ErrorKind::io, "missing scan directory " + velo.string());
  std::vector<fs::path> scans;
  for (const auto& e : fs::directory_iterator(velo))
    if (e.path().extension() == ".bin") scans.push_back(e.path());
  std::sort(scans.begin(), scans.end());
  fs::path pose_file = root / "poses" / (seq + ".txt");
  if (!fs::exists(pose_file)) pose_file = seq_dir / "poses.txt";
  auto poses = kitti::load_poses(pose_file);
  if (poses.size() < scans.size())
    fail(ErrorKind::format, "sequence " + seq + ": " + std::to_string(scans.size()) + " scans but only " +
                                std::to_string(poses.size()) + " poses");
  if (const auto tr = read_velo_to_cam(seq_dir / "calib.txt"))
    for (auto& p : poses) p = tr->inverse() * p * *tr;

  std::vector<PreprocessedPair> out;
  std::map<std::size_t, PointCloud> cache;
  auto scan = [&](std::size_t k) -> const PointCloud& {
    auto it = cache.find(k);
    if (it == cache.end()) it = cache.emplace(k, kitti::load_scan(scans[k])).first;
    return it->second;
  };
  for (int dist : distances) {
    if (dist < 1) fail(ErrorKind::config, "frame distance must be >= 1");
    const auto step = static_cast<std::size_t>(dist);
    if (scans.size() <= step) {
      std::cerr << "warning: sequence " << seq << " has " << scans.size() << " scans, no pairs at distance " << dist << "\n";
      continue;
    }
    for (std::size_t i = 0; i + step < scans.size(); ++i) {
      FramePair fp{scan(i), scan(i + step), poses[i + step].inverse() * poses[i], dist};
      char id[64];
      std::snprintf(id, sizeof id, "%s_%06zu_%06zu", seq.c_str(), i, i + step);
      out.push_back(preprocess_pair(fp, opt, id));
    }
  }
  return out;
}

void cmd_preprocess(const PreprocessArgs& a, const json& config) {
  const fs::path dir = run_path(a.out);
  if (a.train_sequences.empty() && a.val_sequences.empty())
    fail(ErrorKind::config, "preprocess: give --train-sequences and/or --val-sequences");
  for (const auto& [split, seqs] : {std::pair{"train", a.train_sequences}, std::pair{"val", a.val_sequences}}) {
    if (seqs.empty()) continue;
    std::vector<PreprocessedPair> pairs;
    for (const auto& s : seqs) {
      auto p = preprocess_sequence(a.kitti_root, s, a.distances, a.pre.opt);
      pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    write_dataset(dir / split, pairs,
                  {{"kind", "kitti"}, {"split", split}, {"sequences", seqs}, {"distances", a.distances},
                   {"preprocess", a.pre.opt.to_json()}});
    std::cout << split << ": " << pairs.size() << " pairs\n";
  }
  write_json(dir / "config.json", config);
}

// ---- train ----------------------------------------------------------------

void cmd_train(TrainArgs a, const json& config) {
  const fs::path dir = run_path(a.out);
  const auto ds = read_dataset(a.data);
  if (ds.pairs.empty()) fail(ErrorKind::argument, "train: dataset " + a.data + " is empty");
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.seed = a.seed;
  cfg.loss = parse_loss_kind(a.loss);
  cfg.lr = a.lr;
  cfg.transport = a.transport.options();
  cfg.match_threshold = a.transport.threshold;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.max_steps = a.max_steps;

  TrainState st;
  if (!a.resume.empty()) {
    st = load_checkpoint(a.resume);
  } else {
    const auto& po = ds.pairs.front().options;
    a.hp.n = static_cast<int>(po.n);
    a.hp.m = static_cast<int>(po.m);
    a.hp.z = static_cast<int>(po.z);
    a.hp.d = po.d;
    a.hp.sinkhorn_iters = a.transport.iterations;
    a.hp.attention_scale = parse_attention_scale(a.attention_scale);
    a.hp.validate();
    st.model = ModelParameters<float>(a.hp, a.seed);
  }
  make_dir(dir / "checkpoints");
  write_json(dir / "config.json", config);
  const json extra{{"train", cfg.to_json()}};
  std::ofstream history(dir / "history.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!history) fail(ErrorKind::io, "cannot write " + (dir / "history.jsonl").string());
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochMetrics& em) {
    if (!std::isfinite(em.loss)) fail(ErrorKind::numeric, "train: non-finite loss at epoch " + std::to_string(em.epoch));
    history << em.to_json().dump() << '\n' << std::flush;
    std::printf("epoch %d steps %lld loss %.6f precision %.4f accuracy %.4f\n", em.epoch,
                static_cast<long long>(em.steps), em.loss, em.precision, em.accuracy);
    std::fflush(stdout);
  };
  cb.on_checkpoint = [&](TrainState& s, int epoch) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%06d.pmc", epoch);
    save_checkpoint(s, dir / "checkpoints" / name, extra);
  };
  train(st, ds.pairs, cfg, cb);
  save_checkpoint(st, dir / "checkpoint.pmc", extra);
  std::cout << "checkpoint " << (dir / "checkpoint.pmc").string() << " after " << st.epochs_done << " epochs, "
            << st.adam.step << " steps\n";
}

// ---- match ----------------------------------------------------------------

json keypoint_json(const std::vector<KeyPoint>& kps) {
  json out = json::array();
  for (const auto& k : kps) out.push_back({k.position.x(), k.position.y(), k.position.z()});
  return out;
}

void cmd_match(const MatchArgs& a, const json& config) {
  const fs::path dir = run_path(a.out);
  auto st = load_checkpoint(a.checkpoint);
  const auto pair = load_pair(a.pair);
  check_compatible(st.model.hp, pair.options, "pair '" + pair.id + "'");
  const auto transport = a.transport.options();
  const auto log_p = infer_assignment(st.model, pair.input, transport);
  if (!log_p.allFinite()) fail(ErrorKind::numeric, "match: non-finite assignment matrix");
  const auto ms = extract_matches(log_p, a.transport.threshold);
  const std::set<std::pair<std::size_t, std::size_t>> gt(pair.labels.matched.begin(), pair.labels.matched.end());

  make_dir(dir);
  write_json(dir / "config.json", config);
  json matches = json::array();
  for (const auto& m : ms.pairs)
    matches.push_back({{"i", m.i}, {"j", m.j}, {"confidence", m.confidence}, {"correct", gt.count({m.i, m.j}) > 0}});
  const auto q = evaluate_matches(ms, pair.labels);
  const auto score = matching_score(ms, pair.labels);
  write_json(dir / "matches.json", {{"pair", pair.id},
                                    {"matches", matches},
                                    {"unmatched_source", ms.unmatched_i},
                                    {"unmatched_target", ms.unmatched_j},
                                    {"matching_score", score ? json(*score) : json(nullptr)},
                                    {"precision", q.precision()},
                                    {"accuracy", q.accuracy()},
                                    {"match_threshold", a.transport.threshold}});
  if (a.dump_assignment) {
    std::ostringstream csv;
    write_assignment_csv(csv, log_p);
    write_text(dir / "assignment.csv", csv.str());
  }
  if (a.plot_export) {
    json lines = json::array();
    for (const auto& m : ms.pairs)
      lines.push_back({{"source", m.i}, {"target", m.j}, {"correct", gt.count({m.i, m.j}) > 0}});
    write_json(dir / "plot.json", {{"pair", pair.id},
                                   {"source_keypoints", keypoint_json(pair.source_keypoints)},
                                   {"target_keypoints", keypoint_json(pair.target_keypoints)},
                                   {"gt_transform", json(std::vector<double>(pair.gt_transform.matrix().data(),
                                                                             pair.gt_transform.matrix().data() + 16))},
                                   {"lines", lines}});
  }
  if (a.timing_runs > 0) {
    double total = 0.0;
    for (int k = 0; k < a.timing_runs; ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)infer_assignment(st.model, pair.input, transport);
      total += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    write_json(dir / "timing.json", {{"runs", a.timing_runs}, {"mean_forward_ms", total / a.timing_runs}});
    std::printf("mean forward latency %.3f ms over %d runs\n", total / a.timing_runs, a.timing_runs);
  }
  std::printf("%zu matches, precision %.4f, matching score %s\n", ms.pairs.size(), q.precision(),
              score ? std::to_string(*score).c_str() : "n/a");
}

// ---- eval -----------------------------------------------------------------

void cmd_eval(const EvalArgs& a, const json& config) {
  const fs::path dir = run_path(a.out);
  std::vector<Matcher> matchers;
  for (const auto& s : csv_list(a.matchers)) matchers.push_back(parse_matcher(s));
  if (matchers.empty()) fail(ErrorKind::config, "eval: no matchers requested");
  const bool need_model = std::find(matchers.begin(), matchers.end(), Matcher::ours) != matchers.end();
  std::optional<TrainState> st;
  if (need_model) {
    if (a.checkpoint.empty()) fail(ErrorKind::config, "eval: matcher 'ours' needs --checkpoint");
    st = load_checkpoint(a.checkpoint);
  }
  const auto ds = read_dataset(a.data);
  EvalOptions eo;
  eo.transport = a.transport.options();
  eo.match_threshold = a.transport.threshold;
  eo.icp = a.icp;
  const auto rep = evaluate(ds.pairs, matchers, st ? &st->model : nullptr, eo);

  make_dir(dir);
  write_json(dir / "config.json", config);
  std::ostringstream table, lines;
  rep.render_table(table);
  rep.write_jsonl(lines);
  write_text(dir / "report.txt", table.str());
  write_text(dir / "frames.jsonl", lines.str());
  write_json(dir / "summary.json", rep.summary());
  std::cout << table.str();
}

}  // namespace

// The subcommand named on the command line, and the arguments with any
// --config option moved in front of it so it may appear anywhere.
std::pair<std::string, std::vector<std::string>> normalize_args(int argc, char** argv,
                                                                const std::vector<std::string>& commands) {
  std::string command;
  std::vector<std::string> config, rest;
  for (int k = 1; k < argc; ++k) {
    const std::string a = argv[k];
    if (a == "--config" && k + 1 < argc) {
      config = {a, argv[++k]};
    } else if (a.rfind("--config=", 0) == 0) {
      config = {a};
    } else {
      if (command.empty() && std::find(commands.begin(), commands.end(), a) != commands.end()) command = a;
      rest.push_back(a);
    }
  }
  config.insert(config.end(), rest.begin(), rest.end());
  return {command, config};
}

int main(int argc, char** argv) {
  const auto [command, args] = normalize_args(argc, argv, {"synth", "preprocess", "train", "match", "eval"});
  CLI::App app{"Pillar-based point-cloud matching: data preparation, training, matching and evaluation"};
  app.name("pillarmatch");
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>(command));
  app.set_config("--config", "", "JSON file with option values for the subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate seeded synthetic pairs as a preprocessed dataset");
  s->add_option("--out", synth.out, "dataset directory")->capture_default_str();
  s->add_option("--count", synth.count, "number of pairs")->check(CLI::NonNegativeNumber)->capture_default_str();
  s->add_option("--seed", synth.seed, "seed of the first pair; pair k uses seed + k")->capture_default_str();
  s->add_option("--frame-distance", synth.frame_distance, "frame distance recorded for every pair")->capture_default_str();
  s->add_option("--points", synth.scene.point_count, "points per cloud")->capture_default_str();
  s->add_option("--objects", synth.scene.object_count, "objects per cloud")->capture_default_str();
  s->add_option("--overlap", synth.scene.overlap, "shared fraction of objects")->capture_default_str();
  s->add_option("--rotation-deg", synth.rotation_deg, "maximum yaw (degrees)")->capture_default_str();
  s->add_option("--translation", synth.scene.translation_bound, "maximum translation (m)")->capture_default_str();
  s->add_option("--noise", synth.scene.noise_sigma, "per-axis Gaussian noise (m)")->capture_default_str();
  synth.pre.add(s);

  PreprocessArgs prep;
  auto* p = app.add_subcommand("preprocess", "turn KITTI odometry sequences into preprocessed pairs");
  p->add_option("--out", prep.out, "output directory (train/ and val/ datasets)")->capture_default_str();
  p->add_option("--kitti-root", prep.kitti_root, "root holding sequences/<seq>/velodyne and poses/<seq>.txt")->required();
  p->add_option("--train-sequences", prep.train_sequences, "sequences for the training split")->delimiter(',');
  p->add_option("--val-sequences", prep.val_sequences, "sequences for the validation split")->delimiter(',');
  p->add_option("--distances", prep.distances, "frame distances")->delimiter(',')->capture_default_str();
  prep.pre.add(p);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the matcher on a preprocessed dataset");
  t->add_option("--out", tr.out, "run directory")->capture_default_str();
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--resume", tr.resume, "checkpoint to continue from");
  t->add_option("--seed", tr.seed, "initialization and shuffling seed")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "last epoch to run")->capture_default_str();
  t->add_option("--batch-size", tr.batch_size, "pairs per optimizer step")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--loss", tr.loss, "training loss")->check(CLI::IsMember({"nll", "nllp", "dce"}))->capture_default_str();
  t->add_option("--max-steps", tr.max_steps, "stop after this many optimizer steps, 0 = no limit")->capture_default_str();
  t->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between checkpoints, 0 = final only")->capture_default_str();
  t->add_option("--feature-depth", tr.hp.feature_depth, "feature depth D'")->capture_default_str();
  t->add_option("--heads", tr.hp.heads, "attention heads")->capture_default_str();
  t->add_option("--layers", tr.hp.layers, "attention layers")->capture_default_str();
  t->add_option("--position-widths", tr.hp.position_widths, "hidden widths of the position encoder")
      ->delimiter(',')
      ->capture_default_str();
  t->add_option("--attention-scale", tr.attention_scale, "attention logit scaling")
      ->check(CLI::IsMember({"full_depth", "per_head"}))
      ->capture_default_str();
  t->add_option("--dustbin-init", tr.hp.dustbin_init, "initial dustbin score")->capture_default_str();
  t->add_option("--output-init-gain", tr.hp.output_init_gain, "init gain of the output maps, <= 0 selects 1/sqrt(D')")
      ->capture_default_str();
  tr.transport.add(t);

  MatchArgs mt;
  auto* m = app.add_subcommand("match", "match one preprocessed pair with a trained checkpoint");
  m->add_option("--out", mt.out, "output directory")->capture_default_str();
  m->add_option("--checkpoint", mt.checkpoint, "trained checkpoint")->required();
  m->add_option("--pair", mt.pair, "preprocessed pair file (.pmc)")->required();
  m->add_option("--timing-runs", mt.timing_runs, "forward passes to time, 0 = no timing")->capture_default_str();
  m->add_flag("--dump-assignment", mt.dump_assignment, "write the full assignment matrix as CSV");
  m->add_flag("--plot-export", mt.plot_export, "write key-points and match lines as JSON");
  mt.transport.add(m);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "matching score and transform errors per matcher and frame distance");
  e->add_option("--out", ev.out, "output directory")->capture_default_str();
  e->add_option("--checkpoint", ev.checkpoint, "trained checkpoint (needed by 'ours')");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--matchers", ev.matchers, "comma-separated subset of ours,nn,icp,vm")->capture_default_str();
  e->add_option("--icp-iterations", ev.icp.max_iterations, "ICP iteration cap")->capture_default_str();
  e->add_option("--icp-reject", ev.icp.reject_distance, "ICP correspondence rejection distance (m)")->capture_default_str();
  ev.transport.add(e);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitUsage;
  }

  const json config = json::parse(app.config_to_str(true, false));
  try {
    if (*s) cmd_synth(synth, config);
    if (*p) cmd_preprocess(prep, config);
    if (*t) cmd_train(tr, config);
    if (*m) cmd_match(mt, config);
    if (*e) cmd_eval(ev, config);
  } catch (const Error& err) {
    std::cerr << "error (" << to_string(err.kind()) << "): " << err.what() << "\n";
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
  return 0;
}
