#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pillarmatch/adam.hpp"
#include "pillarmatch/autodiff/ops.hpp"
#include "pillarmatch/container.hpp"
#include "pillarmatch/dataset.hpp"
#include "pillarmatch/losses.hpp"
#include "pillarmatch/network.hpp"
#include "pillarmatch/registration.hpp"
#include "pillarmatch/transport.hpp"

namespace pillarmatch {

inline const char* to_string(SinkhornMode m) { return m == SinkhornMode::alternating ? "alternating" : "simultaneous"; }
inline const char* to_string(Marginals m) { return m == Marginals::uniform ? "uniform" : "dustbin_weighted"; }
inline const char* to_string(AttentionScale s) { return s == AttentionScale::full_depth ? "full_depth" : "per_head"; }

inline SinkhornMode parse_sinkhorn_mode(const std::string& s) {
  if (s == "alternating") return SinkhornMode::alternating;
  if (s == "simultaneous") return SinkhornMode::simultaneous;
  fail(ErrorKind::config, "unknown sinkhorn mode '" + s + "' (expected alternating or simultaneous)");
}

inline Marginals parse_marginals(const std::string& s) {
  if (s == "uniform") return Marginals::uniform;
  if (s == "dustbin_weighted") return Marginals::dustbin_weighted;
  fail(ErrorKind::config, "unknown marginals '" + s + "' (expected uniform or dustbin_weighted)");
}

inline AttentionScale parse_attention_scale(const std::string& s) {
  if (s == "full_depth") return AttentionScale::full_depth;
  if (s == "per_head") return AttentionScale::per_head;
  fail(ErrorKind::config, "unknown attention scale '" + s + "' (expected full_depth or per_head)");
}

inline nlohmann::json to_json(const HyperParams& hp) {
  return {{"n", hp.n},
          {"m", hp.m},
          {"z", hp.z},
          {"d", hp.d},
          {"feature_depth", hp.feature_depth},
          {"heads", hp.heads},
          {"layers", hp.layers},
          {"sinkhorn_iters", hp.sinkhorn_iters},
          {"position_widths", hp.position_widths},
          {"attention_scale", to_string(hp.attention_scale)},
          {"dustbin_init", hp.dustbin_init},
          {"output_init_gain", hp.resolved_output_gain()}};
}

inline HyperParams hyperparams_from_json(const nlohmann::json& j) {
  HyperParams hp;
  try {
    hp.n = j.value("n", hp.n);
    hp.m = j.value("m", hp.m);
    hp.z = j.value("z", hp.z);
    hp.d = j.value("d", hp.d);
    hp.feature_depth = j.value("feature_depth", hp.feature_depth);
    hp.heads = j.value("heads", hp.heads);
    hp.layers = j.value("layers", hp.layers);
    hp.sinkhorn_iters = j.value("sinkhorn_iters", hp.sinkhorn_iters);
    hp.position_widths = j.value("position_widths", hp.position_widths);
    hp.attention_scale = parse_attention_scale(j.value("attention_scale", std::string(to_string(hp.attention_scale))));
    hp.dustbin_init = j.value("dustbin_init", hp.dustbin_init);
    hp.output_init_gain = j.value("output_init_gain", hp.output_init_gain);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::config, std::string("hyperparameters: ") + ex.what());
  }
  hp.validate();
  return hp;
}

// Log-domain assignment matrices for every pair of a batch.
template <class S>
std::vector<ad::Var<S>> assign_batch(ad::Tape<S>& tape, ModelParameters<S>& model, std::span<const PairInput<S>> pairs,
                                     ad::Mode mode, const TransportOptions& transport) {
  const auto desc = describe_batch(tape, model, pairs, mode);
  const ad::Var<S> bin = tape.param(model.dustbin);
  std::vector<ad::Var<S>> out;
  for (const auto& [dk, dl] : desc) out.push_back(sinkhorn(augment_dustbin(score_matrix(dk, dl), bin), transport));
  return out;
}

// Mean loss over the batch. Pairs and labels are matched by position.
template <class S>
ad::Var<S> batch_loss(const std::vector<ad::Var<S>>& log_p, std::span<const CorrespondenceLabels* const> labels,
                      LossKind kind) {
  require(log_p.size() == labels.size() && !log_p.empty(), ErrorKind::argument, "batch_loss: size mismatch");
  std::vector<ad::Var<S>> terms;
  for (std::size_t k = 0; k < log_p.size(); ++k) terms.push_back(loss(kind, log_p[k], *labels[k]));
  return ad::scale(ad::add_all(std::span<const ad::Var<S>>(terms)), static_cast<S>(1.0 / static_cast<double>(terms.size())));
}

// Eval-mode inference on one pair.
template <class S>
ad::Matrix<S> infer_assignment(ModelParameters<S>& model, const PairInput<S>& input, const TransportOptions& transport) {
  ad::Tape<S> tape;
  const auto log_p = assign_batch(tape, model, std::span<const PairInput<S>>(&input, 1), ad::Mode::eval, transport);
  return log_p.front().value();
}

inline void check_compatible(const HyperParams& hp, const PreprocessOptions& opt, const std::string& what) {
  if (static_cast<std::size_t>(hp.z) != opt.z || std::abs(hp.d - opt.d) > 1e-12 || static_cast<std::size_t>(hp.n) != opt.n ||
      static_cast<std::size_t>(hp.m) != opt.m)
    fail(ErrorKind::config, what + ": model expects n=" + std::to_string(hp.n) + " m=" + std::to_string(hp.m) +
                                " z=" + std::to_string(hp.z) + " d=" + std::to_string(hp.d) + ", data has n=" +
                                std::to_string(opt.n) + " m=" + std::to_string(opt.m) + " z=" + std::to_string(opt.z) +
                                " d=" + std::to_string(opt.d));
}

struct TrainConfig {
  int epochs = 300;
  int batch_size = 16;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::nllp;
  double lr = 1e-4;
  TransportOptions transport{};
  double match_threshold = kDefaultMatchThreshold;
  int checkpoint_every = 0;   // epochs between checkpoints, 0 = only at the end
  std::int64_t max_steps = 0; // stop after this many optimizer steps, 0 = no limit

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"loss", to_string(loss)},
            {"lr", lr},
            {"sinkhorn_mode", to_string(transport.mode)},
            {"sinkhorn_iters", transport.iterations},
            {"marginals", to_string(transport.marginals)},
            {"match_threshold", match_threshold},
            {"checkpoint_every", checkpoint_every},
            {"max_steps", max_steps}};
  }
};

struct EpochMetrics {
  int epoch = 0;
  std::int64_t steps = 0;  // optimizer steps completed at the end of the epoch
  double loss = 0.0;       // mean batch loss over the epoch
  double precision = 0.0;
  double accuracy = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"steps", steps}, {"loss", loss}, {"precision", precision}, {"accuracy", accuracy}};
  }

  bool operator==(const EpochMetrics&) const = default;
};

// Everything needed to continue a run bit-for-bit.
struct TrainState {
  ModelParameters<float> model;
  AdamState<float> adam;
  int epochs_done = 0;
};

inline constexpr const char* kCheckpointKind = "checkpoint";

inline Container checkpoint_container(TrainState& st, const nlohmann::json& extra_manifest = nlohmann::json::object()) {
  Container c;
  c.kind = kCheckpointKind;
  c.manifest = extra_manifest;
  c.manifest["hyperparameters"] = to_json(st.model.hp);
  c.manifest["open_question_flags"] = {
      {"position_mlp", "hidden widths 32,64,128,256 then a D' output layer"},
      {"attention_scale", to_string(st.model.hp.attention_scale)},
      {"nllp_penalty", "log-sum over the full row including the dustbin"},
      {"losses", "standard sign: -score + logsumexp on log-domain Sinkhorn output"}};
  c.manifest["adam"] = {{"lr", st.adam.lr}, {"beta1", st.adam.beta1}, {"beta2", st.adam.beta2}, {"eps", st.adam.eps}};
  const auto params = st.model.parameters();
  for (auto* p : params) c.put_matrix(p->name, p->value);
  for (auto* bn : st.model.batch_norms()) {
    c.put_matrix(bn->gamma.name.substr(0, bn->gamma.name.rfind('.')) + ".running_mean", bn->running_mean);
    c.put_matrix(bn->gamma.name.substr(0, bn->gamma.name.rfind('.')) + ".running_var", bn->running_var);
  }
  if (!st.adam.first.empty()) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      c.put_matrix("adam.m." + params[k]->name, st.adam.first[k]);
      c.put_matrix("adam.v." + params[k]->name, st.adam.second[k]);
    }
  }
  c.put_ints("train.state", {st.adam.step, st.epochs_done});
  return c;
}

inline void save_checkpoint(TrainState& st, const std::filesystem::path& path,
                            const nlohmann::json& extra_manifest = nlohmann::json::object()) {
  checkpoint_container(st, extra_manifest).write(path);
}

inline TrainState checkpoint_state(const Container& c) {
  if (c.kind != kCheckpointKind) fail(ErrorKind::format, "expected a checkpoint, got '" + c.kind + "'");
  if (!c.manifest.contains("hyperparameters")) fail(ErrorKind::format, "checkpoint manifest lacks hyperparameters");
  TrainState st;
  st.model = ModelParameters<float>(hyperparams_from_json(c.manifest.at("hyperparameters")), 0);
  const auto params = st.model.parameters();
  auto load = [&](ad::Matrix<float>& dst, const std::string& name) {
    auto v = c.matrix<float>(name);
    if (v.rows() != dst.rows() || v.cols() != dst.cols()) fail(ErrorKind::format, "checkpoint tensor '" + name + "' has wrong shape");
    dst = std::move(v);
  };
  for (auto* p : params) load(p->value, p->name);
  for (auto* bn : st.model.batch_norms()) {
    const std::string base = bn->gamma.name.substr(0, bn->gamma.name.rfind('.'));
    load(bn->running_mean, base + ".running_mean");
    load(bn->running_var, base + ".running_var");
  }
  if (c.manifest.contains("adam")) {
    const auto& a = c.manifest["adam"];
    st.adam.lr = a.value("lr", st.adam.lr);
    st.adam.beta1 = a.value("beta1", st.adam.beta1);
    st.adam.beta2 = a.value("beta2", st.adam.beta2);
    st.adam.eps = a.value("eps", st.adam.eps);
  }
  if (c.has("adam.m." + params.front()->name)) {
    for (auto* p : params) {
      st.adam.first.push_back(p->value);
      st.adam.second.push_back(p->value);
      load(st.adam.first.back(), "adam.m." + p->name);
      load(st.adam.second.back(), "adam.v." + p->name);
    }
  }
  const auto state = c.ints("train.state");
  if (state.size() != 2) fail(ErrorKind::format, "checkpoint train.state must hold two integers");
  st.adam.step = state[0];
  st.epochs_done = static_cast<int>(state[1]);
  return st;
}

inline TrainState load_checkpoint(const std::filesystem::path& path) { return checkpoint_state(Container::read(path)); }

// Per-epoch order of the dataset: a permutation seeded by (run seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  for (std::size_t k = count; k > 1; --k) {
    const std::size_t j = static_cast<std::size_t>(rng() % k);
    std::swap(order[k - 1], order[j]);
  }
  return order;
}

// Precision and accuracy of an eval-mode pass over a dataset.
inline MatchQuality evaluate_dataset(ModelParameters<float>& model, std::span<const PreprocessedPair> pairs,
                                     const TransportOptions& transport, double threshold) {
  MatchQuality q;
  for (const auto& p : pairs) q += evaluate_matches(extract_matches(infer_assignment(model, p.input, transport), threshold), p.labels);
  return q;
}

struct TrainCallbacks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(TrainState&, int epoch)> on_checkpoint;
};

// Runs epochs (state.epochs_done, cfg.epochs]. Metrics come from the train-mode
// forward pass of each batch before its update.
inline std::vector<EpochMetrics> train(TrainState& state, std::span<const PreprocessedPair> data, const TrainConfig& cfg,
                                       const TrainCallbacks& cb = {}) {
  require(!data.empty(), ErrorKind::argument, "train: empty dataset");
  require(cfg.batch_size >= 1, ErrorKind::config, "train: batch size must be >= 1");
  for (const auto& p : data) {
    if (p.labels.ground_truth_cells() == 0) fail(ErrorKind::argument, "train: pair '" + p.id + "' has no ground-truth cells");
    check_compatible(state.model.hp, p.options, "train: pair '" + p.id + "'");
  }
  state.adam.lr = cfg.lr;
  const auto params = state.model.parameters();
  std::vector<EpochMetrics> history;
  for (int epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && state.adam.step >= cfg.max_steps) break;
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    EpochMetrics em;
    em.epoch = epoch;
    MatchQuality q;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && state.adam.step >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<PairInput<float>> inputs;
      std::vector<const CorrespondenceLabels*> labels;
      for (std::size_t k = start; k < end; ++k) {
        inputs.push_back(data[order[k]].input);
        labels.push_back(&data[order[k]].labels);
      }
      ad::Tape<float> tape;
      const auto log_p = assign_batch(tape, state.model, std::span<const PairInput<float>>(inputs), ad::Mode::train,
                                      cfg.transport);
      const auto total = batch_loss(log_p, std::span<const CorrespondenceLabels* const>(labels), cfg.loss);
      state.model.zero_grad();
      tape.backward(total);
      adam_step(params, state.adam);
      em.loss += static_cast<double>(total.scalar());
      ++batches;
      for (std::size_t k = 0; k < log_p.size(); ++k)
        q += evaluate_matches(extract_matches(log_p[k].value(), cfg.match_threshold), *labels[k]);
    }
    if (batches == 0) break;
    em.loss /= batches;
    em.precision = q.precision();
    em.accuracy = q.accuracy();
    em.steps = state.adam.step;
    state.epochs_done = epoch;
    history.push_back(em);
    if (cb.on_epoch) cb.on_epoch(em);
    if (cb.on_checkpoint && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) cb.on_checkpoint(state, epoch);
  }
  return history;
}

}  // namespace pillarmatch
