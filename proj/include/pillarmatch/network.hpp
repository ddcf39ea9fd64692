#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pillarmatch/autodiff/batchnorm.hpp"
#include "pillarmatch/autodiff/ops.hpp"
#include "pillarmatch/autodiff/tape.hpp"
#include "pillarmatch/cloud.hpp"
#include "pillarmatch/error.hpp"

namespace pillarmatch {

inline constexpr int kFeaturesPerPoint = 11;

enum class AttentionScale { full_depth, per_head };

struct HyperParams {
  int n = 100;                 // key-points in the source cloud
  int m = 100;                 // key-points in the target cloud
  int z = 100;                 // points per pillar
  double d = 0.5;              // pillar radius, meters
  int feature_depth = 32;      // D'
  int heads = 8;
  int layers = 6;              // l_max
  int sinkhorn_iters = 100;
  std::vector<int> position_widths{32, 64, 128, 256};
  AttentionScale attention_scale = AttentionScale::full_depth;
  double dustbin_init = 1.0;
  // Xavier gain for the attention output maps W0 and the projection W_m;
  // <= 0 selects 1/sqrt(D'), which keeps initial scores near unit scale.
  double output_init_gain = 0.0;

  int input_depth() const { return z * kFeaturesPerPoint; }

  double resolved_output_gain() const {
    return output_init_gain > 0.0 ? output_init_gain : 1.0 / std::sqrt(static_cast<double>(feature_depth));
  }

  void validate() const {
    require(n >= 1 && m >= 1 && z >= 1 && d > 0.0, ErrorKind::config, "n, m, z must be >= 1 and d > 0");
    require(feature_depth >= 1 && heads >= 1 && feature_depth % heads == 0, ErrorKind::config,
            "feature depth must be divisible by the head count");
    require(layers >= 0 && sinkhorn_iters >= 1, ErrorKind::config, "layers >= 0 and sinkhorn_iters >= 1 required");
  }
};

// One pillar -> z rows of [x y z, intensity, x - centroid, |x|, x - keypoint],
// flattened point-major. Pad rows stay zero.
template <class S = double>
ad::Matrix<S> build_feature_stack(const Pillar& pillar) {
  ad::Matrix<S> row = ad::Matrix<S>::Zero(1, static_cast<Eigen::Index>(pillar.capacity) * kFeaturesPerPoint);
  for (std::size_t r = 0; r < pillar.members.size() && r < pillar.capacity; ++r) {
    const auto& mbr = pillar.members[r];
    const Vec3 to_centroid = mbr.position - pillar.centroid;
    const Vec3 to_key = mbr.position - pillar.keypoint.position;
    const double f[kFeaturesPerPoint] = {mbr.position.x(), mbr.position.y(), mbr.position.z(), mbr.intensity,
                                         to_centroid.x(),  to_centroid.y(),  to_centroid.z(),  mbr.position.norm(),
                                         to_key.x(),       to_key.y(),       to_key.z()};
    for (int k = 0; k < kFeaturesPerPoint; ++k)
      row(0, static_cast<Eigen::Index>(r) * kFeaturesPerPoint + k) = static_cast<S>(f[k]);
  }
  return row;
}

// Network inputs for one cloud: one flattened feature stack and one key-point
// position per row.
template <class S>
struct CloudInput {
  ad::Matrix<S> stacks;     // count x D
  ad::Matrix<S> positions;  // count x 3

  Eigen::Index count() const { return stacks.rows(); }

  template <class T>
  CloudInput<T> cast() const {
    return {stacks.template cast<T>(), positions.template cast<T>()};
  }
};

template <class S>
struct PairInput {
  CloudInput<S> source;
  CloudInput<S> target;

  template <class T>
  PairInput<T> cast() const {
    return {source.template cast<T>(), target.template cast<T>()};
  }
};

template <class S = double>
CloudInput<S> make_cloud_input(const std::vector<Pillar>& pillars) {
  require(!pillars.empty(), ErrorKind::argument, "no pillars");
  const auto depth = static_cast<Eigen::Index>(pillars.front().capacity) * kFeaturesPerPoint;
  CloudInput<S> in{ad::Matrix<S>(static_cast<Eigen::Index>(pillars.size()), depth),
                   ad::Matrix<S>(static_cast<Eigen::Index>(pillars.size()), 3)};
  for (std::size_t i = 0; i < pillars.size(); ++i) {
    require(pillars[i].capacity == pillars.front().capacity, ErrorKind::shape, "pillar capacity mismatch");
    in.stacks.row(static_cast<Eigen::Index>(i)) = build_feature_stack<S>(pillars[i]);
    in.positions.row(static_cast<Eigen::Index>(i)) = pillars[i].keypoint.position.cast<S>().transpose();
  }
  return in;
}

template <class S>
struct DenseLayer {
  ad::Parameter<S> weight;  // out x in
  ad::Parameter<S> bias;    // 1 x out, or empty when batch normalization follows

  bool has_bias() const { return bias.value.size() != 0; }
};

template <class S>
struct AttentionLayer {
  ad::Parameter<S> w_out;    // W0, D' x D'
  ad::Parameter<S> w_query;  // rows [h*D'/heads, (h+1)*D'/heads) hold head h's W1h
  ad::Parameter<S> w_key;    // W2h stacked the same way
  ad::Parameter<S> w_value;  // W3h stacked the same way
};

// Every learnable tensor of the matcher. Weights are shared between the two
// clouds and across pillars.
template <class S>
struct ModelParameters {
  HyperParams hp;
  ad::Parameter<S> pillar_weight;  // W_f, D' x D
  ad::BatchNorm<S> pillar_bn;
  std::vector<DenseLayer<S>> position_layers;  // MLP_pi, last layer outputs D'
  std::vector<ad::BatchNorm<S>> position_bns;  // one per hidden layer
  std::vector<AttentionLayer<S>> attention;    // l_max layers
  ad::Parameter<S> projection;                 // W_m, D' x D'
  ad::Parameter<S> dustbin;                    // W_v, 1 x 1

  ModelParameters() = default;

  // Xavier-uniform weights (seeded), BN gamma 1 / beta 0. W0 and W_m are drawn
  // with the smaller output gain. Only the last positional layer has a bias
  // (zero-initialized); the others feed batch normalization, which cancels it.
  ModelParameters(const HyperParams& h, std::uint64_t seed) : hp(h) {
    hp.validate();
    std::mt19937_64 rng(seed);
    auto xavier = [&](const std::string& name, int out, int in, double gain = 1.0) {
      const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-a, a);
      ad::Matrix<S> w(out, in);
      for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<S>(u(rng));
      return ad::Parameter<S>(name, std::move(w));
    };
    const int dp = hp.feature_depth;
    const double og = hp.resolved_output_gain();
    pillar_weight = xavier("pillar.weight", dp, hp.input_depth());
    pillar_bn = ad::BatchNorm<S>("pillar.bn", dp);
    int in = 3;
    for (std::size_t k = 0; k < hp.position_widths.size(); ++k) {
      const int out = hp.position_widths[k];
      const std::string pre = "position." + std::to_string(k);
      position_layers.push_back({xavier(pre + ".weight", out, in), ad::Parameter<S>(pre + ".bias", ad::Matrix<S>(0, 0))});
      position_bns.emplace_back(pre + ".bn", out);
      in = out;
    }
    const std::string last = "position." + std::to_string(hp.position_widths.size());
    position_layers.push_back({xavier(last + ".weight", dp, in), ad::Parameter<S>(last + ".bias", ad::Matrix<S>::Zero(1, dp))});
    for (int l = 0; l < hp.layers; ++l) {
      const std::string pre = "gnn." + std::to_string(l);
      attention.push_back({xavier(pre + ".w_out", dp, dp, og), xavier(pre + ".w_query", dp, dp),
                           xavier(pre + ".w_key", dp, dp), xavier(pre + ".w_value", dp, dp)});
    }
    projection = xavier("projection.weight", dp, dp, og);
    dustbin = ad::Parameter<S>("dustbin", ad::Matrix<S>::Constant(1, 1, static_cast<S>(hp.dustbin_init)));
  }

  std::vector<ad::Parameter<S>*> parameters() {
    std::vector<ad::Parameter<S>*> out{&pillar_weight, &pillar_bn.gamma, &pillar_bn.beta};
    for (std::size_t k = 0; k < position_layers.size(); ++k) {
      out.push_back(&position_layers[k].weight);
      if (position_layers[k].has_bias()) out.push_back(&position_layers[k].bias);
      if (k < position_bns.size()) {
        out.push_back(&position_bns[k].gamma);
        out.push_back(&position_bns[k].beta);
      }
    }
    for (auto& a : attention) {
      out.push_back(&a.w_out);
      out.push_back(&a.w_query);
      out.push_back(&a.w_key);
      out.push_back(&a.w_value);
    }
    out.push_back(&projection);
    out.push_back(&dustbin);
    return out;
  }

  std::vector<ad::BatchNorm<S>*> batch_norms() {
    std::vector<ad::BatchNorm<S>*> out{&pillar_bn};
    for (auto& b : position_bns) out.push_back(&b);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  // Same weights in another scalar type (e.g. float -> double for checking).
  template <class T>
  ModelParameters<T> cast() const {
    ModelParameters<T> out;
    out.hp = hp;
    auto cp = [](const ad::Parameter<S>& p) { return ad::Parameter<T>(p.name, p.value.template cast<T>()); };
    auto cbn = [&](const ad::BatchNorm<S>& b) {
      ad::BatchNorm<T> r;
      r.gamma = cp(b.gamma);
      r.beta = cp(b.beta);
      r.running_mean = b.running_mean.template cast<T>();
      r.running_var = b.running_var.template cast<T>();
      r.momentum = static_cast<T>(b.momentum);
      r.eps = static_cast<T>(b.eps);
      return r;
    };
    out.pillar_weight = cp(pillar_weight);
    out.pillar_bn = cbn(pillar_bn);
    for (const auto& l : position_layers) out.position_layers.push_back({cp(l.weight), cp(l.bias)});
    for (const auto& b : position_bns) out.position_bns.push_back(cbn(b));
    for (const auto& a : attention) out.attention.push_back({cp(a.w_out), cp(a.w_query), cp(a.w_key), cp(a.w_value)});
    out.projection = cp(projection);
    out.dustbin = cp(dustbin);
    return out;
  }
};

// f' = ReLU(BN(W_f . f)) for a [count x D] block of stacks.
template <class S>
ad::Var<S> encode_pillars(ad::Var<S> stacks, ModelParameters<S>& model, ad::Mode mode) {
  ad::Tape<S>& t = *stacks.tape;
  if (stacks.value().cols() != model.hp.input_depth())
    fail(ErrorKind::shape, "encode_pillars: stack depth " + std::to_string(stacks.value().cols()) + ", expected " +
                               std::to_string(model.hp.input_depth()));
  return ad::batch_norm_relu(ad::linear(stacks, t.param(model.pillar_weight)), model.pillar_bn, mode);
}

// pi' = MLP(keypoint); linear -> BN -> ReLU on hidden layers, plain linear output.
template <class S>
ad::Var<S> encode_positions(ad::Var<S> positions, ModelParameters<S>& model, ad::Mode mode) {
  ad::Tape<S>& t = *positions.tape;
  ad::Var<S> x = positions;
  for (std::size_t k = 0; k < model.position_layers.size(); ++k) {
    auto& layer = model.position_layers[k];
    x = layer.has_bias() ? ad::linear(x, t.param(layer.weight), t.param(layer.bias)) : ad::linear(x, t.param(layer.weight));
    if (k < model.position_bns.size()) x = ad::batch_norm_relu(x, model.position_bns[k], mode);
  }
  return x;
}

template <class S>
ad::Var<S> init_nodes(ad::Var<S> descriptors, ad::Var<S> embeddings) {
  return ad::add(descriptors, embeddings);
}

template <class S>
S attention_scale(const HyperParams& hp) {
  const double depth = hp.attention_scale == AttentionScale::full_depth
                           ? static_cast<double>(hp.feature_depth)
                           : static_cast<double>(hp.feature_depth) / static_cast<double>(hp.heads);
  return static_cast<S>(1.0 / std::sqrt(depth));
}

// One residual message-passing step. Even layers attend within each graph,
// odd layers attend to the other graph.
template <class S>
std::pair<ad::Var<S>, ad::Var<S>> gnn_layer(ad::Var<S> nodes_k, ad::Var<S> nodes_l, int layer, ModelParameters<S>& model) {
  require(layer >= 0 && layer < static_cast<int>(model.attention.size()), ErrorKind::argument, "gnn_layer: layer out of range");
  ad::Tape<S>& t = *nodes_k.tape;
  auto& w = model.attention[static_cast<std::size_t>(layer)];
  const ad::Var<S> w_out = t.param(w.w_out), w_q = t.param(w.w_query), w_k = t.param(w.w_key), w_v = t.param(w.w_value);
  const S sc = attention_scale<S>(model.hp);
  const bool cross = layer % 2 == 1;
  auto message = [&](ad::Var<S> query_nodes, ad::Var<S> source_nodes) {
    auto heads = ad::multi_head_attention(ad::linear(query_nodes, w_q), ad::linear(source_nodes, w_k),
                                          ad::linear(source_nodes, w_v), model.hp.heads, sc);
    if (heads.value().cols() != model.hp.feature_depth) fail(ErrorKind::shape, "gnn_layer: head concatenation width");
    return ad::linear(heads, w_out);
  };
  const ad::Var<S> msg_k = message(nodes_k, cross ? nodes_l : nodes_k);
  const ad::Var<S> msg_l = message(nodes_l, cross ? nodes_k : nodes_l);
  return {ad::add(nodes_k, msg_k), ad::add(nodes_l, msg_l)};
}

template <class S>
ad::Var<S> final_projection(ad::Var<S> nodes, ModelParameters<S>& model) {
  return ad::linear(nodes, nodes.tape->param(model.projection));
}

// Matching descriptors for every pair in a batch. Pillar and position
// encoders run on all clouds of the batch at once so batch normalization pools
// over (pairs x pillars).
template <class S>
std::vector<std::pair<ad::Var<S>, ad::Var<S>>> describe_batch(ad::Tape<S>& tape, ModelParameters<S>& model,
                                                               std::span<const PairInput<S>> pairs, ad::Mode mode) {
  require(!pairs.empty(), ErrorKind::argument, "empty batch");
  Eigen::Index rows = 0;
  for (const auto& p : pairs) {
    require(p.source.count() >= 1 && p.target.count() >= 1, ErrorKind::argument, "pair without key-points");
    rows += p.source.count() + p.target.count();
  }
  ad::Matrix<S> stacks(rows, model.hp.input_depth());
  ad::Matrix<S> positions(rows, 3);
  Eigen::Index off = 0;
  for (const auto& p : pairs) {
    for (const CloudInput<S>* c : {&p.source, &p.target}) {
      if (c->stacks.cols() != model.hp.input_depth())
        fail(ErrorKind::config, "feature stack depth " + std::to_string(c->stacks.cols()) + " does not match model depth " +
                                    std::to_string(model.hp.input_depth()));
      stacks.middleRows(off, c->count()) = c->stacks;
      positions.middleRows(off, c->count()) = c->positions;
      off += c->count();
    }
  }
  const ad::Var<S> f = encode_pillars(tape.constant(std::move(stacks)), model, mode);
  const ad::Var<S> pi = encode_positions(tape.constant(std::move(positions)), model, mode);
  const ad::Var<S> nodes = init_nodes(f, pi);

  std::vector<std::pair<ad::Var<S>, ad::Var<S>>> out;
  off = 0;
  for (const auto& p : pairs) {
    ad::Var<S> nk = ad::slice_rows(nodes, off, p.source.count());
    off += p.source.count();
    ad::Var<S> nl = ad::slice_rows(nodes, off, p.target.count());
    off += p.target.count();
    for (int l = 0; l < model.hp.layers; ++l) std::tie(nk, nl) = gnn_layer(nk, nl, l, model);
    out.emplace_back(final_projection(nk, model), final_projection(nl, model));
  }
  return out;
}

}  // namespace pillarmatch
