#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "test_support.hpp"

using namespace pillarmatch;
using pillarmatch::testing::random_matrix;
using pillarmatch::testing::toy_hyperparams;
using pillarmatch::testing::toy_pillars;
using M = ad::Matrix<double>;

namespace {

Pillar single_member_pillar() {
  Pillar p;
  p.capacity = 3;
  p.keypoint.position = Vec3(3, 4, 0);
  p.centroid = Vec3(3, 4, 0);
  p.members.push_back({Vec3(3, 4, 0), 0.5, 0.0});
  return p;
}

// Loop-based linear -> batch statistics -> ReLU, used as an independent oracle.
M brute_linear_bn_relu(const M& x, const M& w, const M& gamma, const M& beta, double eps) {
  const Eigen::Index rows = x.rows(), out = w.rows();
  M y(rows, out);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index o = 0; o < out; ++o) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < x.cols(); ++k) acc += x(r, k) * w(o, k);
      y(r, o) = acc;
    }
  for (Eigen::Index o = 0; o < out; ++o) {
    double mean = 0.0, var = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) mean += y(r, o);
    mean /= static_cast<double>(rows);
    for (Eigen::Index r = 0; r < rows; ++r) var += (y(r, o) - mean) * (y(r, o) - mean);
    var /= static_cast<double>(rows);
    for (Eigen::Index r = 0; r < rows; ++r)
      y(r, o) = std::max(0.0, gamma(0, o) * (y(r, o) - mean) / std::sqrt(var + eps) + beta(0, o));
  }
  return y;
}

M brute_attention(const M& q, const M& k, const M& v, double factor) {
  M out = M::Zero(q.rows(), v.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> s(static_cast<std::size_t>(k.rows()));
    for (Eigen::Index j = 0; j < k.rows(); ++j) s[static_cast<std::size_t>(j)] = factor * q.row(i).dot(k.row(j));
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double& e : s) z += (e = std::exp(e - mx));
    for (Eigen::Index j = 0; j < k.rows(); ++j) out.row(i) += s[static_cast<std::size_t>(j)] / z * v.row(j);
  }
  return out;
}

}  // namespace

TEST(FeatureStack, SingleMemberAtKeypoint) {
  const M row = build_feature_stack(single_member_pillar());
  ASSERT_EQ(row.cols(), 3 * kFeaturesPerPoint);
  const double expected[] = {3, 4, 0, 0.5, 0, 0, 0, 5, 0, 0, 0};
  for (int k = 0; k < kFeaturesPerPoint; ++k) EXPECT_DOUBLE_EQ(row(0, k), expected[k]) << k;
  EXPECT_TRUE(row.rightCols(2 * kFeaturesPerPoint).isZero());
}

TEST(FeatureStack, AllPadIsZero) {
  Pillar p;
  p.capacity = 4;
  EXPECT_TRUE(build_feature_stack(p).isZero());
}

TEST(FeatureStack, TwoMemberCentroidOffsets) {
  Pillar p;
  p.capacity = 2;
  p.members.push_back({Vec3(1, 0, 0), 0.1, 1.0});
  p.members.push_back({Vec3(0, 1, 0), 0.2, 1.0});
  p.centroid = Vec3(0.5, 0.5, 0);
  const M row = build_feature_stack(p);
  EXPECT_DOUBLE_EQ(row(0, 4), 0.5);
  EXPECT_DOUBLE_EQ(row(0, 5), -0.5);
  EXPECT_DOUBLE_EQ(row(0, 6), 0.0);
  EXPECT_DOUBLE_EQ(row(0, kFeaturesPerPoint + 4), -0.5);
  EXPECT_DOUBLE_EQ(row(0, kFeaturesPerPoint + 5), 0.5);
  EXPECT_DOUBLE_EQ(row(0, kFeaturesPerPoint + 8), 0.0);
  EXPECT_DOUBLE_EQ(row(0, kFeaturesPerPoint + 9), 1.0);
}

TEST(PillarEncoder, ZeroStackGivesZero) {
  ModelParameters<double> model(toy_hyperparams(), 1);
  ad::Tape<double> t;
  const auto y = encode_pillars(t.constant(M::Zero(4, model.hp.input_depth())), model, ad::Mode::train);
  EXPECT_TRUE(y.value().isZero());
}

TEST(PillarEncoder, IdenticalStacksIdenticalOutputs) {
  ModelParameters<double> model(toy_hyperparams(), 1);
  std::mt19937_64 rng(2);
  M x = random_matrix(rng, 4, model.hp.input_depth());
  x.row(2) = x.row(0);
  ad::Tape<double> t;
  const M y = encode_pillars(t.constant(x), model, ad::Mode::train).value();
  EXPECT_EQ(y.row(0), y.row(2));
}

TEST(PillarEncoder, MatchesBruteForce) {
  ModelParameters<double> model(toy_hyperparams(), 3);
  std::mt19937_64 rng(4);
  const M x = random_matrix(rng, 6, model.hp.input_depth());
  model.pillar_bn.gamma.value = random_matrix(rng, 1, model.hp.feature_depth, 0.5, 1.5);
  model.pillar_bn.beta.value = random_matrix(rng, 1, model.hp.feature_depth);
  ad::Tape<double> t;
  const M y = encode_pillars(t.constant(x), model, ad::Mode::train).value();
  const M oracle = brute_linear_bn_relu(x, model.pillar_weight.value, model.pillar_bn.gamma.value,
                                        model.pillar_bn.beta.value, 1e-5);
  EXPECT_LT((y - oracle).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PillarEncoder, DepthMismatchIsShapeError) {
  ModelParameters<double> model(toy_hyperparams(), 1);
  ad::Tape<double> t;
  try {
    encode_pillars(t.constant(M::Zero(4, model.hp.input_depth() + 1)), model, ad::Mode::train);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(PositionEncoder, SameKeypointSameEmbedding) {
  ModelParameters<double> model(toy_hyperparams(), 5);
  std::mt19937_64 rng(6);
  M x = random_matrix(rng, 5, 3);
  x.row(4) = x.row(1);
  ad::Tape<double> t;
  const M y = encode_positions(t.constant(x), model, ad::Mode::train).value();
  EXPECT_EQ(y.row(1), y.row(4));
}

TEST(PositionEncoder, MatchesBruteForce) {
  ModelParameters<double> model(toy_hyperparams(), 7);
  std::mt19937_64 rng(8);
  const M x = random_matrix(rng, 6, 3, -5, 5);
  auto& last = model.position_layers.back();
  last.bias.value = random_matrix(rng, 1, model.hp.feature_depth);
  ad::Tape<double> t;
  const M y = encode_positions(t.constant(x), model, ad::Mode::train).value();
  M h = x;
  for (std::size_t k = 0; k < model.position_bns.size(); ++k)
    h = brute_linear_bn_relu(h, model.position_layers[k].weight.value, model.position_bns[k].gamma.value,
                             model.position_bns[k].beta.value, 1e-5);
  M oracle(h.rows(), last.weight.value.rows());
  for (Eigen::Index r = 0; r < h.rows(); ++r)
    for (Eigen::Index o = 0; o < oracle.cols(); ++o) {
      double acc = last.bias.value(0, o);
      for (Eigen::Index k = 0; k < h.cols(); ++k) acc += h(r, k) * last.weight.value(o, k);
      oracle(r, o) = acc;
    }
  EXPECT_LT((y - oracle).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(InitNodes, SumOfParts) {
  std::mt19937_64 rng(9);
  const M f = random_matrix(rng, 3, 8), pi = random_matrix(rng, 3, 8);
  ad::Tape<double> t;
  EXPECT_EQ(init_nodes(t.constant(M::Zero(3, 8)), t.constant(pi)).value(), pi);
  EXPECT_EQ(init_nodes(t.constant(f), t.constant(M::Zero(3, 8))).value(), f);
  const M s = init_nodes(t.constant(f), t.constant(pi)).value();
  for (Eigen::Index k = 0; k < s.size(); ++k) EXPECT_EQ(s.data()[k], f.data()[k] + pi.data()[k]);
}

TEST(InitNodes, ShapeMismatch) {
  ad::Tape<double> t;
  EXPECT_THROW(init_nodes(t.constant(M::Zero(3, 8)), t.constant(M::Zero(3, 7))), Error);
}

TEST(Attention, SingletonReturnsValue) {
  std::mt19937_64 rng(10);
  const M v = random_matrix(rng, 1, 4);
  ad::Tape<double> t;
  const M y = ad::attention(t.constant(random_matrix(rng, 3, 4)), t.constant(random_matrix(rng, 1, 4)), t.constant(v), 0.5)
                  .value();
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_LT((y.row(i) - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, IdenticalKeysGiveMean) {
  std::mt19937_64 rng(11);
  M k = random_matrix(rng, 2, 4);
  k.row(1) = k.row(0);
  const M v = random_matrix(rng, 2, 4);
  ad::Tape<double> t;
  const M y = ad::attention(t.constant(random_matrix(rng, 1, 4)), t.constant(k), t.constant(v), 0.5).value();
  EXPECT_LT((y.row(0) - 0.5 * (v.row(0) + v.row(1))).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, RandomMatchesFormula) {
  std::mt19937_64 rng(12);
  const M q = random_matrix(rng, 3, 4), k = random_matrix(rng, 3, 4), v = random_matrix(rng, 3, 4);
  ad::Tape<double> t;
  const M y = ad::attention(t.constant(q), t.constant(k), t.constant(v), 0.5).value();
  EXPECT_LT((y - brute_attention(q, k, v, 0.5)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Attention, ShapeMismatch) {
  ad::Tape<double> t;
  EXPECT_THROW(ad::attention(t.constant(M::Zero(2, 4)), t.constant(M::Zero(2, 3)), t.constant(M::Zero(2, 4)), 1.0), Error);
}

TEST(Attention, MultiHeadIsPerHeadFormula) {
  std::mt19937_64 rng(13);
  const M q = random_matrix(rng, 3, 8), k = random_matrix(rng, 5, 8), v = random_matrix(rng, 5, 8);
  ad::Tape<double> t;
  const M y = ad::multi_head_attention(t.constant(q), t.constant(k), t.constant(v), 2, 0.25).value();
  for (int h = 0; h < 2; ++h) {
    const M o = brute_attention(q.middleCols(4 * h, 4), k.middleCols(4 * h, 4), v.middleCols(4 * h, 4), 0.25);
    EXPECT_LT((y.middleCols(4 * h, 4) - o).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GnnLayer, ZeroOutputMapIsResidual) {
  ModelParameters<double> model(toy_hyperparams(), 14);
  for (auto& a : model.attention) a.w_out.value.setZero();
  std::mt19937_64 rng(15);
  const M nk = random_matrix(rng, 4, 8), nl = random_matrix(rng, 4, 8);
  for (int l = 0; l < 2; ++l) {
    ad::Tape<double> t;
    const auto [ok, ol] = gnn_layer(t.constant(nk), t.constant(nl), l, model);
    EXPECT_EQ(ok.value(), nk);
    EXPECT_EQ(ol.value(), nl);
  }
}

TEST(GnnLayer, EvenLayerIgnoresOtherGraph) {
  ModelParameters<double> model(toy_hyperparams(), 16);
  std::mt19937_64 rng(17);
  const M nk = random_matrix(rng, 4, 8);
  ad::Tape<double> t;
  const M a = gnn_layer(t.constant(nk), t.constant(random_matrix(rng, 4, 8)), 0, model).first.value();
  const M b = gnn_layer(t.constant(nk), t.constant(random_matrix(rng, 6, 8)), 0, model).first.value();
  EXPECT_EQ(a, b);
}

TEST(GnnLayer, OddLayerInvariantToPermutedOtherGraph) {
  ModelParameters<double> model(toy_hyperparams(), 18);
  std::mt19937_64 rng(19);
  const M nk = random_matrix(rng, 4, 8), nl = random_matrix(rng, 4, 8);
  const std::vector<int> perm{2, 0, 3, 1};
  M permuted(4, 8);
  for (int r = 0; r < 4; ++r) permuted.row(r) = nl.row(perm[static_cast<std::size_t>(r)]);
  ad::Tape<double> t;
  const auto [a, al] = gnn_layer(t.constant(nk), t.constant(nl), 1, model);
  const auto [b, bl] = gnn_layer(t.constant(nk), t.constant(permuted), 1, model);
  EXPECT_LT((a.value() - b.value()).cwiseAbs().maxCoeff(), 1e-12);
  for (int r = 0; r < 4; ++r)
    EXPECT_LT((bl.value().row(r) - al.value().row(perm[static_cast<std::size_t>(r)])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GnnLayer, LayerOutOfRange) {
  ModelParameters<double> model(toy_hyperparams(), 1);
  ad::Tape<double> t;
  EXPECT_THROW(gnn_layer(t.constant(M::Zero(2, 8)), t.constant(M::Zero(2, 8)), 2, model), Error);
}

TEST(FinalProjection, IdentityAndProduct) {
  ModelParameters<double> model(toy_hyperparams(), 20);
  std::mt19937_64 rng(21);
  const M n = random_matrix(rng, 3, 8);
  ad::Tape<double> t;
  const M y = final_projection(t.constant(n), model).value();
  M oracle(3, 8);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index o = 0; o < 8; ++o) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < 8; ++k) acc += n(r, k) * model.projection.value(o, k);
      oracle(r, o) = acc;
    }
  EXPECT_LT((y - oracle).cwiseAbs().maxCoeff(), 1e-10);
  model.projection.value.setIdentity();
  EXPECT_EQ(final_projection(t.constant(n), model).value(), n);
}

TEST(Model, ParameterShapes) {
  HyperParams hp = toy_hyperparams(4, 3);
  ModelParameters<double> model(hp, 22);
  EXPECT_EQ(model.pillar_weight.value.rows(), 8);
  EXPECT_EQ(model.pillar_weight.value.cols(), 3 * kFeaturesPerPoint);
  ASSERT_EQ(model.position_layers.size(), 5u);
  EXPECT_EQ(model.position_layers.front().weight.value.cols(), 3);
  EXPECT_EQ(model.position_layers.back().weight.value.rows(), 8);
  EXPECT_EQ(model.attention.size(), 2u);
  EXPECT_EQ(model.dustbin.value(0, 0), 1.0);
  const auto params = model.parameters();
  const std::size_t total = std::accumulate(params.begin(), params.end(), std::size_t{0},
                                            [](std::size_t s, auto* p) { return s + static_cast<std::size_t>(p->value.size()); });
  EXPECT_GT(total, 0u);
}

TEST(Model, SeedDeterminism) {
  const auto hp = toy_hyperparams();
  ModelParameters<double> a(hp, 30), b(hp, 30), c(hp, 31);
  EXPECT_EQ(a.pillar_weight.value, b.pillar_weight.value);
  EXPECT_NE(a.pillar_weight.value, c.pillar_weight.value);
}

TEST(Model, InvalidHeadCount) {
  HyperParams hp = toy_hyperparams();
  hp.heads = 3;
  EXPECT_THROW(ModelParameters<double>(hp, 1), Error);
}

TEST(DescribeBatch, SharedWeightsAcrossGraphs) {
  ModelParameters<double> model(toy_hyperparams(), 23);
  std::mt19937_64 rng(24);
  const auto pillars = toy_pillars(rng, 4, 4);
  const PairInput<double> pair{make_cloud_input(pillars), make_cloud_input(pillars)};
  ad::Tape<double> t;
  const auto out = describe_batch(t, model, std::span<const PairInput<double>>(&pair, 1), ad::Mode::train);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_LT((out[0].first.value() - out[0].second.value()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(out[0].first.rows(), 4);
  EXPECT_EQ(out[0].first.cols(), 8);
}
