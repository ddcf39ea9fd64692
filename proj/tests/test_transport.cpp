#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "test_support.hpp"

using namespace pillarmatch;
using pillarmatch::testing::random_matrix;
using M = ad::Matrix<double>;

namespace {

// Plain exp-domain alternating normalization, independent of the log-domain code.
M brute_sinkhorn(const M& scores, int iters) {
  M p = scores.array().exp().matrix();
  for (int it = 0; it < iters; ++it) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) /= p.row(i).sum();
    for (Eigen::Index j = 0; j < p.cols(); ++j) p.col(j) /= p.col(j).sum();
  }
  return p;
}

M exp_of(const M& log_p) { return log_p.array().exp().matrix(); }

}  // namespace

TEST(ScoreMatrix, OrthonormalGivesIdentity) {
  ad::Tape<double> t;
  const M d = M::Identity(4, 4);
  EXPECT_EQ(score_matrix(t.constant(d), t.constant(d)).value(), M::Identity(4, 4));
}

TEST(ScoreMatrix, ZeroRowGivesZeroRow) {
  std::mt19937_64 rng(1);
  M k = random_matrix(rng, 3, 4);
  k.row(1).setZero();
  ad::Tape<double> t;
  EXPECT_TRUE(score_matrix(t.constant(k), t.constant(random_matrix(rng, 5, 4))).value().row(1).isZero());
}

TEST(ScoreMatrix, MatchesDotProducts) {
  std::mt19937_64 rng(2);
  const M k = random_matrix(rng, 3, 4), l = random_matrix(rng, 3, 4);
  ad::Tape<double> t;
  const M s = score_matrix(t.constant(k), t.constant(l)).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int c = 0; c < 4; ++c) acc += k(i, c) * l(j, c);
      EXPECT_NEAR(s(i, j), acc, 1e-10);
    }
}

TEST(ScoreMatrix, DepthMismatch) {
  ad::Tape<double> t;
  try {
    score_matrix(t.constant(M::Zero(2, 3)), t.constant(M::Zero(2, 4)));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Dustbin, OneByOne) {
  ad::Tape<double> t;
  M s(1, 1);
  s(0, 0) = 2.5;
  const M a = augment_dustbin(t.constant(s), t.constant(M::Zero(1, 1))).value();
  M expected(2, 2);
  expected << 2.5, 0, 0, 0;
  EXPECT_EQ(a, expected);
}

TEST(Dustbin, AugmentedShape) {
  ad::Tape<double> t;
  const M a = augment_dustbin(t.constant(M::Zero(100, 100)), t.constant(M::Constant(1, 1, 0.7))).value();
  EXPECT_EQ(a.rows(), 101);
  EXPECT_EQ(a.cols(), 101);
  EXPECT_EQ(a(100, 3), 0.7);
  EXPECT_EQ(a(3, 100), 0.7);
}

TEST(Dustbin, WeightGradientCountsBorder) {
  ad::Parameter<double> w("w", M::Constant(1, 1, 0.3));
  ad::Tape<double> t;
  const auto a = augment_dustbin(t.constant(M::Zero(3, 4)), t.param(w));
  t.backward(ad::sum(a));
  EXPECT_EQ(w.grad(0, 0), 4 * 5 - 3 * 4);
}

TEST(Sinkhorn, ZeroTwoByTwo) {
  const M p = exp_of(sinkhorn_values<double>(M::Zero(2, 2)));
  EXPECT_LT((p.array() - 0.5).abs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, DiagonalDominant) {
  M s(2, 2);
  s << 10, 0, 0, 10;
  const M p = exp_of(sinkhorn_values<double>(s));
  EXPECT_GE(p(0, 0), 0.99);
  EXPECT_GE(p(1, 1), 0.99);
  EXPECT_LT((p - brute_sinkhorn(s, 100)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Sinkhorn, UniformFixedPoint) {
  const M p = exp_of(sinkhorn_values<double>(M::Constant(6, 6, 1.7)));
  EXPECT_LT((p.array() - 1.0 / 6.0).abs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, MatchesExpDomainOracle) {
  std::mt19937_64 rng(3);
  const M s = random_matrix(rng, 7, 9, -3, 3);
  TransportOptions opt;
  opt.iterations = 25;
  EXPECT_LT((exp_of(sinkhorn_values(s, opt)) - brute_sinkhorn(s, 25)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Sinkhorn, MarginalErrorShrinksWithIterations) {
  std::mt19937_64 rng(4);
  const M s = random_matrix(rng, 11, 11, -5, 5);
  double prev = 1e9;
  for (int iters : {1, 5, 25, 100}) {
    TransportOptions opt;
    opt.iterations = iters;
    const double err = marginal_error(sinkhorn_values(s, opt));
    EXPECT_LE(err, prev + 1e-12);
    prev = err;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Sinkhorn, SimultaneousModeFollowsPrintedUpdate) {
  // Subtracting row and column log-sums from the same iterate removes the
  // total mass twice, so a constant matrix flips between -2 log n and 0.
  TransportOptions opt;
  opt.mode = SinkhornMode::simultaneous;
  for (int iters : {1, 2, 3, 4}) {
    opt.iterations = iters;
    const M p = sinkhorn_values<double>(M::Zero(4, 4), opt);
    const double expected = iters % 2 ? -2 * std::log(4.0) : 0.0;
    EXPECT_LT((p.array() - expected).abs().maxCoeff(), 1e-12) << iters;
  }
  std::mt19937_64 rng(5);
  const M s = random_matrix(rng, 6, 6, -2, 2);
  M r = s;
  for (int it = 0; it < 3; ++it) {
    const M rows = r.array().exp().rowwise().sum().log().matrix();
    const M cols = r.array().exp().colwise().sum().log().matrix();
    r = (r.colwise() - rows.col(0)).rowwise() - cols.row(0);
  }
  opt.iterations = 3;
  EXPECT_LT((sinkhorn_values(s, opt) - r).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, DustbinWeightedMarginals) {
  std::mt19937_64 rng(6);
  const M s = random_matrix(rng, 5, 5, -2, 2);
  TransportOptions opt;
  opt.marginals = Marginals::dustbin_weighted;
  opt.iterations = 200;
  const M p = exp_of(sinkhorn_values(s, opt));
  EXPECT_NEAR(p.row(4).sum(), 4.0, 1e-6);
  EXPECT_NEAR(p.col(4).sum(), 4.0, 1e-6);
  EXPECT_NEAR(p.row(0).sum(), 1.0, 1e-6);
  EXPECT_LT(marginal_error(sinkhorn_values(s, opt), Marginals::dustbin_weighted), 1e-6);
}

TEST(Sinkhorn, NonFiniteInput) {
  M s = M::Zero(3, 3);
  s(1, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    sinkhorn_values(s);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Sinkhorn, GradientCheck) {
  std::mt19937_64 rng(7);
  ad::Parameter<double> s("scores", random_matrix(rng, 5, 5));
  const M w = random_matrix(rng, 5, 5);
  for (auto mode : {SinkhornMode::alternating, SinkhornMode::simultaneous}) {
    TransportOptions opt;
    opt.iterations = 10;
    opt.mode = mode;
    const auto res = ad::grad_check<double>(
        [&](ad::Tape<double>& t) {
          std::vector<ad::GatherEntry> e;
          for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) e.push_back({i, j, w(i, j)});
          return ad::gather_sum(sinkhorn(t.param(s), opt), std::move(e));
        },
        {&s});
    EXPECT_LT(res.max_rel_error, 1e-4);
  }
}

TEST(ExtractMatches, IdentityPermutation) {
  M p = M::Constant(4, 4, std::log(1e-3));
  for (int i = 0; i < 3; ++i) p(i, i) = std::log(0.99);
  const auto ms = extract_matches(p);
  ASSERT_EQ(ms.pairs.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(ms.pairs[k].i, k);
    EXPECT_EQ(ms.pairs[k].j, k);
  }
  EXPECT_TRUE(ms.unmatched_i.empty());
  EXPECT_TRUE(ms.unmatched_j.empty());
}

TEST(ExtractMatches, DustbinArgmaxLeavesRowUnmatched) {
  M p = M::Constant(3, 3, std::log(0.01));
  p(0, 0) = std::log(0.9);
  p(1, 2) = std::log(0.9);
  const auto ms = extract_matches(p);
  ASSERT_EQ(ms.pairs.size(), 1u);
  EXPECT_EQ(ms.unmatched_i, std::vector<std::size_t>{1});
  EXPECT_EQ(ms.unmatched_j, std::vector<std::size_t>{1});
}

TEST(ExtractMatches, ThresholdRejectsWeakPairs) {
  M p = M::Constant(3, 3, std::log(0.05));
  p(0, 0) = std::log(0.15);
  p(1, 1) = std::log(0.5);
  EXPECT_EQ(extract_matches(p).pairs.size(), 1u);
  EXPECT_EQ(extract_matches(p, 0.1).pairs.size(), 2u);
  EXPECT_THROW(extract_matches(p, 1.5), Error);
}

TEST(ExtractMatches, OneToOneOnRandomMatrices) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const M p = sinkhorn_values(random_matrix(rng, 6, 6, -3, 3));
    const auto ms = extract_matches(p, 0.0);
    std::vector<int> ri(5, 0), cj(5, 0);
    for (const auto& m : ms.pairs) {
      ASSERT_LT(m.i, 5u);
      ASSERT_LT(m.j, 5u);
      EXPECT_EQ(++ri[m.i], 1);
      EXPECT_EQ(++cj[m.j], 1);
    }
    EXPECT_EQ(ms.pairs.size() + ms.unmatched_i.size(), 5u);
    EXPECT_EQ(ms.pairs.size() + ms.unmatched_j.size(), 5u);
  }
}

TEST(ExtractMatches, ShiftInvariantAtZeroThreshold) {
  std::mt19937_64 rng(9);
  const M p = random_matrix(rng, 6, 6, -4, 0);
  const auto a = extract_matches(p, 0.0), b = extract_matches((p.array() - 1.3).matrix(), 0.0);
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    EXPECT_EQ(a.pairs[k].i, b.pairs[k].i);
    EXPECT_EQ(a.pairs[k].j, b.pairs[k].j);
  }
}

TEST(AssignmentCsv, GridLayout) {
  M p = M::Zero(2, 3);
  std::ostringstream os;
  write_assignment_csv(os, p);
  EXPECT_EQ(os.str(), "i\\j,0,1,dustbin\n0,1,1,1\ndustbin,1,1,1\n");
}
