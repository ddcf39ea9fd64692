#pragma once

#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "pillarmatch/autodiff/ops.hpp"
#include "pillarmatch/autodiff/tape.hpp"
#include "pillarmatch/error.hpp"

namespace pillarmatch {

enum class SinkhornMode { alternating, simultaneous };
enum class Marginals { uniform, dustbin_weighted };

struct TransportOptions {
  int iterations = 100;
  SinkhornMode mode = SinkhornMode::alternating;
  Marginals marginals = Marginals::uniform;
};

// M = m_K . m_L^T, no scaling.
template <class S>
ad::Var<S> score_matrix(ad::Var<S> desc_k, ad::Var<S> desc_l) {
  if (desc_k.value().cols() != desc_l.value().cols()) fail(ErrorKind::shape, "score_matrix: descriptor depth mismatch");
  return ad::matmul_nt(desc_k, desc_l);
}

template <class S>
ad::Var<S> augment_dustbin(ad::Var<S> scores, ad::Var<S> dustbin) {
  return ad::pad_dustbin(scores, dustbin);
}

// Log-domain Sinkhorn on an (n+1) x (m+1) augmented score matrix. Alternating
// mode normalizes rows, then columns, each iteration; simultaneous mode
// subtracts row and column log-sums taken from the same iterate.
template <class S>
ad::Var<S> sinkhorn(ad::Var<S> augmented, const TransportOptions& opt = {}) {
  require(opt.iterations >= 1, ErrorKind::argument, "sinkhorn: iterations must be >= 1");
  if (!augmented.value().allFinite()) fail(ErrorKind::numeric, "sinkhorn: non-finite input");
  const Eigen::Index rows = augmented.value().rows(), cols = augmented.value().cols();
  require(rows >= 2 && cols >= 2, ErrorKind::shape, "sinkhorn: expects an augmented matrix");
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  Vec log_mu = Vec::Zero(rows), log_nu = Vec::Zero(cols);
  if (opt.marginals == Marginals::dustbin_weighted) {
    log_mu(rows - 1) = static_cast<S>(std::log(static_cast<double>(cols - 1)));
    log_nu(cols - 1) = static_cast<S>(std::log(static_cast<double>(rows - 1)));
  }
  ad::Var<S> x = augmented;
  for (int it = 0; it < opt.iterations; ++it) {
    if (opt.mode == SinkhornMode::alternating) {
      x = ad::log_normalize(x, 1, log_mu);
      x = ad::log_normalize(x, 0, log_nu);
    } else {
      x = ad::log_normalize_joint(x, log_mu, log_nu);
    }
  }
  return x;
}

// Convenience: Sinkhorn on a plain matrix (no gradient).
template <class S>
ad::Matrix<S> sinkhorn_values(const ad::Matrix<S>& augmented, const TransportOptions& opt = {}) {
  ad::Tape<S> tape;
  return sinkhorn(tape.constant(augmented), opt).value();
}

// Largest deviation of any row or column sum of exp(log_p) from its target.
template <class S>
double marginal_error(const ad::Matrix<S>& log_p, Marginals marginals = Marginals::uniform) {
  const ad::Matrix<double> p = log_p.template cast<double>().array().exp().matrix();
  const Eigen::Index rows = p.rows(), cols = p.cols();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double target = (marginals == Marginals::dustbin_weighted && i == rows - 1) ? double(cols - 1) : 1.0;
    worst = std::max(worst, std::abs(p.row(i).sum() - target));
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double target = (marginals == Marginals::dustbin_weighted && j == cols - 1) ? double(rows - 1) : 1.0;
    worst = std::max(worst, std::abs(p.col(j).sum() - target));
  }
  return worst;
}

struct Match {
  std::size_t i;
  std::size_t j;
  double confidence;
};

struct MatchSet {
  std::vector<Match> pairs;
  std::vector<std::size_t> unmatched_i;
  std::vector<std::size_t> unmatched_j;
};

inline constexpr double kDefaultMatchThreshold = 0.2;

// Mutual argmax over the augmented matrix (dustbin included in the argmax,
// excluded from pairing) with exp(log_p) >= threshold. Argmax ties resolve to
// the smaller index.
template <class Derived>
MatchSet extract_matches(const Eigen::MatrixBase<Derived>& log_p, double threshold = kDefaultMatchThreshold) {
  require(threshold >= 0.0 && threshold <= 1.0, ErrorKind::argument, "threshold must be in [0, 1]");
  const Eigen::Index rows = log_p.rows(), cols = log_p.cols();
  require(rows >= 2 && cols >= 2, ErrorKind::shape, "extract_matches: expects an augmented matrix");
  const Eigen::Index n = rows - 1, m = cols - 1;
  std::vector<Eigen::Index> row_best(static_cast<std::size_t>(n)), col_best(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < cols; ++j)
      if (log_p(i, j) > log_p(i, best)) best = j;
    row_best[static_cast<std::size_t>(i)] = best;
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < rows; ++i)
      if (log_p(i, j) > log_p(best, j)) best = i;
    col_best[static_cast<std::size_t>(j)] = best;
  }
  MatchSet out;
  std::vector<char> col_used(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index j = row_best[static_cast<std::size_t>(i)];
    const bool mutual = j < m && col_best[static_cast<std::size_t>(j)] == i;
    const double conf = mutual ? std::exp(static_cast<double>(log_p(i, j))) : 0.0;
    if (mutual && conf >= threshold) {
      out.pairs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), conf});
      col_used[static_cast<std::size_t>(j)] = 1;
    } else {
      out.unmatched_i.push_back(static_cast<std::size_t>(i));
    }
  }
  for (Eigen::Index j = 0; j < m; ++j)
    if (!col_used[static_cast<std::size_t>(j)]) out.unmatched_j.push_back(static_cast<std::size_t>(j));
  return out;
}

// Dense grid of exp(log_p): header row/column of key-point ids, "dustbin" for
// the extra row and column.
template <class Derived>
void write_assignment_csv(std::ostream& os, const Eigen::MatrixBase<Derived>& log_p) {
  const Eigen::Index rows = log_p.rows(), cols = log_p.cols();
  os << "i\\j";
  for (Eigen::Index j = 0; j < cols; ++j) os << ',' << (j == cols - 1 ? std::string("dustbin") : std::to_string(j));
  os << '\n';
  for (Eigen::Index i = 0; i < rows; ++i) {
    os << (i == rows - 1 ? std::string("dustbin") : std::to_string(i));
    for (Eigen::Index j = 0; j < cols; ++j) os << ',' << std::exp(static_cast<double>(log_p(i, j)));
    os << '\n';
  }
}

}  // namespace pillarmatch
