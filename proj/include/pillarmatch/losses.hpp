#pragma once

#include <string>
#include <vector>

#include "pillarmatch/autodiff/ops.hpp"
#include "pillarmatch/cloud.hpp"
#include "pillarmatch/error.hpp"

namespace pillarmatch {

enum class LossKind { nll, nllp, dce };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::nll: return "nll";
    case LossKind::nllp: return "nllp";
    case LossKind::dce: return "dce";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "nll") return LossKind::nll;
  if (s == "nllp") return LossKind::nllp;
  if (s == "dce") return LossKind::dce;
  fail(ErrorKind::config, "unknown loss '" + s + "' (expected nll, nllp or dce)");
}

namespace loss_detail {

inline void check_labels(const CorrespondenceLabels& labels, Eigen::Index rows, Eigen::Index cols) {
  if (labels.ground_truth_cells() == 0) fail(ErrorKind::argument, "labels contain no ground-truth cells");
  const auto n = static_cast<std::size_t>(rows - 1), m = static_cast<std::size_t>(cols - 1);
  for (const auto& [i, j] : labels.matched)
    require(i < n && j < m, ErrorKind::argument, "matched label out of range");
  for (auto i : labels.unmatched_rows) require(i < n, ErrorKind::argument, "unmatched row out of range");
  for (auto j : labels.unmatched_cols) require(j < m, ErrorKind::argument, "unmatched column out of range");
}

// Every ground-truth cell of the augmented matrix with weight `coeff`.
inline std::vector<ad::GatherEntry> gt_cells(const CorrespondenceLabels& labels, Eigen::Index rows, Eigen::Index cols,
                                             double coeff) {
  std::vector<ad::GatherEntry> e;
  for (const auto& [i, j] : labels.matched) e.push_back({Eigen::Index(i), Eigen::Index(j), coeff});
  for (auto i : labels.unmatched_rows) e.push_back({Eigen::Index(i), cols - 1, coeff});
  for (auto j : labels.unmatched_cols) e.push_back({rows - 1, Eigen::Index(j), coeff});
  return e;
}

}  // namespace loss_detail

// -sum over ground-truth cells of log_p. Ignored indices contribute nothing.
template <class S>
ad::Var<S> loss_nll(ad::Var<S> log_p, const CorrespondenceLabels& labels) {
  const Eigen::Index rows = log_p.value().rows(), cols = log_p.value().cols();
  loss_detail::check_labels(labels, rows, cols);
  return ad::gather_sum(log_p, loss_detail::gt_cells(labels, rows, cols, -1.0));
}

// NLL plus, for each unmatched row i, the cross entropy of row i against the
// dustbin column: -s[i, dustbin] + logsumexp_j s[i, j] over the full row.
template <class S>
ad::Var<S> loss_nllp(ad::Var<S> log_p, const CorrespondenceLabels& labels) {
  const Eigen::Index cols = log_p.value().cols();
  const ad::Var<S> nll = loss_nll(log_p, labels);
  if (labels.unmatched_rows.empty()) return nll;
  std::vector<ad::GatherEntry> dust, lse_rows;
  for (auto i : labels.unmatched_rows) {
    dust.push_back({Eigen::Index(i), cols - 1, -1.0});
    lse_rows.push_back({Eigen::Index(i), 0, 1.0});
  }
  const ad::Var<S> row_lse = ad::logsumexp(log_p, 1);
  return ad::add(ad::add(nll, ad::gather_sum(log_p, std::move(dust))), ad::gather_sum(row_lse, std::move(lse_rows)));
}

// Dual cross entropy: per matched pair a row term and a column term
// (-s_ij + logsumexp over the row / column), single-direction terms for
// dustbin cells.
template <class S>
ad::Var<S> loss_dce(ad::Var<S> log_p, const CorrespondenceLabels& labels) {
  const Eigen::Index rows = log_p.value().rows(), cols = log_p.value().cols();
  loss_detail::check_labels(labels, rows, cols);
  std::vector<ad::GatherEntry> cells, row_terms, col_terms;
  for (const auto& [i, j] : labels.matched) {
    cells.push_back({Eigen::Index(i), Eigen::Index(j), -2.0});
    row_terms.push_back({Eigen::Index(i), 0, 1.0});
    col_terms.push_back({0, Eigen::Index(j), 1.0});
  }
  for (auto i : labels.unmatched_rows) {
    cells.push_back({Eigen::Index(i), cols - 1, -1.0});
    row_terms.push_back({Eigen::Index(i), 0, 1.0});
  }
  for (auto j : labels.unmatched_cols) {
    cells.push_back({rows - 1, Eigen::Index(j), -1.0});
    col_terms.push_back({0, Eigen::Index(j), 1.0});
  }
  ad::Var<S> total = ad::gather_sum(log_p, std::move(cells));
  if (!row_terms.empty()) total = ad::add(total, ad::gather_sum(ad::logsumexp(log_p, 1), std::move(row_terms)));
  if (!col_terms.empty()) total = ad::add(total, ad::gather_sum(ad::logsumexp(log_p, 0), std::move(col_terms)));
  return total;
}

template <class S>
ad::Var<S> loss(LossKind kind, ad::Var<S> log_p, const CorrespondenceLabels& labels) {
  switch (kind) {
    case LossKind::nll: return loss_nll(log_p, labels);
    case LossKind::nllp: return loss_nllp(log_p, labels);
    case LossKind::dce: return loss_dce(log_p, labels);
  }
  fail(ErrorKind::argument, "unknown loss kind");
}

}  // namespace pillarmatch
