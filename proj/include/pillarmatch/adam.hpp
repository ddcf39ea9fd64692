#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pillarmatch/autodiff/tape.hpp"
#include "pillarmatch/error.hpp"

namespace pillarmatch {

template <class S>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<ad::Matrix<S>> first;   // one per parameter, same order as the parameter list
  std::vector<ad::Matrix<S>> second;
};

// Bias-corrected Adam update with a constant learning rate.
template <class S>
void adam_step(const std::vector<ad::Parameter<S>*>& params, AdamState<S>& st) {
  for (const auto* p : params)
    if (!p->grad.allFinite()) fail(ErrorKind::numeric, "adam: non-finite gradient in " + p->name);
  if (st.first.empty()) {
    for (const auto* p : params) {
      st.first.push_back(ad::Matrix<S>::Zero(p->value.rows(), p->value.cols()));
      st.second.push_back(ad::Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  require(st.first.size() == params.size(), ErrorKind::argument, "adam: parameter list changed between steps");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const S b1 = static_cast<S>(st.beta1), b2 = static_cast<S>(st.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = st.first[k];
    auto& v = st.second[k];
    m = b1 * m + (S(1) - b1) * p.grad;
    v = b2 * v + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
    const auto mhat = m.array() / static_cast<S>(bc1);
    const auto vhat = v.array() / static_cast<S>(bc2);
    p.value.array() -= static_cast<S>(st.lr) * mhat / (vhat.sqrt() + static_cast<S>(st.eps));
  }
}

}  // namespace pillarmatch
