#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pillarmatch/autodiff/tape.hpp"

namespace pillarmatch::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Builds a scalar on a fresh tape from the current parameter values.
template <class S>
using ScalarFn = std::function<Var<S>(Tape<S>&)>;

// Compares reverse-mode gradients against central differences
// (f(x+h) - f(x-h)) / 2h for every entry of every parameter. The relative error
// per entry is |a - b| / max(|a|, |b|, 1e-8).
template <class S>
GradCheckResult grad_check(const ScalarFn<S>& f, const std::vector<Parameter<S>*>& params, S h = S(1e-5)) {
  // Values stay in S until the difference is taken, so wider scalar types
  // resolve finer gradients.
  auto eval = [&]() -> S {
    Tape<S> tape;
    const S v = f(tape).scalar();
    if (!std::isfinite(static_cast<double>(v))) fail(ErrorKind::numeric, "grad_check: non-finite function value");
    return v;
  };

  for (auto* p : params) p->zero_grad();
  {
    Tape<S> tape;
    Var<S> out = f(tape);
    if (!std::isfinite(static_cast<double>(out.scalar()))) fail(ErrorKind::numeric, "grad_check: non-finite function value");
    tape.backward(out);
  }

  GradCheckResult res;
  for (auto* p : params) {
    const Matrix<S> analytic = p->grad;
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      S& x = p->value.data()[k];
      const S saved = x;
      x = saved + h;
      const S fp = eval();
      x = saved - h;
      const S fm = eval();
      x = saved;
      const double num = static_cast<double>((fp - fm) / (S(2) * h));
      const double a = static_cast<double>(analytic.data()[k]);
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
      ++res.checked;
      if (res.worst_index < 0 || rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p->name;
        res.worst_index = k;
        res.worst_analytic = a;
        res.worst_numeric = num;
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return res;
}

}  // namespace pillarmatch::ad
