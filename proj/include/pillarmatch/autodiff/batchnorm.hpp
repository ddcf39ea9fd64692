#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "pillarmatch/autodiff/ops.hpp"
#include "pillarmatch/autodiff/tape.hpp"

namespace pillarmatch::ad {

enum class Mode { train, eval };

// Per-channel batch normalization over the leading (batch) axis.
// running <- momentum * running + (1 - momentum) * batch statistic.
template <class S>
struct BatchNorm {
  Parameter<S> gamma;
  Parameter<S> beta;
  Matrix<S> running_mean;
  Matrix<S> running_var;
  S momentum = S(0.9);
  S eps = S(1e-5);

  BatchNorm() = default;
  BatchNorm(const std::string& name, Eigen::Index channels)
      : gamma(name + ".gamma", Matrix<S>::Ones(1, channels)),
        beta(name + ".beta", Matrix<S>::Zero(1, channels)),
        running_mean(Matrix<S>::Zero(1, channels)),
        running_var(Matrix<S>::Ones(1, channels)) {}

  Eigen::Index channels() const { return gamma.value.cols(); }
};

template <class S>
Var<S> batch_norm(Var<S> x, BatchNorm<S>& bn, Mode mode) {
  Tape<S>& t = *x.tape;
  const Matrix<S>& xv = x.value();
  const Eigen::Index batch = xv.rows(), ch = xv.cols();
  detail::check(ch == bn.channels(), "batch_norm: channel mismatch");
  Var<S> g = t.param(bn.gamma);
  Var<S> b = t.param(bn.beta);

  if (mode == Mode::eval) {
    Matrix<S> inv = (bn.running_var.array() + bn.eps).rsqrt().matrix();
    Matrix<S> xhat = (xv.rowwise() - bn.running_mean.row(0)).array().rowwise() * inv.row(0).array();
    Matrix<S> y = (xhat.array().rowwise() * g.value().row(0).array()).rowwise() + b.value().row(0).array();
    auto saved = std::make_shared<Matrix<S>>(std::move(xhat));
    const bool ng = t.needs_grad(x) || t.needs_grad(g) || t.needs_grad(b);
    return t.push(std::move(y), ng, [ix = x.id, ig = g.id, ib = b.id, saved, inv](Tape<S>& tp, std::size_t self) {
      const Matrix<S>& gy = tp.grad(self);
      if (tp.needs_grad(ig)) tp.grad(ig) += gy.cwiseProduct(*saved).colwise().sum();
      if (tp.needs_grad(ib)) tp.grad(ib) += gy.colwise().sum();
      if (tp.needs_grad(ix))
        tp.grad(ix) += (gy.array().rowwise() * (tp.value(ig).array() * inv.array()).row(0)).matrix();
    });
  }

  if (batch < 2) fail(ErrorKind::argument, "batch_norm: train mode needs a batch of at least 2");
  const Matrix<S> mean = xv.colwise().mean();
  const Matrix<S> centered = xv.rowwise() - mean.row(0);
  const Matrix<S> var = centered.array().square().colwise().mean();
  const Matrix<S> inv = (var.array() + bn.eps).rsqrt().matrix();
  auto xhat = std::make_shared<Matrix<S>>((centered.array().rowwise() * inv.row(0).array()).matrix());
  Matrix<S> y = (xhat->array().rowwise() * g.value().row(0).array()).rowwise() + b.value().row(0).array();

  const S unbias = S(batch) / S(batch - 1);
  bn.running_mean = bn.momentum * bn.running_mean + (S(1) - bn.momentum) * mean;
  bn.running_var = bn.momentum * bn.running_var + (S(1) - bn.momentum) * unbias * var;

  const bool ng = t.needs_grad(x) || t.needs_grad(g) || t.needs_grad(b);
  return t.push(std::move(y), ng, [ix = x.id, ig = g.id, ib = b.id, xhat, inv, batch](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& gy = tp.grad(self);
    if (tp.needs_grad(ig)) tp.grad(ig) += gy.cwiseProduct(*xhat).colwise().sum();
    if (tp.needs_grad(ib)) tp.grad(ib) += gy.colwise().sum();
    if (!tp.needs_grad(ix)) return;
    // dx = gamma * inv / N * (N * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    const Matrix<S> dxhat = gy.array().rowwise() * tp.value(ig).row(0).array();
    const Matrix<S> s1 = dxhat.colwise().sum();
    const Matrix<S> s2 = dxhat.cwiseProduct(*xhat).colwise().sum();
    Matrix<S> dx = (dxhat * S(batch)).rowwise() - s1.row(0);
    dx -= (xhat->array().rowwise() * s2.row(0).array()).matrix();
    dx = (dx.array().rowwise() * (inv.row(0).array() / S(batch))).matrix();
    tp.grad(ix) += dx;
  });
}

template <class S>
Var<S> batch_norm_relu(Var<S> x, BatchNorm<S>& bn, Mode mode) {
  return relu(batch_norm(x, bn, mode));
}

}  // namespace pillarmatch::ad
