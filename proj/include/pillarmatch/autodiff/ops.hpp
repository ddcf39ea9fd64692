#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pillarmatch/autodiff/tape.hpp"

namespace pillarmatch::ad {

namespace detail {

inline void check(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::shape, what);
}

template <class S>
std::string shape_str(const Matrix<S>& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

// Numerically stable log-sum-exp of each row (axis 1) or column (axis 0).
template <class S>
Matrix<S> lse(const Matrix<S>& x, int axis) {
  if (axis == 1) {
    Matrix<S> out(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const S mx = x.row(i).maxCoeff();
      out(i, 0) = mx + std::log((x.row(i).array() - mx).exp().sum());
    }
    return out;
  }
  Matrix<S> out(1, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const S mx = x.col(j).maxCoeff();
    out(0, j) = mx + std::log((x.col(j).array() - mx).exp().sum());
  }
  return out;
}

template <class S>
Matrix<S> softmax(const Matrix<S>& x, int axis) {
  Matrix<S> out(x.rows(), x.cols());
  if (axis == 1) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      auto e = (x.row(i).array() - x.row(i).maxCoeff()).exp();
      out.row(i) = e / e.sum();
    }
  } else {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      auto e = (x.col(j).array() - x.col(j).maxCoeff()).exp();
      out.col(j) = e / e.sum();
    }
  }
  return out;
}

}  // namespace detail

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  detail::check(a.value().rows() == b.value().rows() && a.value().cols() == b.value().cols(),
                "add: shape mismatch " + detail::shape_str(a.value()) + " vs " + detail::shape_str(b.value()));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(a.value() + b.value(), ng, [ia = a.id, ib = b.id](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia) += g;
    if (tp.needs_grad(ib)) tp.grad(ib) += g;
  });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>& t = *a.tape;
  return t.push(a.value() * s, t.needs_grad(a), [ia = a.id, s](Tape<S>& tp, std::size_t self) {
    tp.grad(ia) += tp.grad(self) * s;
  });
}

// a (n x k) . b (k x m)
template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  detail::check(a.value().cols() == b.value().rows(),
                "matmul: inner dimensions differ " + detail::shape_str(a.value()) + " . " + detail::shape_str(b.value()));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(a.value() * b.value(), ng, [ia = a.id, ib = b.id](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

// a (n x k) . b^T, b (m x k)
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  detail::check(a.value().cols() == b.value().cols(),
                "matmul_nt: depth mismatch " + detail::shape_str(a.value()) + " vs " + detail::shape_str(b.value()));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(a.value() * b.value().transpose(), ng, [ia = a.id, ib = b.id](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    if (tp.needs_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib);
    if (tp.needs_grad(ib)) tp.grad(ib).noalias() += g.transpose() * tp.value(ia);
  });
}

// x [*, in] . W^T [in, out] (+ b [1, out])
template <class S>
Var<S> linear(Var<S> x, Var<S> w, const Var<S>* b = nullptr) {
  Tape<S>& t = *x.tape;
  detail::check(x.value().cols() == w.value().cols(),
                "linear: input " + detail::shape_str(x.value()) + " vs weight " + detail::shape_str(w.value()));
  Matrix<S> y = x.value() * w.value().transpose();
  std::size_t ib = 0;
  bool has_b = false;
  if (b) {
    detail::check(b->value().rows() == 1 && b->value().cols() == w.value().rows(), "linear: bias shape mismatch");
    y.rowwise() += b->value().row(0);
    ib = b->id;
    has_b = true;
  }
  const bool ng = t.needs_grad(x) || t.needs_grad(w) || (has_b && t.needs_grad(ib));
  return t.push(std::move(y), ng, [ix = x.id, iw = w.id, ib, has_b](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    if (tp.needs_grad(ix)) tp.grad(ix).noalias() += g * tp.value(iw);
    if (tp.needs_grad(iw)) tp.grad(iw).noalias() += g.transpose() * tp.value(ix);
    if (has_b && tp.needs_grad(ib)) tp.grad(ib) += g.colwise().sum();
  });
}

template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  return linear(x, w, &b);
}

template <class S>
Var<S> relu(Var<S> x) {
  Tape<S>& t = *x.tape;
  if (x.value().size() > 0) t.note_kink_distance(x.value().cwiseAbs().minCoeff());
  return t.push(x.value().cwiseMax(S(0)), t.needs_grad(x), [ix = x.id](Tape<S>& tp, std::size_t self) {
    tp.grad(ix).array() += (tp.value(ix).array() > S(0)).select(tp.grad(self).array(), S(0));
  });
}

template <class S>
Var<S> softmax(Var<S> x, int axis = 1) {
  Tape<S>& t = *x.tape;
  detail::check(axis == 0 || axis == 1, "softmax: axis must be 0 or 1");
  auto y = std::make_shared<Matrix<S>>(detail::softmax(x.value(), axis));
  return t.push(*y, t.needs_grad(x), [ix = x.id, y, axis](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    Matrix<S> gy = g.cwiseProduct(*y);
    if (axis == 1)
      tp.grad(ix) += gy - (y->array().colwise() * gy.rowwise().sum().array()).matrix();
    else
      tp.grad(ix) += gy - (y->array().rowwise() * gy.colwise().sum().array()).matrix();
  });
}

// log-sum-exp along an axis: axis 1 gives [rows x 1], axis 0 gives [1 x cols].
template <class S>
Var<S> logsumexp(Var<S> x, int axis) {
  Tape<S>& t = *x.tape;
  detail::check(axis == 0 || axis == 1, "logsumexp: axis must be 0 or 1");
  return t.push(detail::lse(x.value(), axis), t.needs_grad(x), [ix = x.id, axis](Tape<S>& tp, std::size_t self) {
    const Matrix<S> p = detail::softmax(tp.value(ix), axis);
    const Matrix<S>& g = tp.grad(self);
    if (axis == 1)
      tp.grad(ix) += (p.array().colwise() * g.col(0).array()).matrix();
    else
      tp.grad(ix) += (p.array().rowwise() * g.row(0).array()).matrix();
  });
}

// x - logsumexp(x, axis) + log_marginal, broadcast along the reduced axis.
// log_marginal has one entry per row (axis 1) or per column (axis 0).
template <class S>
Var<S> log_normalize(Var<S> x, int axis, const Eigen::Matrix<S, Eigen::Dynamic, 1>& log_marginal) {
  Tape<S>& t = *x.tape;
  const Matrix<S>& xv = x.value();
  const Matrix<S> l = detail::lse(xv, axis);
  Matrix<S> y = xv;
  if (axis == 1) {
    detail::check(log_marginal.size() == xv.rows(), "log_normalize: marginal size");
    y.array().colwise() -= (l.col(0) - log_marginal).array();
  } else {
    detail::check(log_marginal.size() == xv.cols(), "log_normalize: marginal size");
    y.array().rowwise() -= (l.row(0) - log_marginal.transpose()).array();
  }
  return t.push(std::move(y), t.needs_grad(x), [ix = x.id, axis](Tape<S>& tp, std::size_t self) {
    const Matrix<S> p = detail::softmax(tp.value(ix), axis);
    const Matrix<S>& g = tp.grad(self);
    if (axis == 1)
      tp.grad(ix) += g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
    else
      tp.grad(ix) += g - (p.array().rowwise() * g.colwise().sum().array()).matrix();
  });
}

// x_ij - R_i - C_j + log_mu_i + log_nu_j with R, C both taken from x.
template <class S>
Var<S> log_normalize_joint(Var<S> x, const Eigen::Matrix<S, Eigen::Dynamic, 1>& log_mu,
                           const Eigen::Matrix<S, Eigen::Dynamic, 1>& log_nu) {
  Tape<S>& t = *x.tape;
  const Matrix<S>& xv = x.value();
  detail::check(log_mu.size() == xv.rows() && log_nu.size() == xv.cols(), "log_normalize_joint: marginal size");
  const Matrix<S> r = detail::lse(xv, 1), c = detail::lse(xv, 0);
  Matrix<S> y = xv;
  y.array().colwise() -= (r.col(0) - log_mu).array();
  y.array().rowwise() -= (c.row(0) - log_nu.transpose()).array();
  return t.push(std::move(y), t.needs_grad(x), [ix = x.id](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& xv2 = tp.value(ix);
    const Matrix<S> pr = detail::softmax(xv2, 1), pc = detail::softmax(xv2, 0);
    const Matrix<S>& g = tp.grad(self);
    tp.grad(ix) += g - (pr.array().colwise() * g.rowwise().sum().array()).matrix() -
                   (pc.array().rowwise() * g.colwise().sum().array()).matrix();
  });
}

template <class S>
Var<S> concat_rows(std::span<const Var<S>> parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].value().cols();
  bool ng = false;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::check(p.value().cols() == cols, "concat_rows: column mismatch");
    rows += p.value().rows();
    ng = ng || t.needs_grad(p);
    ids.push_back(p.id);
  }
  Matrix<S> y(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.value().rows()) = p.value();
    off += p.value().rows();
  }
  return t.push(std::move(y), ng, [ids](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    Eigen::Index o = 0;
    for (std::size_t id : ids) {
      const Eigen::Index r = tp.value(id).rows();
      if (tp.needs_grad(id)) tp.grad(id) += g.middleRows(o, r);
      o += r;
    }
  });
}

template <class S>
Var<S> concat_cols(std::span<const Var<S>> parts) {
  detail::check(!parts.empty(), "concat_cols: no inputs");
  Tape<S>& t = *parts[0].tape;
  const Eigen::Index rows = parts[0].value().rows();
  Eigen::Index cols = 0;
  bool ng = false;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::check(p.value().rows() == rows, "concat_cols: row mismatch");
    cols += p.value().cols();
    ng = ng || t.needs_grad(p);
    ids.push_back(p.id);
  }
  Matrix<S> y(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.value().cols()) = p.value();
    off += p.value().cols();
  }
  return t.push(std::move(y), ng, [ids](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    Eigen::Index o = 0;
    for (std::size_t id : ids) {
      const Eigen::Index c = tp.value(id).cols();
      if (tp.needs_grad(id)) tp.grad(id) += g.middleCols(o, c);
      o += c;
    }
  });
}

template <class S>
Var<S> slice_rows(Var<S> x, Eigen::Index begin, Eigen::Index count) {
  Tape<S>& t = *x.tape;
  detail::check(begin >= 0 && count >= 0 && begin + count <= x.value().rows(), "slice_rows: out of range");
  return t.push(x.value().middleRows(begin, count), t.needs_grad(x),
                [ix = x.id, begin, count](Tape<S>& tp, std::size_t self) {
                  tp.grad(ix).middleRows(begin, count) += tp.grad(self);
                });
}

template <class S>
Var<S> slice_cols(Var<S> x, Eigen::Index begin, Eigen::Index count) {
  Tape<S>& t = *x.tape;
  detail::check(begin >= 0 && count >= 0 && begin + count <= x.value().cols(), "slice_cols: out of range");
  return t.push(x.value().middleCols(begin, count), t.needs_grad(x),
                [ix = x.id, begin, count](Tape<S>& tp, std::size_t self) {
                  tp.grad(ix).middleCols(begin, count) += tp.grad(self);
                });
}

// Multi-head scaled dot-product attention. q [n x D], k, v [m x D]; head h
// uses columns [h*D/heads, (h+1)*D/heads). Per head:
// softmax(q_h k_h^T * scale) v_h, softmax over keys; heads are concatenated.
template <class S>
Var<S> multi_head_attention(Var<S> q, Var<S> k, Var<S> v, int heads, S scale) {
  Tape<S>& t = *q.tape;
  const Matrix<S>& qv = q.value();
  const Matrix<S>& kv = k.value();
  const Matrix<S>& vv = v.value();
  detail::check(heads >= 1 && qv.cols() % heads == 0, "attention: depth not divisible by head count");
  detail::check(kv.cols() == qv.cols(), "attention: query/key depth mismatch");
  detail::check(vv.rows() == kv.rows(), "attention: key/value count mismatch");
  detail::check(vv.cols() == qv.cols(), "attention: value depth mismatch");
  detail::check(kv.rows() >= 1, "attention: no keys");
  const Eigen::Index dh = qv.cols() / heads;
  auto probs = std::make_shared<std::vector<Matrix<S>>>();
  Matrix<S> out(qv.rows(), qv.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix<S> s = (qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose()) * scale;
    Matrix<S> a = detail::softmax(s, 1);
    out.middleCols(h * dh, dh).noalias() = a * vv.middleCols(h * dh, dh);
    probs->push_back(std::move(a));
  }
  const bool ng = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
  return t.push(std::move(out), ng,
                [iq = q.id, ik = k.id, iv = v.id, heads, scale, dh, probs](Tape<S>& tp, std::size_t self) {
                  const Matrix<S>& g = tp.grad(self);
                  const Matrix<S>& qv2 = tp.value(iq);
                  const Matrix<S>& kv2 = tp.value(ik);
                  const Matrix<S>& vv2 = tp.value(iv);
                  for (int h = 0; h < heads; ++h) {
                    const Matrix<S>& a = (*probs)[static_cast<std::size_t>(h)];
                    const Matrix<S> go = g.middleCols(h * dh, dh);
                    if (tp.needs_grad(iv)) tp.grad(iv).middleCols(h * dh, dh).noalias() += a.transpose() * go;
                    if (!tp.needs_grad(iq) && !tp.needs_grad(ik)) continue;
                    const Matrix<S> ga = go * vv2.middleCols(h * dh, dh).transpose();
                    Matrix<S> gs = a.cwiseProduct(ga);
                    gs = (gs - (a.array().colwise() * gs.rowwise().sum().array()).matrix()) * scale;
                    if (tp.needs_grad(iq)) tp.grad(iq).middleCols(h * dh, dh).noalias() += gs * kv2.middleCols(h * dh, dh);
                    if (tp.needs_grad(ik))
                      tp.grad(ik).middleCols(h * dh, dh).noalias() += gs.transpose() * qv2.middleCols(h * dh, dh);
                  }
                });
}

// Single-head attention: softmax(q k^T * factor) v.
template <class S>
Var<S> attention(Var<S> q, Var<S> k, Var<S> v, S factor) {
  detail::check(q.value().cols() == k.value().cols(), "attention: query/key depth mismatch");
  detail::check(v.value().rows() == k.value().rows(), "attention: key/value count mismatch");
  return matmul(softmax(scale(matmul_nt(q, k), factor), 1), v);
}

// Appends a row and a column filled with the scalar w (1x1).
template <class S>
Var<S> pad_dustbin(Var<S> scores, Var<S> w) {
  Tape<S>& t = *scores.tape;
  detail::check(w.value().size() == 1, "pad_dustbin: dustbin weight must be scalar");
  const Eigen::Index n = scores.value().rows(), m = scores.value().cols();
  Matrix<S> y = Matrix<S>::Constant(n + 1, m + 1, w.value()(0, 0));
  y.topLeftCorner(n, m) = scores.value();
  const bool ng = t.needs_grad(scores) || t.needs_grad(w);
  return t.push(std::move(y), ng, [is = scores.id, iw = w.id, n, m](Tape<S>& tp, std::size_t self) {
    const Matrix<S>& g = tp.grad(self);
    if (tp.needs_grad(is)) tp.grad(is) += g.topLeftCorner(n, m);
    if (tp.needs_grad(iw)) tp.grad(iw)(0, 0) += g.sum() - g.topLeftCorner(n, m).sum();
  });
}

struct GatherEntry {
  Eigen::Index row, col;
  double coeff;
};

// sum_k coeff_k * x[row_k, col_k] as a 1x1 tensor.
template <class S>
Var<S> gather_sum(Var<S> x, std::vector<GatherEntry> entries) {
  Tape<S>& t = *x.tape;
  const Matrix<S>& xv = x.value();
  S acc = 0;
  for (const auto& e : entries) {
    detail::check(e.row >= 0 && e.row < xv.rows() && e.col >= 0 && e.col < xv.cols(), "gather_sum: index out of range");
    acc += S(e.coeff) * xv(e.row, e.col);
  }
  Matrix<S> y(1, 1);
  y(0, 0) = acc;
  return t.push(std::move(y), t.needs_grad(x), [ix = x.id, entries = std::move(entries)](Tape<S>& tp, std::size_t self) {
    const S g = tp.grad(self)(0, 0);
    Matrix<S>& gx = tp.grad(ix);
    for (const auto& e : entries) gx(e.row, e.col) += S(e.coeff) * g;
  });
}

template <class S>
Var<S> sum(Var<S> x) {
  Tape<S>& t = *x.tape;
  Matrix<S> y(1, 1);
  y(0, 0) = x.value().sum();
  return t.push(std::move(y), t.needs_grad(x), [ix = x.id](Tape<S>& tp, std::size_t self) {
    tp.grad(ix).array() += tp.grad(self)(0, 0);
  });
}

template <class S>
Var<S> add_all(std::span<const Var<S>> xs) {
  detail::check(!xs.empty(), "add_all: no inputs");
  Var<S> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

}  // namespace pillarmatch::ad
