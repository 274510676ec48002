#pragma once

// Differentiable operations on tape variables. Matrices are feature-major:
// rows are features, columns are independent batch items.

#include "scanpath/nn/tape.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace scanpath::nn {

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <class S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
}

template <class S>
void accumulate(Tape<S>& t, int id, const Matrix<S>& g) {
  if (t.requires_grad(id)) t.grad_ref(id) += g;
}

}  // namespace detail

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + detail::shape_str(a.rows(), a.cols()) + " * " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  Tape<S>& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  Matrix<S> out = a.value() * b.value();
  return t.push(std::move(out), {a, b}, [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += t.value(ia).transpose() * g;
  });
}

/// aᵀ b without materialising the transpose.
template <class S>
Var<S> matmul_tn(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ " + detail::shape_str(a.rows(), a.cols()) + " vs " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  Tape<S>& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  Matrix<S> out = a.value().transpose() * b.value();
  return t.push(std::move(out), {a, b}, [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += t.value(ib) * g.transpose();
    if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += t.value(ia) * g;
  });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), {a, b}, [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    detail::accumulate(t, ia, g);
    detail::accumulate(t, ib, g);
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), {a, b}, [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    detail::accumulate(t, ia, g);
    if (t.requires_grad(ib)) t.grad_ref(ib) -= g;
  });
}

template <class S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) {
  return add(a, b);
}
template <class S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) {
  return sub(a, b);
}

/// Element-wise product.
template <class S>
Var<S> cmul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "cmul");
  const int ia = a.id(), ib = b.id();
  Matrix<S> out = a.value().cwiseProduct(b.value());
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.grad_ref(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_ref(ib) += g.cwiseProduct(t.value(ia));
  });
}

/// Element-wise product with a constant matrix of the same shape.
template <class S>
Var<S> cmul_const(const Var<S>& a, const Matrix<S>& k) {
  if (a.rows() != k.rows() || a.cols() != k.cols()) {
    throw ShapeError("cmul_const: shape mismatch " + detail::shape_str(a.rows(), a.cols()) + " vs " +
                     detail::shape_str(k.rows(), k.cols()));
  }
  const int ia = a.id();
  return a.tape()->push(a.value().cwiseProduct(k), {a}, [ia, k](Tape<S>& t, const Matrix<S>& g) {
    t.grad_ref(ia) += g.cwiseProduct(k);
  });
}

template <class S>
Var<S> scale(const Var<S>& a, S s) {
  const int ia = a.id();
  return a.tape()->push(a.value() * s, {a}, [ia, s](Tape<S>& t, const Matrix<S>& g) { t.grad_ref(ia) += g * s; });
}

/// x + b broadcast over columns; b is a column vector.
template <class S>
Var<S> add_bias(const Var<S>& x, const Var<S>& b) {
  if (b.cols() != 1 || b.rows() != x.rows()) {
    throw ShapeError("add_bias: bias " + detail::shape_str(b.rows(), b.cols()) + " does not fit " +
                     detail::shape_str(x.rows(), x.cols()));
  }
  const int ix = x.id(), ib = b.id();
  Matrix<S> out = x.value().colwise() + b.value().col(0);
  return x.tape()->push(std::move(out), {x, b}, [ix, ib](Tape<S>& t, const Matrix<S>& g) {
    detail::accumulate(t, ix, g);
    if (t.requires_grad(ib)) t.grad_ref(ib) += g.rowwise().sum();
  });
}

/// W x + b in one node.
template <class S>
Var<S> affine(const Var<S>& w, const Var<S>& x, const Var<S>& b) {
  if (w.cols() != x.rows() || b.rows() != w.rows() || b.cols() != 1) {
    throw ShapeError("affine: W " + detail::shape_str(w.rows(), w.cols()) + ", x " +
                     detail::shape_str(x.rows(), x.cols()) + ", b " + detail::shape_str(b.rows(), b.cols()));
  }
  const int iw = w.id(), ix = x.id(), ib = b.id();
  Matrix<S> out = w.value() * x.value();
  out.colwise() += b.value().col(0);
  return w.tape()->push(std::move(out), {w, x, b}, [iw, ix, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(iw)) t.grad_ref(iw).noalias() += g * t.value(ix).transpose();
    if (t.requires_grad(ix)) t.grad_ref(ix).noalias() += t.value(iw).transpose() * g;
    if (t.requires_grad(ib)) t.grad_ref(ib) += g.rowwise().sum();
  });
}

template <class S>
Var<S> relu(const Var<S>& a) {
  const int ia = a.id();
  Matrix<S> out = a.value().cwiseMax(S(0));
  return a.tape()->push(std::move(out), {a}, [ia](Tape<S>& t, const Matrix<S>& g) {
    t.grad_ref(ia) += (t.value(ia).array() > S(0)).select(g, S(0));
  });
}

template <class S>
Var<S> tanh(const Var<S>& a) {
  const int ia = a.id();
  Matrix<S> out = a.value().array().tanh().matrix();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<S>& t, const Matrix<S>& g) {
    t.grad_ref(ia) += (g.array() * (S(1) - t.value(ia).array().tanh().square())).matrix();
  });
}

template <class S>
Var<S> sigmoid(const Var<S>& a) {
  const int ia = a.id();
  Matrix<S> out = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<S>& t, const Matrix<S>& g) {
    auto s = (S(1) / (S(1) + (-t.value(ia).array()).exp()));
    t.grad_ref(ia) += (g.array() * s * (S(1) - s)).matrix();
  });
}

/// Column-wise softmax.
template <class S>
Var<S> softmax(const Var<S>& a) {
  Matrix<S> out(a.rows(), a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    auto col = a.value().col(c);
    const S mx = col.maxCoeff();
    out.col(c) = (col.array() - mx).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  const int ia = a.id();
  Matrix<S> y = out;
  return a.tape()->push(std::move(out), {a}, [ia, y](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& ga = t.grad_ref(ia);
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      const S dotp = g.col(c).dot(y.col(c));
      ga.col(c).array() += y.col(c).array() * (g.col(c).array() - dotp);
    }
  });
}

/// Column-wise softmax restricted to entries where `mask` is non-zero. Masked
/// entries are exactly 0; a fully masked column is all zeros.
template <class S>
Var<S> masked_softmax(const Var<S>& a, const Matrix<S>& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw ShapeError("masked_softmax: mask shape mismatch");
  Matrix<S> out = Matrix<S>::Zero(a.rows(), a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      if (mask(r, c) != S(0)) mx = std::max(mx, a.value()(r, c));
    }
    if (mx == -std::numeric_limits<S>::infinity()) continue;
    S total = 0;
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      if (mask(r, c) != S(0)) {
        out(r, c) = std::exp(a.value()(r, c) - mx);
        total += out(r, c);
      }
    }
    out.col(c) /= total;
  }
  const int ia = a.id();
  Matrix<S> y = out;
  return a.tape()->push(std::move(out), {a}, [ia, y](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& ga = t.grad_ref(ia);
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      const S dotp = g.col(c).dot(y.col(c));
      ga.col(c).array() += y.col(c).array() * (g.col(c).array() - dotp);
    }
  });
}

/// Vertical concatenation; all parts share the column count.
template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<S> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id(), r);
    r += p.rows();
  }
  return parts.front().tape()->push(std::move(out), parts, [spans](Tape<S>& t, const Matrix<S>& g) {
    for (const auto& [id, start] : spans) {
      if (t.requires_grad(id)) {
        Matrix<S>& gp = t.grad_ref(id);
        gp += g.middleRows(start, gp.rows());
      }
    }
  });
}

template <class S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  return concat_rows(parts);
}

/// Horizontal concatenation; all parts share the row count.
template <class S>
Var<S> hstack(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("hstack: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hstack: row counts differ");
    cols += p.cols();
  }
  Matrix<S> out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    spans.emplace_back(p.id(), c);
    c += p.cols();
  }
  return parts.front().tape()->push(std::move(out), parts, [spans](Tape<S>& t, const Matrix<S>& g) {
    for (const auto& [id, start] : spans) {
      if (t.requires_grad(id)) {
        Matrix<S>& gp = t.grad_ref(id);
        gp += g.middleCols(start, gp.cols());
      }
    }
  });
}

template <class S>
Var<S> slice_rows(const Var<S>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const int ia = a.id();
  Matrix<S> out = a.value().middleRows(start, count);
  return a.tape()->push(std::move(out), {a}, [ia, start, count](Tape<S>& t, const Matrix<S>& g) {
    t.grad_ref(ia).middleRows(start, count) += g;
  });
}

/// Picks columns of `table`; index -1 yields a zero column.
template <class S>
Var<S> gather_cols(const Var<S>& table, const std::vector<int>& index) {
  Matrix<S> out(table.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t k = 0; k < index.size(); ++k) {
    const int i = index[k];
    if (i < -1 || i >= table.cols()) throw ShapeError("gather_cols: index " + std::to_string(i) + " out of range");
    if (i < 0) {
      out.col(static_cast<Eigen::Index>(k)).setZero();
    } else {
      out.col(static_cast<Eigen::Index>(k)) = table.value().col(i);
    }
  }
  const int it = table.id();
  return table.tape()->push(std::move(out), {table}, [it, index](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>& gt = t.grad_ref(it);
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] >= 0) gt.col(index[k]) += g.col(static_cast<Eigen::Index>(k));
    }
  });
}

/// Scales each column by a constant factor.
template <class S>
Var<S> scale_cols(const Var<S>& a, const Vector<S>& factors) {
  if (factors.size() != a.cols()) throw ShapeError("scale_cols: factor count mismatch");
  const int ia = a.id();
  Matrix<S> out = a.value() * factors.asDiagonal();
  return a.tape()->push(std::move(out), {a}, [ia, factors](Tape<S>& t, const Matrix<S>& g) {
    t.grad_ref(ia) += g * factors.asDiagonal();
  });
}

template <class S>
Var<S> sum(const Var<S>& a) {
  const int ia = a.id();
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->push(std::move(out), {a}, [ia](Tape<S>& t, const Matrix<S>& g) {
    t.grad_ref(ia).array() += g(0, 0);
  });
}

/// Frobenius inner product ⟨a, b⟩ as a 1x1 tensor.
template <class S>
Var<S> dot(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "dot");
  const int ia = a.id(), ib = b.id();
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape<S>& t, const Matrix<S>& g) {
    if (t.requires_grad(ia)) t.grad_ref(ia) += g(0, 0) * t.value(ib);
    if (t.requires_grad(ib)) t.grad_ref(ib) += g(0, 0) * t.value(ia);
  });
}

/// Scores of a query against a block-stacked key matrix: z holds `blocks`
/// column blocks of width B = q.cols(); out(n, b) = q(:, b) · z(:, n·B + b).
template <class S>
Var<S> block_scores(const Var<S>& q, const Var<S>& z) {
  const Eigen::Index batch = q.cols();
  if (batch == 0 || z.rows() != q.rows() || z.cols() % batch != 0) throw ShapeError("block_scores: shape mismatch");
  const Eigen::Index blocks = z.cols() / batch;
  Matrix<S> out(blocks, batch);
  for (Eigen::Index n = 0; n < blocks; ++n) {
    out.row(n) = z.value().middleCols(n * batch, batch).cwiseProduct(q.value()).colwise().sum();
  }
  const int iq = q.id(), iz = z.id();
  return q.tape()->push(std::move(out), {q, z}, [iq, iz, batch, blocks](Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& zv = t.value(iz);
    const Matrix<S>& qv = t.value(iq);
    if (t.requires_grad(iq)) {
      Matrix<S>& gq = t.grad_ref(iq);
      for (Eigen::Index n = 0; n < blocks; ++n) gq += zv.middleCols(n * batch, batch) * g.row(n).asDiagonal();
    }
    if (t.requires_grad(iz)) {
      Matrix<S>& gz = t.grad_ref(iz);
      for (Eigen::Index n = 0; n < blocks; ++n) gz.middleCols(n * batch, batch) += qv * g.row(n).asDiagonal();
    }
  });
}

/// Weighted sum over blocks: out(:, b) = Σ_n w(n, b) · z(:, n·B + b).
template <class S>
Var<S> block_combine(const Var<S>& w, const Var<S>& z) {
  const Eigen::Index batch = w.cols();
  const Eigen::Index blocks = w.rows();
  if (z.cols() != blocks * batch) throw ShapeError("block_combine: weight arity does not match the key blocks");
  Matrix<S> out = Matrix<S>::Zero(z.rows(), batch);
  for (Eigen::Index n = 0; n < blocks; ++n) out += z.value().middleCols(n * batch, batch) * w.value().row(n).asDiagonal();
  const int iw = w.id(), iz = z.id();
  return w.tape()->push(std::move(out), {w, z}, [iw, iz, batch, blocks](Tape<S>& t, const Matrix<S>& g) {
    const Matrix<S>& zv = t.value(iz);
    const Matrix<S>& wv = t.value(iw);
    if (t.requires_grad(iw)) {
      Matrix<S>& gw = t.grad_ref(iw);
      for (Eigen::Index n = 0; n < blocks; ++n) {
        gw.row(n) += zv.middleCols(n * batch, batch).cwiseProduct(g).colwise().sum();
      }
    }
    if (t.requires_grad(iz)) {
      Matrix<S>& gz = t.grad_ref(iz);
      for (Eigen::Index n = 0; n < blocks; ++n) gz.middleCols(n * batch, batch) += g * wv.row(n).asDiagonal();
    }
  });
}

/// Σ_b weights[b] · (−log softmax(logits[:, b])[targets[b]]), stabilised by
/// max-subtraction. Columns with zero weight are skipped and may carry any
/// target.
template <class S>
Var<S> softmax_nll(const Var<S>& logits, const std::vector<int>& targets, const std::vector<S>& weights) {
  const Eigen::Index classes = logits.rows();
  if (static_cast<Eigen::Index>(targets.size()) != logits.cols() || targets.size() != weights.size()) {
    throw ShapeError("softmax_nll: targets/weights must match the column count");
  }
  Matrix<S> probs = Matrix<S>::Zero(classes, logits.cols());
  S loss = 0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const S w = weights[static_cast<std::size_t>(c)];
    if (w == S(0)) continue;
    const int tgt = targets[static_cast<std::size_t>(c)];
    if (tgt < 0 || tgt >= classes) {
      throw std::out_of_range("softmax_nll: target class " + std::to_string(tgt) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    auto col = logits.value().col(c);
    const S mx = col.maxCoeff();
    const S lse = mx + std::log((col.array() - mx).exp().sum());
    loss += w * (lse - col(tgt));
    probs.col(c) = (col.array() - lse).exp().matrix();
  }
  Matrix<S> out(1, 1);
  out(0, 0) = loss;
  const int il = logits.id();
  return logits.tape()->push(std::move(out), {logits},
                             [il, probs, targets, weights](Tape<S>& t, const Matrix<S>& g) {
                               Matrix<S>& gl = t.grad_ref(il);
                               for (Eigen::Index c = 0; c < probs.cols(); ++c) {
                                 const S w = weights[static_cast<std::size_t>(c)];
                                 if (w == S(0)) continue;
                                 gl.col(c) += (g(0, 0) * w) * probs.col(c);
                                 gl(targets[static_cast<std::size_t>(c)], c) -= g(0, 0) * w;
                               }
                             });
}

/// Single-vector form: −log softmax(logits)[target].
template <class S>
Var<S> softmax_nll(const Var<S>& logits, int target) {
  if (logits.cols() != 1) throw ShapeError("softmax_nll: expected a column vector");
  return softmax_nll(logits, std::vector<int>{target}, std::vector<S>{S(1)});
}

}  // namespace scanpath::nn
