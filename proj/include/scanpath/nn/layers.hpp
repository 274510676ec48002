#pragma once

#include "scanpath/nn/ops.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace scanpath::nn {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

/// Fills `m` with uniform(-bound, bound) draws in column-major order.
template <class S>
void fill_uniform(Matrix<S>& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<S>(dist(rng));
}

/// Inverted dropout. Eval mode, or rate 0, returns `x` itself.
template <class S>
Var<S> dropout(const Var<S>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  Matrix<S> mask(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < mask.size(); ++k) mask.data()[k] = u(rng) < rate ? S(0) : keep_scale;
  return cmul_const(x, mask);
}

// ---------------------------------------------------------------------------
// Dense

struct DenseSpec {
  std::string weight;
  std::string bias;
};

template <class S>
DenseSpec init_dense(ParamStore<S>& store, const std::string& prefix, int in, int out, Rng& rng) {
  Matrix<S> w(out, in);
  fill_uniform(w, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  store.add(prefix + ".weight", std::move(w));
  store.add(prefix + ".bias", Matrix<S>::Zero(out, 1));
  return {prefix + ".weight", prefix + ".bias"};
}

template <class S>
Var<S> dense(Tape<S>& tape, const ParamStore<S>& store, const DenseSpec& spec, const Var<S>& x) {
  return affine(tape.parameter(store.at(spec.weight)), x, tape.parameter(store.at(spec.bias)));
}

// ---------------------------------------------------------------------------
// LSTM. Gate rows are ordered (input, forget, cell, output).

struct LstmSpec {
  std::string w_ih;
  std::string w_hh;
  std::string bias;
  int input = 0;
  int hidden = 0;
};

template <class S>
struct LstmVars {
  Var<S> w_ih;
  Var<S> w_hh;
  Var<S> bias;
  int hidden = 0;
};

template <class S>
LstmSpec init_lstm(ParamStore<S>& store, const std::string& prefix, int in, int hidden, Rng& rng) {
  Matrix<S> w_ih(4 * hidden, in);
  Matrix<S> w_hh(4 * hidden, hidden);
  fill_uniform(w_ih, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  fill_uniform(w_hh, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  Matrix<S> b = Matrix<S>::Zero(4 * hidden, 1);
  b.middleRows(hidden, hidden).setConstant(S(1));
  LstmSpec spec{prefix + ".w_ih", prefix + ".w_hh", prefix + ".bias", in, hidden};
  store.add(spec.w_ih, std::move(w_ih));
  store.add(spec.w_hh, std::move(w_hh));
  store.add(spec.bias, std::move(b));
  return spec;
}

template <class S>
LstmVars<S> bind(Tape<S>& tape, const ParamStore<S>& store, const LstmSpec& spec) {
  return {tape.parameter(store.at(spec.w_ih)), tape.parameter(store.at(spec.w_hh)),
          tape.parameter(store.at(spec.bias)), spec.hidden};
}

/// W_ih x + W_hh h + b as one node.
template <class S>
Var<S> lstm_preactivation(const Var<S>& x, const Var<S>& h, const LstmVars<S>& p) {
  if (p.w_ih.cols() != x.rows() || p.w_hh.cols() != h.rows() || x.cols() != h.cols() ||
      p.w_ih.rows() != 4 * p.hidden || p.bias.rows() != 4 * p.hidden) {
    throw ShapeError("lstm_cell: input " + detail::shape_str(x.rows(), x.cols()) + " / state " +
                     detail::shape_str(h.rows(), h.cols()) + " do not match W_ih " +
                     detail::shape_str(p.w_ih.rows(), p.w_ih.cols()));
  }
  Matrix<S> out = p.w_ih.value() * x.value();
  out.noalias() += p.w_hh.value() * h.value();
  out.colwise() += p.bias.value().col(0);
  const int iw = p.w_ih.id(), ix = x.id(), iu = p.w_hh.id(), ih = h.id(), ib = p.bias.id();
  return x.tape()->push(std::move(out), {p.w_ih, x, p.w_hh, h, p.bias},
                        [iw, ix, iu, ih, ib](Tape<S>& t, const Matrix<S>& g) {
                          if (t.requires_grad(iw)) t.grad_ref(iw).noalias() += g * t.value(ix).transpose();
                          if (t.requires_grad(ix)) t.grad_ref(ix).noalias() += t.value(iw).transpose() * g;
                          if (t.requires_grad(iu)) t.grad_ref(iu).noalias() += g * t.value(ih).transpose();
                          if (t.requires_grad(ih)) t.grad_ref(ih).noalias() += t.value(iu).transpose() * g;
                          if (t.requires_grad(ib)) t.grad_ref(ib) += g.rowwise().sum();
                        });
}

/// Gate nonlinearities and state update. Returns [h; c] stacked.
template <class S>
Var<S> lstm_pointwise(const Var<S>& pre, const Var<S>& c_prev) {
  const Eigen::Index hsz = c_prev.rows();
  if (pre.rows() != 4 * hsz || pre.cols() != c_prev.cols()) throw ShapeError("lstm_pointwise: shape mismatch");
  auto sig = [](const auto& a) { return (S(1) / (S(1) + (-a).exp())).eval(); };
  const auto& z = pre.value();
  auto i = sig(z.middleRows(0, hsz).array());
  auto f = sig(z.middleRows(hsz, hsz).array());
  auto gg = z.middleRows(2 * hsz, hsz).array().tanh().eval();
  auto o = sig(z.middleRows(3 * hsz, hsz).array());
  auto c = (f * c_prev.value().array() + i * gg).eval();
  Matrix<S> out(2 * hsz, pre.cols());
  out.topRows(hsz) = (o * c.tanh()).matrix();
  out.bottomRows(hsz) = c.matrix();
  const int ip = pre.id(), ic = c_prev.id();
  return pre.tape()->push(std::move(out), {pre, c_prev}, [ip, ic, hsz, sig](Tape<S>& t, const Matrix<S>& g) {
    const auto& z = t.value(ip);
    const auto& cp = t.value(ic).array();
    auto i = sig(z.middleRows(0, hsz).array());
    auto f = sig(z.middleRows(hsz, hsz).array());
    auto gg = z.middleRows(2 * hsz, hsz).array().tanh().eval();
    auto o = sig(z.middleRows(3 * hsz, hsz).array());
    auto c = (f * cp + i * gg).eval();
    auto tc = c.tanh().eval();
    auto gh = g.topRows(hsz).array();
    auto dc = (g.bottomRows(hsz).array() + gh * o * (S(1) - tc.square())).eval();
    if (t.requires_grad(ip)) {
      Matrix<S>& gp = t.grad_ref(ip);
      gp.middleRows(0, hsz).array() += dc * gg * i * (S(1) - i);
      gp.middleRows(hsz, hsz).array() += dc * cp * f * (S(1) - f);
      gp.middleRows(2 * hsz, hsz).array() += dc * i * (S(1) - gg.square());
      gp.middleRows(3 * hsz, hsz).array() += gh * tc * o * (S(1) - o);
    }
    if (t.requires_grad(ic)) t.grad_ref(ic).array() += dc * f;
  });
}

template <class S>
struct LstmState {
  Var<S> h;
  Var<S> c;
};

/// One LSTM step: c = f⊙c_prev + i⊙g, h = o⊙tanh(c).
template <class S>
LstmState<S> lstm_cell(const Var<S>& x, const Var<S>& h_prev, const Var<S>& c_prev, const LstmVars<S>& p) {
  Var<S> hc = lstm_pointwise(lstm_preactivation(x, h_prev, p), c_prev);
  return {slice_rows(hc, 0, p.hidden), slice_rows(hc, p.hidden, p.hidden)};
}

template <class S>
LstmState<S> zero_state(Tape<S>& tape, int hidden, Eigen::Index batch) {
  return {tape.constant(Matrix<S>::Zero(hidden, batch)), tape.constant(Matrix<S>::Zero(hidden, batch))};
}

template <class S>
struct BiLstmLayer {
  LstmVars<S> forward;
  LstmVars<S> backward;
};

struct RecurrentDropout {
  double rate = 0.0;
  Mode mode = Mode::eval;
};

/// Stacked bidirectional LSTM over a padded batch. `seq[j]` holds time step j
/// for every column; column b is valid for j < lengths[b]. The backward
/// direction restarts from a zero state at each column's own last token, so
/// padding never leaks into valid positions. Dropout is applied between
/// layers (not after the last one).
template <class S>
std::vector<Var<S>> run_bilstm(Tape<S>& tape, const std::vector<Var<S>>& seq, const std::vector<BiLstmLayer<S>>& layers,
                               const std::vector<int>& lengths, RecurrentDropout drop, Rng& rng) {
  if (seq.empty()) throw ShapeError("run_bilstm: empty sequence");
  const Eigen::Index batch = seq.front().cols();
  if (static_cast<Eigen::Index>(lengths.size()) != batch) throw ShapeError("run_bilstm: lengths/batch mismatch");
  const std::size_t steps = seq.size();

  std::vector<Matrix<S>> masks;
  bool padded = false;
  for (int len : lengths) padded = padded || len < static_cast<int>(steps);

  std::vector<Var<S>> cur = seq;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const int hf = layer.forward.hidden;
    const int hb = layer.backward.hidden;
    if (padded && masks.empty()) {
      masks.resize(steps);
      for (std::size_t j = 0; j < steps; ++j) {
        Vector<S> m(batch);
        for (Eigen::Index b = 0; b < batch; ++b) m(b) = static_cast<int>(j) < lengths[static_cast<std::size_t>(b)] ? S(1) : S(0);
        masks[j] = m.transpose().replicate(1, 1);
      }
    }

    std::vector<Var<S>> fwd(steps), bwd(steps);
    LstmState<S> s = zero_state(tape, hf, batch);
    for (std::size_t j = 0; j < steps; ++j) {
      s = lstm_cell(cur[j], s.h, s.c, layer.forward);
      fwd[j] = s.h;
    }
    s = zero_state(tape, hb, batch);
    for (std::size_t j = steps; j-- > 0;) {
      s = lstm_cell(cur[j], s.h, s.c, layer.backward);
      if (padded) {
        Matrix<S> mk = masks[j].replicate(hb, 1);
        s.h = cmul_const(s.h, mk);
        s.c = cmul_const(s.c, mk);
      }
      bwd[j] = s.h;
    }
    std::vector<Var<S>> next(steps);
    const bool last = l + 1 == layers.size();
    for (std::size_t j = 0; j < steps; ++j) {
      next[j] = concat_rows<S>({fwd[j], bwd[j]});
      if (!last) next[j] = dropout(next[j], drop.rate, drop.mode, rng);
    }
    cur = std::move(next);
  }
  return cur;
}

/// Advances a stack of unidirectional LSTM layers by one step and returns the
/// top hidden state. Dropout sits between layers.
template <class S>
Var<S> lstm_stack_step(const Var<S>& x, std::vector<LstmState<S>>& state, const std::vector<LstmVars<S>>& layers,
                       RecurrentDropout drop, Rng& rng) {
  Var<S> in = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    state[l] = lstm_cell(in, state[l].h, state[l].c, layers[l]);
    in = state[l].h;
    if (l + 1 < layers.size()) in = dropout(in, drop.rate, drop.mode, rng);
  }
  return in;
}

}  // namespace scanpath::nn
