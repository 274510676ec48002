#pragma once

#include "scanpath/nn/tape.hpp"

#include <cmath>
#include <map>
#include <string>

namespace scanpath::nn {

template <class S>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Matrix<S>> m;
  std::map<std::string, Matrix<S>> v;
};

/// One bias-corrected Adam update using the gradients stored in `params`.
template <class S>
void adam_step(ParamStore<S>& params, AdamState<S>& state) {
  state.step += 1;
  const S b1 = static_cast<S>(state.beta1);
  const S b2 = static_cast<S>(state.beta2);
  const S c1 = static_cast<S>(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const S c2 = static_cast<S>(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  const S lr = static_cast<S>(state.lr);
  const S eps = static_cast<S>(state.eps);
  for (auto& [name, p] : params) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + name);
    }
    auto [mit, m_new] = state.m.try_emplace(name, Matrix<S>::Zero(p.value.rows(), p.value.cols()));
    auto [vit, v_new] = state.v.try_emplace(name, Matrix<S>::Zero(p.value.rows(), p.value.cols()));
    Matrix<S>& m = mit->second;
    Matrix<S>& v = vit->second;
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw ShapeError("adam_step: moment shape mismatch for " + name);
    }
    m = b1 * m + (S(1) - b1) * p.grad;
    v = b2 * v + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace scanpath::nn
