#pragma once

#include "scanpath/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace scanpath::nn {

struct GradCheckGroup {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 0.0;

  double max_rel_error() const {
    double e = 0.0;
    for (const auto& g : groups) e = std::max(e, g.max_rel_error);
    return e;
  }
  bool passed() const { return max_rel_error() < tolerance; }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& g : groups) {
      if (!(g.max_rel_error < tolerance)) out.push_back(g.name);
    }
    return out;
  }
};

using LossClosure = std::function<Var<double>(Tape<double>&)>;

/// Compares reverse-mode gradients of `loss` against central differences for
/// every parameter in `params`. The step is 1e-5·max(1, |θ|). Relative error
/// is |a − n| / max(|a|, |n|, 1e-6); the floor keeps entries whose true
/// gradient is essentially zero from reporting noise as failure.
/// The closure must be deterministic (reseed any dropout RNG inside it).
inline GradCheckReport grad_check(const LossClosure& loss, ParamStore<double>& params, double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;
  if (params.size() == 0) return report;

  params.zero_grad();
  {
    Tape<double> tape;
    Var<double> l = loss(tape);
    tape.backward(l);
  }
  auto eval = [&]() {
    Tape<double> tape(false);
    return loss(tape).value()(0, 0);
  };

  for (auto& [name, p] : params) {
    GradCheckGroup group;
    group.name = name;
    group.entries = static_cast<std::size_t>(p.value.size());
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      double& theta = p.value.data()[k];
      const double saved = theta;
      const double h = 1e-5 * std::max(1.0, std::abs(saved));
      theta = saved + h;
      const double up = eval();
      theta = saved - h;
      const double down = eval();
      theta = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad.data()[k];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      group.max_abs_error = std::max(group.max_abs_error, abs_err);
      group.max_rel_error = std::max(group.max_rel_error, abs_err / denom);
    }
    report.groups.push_back(group);
  }
  return report;
}

}  // namespace scanpath::nn
