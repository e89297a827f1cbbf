// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "arlab/tensor/params.hpp"

namespace arlab {

struct GradCheckOptions {
  double step = 1e-5;       // central-difference step, sized for double
  double tolerance = 1e-4;  // max allowed relative error
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor). Keeps
  /// near-zero gradients from turning rounding noise into huge ratios.
  double floor = 1e-2;
  /// Elements probed per parameter; 0 probes all of them.
  std::size_t max_elements = 0;
};

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;
  double worst = 0.0;
  std::string worst_param;
  bool passed = true;
};

/// Compares analytic gradients of `fn` against central finite differences.
/// `fn` must rebuild the full forward pass from `params` on the given tape.
template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>&, const ParamStore<T>&)>& fn, ParamStore<T> params,
                           GradCheckOptions opt = {}) {
  GradientMap<T> analytic;
  {
    Tape<T> tape;
    analytic = complete_gradients(params, tape.backward(fn(tape, params)));
  }
  auto eval = [&](const ParamStore<T>& p) {
    Tape<T> tape(false);
    return static_cast<double>(fn(tape, p).value()[0]);
  };
  GradCheckReport rep;
  for (auto& [name, tensor] : params.tensors()) {
    double worst = 0.0;
    const std::size_t n = tensor.size();
    const std::size_t stride = (opt.max_elements == 0 || n <= opt.max_elements) ? 1 : n / opt.max_elements;
    for (std::size_t i = 0; i < n; i += stride) {
      const T orig = tensor[i];
      tensor[i] = static_cast<T>(orig + opt.step);
      const double fp = eval(params);
      tensor[i] = static_cast<T>(orig - opt.step);
      const double fm = eval(params);
      tensor[i] = orig;
      const double num = (fp - fm) / (2.0 * opt.step);
      const double ana = static_cast<double>(analytic.at(name)[i]);
      const double denom = std::max({std::abs(num), std::abs(ana), opt.floor});
      worst = std::max(worst, std::abs(num - ana) / denom);
    }
    rep.max_rel_error[name] = worst;
    if (worst > rep.worst) {
      rep.worst = worst;
      rep.worst_param = name;
    }
  }
  rep.passed = rep.worst < opt.tolerance;
  return rep;
}

}  // namespace arlab
