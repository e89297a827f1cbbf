// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>

#include "arlab/tensor/params.hpp"

namespace arlab {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.02;
  double eps = 1e-8;
};

template <class T>
struct OptimizerState {
  AdamWConfig cfg;
  std::int64_t step = 0;
  std::map<std::string, BasicTensor<T>> m;
  std::map<std::string, BasicTensor<T>> v;
};

template <class T>
OptimizerState<T> make_optimizer_state(const ParamStore<T>& params, AdamWConfig cfg = {}) {
  OptimizerState<T> s;
  s.cfg = cfg;
  for (const auto& [name, t] : params.tensors()) {
    s.m.emplace(name, BasicTensor<T>(t.shape()));
    s.v.emplace(name, BasicTensor<T>(t.shape()));
  }
  return s;
}

/// One AdamW update with decoupled weight decay. Parameters missing from
/// `grads` are treated as having zero gradient.
template <class T>
void adamw_step(ParamStore<T>& params, const GradientMap<T>& grads, OptimizerState<T>& state) {
  const auto& c = state.cfg;
  for (const auto& [name, _] : grads)
    ARLAB_REQUIRE(params.contains(name), "gradient for unknown parameter " + name);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.tensors()) {
    auto mit = state.m.find(name);
    auto vit = state.v.find(name);
    ARLAB_REQUIRE(mit != state.m.end() && vit != state.v.end(), "optimizer state missing parameter " + name);
    auto& m = mit->second;
    auto& v = vit->second;
    ARLAB_REQUIRE(m.shape() == p.shape() && v.shape() == p.shape(), "optimizer state shape mismatch for " + name);
    auto git = grads.find(name);
    const BasicTensor<T>* g = git != grads.end() ? &git->second : nullptr;
    if (g) ARLAB_REQUIRE(g->shape() == p.shape(), "gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double pi = static_cast<double>(p[i]) * (1.0 - c.lr * c.weight_decay);
      pi -= c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p[i] = static_cast<T>(pi);
    }
  }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(GradientMap<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (auto v : g.data()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [_, g] : grads)
      for (auto& v : g.storage()) v *= s;
  }
  return norm;
}

}  // namespace arlab
