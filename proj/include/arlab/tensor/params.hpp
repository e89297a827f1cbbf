// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "arlab/tensor/autograd.hpp"

namespace arlab {

/// Named collection of trainable tensors. Iteration order is the sorted
/// name order, which keeps checkpoints and optimizer sweeps deterministic.
template <class T>
class ParamStore {
 public:
  BasicTensor<T>& add(const std::string& name, BasicTensor<T> init) {
    ARLAB_REQUIRE(!tensors_.count(name), "duplicate parameter " + name);
    init.requires_grad = true;
    return tensors_.emplace(name, std::move(init)).first->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  BasicTensor<T>& get(const std::string& name) {
    auto it = tensors_.find(name);
    ARLAB_REQUIRE(it != tensors_.end(), "unknown parameter " + name);
    return it->second;
  }
  const BasicTensor<T>& get(const std::string& name) const {
    auto it = tensors_.find(name);
    ARLAB_REQUIRE(it != tensors_.end(), "unknown parameter " + name);
    return it->second;
  }

  /// Bind parameter `name` onto `tape` as a trainable leaf.
  Var<T> var(Tape<T>& tape, const std::string& name) const { return tape.param(name, get(name)); }

  std::map<std::string, BasicTensor<T>>& tensors() { return tensors_; }
  const std::map<std::string, BasicTensor<T>>& tensors() const { return tensors_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, t] : tensors_) out.add(k, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.tensors_ == b.tensors_; }

 private:
  std::map<std::string, BasicTensor<T>> tensors_;
};

/// Zero-filled gradient map covering every parameter, topped up from `grads`.
/// Parameters the loss never reached get explicit zeros.
template <class T>
GradientMap<T> complete_gradients(const ParamStore<T>& params, const GradientMap<T>& grads) {
  GradientMap<T> out;
  for (const auto& [name, t] : params.tensors()) {
    auto it = grads.find(name);
    out.emplace(name, it != grads.end() ? it->second : BasicTensor<T>(t.shape()));
  }
  return out;
}

/// Dense layer weights [in, out] with fan-in scaled Gaussian init, bias zero.
template <class T>
void add_linear(ParamStore<T>& p, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                double gain = 1.0) {
  p.add(name + ".w", BasicTensor<T>::randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
  p.add(name + ".b", BasicTensor<T>({out}));
}

template <class T>
Var<T> linear(Tape<T>& tape, const ParamStore<T>& p, const std::string& name, Var<T> x) {
  return add(matmul(x, p.var(tape, name + ".w")), p.var(tape, name + ".b"));
}

}  // namespace arlab
