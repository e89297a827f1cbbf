// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "arlab/tensor/params.hpp"

namespace arlab {

template <class T>
void add_layer_norm(ParamStore<T>& p, const std::string& name, std::int64_t width) {
  p.add(name + ".g", BasicTensor<T>({width}, T{1}));
  p.add(name + ".b", BasicTensor<T>({width}));
}

template <class T>
Var<T> layer_norm(Tape<T>& tape, const ParamStore<T>& p, const std::string& name, Var<T> x) {
  return layer_norm(x, p.var(tape, name + ".g"), p.var(tape, name + ".b"));
}

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <class T>
void add_transformer_block(ParamStore<T>& p, const std::string& name, std::int64_t width, std::int64_t mlp_hidden,
                           Rng& rng) {
  add_layer_norm(p, name + ".ln1", width);
  add_linear(p, name + ".q", width, width, rng);
  add_linear(p, name + ".k", width, width, rng);
  add_linear(p, name + ".v", width, width, rng);
  add_linear(p, name + ".o", width, width, rng, 0.5);
  add_layer_norm(p, name + ".ln2", width);
  add_linear(p, name + ".fc1", width, mlp_hidden, rng);
  add_linear(p, name + ".fc2", mlp_hidden, width, rng, 0.5);
}

/// Multi-head self-attention over `batch` sequences of `len` rows packed in
/// x = [batch*len, width].
template <class T>
Var<T> self_attention(Tape<T>& tape, const ParamStore<T>& p, const std::string& name, Var<T> x, std::int64_t batch,
                      std::int64_t len, std::int64_t heads, AttnMask mask) {
  const std::int64_t width = x.shape()[1];
  ARLAB_REQUIRE(width % heads == 0, "attention width must be divisible by heads");
  ARLAB_REQUIRE(x.shape()[0] == batch * len, "attention input rows must equal batch*len");
  const std::int64_t hd = width / heads;
  auto split = [&](Var<T> y) {
    // [B*L, W] -> [B, L, H, hd] -> [B, H, L, hd] -> [B*H, L, hd]
    return reshape(transpose(reshape(y, {batch, len, heads, hd}), 1, 2), {batch * heads, len, hd});
  };
  auto q = split(linear(tape, p, name + ".q", x));
  auto k = split(linear(tape, p, name + ".k", x));
  auto v = split(linear(tape, p, name + ".v", x));
  auto scores = scale(matmul(q, transpose(k, 1, 2)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  auto attn = softmax(scores, mask);
  auto ctx = matmul(attn, v);  // [B*H, L, hd]
  auto merged = reshape(transpose(reshape(ctx, {batch, heads, len, hd}), 1, 2), {batch * len, width});
  return linear(tape, p, name + ".o", merged);
}

template <class T>
Var<T> transformer_block(Tape<T>& tape, const ParamStore<T>& p, const std::string& name, Var<T> x,
                         std::int64_t batch, std::int64_t len, std::int64_t heads, AttnMask mask) {
  auto h = add(x, self_attention(tape, p, name, layer_norm(tape, p, name + ".ln1", x), batch, len, heads, mask));
  auto m = linear(tape, p, name + ".fc2", gelu(linear(tape, p, name + ".fc1", layer_norm(tape, p, name + ".ln2", h))));
  return add(h, m);
}

}  // namespace arlab
