// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "arlab/tensor/nn.hpp"
#include "arlab/tensor/optim.hpp"
#include "arlab/world/image.hpp"
#include "arlab/world/latent_grid.hpp"

namespace arlab {

struct DecoderConfig {
  int side = 4;   // token grid side
  int patch = 8;  // pixels per token side; equals the encoder patch
  int dim = 8;    // token channels
  int width = 64;
  int heads = 4;
  int blocks = 1;
  std::uint64_t seed = 7;

  int tokens() const { return side * side; }
  int patch_values() const { return 3 * patch * patch; }
};

/// Small ViT-style pixel decoder: token projection, positional embedding,
/// transformer blocks, per-token projection to a p x p x 3 patch.
struct DecoderParams {
  DecoderConfig cfg;
  ParamStore<float> params;
};

inline DecoderParams make_decoder(const DecoderConfig& cfg) {
  ARLAB_REQUIRE(cfg.side > 0 && cfg.patch > 0 && cfg.dim > 0 && cfg.width % cfg.heads == 0,
                "invalid decoder geometry");
  Rng rng(derive_seed(cfg.seed, 0xDEC0DE));
  DecoderParams d{cfg, {}};
  add_linear(d.params, "dec.in", cfg.dim, cfg.width, rng);
  d.params.add("dec.pos", Tensor::randn({cfg.tokens(), cfg.width}, rng, 0.02));
  for (int b = 0; b < cfg.blocks; ++b)
    add_transformer_block(d.params, "dec.blk" + std::to_string(b), cfg.width, 2 * cfg.width, rng);
  add_layer_norm(d.params, "dec.ln", cfg.width);
  add_linear(d.params, "dec.out", cfg.width, cfg.patch_values(), rng, 0.5);
  return d;
}

/// latents: [batch * N, d] -> pixel patches [batch * N, 3p^2] before clamping.
inline Var<float> decoder_forward(Tape<float>& tape, const DecoderParams& dec, const Tensor& latents, int batch) {
  const auto& c = dec.cfg;
  ARLAB_REQUIRE(latents.rank() == 2 && latents.dim(1) == c.dim && latents.dim(0) == batch * c.tokens(),
                "decoder input shape does not match decoder config");
  const auto& p = dec.params;
  auto h = linear(tape, p, "dec.in", tape.constant(latents));
  std::vector<std::int64_t> pos(static_cast<std::size_t>(batch) * c.tokens());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int64_t>(i % c.tokens());
  h = add(h, embedding(p.var(tape, "dec.pos"), pos));
  for (int b = 0; b < c.blocks; ++b)
    h = transformer_block(tape, p, "dec.blk" + std::to_string(b), h, batch, c.tokens(), c.heads, AttnMask::none);
  auto out = linear(tape, p, "dec.out", layer_norm(tape, p, "dec.ln", h));
  return out;
}

/// Image -> [N, 3p^2] patch rows centred at 0 (pixel - 0.5), in the same
/// (y, x, channel) order the encoder reads.
inline void image_to_patches(const SyntheticImage& img, int patch, std::span<float> out) {
  const int g = img.height / patch;
  std::size_t j = 0;
  for (int ty = 0; ty < g; ++ty)
    for (int tx = 0; tx < g; ++tx)
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c) out[j++] = img.at(ty * patch + y, tx * patch + x, c) - 0.5f;
}

inline SyntheticImage patches_to_image(std::span<const float> rows, int side, int patch) {
  SyntheticImage img;
  img.height = img.width = side * patch;
  img.pixels.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  std::size_t j = 0;
  for (int ty = 0; ty < side; ++ty)
    for (int tx = 0; tx < side; ++tx)
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c) img.at(ty * patch + y, tx * patch + x, c) = std::clamp(rows[j++] + 0.5f, 0.0f, 1.0f);
  return img;
}

inline SyntheticImage decode(const LatentGrid& latents, const DecoderParams& dec) {
  ARLAB_REQUIRE(latents.side() == dec.cfg.side && latents.dim() == dec.cfg.dim,
                "latent grid does not match decoder config");
  Tape<float> tape(false);
  auto out = decoder_forward(tape, dec, latents.as_tensor(), 1);
  return patches_to_image(out.value().data(), dec.cfg.side, dec.cfg.patch);
}

struct DecoderTrainReport {
  double baseline_l1 = 0.0;  // mean absolute pixel error before training
  double final_l1 = 0.0;     // same metric after the last epoch
  std::vector<double> epoch_loss;
};

/// Mean absolute pixel error of `dec` over a latent/image set (unclamped outputs).
inline double decoder_l1(const DecoderParams& dec, std::span<const LatentGrid> latents,
                         std::span<const SyntheticImage> images) {
  const int n = dec.cfg.tokens(), pv = dec.cfg.patch_values(), d = dec.cfg.dim;
  double total = 0.0;
  std::vector<float> target(static_cast<std::size_t>(n) * pv);
  for (std::size_t s = 0; s < latents.size(); ++s) {
    Tape<float> tape(false);
    Tensor lt({n, d}, std::vector<float>(latents[s].data().begin(), latents[s].data().end()));
    auto out = decoder_forward(tape, dec, lt, 1);
    image_to_patches(images[s], dec.cfg.patch, target);
    double e = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) e += std::abs(out.value()[i] - target[i]);
    total += e / static_cast<double>(target.size());
  }
  return total / static_cast<double>(latents.size());
}

/// Minimizes mean absolute pixel error with AdamW over shuffled minibatches.
inline DecoderParams train_decoder(std::span<const LatentGrid> latents, std::span<const SyntheticImage> images,
                                   const DecoderConfig& cfg, int epochs, double lr, DecoderTrainReport* report = nullptr,
                                   int batch = 16) {
  ARLAB_REQUIRE(latents.size() == images.size() && !latents.empty(), "decoder training needs matched latent/image pairs");
  ARLAB_REQUIRE(epochs >= 0, "epochs must be non-negative");
  for (const auto& l : latents)
    ARLAB_REQUIRE(l.side() == cfg.side && l.dim() == cfg.dim, "latent geometry differs from decoder config");
  DecoderParams dec = make_decoder(cfg);
  DecoderTrainReport rep;
  rep.baseline_l1 = decoder_l1(dec, latents, images);
  auto opt = make_optimizer_state(dec.params, AdamWConfig{.lr = lr, .weight_decay = 0.0});
  Rng rng(derive_seed(cfg.seed, 0x7EA1));
  std::vector<std::size_t> order(latents.size());
  std::iota(order.begin(), order.end(), 0);
  const int n = cfg.tokens(), pv = cfg.patch_values(), d = cfg.dim;
  for (int ep = 0; ep < epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double ep_loss = 0.0;
    int nb = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const int b = static_cast<int>(std::min<std::size_t>(batch, order.size() - start));
      Tensor x({b * n, d});
      Tensor y({b * n, pv});
      for (int i = 0; i < b; ++i) {
        const auto& l = latents[order[start + i]];
        std::copy(l.data().begin(), l.data().end(), x.data().begin() + static_cast<std::size_t>(i) * n * d);
        image_to_patches(images[order[start + i]], cfg.patch,
                         y.data().subspan(static_cast<std::size_t>(i) * n * pv, static_cast<std::size_t>(n) * pv));
      }
      Tape<float> tape;
      auto loss = l1(decoder_forward(tape, dec, x, b), tape.constant(y));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) throw TrainingError("decoder training diverged", "epoch " + std::to_string(ep));
      auto grads = tape.backward(loss);
      adamw_step(dec.params, grads, opt);
      ep_loss += lv;
      ++nb;
    }
    rep.epoch_loss.push_back(ep_loss / nb);
  }
  rep.final_l1 = epochs == 0 ? rep.baseline_l1 : decoder_l1(dec, latents, images);
  if (report) *report = rep;
  return dec;
}

}  // namespace arlab
