// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive transformer producing one condition vector per token
// position. Two modes share the same parameter layout:
//
//   causal  raster-scan order; position i sees the class slot and tokens
//           0..i-1 (inputs are shifted right by one, class fills slot 0)
//   masked  bidirectional; masked positions carry a learned mask embedding,
//           the class embedding is added everywhere
//
// Training composes optional token normalization, Gaussian perturbation of
// the conditioning inputs and the per-token diffusion loss on clean targets.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "arlab/diffusion/denoiser.hpp"
#include "arlab/stats/token_stats.hpp"
#include "arlab/tensor/optim.hpp"

namespace arlab {

enum class ArMode { causal, masked };

inline const char* to_string(ArMode m) { return m == ArMode::causal ? "causal" : "masked"; }

inline ArMode ar_mode_from_string(const std::string& s) {
  if (s == "causal") return ArMode::causal;
  if (s == "masked") return ArMode::masked;
  throw ContractError("unknown AR mode " + s);
}

struct BackboneConfig {
  int depth = 2;
  int width = 64;
  int heads = 4;
  ArMode mode = ArMode::causal;
  int dim = 8;       // token channels
  int tokens = 16;   // N
  int classes = 8;   // C
  double alpha = 0.0;
  bool normalize = false;
  double mask_min = 0.5;  // masked-mode training ratio range
  double mask_max = 1.0;
  std::uint64_t seed = 3;

  int cond_dim() const { return width; }

  void validate() const {
    ARLAB_REQUIRE(depth >= 1 && width >= 1 && heads >= 1, "backbone needs positive depth, width and heads");
    ARLAB_REQUIRE(width % heads == 0, "backbone width must be divisible by heads");
    ARLAB_REQUIRE(alpha >= 0.0, "noise level must be non-negative");
    ARLAB_REQUIRE(dim >= 2 && tokens >= 1 && classes >= 1, "backbone token geometry is invalid");
    ARLAB_REQUIRE(mask_min > 0.0 && mask_min <= mask_max && mask_max <= 1.0, "mask ratio range must lie in (0, 1]");
  }
};

struct BackboneParams {
  BackboneConfig cfg;
  ParamStore<float> params;
};

inline BackboneParams make_backbone(const BackboneConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0xBAC4B0));
  BackboneParams b{cfg, {}};
  auto& p = b.params;
  add_linear(p, "bb.in", cfg.dim, cfg.width, rng);
  p.add("bb.pos", Tensor::randn({cfg.tokens, cfg.width}, rng, 0.02));
  p.add("bb.cls", Tensor::randn({cfg.classes, cfg.width}, rng, 0.02));
  if (cfg.mode == ArMode::masked) p.add("bb.mask", Tensor::randn({1, cfg.width}, rng, 0.02));
  for (int i = 0; i < cfg.depth; ++i)
    add_transformer_block(p, "bb.blk" + std::to_string(i), cfg.width, 4 * cfg.width, rng);
  add_layer_norm(p, "bb.ln", cfg.width);
  add_linear(p, "bb.out", cfg.width, cfg.cond_dim(), rng);
  return b;
}

/// Conditions z for every position, [B*N, cond_dim].
using ConditionBatch = Tensor;

namespace detail {

inline void check_tokens(const BackboneConfig& c, const Tensor& x, std::span<const int> labels) {
  ARLAB_REQUIRE(x.rank() == 2 && x.dim(1) == c.dim, "token batch width does not match backbone dim");
  ARLAB_REQUIRE(x.dim(0) == static_cast<std::int64_t>(labels.size()) * c.tokens,
                "token batch rows must equal batch * N");
  for (int l : labels) ARLAB_REQUIRE(l >= 0 && l < c.classes, "class id out of range");
}

inline std::vector<std::int64_t> class_rows(std::span<const int> labels, int repeat) {
  std::vector<std::int64_t> out;
  out.reserve(labels.size() * static_cast<std::size_t>(repeat));
  for (int l : labels)
    for (int i = 0; i < repeat; ++i) out.push_back(l);
  return out;
}

inline std::vector<std::int64_t> tiled_positions(std::size_t batch, int n) {
  std::vector<std::int64_t> out(batch * static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int64_t>(i % n);
  return out;
}

inline Var<float> trunk(Tape<float>& tape, const BackboneParams& bb, Var<float> h, std::int64_t batch, AttnMask mask) {
  const auto& c = bb.cfg;
  const auto& p = bb.params;
  for (int i = 0; i < c.depth; ++i)
    h = transformer_block(tape, p, "bb.blk" + std::to_string(i), h, batch, c.tokens, c.heads, mask);
  return linear(tape, p, "bb.out", layer_norm(tape, p, "bb.ln", h));
}

}  // namespace detail

/// Causal conditions for a batch of token grids x [B*N, d]. Position i of
/// each sequence depends on the class and rows 0..i-1 only.
inline Var<float> causal_forward(Tape<float>& tape, const BackboneParams& bb, const Tensor& x,
                                 std::span<const int> labels) {
  const auto& c = bb.cfg;
  detail::check_tokens(c, x, labels);
  const auto B = static_cast<std::int64_t>(labels.size());
  const auto& p = bb.params;
  auto proj = linear(tape, p, "bb.in", tape.constant(x));  // [B*N, W]
  auto cls = embedding(p.var(tape, "bb.cls"), detail::class_rows(labels, 1));
  Var<float> seq;
  if (c.tokens == 1) {
    seq = cls;
  } else {
    // slot 0 holds the class, slot i holds token i-1
    std::vector<std::int64_t> rows;
    rows.reserve(static_cast<std::size_t>(B * c.tokens));
    for (std::int64_t b = 0; b < B; ++b) {
      rows.push_back(B * c.tokens + b);
      for (int i = 1; i < c.tokens; ++i) rows.push_back(b * c.tokens + i - 1);
    }
    seq = embedding(concat<float>({proj, cls}, 0), std::move(rows));
  }
  auto h = add(seq, embedding(p.var(tape, "bb.pos"), detail::tiled_positions(labels.size(), c.tokens)));
  return detail::trunk(tape, bb, h, B, AttnMask::causal);
}

/// Bidirectional conditions; mask[b*N + i] != 0 replaces that token with the
/// mask embedding. Returns conditions for every position.
inline Var<float> masked_forward_all(Tape<float>& tape, const BackboneParams& bb, const Tensor& x,
                                     std::span<const std::uint8_t> mask, std::span<const int> labels) {
  const auto& c = bb.cfg;
  ARLAB_REQUIRE(c.mode == ArMode::masked, "masked_forward needs a masked-mode backbone");
  detail::check_tokens(c, x, labels);
  ARLAB_REQUIRE(mask.size() == static_cast<std::size_t>(x.dim(0)), "mask length must equal batch * N");
  const auto B = static_cast<std::int64_t>(labels.size());
  const auto& p = bb.params;
  auto proj = linear(tape, p, "bb.in", tape.constant(x));
  std::vector<std::int64_t> rows(mask.size());
  const auto mask_row = static_cast<std::int64_t>(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) rows[i] = mask[i] ? mask_row : static_cast<std::int64_t>(i);
  auto h = embedding(concat<float>({proj, p.var(tape, "bb.mask")}, 0), std::move(rows));
  h = add(h, embedding(p.var(tape, "bb.pos"), detail::tiled_positions(labels.size(), c.tokens)));
  h = add(h, embedding(p.var(tape, "bb.cls"), detail::class_rows(labels, c.tokens)));
  return detail::trunk(tape, bb, h, B, AttnMask::none);
}

inline std::vector<std::int64_t> masked_rows(std::span<const std::uint8_t> mask) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

/// Single-grid helpers operating on LatentGrid.
inline ConditionBatch causal_forward(const LatentGrid& tokens, int class_id, const BackboneParams& bb) {
  ARLAB_REQUIRE(tokens.tokens() == bb.cfg.tokens, "token count does not match backbone");
  Tape<float> tape(false);
  const int lab[1] = {class_id};
  return causal_forward(tape, bb, tokens.as_tensor(), lab).value();
}

/// Conditions at the masked positions only, in position order.
inline ConditionBatch masked_forward(const LatentGrid& tokens, std::span<const std::uint8_t> mask, int class_id,
                                     const BackboneParams& bb) {
  ARLAB_REQUIRE(tokens.tokens() == bb.cfg.tokens, "token count does not match backbone");
  auto rows = masked_rows(mask);
  ARLAB_REQUIRE(!rows.empty(), "masked_forward needs at least one masked position");
  Tape<float> tape(false);
  const int lab[1] = {class_id};
  return embedding(masked_forward_all(tape, bb, tokens.as_tensor(), mask, lab), std::move(rows)).value();
}

/// Training-side reference: causal conditions from clean ground-truth tokens.
inline ConditionBatch teacher_forced_conditions(const LatentGrid& tokens, int class_id, const BackboneParams& bb) {
  return causal_forward(tokens, class_id, bb);
}

/// Optimizer state for one trainable model pair.
struct TrainerState {
  OptimizerState<float> backbone;
  OptimizerState<float> head;
};

inline TrainerState make_trainer_state(const BackboneParams& bb, const DenoiserParams<float>& head, AdamWConfig cfg) {
  return {make_optimizer_state(bb.params, cfg), make_optimizer_state(head.params, cfg)};
}

/// Entries of `grads` whose names live in `params`.
inline GradientMap<float> gradients_for(const ParamStore<float>& params, const GradientMap<float>& grads) {
  GradientMap<float> out;
  for (const auto& [name, g] : grads)
    if (params.contains(name)) out.emplace(name, g);
  return out;
}

struct TrainStepOptions {
  int diffusion_multiplicity = 4;
  double grad_clip = 1.0;  // <= 0 disables clipping
};

/// Copies a batch of grids into one [B*N, d] tensor, normalizing each token
/// when requested.
inline Tensor pack_tokens(std::span<const LatentGrid> grids, bool normalize) {
  ARLAB_REQUIRE(!grids.empty(), "empty token batch");
  const int n = grids[0].tokens(), d = grids[0].dim();
  Tensor x({static_cast<std::int64_t>(grids.size()) * n, d});
  for (std::size_t b = 0; b < grids.size(); ++b) {
    ARLAB_REQUIRE(grids[b].same_geometry(grids[0]), "token batch mixes grid geometries");
    const LatentGrid src = normalize ? normalize_tokens(grids[b]).first : grids[b];
    std::copy(src.data().begin(), src.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(b * n * d));
  }
  return x;
}

/// One optimization step. Returns the diffusion loss before the update.
inline double train_step(std::span<const LatentGrid> batch, std::span<const int> labels, BackboneParams& bb,
                         DenoiserParams<float>& head, const DiffusionSchedule& sch, TrainerState& state,
                         std::uint64_t seed, const TrainStepOptions& opt = {}) {
  const auto& c = bb.cfg;
  ARLAB_REQUIRE(batch.size() == labels.size(), "one label per grid required");
  ARLAB_REQUIRE(head.cfg.dim == c.dim && head.cfg.cond_dim == c.cond_dim(), "denoiser does not match backbone");
  Rng rng(seed);
  const Tensor x = pack_tokens(batch, c.normalize);
  Tensor cond_in = x;
  perturb_in_place(cond_in.data(), c.alpha, rng);

  Tape<float> tape;
  Var<float> z, loss;
  Tensor target = x;
  try {
    if (c.mode == ArMode::causal) {
      z = causal_forward(tape, bb, cond_in, labels);
    } else {
      const int n = c.tokens;
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(x.dim(0)), 0);
      std::vector<int> order(static_cast<std::size_t>(n));
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const double ratio = rng.uniform(c.mask_min, c.mask_max);
        const int k = std::clamp(static_cast<int>(std::ceil(ratio * n)), 1, n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (int j = 0; j < k; ++j) mask[b * n + order[j]] = 1;
      }
      auto rows = masked_rows(mask);
      z = embedding(masked_forward_all(tape, bb, cond_in, mask, labels), rows);
      target = Tensor({static_cast<std::int64_t>(rows.size()), c.dim});
      for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(x.row(rows[r]).begin(), c.dim, target.row(static_cast<std::int64_t>(r)).begin());
    }
    Rng diff_rng(rng.next_seed());
    auto dbatch = draw_diffusion_batch(target, sch, diff_rng, opt.diffusion_multiplicity);
    loss = diffusion_loss(tape, head, sch, dbatch, z);
  } catch (const NumericError& e) {
    throw TrainingError("training loss is not finite", std::string(e.what()) + " at optimizer step " +
                                                         std::to_string(state.backbone.step));
  }
  const double value = loss.value()[0];
  auto grads = tape.backward(loss);
  if (!std::isfinite(clip_grad_norm(grads, opt.grad_clip)))
    throw TrainingError("gradient is not finite", "at optimizer step " + std::to_string(state.backbone.step));
  adamw_step(bb.params, gradients_for(bb.params, grads), state.backbone);
  adamw_step(head.params, gradients_for(head.params, grads), state.head);
  return value;
}

struct GenerationConfig {
  int steps = 100;       // sampler steps per token
  int mask_rounds = 4;   // K, masked mode
  std::uint64_t seed = 0;
  int class_id = 0;
};

/// Raster-scan generation for a batch of class labels; every position is
/// conditioned on previously generated tokens only.
inline LatentCorpus generate_causal_batch(std::span<const int> labels, const BackboneParams& bb,
                                          const DenoiserParams<float>& head, const DiffusionSchedule& sch, int steps,
                                          std::uint64_t seed) {
  const auto& c = bb.cfg;
  const auto B = static_cast<std::int64_t>(labels.size());
  const int n = c.tokens, d = c.dim;
  Rng rng(seed);
  Tensor x({B * n, d});
  for (int i = 0; i < n; ++i) {
    Tape<float> tape(false);
    auto z = causal_forward(tape, bb, x, labels).value();
    Tensor zi({B, c.cond_dim()});
    for (std::int64_t b = 0; b < B; ++b) std::copy_n(z.row(b * n + i).begin(), c.cond_dim(), zi.row(b).begin());
    auto tok = sample_tokens(head, zi, sch, steps, rng);
    for (std::int64_t b = 0; b < B; ++b) std::copy_n(tok.row(b).begin(), d, x.row(b * n + i).begin());
  }
  LatentCorpus out;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  for (std::int64_t b = 0; b < B; ++b) {
    auto r = x.data().subspan(static_cast<std::size_t>(b * n * d), static_cast<std::size_t>(n * d));
    out.emplace_back(side, d, std::vector<float>(r.begin(), r.end()));
  }
  return out;
}

inline LatentGrid generate_causal(int class_id, const BackboneParams& bb, const DenoiserParams<float>& head,
                                  const DiffusionSchedule& sch, const GenerationConfig& gen) {
  ARLAB_REQUIRE(class_id >= 0 && class_id < bb.cfg.classes, "class id out of range");
  const int lab[1] = {class_id};
  return generate_causal_batch(lab, bb, head, sch, gen.steps, gen.seed).front();
}

/// Number of tokens still masked after round r (0-based) of K, cosine decay.
inline int masked_after_round(int n, int rounds, int r) {
  if (r >= rounds - 1) return 0;
  const double frac = std::cos(std::numbers::pi / 2.0 * static_cast<double>(r + 1) / rounds);
  return std::clamp(static_cast<int>(std::floor(n * frac)), 0, n - (r + 1));
}

/// Per-round sets of positions revealed by a K-round cosine unmasking
/// schedule with a seeded random order. The union covers every position once.
inline std::vector<std::vector<int>> unmask_schedule(int n, int rounds, Rng& rng) {
  ARLAB_REQUIRE(rounds >= 1 && rounds <= n, "mask rounds must be in [1, N]");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<int>> out;
  int done = 0;
  for (int r = 0; r < rounds; ++r) {
    const int next = n - masked_after_round(n, rounds, r);
    out.emplace_back(order.begin() + done, order.begin() + next);
    done = next;
  }
  return out;
}

inline LatentCorpus generate_masked_batch(std::span<const int> labels, const BackboneParams& bb,
                                          const DenoiserParams<float>& head, const DiffusionSchedule& sch, int steps,
                                          int rounds, std::uint64_t seed) {
  const auto& c = bb.cfg;
  const auto B = static_cast<std::int64_t>(labels.size());
  const int n = c.tokens, d = c.dim;
  Rng rng(seed);
  Tensor x({B * n, d});
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(B * n), 1);
  std::vector<std::vector<std::vector<int>>> plans;
  for (std::int64_t b = 0; b < B; ++b) plans.push_back(unmask_schedule(n, rounds, rng));
  for (int r = 0; r < rounds; ++r) {
    Tape<float> tape(false);
    auto z = masked_forward_all(tape, bb, x, mask, labels).value();
    std::vector<std::int64_t> rows;
    for (std::int64_t b = 0; b < B; ++b)
      for (int pos : plans[b][r]) rows.push_back(b * n + pos);
    if (rows.empty()) continue;
    Tensor zr({static_cast<std::int64_t>(rows.size()), c.cond_dim()});
    for (std::size_t j = 0; j < rows.size(); ++j)
      std::copy_n(z.row(rows[j]).begin(), c.cond_dim(), zr.row(static_cast<std::int64_t>(j)).begin());
    auto tok = sample_tokens(head, zr, sch, steps, rng);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      std::copy_n(tok.row(static_cast<std::int64_t>(j)).begin(), d, x.row(rows[j]).begin());
      mask[rows[j]] = 0;
    }
  }
  LatentCorpus out;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  for (std::int64_t b = 0; b < B; ++b) {
    auto r = x.data().subspan(static_cast<std::size_t>(b * n * d), static_cast<std::size_t>(n * d));
    out.emplace_back(side, d, std::vector<float>(r.begin(), r.end()));
  }
  return out;
}

inline LatentGrid generate_masked(int class_id, const BackboneParams& bb, const DenoiserParams<float>& head,
                                  const DiffusionSchedule& sch, const GenerationConfig& gen) {
  ARLAB_REQUIRE(class_id >= 0 && class_id < bb.cfg.classes, "class id out of range");
  ARLAB_REQUIRE(gen.mask_rounds >= 1 && gen.steps >= 1, "generation needs K >= 1 and steps >= 1");
  const int lab[1] = {class_id};
  return generate_masked_batch(lab, bb, head, sch, gen.steps, gen.mask_rounds, gen.seed).front();
}

}  // namespace arlab
