// SPDX-License-Identifier: Apache-2.0
//
// Per-token diffusion head: a small residual MLP predicting the noise in
// x_t given the timestep and the backbone condition z. Conditioning enters
// through adaptive layer-norm shift/scale computed from temb(t) + W z, plus
// a condition-gated linear path straight from x_t to the output.
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "arlab/diffusion/schedule.hpp"
#include "arlab/tensor/nn.hpp"

namespace arlab {

struct DenoiserConfig {
  int dim = 8;        // token channels
  int cond_dim = 64;  // width of z
  int width = 64;
  int blocks = 3;
  int time_features = 32;
  bool precondition = true;  // mix the net output with a fixed skip estimate
  double data_std = 1.0;     // assumed per-channel scale of clean tokens
  std::uint64_t seed = 11;
};

template <class T>
struct DenoiserParams {
  DenoiserConfig cfg;
  ParamStore<T> params;

  template <class U>
  DenoiserParams<U> cast() const {
    return DenoiserParams<U>{cfg, params.template cast<U>()};
  }
};

template <class T = float>
DenoiserParams<T> make_denoiser(const DenoiserConfig& cfg) {
  ARLAB_REQUIRE(cfg.dim > 0 && cfg.cond_dim > 0 && cfg.width > 0 && cfg.blocks >= 1 && cfg.time_features % 2 == 0,
                "invalid denoiser config");
  ARLAB_REQUIRE(cfg.data_std > 0.0, "denoiser data_std must be positive");
  Rng rng(derive_seed(cfg.seed, 0xD1FF));
  DenoiserParams<T> d{cfg, {}};
  auto& p = d.params;
  add_linear(p, "head.in", cfg.dim, cfg.width, rng);
  add_linear(p, "head.t1", cfg.time_features, cfg.width, rng);
  add_linear(p, "head.t2", cfg.width, cfg.width, rng);
  add_linear(p, "head.z", cfg.cond_dim, cfg.width, rng);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string n = "head.blk" + std::to_string(b);
    add_linear(p, n + ".shift", cfg.width, cfg.width, rng, 0.25);
    add_linear(p, n + ".scale", cfg.width, cfg.width, rng, 0.25);
    add_linear(p, n + ".fc1", cfg.width, cfg.width, rng);
    add_linear(p, n + ".fc2", cfg.width, cfg.width, rng, 0.5);
  }
  add_linear(p, "head.fshift", cfg.width, cfg.width, rng, 0.25);
  add_linear(p, "head.fscale", cfg.width, cfg.width, rng, 0.25);
  add_linear(p, "head.out", cfg.width, cfg.dim, rng, 0.5);
  return d;
}

/// Sinusoidal features of integer timesteps, [rows, n].
template <class T>
BasicTensor<T> timestep_features(std::span<const int> t, int n) {
  BasicTensor<T> out({static_cast<std::int64_t>(t.size()), n});
  const int half = n / 2;
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double a = t[r] * freq;
      out.at(static_cast<std::int64_t>(r), k) = static_cast<T>(std::cos(a));
      out.at(static_cast<std::int64_t>(r), k + half) = static_cast<T>(std::sin(a));
    }
  }
  return out;
}

/// Fixed per-timestep mixing for eps prediction: eps_hat = c_skip * x_t +
/// c_out * net. c_skip * x_t is the optimal linear estimate of eps for
/// Gaussian data of scale `data_std`, c_out the std of what remains. As
/// alpha -> 0 the estimate becomes x_t itself.
inline std::pair<double, double> eps_preconditioning(double alpha, double data_std) {
  const double a2 = alpha * alpha * data_std * data_std;
  const double s2 = std::max(1.0 - alpha * alpha, 0.0);
  const double denom = a2 + s2;
  return {std::sqrt(s2) / denom, std::sqrt(a2 / denom)};
}

namespace detail {
template <class T>
Var<T> modulate(Tape<T>& tape, const ParamStore<T>& p, const std::string& n, const std::string& shift,
                const std::string& scl, Var<T> h, Var<T> cond) {
  auto hn = layer_norm(h);
  return add(add(hn, mul(hn, linear(tape, p, n + scl, cond))), linear(tape, p, n + shift, cond));
}
}  // namespace detail

/// eps_hat for rows of x_t [R, d] at timesteps t (length R) given z [R, cond_dim].
template <class T>
Var<T> denoiser_forward(Tape<T>& tape, const DenoiserParams<T>& head, const DiffusionSchedule& sch, Var<T> xt,
                        std::span<const int> t, Var<T> z) {
  const auto& c = head.cfg;
  const auto rows = xt.shape()[0];
  ARLAB_REQUIRE(xt.value().rank() == 2 && xt.shape()[1] == c.dim, "denoiser x_t width does not match params");
  ARLAB_REQUIRE(z.value().rank() == 2 && z.shape()[1] == c.cond_dim && z.shape()[0] == rows,
                "denoiser condition shape does not match params");
  ARLAB_REQUIRE(static_cast<std::int64_t>(t.size()) == rows, "one timestep per row required");
  for (int ti : t) ARLAB_REQUIRE(ti >= 0 && ti <= sch.steps, "timestep out of range");
  const auto& p = head.params;
  auto temb = linear(tape, p, "head.t2",
                     silu(linear(tape, p, "head.t1", tape.constant(timestep_features<T>(t, c.time_features)))));
  auto cond = silu(add(temb, linear(tape, p, "head.z", z)));
  auto h = linear(tape, p, "head.in", xt);
  for (int b = 0; b < c.blocks; ++b) {
    const std::string n = "head.blk" + std::to_string(b);
    auto hm = detail::modulate(tape, p, n, ".shift", ".scale", h, cond);
    h = add(h, linear(tape, p, n + ".fc2", silu(linear(tape, p, n + ".fc1", hm))));
  }
  auto hf = detail::modulate(tape, p, "head", ".fshift", ".fscale", h, cond);
  auto out = linear(tape, p, "head.out", hf);
  if (!c.precondition) return out;
  BasicTensor<T> c_skip({rows, c.dim}), c_out({rows, c.dim});
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto [cs, co] = eps_preconditioning(sch.alpha[t[r]], c.data_std);
    for (int k = 0; k < c.dim; ++k) {
      c_skip.at(r, k) = static_cast<T>(cs);
      c_out.at(r, k) = static_cast<T>(co);
    }
  }
  return add(mul(xt, tape.constant(std::move(c_skip))), mul(out, tape.constant(std::move(c_out))));
}

/// Noise draws for one diffusion-loss evaluation; kept so tests can replay
/// or substitute the denoiser.
struct DiffusionBatch {
  std::vector<int> t;
  std::vector<std::int64_t> rows;  // which condition row each draw uses
  BasicTensor<float> eps;
  BasicTensor<float> xt;
};

/// Draws `multiplicity` (t, eps) pairs for each clean token row of x [R, d].
inline DiffusionBatch draw_diffusion_batch(const BasicTensor<float>& x, const DiffusionSchedule& sch, Rng& rng,
                                           int multiplicity = 1) {
  ARLAB_REQUIRE(multiplicity >= 1, "diffusion multiplicity must be >= 1");
  const auto R = x.dim(0), d = x.dim(1);
  const auto n = R * multiplicity;
  DiffusionBatch b;
  b.t.resize(static_cast<std::size_t>(n));
  b.rows.resize(static_cast<std::size_t>(n));
  b.eps = BasicTensor<float>({n, d});
  b.xt = BasicTensor<float>({n, d});
  for (std::int64_t m = 0; m < multiplicity; ++m) {
    for (std::int64_t r = 0; r < R; ++r) {
      const auto i = m * R + r;
      const int t = static_cast<int>(rng.integer(1, sch.steps));
      b.t[i] = t;
      b.rows[i] = r;
      for (std::int64_t k = 0; k < d; ++k) {
        const double e = rng.normal();
        b.eps.at(i, k) = static_cast<float>(e);
        b.xt.at(i, k) = static_cast<float>(sch.alpha[t] * x.at(r, k) + sch.sigma[t] * e);
      }
    }
  }
  return b;
}

/// ||eps - eps_hat||^2 summed over channels, averaged over draws.
/// `z` holds one condition row per clean token row.
template <class T>
Var<T> diffusion_loss(Tape<T>& tape, const DenoiserParams<T>& head, const DiffusionSchedule& sch,
                      const DiffusionBatch& batch, Var<T> z) {
  auto zr = embedding(z, batch.rows);
  auto eps_hat = denoiser_forward(tape, head, sch, tape.constant(batch.xt.template cast<T>()), batch.t, zr);
  auto loss = scale(mse(eps_hat, tape.constant(batch.eps.template cast<T>())), static_cast<T>(head.cfg.dim));
  if (!std::isfinite(static_cast<double>(loss.value()[0]))) throw NumericError("diffusion loss is not finite");
  return loss;
}

/// Convenience overload drawing noise from `seed`.
template <class T>
Var<T> diffusion_loss(Tape<T>& tape, const DenoiserParams<T>& head, const BasicTensor<float>& x, Var<T> z,
                      const DiffusionSchedule& sch, std::uint64_t seed, int multiplicity = 1) {
  Rng rng(seed);
  return diffusion_loss(tape, head, sch, draw_diffusion_batch(x, sch, rng, multiplicity), z);
}

/// Batched DDPM ancestral sampling over a strided subset of timesteps.
/// Runs in double; the network is evaluated in float.
/// z: [R, cond_dim]; returns x0 estimates [R, d].
inline BasicTensor<float> sample_tokens(const DenoiserParams<float>& head, const BasicTensor<float>& z,
                                        const DiffusionSchedule& sch, int steps, Rng& rng, double temperature = 1.0) {
  const auto taus = strided_timesteps(sch, steps);
  const auto R = z.dim(0);
  const int d = head.cfg.dim;
  ARLAB_REQUIRE(z.rank() == 2 && z.dim(1) == head.cfg.cond_dim, "condition width does not match denoiser");
  std::vector<double> x(static_cast<std::size_t>(R * d));
  for (auto& v : x) v = rng.normal();
  std::vector<int> tv(static_cast<std::size_t>(R));
  for (int j = steps - 1; j >= 0; --j) {
    const int t = taus[j];
    const int tp = j > 0 ? taus[j - 1] : 0;
    std::fill(tv.begin(), tv.end(), t);
    BasicTensor<float> xt({R, d});
    for (std::size_t i = 0; i < x.size(); ++i) xt[i] = static_cast<float>(x[i]);
    Tape<float> tape(false);
    auto eps = denoiser_forward(tape, head, sch, tape.constant(std::move(xt)), tv, tape.constant(z)).value();
    const double ab = sch.alpha_bar[t], abp = sch.alpha_bar[tp];
    const double beta = 1.0 - ab / abp;
    const double c1 = std::sqrt(abp) * beta / (1.0 - ab);
    const double c2 = std::sqrt(1.0 - beta) * (1.0 - abp) / (1.0 - ab);
    // reverse-step variance sigma^2 = beta (the upper of the two standard choices)
    const double sd = std::sqrt(std::max(beta, 0.0)) * temperature;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = (x[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab);
      double nx = c1 * x0 + c2 * x[i];
      if (tp > 0) nx += sd * rng.normal();
      x[i] = nx;
    }
  }
  BasicTensor<float> out({R, d});
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(x[i]);
    if (!std::isfinite(out[i])) throw NumericError("sampler produced a non-finite token");
  }
  return out;
}

/// Single-token sampler: one condition vector, deterministic per seed.
inline std::vector<float> sample_token(std::span<const float> z, const DenoiserParams<float>& head,
                                       const DiffusionSchedule& sch, int steps, std::uint64_t seed) {
  Rng rng(seed);
  BasicTensor<float> zt({1, static_cast<std::int64_t>(z.size())}, std::vector<float>(z.begin(), z.end()));
  auto out = sample_tokens(head, zt, sch, steps, rng);
  return std::vector<float>(out.data().begin(), out.data().end());
}

}  // namespace arlab
