// SPDX-License-Identifier: Apache-2.0
//
// Per-token channel statistics and the two token-level transforms the
// training pipeline applies: instance normalization across channels and
// additive Gaussian perturbation of the conditioning tokens.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "arlab/core/rng.hpp"
#include "arlab/world/latent_grid.hpp"

namespace arlab {

inline constexpr double kStdFloor = 1e-6;

/// Channel mean of every token.
inline std::vector<double> mean_map(const LatentGrid& g) {
  ARLAB_REQUIRE(g.dim() >= 1, "mean_map needs d >= 1");
  std::vector<double> out(static_cast<std::size_t>(g.tokens()));
  for (int i = 0; i < g.tokens(); ++i) {
    double s = 0.0;
    for (float v : g.row(i)) s += v;
    out[i] = s / g.dim();
  }
  return out;
}

/// Population variance across channels of every token.
inline std::vector<double> var_map(const LatentGrid& g) {
  ARLAB_REQUIRE(g.dim() >= 2, "var_map needs d >= 2");
  auto mu = mean_map(g);
  std::vector<double> out(static_cast<std::size_t>(g.tokens()));
  for (int i = 0; i < g.tokens(); ++i) {
    double s = 0.0;
    for (float v : g.row(i)) s += (v - mu[i]) * (v - mu[i]);
    out[i] = s / g.dim();
  }
  return out;
}

/// (a) mean of the mean-map, (b) mean of the var-map, (c) variance of the
/// var-map, pooled over positions and samples.
struct TokenStatsSummary {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

inline TokenStatsSummary summary_stats(std::span<const LatentGrid> corpus) {
  ARLAB_REQUIRE(!corpus.empty(), "summary_stats needs a non-empty corpus");
  std::vector<double> means, vars;
  for (const auto& g : corpus) {
    auto m = mean_map(g);
    auto v = var_map(g);
    means.insert(means.end(), m.begin(), m.end());
    vars.insert(vars.end(), v.begin(), v.end());
  }
  const double n = static_cast<double>(vars.size());
  TokenStatsSummary s;
  for (double m : means) s.a += m;
  for (double v : vars) s.b += v;
  s.a /= n;
  s.b /= n;
  for (double v : vars) s.c += (v - s.b) * (v - s.b);
  s.c /= n;
  return s;
}

/// Statistics removed by normalize_tokens, one entry per token.
struct NormalizationRecord {
  int side = 0;
  int dim = 0;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::uint8_t> floored;  // 1 where the std hit kStdFloor
};

inline std::vector<int> flagged_rows(const NormalizationRecord& r) {
  std::vector<int> out;
  for (std::size_t i = 0; i < r.floored.size(); ++i)
    if (r.floored[i]) out.push_back(static_cast<int>(i));
  return out;
}

/// Zero mean, unit population variance across channels for every token.
inline std::pair<LatentGrid, NormalizationRecord> normalize_tokens(const LatentGrid& g) {
  ARLAB_REQUIRE(g.dim() >= 2, "normalize_tokens needs d >= 2");
  NormalizationRecord rec;
  rec.side = g.side();
  rec.dim = g.dim();
  rec.mean = mean_map(g);
  auto var = var_map(g);
  rec.stddev.resize(var.size());
  rec.floored.assign(var.size(), 0);
  LatentGrid out(g.side(), g.dim());
  for (int i = 0; i < g.tokens(); ++i) {
    double sd = std::sqrt(var[i]);
    if (sd < kStdFloor) {
      sd = kStdFloor;
      rec.floored[i] = 1;
    }
    rec.stddev[i] = sd;
    auto src = g.row(i);
    auto dst = out.row(i);
    for (int k = 0; k < g.dim(); ++k) dst[k] = static_cast<float>((src[k] - rec.mean[i]) / sd);
  }
  return {std::move(out), std::move(rec)};
}

inline LatentCorpus normalize_corpus(std::span<const LatentGrid> corpus) {
  LatentCorpus out;
  out.reserve(corpus.size());
  for (const auto& g : corpus) out.push_back(normalize_tokens(g).first);
  return out;
}

inline LatentGrid denormalize_tokens(const LatentGrid& normalized, const NormalizationRecord& rec) {
  ARLAB_REQUIRE(normalized.side() == rec.side && normalized.dim() == rec.dim &&
                    rec.mean.size() == static_cast<std::size_t>(normalized.tokens()) &&
                    rec.stddev.size() == rec.mean.size(),
                "normalization record does not match grid geometry");
  LatentGrid out(normalized.side(), normalized.dim());
  for (int i = 0; i < normalized.tokens(); ++i) {
    auto src = normalized.row(i);
    auto dst = out.row(i);
    for (int k = 0; k < normalized.dim(); ++k) dst[k] = static_cast<float>(src[k] * rec.stddev[i] + rec.mean[i]);
  }
  return out;
}

/// Additive Gaussian perturbation: noise is standard normal, level >= 0.
struct PerturbationDraw {
  Tensor noise;  // [N, d]
  double level = 0.0;
  std::uint64_t seed = 0;
};

inline PerturbationDraw draw_perturbation(int tokens, int dim, double level, std::uint64_t seed) {
  ARLAB_REQUIRE(level >= 0.0, "perturbation level must be non-negative");
  Rng rng(seed);
  return PerturbationDraw{Tensor::randn({tokens, dim}, rng), level, seed};
}

/// In-place E += level * noise on a flat buffer; level == 0 leaves the
/// buffer untouched (bit-exact).
inline void perturb_in_place(std::span<float> values, double level, Rng& rng) {
  ARLAB_REQUIRE(level >= 0.0, "perturbation level must be non-negative");
  if (level == 0.0) return;
  for (auto& v : values) v = static_cast<float>(v + level * rng.normal());
}

inline LatentGrid perturb_tokens(const LatentGrid& e, double level, std::uint64_t seed) {
  ARLAB_REQUIRE(level >= 0.0, "perturbation level must be non-negative");
  LatentGrid out = e;
  if (level == 0.0) return out;
  auto draw = draw_perturbation(e.tokens(), e.dim(), level, seed);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(d[i] + level * draw.noise[i]);
  return out;
}

}  // namespace arlab
