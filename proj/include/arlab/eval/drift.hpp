// SPDX-License-Identifier: Apache-2.0
//
// Corpus-level generation metrics: the Frechet proxy over a fixed random
// projection of whole token grids, and the per-position exposure-drift
// curve of free-running generation.
#pragma once

#include <numeric>
#include <span>
#include <vector>

#include "arlab/backbone/backbone.hpp"
#include "arlab/eval/metrics.hpp"

namespace arlab {

inline constexpr int kProxyFeatures = 32;
inline constexpr std::uint64_t kProxySeed = 0xF1D5EED;

/// Flattens every grid and maps it through a fixed Gaussian projection
/// (entries N(0, 1/(N*d))). The projection depends only on the seed and the
/// grid geometry, so real and generated sets share it.
inline FeatureRows project_corpus(std::span<const LatentGrid> corpus, int features, std::uint64_t seed = kProxySeed) {
  ARLAB_REQUIRE(!corpus.empty(), "cannot project an empty corpus");
  ARLAB_REQUIRE(features >= 1, "projection needs at least one feature");
  const auto n = static_cast<std::int64_t>(corpus[0].data().size());
  Eigen::MatrixXd w(n, features);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(n)));
  const double sd = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::int64_t i = 0; i < n; ++i)
    for (int o = 0; o < features; ++o) w(i, o) = rng.normal() * sd;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(corpus.size()), n);
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    ARLAB_REQUIRE(corpus[s].same_geometry(corpus[0]), "corpus mixes grid geometries");
    const auto row = corpus[s].data();
    for (std::int64_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(s), i) = row[static_cast<std::size_t>(i)];
  }
  const Eigen::MatrixXd y = x * w;
  FeatureRows out(y.rows(), features);
  for (Eigen::Index r = 0; r < y.rows(); ++r)
    for (int o = 0; o < features; ++o) out.at(r, o) = y(r, o);
  return out;
}

/// Frechet distance between projected real and generated corpora.
inline double frechet_proxy(std::span<const LatentGrid> real, std::span<const LatentGrid> generated,
                            int features = kProxyFeatures, std::uint64_t seed = kProxySeed) {
  return frechet_distance(project_corpus(real, features, seed), project_corpus(generated, features, seed));
}

/// Tokens at one grid position, one row per grid.
inline FeatureRows position_rows(std::span<const LatentGrid> corpus, int pos) {
  ARLAB_REQUIRE(!corpus.empty(), "empty corpus");
  ARLAB_REQUIRE(pos >= 0 && pos < corpus[0].tokens(), "token position out of range");
  const int d = corpus[0].dim();
  FeatureRows out(static_cast<std::int64_t>(corpus.size()), d);
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    auto row = corpus[s].row(pos);
    for (int k = 0; k < d; ++k) out.at(static_cast<std::int64_t>(s), k) = row[k];
  }
  return out;
}

struct DriftCurve {
  std::vector<double> values;  // one per position

  double area() const { return std::accumulate(values.begin(), values.end(), 0.0); }
};

/// Per-position Frechet distance between generated and reference tokens.
/// Full covariance once both sets hold at least 10*d rows, per-channel
/// (diagonal) otherwise.
inline DriftCurve drift_curve(std::span<const LatentGrid> generated, std::span<const LatentGrid> reference) {
  ARLAB_REQUIRE(!generated.empty() && !reference.empty(), "drift needs non-empty corpora");
  ARLAB_REQUIRE(generated[0].same_geometry(reference[0]), "generated and reference geometries differ");
  const int d = reference[0].dim();
  const bool full = std::min(generated.size(), reference.size()) >= static_cast<std::size_t>(10 * d);
  DriftCurve c;
  for (int i = 0; i < reference[0].tokens(); ++i) {
    const auto g = position_rows(generated, i), r = position_rows(reference, i);
    c.values.push_back(full ? frechet_distance(g, r) : frechet_distance_diagonal(g, r));
  }
  return c;
}

/// Reference side of every generation metric: the corpus as the model sees
/// it (normalized per token when the backbone trains on normalized tokens).
inline LatentCorpus model_space(std::span<const LatentGrid> corpus, const BackboneConfig& cfg) {
  if (cfg.normalize) return normalize_corpus(corpus);
  return LatentCorpus(corpus.begin(), corpus.end());
}

/// Generates one rollout per corpus entry (matching its class label) and
/// compares per-position token distributions with the corpus, averaged over
/// `seeds`.
inline DriftCurve exposure_drift(const BackboneParams& bb, const DenoiserParams<float>& head,
                                 const DiffusionSchedule& sch, std::span<const LatentGrid> corpus,
                                 std::span<const int> labels, std::span<const std::uint64_t> seeds, int steps,
                                 int rounds = 4, std::size_t min_rollouts = 500) {
  ARLAB_REQUIRE(corpus.size() >= min_rollouts, "drift needs at least " + std::to_string(min_rollouts) + " rollouts");
  ARLAB_REQUIRE(labels.size() == corpus.size(), "one class label per corpus grid required");
  ARLAB_REQUIRE(!seeds.empty(), "drift needs at least one seed");
  const auto ref = model_space(corpus, bb.cfg);
  DriftCurve mean;
  mean.values.assign(static_cast<std::size_t>(bb.cfg.tokens), 0.0);
  for (auto seed : seeds) {
    const auto gen = bb.cfg.mode == ArMode::causal ? generate_causal_batch(labels, bb, head, sch, steps, seed)
                                                   : generate_masked_batch(labels, bb, head, sch, steps, rounds, seed);
    const auto c = drift_curve(gen, ref);
    for (std::size_t i = 0; i < c.values.size(); ++i) mean.values[i] += c.values[i] / static_cast<double>(seeds.size());
  }
  return mean;
}

}  // namespace arlab
