// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "arlab/stats/token_stats.hpp"

using namespace arlab;

namespace {

LatentGrid random_grid(std::uint64_t seed, int side = 4, int dim = 8, double scale = 1.0, double shift = 0.0) {
  Rng rng(seed);
  LatentGrid g(side, dim);
  for (auto& v : g.data()) v = static_cast<float>(shift + scale * rng.normal());
  return g;
}

// Independent oracle: plain two-pass statistics in long double.
std::pair<long double, long double> two_pass(std::span<const float> row) {
  long double s = 0;
  for (float v : row) s += v;
  const long double mu = s / row.size();
  long double q = 0;
  for (float v : row) q += (v - mu) * (v - mu);
  return {mu, q / row.size()};
}

LatentCorpus random_corpus(std::uint64_t seed, int count, int dim) {
  LatentCorpus c;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    // per-token scale varies so the corpus has non-trivial token variance
    LatentGrid g(4, dim);
    for (int t = 0; t < g.tokens(); ++t) {
      const double s = std::exp(0.5 * rng.normal());
      for (auto& v : g.row(t)) v = static_cast<float>(0.3 + s * rng.normal());
    }
    c.push_back(std::move(g));
  }
  return c;
}

}  // namespace

TEST(MeanMap, ConstantGridAndHandRow) {
  LatentGrid g(2, 3);
  for (auto& v : g.data()) v = 2.5f;
  for (double m : mean_map(g)) EXPECT_DOUBLE_EQ(m, 2.5);
  for (double v : var_map(g)) EXPECT_DOUBLE_EQ(v, 0.0);

  LatentGrid h(1, 3, {1, 2, 3});
  EXPECT_DOUBLE_EQ(mean_map(h)[0], 2.0);
  EXPECT_NEAR(var_map(h)[0], 2.0 / 3.0, 1e-12);
}

TEST(MeanMap, MatchesTwoPassOracle) {
  auto g = random_grid(5, 4, 16, 2.0, 0.7);
  auto m = mean_map(g);
  auto v = var_map(g);
  for (int i = 0; i < g.tokens(); ++i) {
    auto [mu, var] = two_pass(g.row(i));
    EXPECT_NEAR(m[i], static_cast<double>(mu), 1e-6);
    EXPECT_NEAR(v[i], static_cast<double>(var), 1e-6);
  }
}

TEST(VarMap, NeedsTwoChannels) {
  LatentGrid g(2, 1);
  EXPECT_THROW(var_map(g), ContractError);
  EXPECT_NO_THROW(mean_map(g));
}

TEST(MeanMap, PermutationEquivariant) {
  auto g = random_grid(9);
  LatentGrid p(g.side(), g.dim());
  std::vector<int> perm(static_cast<std::size_t>(g.tokens()));
  for (int i = 0; i < g.tokens(); ++i) perm[i] = (i * 5 + 3) % g.tokens();
  for (int i = 0; i < g.tokens(); ++i) std::copy_n(g.row(perm[i]).begin(), g.dim(), p.row(i).begin());
  auto m = mean_map(g), mp = mean_map(p);
  auto v = var_map(g), vp = var_map(p);
  for (int i = 0; i < g.tokens(); ++i) {
    EXPECT_EQ(mp[i], m[perm[i]]);
    EXPECT_EQ(vp[i], v[perm[i]]);
  }
}

TEST(SummaryStats, ConstantGridAndEmptyCorpus) {
  LatentGrid g(2, 4);
  for (auto& v : g.data()) v = -1.5f;
  LatentCorpus c{g};
  auto s = summary_stats(c);
  EXPECT_DOUBLE_EQ(s.a, -1.5);
  EXPECT_DOUBLE_EQ(s.b, 0.0);
  EXPECT_DOUBLE_EQ(s.c, 0.0);
  EXPECT_THROW(summary_stats(LatentCorpus{}), ContractError);
}

TEST(SummaryStats, ShuffleInvariant) {
  auto c = random_corpus(2, 12, 8);
  auto s = summary_stats(c);
  std::reverse(c.begin(), c.end());
  std::rotate(c.begin(), c.begin() + 5, c.end());
  auto t = summary_stats(c);
  EXPECT_NEAR(s.a, t.a, 1e-12);
  EXPECT_NEAR(s.b, t.b, 1e-12);
  EXPECT_NEAR(s.c, t.c, 1e-12);
  EXPECT_GT(s.c, 0.1);
}

TEST(Normalize, HandRow) {
  LatentGrid g(1, 3, {1, 2, 3});
  auto [n, rec] = normalize_tokens(g);
  EXPECT_NEAR(n.at(0, 0), -1.2247449, 1e-6);
  EXPECT_NEAR(n.at(0, 1), 0.0, 1e-7);
  EXPECT_NEAR(n.at(0, 2), 1.2247449, 1e-6);
  EXPECT_NEAR(rec.mean[0], 2.0, 1e-12);
  EXPECT_NEAR(rec.stddev[0], std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_TRUE(flagged_rows(rec).empty());
}

TEST(Normalize, RowsHaveZeroMeanUnitVariance) {
  auto g = random_grid(4, 4, 64, 3.0, -2.0);
  auto n = normalize_tokens(g).first;
  auto m = mean_map(n), v = var_map(n);
  for (int i = 0; i < n.tokens(); ++i) {
    EXPECT_LT(std::abs(m[i]), 1e-6);
    EXPECT_LT(std::abs(v[i] - 1.0), 1e-5);
  }
}

TEST(Normalize, Idempotent) {
  auto n = normalize_tokens(random_grid(6)).first;
  auto n2 = normalize_tokens(n).first;
  for (std::size_t i = 0; i < n.data().size(); ++i) EXPECT_NEAR(n.data()[i], n2.data()[i], 1e-6);
}

TEST(Normalize, CorpusStatsForced) {
  for (int dim : {8, 64}) {
    auto c = normalize_corpus(random_corpus(3, 50, dim));
    auto s = summary_stats(c);
    EXPECT_LT(std::abs(s.a), 1e-6);
    EXPECT_LT(std::abs(s.b - 1.0), 1e-5);
    EXPECT_LT(s.c, 1e-10);
  }
}

TEST(Normalize, RoundTrip) {
  auto g = random_grid(8, 4, 16, 5.0, 1.0);
  auto [n, rec] = normalize_tokens(g);
  auto back = denormalize_tokens(n, rec);
  for (std::size_t i = 0; i < g.data().size(); ++i) EXPECT_LT(std::abs(back.data()[i] - g.data()[i]), 1e-5);
}

TEST(Normalize, IdentityRecord) {
  auto g = random_grid(10);
  NormalizationRecord rec;
  rec.side = g.side();
  rec.dim = g.dim();
  rec.mean.assign(static_cast<std::size_t>(g.tokens()), 0.0);
  rec.stddev.assign(static_cast<std::size_t>(g.tokens()), 1.0);
  EXPECT_EQ(denormalize_tokens(g, rec), g);
}

TEST(Normalize, ConstantRowIsFlagged) {
  auto g = random_grid(12, 2, 4);
  for (auto& v : g.row(2)) v = 0.75f;
  auto [n, rec] = normalize_tokens(g);
  EXPECT_EQ(flagged_rows(rec), std::vector<int>{2});
  EXPECT_DOUBLE_EQ(rec.stddev[2], kStdFloor);
  auto back = denormalize_tokens(n, rec);
  for (int i = 0; i < g.tokens(); ++i)
    for (int k = 0; k < g.dim(); ++k) EXPECT_NEAR(back.at(i, k), g.at(i, k), 1e-5);
}

TEST(Normalize, GeometryMismatchRejected) {
  auto [n, rec] = normalize_tokens(random_grid(1, 4, 8));
  EXPECT_THROW(denormalize_tokens(LatentGrid(2, 8), rec), ContractError);
  EXPECT_THROW(denormalize_tokens(LatentGrid(4, 4), rec), ContractError);
}

TEST(Perturb, ZeroLevelIsExactCopy) {
  auto g = random_grid(13);
  EXPECT_EQ(perturb_tokens(g, 0.0, 99), g);
  EXPECT_THROW(perturb_tokens(g, -0.1, 1), ContractError);
}

TEST(Perturb, DeterministicPerSeed) {
  auto g = random_grid(14);
  EXPECT_EQ(perturb_tokens(g, 0.2, 7), perturb_tokens(g, 0.2, 7));
  EXPECT_NE(perturb_tokens(g, 0.2, 7), perturb_tokens(g, 0.2, 8));
}

TEST(Perturb, MonteCarloEnergyAndChannelVariance) {
  const LatentGrid g = random_grid(15, 4, 8);
  const int draws = 10000;
  for (double alpha : {0.05, 0.1, 0.3}) {
    double energy = 0.0;
    std::vector<double> s1(8, 0.0), s2(8, 0.0);
    for (int r = 0; r < draws; ++r) {
      auto p = perturb_tokens(g, alpha, derive_seed(77, r));
      double e = 0.0;
      for (int i = 0; i < g.tokens(); ++i)
        for (int k = 0; k < g.dim(); ++k) {
          const double dlt = static_cast<double>(p.at(i, k)) - g.at(i, k);
          e += dlt * dlt;
          if (i == 0) {
            s1[k] += dlt;
            s2[k] += dlt * dlt;
          }
        }
      energy += e / (g.tokens() * g.dim());
    }
    energy /= draws;
    EXPECT_NEAR(energy / (alpha * alpha), 1.0, 0.03) << "alpha " << alpha;
    for (int k = 0; k < 8; ++k) {
      const double mu = s1[k] / draws;
      const double var = s2[k] / draws - mu * mu;
      EXPECT_NEAR(var / (alpha * alpha), 1.0, 0.05) << "alpha " << alpha << " channel " << k;
    }
  }
}

TEST(Perturb, IndependentSeedsAreUncorrelated) {
  const int draws = 10000;
  LatentGrid zero(1, 2);
  double sxy = 0, sxx = 0, syy = 0;
  for (int r = 0; r < draws; ++r) {
    auto a = perturb_tokens(zero, 1.0, derive_seed(1, r));
    auto b = perturb_tokens(zero, 1.0, derive_seed(2, r));
    sxy += a.at(0, 0) * b.at(0, 0);
    sxx += a.at(0, 0) * a.at(0, 0);
    syy += b.at(0, 0) * b.at(0, 0);
  }
  EXPECT_LT(std::abs(sxy / std::sqrt(sxx * syy)), 0.05);
}
