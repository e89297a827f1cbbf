// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "arlab/core/error.hpp"
#include "arlab/world/image.hpp"

namespace arlab {

/// Row-major sample matrix: `rows` samples of `cols` features.
struct FeatureRows {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;

  FeatureRows() = default;
  FeatureRows(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {}

  double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }
  std::span<const double> row(std::int64_t r) const {
    return std::span<const double>(data).subspan(static_cast<std::size_t>(r * cols), static_cast<std::size_t>(cols));
  }
};

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::int64_t count = 0;
};

/// Sample mean and unbiased covariance.
inline GaussianMoments gaussian_moments(const FeatureRows& x) {
  ARLAB_REQUIRE(x.rows >= 2, "moments need at least 2 samples");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(x.data.data(), x.rows,
                                                                                                x.cols);
  GaussianMoments g;
  g.count = x.rows;
  g.mean = m.colwise().mean().transpose();
  const Eigen::MatrixXd c = m.rowwise() - g.mean.transpose();
  g.cov = (c.transpose() * c) / static_cast<double>(x.rows - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

namespace detail {
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

inline double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
  ARLAB_REQUIRE(a.mean.size() == b.mean.size(), "feature dimensions differ");
  const Eigen::MatrixXd sa = detail::psd_sqrt(a.cov);
  Eigen::MatrixXd inner = sa * b.cov * sa;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(fd, 0.0);
}

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
inline double frechet_distance(const FeatureRows& a, const FeatureRows& b) {
  ARLAB_REQUIRE(a.cols == b.cols, "feature dimensions differ");
  ARLAB_REQUIRE(a.rows >= a.cols + 1 && b.rows >= b.cols + 1, "frechet distance needs at least d'+1 rows per set");
  return frechet_distance(gaussian_moments(a), gaussian_moments(b));
}

/// Sum of per-column 1-D Frechet distances (diagonal covariance).
inline double frechet_distance_diagonal(const FeatureRows& a, const FeatureRows& b) {
  ARLAB_REQUIRE(a.cols == b.cols, "feature dimensions differ");
  ARLAB_REQUIRE(a.rows >= 2 && b.rows >= 2, "frechet distance needs at least 2 rows per set");
  double total = 0.0;
  for (std::int64_t k = 0; k < a.cols; ++k) {
    double ma = 0, mb = 0, va = 0, vb = 0;
    for (std::int64_t r = 0; r < a.rows; ++r) ma += a.at(r, k);
    for (std::int64_t r = 0; r < b.rows; ++r) mb += b.at(r, k);
    ma /= a.rows;
    mb /= b.rows;
    for (std::int64_t r = 0; r < a.rows; ++r) va += (a.at(r, k) - ma) * (a.at(r, k) - ma);
    for (std::int64_t r = 0; r < b.rows; ++r) vb += (b.at(r, k) - mb) * (b.at(r, k) - mb);
    va /= static_cast<double>(a.rows - 1);
    vb /= static_cast<double>(b.rows - 1);
    const double ds = std::sqrt(va) - std::sqrt(vb);
    total += (ma - mb) * (ma - mb) + ds * ds;
  }
  return total;
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

namespace detail {
inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Squared distance from each row to its k-th nearest other row.
inline std::vector<double> knn_radii(const FeatureRows& x, int k) {
  std::vector<double> out(static_cast<std::size_t>(x.rows));
  std::vector<double> d(static_cast<std::size_t>(x.rows - 1));
  for (std::int64_t i = 0; i < x.rows; ++i) {
    std::size_t j2 = 0;
    for (std::int64_t j = 0; j < x.rows; ++j)
      if (j != i) d[j2++] = sq_dist(x.row(i), x.row(j));
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    out[i] = d[k - 1];
  }
  return out;
}

/// Fraction of `probe` rows inside at least one k-NN ball of `ref`.
inline double coverage(const FeatureRows& ref, const std::vector<double>& radii, const FeatureRows& probe) {
  std::int64_t hit = 0;
  for (std::int64_t i = 0; i < probe.rows; ++i) {
    for (std::int64_t j = 0; j < ref.rows; ++j) {
      if (sq_dist(probe.row(i), ref.row(j)) <= radii[j]) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(probe.rows);
}
}  // namespace detail

/// k-NN manifold precision (generated inside real balls) and recall
/// (real inside generated balls).
inline PrecisionRecall precision_recall(const FeatureRows& real, const FeatureRows& gen, int k = 3) {
  ARLAB_REQUIRE(real.cols == gen.cols, "feature dimensions differ");
  ARLAB_REQUIRE(k >= 1 && real.rows >= k + 1 && gen.rows >= k + 1, "k must be in [1, rows - 1] for both sets");
  const auto rr = detail::knn_radii(real, k);
  const auto rg = detail::knn_radii(gen, k);
  return {detail::coverage(real, rr, gen), detail::coverage(gen, rg, real)};
}

inline void check_pair(const SyntheticImage& a, const SyntheticImage& b) {
  ARLAB_REQUIRE(a.height == b.height && a.width == b.width && a.pixels.size() == b.pixels.size(),
                "image shapes differ");
}

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const SyntheticImage& a, const SyntheticImage& b) {
  check_pair(a, b);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double e = static_cast<double>(a.pixels[i]) - b.pixels[i];
    mse += e * e;
  }
  mse /= static_cast<double>(a.pixels.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Mean SSIM over non-overlapping 8x8 windows of each channel.
inline double ssim(const SyntheticImage& a, const SyntheticImage& b, int window = 8) {
  check_pair(a, b);
  ARLAB_REQUIRE(a.height >= window && a.width >= window, "image smaller than the SSIM window");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y0 = 0; y0 + window <= a.height; y0 += window) {
      for (int x0 = 0; x0 + window <= a.width; x0 += window) {
        double ma = 0, mb = 0;
        for (int y = y0; y < y0 + window; ++y)
          for (int x = x0; x < x0 + window; ++x) {
            ma += a.at(y, x, ch);
            mb += b.at(y, x, ch);
          }
        const double n = static_cast<double>(window) * window;
        ma /= n;
        mb /= n;
        double va = 0, vb = 0, cov = 0;
        for (int y = y0; y < y0 + window; ++y)
          for (int x = x0; x < x0 + window; ++x) {
            const double da = a.at(y, x, ch) - ma, db = b.at(y, x, ch) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= n - 1;
        vb /= n - 1;
        cov /= n - 1;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / count;
}

}  // namespace arlab
