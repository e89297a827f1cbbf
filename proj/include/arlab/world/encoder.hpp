// SPDX-License-Identifier: Apache-2.0
//
// Frozen random "representation encoder". Each p x p patch goes through a
// fixed random projection and a pointwise nonlinearity; the resulting
// feature vector is standardized across channels and then reshaped by a
// statistics profile:
//
//   token[i][k] = offset[k] + scale[k] * gain[i] * u[i][k]
//   gain[i]     = exp(spread * (pos_pattern[i] + content_weight * content[i]))
//
// where u[i] is the standardized feature and content[i] is the centred log
// feature scale of patch i. With uniform offset/scale vectors the mean-map is
// the offset and the var-map is scale^2 * gain^2, which gives calibration
// one independent knob per summary statistic.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "arlab/stats/token_stats.hpp"
#include "arlab/world/image.hpp"

namespace arlab {

enum class Nonlinearity { tanh, gelu };

inline const char* to_string(Nonlinearity n) { return n == Nonlinearity::tanh ? "tanh" : "gelu"; }

inline Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "tanh") return Nonlinearity::tanh;
  if (s == "gelu") return Nonlinearity::gelu;
  throw ContractError("unknown nonlinearity " + s);
}

/// Target token statistics for a named latent family.
struct StatProfile {
  std::string name;
  double a = 0.0;
  double b = 1.0;
  double c = 0.0;
};

/// Reference statistics of the five latent families we emulate.
inline const std::vector<StatProfile>& known_profiles() {
  static const std::vector<StatProfile> profiles = {
      {"vae", 0.1889, 1.2966, 0.6158},     {"va-vae", 0.1853, 13.1932, 18.4432}, {"dinov2", 0.0113, 1.3014, 0.0100},
      {"siglip2", 0.0001, 1.0072, 0.0968}, {"mae", -0.0025, 0.9503, 0.0858},
  };
  return profiles;
}

inline StatProfile profile_by_name(const std::string& name) {
  for (const auto& p : known_profiles())
    if (p.name == name) return p;
  throw ContractError("unknown statistics profile " + name);
}

struct EncoderConfig {
  int image_size = 32;
  int patch = 8;
  int dim = 8;
  std::uint64_t seed = 1;
  std::string profile = "custom";
  Nonlinearity nonlinearity = Nonlinearity::tanh;
  double input_gain = 4.0;
  std::vector<double> channel_offset;  // length dim
  std::vector<double> channel_scale;   // length dim
  double gain_spread = 0.0;            // 0 gives a uniform per-position gain
  double content_weight = 1.0;

  int grid_side() const { return image_size / patch; }
  int tokens() const { return grid_side() * grid_side(); }

  void validate() const {
    ARLAB_REQUIRE(patch > 0 && image_size > 0 && image_size % patch == 0, "image side must be divisible by patch size");
    ARLAB_REQUIRE(dim >= 2, "encoder channel dim must be >= 2");
    ARLAB_REQUIRE(channel_offset.size() == static_cast<std::size_t>(dim) &&
                      channel_scale.size() == static_cast<std::size_t>(dim),
                  "encoder profile vectors must have length dim");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline EncoderConfig make_encoder_config(int dim, std::uint64_t seed, int image_size = 32, int patch = 8) {
  EncoderConfig c;
  c.dim = dim;
  c.seed = seed;
  c.image_size = image_size;
  c.patch = patch;
  c.channel_offset.assign(static_cast<std::size_t>(dim), 0.0);
  c.channel_scale.assign(static_cast<std::size_t>(dim), 1.0);
  return c;
}

/// Profile-independent part of an encoding: standardized features plus the
/// centred log feature scale of each patch.
struct RawFeatures {
  int side = 0;
  int dim = 0;
  std::vector<double> u;        // N x d
  std::vector<double> content;  // N
};

class FrozenEncoder {
 public:
  explicit FrozenEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int in = 3 * cfg_.patch * cfg_.patch;
    Rng rng(derive_seed(cfg_.seed, 0xE2C0DE));
    proj_.resize(static_cast<std::size_t>(cfg_.dim) * in);
    const double sd = cfg_.input_gain / std::sqrt(static_cast<double>(in));
    for (auto& w : proj_) w = rng.normal() * sd;
    bias_.resize(static_cast<std::size_t>(cfg_.dim));
    for (auto& b : bias_) b = 0.3 * rng.normal();
    pattern_ = position_pattern(cfg_.grid_side(), cfg_.seed);
  }

  const EncoderConfig& config() const { return cfg_; }

  RawFeatures raw(const SyntheticImage& img) const {
    ARLAB_REQUIRE(img.height == cfg_.image_size && img.width == cfg_.image_size,
                  "image size does not match encoder config");
    ARLAB_REQUIRE(img.height % cfg_.patch == 0 && img.width % cfg_.patch == 0,
                  "image side must be divisible by patch size");
    const int g = cfg_.grid_side(), p = cfg_.patch, d = cfg_.dim, in = 3 * p * p;
    RawFeatures rf;
    rf.side = g;
    rf.dim = d;
    rf.u.resize(static_cast<std::size_t>(g) * g * d);
    rf.content.resize(static_cast<std::size_t>(g) * g);
    std::vector<double> patch(static_cast<std::size_t>(in)), h(static_cast<std::size_t>(d));
    for (int ty = 0; ty < g; ++ty) {
      for (int tx = 0; tx < g; ++tx) {
        const int tok = ty * g + tx;
        int j = 0;
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            for (int c = 0; c < 3; ++c) patch[j++] = img.at(ty * p + y, tx * p + x, c) - 0.5;
        double mu = 0.0;
        for (int k = 0; k < d; ++k) {
          double s = bias_[k];
          const double* w = &proj_[static_cast<std::size_t>(k) * in];
          for (int q = 0; q < in; ++q) s += w[q] * patch[q];
          h[k] = activate(s);
          mu += h[k];
        }
        mu /= d;
        double var = 0.0;
        for (int k = 0; k < d; ++k) var += (h[k] - mu) * (h[k] - mu);
        const double sd = std::max(std::sqrt(var / d), kStdFloor);
        for (int k = 0; k < d; ++k) rf.u[static_cast<std::size_t>(tok) * d + k] = (h[k] - mu) / sd;
        rf.content[tok] = std::log(sd);
      }
    }
    double mc = 0.0;
    for (double v : rf.content) mc += v;
    mc /= static_cast<double>(rf.content.size());
    for (double& v : rf.content) v -= mc;
    return rf;
  }

  /// Applies the statistics profile of `cfg` (which must share geometry with
  /// this encoder) to precomputed raw features.
  static LatentGrid apply_profile(const RawFeatures& rf, const EncoderConfig& cfg, std::span<const double> pattern) {
    LatentGrid out(rf.side, rf.dim);
    const int d = rf.dim;
    for (int i = 0; i < out.tokens(); ++i) {
      const double gain = std::exp(cfg.gain_spread * (pattern[i] + cfg.content_weight * rf.content[i]));
      auto dst = out.row(i);
      for (int k = 0; k < d; ++k)
        dst[k] = static_cast<float>(cfg.channel_offset[k] +
                                    cfg.channel_scale[k] * gain * rf.u[static_cast<std::size_t>(i) * d + k]);
    }
    return out;
  }

  LatentGrid encode(const SyntheticImage& img) const { return apply_profile(raw(img), cfg_, pattern_); }

  const std::vector<double>& pattern() const { return pattern_; }

  /// Smooth zero-mean, unit-variance field over grid positions.
  static std::vector<double> position_pattern(int side, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x9A77E2));
    const double pi = 3.14159265358979323846;
    const double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5);
    const double px = rng.uniform(0.0, 2 * pi), py = rng.uniform(0.0, 2 * pi);
    std::vector<double> f(static_cast<std::size_t>(side) * side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        f[y * side + x] = std::cos(2 * pi * fx * (x + 0.5) / side + px) + std::cos(2 * pi * fy * (y + 0.5) / side + py) +
                          0.5 * rng.normal();
    double mu = 0.0, var = 0.0;
    for (double v : f) mu += v;
    mu /= static_cast<double>(f.size());
    for (double v : f) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(f.size()));
    for (double& v : f) v = sd > 0 ? (v - mu) / sd : 0.0;
    return f;
  }

 private:
  double activate(double s) const {
    if (cfg_.nonlinearity == Nonlinearity::tanh) return std::tanh(s);
    return 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
  }

  EncoderConfig cfg_;
  std::vector<double> proj_;
  std::vector<double> bias_;
  std::vector<double> pattern_;
};

inline LatentGrid frozen_encode(const SyntheticImage& img, const EncoderConfig& cfg) {
  ARLAB_REQUIRE(cfg.patch > 0 && img.height % cfg.patch == 0 && img.width % cfg.patch == 0,
                "image side must be divisible by patch size");
  return FrozenEncoder(cfg).encode(img);
}

inline LatentCorpus encode_corpus(std::span<const SyntheticImage> images, const EncoderConfig& cfg) {
  FrozenEncoder enc(cfg);
  LatentCorpus out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(enc.encode(img));
  return out;
}

struct CalibrationResult {
  EncoderConfig config;
  TokenStatsSummary achieved;
  int iterations = 0;
};

/// Coordinate descent on (offset shift, channel scale, gain spread) until
/// the encoded corpus matches the named profile's (a, b, c) within
/// `rel_tol`. Throws CalibrationError with residuals if it does not converge.
inline CalibrationResult calibrate_profile_detailed(const StatProfile& target, const EncoderConfig& tmpl,
                                                    std::span<const SyntheticImage> corpus, double rel_tol = 0.005,
                                                    int max_iters = 200) {
  ARLAB_REQUIRE(corpus.size() >= 500, "calibration corpus needs at least 500 images");
  ARLAB_REQUIRE(target.b > 0 && target.c >= 0, "profile targets need b > 0 and c >= 0");
  EncoderConfig cfg = tmpl;
  cfg.profile = target.name;
  cfg.channel_offset.assign(static_cast<std::size_t>(cfg.dim), 0.0);
  cfg.channel_scale.assign(static_cast<std::size_t>(cfg.dim), 1.0);
  cfg.gain_spread = target.c > 0 ? 0.3 : 0.0;
  FrozenEncoder enc(cfg);
  std::vector<RawFeatures> raws;
  raws.reserve(corpus.size());
  for (const auto& img : corpus) raws.push_back(enc.raw(img));

  auto measure = [&] {
    LatentCorpus grids;
    grids.reserve(raws.size());
    for (const auto& r : raws) grids.push_back(FrozenEncoder::apply_profile(r, cfg, enc.pattern()));
    return summary_stats(grids);
  };
  auto ok = [&](const TokenStatsSummary& s) {
    const bool a_ok = std::abs(s.a - target.a) <= rel_tol * std::abs(target.a) + 1e-7;
    const bool b_ok = std::abs(s.b - target.b) <= rel_tol * target.b;
    const bool c_ok = std::abs(s.c - target.c) <= rel_tol * target.c + 1e-12;
    return a_ok && b_ok && c_ok;
  };

  TokenStatsSummary s = measure();
  for (int it = 0; it < max_iters; ++it) {
    if (ok(s)) return {cfg, s, it};
    switch (it % 3) {
      case 0:
        for (auto& o : cfg.channel_offset) o += target.a - s.a;
        break;
      case 1: {
        const double f = std::sqrt(target.b / std::max(s.b, 1e-12));
        for (auto& sc : cfg.channel_scale) sc *= f;
        break;
      }
      case 2: {
        if (target.c == 0.0) {
          cfg.gain_spread = 0.0;
          break;
        }
        // c / b^2 is the squared coefficient of variation of gain^2, which
        // grows like exp(4 s^2 v) - 1 in the spread s.
        const double want = std::log1p(target.c / (target.b * target.b));
        const double have = std::log1p(s.c / std::max(s.b * s.b, 1e-24));
        if (have <= 0.0)
          cfg.gain_spread = std::max(cfg.gain_spread * 2.0, 0.05);
        else
          cfg.gain_spread *= std::sqrt(want / have);
        break;
      }
    }
    s = measure();
  }
  if (ok(s)) return {cfg, s, max_iters};
  std::ostringstream os;
  os << "calibration for profile " << target.name << " did not converge: residuals a=" << (s.a - target.a)
     << " b=" << (s.b - target.b) << " c=" << (s.c - target.c);
  throw CalibrationError(os.str());
}

inline EncoderConfig calibrate_profile(const std::string& name, const EncoderConfig& tmpl,
                                       std::span<const SyntheticImage> corpus) {
  return calibrate_profile_detailed(profile_by_name(name), tmpl, corpus).config;
}

/// Deterministic corpus of synthetic images cycling through the classes.
inline std::vector<SyntheticImage> make_image_corpus(std::uint64_t seed, int count, int size,
                                                     int num_classes = kDefaultClasses) {
  std::vector<SyntheticImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(synth_image(derive_seed(seed, static_cast<std::uint64_t>(i)), i % num_classes, size, num_classes));
  return out;
}

}  // namespace arlab
