// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "arlab/core/error.hpp"
#include "arlab/core/rng.hpp"

namespace arlab {

inline constexpr int kDefaultClasses = 8;

/// RGB image, channel-last (H x W x 3), values in [0, 1].
struct SyntheticImage {
  int height = 0;
  int width = 0;
  int class_id = 0;
  std::vector<float> pixels;

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const SyntheticImage&, const SyntheticImage&) = default;
};

/// Procedural class-conditional image. Each class owns a dominant grating
/// (orientation, frequency, colour); the seed sets phase, jitter, a second
/// grating, a soft blob and a faint pixel texture.
inline SyntheticImage synth_image(std::uint64_t seed, int class_id, int size, int num_classes = kDefaultClasses) {
  ARLAB_REQUIRE(num_classes > 0 && class_id >= 0 && class_id < num_classes, "class id out of range");
  ARLAB_REQUIRE(size > 0, "image size must be positive");
  constexpr double pi = std::numbers::pi;
  Rng rng(derive_seed(seed, 0x1A6E5ULL + static_cast<std::uint64_t>(class_id)));

  const double theta = pi * class_id / num_classes + rng.uniform(-0.15, 0.15);
  const double freq = 1.0 + 0.5 * (class_id % 4) + rng.uniform(-0.1, 0.1);
  const double phase = rng.uniform(0.0, 2.0 * pi);
  const double amp = rng.uniform(0.6, 1.0);
  const double hue = 2.0 * pi * class_id / num_classes;
  double color[3];
  for (int c = 0; c < 3; ++c) color[c] = 0.55 + 0.45 * std::cos(hue + 2.0 * pi * c / 3.0) + rng.uniform(-0.1, 0.1);

  const double theta2 = rng.uniform(0.0, pi);
  const double freq2 = rng.uniform(1.5, 3.5);
  const double phase2 = rng.uniform(0.0, 2.0 * pi);
  const double amp2 = rng.uniform(0.0, 0.35);

  const double bx = rng.uniform(0.15, 0.85), by = rng.uniform(0.15, 0.85);
  const double br = rng.uniform(0.1, 0.3);
  const double bamp = rng.uniform(-0.25, 0.25);

  SyntheticImage img;
  img.height = img.width = size;
  img.class_id = class_id;
  img.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double ct2 = std::cos(theta2), st2 = std::sin(theta2);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      const double g1 = amp * std::sin(2.0 * pi * freq * (u * ct + v * st) + phase);
      const double g2 = amp2 * std::sin(2.0 * pi * freq2 * (u * ct2 + v * st2) + phase2);
      const double r2 = ((u - bx) * (u - bx) + (v - by) * (v - by)) / (br * br);
      const double blob = bamp * std::exp(-r2);
      for (int c = 0; c < 3; ++c) {
        const double val = 0.5 + 0.25 * color[c] * g1 + 0.12 * g2 + blob + 0.03 * rng.normal();
        img.at(y, x, c) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace arlab
