// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "arlab/core/error.hpp"
#include "arlab/tensor/tensor.hpp"

namespace arlab {

/// g x g spatial grid of d-channel continuous tokens, stored row-major as
/// N = g*g rows of d floats. Token order is raster scan.
class LatentGrid {
 public:
  LatentGrid() = default;
  LatentGrid(int side, int dim) : side_(side), dim_(dim) {
    ARLAB_REQUIRE(side > 0 && dim > 0, "latent grid needs positive side and dim");
    data_.assign(static_cast<std::size_t>(side) * side * dim, 0.0f);
  }
  LatentGrid(int side, int dim, std::vector<float> data) : side_(side), dim_(dim), data_(std::move(data)) {
    ARLAB_REQUIRE(side > 0 && dim > 0, "latent grid needs positive side and dim");
    ARLAB_REQUIRE(data_.size() == static_cast<std::size_t>(side) * side * dim, "latent grid data length mismatch");
  }

  int side() const noexcept { return side_; }
  int dim() const noexcept { return dim_; }
  int tokens() const noexcept { return side_ * side_; }

  std::span<float> row(int i) { return std::span<float>(data_).subspan(static_cast<std::size_t>(i) * dim_, dim_); }
  std::span<const float> row(int i) const {
    return std::span<const float>(data_).subspan(static_cast<std::size_t>(i) * dim_, dim_);
  }
  float& at(int i, int k) { return data_[static_cast<std::size_t>(i) * dim_ + k]; }
  float at(int i, int k) const { return data_[static_cast<std::size_t>(i) * dim_ + k]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool same_geometry(const LatentGrid& o) const { return side_ == o.side_ && dim_ == o.dim_; }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor as_tensor() const { return Tensor({tokens(), dim_}, data_); }

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;

 private:
  int side_ = 0;
  int dim_ = 0;
  std::vector<float> data_;
};

using LatentCorpus = std::vector<LatentGrid>;

}  // namespace arlab
